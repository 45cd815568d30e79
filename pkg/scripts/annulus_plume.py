"""Buoyancy-driven plume in the annulus: kinetic energy and temperature range over time."""
import argparse
import time

from hytegrid.apps.drivers import AnnulusConfig, AnnulusRun


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--level", type=int, default=4)
    ap.add_argument("--faces", type=int, default=16)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--ra", type=float, default=1e4)
    ap.add_argument("--inv-pe", type=float, default=1.0)
    ap.add_argument("--initial", default="cold")
    ap.add_argument("--every", type=int, default=250, help="report interval in steps")
    ap.add_argument("--vtk-out", help="write a snapshot at every report")
    args = ap.parse_args()
    run = AnnulusRun(AnnulusConfig(level=args.level, faces=args.faces, Ra=args.ra, invPe=args.inv_pe,
                                   initial=args.initial, steps=args.steps))
    start = time.perf_counter()
    for _ in range(args.steps):
        run.step()
        k = run.steps_done
        if k == 10 or k % args.every == 0:
            s = run.sample()
            print(f"step={k} time={s.time:.4e} kinetic={s.kinetic:.4e} T=[{s.t_min:.4f}, {s.t_max:.4f}] "
                  f"vr_max={s.vr_max:.3e} wall={time.perf_counter() - start:.1f}s")
            if args.vtk_out:
                run.snapshot(args.vtk_out)
    print(f"digest={run.digest()}")


if __name__ == "__main__":
    main()
