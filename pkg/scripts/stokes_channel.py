"""Empty-channel Stokes flow compared with the parabolic inflow profile."""
import argparse

from hytegrid.apps.drivers import StokesConfig, run_stokes_channel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--level", type=int, default=4)
    ap.add_argument("--cycles", type=int, default=10)
    ap.add_argument("--ranks", type=int, default=1)
    ap.add_argument("--vtk-out")
    args = ap.parse_args()
    rep = run_stokes_channel(StokesConfig(level=args.level, cycles=args.cycles, ranks=args.ranks,
                                          vtk_out=args.vtk_out))
    for k, r in enumerate(rep.residuals):
        print(f"cycle={k} residual={r:.3e}")
    print("\n".join(rep.lines()))


if __name__ == "__main__":
    main()
