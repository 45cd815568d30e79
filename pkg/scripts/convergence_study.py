"""L2 error and error ratios of the manufactured Poisson problem for P1 and P2."""
import argparse

from hytegrid.apps.drivers import PoissonConfig, run_poisson


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mesh", default="square")
    ap.add_argument("--level", type=int, default=5)
    ap.add_argument("--ranks", type=int, default=1)
    args = ap.parse_args()
    for kind in ("P1", "P2"):
        rep = run_poisson(PoissonConfig(mesh=args.mesh, level=args.level, ranks=args.ranks, kind=kind))
        for line in rep.lines():
            print(f"kind={kind} {line}")


if __name__ == "__main__":
    main()
