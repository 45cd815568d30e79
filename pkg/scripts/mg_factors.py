"""Asymptotic V(2,2) residual reduction factors for P1 Poisson per level."""
import argparse

import numpy as np

from hytegrid import functions as fx
from hytegrid import mesh as M
from hytegrid.apps.drivers import make_domain
from hytegrid.functions import DoFFlag
from hytegrid.solvers import GridHierarchy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mesh", default="square", choices=sorted(M.FIXTURES))
    ap.add_argument("--max-level", type=int, default=6)
    ap.add_argument("--ranks", type=int, default=1)
    ap.add_argument("--cycles", type=int, default=10)
    args = ap.parse_args()
    setup = M.build_setup_graph(M.FIXTURES[args.mesh]())
    for level in range(2, args.max_level + 1):
        d = make_domain(setup, args.ranks, "rr")
        mg = GridHierarchy(d, 1, level, {1: DoFFlag.DIRICHLET})
        x, b = mg.new_function("x"), mg.new_function("b")
        rng = np.random.default_rng(level)
        for _, p in x.items():
            own = x.owned(p, level, fx.FREE)
            x.values(p, level)[own] = rng.standard_normal(len(own))
        res = mg.solve(x, b, cycles=args.cycles).residuals
        half = args.cycles // 2
        rate = (res[-1] / res[half]) ** (1 / (len(res) - 1 - half))
        print(f"level={level} dofs={fx.count_dofs(x, level, fx.FREE)} factor={rate:.4f}")


if __name__ == "__main__":
    main()
