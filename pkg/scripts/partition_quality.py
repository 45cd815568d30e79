"""Load balance and edge cut of the round-robin and greedy partitioners on the fixtures."""
import argparse

from hytegrid import mesh as M
from hytegrid.balancing import (edge_cut, face_cut, partition_greedy_edgecut, partition_round_robin,
                                rank_loads, weighted_graph)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--level", type=int, default=2)
    ap.add_argument("--ranks", type=int, nargs="+", default=[2, 3, 4])
    args = ap.parse_args()
    for name, build in M.FIXTURES.items():
        setup = M.build_setup_graph(build())
        wg = weighted_graph(setup, args.level)
        for ranks in args.ranks:
            rr = partition_round_robin(setup, ranks)
            greedy, rep = partition_greedy_edgecut(wg, ranks)
            for label, a in (("rr", rr), ("greedy", greedy)):
                loads = rank_loads(wg, a, ranks)
                print(f"mesh={name} ranks={ranks} partitioner={label} edge_cut={edge_cut(wg, a)} "
                      f"face_cut={face_cut(wg, a)} imbalance={max(loads) / (wg.total / ranks):.3f}"
                      + ("" if label == "rr" or rep.feasible else " infeasible"))


if __name__ == "__main__":
    main()
