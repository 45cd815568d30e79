"""Small builders shared by the test modules."""
from hytegrid import mesh as M
from hytegrid.balancing import partition_round_robin
from hytegrid.primitives import Domain


def rr_domain(mesh, ranks=1):
    setup = M.build_setup_graph(mesh)
    return Domain(setup, partition_round_robin(setup, ranks), ranks)


def ghost_mismatch(u, level):
    """Largest |stored copy - owner value| over every lattice point any primitive stores.

    Owner values are keyed by physical position, so the check does not rely
    on the pack maps it is testing.
    """
    import numpy as np

    from hytegrid.operators import GlobalNumbering

    owner = {}
    for _, p in u.items():
        lay = u.layout(p, level)
        vals = u.values(p, level)[lay.owned]
        for xy, v in zip(np.atleast_2d(lay.owned_coords), vals):
            owner[GlobalNumbering.key(*xy)] = v
    worst, seen = 0.0, 0
    for _, p in u.items():
        vals = u.values(p, level)
        for fr in u.layout(p, level).frames():
            a, b = np.nonzero(fr.table >= 0)
            for (x, y), idx in zip(fr.coords(a, b), fr.table[a, b]):
                diff = abs(vals[idx] - owner[GlobalNumbering.key(x, y)])
                worst = max(worst, diff if diff == diff else float("inf"))   # NaN: never written
                seen += 1
    return worst, seen


ACCEPTANCE = {}     # criterion number -> summary line, filled by test_acceptance
