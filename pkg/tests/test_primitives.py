import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hytegrid import mesh as M
from hytegrid.balancing import partition_round_robin
from hytegrid.functions import ScalarFunction, _serialize_levels
from hytegrid.indexing import FunctionKind
from hytegrid.mesh import PrimitiveKind
from hytegrid.primitives import DataHandle, Domain, PrimitiveError, distribute

V, E, F = PrimitiveKind


def _shared_edge(setup):
    return next(e.id for e in setup.of_kind(E) if len(e.neighbors[F]) == 2)


def test_single_rank_owns_everything(ring_setup):
    (g,) = distribute(ring_setup, {pid: 0 for pid in ring_setup.primitives}, 1)
    assert set(g.primitives) == set(ring_setup.primitives)
    assert set(g.rank_of.values()) == {0}


def test_neighbor_rank_of_shared_edge(two_face_setup):
    s = two_face_setup
    f0, f1 = s.ids(F)
    shared = _shared_edge(s)
    assignment = {pid: 0 for pid in s.primitives}
    assignment[f1] = 1
    graphs = distribute(s, assignment, 2)
    assert graphs[1].neighbor_rank(shared) == 0
    assert f1 in graphs[1].primitives and shared not in graphs[1].primitives


def test_round_robin_tally_on_ring(ring_setup):
    s = ring_setup
    a = partition_round_robin(s, 4)
    graphs = distribute(s, a, 4)
    for kind in PrimitiveKind:
        ids = s.ids(kind)
        for r, g in enumerate(graphs):
            want = sum(1 for i, _ in enumerate(ids) if i % 4 == r)
            assert len(g.local(kind)) == want


@given(st.integers(1, 5), st.data())
def test_ownership_is_a_partition(ranks, data):
    s = M.build_setup_graph(M.square_ring())
    a = {pid: data.draw(st.integers(0, ranks - 1)) for pid in s.ids()}
    graphs = distribute(s, a, ranks)
    owned = [pid for g in graphs for pid in g.primitives]
    assert sorted(owned) == s.ids()
    for g in graphs:
        # rank tables only cover local primitives and their direct neighbours
        allowed = set(g.primitives)
        for p in g.primitives.values():
            for ids in p.neighbors.values():
                allowed.update(ids)
        assert set(g.rank_of) <= allowed
        for pid, r in g.rank_of.items():
            assert r == a[pid]


def test_counter_handle(ring_setup):
    d = Domain(ring_setup)
    d.add_data(DataHandle(7, lambda p: 0))
    assert all(g.get_data(p.id, 7) == 0 for g, p in d.local_items())


def test_unregistered_handle_raises(ring_setup):
    d = Domain(ring_setup)
    pid = ring_setup.ids()[0]
    with pytest.raises(PrimitiveError, match="not registered"):
        d.graphs[0].get_data(pid, 99)


def test_level2_face_array_length():
    d = Domain(M.build_setup_graph(M.single_triangle()))
    u = ScalarFunction(d, "u", FunctionKind.P1, 2, 2)
    (face,) = [p for _, p in d.local_items(F)]
    assert len(u.values(face, 2)) == 15


def _two_rank_domain(setup):
    return Domain(setup, {pid: 0 for pid in setup.primitives}, 2)


def test_migrate_to_current_owner_is_identity(two_face_setup):
    d = _two_rank_domain(two_face_setup)
    before = [dict(g.rank_of) for g in d.graphs]
    f = two_face_setup.ids(F)[0]
    d.migrate(f, 0)
    assert [dict(g.rank_of) for g in d.graphs] == before
    assert d.transport.pending() == 0


def test_migrate_face_keeps_field(two_face_setup):
    s = two_face_setup
    d = _two_rank_domain(s)
    u = ScalarFunction(d, "u", FunctionKind.P1, 1, 3)
    for lvl in u.levels:
        u.interpolate(lambda x, y: np.sin(3 * x) + y * y, lvl)
    f = s.ids(F)[1]
    g0 = d.graphs[0]
    before = _serialize_levels(g0.primitives[f].data[u.handle_id])
    d.migrate(f, 1)
    assert f in d.graphs[1].primitives and f not in g0.primitives
    assert _serialize_levels(d.graphs[1].primitives[f].data[u.handle_id]) == before
    for lvl in u.levels:
        assert u.values(d.graphs[1].primitives[f], lvl).tobytes() == \
            _reference_values(s, lvl, f).tobytes()
    for vid in s.primitives[f].neighbors[E]:
        owner = d.graphs[d.owner(vid)]
        assert owner.neighbor_rank(f) == 1


def _reference_values(setup, level, fid):
    d = Domain(setup)
    u = ScalarFunction(d, "u", FunctionKind.P1, 1, 3)
    u.interpolate(lambda x, y: np.sin(3 * x) + y * y, level)
    return u.values(d.primitive(fid), level)


def test_migration_preserves_sync_results(ring_setup):
    s = ring_setup
    d = Domain(s, partition_round_robin(s, 3), 3)
    u = ScalarFunction(d, "u", FunctionKind.P1, 2, 2)
    u.interpolate(lambda x, y: x - 2 * y, 2)
    ref = u.owned_map(2)
    for f in s.ids(F)[:3]:
        d.migrate(f, (d.owner(f) + 1) % 3)
    u.sync(2)
    assert {k: v.tobytes() for k, v in u.owned_map(2).items()} == {k: v.tobytes() for k, v in ref.items()}
