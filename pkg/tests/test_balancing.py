import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hytegrid import mesh as M
from hytegrid.balancing import (edge_cut, face_cut, format_assignment, parse_assignment,
                               partition_greedy_edgecut, partition_round_robin, rank_loads,
                               weighted_graph)
from hytegrid.mesh import PrimitiveKind

V, E, F = PrimitiveKind


def _face_counts(setup, a, ranks):
    return sorted(sum(a[f] == r for f in setup.ids(F)) for r in range(ranks))


@pytest.mark.parametrize("part", ["rr", "greedy"])
def test_single_rank(part, ring_setup):
    if part == "rr":
        a = partition_round_robin(ring_setup, 1)
    else:
        a, rep = partition_greedy_edgecut(weighted_graph(ring_setup), 1)
        assert rep.feasible
    assert set(a.values()) == {0}
    assert edge_cut(weighted_graph(ring_setup), a) == 0


def test_two_faces_split(two_face_setup):
    a = partition_round_robin(two_face_setup, 2)
    assert _face_counts(two_face_setup, a, 2) == [1, 1]
    a, _ = partition_greedy_edgecut(weighted_graph(two_face_setup), 2)
    assert _face_counts(two_face_setup, a, 2) == [1, 1]


def test_ring_three_ranks(ring_setup):
    a = partition_round_robin(ring_setup, 3)
    assert _face_counts(ring_setup, a, 3) == [2, 3, 3]


def test_chain_split_in_the_middle():
    s = M.build_setup_graph(M.face_chain(4))
    wg = weighted_graph(s)
    faces = s.ids(F)
    # exhaustive: best balanced 2-way face cut
    best = min(face_cut(wg, dict(zip(faces, bits))) for bits in itertools.product((0, 1), repeat=4)
               if sum(bits) == 2)
    a, rep = partition_greedy_edgecut(wg, 2)
    assert face_cut(wg, a) == best == 1
    assert edge_cut(wg, a) <= edge_cut(wg, partition_round_robin(s, 2))


@pytest.mark.parametrize("name", ["ring", "channel", "annulus"])
@pytest.mark.parametrize("ranks", [2, 3, 4])
def test_level2_weights_balanced(name, ranks):
    s = M.build_setup_graph(M.FIXTURES[name]())
    wg = weighted_graph(s, level=2)
    a, rep = partition_greedy_edgecut(wg, ranks)
    loads = rank_loads(wg, a, ranks)
    avg = wg.total / ranks
    assert rep.feasible
    assert max(abs(x - avg) for x in loads) <= 0.1 * avg
    assert edge_cut(wg, a) <= edge_cut(wg, partition_round_robin(s, ranks))


def test_infeasible_bound_is_reported():
    # 4-face chain, 3 ranks: a heavy primitive cannot be split, so 10% is unreachable
    s = M.build_setup_graph(M.face_chain(4))
    _, rep = partition_greedy_edgecut(weighted_graph(s, level=2), 3)
    assert not rep.feasible and rep.notes


def test_cut_by_brute_force(two_face_setup):
    s = two_face_setup
    wg = weighted_graph(s)
    f0, f1 = s.ids(F)
    shared = next(e.id for e in s.of_kind(E) if len(e.neighbors[F]) == 2)
    a = {pid: 0 for pid in s.ids()}
    a[f1] = 1
    for pid in s.primitives[f1].neighbors[E] + s.primitives[f1].neighbors[V]:
        if pid != shared and pid not in s.primitives[f0].neighbors[V]:
            a[pid] = 1
    want = 0
    for pid, p in s.primitives.items():
        for kind, ids in p.neighbors.items():
            if kind == p.kind + 1:
                want += sum(a[pid] != a[q] for q in ids)
    assert edge_cut(wg, a) == want > 0


@given(st.integers(2, 4), st.data())
def test_cut_invariant_under_relabeling(ranks, data):
    s = M.build_setup_graph(M.square_ring())
    wg = weighted_graph(s)
    a = {pid: data.draw(st.integers(0, ranks - 1)) for pid in s.ids()}
    perm = data.draw(st.permutations(range(ranks)))
    b = {pid: perm[r] for pid, r in a.items()}
    assert edge_cut(wg, a) == edge_cut(wg, b)
    assert face_cut(wg, a) == face_cut(wg, b)


@given(st.integers(1, 6))
def test_greedy_assigns_every_primitive(ranks):
    s = M.build_setup_graph(M.annulus())
    a, _ = partition_greedy_edgecut(weighted_graph(s, level=3), ranks)
    assert sorted(a) == s.ids() and set(a.values()) <= set(range(ranks))


def test_assignment_text_round_trip(ring_setup):
    a = partition_round_robin(ring_setup, 3)
    assert parse_assignment(format_assignment(a)) == a
    with pytest.raises(ValueError, match="line 1"):
        parse_assignment("1 2 3\n")


@pytest.mark.parametrize("name", sorted(M.FIXTURES))
@pytest.mark.parametrize("ranks", [2, 3, 4])
def test_greedy_colocates_edges_with_a_face(name, ranks):
    s = M.build_setup_graph(M.FIXTURES[name]())
    a, _ = partition_greedy_edgecut(weighted_graph(s, level=2), ranks)
    for e in s.of_kind(E):
        assert a[e.id] in {a[f] for f in e.neighbors[F]}


@pytest.mark.parametrize("name", [n for n in sorted(M.FIXTURES) if M.FIXTURES[n]().n_triangles >= 4])
@pytest.mark.parametrize("ranks", [2, 3, 4])
def test_greedy_cut_not_worse_than_round_robin(name, ranks):
    s = M.build_setup_graph(M.FIXTURES[name]())
    wg = weighted_graph(s, level=2)
    a, _ = partition_greedy_edgecut(wg, ranks)
    assert edge_cut(wg, a) <= edge_cut(wg, partition_round_robin(s, ranks))
