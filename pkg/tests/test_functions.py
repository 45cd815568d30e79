import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hytegrid import mesh as M
from hytegrid.balancing import partition_round_robin
from hytegrid.functions import (ALL, FREE, DoFFlag, KindMismatch, ScalarFunction, add_scaled, assign,
                                copy, count_dofs, dot, max_abs, norm2, set_value, sum_values)
from hytegrid.indexing import FunctionKind, Orientation, owned_count
from hytegrid.mesh import PrimitiveKind
from hytegrid.primitives import Domain

from .helpers import rr_domain

V, E, F = PrimitiveKind
KINDS = [FunctionKind.P1, FunctionKind.P2]


def _fn(domain, kind=FunctionKind.P1, level=2, name="u", bc=None):
    return ScalarFunction(domain, name, kind, level, level, bc)


def _random(u, level, seed):
    rng = np.random.default_rng(seed)
    for _, p in u.items():
        u.values(p, level)[u.owned(p, level)] = rng.standard_normal(len(u.owned(p, level)))
    return u


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("name", ["triangle", "square", "ring"])
def test_storage_sizes_and_unique_ownership(kind, name):
    mesh = M.FIXTURES[name]()
    d = rr_domain(mesh, 2)
    u = _fn(d, kind, 3)
    total = 0
    for _, p in u.items():
        n_owned = len(u.owned(p, 3))
        assert n_owned == owned_count(kind, p.kind, 3)
        assert len(u.values(p, 3)) == u.layout(p, 3).size
        total += n_owned
    # global unknowns = unique lattice points over the mesh
    m = kind.resolution(3)
    g = M.build_setup_graph(mesh).counts()
    assert total == g[V] + (m - 1) * g[E] + (m - 1) * (m - 2) // 2 * g[F]
    assert count_dofs(u, 3) == total


def test_interpolate_zero():
    d = rr_domain(M.square_ring(), 2)
    u = _fn(d).interpolate(lambda x, y: 0 * x, 2)
    assert max_abs(u, 2) == 0.0


def test_interpolate_x_bottom_border():
    d = rr_domain(M.single_triangle())
    u = _fn(d, level=1).interpolate(lambda x, y: x, 1)
    u.sync(1)
    (face,) = [p for _, p in u.items(F)]
    border = u.values(face, 1)[u.layout(face, 1).face.border(0, Orientation.FORWARD)]
    assert border.tolist() == [0.0, 0.5, 1.0]


@pytest.mark.parametrize("kind", KINDS)
def test_dot_matches_lattice_sum(kind):
    d = rr_domain(M.unit_square(), 2)
    u = _fn(d, kind, 3).interpolate(lambda x, y: x + y, 3)
    m = kind.resolution(3)
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1))
    want = np.sum(((i + j) / m) ** 2)
    assert dot(u, u, 3) == pytest.approx(want, rel=1e-14)


def test_dot_of_ones_on_single_face():
    d = rr_domain(M.single_triangle())
    one = _fn(d).interpolate(lambda x, y: 1.0 + 0 * x, 2)
    zero = _fn(d, name="z")
    assert dot(one, one, 2) == 15.0
    assert dot(zero, one, 2) == 0.0
    assert norm2(zero, 2) == 0.0


def test_max_abs_of_x():
    d = rr_domain(M.single_triangle())
    assert max_abs(_fn(d).interpolate(lambda x, y: x, 2), 2) == 1.0


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("name", ["ring", "annulus"])
def test_reductions_independent_of_rank_count(kind, name):
    f = lambda x, y: np.sin(7 * x) * np.exp(y) + 1e-3 * x
    out = []
    for ranks in (1, 4):
        d = rr_domain(M.FIXTURES[name](), ranks)
        u = _fn(d, kind, 3).interpolate(f, 3)
        out.append((dot(u, u, 3), sum_values(u, 3), max_abs(u, 3)))
    assert out[0] == out[1]


@pytest.mark.parametrize("ranks", [1, 2])
def test_assign_identities(ranks):
    d = rr_domain(M.square_ring(), ranks)
    x1, x2, dst = _random(_fn(d, name="x1"), 2, 1), _random(_fn(d, name="x2"), 2, 2), _fn(d, name="d")
    assign(1.0, x1, 0.0, x2, dst, 2)
    assert np.array_equal(dst.owned_vector(2), x1.owned_vector(2))
    assign(1.0, x1, 1.0, x1, dst, 2)
    assert np.array_equal(dst.owned_vector(2), 2 * x1.owned_vector(2))
    assign(2.5, x1, -1.0, x2, dst, 2)
    np.testing.assert_array_equal(dst.owned_vector(2), 2.5 * x1.owned_vector(2) - x2.owned_vector(2))


@given(st.floats(-10, 10), st.integers(0, 1000))
def test_add_scaled_agrees_with_assign(gamma, seed):
    d = rr_domain(M.unit_square(), 2)
    x, y = _random(_fn(d, name="x"), 2, seed), _random(_fn(d, name="y"), 2, seed + 1)
    a, b = _fn(d, name="a"), _fn(d, name="b")
    assign(1.0, x, gamma, y, a, 2)
    copy(b, x, 2)
    add_scaled(b, gamma, y, 2)
    np.testing.assert_array_equal(a.owned_vector(2), b.owned_vector(2))


@given(st.integers(0, 1000))
def test_dot_is_symmetric_and_bilinear(seed):
    d = rr_domain(M.square_ring(), 3)
    x, y = _random(_fn(d, name="x"), 2, seed), _random(_fn(d, name="y"), 2, seed + 7)
    assert dot(x, y, 2) == dot(y, x, 2)
    assert norm2(x, 2) ** 2 == pytest.approx(dot(x, x, 2))
    two = _fn(d, name="2x")
    assign(2.0, x, 0.0, x, two, 2)
    assert dot(two, y, 2) == pytest.approx(2 * dot(x, y, 2), rel=1e-12, abs=1e-12)


def test_masks_select_boundary():
    d = rr_domain(M.unit_square())
    u = _fn(d, level=2, bc={1: DoFFlag.DIRICHLET})
    set_value(u, 1.0, 2)
    boundary = count_dofs(u, 2, DoFFlag.DIRICHLET)
    assert boundary == 16 and count_dofs(u, 2, FREE) == 25 - 16
    set_value(u, 0.0, 2, DoFFlag.DIRICHLET)
    assert sum_values(u, 2) == 9.0 and count_dofs(u, 2, ALL) == 25


def test_kind_mismatch():
    d = rr_domain(M.unit_square())
    with pytest.raises(KindMismatch):
        dot(_fn(d), _fn(d, FunctionKind.P2, name="q"), 2)


def test_dg0_is_rejected():
    with pytest.raises(ValueError):
        _fn(rr_domain(M.unit_square()), FunctionKind.DG0)
