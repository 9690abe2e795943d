import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfplan.grid import (
    BoundaryData,
    GridShape,
    StaggeredFields,
    average_to_center,
    average_to_faces,
    divergence,
    gradient,
    inner,
    laplacian,
    norms,
)

shapes = st.builds(
    GridShape,
    st.lists(st.integers(2, 6), min_size=2, max_size=3).map(tuple),
    st.booleans(),
)


def random_fields(shape, rng):
    return StaggeredFields(
        rng.standard_normal(shape.face_shape(0)),
        tuple(rng.standard_normal(shape.face_shape(d)) for d in range(1, len(shape.n))),
    )


def test_face_shapes_planning_and_game():
    s = GridShape((4, 5, 6))
    assert s.face_shape(0) == (3, 5, 6)
    assert s.face_shape(1) == (4, 4, 6)
    assert s.face_shape(2) == (4, 5, 5)
    g = GridShape((4, 5), free_terminal=True)
    assert g.face_shape(0) == (4, 5)
    assert g.free_end(0) and not g.free_end(1)


def test_grid_rejects_single_cell_axis():
    with pytest.raises(ValueError):
        GridShape((1, 4))


def test_coarsen_needs_even_counts():
    assert GridShape((8, 4)).coarsen() == GridShape((4, 2))
    with pytest.raises(ValueError):
        GridShape((6, 5)).coarsen()


def test_vector_roundtrip(rng):
    s = GridShape((3, 4, 5))
    x = random_fields(s, rng)
    y = StaggeredFields.from_vector(x.ravel(), s)
    assert np.array_equal(x.ravel(), y.ravel())
    with pytest.raises(ValueError):
        StaggeredFields.from_vector(np.zeros(x.size + 1), s)


def test_averaging_of_constants_is_constant():
    s = GridShape((4, 6))
    bnd = BoundaryData(np.ones(6), np.ones(6))
    rho_bar, m_bar = average_to_center(s.ones(), bnd, s)
    assert np.allclose(rho_bar, 1.0)
    # flux faces on the wall are zero, so the edge cells see half the flux
    assert np.allclose(m_bar[0][:, 1:-1], 1.0)
    assert np.allclose(m_bar[0][:, [0, -1]], 0.5)


def test_divergence_of_linear_density_in_time():
    # P(t) = t on interior faces with rho0 = 0, rho1 = 1 has unit time derivative
    n0, n1 = 5, 3
    s = GridShape((n0, n1))
    bnd = BoundaryData(np.zeros(n1), np.ones(n1))
    t = s.face_coords(0)[:, None] * np.ones(n1)
    x = StaggeredFields(t, (np.zeros(s.face_shape(1)),))
    r = divergence(x, s) + bnd.div_term(s)
    assert np.allclose(r, 1.0)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1))
def test_gradient_is_minus_adjoint_of_divergence(shape, seed):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(shape.n)
    x = random_fields(shape, rng)
    assert np.isclose(-inner(gradient(phi, shape), x), inner(phi, divergence(x, shape)), rtol=1e-10, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1))
def test_laplacian_matches_div_grad(shape, seed):
    phi = np.random.default_rng(seed).standard_normal(shape.n)
    a = laplacian(phi, shape)
    b = divergence(gradient(phi, shape), shape)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(b))


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1))
def test_average_to_faces_is_adjoint_of_averaging(shape, seed):
    rng = np.random.default_rng(seed)
    x = random_fields(shape, rng)
    zero = BoundaryData(np.zeros(shape.space_shape), None if shape.free_terminal else np.zeros(shape.space_shape))
    rho_bar, m_bar = average_to_center(x, zero, shape)
    u = rng.standard_normal(shape.n)
    v = [rng.standard_normal(shape.n) for _ in range(shape.ndim)]
    lhs = inner(rho_bar, u) + sum(inner(a, b) for a, b in zip(m_bar, v))
    rhs = inner(x, average_to_faces(u, v, shape))
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(shapes)
def test_neumann_laplacian_kills_constants(shape):
    phi = np.full(shape.n, 3.0)
    out = laplacian(phi, shape)
    if shape.free_terminal:
        # the zero ghost past t = 1 only touches the last time slice
        assert np.allclose(out[:-1], 0.0)
        assert np.all(out[-1] < 0)
    else:
        assert np.allclose(out, 0.0, atol=1e-9)


def test_norms_weighting():
    s = GridShape((4, 4))
    fro, l2, sup = norms(np.full(s.n, 2.0), s)
    assert fro == pytest.approx(8.0)
    assert l2 == pytest.approx(2.0)
    assert sup == 2.0


def test_boundary_data_validation():
    with pytest.raises(ValueError):
        BoundaryData(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        BoundaryData(-np.ones(3))
    with pytest.raises(ValueError):
        BoundaryData(np.ones(3)).check(GridShape((2, 3)))


def test_check_rejects_wrong_component_shape():
    s = GridShape((3, 3))
    with pytest.raises(ValueError):
        s.check(StaggeredFields(np.zeros((3, 3)), (np.zeros((3, 2)),)))
