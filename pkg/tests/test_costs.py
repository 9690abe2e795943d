import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfplan.analytic import finite_diff_gradient_oracle
from mfplan.costs import (
    CostModel,
    dynamic_cost,
    dynamic_cost_grad,
    interaction,
    kinetic,
    objective_grad,
    objective_value,
    smoothed_objective,
)
from mfplan.grid import BoundaryData, GridShape, StaggeredFields


def test_dynamic_cost_cases():
    assert dynamic_cost(2.0, [1.0, 1.0]) == pytest.approx(0.5)
    assert dynamic_cost(0.0, [0.0]) == 0.0
    assert dynamic_cost(0.0, [1e-3]) == np.inf
    with pytest.raises(ValueError):
        dynamic_cost(-1.0, [0.0])


def test_dynamic_cost_grad_clamps_small_density():
    g0, gm = dynamic_cost_grad(0.0, [1.0], floor=0.5)
    assert g0 == pytest.approx(-2.0)
    assert gm == pytest.approx([2.0])


@pytest.mark.parametrize("kind", ["ot", "entropy", "quadratic", "reciprocal"])
def test_interaction_derivative(kind):
    rho = np.linspace(0.2, 3.0, 7)
    h = 1e-6
    f, df = interaction(kind, rho)
    fp, _ = interaction(kind, rho + h)
    fm, _ = interaction(kind, rho - h)
    assert np.allclose((fp - fm) / (2 * h), df, atol=1e-6)


def test_interaction_rejects_negative_density():
    with pytest.raises(ValueError):
        interaction("entropy", np.array([-1.0]))


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-2, 2, allow_nan=False),
    st.floats(-5, 5, allow_nan=False),
    st.floats(-5, 5, allow_nan=False),
    st.floats(0.0, 1.0),
)
def test_capped_kinetic_is_convex_along_segments(r, m, m2, s):
    # convexity in (rho, m) along the segment between two points
    a = np.array([r]), [np.array([m])]
    b = np.array([r + 1.0]), [np.array([m2])]
    cap = 3.0
    fa = kinetic(*a, cap=cap)[0][0]
    fb = kinetic(*b, cap=cap)[0][0]
    mid = kinetic(np.array([r + s]), [np.array([(1 - s) * m + s * m2])], cap=cap)[0][0]
    assert mid <= (1 - s) * fa + s * fb + 1e-9 * (1 + abs(fa) + abs(fb))


def test_capped_kinetic_matches_plain_inside_and_is_continuous():
    rho = np.array([1.0, 2.0])
    m = [np.array([0.5, -1.0])]
    plain = kinetic(rho, m)
    capped = kinetic(rho, m, cap=10.0)
    for a, b in zip(plain[:2], capped[:2]):
        assert np.allclose(a, b)
    # across the |m| = V rho boundary both branches agree
    v = 2.0
    for eps in (-1e-9, 1e-9):
        r = np.array([1.0])
        val, g0, gm = kinetic(r, [np.array([v + eps])], cap=v)
        assert val[0] == pytest.approx(v * v / 2, abs=1e-8)
        assert g0[0] == pytest.approx(-v * v / 2, abs=1e-8)
        assert gm[0][0] == pytest.approx(v, abs=1e-8)


def test_capped_kinetic_charges_negative_density():
    val, g0, _ = kinetic(np.array([-0.5]), [np.array([0.0])], cap=4.0)
    assert val[0] == pytest.approx(4.0)
    assert g0[0] == pytest.approx(-8.0)


def _fields(shape, rng, low=0.5):
    return StaggeredFields(
        rng.uniform(low, 2.0, shape.face_shape(0)),
        tuple(rng.uniform(-1, 1, shape.face_shape(d)) for d in range(1, len(shape.n))),
    )


@pytest.mark.parametrize("kind", ["ot", "entropy", "quadratic", "reciprocal"])
@pytest.mark.parametrize("free", [False, True])
def test_gradient_against_finite_differences(kind, free, rng):
    shape = GridShape((3, 4, 3), free_terminal=free)
    sp = shape.space_shape
    bnd = BoundaryData(rng.uniform(0.5, 1.5, sp), None if free else rng.uniform(0.5, 1.5, sp))
    lam = (0.0, 0.0) if kind == "ot" else (0.7, 1.3)
    model = CostModel(kind, *lam, Q=rng.uniform(0, 1, sp), lambda_G=0.8, G=rng.standard_normal(sp))
    x = _fields(shape, rng)
    g = objective_grad(x, bnd, model, shape)
    fd = finite_diff_gradient_oracle(lambda f: smoothed_objective(f, bnd, model, shape) / shape.cell_volume, x)
    assert np.max(np.abs(g.ravel() - fd.ravel())) < 1e-6 * max(1.0, np.max(np.abs(fd.ravel())))


def test_capped_gradient_against_finite_differences(rng):
    shape = GridShape((4, 5))
    bnd = BoundaryData(np.ones(5), np.ones(5))
    x = _fields(shape, rng, low=-0.5)
    model = CostModel()
    g = objective_grad(x, bnd, model, shape, cap=2.0)
    fd = finite_diff_gradient_oracle(lambda f: smoothed_objective(f, bnd, model, shape, cap=2.0) / shape.cell_volume, x)
    assert np.max(np.abs(g.ravel() - fd.ravel())) < 1e-5


def test_ot_objective_ignores_preference_field(rng):
    shape = GridShape((3, 4))
    bnd = BoundaryData(np.ones(4), np.ones(4))
    x = _fields(shape, rng)
    a = objective_value(x, bnd, CostModel("ot"), shape)
    b = objective_value(x, bnd, CostModel("ot", Q=rng.uniform(0, 5, 4)), shape)
    assert a == b


def test_exact_objective_is_infinite_for_flux_without_density():
    shape = GridShape((2, 2))
    x = StaggeredFields(np.zeros((1, 2)), (np.ones((2, 1)),))
    bnd = BoundaryData(np.zeros(2), np.zeros(2))
    assert objective_value(x, bnd, CostModel(), shape) == np.inf
    assert np.isfinite(smoothed_objective(x, bnd, CostModel(), shape))


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel("ot", lambda_E=1.0)
    with pytest.raises(ValueError):
        CostModel("entropy", lambda_Q=-1.0)
    with pytest.raises(ValueError):
        CostModel("entropy", lambda_Q=1.0, Q=np.array([-1.0]))
    with pytest.raises(ValueError):
        CostModel("banana")
    with pytest.raises(ValueError):
        CostModel("entropy", lambda_Q=1.0, Q=np.ones(3)).preference(GridShape((2, 4)))


def test_capped_kinetic_finite_at_subnormal_density():
    val, g0, gm = kinetic(np.array([5e-324, 1e-300]), [np.array([0.0, 1e-301])], cap=1.0)
    assert np.all(np.isfinite(val)) and np.all(np.isfinite(g0)) and np.all(np.isfinite(gm[0]))
