import math

import numpy as np
import pytest

from hwbo.acquisition import (
    AcquisitionChoice,
    AcquisitionContext,
    acquisition_values,
    budget_excess,
    expected_improvement,
    hw_cwei,
    hw_ieci,
    maximize_acquisition,
)
from hwbo.gp import KernelHyper, gp_fit, gp_posterior_batch
from hwbo.hwmodels import Budget, HwLinearModel
from hwbo.space import ParamSpec, SearchSpace

# frozen oracle values (30-digit evaluation)
EI_05_02_04 = 0.0395593114802612059187065493801
PHI_1 = 0.841344746068542948585232545632


def phi_series(x, terms=60):
    """Standard normal CDF from the Maclaurin series of erf."""
    z = x / math.sqrt(2)
    s = sum((-1) ** n * z ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)) for n in range(terms))
    return 0.5 * (1 + 2 / math.sqrt(math.pi) * s)


@pytest.fixture
def setup():
    space = SearchSpace([
        ParamSpec("a", "integer", 0, 10, structural=True),
        ParamSpec("b", "integer", 0, 10, structural=True),
        ParamSpec("lr", "continuous", 0.0, 1.0),
    ])
    rng = np.random.default_rng(0)
    X = space.sample_uniform(rng, 8)
    y = rng.uniform(0.1, 0.9, 8)
    gp = gp_fit(space.normalize(X), y, KernelHyper(0.1, np.array([0.4, 0.4, 0.4]), 1e-4))
    pm = HwLinearModel(np.array([1.0, 1.0]), "power", residual_std=1.5)
    mm = HwLinearModel(np.array([0.1, 0.05]), "memory", residual_std=0.05)
    ctx = AcquisitionContext(space, gp, float(y.min()), pm, mm, Budget(12.0, 1.0))
    return space, ctx


def test_ei_examples():
    assert expected_improvement(0.4, 0.0, 0.4) == 0
    assert expected_improvement(0.1, 0.0, 0.4) == pytest.approx(0.3, abs=1e-15)
    assert expected_improvement(0.5, 0.04, 0.4) == pytest.approx(EI_05_02_04, abs=1e-15)


def test_ei_quadrature_over_8_sigma():
    mu, s, yb = 0.5, 0.2, 0.4
    y = np.linspace(mu - 8 * s, yb, 200_001)
    pdf = np.exp(-0.5 * ((y - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi))
    assert expected_improvement(mu, s * s, yb) == pytest.approx(np.trapezoid((yb - y) * pdf, y), abs=1e-6)


def test_ei_vectorized():
    out = expected_improvement(np.array([0.1, 0.5]), np.array([0.0, 0.04]), 0.4)
    assert out.shape == (2,) and out[0] == pytest.approx(0.3) and out[1] == pytest.approx(EI_05_02_04)


def test_phi_series_oracle():
    assert phi_series(1.0) == pytest.approx(PHI_1, abs=1e-12)


def test_ieci_masks_violators(setup):
    space, ctx = setup
    x = np.array([10, 5, 0.5])  # predicted power 15 > 12
    assert hw_ieci(x, ctx) == 0.0


def test_ieci_equals_ei_bitwise_when_feasible(setup):
    space, ctx = setup
    x = np.array([2, 3, 0.3])
    ei = acquisition_values("ei", x[None, :], ctx)[0]
    assert hw_ieci(x, ctx) == ei


def test_ieci_two_pass_oracle(setup):
    space, ctx = setup
    X = space.sample_uniform(np.random.default_rng(1), 100)
    mu, var = gp_posterior_batch(ctx.gp, space.normalize(X))
    ei = np.array([expected_improvement(m, v, ctx.y_best) for m, v in zip(mu, var)])
    mask = np.array([
        (x[0] + x[1] <= 12.0) and (0.1 * x[0] + 0.05 * x[1] <= 1.0) for x in X
    ])
    assert np.array_equal(acquisition_values("hw-ieci", X, ctx), ei * mask)


def test_cwei_zero_residual_equals_ieci(setup):
    space, ctx = setup
    pm = HwLinearModel(ctx.power_model.weights, "power", residual_std=0.0)
    mm = HwLinearModel(ctx.memory_model.weights, "memory", residual_std=0.0)
    ctx0 = AcquisitionContext(space, ctx.gp, ctx.y_best, pm, mm, ctx.budget)
    X = space.sample_uniform(np.random.default_rng(2), 200)
    assert np.array_equal(acquisition_values("hw-cwei", X, ctx0), acquisition_values("hw-ieci", X, ctx0))


def test_cwei_factor_phi1_and_half(setup):
    space, ctx = setup
    # memory loose so only the power factor matters
    loose = Budget(power=None, memory=None)
    pm = HwLinearModel(np.array([1.0, 1.0]), "power", residual_std=1.5)
    x = np.array([4, 5, 0.3])  # predicted power 9
    ei = acquisition_values("ei", x[None, :], ctx)[0]
    c1 = AcquisitionContext(space, ctx.gp, ctx.y_best, pm, None, Budget(power=10.5))
    assert hw_cwei(x, c1) == pytest.approx(ei * phi_series(1.0), rel=1e-9)
    c2 = AcquisitionContext(space, ctx.gp, ctx.y_best, pm, None, Budget(power=9.0))
    assert hw_cwei(x, c2) == pytest.approx(ei * 0.5, rel=1e-12)
    c3 = AcquisitionContext(space, ctx.gp, ctx.y_best, pm, None, loose)
    assert hw_cwei(x, c3) == ei


def test_choice_validation():
    with pytest.raises(ValueError):
        AcquisitionChoice("pes")
    with pytest.raises(ValueError):
        AcquisitionChoice("ei", 0)


def test_maximize_single_candidate_is_returned(setup):
    space, ctx = setup
    x, _ = maximize_acquisition(space, AcquisitionChoice("ei", 1), ctx, np.random.default_rng(3))
    expected = space.sample_uniform(np.random.default_rng(3), 1)[0]
    assert np.array_equal(x, expected)


def test_maximize_matches_rescoring_oracle(setup):
    space, ctx = setup
    x, score = maximize_acquisition(space, AcquisitionChoice("hw-ieci", 200), ctx, np.random.default_rng(4))
    cands = space.sample_uniform(np.random.default_rng(4), 200)
    scores = [hw_ieci(c, ctx) for c in cands]
    best = max(range(200), key=lambda i: (scores[i], -i))
    assert np.array_equal(x, cands[best]) and score == scores[best]


def test_inactive_constraints_match_plain_ei(setup):
    space, ctx = setup
    free = AcquisitionContext(space, ctx.gp, ctx.y_best, ctx.power_model, ctx.memory_model, Budget())
    a = maximize_acquisition(space, AcquisitionChoice("hw-ieci", 500), free, np.random.default_rng(5))
    b = maximize_acquisition(space, AcquisitionChoice("ei", 500), free, np.random.default_rng(5))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_ties_go_to_lowest_index(setup):
    space, ctx = setup
    # tiny amplitude and lengthscale: most candidates share the prior EI, so ties occur
    flat = gp_fit(np.array([[0.5, 0.5, 0.5]]), np.array([0.5]), KernelHyper(1e-4, np.array([1e-2] * 3), 1e-8))
    c = AcquisitionContext(space, flat, 1.0, None, None, Budget())
    cands = space.sample_uniform(np.random.default_rng(6), 50)
    scores = acquisition_values("ei", cands, c)
    x, s = maximize_acquisition(space, AcquisitionChoice("ei", 50), c, np.random.default_rng(6))
    assert np.array_equal(x, cands[int(np.flatnonzero(scores == scores.max())[0])])


def test_all_masked_fallback_picks_least_excess(setup):
    space, ctx = setup
    # offsets make even z = 0 violate both budgets
    pm = HwLinearModel(np.array([1.0, 1.0]), "power", intercept=5.0)
    mm = HwLinearModel(np.array([0.1, 0.05]), "memory", intercept=0.5)
    tight = AcquisitionContext(space, ctx.gp, ctx.y_best, pm, mm, Budget(0.5, 0.01))
    x, score = maximize_acquisition(space, AcquisitionChoice("hw-ieci", 30), tight, np.random.default_rng(7))
    assert score == 0.0
    rng = np.random.default_rng(7)
    seen = np.concatenate([space.sample_uniform(rng, 30) for _ in range(11)])
    assert np.array_equal(x, seen[int(np.argmin(budget_excess(seen, tight)))])
