"""Property-based invariants, 1000 generated cases each."""

import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from hwbo.acquisition import (
    AcquisitionChoice,
    AcquisitionContext,
    acquisition_values,
    expected_improvement,
    maximize_acquisition,
)
from hwbo.gp import KernelHyper, gp_fit, gp_posterior_batch
from hwbo.hwmodels import (
    Budget,
    HwLinearModel,
    ProfileSample,
    check_budget,
    cross_validate,
    fit_linear,
    predict,
    satisfaction_probability,
)
from hwbo.solvers import TrialRecord, best_so_far
from hwbo.space import ParamSpec, SearchSpace

settings.register_profile(
    "props", max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("props")

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(1e-6, 1e3, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


@st.composite
def param_specs(draw, name):
    kind = draw(st.sampled_from(["integer", "continuous", "log-continuous"]))
    structural = draw(st.booleans())
    if kind == "integer":
        lo = draw(st.integers(0, 50))
        hi = lo + draw(st.integers(1, 100))
    elif kind == "log-continuous":
        lo = draw(st.floats(1e-4, 1.0))
        hi = lo * draw(st.floats(1.01, 1e3))
    else:
        lo = draw(st.floats(0.0 if structural else -10.0, 10.0))
        hi = lo + draw(st.floats(0.01, 50.0))
    return ParamSpec(name, kind, float(lo), float(hi), structural=structural)


@st.composite
def spaces(draw, min_dim=1, max_dim=5):
    n = draw(st.integers(min_dim, max_dim))
    return SearchSpace([draw(param_specs(f"p{i}")) for i in range(n)])


# -- acquisition ----------------------------------------------------------


@given(finite, st.floats(0.0, 1e4), finite)
def test_ei_nonnegative(mu, var, y_best):
    assert expected_improvement(mu, var, y_best) >= 0.0


@given(st.floats(-10, 10), st.floats(1e-4, 10), st.floats(1e-4, 10), st.floats(-10, 10))
def test_ei_nondecreasing_in_spread(mu, s1, s2, y_best):
    assume(mu < y_best)
    lo, hi = sorted((s1, s2))
    a, b = expected_improvement(mu, lo * lo, y_best), expected_improvement(mu, hi * hi, y_best)
    assert a <= b + 1e-12 * max(1.0, abs(b))


@st.composite
def contexts(draw):
    space = SearchSpace([
        ParamSpec("a", "integer", 0, 20, structural=True),
        ParamSpec("b", "integer", 0, 20, structural=True),
        ParamSpec("lr", "log-continuous", 1e-3, 1e-1),
    ])
    rng = np.random.default_rng(draw(seeds))
    n = draw(st.integers(1, 6))
    X = space.sample_uniform(rng, n)
    y = rng.uniform(0.05, 0.95, n)
    hyper = KernelHyper(draw(st.floats(0.01, 2.0)), rng.uniform(0.1, 1.0, 3), draw(st.floats(1e-6, 1e-2)))
    gp = gp_fit(space.normalize(X), y, hyper)
    pm = HwLinearModel(rng.uniform(0.5, 3.0, 2), "power", residual_std=draw(st.floats(0.0, 5.0)))
    mm = HwLinearModel(rng.uniform(0.01, 0.1, 2), "memory", residual_std=draw(st.floats(0.0, 0.2)))
    budget = Budget(draw(st.floats(5.0, 80.0)), draw(st.floats(0.3, 3.0)))
    ctx = AcquisitionContext(space, gp, float(y.min()), pm, mm, budget)
    return ctx, space.sample_uniform(rng, 32)


@given(contexts())
def test_constrained_acquisitions_bounded_by_ei(case):
    ctx, X = case
    ei = acquisition_values("ei", X, ctx)
    ieci = acquisition_values("hw-ieci", X, ctx)
    cwei = acquisition_values("hw-cwei", X, ctx)
    assert np.all(ieci <= ei) and np.all(cwei <= ei + 1e-15)
    assert np.all(ieci >= 0) and np.all(cwei >= 0)


@given(contexts())
def test_ieci_zero_on_predicted_violators(case):
    ctx, X = case
    Z = ctx.space.extract_structural(X)
    ieci = acquisition_values("hw-ieci", X, ctx)
    for z, v in zip(Z, ieci):
        if not check_budget(ctx.power_model, ctx.memory_model, z, ctx.budget)[0]:
            assert v == 0.0


@given(contexts(), st.integers(-8, 8), st.integers(-8, 8), st.sampled_from(["hw-ieci", "hw-cwei"]), seeds)
def test_argmax_invariant_under_hardware_unit_scaling(case, kp, km, kind, seed):
    # powers of two scale exactly, so the comparison is bitwise
    ctx, _ = case
    cp, cm = 2.0**kp, 2.0**km
    pm, mm = ctx.power_model, ctx.memory_model
    scaled = AcquisitionContext(
        ctx.space, ctx.gp, ctx.y_best,
        HwLinearModel(pm.weights * cp, "power", residual_std=pm.residual_std * cp),
        HwLinearModel(mm.weights * cm, "memory", residual_std=mm.residual_std * cm),
        Budget(ctx.budget.power * cp, ctx.budget.memory * cm),
    )
    choice = AcquisitionChoice(kind, 64)
    a = maximize_acquisition(ctx.space, choice, ctx, np.random.default_rng(seed))
    b = maximize_acquisition(ctx.space, choice, scaled, np.random.default_rng(seed))
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


# -- gp -------------------------------------------------------------------


@given(seeds, st.integers(1, 8), st.integers(1, 4), st.floats(0.01, 5.0), st.floats(0.0, 1.0))
def test_posterior_variance_nonnegative(seed, n, d, amp, noise):
    rng = np.random.default_rng(seed)
    X, y = rng.random((n, d)), rng.normal(size=n)
    gp = gp_fit(X, y, KernelHyper(amp, rng.uniform(0.01, 2.0, d), noise))
    mu, var = gp_posterior_batch(gp, np.vstack([X, rng.random((8, d))]))
    assert np.all(var >= 0) and np.all(np.isfinite(mu))


@given(seeds, st.integers(1, 7), st.integers(1, 3), st.floats(1e-6, 1e-1))
def test_extra_observation_never_increases_variance(seed, n, d, noise):
    rng = np.random.default_rng(seed)
    X, y = rng.random((n + 1, d)), rng.normal(size=n + 1)
    h = KernelHyper(rng.uniform(0.1, 2.0), rng.uniform(0.1, 1.0, d), noise)
    Q = np.vstack([X[-1:], rng.random((8, d))])
    _, before = gp_posterior_batch(gp_fit(X[:-1], y[:-1], h), Q)
    _, after = gp_posterior_batch(gp_fit(X, y, h), Q)
    assert np.all(after <= before + 1e-9)


@given(seeds, st.integers(1, 8), st.integers(1, 3))
def test_posterior_mean_interpolates_noiseless_data(seed, n, d):
    # distinct cells of a lattice with spacing >= one lengthscale keep K well conditioned
    rng = np.random.default_rng(seed)
    cells = rng.choice(5**d, size=min(n, 5**d), replace=False)
    X = np.array([np.unravel_index(c, (5,) * d) for c in cells], dtype=float) / 4
    y = rng.normal(size=len(X))
    gp = gp_fit(X, y, KernelHyper(rng.uniform(0.5, 2.0), rng.uniform(0.05, 0.25, d), 0.0))
    mu, var = gp_posterior_batch(gp, X)
    assert np.max(np.abs(mu - y)) <= 1e-6
    assert np.max(var) <= 1e-6


# -- hardware models ------------------------------------------------------


@given(seeds, st.integers(1, 6), st.integers(-50, 50), st.integers(-50, 50))
def test_predict_is_linear(seed, j, a, b):
    rng = np.random.default_rng(seed)
    m = HwLinearModel(rng.normal(size=j), "power")
    z1, z2 = rng.integers(0, 100, j), rng.integers(0, 100, j)
    lhs = predict(m, a * z1 + b * z2)
    rhs = a * predict(m, z1) + b * predict(m, z2)
    assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-9 * (abs(a) + abs(b) + 1) * 100 * np.abs(m.weights).sum())


def profile(rng, w, n, noise):
    out = []
    for z in rng.integers(1, 60, size=(n, len(w))):
        v = float(z @ w)
        out.append(ProfileSample(z, v * np.exp(noise * rng.standard_normal()), v / 10 * np.exp(noise * rng.standard_normal())))
    return out


@given(seeds, st.integers(1, 4), st.floats(0.0, 0.2))
def test_refit_on_own_predictions_is_idempotent(seed, j, noise):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 2.0, j)
    samples = profile(rng, w, 3 * j + 5, noise)
    first = fit_linear(samples, "power")
    preds = predict(first, np.array([s.z for s in samples]))
    assume(np.all(preds > 0))
    again = fit_linear([ProfileSample(s.z, float(p), s.memory) for s, p in zip(samples, preds)], "power")
    assert np.allclose(again.weights, first.weights, rtol=1e-8, atol=1e-10)
    assert again.residual_std <= 1e-8 * max(1.0, float(np.max(preds)))


@given(seeds, st.integers(1, 3), st.floats(0.0, 0.3), st.integers(2, 10))
def test_cv_rmspe_nonnegative(seed, j, noise, k):
    rng = np.random.default_rng(seed)
    samples = profile(rng, rng.uniform(0.1, 2.0, j), 4 * j + 12, noise)
    assert cross_validate(samples, "memory", k=k, rng=rng) >= 0.0


@given(seeds, st.integers(1, 5), st.floats(1.0, 500.0), st.floats(0.0, 200.0))
def test_check_budget_monotone(seed, j, limit, extra):
    rng = np.random.default_rng(seed)
    pm = HwLinearModel(rng.uniform(0.0, 3.0, j), "power")
    z = rng.integers(0, 60, j)
    smaller = z - rng.integers(0, 1 + z)
    ok = check_budget(pm, None, z, Budget(power=limit))[0]
    if ok:
        assert check_budget(pm, None, smaller, Budget(power=limit))[0]
        assert check_budget(pm, None, z, Budget(power=limit + extra))[0]


@given(seeds, st.floats(0.0, 10.0), st.floats(1.0, 200.0), st.floats(0.0, 50.0))
def test_satisfaction_probability_bounded_and_monotone(seed, std, limit, extra):
    rng = np.random.default_rng(seed)
    m = HwLinearModel(rng.uniform(0.1, 3.0, 2), "power", residual_std=std)
    Z = rng.integers(0, 60, (16, 2))
    p1 = satisfaction_probability(m, Z, limit)
    p2 = satisfaction_probability(m, Z, limit + extra)
    assert np.all((p1 >= 0) & (p1 <= 1)) and np.all(p2 >= p1)


# -- search space ---------------------------------------------------------


@given(spaces(), st.lists(st.floats(-1e4, 1e4), min_size=5, max_size=5))
def test_clip_round_idempotent_and_valid(space, raw):
    x = space.clip_round(np.array(raw[: space.dim]))
    assert space.contains(x)
    assert np.array_equal(space.clip_round(x), x)


@given(spaces(), seeds)
def test_normalize_round_trip(space, seed):
    x = space.sample_uniform(np.random.default_rng(seed))
    u = space.normalize(x)
    assert np.all((u >= 0) & (u <= 1))
    assert np.allclose(space.denormalize(u), x, rtol=1e-12, atol=1e-12)


@given(spaces(), seeds, st.integers(1, 20))
def test_sample_uniform_valid(space, seed, n):
    X = space.sample_uniform(np.random.default_rng(seed), n)
    assert X.shape == (n, space.dim)
    assert all(space.contains(x) for x in X)


@given(spaces(), seeds)
def test_extract_structural_ignores_other_coordinates(space, seed):
    rng = np.random.default_rng(seed)
    a, b = space.sample_uniform(rng), space.sample_uniform(rng)
    mixed = a.copy()
    idx = space.structural_index
    other = np.setdiff1d(np.arange(space.dim), idx)
    mixed[other] = b[other]
    assert np.array_equal(space.extract_structural(mixed), space.extract_structural(a))


# -- solver traces --------------------------------------------------------


@st.composite
def trial_streams(draw):
    n = draw(st.integers(1, 40))
    recs, t = [], 0.0
    for i in range(n):
        status = draw(st.sampled_from(["completed", "early_terminated", "skipped_infeasible"]))
        obj = None if status == "skipped_infeasible" else draw(st.floats(0.0, 1.0))
        p = draw(st.floats(1.0, 200.0))
        dt = draw(st.floats(0.0, 5.0))
        recs.append(TrialRecord(i, (0.0,), (1,), status, obj, 0 if status == "skipped_infeasible" else 3,
                                p, 1.0, p, 1.0, t, t + dt))
        t += dt
    return recs


@given(trial_streams(), st.floats(1.0, 200.0))
def test_best_so_far_non_increasing(recs, limit):
    trace = [v for v in best_so_far(recs, Budget(power=limit)) if not math.isnan(v)]
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert len(best_so_far(recs, Budget(power=limit))) == sum(r.evaluated for r in recs)


@given(trial_streams())
def test_trial_record_round_trip(recs):
    for r in recs:
        assert TrialRecord.from_dict(r.to_dict()) == r
