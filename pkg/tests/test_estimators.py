"""Estimator correctness: oracles, paper anchors, and invariance properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mcjoint as mj
from mcjoint.dataset import GeneratorSpec, PairedSample, generate
from mcjoint.estimators import DemingConfig, deming_objective, fit

CFG = DemingConfig()


def sample(x, y):
    return PairedSample(x=np.asarray(x, float), y=np.asarray(y, float))


def line_sample(slope, intercept, n=12, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    x = np.linspace(1.0, 10.0, n) + rng.normal(0, 0.01, n)
    y = slope * x + intercept + rng.normal(0, noise, n)
    return sample(x, y)


# -- Deming ------------------------------------------------------------------

def test_deming_identity_line():
    s = line_sample(1.0, 0.0)
    f = mj.fit_deming(s)
    assert f.slope == pytest.approx(1.0, abs=1e-12)
    assert f.intercept == pytest.approx(0.0, abs=1e-12)
    assert f.iterations == 1 and f.converged


def test_deming_exact_affine():
    f = mj.fit_deming(line_sample(2.0, 3.0))
    assert f.slope == pytest.approx(2.0, abs=1e-10)
    assert f.intercept == pytest.approx(3.0, abs=1e-10)


def test_deming_matches_grid_search_oracle():
    rng = np.random.default_rng(7)
    x = np.array([1.0, 2.0, 3.5, 5.0, 7.0]) + rng.normal(0, 0.3, 5)
    y = 1.4 * x + 0.7 + rng.normal(0, 0.3, 5)
    s = sample(x, y)
    f = mj.fit_deming(s, CFG)
    # brute force over a fine (intercept, slope) grid around the answer
    b0g = np.linspace(f.intercept - 0.3, f.intercept + 0.3, 241)
    b1g = np.linspace(f.slope - 0.3, f.slope + 0.3, 241)
    best = (np.inf, None, None)
    for b0 in b0g:
        for b1 in b1g:
            val = deming_objective(s.x, s.y, b0, b1, CFG.lam)
            if val < best[0]:
                best = (val, b0, b1)
    assert f.intercept == pytest.approx(best[1], abs=1.5e-3)
    assert f.slope == pytest.approx(best[2], abs=1.5e-3)
    assert deming_objective(s.x, s.y, f.intercept, f.slope, CFG.lam) <= best[0] + 1e-12


@pytest.mark.parametrize("lam", [0.25, 1.0, 4.0])
def test_deming_minimizes_objective_any_lambda(lam):
    rng = np.random.default_rng(11)
    x = rng.uniform(1, 10, 20)
    y = 1.6 * x + 0.5 + rng.normal(0, 0.5, 20)
    s = sample(x, y)
    f = mj.fit_deming(s, DemingConfig(lam=lam))
    base = deming_objective(s.x, s.y, f.intercept, f.slope, lam)
    # profile intercept out; scan the slope finely around the answer
    for b1 in np.linspace(f.slope - 0.2, f.slope + 0.2, 4001):
        b0 = np.average(y) - b1 * np.average(x)
        assert base <= deming_objective(s.x, s.y, b0, b1, lam) + 1e-9


def test_deming_degenerate_sxy_zero():
    s = sample([1, 1, 2, 2], [1, 2, 1, 2])  # s_xy = 0, s_yy = s_xx
    with pytest.raises(mj.DegenerateDataError):
        mj.fit_deming(s)


def test_deming_symmetry_under_swap():
    s = line_sample(1.8, -0.5, noise=0.4, seed=3)
    f_xy = mj.fit_deming(s)
    f_yx = mj.fit_deming(sample(s.y, s.x))
    assert f_xy.slope == pytest.approx(1.0 / f_yx.slope, abs=1e-10)
    # fitted lines coincide: y = a + b x  <=>  x = -a/b + y/b
    assert f_yx.intercept == pytest.approx(-f_xy.intercept / f_xy.slope, abs=1e-9)


# -- weighted Deming ---------------------------------------------------------

def test_wdem_exact_identity_two_iterations():
    s = line_sample(1.0, 0.0)
    f = mj.fit_wdeming(s)
    assert f.slope == pytest.approx(1.0, abs=1e-12)
    assert f.intercept == pytest.approx(0.0, abs=1e-12)
    assert f.iterations <= 2 and f.converged


def test_wdem_beats_dem_under_proportional_error():
    # bootstrap SE of the slope under constant-CV noise
    spec = GeneratorSpec(xmin=1.0, xmax=100.0, n=60, sigmax=1.0, sigmay=1.0,
                         error_model="multiplicative", seed=21)
    s = generate(spec)
    se = {}
    for method in ("dem", "wdem"):
        ens = mj.bootstrap(s, method, CFG, B=200, seed=5)
        se[method] = ens.slopes.std(ddof=1)
    assert se["wdem"] < se["dem"]


def test_wdem_low_value_outlier_pulls_fit():
    # a point at the detection floor drags WDem much more than MDem
    rng = np.random.default_rng(3)
    x = np.linspace(1.0, 10.0, 30)
    y = x + rng.normal(0, 0.05, 30)
    x = np.append(x, 0.05)
    y = np.append(y, 1.2)
    s = sample(x, y)
    dem = mj.fit_deming(s).slope
    wdem = mj.fit_wdeming(s).slope
    mdem = mj.fit_mdeming(s).slope
    assert abs(wdem - dem) > abs(mdem - dem)


def test_wdem_requires_positive_values():
    with pytest.raises(mj.DegenerateDataError):
        mj.fit_wdeming(sample([-1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]))


# -- M-Deming ----------------------------------------------------------------

def test_mdem_exact_identity_all_weights_one():
    f = mj.fit_mdeming(line_sample(1.0, 0.0))
    assert f.slope == pytest.approx(1.0, abs=1e-12)
    assert f.intercept == pytest.approx(0.0, abs=1e-12)
    assert f.weights is not None and np.all(f.weights == 1.0)


def test_mdem_hemoglobin_anchor():
    s = mj.load_hemoglobin()
    f = mj.fit_mdeming(s)
    assert f.converged
    assert f.slope == pytest.approx(0.92743, abs=0.02)
    assert f.intercept == pytest.approx(0.10586, abs=0.02)


def test_mdem_weights_bounded_and_unit_for_small_residuals():
    s = line_sample(1.2, 0.3, n=30, noise=0.2, seed=9)
    f = mj.fit_mdeming(s)
    assert np.all((0.0 <= f.weights) & (f.weights <= 1.0))
    # recompute standardized residuals at the fit; small ones have weight 1
    from mcjoint.estimators import _deming_residuals, _robust_scale
    d, e = _deming_residuals(s.x[None], s.y[None],
                             np.array([f.intercept]), np.array([f.slope]), CFG.lam)
    sd, se_ = _robust_scale(d), _robust_scale(e)
    small = (np.abs(d[0] / sd[0]) < CFG.huber_k) & (np.abs(e[0] / se_[0]) < CFG.huber_k)
    assert np.all(f.weights[small] == 1.0)


def test_mdem_resists_gross_outlier():
    # vertical (low-leverage) gross outlier: the design case for a
    # monotone M weight; an extreme-leverage outlier needs the MM variant
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.uniform(1, 10, 40)
        y = x + rng.normal(0, 0.1, 40)
        mid = int(np.argmin(np.abs(x - x.mean())))
        y[mid] *= 10.0
        s = sample(x, y)
        dem = mj.fit_deming(s).slope
        mdem = mj.fit_mdeming(s).slope
        hits += abs(mdem - 1.0) < abs(dem - 1.0)
    assert hits >= 95


def test_mmdem_resists_leverage_outlier():
    # the redescending fit with a robust start handles what MDem cannot
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.uniform(1, 10, 40)
        y = x + rng.normal(0, 0.1, 40)
        y[0] *= 10.0
        s = sample(x, y)
        try:
            mm = mj.fit_mmdeming(s).slope
        except mj.McjointError:
            continue
        hits += abs(mm - 1.0) < abs(mj.fit_deming(s).slope - 1.0)
    assert hits >= 45


# -- MM-Deming ---------------------------------------------------------------

def test_mmdem_exact_affine():
    f = mj.fit_mmdeming(line_sample(2.0, 3.0))
    assert f.slope == pytest.approx(2.0, abs=1e-9)
    assert f.intercept == pytest.approx(3.0, abs=1e-9)
    assert f.converged


def test_mmdem_hemoglobin_in_reported_band():
    f = mj.fit_mmdeming(mj.load_hemoglobin())
    assert f.converged
    assert 0.83 <= f.slope <= 0.99


def test_mmdem_resists_clustered_contamination():
    # ~17% tight high-leverage blob: breaks the Huber fit, not the MM one
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        x = rng.uniform(1, 10, 40)
        y = x + rng.normal(0, 0.1, 40)
        k = 8
        x = np.concatenate([x, rng.normal(16.0, 0.05, k)])
        y = np.concatenate([y, rng.normal(3.0, 0.05, k)])
        s = sample(x, y)
        try:
            mm = mj.fit_mmdeming(s).slope
        except mj.McjointError:
            continue
        md = mj.fit_mdeming(s).slope
        hits += abs(mm - 1.0) < abs(md - 1.0)
    assert hits >= 80


# -- Passing-Bablok ----------------------------------------------------------

def test_paba_hemoglobin_exact():
    s = mj.load_hemoglobin()
    f = mj.fit_paba(s)
    assert round(f.slope, 5) == 0.90625
    assert round(f.intercept, 5) == 0.24844


def test_paba_exact_identity():
    f = mj.fit_paba(line_sample(1.0, 0.0))
    assert f.slope == 1.0
    assert f.intercept == pytest.approx(0.0, abs=1e-12)


def _paba_oracle(x, y):
    """Direct-from-definition shifted median, coded independently."""
    slopes = []
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = x[j] - x[i], y[j] - y[i]
            if dx == 0.0 and dy == 0.0:
                continue
            slopes.append(np.inf if (dx == 0.0 and dy > 0) else
                          -np.inf if (dx == 0.0 and dy < 0) else dy / dx)
    slopes = [v for v in slopes if v != -1.0]
    K = sum(1 for v in slopes if v < -1.0)
    S = sorted(slopes)
    N = len(S)
    if N == 0:
        return None
    if N % 2 == 1:
        rank_lo = rank_hi = (N + 1) // 2 + K
    else:
        rank_lo, rank_hi = N // 2 + K, N // 2 + K + 1
    if rank_lo < 1 or rank_hi > N:
        return None  # shifted median out of range: estimator undefined
    b = 0.5 * (S[rank_lo - 1] + S[rank_hi - 1])
    if not np.isfinite(b):
        return None
    a = float(np.median(np.asarray(y) - b * np.asarray(x)))
    return a, b


def test_paba_equals_bruteforce_oracle_small_n():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(400):
        n = int(rng.integers(3, 16))
        x = np.round(rng.uniform(0, 10, n), 1)  # one decimal: provokes ties
        y = np.round(x * rng.uniform(0.5, 2.0) + rng.normal(0, 1, n), 1)
        expected = _paba_oracle(x, y)
        if expected is None:
            with pytest.raises(mj.McjointError):
                mj.fit_paba(sample(x, y))
            continue
        f = mj.fit_paba(sample(x, y))
        assert f.intercept == expected[0] and f.slope == expected[1]
        checked += 1
    assert checked > 300


def test_paba_all_x_identical_degenerate():
    with pytest.raises(mj.DegenerateDataError):
        mj.fit_paba(sample([2, 2, 2, 2], [1, 2, 3, 4]))


def test_paba_analytic_ci_hemoglobin_upper_bound():
    ci = mj.paba_analytic_ci(mj.load_hemoglobin(), alpha=0.05)
    assert f"{ci.slope_hi:.5f}" == "1.00000"


def test_paba_analytic_ci_exact_identity_zero_width():
    s = line_sample(1.0, 0.0)
    ci = mj.paba_analytic_ci(s, alpha=0.05)
    assert ci.slope_lo == 1.0 and ci.slope_hi == 1.0


def test_paba_analytic_ci_too_small_sample():
    s = sample([1.0, 2.0, 3.0], [1.0, 2.1, 2.9])
    with pytest.raises(mj.InsufficientDataError):
        mj.paba_analytic_ci(s, alpha=0.05)


@pytest.mark.slow
def test_paba_analytic_ci_coverage():
    covered = 0
    trials = 1000
    for seed in range(trials):
        s = generate(GeneratorSpec(xmin=3, xmax=8, n=50, slope=1.1, intercept=0.0,
                                   sigmax=0.12, sigmay=0.12, seed=seed))
        ci = mj.paba_analytic_ci(s, alpha=0.05)
        covered += ci.slope_lo <= 1.1 <= ci.slope_hi
    assert 0.92 <= covered / trials <= 0.98


# -- shared properties -------------------------------------------------------

@pytest.mark.parametrize("method", ["dem", "wdem", "mdem", "mmdem", "paba"])
def test_shift_equivariance(method):
    s = line_sample(1.3, 0.5, n=25, noise=0.3, seed=11)
    c = 2.75
    f0 = fit(s, method, CFG)
    f1 = fit(sample(s.x, s.y + c), method, CFG)
    assert f1.slope == pytest.approx(f0.slope, abs=1e-8)
    assert f1.intercept == pytest.approx(f0.intercept + c, abs=1e-8)


@pytest.mark.parametrize("method", ["dem", "wdem", "mdem", "paba"])
def test_scale_equivariance(method):
    # Deming family needs the variance ratio rescaled along with y
    s = line_sample(1.3, 0.5, n=25, noise=0.3, seed=12)
    c = 1.8
    f0 = fit(s, method, CFG)
    cfg2 = DemingConfig(lam=CFG.lam / c**2)
    f1 = fit(sample(s.x, c * s.y), method, cfg2 if method != "paba" else CFG)
    assert f1.slope == pytest.approx(c * f0.slope, rel=1e-8)
    assert f1.intercept == pytest.approx(c * f0.intercept, abs=1e-7)


@pytest.mark.parametrize("method", ["wdem", "mdem", "mmdem"])
def test_iterative_fits_deterministic(method):
    s = line_sample(0.9, 0.2, n=30, noise=0.4, seed=13)
    f0, f1 = fit(s, method, CFG), fit(s, method, CFG)
    assert f0.slope == f1.slope and f0.intercept == f1.intercept


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_paba_matches_oracle_hypothesis(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 13))
    x = rng.uniform(0, 5, n)
    y = rng.uniform(0, 5, n)
    expected = _paba_oracle(x, y)
    if expected is None:
        return
    a, b = expected
    if b == 0.0:
        return
    f = mj.fit_paba(sample(x, y))
    assert f.slope == b and f.intercept == a
