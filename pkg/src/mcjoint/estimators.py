"""Regression estimators for method comparison.

Five line fits are provided: classical errors-in-variables (Deming) with a
known error-variance ratio, its inverse-squared-level weighted variant, two
robustified variants (Huber weights, and Tukey bisquare with a robust
covariance start), and the nonparametric pairwise-slope median estimator
with its rank-based analytic confidence interval.

The variance ratio ``lam`` follows the Linnet convention: ratio of the x
and y error variances.  All iterative fits are deterministic and converge
on the change in slope.

Internally every Deming-family fit runs through a batched engine operating
on (m, n) row-stacked samples; the public single-sample functions are the
m=1 case, and the bootstrap machinery reuses the same engine for speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .dataset import PairedSample
from .errors import DegenerateDataError, InsufficientDataError, StartFailureError

METHODS = ("dem", "wdem", "mdem", "mmdem", "paba")
METHOD_LABELS = {"dem": "Dem", "wdem": "WDem", "mdem": "MDem", "mmdem": "MMDem", "paba": "PaBa"}


@dataclass(frozen=True)
class DemingConfig:
    """Tuning constants shared by the Deming-family fits."""

    lam: float = 1.0
    tol: float = 1e-10
    max_iter: int = 100
    max_iter_mm: int = 500
    huber_k: float = 1.345
    bisquare_c: float = 4.685

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class RegressionFit:
    """A fitted line plus convergence diagnostics."""

    intercept: float
    slope: float
    method: str
    iterations: int = 1
    converged: bool = True
    weights: Optional[np.ndarray] = None

    @property
    def label(self) -> str:
        return METHOD_LABELS.get(self.method, self.method)


class BatchFit(NamedTuple):
    """Row-wise fit results from a batched engine."""

    intercept: np.ndarray
    slope: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    weights: Optional[np.ndarray]
    degenerate: np.ndarray


# ---------------------------------------------------------------------------
# batched weighted Deming closed form
# ---------------------------------------------------------------------------

def _weighted_deming(X, Y, W, lam):
    """Closed-form weighted Deming slope/intercept per row.

    Minimizes sum(w * (d^2 + lam * e^2)) at the optimal decomposition,
    lam being the x/y error-variance ratio.  Returns (b0, b1, ok); rows
    with an indeterminate slope (s_xy = 0) get ok=False.
    """
    sw = W.sum(axis=1)
    xm = (W * X).sum(axis=1) / sw
    ym = (W * Y).sum(axis=1) / sw
    cx = X - xm[:, None]
    cy = Y - ym[:, None]
    sxx = (W * cx * cx).sum(axis=1) / sw
    syy = (W * cy * cy).sum(axis=1) / sw
    sxy = (W * cx * cy).sum(axis=1) / sw
    t = lam * syy - sxx
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = (t + np.sqrt(t * t + 4.0 * lam * sxy * sxy)) / (2.0 * lam * sxy)
    ok = (sxy != 0.0) & np.isfinite(b1) & (b1 != 0.0)
    b0 = ym - b1 * xm
    return b0, b1, ok


def _deming_levels(X, Y, b0, b1, lam):
    """Optimal true-level estimates under the Deming error geometry."""
    return (X + lam * b1[:, None] * (Y - b0[:, None])) / (1.0 + lam * b1[:, None] ** 2)


def _deming_residuals(X, Y, b0, b1, lam):
    """Per-point (d, e) residuals of the optimal decomposition."""
    xhat = _deming_levels(X, Y, b0, b1, lam)
    d = X - xhat
    e = Y - (b0[:, None] + b1[:, None] * xhat)
    return d, e


def deming_objective(x, y, b0, b1, lam=1.0):
    """Sum of d_i^2 + lam * e_i^2 at the optimal decomposition.

    This is the quantity the closed form minimizes; kept public so tests
    can check the closed form against a grid search.
    """
    d, e = _deming_residuals(x[None, :], y[None, :], np.atleast_1d(float(b0)), np.atleast_1d(float(b1)), lam)
    return float((d * d + lam * e * e).sum())


def _huber_weight(Z, k):
    return k / np.maximum(np.abs(Z), k)


def _bisquare_weight(Z, c):
    u = Z / c
    w = (1.0 - u * u)
    w = np.where(np.abs(u) < 1.0, w * w, 0.0)
    return w


def _robust_scale(R):
    """1.4826 * median(|r|) per row, with mean(|r|) fallback when zero.

    A zero result means every residual in the row is exactly zero; the
    caller treats that as a perfect fit (weight one), so zeros map to inf
    to make r/scale collapse to 0.
    """
    s = 1.4826 * np.median(np.abs(R), axis=1)
    zero = s == 0.0
    if zero.any():
        s = np.where(zero, np.abs(R).mean(axis=1), s)
    return np.where(s > 0.0, s, np.inf)


def batch_dem(X, Y, cfg: DemingConfig) -> BatchFit:
    """Vectorized plain Deming over row-stacked samples."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    W = np.ones_like(X)
    b0, b1, ok = _weighted_deming(X, Y, W, cfg.lam)
    m = X.shape[0]
    return BatchFit(b0, b1, ok, np.ones(m, dtype=int), None, ~ok)


def _iterate_weighted(X, Y, cfg, weight_fn, max_iter) -> BatchFit:
    """Shared IRWLS driver: refit weighted Deming until the slope settles.

    ``weight_fn(X, Y, b0, b1)`` returns per-point weights for the active
    rows, or None rows flagged via a boolean mask (degenerate).
    """
    m, _ = X.shape
    W = np.ones_like(X)
    b0, b1, ok = _weighted_deming(X, Y, W, cfg.lam)
    iters = np.ones(m, dtype=int)
    converged = np.zeros(m, dtype=bool)
    degenerate = ~ok
    weights = np.ones_like(X)
    active = np.flatnonzero(ok)
    for _ in range(max_iter):
        if active.size == 0:
            break
        Xa, Ya = X[active], Y[active]
        Wa, bad = weight_fn(Xa, Ya, b0[active], b1[active])
        if bad.any():
            degenerate[active[bad]] = True
            keep = ~bad
            active, Xa, Ya, Wa = active[keep], Xa[keep], Ya[keep], Wa[keep]
            if active.size == 0:
                break
        nb0, nb1, ok = _weighted_deming(Xa, Ya, Wa, cfg.lam)
        if (~ok).any():
            degenerate[active[~ok]] = True
        delta = np.abs(nb1 - b1[active])
        weights[active] = Wa
        b0[active] = nb0
        b1[active] = nb1
        iters[active] += 1
        done = ok & (delta < cfg.tol)
        converged[active[done]] = True
        active = active[ok & ~done]
    degenerate |= ~np.isfinite(b1) | ~np.isfinite(b0)
    converged &= ~degenerate
    return BatchFit(b0, b1, converged, iters, weights, degenerate)


def batch_wdem(X, Y, cfg: DemingConfig) -> BatchFit:
    """Vectorized weighted Deming (inverse squared level weights)."""
    lam = cfg.lam

    def weight_fn(Xa, Ya, b0, b1):
        level = 0.5 * (Xa + (Ya - b0[:, None]) / b1[:, None])
        bad = (level <= 0.0).any(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            W = 1.0 / (level * level)
        return W, bad

    return _iterate_weighted(np.asarray(X, float), np.asarray(Y, float), cfg, weight_fn, cfg.max_iter)


def batch_mdem(X, Y, cfg: DemingConfig) -> BatchFit:
    """Vectorized Huber-weighted Deming (weights applied on both axes)."""
    lam = cfg.lam
    k = cfg.huber_k

    def weight_fn(Xa, Ya, b0, b1):
        d, e = _deming_residuals(Xa, Ya, b0, b1, lam)
        sd = _robust_scale(d)
        se = _robust_scale(e)
        W = _huber_weight(d / sd[:, None], k) * _huber_weight(e / se[:, None], k)
        return W, np.zeros(len(Xa), dtype=bool)

    return _iterate_weighted(np.asarray(X, float), np.asarray(Y, float), cfg, weight_fn, cfg.max_iter)


def batch_mmdem(X, Y, cfg: DemingConfig) -> BatchFit:
    """Bisquare Deming with robust covariance start, row by row.

    Rows whose covariance starters both fail are flagged degenerate; the
    scalar API turns that into a start-failure error.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    m, n = X.shape
    b0 = np.zeros(m)
    b1 = np.zeros(m)
    conv = np.zeros(m, dtype=bool)
    iters = np.zeros(m, dtype=int)
    weights = np.ones_like(X)
    degen = np.zeros(m, dtype=bool)
    for i in range(m):
        try:
            fit = _mmdem_single(X[i], Y[i], cfg)
        except (StartFailureError, DegenerateDataError):
            degen[i] = True
            continue
        b0[i], b1[i] = fit.intercept, fit.slope
        conv[i] = fit.converged
        iters[i] = fit.iterations
        weights[i] = fit.weights
    return BatchFit(b0, b1, conv, iters, weights, degen)


def _mm_start(x, y):
    """Robust starting line: S-covariance slope, Rocke covariance fallback."""
    from . import robustcov

    pts = np.column_stack([x, y])
    last_err = None
    for estimator in (robustcov.s_cov, robustcov.rocke_cov):
        try:
            model = estimator(pts)
        except Exception as err:  # noqa: BLE001 - any starter failure falls through
            last_err = err
            continue
        sxx = model.scatter[0, 0]
        sxy = model.scatter[0, 1]
        syy = model.scatter[1, 1]
        if sxx <= 0.0 or sxy == 0.0:
            last_err = DegenerateDataError("covariance start gives indeterminate slope")
            continue
        b1 = 0.5 * (sxy / sxx + syy / sxy)
        b0 = model.center[1] - b1 * model.center[0]
        if np.isfinite(b0) and np.isfinite(b1) and b1 != 0.0:
            return b0, b1
    raise StartFailureError(f"both covariance starters failed: {last_err}")


def _mmdem_single(x, y, cfg: DemingConfig) -> RegressionFit:
    lam = cfg.lam
    c = cfg.bisquare_c
    # (near-)collinear data defeat the covariance starters but are simply a
    # perfect fit; take the closed-form line directly in that case
    pre = batch_dem(x[None, :], y[None, :], cfg)
    if not pre.degenerate[0]:
        d, e = _deming_residuals(x[None, :], y[None, :], pre.intercept, pre.slope, lam)
        spread = float(np.std(x) + np.std(y))
        if float(np.hypot(d, e).mean()) <= 1e-12 * max(spread, 1.0):
            return RegressionFit(float(pre.intercept[0]), float(pre.slope[0]),
                                 "mmdem", 1, True, np.ones_like(x))
    b0, b1 = _mm_start(x, y)
    B0 = np.array([b0])
    B1 = np.array([b1])
    d, e = _deming_residuals(x[None, :], y[None, :], B0, B1, lam)
    sigma = float(np.hypot(d, e).mean())
    if sigma == 0.0:
        return RegressionFit(b0, b1, "mmdem", 1, True, np.ones_like(x))
    w = np.ones_like(x)
    for it in range(1, cfg.max_iter_mm + 1):
        d, e = _deming_residuals(x[None, :], y[None, :], B0, B1, lam)
        w = (_bisquare_weight(d / sigma, c) * _bisquare_weight(e / sigma, c))[0]
        if w.sum() <= 0.0 or (w > 0).sum() < 3:
            raise DegenerateDataError("all points rejected by the bisquare weights")
        nb0, nb1, ok = _weighted_deming(x[None, :], y[None, :], w[None, :], lam)
        if not ok[0]:
            raise DegenerateDataError("indeterminate slope during MM iteration")
        delta = abs(nb1[0] - B1[0])
        B0, B1 = nb0, nb1
        if delta < cfg.tol:
            return RegressionFit(float(B0[0]), float(B1[0]), "mmdem", it, True, w)
    return RegressionFit(float(B0[0]), float(B1[0]), "mmdem", cfg.max_iter_mm, False, w)


# ---------------------------------------------------------------------------
# Passing-Bablok
# ---------------------------------------------------------------------------

def _pairwise_slopes(X, Y):
    """Sorted pairwise slope matrix plus per-row valid count and offset.

    Pairs with tied x produce signed infinite slopes; identical points are
    excluded, as are slopes exactly equal to -1 (the classical convention,
    so that the estimator is invariant under swapping the axes).  K counts
    slopes below -1 and shifts the median rank.
    """
    n = X.shape[1]
    I, J = np.triu_indices(n, 1)
    dx = X[:, J] - X[:, I]
    dy = Y[:, J] - Y[:, I]
    # IEEE division encodes the conventions directly: a tied x gives
    # sign(dy)*inf (dx is +0.0), an identical point gives nan (excluded)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = dy / dx
    S[S == -1.0] = np.nan
    K = (S < -1.0).sum(axis=1)
    N = S.shape[1] - np.isnan(S).sum(axis=1)
    S.sort(axis=1)
    return S, N, K


def _rank_value(S, ranks):
    """Row-wise 1-based order statistics from a pre-sorted matrix."""
    idx = np.clip(ranks - 1, 0, S.shape[1] - 1)
    return np.take_along_axis(S, idx[:, None], axis=1)[:, 0]


def batch_paba(X, Y) -> BatchFit:
    """Vectorized shifted-median pairwise-slope fit over stacked samples."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    S, N, K = _pairwise_slopes(X, Y)
    odd = (N % 2) == 1
    lo = np.where(odd, (N + 1) // 2, N // 2) + K
    hi = np.where(odd, lo, lo + 1)
    ok = (N >= 1) & (lo >= 1) & (hi <= N)
    b1 = 0.5 * (_rank_value(S, lo) + _rank_value(S, hi))
    ok &= np.isfinite(b1) & (b1 != 0.0)
    b1 = np.where(ok, b1, np.nan)
    with np.errstate(invalid="ignore"):
        b0 = np.median(Y - b1[:, None] * X, axis=1)
    m = X.shape[0]
    return BatchFit(b0, b1, ok, np.ones(m, dtype=int), None, ~ok)


# ---------------------------------------------------------------------------
# public single-sample API
# ---------------------------------------------------------------------------

def _single(batch_fn, s: PairedSample, cfg: DemingConfig, method: str, nonconv_ok=False) -> RegressionFit:
    res = batch_fn(s.x[None, :], s.y[None, :], cfg)
    if res.degenerate[0]:
        raise DegenerateDataError(f"{method}: data admit no determinate fit")
    fit = RegressionFit(
        intercept=float(res.intercept[0]),
        slope=float(res.slope[0]),
        method=method,
        iterations=int(res.iterations[0]),
        converged=bool(res.converged[0]),
        weights=None if res.weights is None else res.weights[0].copy(),
    )
    return fit


def fit_deming(s: PairedSample, cfg: DemingConfig = DemingConfig()) -> RegressionFit:
    """Closed-form Deming fit for a known error-variance ratio."""
    if np.var(s.x) == 0.0:
        raise DegenerateDataError("dem: x has zero variance")
    res = batch_dem(s.x[None, :], s.y[None, :], cfg)
    if res.degenerate[0]:
        raise DegenerateDataError("dem: slope indeterminate (s_xy = 0)")
    return RegressionFit(float(res.intercept[0]), float(res.slope[0]), "dem", 1, True)


def fit_wdeming(s: PairedSample, cfg: DemingConfig = DemingConfig()) -> RegressionFit:
    """Weighted Deming: inverse squared estimated level as weight."""
    if (s.x <= 0).any() or (s.y <= 0).any():
        raise DegenerateDataError("wdem: requires positive measurements")
    return _single(batch_wdem, s, cfg, "wdem")


def fit_mdeming(s: PairedSample, cfg: DemingConfig = DemingConfig()) -> RegressionFit:
    """Huber-weighted Deming; the weights hit both coordinates."""
    return _single(batch_mdem, s, cfg, "mdem")


def fit_mmdeming(s: PairedSample, cfg: DemingConfig = DemingConfig()) -> RegressionFit:
    """Redescending (bisquare) Deming with robust covariance start."""
    return _mmdem_single(s.x, s.y, cfg)


def fit_paba(s: PairedSample) -> RegressionFit:
    """Passing-Bablok shifted-median fit."""
    res = batch_paba(s.x[None, :], s.y[None, :])
    if res.degenerate[0]:
        raise DegenerateDataError("paba: no determinate pairwise-slope median")
    return RegressionFit(float(res.intercept[0]), float(res.slope[0]), "paba", 1, True)


def fit(s: PairedSample, method: str, cfg: DemingConfig = DemingConfig()) -> RegressionFit:
    """Dispatch by method name ('dem', 'wdem', 'mdem', 'mmdem', 'paba')."""
    try:
        fn = _FITTERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}") from None
    return fn(s, cfg)


def batch_fit(X, Y, method: str, cfg: DemingConfig = DemingConfig()) -> BatchFit:
    """Batched dispatch over row-stacked samples (bootstrap fast path)."""
    if method == "dem":
        return batch_dem(X, Y, cfg)
    if method == "wdem":
        return batch_wdem(X, Y, cfg)
    if method == "mdem":
        return batch_mdem(X, Y, cfg)
    if method == "mmdem":
        return batch_mmdem(X, Y, cfg)
    if method == "paba":
        return batch_paba(np.asarray(X), np.asarray(Y))
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


_FITTERS = {
    "dem": lambda s, cfg: fit_deming(s, cfg),
    "wdem": lambda s, cfg: fit_wdeming(s, cfg),
    "mdem": lambda s, cfg: fit_mdeming(s, cfg),
    "mmdem": lambda s, cfg: fit_mmdeming(s, cfg),
    "paba": lambda s, cfg: fit_paba(s),
}


def paba_analytic_ci(s: PairedSample, alpha: float = 0.05):
    """Rank-based confidence intervals for the pairwise-slope fit.

    The slope bounds are order statistics of the sorted slopes at ranks
    derived from the Kendall-type variance, shifted by the same offset as
    the estimator; the intercept bounds are the residual medians at the
    opposite slope bounds.
    """
    from scipy.stats import norm

    from .resampling import IntervalPair

    fitted = fit_paba(s)
    S, N, K = _pairwise_slopes(s.x[None, :], s.y[None, :])
    S, N, K = S[0], int(N[0]), int(K[0])
    n = s.n
    w = norm.ppf(1.0 - alpha / 2.0) * np.sqrt(n * (n - 1) * (2 * n + 5) / 18.0)
    M1 = int(np.round((N - w) / 2.0))
    M2 = N - M1 + 1
    if M1 < 1 or M1 + K < 1 or M2 + K > N:
        raise InsufficientDataError(
            f"paba CI: sample too small for alpha={alpha} (N={N}, M1={M1})"
        )
    b_lo = float(S[M1 + K - 1])
    b_hi = float(S[M2 + K - 1])
    a_at_hi = float(np.median(s.y - b_hi * s.x))
    a_at_lo = float(np.median(s.y - b_lo * s.x))
    return IntervalPair(
        slope_lo=b_lo,
        slope_hi=b_hi,
        int_lo=min(a_at_hi, a_at_lo),
        int_hi=max(a_at_hi, a_at_lo),
        level=1.0 - alpha,
        kind="analytic",
    )
