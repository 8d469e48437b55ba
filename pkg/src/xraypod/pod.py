"""Probability-of-detection statistics: binary regression with a
log(-log(1-P)) link fitted by maximum likelihood, contrast at a target
detection probability, bootstrap/Wald intervals, and curve comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgcore import SeedSpec, derive_stream

GRADIENT_TOL = 1.0e-8
MAX_ITERATIONS = 100
SLOPE_CAP = 1.0e3
_ETA_CLIP = 30.0
_P_CLIP = 1.0e-12


@dataclass(frozen=True)
class PodSample:
    """One detection trial: scalar contrast and its binary outcome."""

    contrast: float
    success: bool

    def __post_init__(self):
        if not np.isfinite(self.contrast):
            raise ValueError("contrast must be finite")


@dataclass
class PodFit:
    """Fitted link-scale coefficients with observed-information covariance."""

    c0: float
    c1: float
    cov: np.ndarray
    n: int
    converged: bool
    separation: bool
    log_likelihood: float


@dataclass(frozen=True)
class PodInterval:
    """Contrast at a target detection probability with a confidence interval."""

    target: float
    point: float
    ci_low: float
    ci_high: float
    method: str                  # "bootstrap" | "wald"
    resamples: int = 0
    unstable: bool = False
    degenerate_fraction: float = 0.0

    def __post_init__(self):
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError("interval must bracket the point estimate")


@dataclass(frozen=True)
class CurveComparison:
    """Equivalence verdict for two fitted curves at one target probability."""

    target: float
    equivalent: bool
    point_a: float
    point_b: float
    interval_a: tuple
    interval_b: tuple
    gap: float                   # 0 when the intervals overlap

    @property
    def verdict(self) -> str:
        return "EQUIVALENT" if self.equivalent else "NOT EQUIVALENT"


def link(p):
    """Link scale of a probability: log(-log(1 - P)), for P in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("probability must lie strictly inside (0, 1)")
    out = np.log(-np.log1p(-p))
    return out if out.ndim else float(out)


def inverse_link(x):
    """Probability at a link-scale value: 1 - exp(-exp(x))."""
    x = np.asarray(x, dtype=np.float64)
    out = -np.expm1(-np.exp(x))
    return out if out.ndim else float(out)


def _as_xy(samples):
    x = np.array([s.contrast for s in samples], dtype=np.float64)
    y = np.array([1.0 if s.success else 0.0 for s in samples])
    return x, y


def _probabilities(eta):
    eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
    u = np.exp(eta)
    p = np.clip(-np.expm1(-u), _P_CLIP, 1.0 - _P_CLIP)
    return u, p


def _log_likelihood(c0, c1, x, y):
    _, p = _probabilities(c0 + c1 * x)
    return (y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum(axis=-1)


def _separated(x, y) -> bool:
    """A contrast threshold perfectly splits successes from failures."""
    succ = x[y > 0.5]
    fail = x[y < 0.5]
    if succ.size == 0 or fail.size == 0:
        return False
    return fail.max() < succ.min() or succ.max() < fail.min()


def _initial_coefficients(x, y, n_bins: int = 8):
    """Linear fit of the link of smoothed empirical proportions over
    contrast bins."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    bins = np.array_split(np.arange(xs.size), n_bins)
    centers, zs = [], []
    for idx in bins:
        if idx.size == 0:
            continue
        frac = (ys[idx].sum() + 0.5) / (idx.size + 1.0)
        centers.append(xs[idx].mean())
        zs.append(link(frac))
    centers = np.array(centers)
    zs = np.array(zs)
    if centers.size < 2 or np.ptp(centers) == 0:
        return 0.0, 1.0
    a = np.stack([np.ones_like(centers), centers], axis=1)
    coef, *_ = np.linalg.lstsq(a, zs, rcond=None)
    return float(coef[0]), float(coef[1])


def _score_and_fisher(c0, c1, x, y):
    u, p = _probabilities(c0 + c1 * x)
    dp = u * np.exp(-u)                     # dP/deta
    w = (y / p - (1.0 - y) / (1.0 - p)) * dp
    grad = np.array([w.sum(), (w * x).sum()])
    f = dp * dp / (p * (1.0 - p))
    fisher = np.array([[f.sum(), (f * x).sum()],
                       [(f * x).sum(), (f * x * x).sum()]])
    return grad, fisher


def _observed_information(c0, c1, x, y):
    u, p = _probabilities(c0 + c1 * x)
    dp = u * np.exp(-u)
    a = dp / p
    d2 = y * (a * (1.0 - u) - a * a) - (1.0 - y) * u   # d2 loglik / deta2
    info = -np.array([[d2.sum(), (d2 * x).sum()],
                      [(d2 * x).sum(), (d2 * x * x).sum()]])
    return info


def fit_pod_xy(x: np.ndarray, y: np.ndarray) -> PodFit:
    """Maximum-likelihood fit on raw arrays (contrast, 0/1 outcome)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 10:
        raise ValueError("need at least 10 samples")
    if y.sum() == 0 or y.sum() == y.size:
        raise ValueError("need at least one success and one failure")

    separation = _separated(x, y)
    c0, c1 = _initial_coefficients(x, y)
    ll = _log_likelihood(c0, c1, x, y)
    converged = False
    for _ in range(MAX_ITERATIONS):
        grad, fisher = _score_and_fisher(c0, c1, x, y)
        if np.abs(grad).max() < GRADIENT_TOL:
            converged = True
            break
        try:
            step = np.linalg.solve(fisher, grad)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(30):
            n0, n1 = c0 + scale * step[0], c1 + scale * step[1]
            new_ll = _log_likelihood(n0, n1, x, y)
            if new_ll >= ll:
                break
            scale *= 0.5
        else:
            break
        c0, c1, ll = n0, n1, new_ll
        if abs(c1) > SLOPE_CAP:
            c1 = np.sign(c1) * SLOPE_CAP
            ll = _log_likelihood(c0, c1, x, y)
            separation = True
            break

    info = _observed_information(c0, c1, x, y)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.nan)
    return PodFit(c0=float(c0), c1=float(c1), cov=cov, n=x.size,
                  converged=converged, separation=bool(separation),
                  log_likelihood=float(ll))


def fit_pod(samples) -> PodFit:
    """Maximum-likelihood fit of detection probability against contrast."""
    x, y = _as_xy(samples)
    return fit_pod_xy(x, y)


def contrast_at(fit: PodFit, target: float) -> float:
    """Contrast where the fitted curve reaches the target probability."""
    if fit.c1 <= 0:
        raise ValueError("non-positive slope: curve is non-informative or inverted")
    return (link(target) - fit.c0) / fit.c1


def pod_curve(fit: PodFit, contrasts) -> np.ndarray:
    """Fitted detection probability over a contrast grid."""
    return inverse_link(fit.c0 + fit.c1 * np.asarray(contrasts, dtype=np.float64))


def wald_interval(fit: PodFit, target: float, level: float = 0.90) -> PodInterval:
    """Delta-method interval for the contrast at the target probability."""
    from scipy import stats

    point = contrast_at(fit, target)
    # d/dc of (link(t) - c0) / c1
    grad = np.array([-1.0 / fit.c1, -(link(target) - fit.c0) / fit.c1**2])
    var = float(grad @ fit.cov @ grad)
    if not np.isfinite(var) or var < 0:
        raise ValueError("covariance is not usable for a Wald interval")
    z = stats.norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(var)
    return PodInterval(target=target, point=point, ci_low=point - half,
                       ci_high=point + half, method="wald")


# ---------------------------------------------------------------------------
# Batched fitting for the bootstrap.

def _batch_gradient(c0, c1, xb, yb):
    u, p = _probabilities(c0[:, None] + c1[:, None] * xb)
    dp = u * np.exp(-u)
    w = (yb / p - (1.0 - yb) / (1.0 - p)) * dp
    return w.sum(axis=1), (w * xb).sum(axis=1), dp, p


def _batch_fit(x, y, idx, c0_init, c1_init, n_iter: int = 60):
    """Fisher-scoring fit of every resample in idx (B, n) at once.

    Rows leave the active set as they converge, so the per-iteration cost
    shrinks; step halving recomputes only the rows that worsened.
    Returns (c0, c1, ok); ok marks resamples that reached the gradient
    tolerance without hitting the slope cap.
    """
    xb = x[idx]
    yb = y[idx]
    b = idx.shape[0]
    c0 = np.full(b, float(c0_init))
    c1 = np.full(b, float(c1_init))
    capped = np.zeros(b, dtype=bool)
    converged = np.zeros(b, dtype=bool)
    ll = _log_likelihood(c0[:, None], c1[:, None], xb, yb)

    active = np.arange(b)
    for _ in range(n_iter):
        if active.size == 0:
            break
        xa, ya = xb[active], yb[active]
        g0, g1, dp, p = _batch_gradient(c0[active], c1[active], xa, ya)
        done = np.maximum(np.abs(g0), np.abs(g1)) < GRADIENT_TOL
        converged[active[done]] = True
        if np.all(done):
            break
        keep = ~done
        active = active[keep]
        xa, ya = xa[keep], ya[keep]
        g0, g1, dp, p = g0[keep], g1[keep], dp[keep], p[keep]

        f = dp * dp / (p * (1.0 - p))
        f00 = f.sum(axis=1)
        f01 = (f * xa).sum(axis=1)
        f11 = (f * xa * xa).sum(axis=1)
        det = f00 * f11 - f01 * f01
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        s0 = np.nan_to_num((f11 * g0 - f01 * g1) / det)
        s1 = np.nan_to_num((f00 * g1 - f01 * g0) / det)

        a0, a1 = c0[active], c1[active]
        cur_ll = ll[active]
        n0, n1 = a0 + s0, a1 + s1
        new_ll = _log_likelihood(n0[:, None], n1[:, None], xa, ya)
        scale = np.ones(active.size)
        for _ in range(20):
            worse = np.flatnonzero(new_ll < cur_ll)
            if worse.size == 0:
                break
            scale[worse] *= 0.5
            n0[worse] = a0[worse] + scale[worse] * s0[worse]
            n1[worse] = a1[worse] + scale[worse] * s1[worse]
            new_ll[worse] = _log_likelihood(n0[worse][:, None], n1[worse][:, None],
                                            xb[active[worse]], yb[active[worse]])
        improved = new_ll >= cur_ll
        rows = active[improved]
        c0[rows] = n0[improved]
        c1[rows] = n1[improved]
        ll[rows] = new_ll[improved]
        over = np.abs(c1[active]) > SLOPE_CAP
        if np.any(over):
            capped[active[over]] = True
            c1[active] = np.clip(c1[active], -SLOPE_CAP, SLOPE_CAP)
            # Capped rows will not meet the gradient tolerance; drop them.
            active = active[~over]

    leftovers = np.flatnonzero(~converged & ~capped)
    if leftovers.size:
        # Accept near-stationary stragglers at a relaxed tolerance.
        g0, g1, _, _ = _batch_gradient(c0[leftovers], c1[leftovers],
                                       xb[leftovers], yb[leftovers])
        converged[leftovers] = np.maximum(np.abs(g0), np.abs(g1)) < 1e-6
    ok = converged & ~capped
    return c0, c1, ok


def bootstrap_interval(samples, target: float, resamples: int, seed: SeedSpec,
                       level: float = 0.90, retry_cap: int = 10,
                       unstable_fraction: float = 0.20) -> PodInterval:
    """Nonparametric bootstrap percentile interval for the contrast at the
    target probability.

    Degenerate resamples (one outcome class, complete separation, or a
    non-positive slope) are redrawn up to retry_cap times each and counted;
    the interval is flagged unstable when more than unstable_fraction of the
    final resamples stayed degenerate.
    """
    x, y = _as_xy(samples)
    full_fit = fit_pod_xy(x, y)
    point = contrast_at(full_fit, target)
    if resamples < 1:
        raise ValueError("need at least 1 resample")

    rng = derive_stream(seed.sub("bootstrap"))
    n = x.size
    idx = rng.integers(0, n, size=(resamples, n))

    def degenerate_rows(indices):
        ysum = y[indices].sum(axis=1)
        bad = (ysum == 0) | (ysum == indices.shape[1])
        for i in np.flatnonzero(~bad):
            if _separated(x[indices[i]], y[indices[i]]):
                bad[i] = True
        return bad

    bad = degenerate_rows(idx)
    for _ in range(retry_cap):
        if not np.any(bad):
            break
        idx[bad] = rng.integers(0, n, size=(int(bad.sum()), n))
        bad = degenerate_rows(idx)

    c0, c1, ok = _batch_fit(x, y, idx, full_fit.c0, full_fit.c1)
    usable = ok & (c1 > 0) & ~bad
    degenerate = int((~usable).sum())
    frac = degenerate / resamples
    if not np.any(usable):
        return PodInterval(target=target, point=point, ci_low=point, ci_high=point,
                           method="bootstrap", resamples=resamples, unstable=True,
                           degenerate_fraction=1.0)

    values = (link(target) - c0[usable]) / c1[usable]
    lo_q, hi_q = 100 * (0.5 - level / 2.0), 100 * (0.5 + level / 2.0)
    lo, hi = np.percentile(values, [lo_q, hi_q])
    lo = min(float(lo), point)
    hi = max(float(hi), point)
    return PodInterval(target=target, point=point, ci_low=lo, ci_high=hi,
                       method="bootstrap", resamples=resamples,
                       unstable=frac > unstable_fraction,
                       degenerate_fraction=frac)


def compare_curves(interval_a: PodInterval, interval_b: PodInterval) -> CurveComparison:
    """Equivalence verdict: the two contrast-at-target intervals overlap."""
    if interval_a.target != interval_b.target:
        raise ValueError("intervals target different probabilities")
    overlap = interval_a.ci_low <= interval_b.ci_high and interval_b.ci_low <= interval_a.ci_high
    gap = 0.0 if overlap else max(interval_b.ci_low - interval_a.ci_high,
                                  interval_a.ci_low - interval_b.ci_high)
    return CurveComparison(
        target=interval_a.target,
        equivalent=overlap,
        point_a=interval_a.point,
        point_b=interval_b.point,
        interval_a=(interval_a.ci_low, interval_a.ci_high),
        interval_b=(interval_b.ci_low, interval_b.ci_high),
        gap=float(gap),
    )


def simulate_samples(c0: float, c1: float, contrasts, seed: SeedSpec) -> list:
    """Bernoulli draws from a known curve; used by tests and benchmarks."""
    rng = derive_stream(seed.sub("pod-simulate"))
    contrasts = np.asarray(contrasts, dtype=np.float64)
    p = inverse_link(c0 + c1 * contrasts)
    draws = rng.random(contrasts.size) < p
    return [PodSample(contrast=float(c), success=bool(s))
            for c, s in zip(contrasts, draws)]
