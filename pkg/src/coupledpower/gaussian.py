"""Gaussian machinery: OU transition law, exponential tilting and box probabilities.

Box probabilities ``P(a <= Y <= b)`` use the separation-of-variables
transform with variable reordering, integrated by a randomised Kronecker
lattice (square roots of primes) with baker periodisation. The reported
error is three standard errors across the random shifts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import kernels
from .model import ScenarioSpec, StateVector, seasonal_demand_mean

EPS_PSD = 1e-10
EPS_DEGENERATE = 1e-12
SINGULAR_TOL = 1e-10
THIN_FRACTION = 1e-3   # tail cuts below this share of the box mass are split off
DROP_FRACTION = 1e-2   # ... and dropped outright below this share of the tolerance

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
           73, 79, 83, 89, 97, 101, 103, 107, 109, 113)


@dataclass
class GaussianLaw:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = self.mean.shape[0]
        if self.covariance.shape != (m, m):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.covariance, self.covariance.T, rtol=1e-10, atol=1e-300):
            raise ValueError("covariance must be symmetric")
        if m:
            scale = max(float(np.trace(self.covariance)), 0.0)
            if np.linalg.eigvalsh(self.covariance).min() < -EPS_PSD * max(scale, 1e-300):
                raise ValueError("covariance is not positive semidefinite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def is_degenerate(self) -> bool:
        return not np.any(self.covariance)


@dataclass
class LinearConstraints:
    """The event ``lower <= matrix @ x <= upper``.

    ``open_lower``/``open_upper`` mark strict bounds. They only matter where
    a row has no variance (or for pointwise membership), since boundaries are
    null sets otherwise.
    """

    lower: np.ndarray
    upper: np.ndarray
    matrix: np.ndarray
    open_lower: np.ndarray | None = None
    open_upper: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        self.matrix = np.asarray(self.matrix, dtype=float)
        r = self.lower.shape[0]
        if r == 0 and self.matrix.ndim != 2:
            self.matrix = self.matrix.reshape(0, 0)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != r or self.upper.shape[0] != r:
            raise ValueError("constraint dimensions do not match")
        self.open_lower = (np.zeros(r, dtype=bool) if self.open_lower is None
                           else np.asarray(self.open_lower, dtype=bool).reshape(-1))
        self.open_upper = (np.zeros(r, dtype=bool) if self.open_upper is None
                           else np.asarray(self.open_upper, dtype=bool).reshape(-1))

    @property
    def rows(self) -> int:
        return self.lower.shape[0]

    def append(self, row, lower: float, upper: float, open_lower: bool = False,
               open_upper: bool = False) -> "LinearConstraints":
        return LinearConstraints(np.append(self.lower, lower), np.append(self.upper, upper),
                                 np.vstack([self.matrix, np.asarray(row, dtype=float)]),
                                 np.append(self.open_lower, open_lower),
                                 np.append(self.open_upper, open_upper))

    def satisfied(self, y) -> np.ndarray:
        """Row-wise membership of already projected values ``y``."""
        y = np.asarray(y, dtype=float)
        above = np.where(self.open_lower, y > self.lower, y >= self.lower)
        below = np.where(self.open_upper, y < self.upper, y <= self.upper)
        return above & below

    def contains(self, x) -> bool:
        return bool(np.all(self.satisfied(self.matrix @ np.asarray(x, dtype=float))))


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    error: float
    samples_or_points: int


@dataclass
class Projection:
    """Law of ``Y = M X`` restricted to the rows that still matter."""

    law: GaussianLaw
    lower: np.ndarray
    upper: np.ndarray
    infeasible: bool
    rows: tuple[int, ...]


def conditional_law(state: StateVector, t: float, T: float, scenario: ScenarioSpec) -> GaussianLaw:
    """Law of V_T given V_t for the log-OU fuels and OU demand deviations."""
    if T < t:
        raise ValueError("maturity must not precede valuation time")
    tau = T - t
    fuels = scenario.fuels
    ma, mb = scenario.market_a, scenario.market_b
    speeds = np.array([f.mean_reversion for f in fuels] + [ma.demand_mean_reversion, mb.demand_mean_reversion])
    vols = np.array([f.volatility for f in fuels] + [ma.demand_vol, mb.demand_vol])

    decay = np.exp(-speeds * tau)
    mean = np.empty(len(fuels) + 2)
    for n, f in enumerate(fuels):
        mean[n] = state.log_fuels[n] * decay[n] + f.long_run_log_mean * (1.0 - decay[n])
    dev_a = state.demand_a - seasonal_demand_mean(ma, t)
    dev_b = state.demand_b - seasonal_demand_mean(mb, t)
    mean[-2] = seasonal_demand_mean(ma, T) + dev_a * decay[-2]
    mean[-1] = seasonal_demand_mean(mb, T) + dev_b * decay[-1]

    s = speeds[:, None] + speeds[None, :]
    cov = scenario.correlation_matrix() * np.outer(vols, vols) * (-np.expm1(-s * tau)) / s
    return GaussianLaw(mean, 0.5 * (cov + cov.T))


def exponential_tilt(law: GaussianLaw, lam, eta: float = 0.0) -> tuple[float, GaussianLaw]:
    """``E[exp(lam.X + eta) f(X)] = factor * E[f(X~)]`` with X~ the returned law."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != law.mean.shape:
        raise ValueError("tilt vector dimension does not match the law")
    s_lam = law.covariance @ lam
    log_factor = 0.5 * float(lam @ s_lam) + float(lam @ law.mean) + eta
    return math.exp(log_factor), GaussianLaw(law.mean + s_lam, law.covariance)


def project(law: GaussianLaw, constraints: LinearConstraints, eps: float = EPS_DEGENERATE) -> Projection:
    """Image law of the constrained rows, with deterministic and duplicate rows resolved."""
    M = constraints.matrix
    if M.shape[1] != law.dim:
        raise ValueError("constraint matrix does not match the law dimension")
    mean = M @ law.mean
    cov = M @ law.covariance @ M.T
    lo = constraints.lower.copy()
    hi = constraints.upper.copy()
    var = np.clip(np.diag(cov).copy(), 0.0, None)
    vmax = float(var.max()) if var.size else 0.0
    inside = constraints.satisfied(mean)

    keep = []
    for i in range(len(lo)):
        if var[i] <= eps * vmax or vmax == 0.0:
            if not inside[i]:
                return _infeasible(law)
            continue
        if lo[i] == -math.inf and hi[i] == math.inf:
            continue
        keep.append(i)

    merged: list[int] = []
    for j in keep:
        for i in merged:
            c = cov[i, j] / math.sqrt(var[i] * var[j])
            if abs(c) >= 1.0 - 1e-12:
                scale = cov[i, j] / var[i]
                a = mean[i] + (lo[j] - mean[j]) / scale
                b = mean[i] + (hi[j] - mean[j]) / scale
                if scale < 0:
                    a, b = b, a
                lo[i] = max(lo[i], a)
                hi[i] = min(hi[i], b)
                break
        else:
            merged.append(j)
    if any(lo[i] > hi[i] for i in merged):
        return _infeasible(law)

    idx = np.array(merged, dtype=int)
    sub = GaussianLaw(mean[idx], cov[np.ix_(idx, idx)]) if len(idx) else GaussianLaw(np.zeros(0), np.zeros((0, 0)))
    return Projection(sub, lo[idx], hi[idx], False, tuple(int(i) for i in idx))


def _infeasible(law: GaussianLaw) -> Projection:
    return Projection(GaussianLaw(np.zeros(0), np.zeros((0, 0))), np.zeros(0), np.zeros(0), True, ())


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _interval_prob(a: float, b: float) -> float:
    # upper-tail form keeps precision when both bounds are large and positive
    if a > 0:
        return float(ndtr(-a) - ndtr(-b))
    return float(ndtr(b) - ndtr(a))


def permuted_cholesky(cov: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float = SINGULAR_TOL):
    """Reordered lower factor of a correlation-scaled covariance.

    At every step the remaining row with the smallest conditional interval
    probability is pivoted next, conditioning on truncated means of the rows
    already chosen. Rows whose residual variance falls below ``tol`` are left
    at the end as deterministic functions of the pivoted ones.

    Returns ``(chol, lo, hi, rank, order)``.
    """
    r = cov.shape[0]
    C = cov.copy()
    lo = lo.copy()
    hi = hi.copy()
    order = np.arange(r)
    L = np.zeros((r, r))
    y = np.zeros(r)
    rank = r
    for k in range(r):
        best, best_p = -1, math.inf
        for i in range(k, r):
            v = C[i, i] - L[i, :k] @ L[i, :k]
            if v > tol:
                sd = math.sqrt(v)
                t = L[i, :k] @ y[:k]
                p = _interval_prob((lo[i] - t) / sd, (hi[i] - t) / sd)
                if p < best_p:
                    best, best_p = i, p
        if best < 0:
            rank = k
            break
        if best != k:
            C[[k, best]] = C[[best, k]]
            C[:, [k, best]] = C[:, [best, k]]
            L[[k, best]] = L[[best, k]]
            lo[[k, best]] = lo[[best, k]]
            hi[[k, best]] = hi[[best, k]]
            order[[k, best]] = order[[best, k]]
        piv = math.sqrt(C[k, k] - L[k, :k] @ L[k, :k])
        L[k, k] = piv
        for i in range(k + 1, r):
            L[i, k] = (C[i, k] - L[i, :k] @ L[k, :k]) / piv
        t = L[k, :k] @ y[:k]
        a, b = (lo[k] - t) / piv, (hi[k] - t) / piv
        den = _interval_prob(a, b)
        if den > 1e-300:
            y[k] = (_phi(a) - _phi(b)) / den
        else:
            y[k] = a if math.isfinite(a) else (b if math.isfinite(b) else 0.0)
    return L, lo, hi, rank, order


def kronecker_generator(dims: int) -> np.ndarray:
    if dims > len(_PRIMES):
        raise ValueError(f"at most {len(_PRIMES)} integration dimensions are supported")
    return np.mod(np.sqrt(np.array(_PRIMES[:dims], dtype=float)), 1.0)


def rectangle_probability(law: GaussianLaw, lower, upper, tol: float = 1e-4, shifts: int = 12,
                          max_points: int = 1 << 17, seed=0, min_points: int = 1024) -> ProbabilityEstimate:
    """``P(lower <= Y <= upper)`` for ``Y ~ law`` by randomised lattice quadrature.

    Parameters
    ----------
    law : GaussianLaw
        Law of Y; singular covariances are allowed.
    lower, upper : array_like
        Box bounds, infinite entries allowed.
    tol : float
        Target for the reported error (three standard errors over shifts).
    shifts : int
        Number of independent random lattice shifts.
    max_points : int
        Cap on lattice points per shift.
    seed
        Anything accepted by :func:`numpy.random.default_rng`.
    """
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    r = law.dim
    if lower.shape != (r,) or upper.shape != (r,):
        raise ValueError("bounds do not match the law dimension")
    if r == 0:
        return ProbabilityEstimate(1.0, 0.0, 0)
    if np.any(lower > upper):
        return ProbabilityEstimate(0.0, 0.0, 0)

    a = lower - law.mean
    b = upper - law.mean
    sd = np.sqrt(np.clip(np.diag(law.covariance), 0.0, None))
    det = sd == 0.0
    if np.any(det):
        if np.any((a[det] > 0.0) | (b[det] < 0.0)):
            return ProbabilityEstimate(0.0, 0.0, 0)
        live = ~det
        if not live.any():
            return ProbabilityEstimate(1.0, 0.0, 0)
        law = GaussianLaw(law.mean[live], law.covariance[np.ix_(live, live)])
        return rectangle_probability(law, lower[live], upper[live], tol, shifts, max_points, seed, min_points)

    free = np.isneginf(lower) & np.isposinf(upper)
    if np.any(free):
        keep = ~free
        law = GaussianLaw(law.mean[keep], law.covariance[np.ix_(keep, keep)])
        return rectangle_probability(law, lower[keep], upper[keep], tol, shifts, max_points, seed, min_points)

    a = a / sd
    b = b / sd
    corr = law.covariance / np.outer(sd, sd)
    if r == 1:
        return ProbabilityEstimate(_interval_prob(a[0], b[0]), 1e-15, 1)

    split = _thin_side(a, b, tol)
    if split is not None:
        return _split_thin_side(law, lower, upper, *split, tol, shifts, max_points, seed, min_points)

    chol, lo, hi, rank, _ = permuted_cholesky(corr, a, b)
    dims = rank - 1 if rank == r else rank
    if dims == 0:
        p = _interval_prob(lo[0] / chol[0, 0], hi[0] / chol[0, 0])
        return ProbabilityEstimate(p, 1e-15, 1)

    rng = np.random.default_rng(seed)
    gen = kronecker_generator(dims)
    shift_arr = np.ascontiguousarray(rng.random((shifts, dims)))
    chol = np.ascontiguousarray(chol)
    lo = np.ascontiguousarray(lo)
    hi = np.ascontiguousarray(hi)

    sums = np.zeros(shifts)
    n_done = 0
    count = min_points
    while True:
        sums += kernels.genz_sums(chol, lo, hi, int(rank), gen, shift_arr, n_done + 1, count)
        n_done += count
        means = sums / n_done
        value = float(means.mean())
        err = 3.0 * float(means.std(ddof=1)) / math.sqrt(shifts)
        if err <= tol or n_done >= max_points:
            break
        count = min(n_done, max_points - n_done)
    return ProbabilityEstimate(min(max(value, 0.0), 1.0), err, n_done * shifts)


def _thin_side(a: np.ndarray, b: np.ndarray, tol: float):
    """A bound cutting off a sliver of mass compared with the box itself.

    Such a cut only bites where earlier pivots sit deep in their tails, a
    layer the lattice rarely visits, so it is split off and integrated
    separately. Returns ``(row, side, mass)`` or None.
    """
    q_lo = ndtr(a)
    q_hi = ndtr(-b)
    scale = float(np.min(ndtr(b) - ndtr(a)))
    best = None
    for i in range(len(a)):
        for side, q in (("lower", q_lo[i]), ("upper", q_hi[i])):
            finite = math.isfinite(a[i] if side == "lower" else b[i])
            if finite and q <= THIN_FRACTION * scale and (best is None or q > best[2]):
                best = (i, side, float(q))
    return best


def _split_thin_side(law, lower, upper, i, side, q, tol, shifts, max_points, seed, min_points):
    """``P(B) = P(B without the cut) - P(B without the cut, cut violated)``."""
    wide_lo, wide_hi = lower.copy(), upper.copy()
    if side == "lower":
        wide_lo[i] = -math.inf
    else:
        wide_hi[i] = math.inf
    if q <= DROP_FRACTION * tol:
        est = rectangle_probability(law, wide_lo, wide_hi, tol, shifts, max_points, seed, min_points)
        return ProbabilityEstimate(est.value, est.error + q, est.samples_or_points)
    s_main, s_tail = np.random.default_rng(seed).integers(0, 2 ** 63, size=2)
    tail_lo, tail_hi = wide_lo.copy(), wide_hi.copy()
    if side == "lower":
        tail_hi[i] = lower[i]
    else:
        tail_lo[i] = upper[i]
    main = rectangle_probability(law, wide_lo, wide_hi, tol, shifts, max_points, s_main, min_points)
    tail = rectangle_probability(law, tail_lo, tail_hi, tol, shifts, max_points, s_tail, min_points)
    value = min(max(main.value - tail.value, 0.0), 1.0)
    return ProbabilityEstimate(value, main.error + tail.error, main.samples_or_points + tail.samples_or_points)


def factor_covariance(cov: np.ndarray) -> np.ndarray:
    """Square-root factor ``F`` with ``F @ F.T == cov`` for any PSD matrix."""
    w, v = np.linalg.eigh(cov)
    scale = max(float(np.abs(w).max()) if w.size else 0.0, 1e-300)
    if w.size and w.min() < -EPS_PSD * scale * len(w):
        raise ValueError("covariance is not positive semidefinite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def mc_rectangle_probability(law: GaussianLaw, lower, upper, n: int, seed=0,
                             chunk: int = 1 << 18) -> ProbabilityEstimate:
    """Fraction of exact Gaussian draws inside the box, with binomial standard error."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    F = factor_covariance(law.covariance)
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x = law.mean + rng.standard_normal((m, law.dim)) @ F.T
        hits += int(np.count_nonzero(np.all((x >= lower) & (x <= upper), axis=1)))
    p = hits / n
    return ProbabilityEstimate(p, math.sqrt(p * (1.0 - p) / n), n)
