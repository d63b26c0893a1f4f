"""Ensemble statistics: selected and weighted averages, two-time correlations, bootstrap errors.

Every per-bin estimator in this module is a weighted mean of the form
``sum_i w_i X_i(t) / sum_i w_i`` with one weight per run:

=====================  =====================  ==========================
estimator              per-run values X_i(t)  per-run weight w_i
=====================  =====================  ==========================
pre-selected           V_i(t)                 1 if heralded in the filter
post-selected          V_i(t)                 n_i (final outcome +z)
weighted past          V_i(t)                 rho_i00(T)
hybrid, row t'         V_i(t)                 rho_i00(t')
state-state, row t'    2 rho_i00(t) - 1       rho_i00(t')
signal-only, row t'    V_i(t)                 V_i(t') + 1
=====================  =====================  ==========================

so a single :class:`RatioEstimator` carries the point value and its
trajectory-level bootstrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import PLUS, HermitianOperator2, PhysicalParams, _outcome_sign
from .dynamics import FORWARD, propagate
from .errors import (
    DegenerateConditioningError,
    EmptySubsetError,
    InsufficientDataError,
    ParameterDomainError,
)
from .trajectory import Ensemble

__all__ = [
    "TimeSeriesStat",
    "CorrelationGrid",
    "RatioEstimator",
    "bootstrap_counts",
    "bootstrap_ci",
    "corrected_z",
    "preselected_estimator",
    "postselected_estimator",
    "weighted_estimator",
    "hybrid_row_estimator",
    "state_state_row_estimator",
    "signal_row_estimator",
    "preselected_average",
    "postselected_average",
    "weighted_average",
    "mean_sigma_z",
    "hybrid_correlation_grid",
    "state_state_grid",
    "signal_correlation_grid",
    "signal_correlation_estimator",
    "state_state_correlation",
    "kink_statistic",
    "kink_table",
    "two_time_signal_correlation",
    "regression_correlation_oracle",
    "reliability_diagram",
]

DEFAULT_B = 200
DEFAULT_LEVEL = 0.95
_BOOT_TAG = 0xB0075
_CHUNK = 25


def corrected_z(n_comparisons: int, base_sigma: float = 4.0) -> float:
    """Bonferroni-corrected two-sided threshold, in standard errors.

    The family of ``n_comparisons`` tests shares the false-alarm budget of a
    single two-sided ``base_sigma`` test.
    """
    if n_comparisons < 1:
        raise ValueError("n_comparisons must be >= 1")
    return float(stats.norm.isf(stats.norm.sf(base_sigma) / n_comparisons))


def bootstrap_counts(n: int, B: int, seed) -> "iter[np.ndarray]":
    """Yield chunks of multinomial resampling counts, shape (chunk, n), B rows in total."""
    rng = np.random.default_rng(seed)
    done = 0
    while done < B:
        b = min(_CHUNK, B - done)
        idx = rng.integers(0, n, size=(b, n))
        counts = np.empty((b, n))
        for r in range(b):
            counts[r] = np.bincount(idx[r], minlength=n)
        done += b
        yield counts


def _ensemble_seed(ensemble: Ensemble):
    return [int(ensemble.config.seed), _BOOT_TAG]


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # the single code path for every weighted mean, so that a grid column and
    # the matching one-time estimator agree to the last bit
    weights = np.ascontiguousarray(weights, dtype=float)
    return (weights @ values) / weights.sum()


class RatioEstimator:
    """``sum_i w_i X_i / sum_i w_i`` over runs, for every column of ``X``."""

    def __init__(self, values: np.ndarray, weights: np.ndarray):
        self.values = np.asarray(values, dtype=float)
        self.weights = np.ascontiguousarray(weights, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.weights.shape[0]:
            raise ValueError("values and weights disagree on the number of runs")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def weight_sum(self) -> float:
        return float(self.weights.sum())

    @property
    def effective_count(self) -> float:
        """Kish effective sample size (sum w)^2 / sum w^2."""
        w2 = float(np.dot(self.weights, self.weights))
        return self.weight_sum**2 / w2 if w2 > 0 else 0.0

    def value(self) -> np.ndarray:
        if self.weight_sum == 0:
            raise DegenerateConditioningError("total weight is zero")
        return _weighted_mean(self.values, self.weights)

    def replicates(self, B: int = DEFAULT_B, seed=0) -> np.ndarray:
        """Bootstrap replicates, shape (B, columns), resampling whole runs."""
        if self.n < 2:
            raise InsufficientDataError(f"bootstrap needs at least 2 runs, got {self.n}")
        if B < 100:
            raise ParameterDomainError(f"B must be >= 100, got {B}")
        out = []
        for counts in bootstrap_counts(self.n, B, seed):
            cw = counts * self.weights
            den = cw.sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                out.append((cw @ self.values) / den[:, None])
        reps = np.vstack(out)
        # a constant column has a constant ratio; keep it free of rounding noise
        const = np.ptp(self.values, axis=0) == 0
        if const.any():
            reps[:, const] = np.where(np.isfinite(reps[:, const]), self.values[0, const], reps[:, const])
        return reps


def _summarize(value, reps, level):
    # spread about the point estimate: shift-invariant, and exactly 0 for constant replicates
    se = np.nanstd(reps - value, axis=0, ddof=1)
    alpha = 1 - level
    lo = np.nanquantile(reps, alpha / 2, axis=0)
    hi = np.nanquantile(reps, 1 - alpha / 2, axis=0)
    # percentile intervals of skewed replicates can miss the point estimate
    return se, np.minimum(lo, value), np.maximum(hi, value)


def bootstrap_ci(values, B: int = DEFAULT_B, level: float = DEFAULT_LEVEL, seed=0, weights=None):
    """Percentile bootstrap of the (weighted) mean of per-run values.

    Parameters
    ----------
    values : array, shape (n,) or (n, m)
        One row per run; rows are resampled as units.
    weights : array, shape (n,), optional

    Returns
    -------
    se, lo, hi
        Scalars for 1-d input, arrays of length m otherwise.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise InsufficientDataError(f"bootstrap needs at least 2 runs, got {n}")
    est = RatioEstimator(values, np.ones(n) if weights is None else weights)
    value = est.value()
    se, lo, hi = _summarize(value, est.replicates(B, seed), level)
    if values.ndim == 1:
        return float(se[0]), float(lo[0]), float(hi[0])
    return se, lo, hi


@dataclass(frozen=True)
class TimeSeriesStat:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    count: np.ndarray
    n_selected: int

    def __len__(self):
        return len(self.mean)

    def reversed(self) -> "TimeSeriesStat":
        """Values re-indexed by T - t on the same time grid (bin m -> bin M - m).

        Entry 0 has no partner and is NaN.
        """
        def rev(a):
            out = np.full_like(a, np.nan, dtype=float)
            out[1:] = a[:0:-1]
            return out

        return TimeSeriesStat(self.times, rev(self.mean), rev(self.se), rev(self.ci_lo), rev(self.ci_hi), rev(self.count), self.n_selected)


def _stat(ensemble: Ensemble, est: RatioEstimator, B, level, seed, n_selected) -> TimeSeriesStat:
    value = est.value()
    seed = _ensemble_seed(ensemble) if seed is None else seed
    se, lo, hi = _summarize(value, est.replicates(B, seed), level)
    count = np.full(value.shape, est.effective_count)
    return TimeSeriesStat(ensemble.times[: value.shape[0]], value, se, lo, hi, count, n_selected)


def preselected_estimator(ensemble: Ensemble, herald=PLUS) -> RatioEstimator:
    sign = _outcome_sign(herald)
    sel = (ensemble.herald == sign).astype(float)
    if not sel.any():
        raise EmptySubsetError(f"no runs heralded in {'+z' if sign == PLUS else '-z'}", 0)
    return RatioEstimator(ensemble.voltages, sel)


def postselected_estimator(ensemble: Ensemble, outcome=PLUS) -> RatioEstimator:
    sign = _outcome_sign(outcome)
    sel = (ensemble.final_outcome == (1 if sign == PLUS else 0)).astype(float)
    if not sel.any():
        raise EmptySubsetError(f"no runs post-selected in {'+z' if sign == PLUS else '-z'}", 0)
    return RatioEstimator(ensemble.voltages, sel)


def weighted_estimator(ensemble: Ensemble) -> RatioEstimator:
    return RatioEstimator(ensemble.voltages, ensemble.rho00[:, -1])


def hybrid_row_estimator(ensemble: Ensemble, tprime_index: int) -> RatioEstimator:
    return RatioEstimator(ensemble.voltages, ensemble.rho00[:, tprime_index])


def state_state_row_estimator(ensemble: Ensemble, tprime_index: int) -> RatioEstimator:
    return RatioEstimator(2 * ensemble.rho00[:, : ensemble.n_bins] - 1, ensemble.rho00[:, tprime_index])


def signal_row_estimator(ensemble: Ensemble, tprime_index: int) -> RatioEstimator:
    """Signal-only estimator of row t'; meaningful for t < t' only."""
    if not 0 <= tprime_index < ensemble.n_bins:
        raise ParameterDomainError("t' must index a recorded voltage bin")
    return RatioEstimator(ensemble.voltages, ensemble.voltages[:, tprime_index] + 1.0)


def preselected_average(ensemble: Ensemble, herald=PLUS, B: int = DEFAULT_B, level: float = DEFAULT_LEVEL, seed=None) -> TimeSeriesStat:
    """Per-bin mean voltage over runs heralded in ``herald``."""
    est = preselected_estimator(ensemble, herald)
    return _stat(ensemble, est, B, level, seed, int(est.weights.sum()))


def postselected_average(ensemble: Ensemble, outcome=PLUS, B: int = DEFAULT_B, level: float = DEFAULT_LEVEL, seed=None) -> TimeSeriesStat:
    """Per-bin mean voltage over runs whose final projective outcome is ``outcome``."""
    est = postselected_estimator(ensemble, outcome)
    return _stat(ensemble, est, B, level, seed, int(est.weights.sum()))


def weighted_average(ensemble: Ensemble, B: int = DEFAULT_B, level: float = DEFAULT_LEVEL, seed=None) -> TimeSeriesStat:
    """All voltages weighted by the final +z probability rho00(T) of their run."""
    est = weighted_estimator(ensemble)
    if not est.weight_sum > 0:
        raise DegenerateConditioningError("all final +z probabilities are zero")
    return _stat(ensemble, est, B, level, seed, len(ensemble))


def mean_sigma_z(ensemble: Ensemble, herald=None, B: int = DEFAULT_B, level: float = DEFAULT_LEVEL, seed=None) -> TimeSeriesStat:
    """Ensemble mean of z_i(t) = Tr(rho_i(t) sigma_z) over the M voltage bins."""
    w = np.ones(len(ensemble)) if herald is None else (ensemble.herald == _outcome_sign(herald)).astype(float)
    est = RatioEstimator(2 * ensemble.rho00[:, : ensemble.n_bins] - 1, w)
    return _stat(ensemble, est, B, level, seed, int(w.sum()))


@dataclass(frozen=True)
class CorrelationGrid:
    """Two-time estimator over bin pairs: ``value[t_index, tprime_index]``.

    ``se`` is the linearized (delta-method) standard error of each cell.
    """

    t: np.ndarray
    tprime: np.ndarray
    value: np.ndarray
    weight_sum: np.ndarray
    se: np.ndarray
    estimator: str

    def row(self, tprime_index: int) -> np.ndarray:
        """Side panel: the estimator as a function of t at fixed t'."""
        return self.value[:, tprime_index]


def _weighted_grid(X: np.ndarray, W: np.ndarray):
    wsum = np.array([np.ascontiguousarray(W[:, j]).sum() for j in range(W.shape[1])])
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.column_stack([_weighted_mean(X, W[:, j]) for j in range(W.shape[1])])
        W2 = W * W
        var = ((X * X).T @ W2 - 2 * value * (X.T @ W2) + value**2 * W2.sum(axis=0)) / wsum**2
    n = W.shape[0]
    value = np.where(np.abs(wsum) > 1e-9 * n, value, np.nan)
    return value, wsum, np.sqrt(np.clip(var, 0, None))


def hybrid_correlation_grid(ensemble: Ensemble) -> CorrelationGrid:
    """rho00(t')-weighted mean of V(t) for all t bins and all t' in 0..M."""
    value, wsum, se = _weighted_grid(ensemble.voltages, ensemble.rho00)
    return CorrelationGrid(ensemble.times[:-1], ensemble.times, value, wsum, se, "hybrid")


def state_state_grid(ensemble: Ensemble) -> CorrelationGrid:
    m = ensemble.n_bins
    value, wsum, se = _weighted_grid(2 * ensemble.rho00[:, :m] - 1, ensemble.rho00)
    return CorrelationGrid(ensemble.times[:-1], ensemble.times, value, wsum, se, "state-state")


def signal_correlation_grid(ensemble: Ensemble) -> CorrelationGrid:
    """Signal-only estimator for all bin pairs; only the t < t' triangle is meaningful."""
    value, wsum, se = _weighted_grid(ensemble.voltages, ensemble.voltages + 1.0)
    return CorrelationGrid(ensemble.times[:-1], ensemble.times[:-1], value, wsum, se, "signal-only")


def signal_correlation_estimator(ensemble: Ensemble, t: int, t_prime: int) -> float:
    """(mean[V(t)V(t')] + mean[V(t)]) / (mean[V(t')] + 1) from the records alone; bins t < t'."""
    if not t < t_prime:
        raise ParameterDomainError("signal-only estimator requires t < t'")
    v = ensemble.voltages
    den = v[:, t_prime].mean() + 1
    if abs(den) <= 1e-6:
        raise DegenerateConditioningError(f"mean V(t') + 1 = {den:.3g} is too close to zero")
    return float(((v[:, t] * v[:, t_prime]).mean() + v[:, t].mean()) / den)


def state_state_correlation(ensemble: Ensemble, t: int, t_prime: int) -> float:
    """sum_i rho00_i(t') (2 rho00_i(t) - 1) / sum_i rho00_i(t'), for bins t >= t'."""
    if t < t_prime:
        raise ParameterDomainError("state-state estimator is defined for t >= t'")
    w = ensemble.rho00[:, t_prime]
    return float(w @ (2 * ensemble.rho00[:, t] - 1) / w.sum())


def kink_statistic(ensemble: Ensemble, tprime_index: int, B: int = DEFAULT_B, seed=None):
    """Second difference g(t'-1) - 2 g(t') + g(t'+1) of the hybrid row at t', with bootstrap SE."""
    j = tprime_index
    if not 1 <= j <= ensemble.n_bins - 2:
        raise ParameterDomainError("t' needs a bin on each side")
    est = RatioEstimator(ensemble.voltages[:, j - 1 : j + 2], ensemble.rho00[:, j])
    coeff = np.array([1.0, -2.0, 1.0])
    seed = _ensemble_seed(ensemble) if seed is None else seed
    reps = est.replicates(B, seed) @ coeff
    return float(est.value() @ coeff), float(np.std(reps, ddof=1))


def kink_table(ensemble: Ensemble, B: int = DEFAULT_B, seed=None):
    """Kink statistic and bootstrap SE for every interior row t' = 1..M-2.

    One set of resampling counts is shared by all rows.
    """
    m = ensemble.n_bins
    rows = np.arange(1, m - 1)
    if len(rows) == 0:
        raise ParameterDomainError("need at least 3 bins for a kink statistic")
    V, R = ensemble.voltages, ensemble.rho00
    coeff = np.array([1.0, -2.0, 1.0])
    value = np.array([RatioEstimator(V[:, j - 1 : j + 2], R[:, j]).value() @ coeff for j in rows])
    seed = _ensemble_seed(ensemble) if seed is None else seed
    reps = []
    for counts in bootstrap_counts(len(ensemble), B, seed):
        chunk = np.empty((counts.shape[0], len(rows)))
        for c, j in enumerate(rows):
            cw = counts * R[:, j]
            chunk[:, c] = ((cw @ V[:, j - 1 : j + 2]) / cw.sum(axis=1)[:, None]) @ coeff
        reps.append(chunk)
    se = np.std(np.vstack(reps), axis=0, ddof=1)
    return rows, value, se


def two_time_signal_correlation(ensemble: Ensemble, t1: int, t2: int, B: int = DEFAULT_B, seed=None):
    """Monte Carlo mean of V(t1) V(t2) over runs, with bootstrap SE."""
    prod = ensemble.voltages[:, t1] * ensemble.voltages[:, t2]
    seed = _ensemble_seed(ensemble) if seed is None else seed
    se, _, _ = bootstrap_ci(prod, B=B, seed=seed)
    return float(prod.mean()), se


def regression_correlation_oracle(t1: float, t2: float, params: PhysicalParams, initial_state: HermitianOperator2) -> float:
    """Deterministic mean of V(t1) V(t2) from the quantum regression theorem.

    Tr(sigma_z e^{L (t2 - t1)}[(sigma_z rho(t1) + rho(t1) sigma_z)/2]) with
    rho(t1) evolved from ``initial_state``.  Equal times mean the same bin,
    which adds the shot-noise variance a^2.
    """
    if t2 < t1:
        raise ParameterDomainError("regression oracle requires t2 >= t1")
    rho = propagate(initial_state, params, t1, FORWARD)
    sym = HermitianOperator2(rho.m00, -rho.m11, 0.0, 0.0)
    out = propagate(sym, params, t2 - t1, FORWARD)
    value = out.m00 - out.m11
    if t2 == t1:
        value += params.variance
    return float(value)


def reliability_diagram(ensemble: Ensemble, n_bins: int = 20, level: float = 0.99):
    """Calibration of final-outcome frequencies against rho00(T).

    Returns one dict per non-empty probability bin with the mean predicted
    probability, the empirical +z frequency, its Wilson interval and whether
    the interval contains the prediction.
    """
    p = ensemble.rho00[:, -1]
    hit = ensemble.final_outcome == 1
    edges = np.linspace(0, 1, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_bins - 1)
    rows = []
    for b in range(n_bins):
        sel = idx == b
        n = int(sel.sum())
        if n == 0:
            continue
        k = int(hit[sel].sum())
        ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
        pred = float(p[sel].mean())
        rows.append(
            {
                "lo": float(edges[b]),
                "hi": float(edges[b + 1]),
                "count": n,
                "successes": k,
                "predicted": pred,
                "frequency": k / n,
                "wilson_lo": float(ci.low),
                "wilson_hi": float(ci.high),
                "passed": bool(ci.low <= pred <= ci.high),
            }
        )
    return rows
