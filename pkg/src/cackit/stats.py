"""Survival estimation, agreement statistics, and threshold metrics.

Everything here is pure and deterministic. Bootstrap iterations draw from
per-iteration child seeds so results do not depend on scheduling or on the
order resamples are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .agatston import CacBin, threshold_class
from .cohort import SurvivalRow
from .errors import (
    DegenerateMarginals,
    EmptyGroup,
    NegativeDuration,
    NoEvents,
    Separation,
    ZeroVariance,
)

BIN_ORDER = (CacBin.zero, CacBin.b1_100, CacBin.b101_400, CacBin.gt400)


# --- Kaplan-Meier -----------------------------------------------------------

@dataclass
class KmCurve:
    times: np.ndarray       # distinct event times, ascending
    survival: np.ndarray    # S(t) just after each event time
    n_at_risk: np.ndarray   # risk-set size at each event time
    n_events: np.ndarray    # deaths at each event time
    durations: np.ndarray   # raw inputs, kept for at-risk tables
    events: np.ndarray

    def survival_at(self, t: float) -> float:
        """Step-function lookup; 1.0 before the first event."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return 1.0 if idx < 0 else float(self.survival[idx])

    def at_risk_table(self, grid: Sequence[float]) -> list[dict]:
        """Counts at each grid time in the usual survival-plot layout.

        ``at_risk`` counts subjects still under observation at the grid
        time; ``events`` and ``censored`` are cumulative counts strictly
        before it, so the three always sum to the group size.
        """
        rows = []
        for g in grid:
            rows.append({
                "time": float(g),
                "at_risk": int(np.sum(self.durations >= g)),
                "events": int(np.sum(self.events & (self.durations < g))),
                "censored": int(np.sum(~self.events & (self.durations < g))),
            })
        return rows


def km_estimate(rows: Sequence[SurvivalRow]) -> KmCurve:
    """Product-limit estimator; censored-at-t subjects stay at risk for t."""
    if not rows:
        raise EmptyGroup("no survival rows")
    durations = np.array([r.duration_days for r in rows], dtype=np.float64)
    events = np.array([r.event for r in rows], dtype=bool)
    if np.any(durations < 0):
        raise NegativeDuration("negative duration in survival rows")

    event_times = np.unique(durations[events])
    surv = []
    at_risk = []
    deaths = []
    s = 1.0
    for t in event_times:
        n = int(np.sum(durations >= t))
        d = int(np.sum(events & (durations == t)))
        s *= 1.0 - d / n
        surv.append(s)
        at_risk.append(n)
        deaths.append(d)
    return KmCurve(
        times=event_times,
        survival=np.array(surv),
        n_at_risk=np.array(at_risk, dtype=np.int64),
        n_events=np.array(deaths, dtype=np.int64),
        durations=durations,
        events=events,
    )


# --- Cox proportional hazards -------------------------------------------------

@dataclass
class CoxFit:
    log_hr: float
    hr: float
    se: float
    wald_z: float
    p_value: float
    converged: bool
    iterations: int


def _efron_ll_grad_hess(dur: np.ndarray, event: np.ndarray, x: np.ndarray,
                        beta: float) -> tuple[float, float, float]:
    """Log partial likelihood with Efron tie handling, binary covariate."""
    eb = math.exp(beta)
    ll = 0.0
    grad = 0.0
    hess = 0.0
    for t in np.unique(dur[event]):
        risk = dur >= t
        n1r = int(np.sum(x[risk]))
        n0r = int(np.sum(risk)) - n1r
        dead = event & (dur == t)
        d = int(np.sum(dead))
        d1 = int(np.sum(x[dead]))
        d0 = d - d1

        sr = n0r + n1r * eb
        srx = n1r * eb
        sd = d0 + d1 * eb
        sdx = d1 * eb

        ll += beta * d1
        for j in range(d):
            f = j / d
            denom = sr - f * sd
            numer = srx - f * sdx
            ll -= math.log(denom)
            p = numer / denom
            grad -= p
            hess += p * (1.0 - p)   # x is 0/1, so E[x^2] = E[x]
        grad += d1
    return ll, grad, hess


_BETA_BOUND = 30.0


def cox_two_group(rows: Sequence[SurvivalRow], reference_label: str,
                  tol: float = 1e-9, max_iter: int = 50) -> CoxFit:
    """Univariate Cox fit of group membership, damped Newton from zero.

    The single covariate is 1 for the non-reference group, so ``hr`` is the
    non-reference hazard relative to the reference.
    """
    labels = sorted({r.group_label for r in rows})
    if len(labels) != 2:
        raise ValueError(f"need exactly two groups, got {labels}")
    if reference_label not in labels:
        raise ValueError(f"reference {reference_label!r} not in {labels}")

    dur = np.array([r.duration_days for r in rows], dtype=np.float64)
    event = np.array([r.event for r in rows], dtype=bool)
    x = np.array([r.group_label != reference_label for r in rows],
                 dtype=np.float64)

    if not np.any(event):
        raise NoEvents("no events in either group")
    d1_total = int(np.sum(x[event]))
    d0_total = int(np.sum(event)) - d1_total
    if d1_total == 0:
        raise Separation(-1, "non-reference group has no events")
    if d0_total == 0:
        raise Separation(+1, "reference group has no events")

    beta = 0.0
    ll, grad, hess = _efron_ll_grad_hess(dur, event, x, beta)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if hess <= 0:
            raise Separation(int(math.copysign(1, grad or 1)),
                             "non-concave partial likelihood")
        step = grad / hess
        new_beta = beta + step
        new = _efron_ll_grad_hess(dur, event, x, new_beta)
        halvings = 0
        while new[0] < ll and halvings < 40:
            step /= 2.0
            new_beta = beta + step
            new = _efron_ll_grad_hess(dur, event, x, new_beta)
            halvings += 1
        if abs(new_beta) > _BETA_BOUND:
            raise Separation(int(math.copysign(1, new_beta)),
                             "estimate diverged")
        delta = new[0] - ll
        beta, (ll, grad, hess) = new_beta, new
        if abs(delta) < tol:
            converged = True
            break

    se = 1.0 / math.sqrt(hess)
    z = beta / se
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return CoxFit(log_hr=beta, hr=math.exp(beta), se=se, wald_z=z,
                  p_value=p, converged=converged, iterations=iterations)


# --- agreement ---------------------------------------------------------------

@dataclass
class ConfusionMatrix4:
    counts: np.ndarray   # rows = reference bin, cols = predicted bin

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def percent_agreement(self) -> float:
        return float(np.trace(self.counts)) / self.total


def _as_bin_index(value) -> int:
    if isinstance(value, CacBin):
        return BIN_ORDER.index(value)
    return BIN_ORDER.index(CacBin(value))


def confusion_matrix(pairs: Sequence[tuple]) -> ConfusionMatrix4:
    """4x4 counts from (reference bin, predicted bin) pairs."""
    if not pairs:
        raise ValueError("no pairs")
    counts = np.zeros((4, 4), dtype=np.int64)
    for ref, pred in pairs:
        counts[_as_bin_index(ref), _as_bin_index(pred)] += 1
    return ConfusionMatrix4(counts)


def weighted_kappa(matrix: ConfusionMatrix4 | np.ndarray) -> float:
    """Cohen's kappa with linear disagreement weights |i-j|/(k-1)."""
    counts = matrix.counts if isinstance(matrix, ConfusionMatrix4) else \
        np.asarray(matrix, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty matrix")
    k = counts.shape[0]
    observed = counts / total
    row = observed.sum(axis=1)
    col = observed.sum(axis=0)
    expected = np.outer(row, col)
    i, j = np.indices((k, k))
    disagreement = np.abs(i - j) / (k - 1)
    expected_dis = float(np.sum(disagreement * expected))
    if expected_dis == 0.0:
        raise DegenerateMarginals(
            "expected disagreement is zero; kappa undefined")
    observed_dis = float(np.sum(disagreement * observed))
    return 1.0 - observed_dis / expected_dis


def bootstrap_ci(pairs: Sequence, statistic: Callable[[list], float],
                 iterations: int = 1000,
                 seed: int | np.random.SeedSequence = 0,
                 level: float = 0.95) -> tuple[float, float]:
    """Seeded percentile bootstrap over resampled pairs.

    Resamples on which the statistic is undefined (degenerate marginals or
    zero variance) are skipped rather than coerced to a number.
    """
    if len(pairs) < 2:
        raise ValueError("need at least two pairs")
    ss = seed if isinstance(seed, np.random.SeedSequence) else \
        np.random.SeedSequence(seed)
    children = ss.spawn(iterations)
    pairs = list(pairs)
    n = len(pairs)
    values = []
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, size=n)
        sample = [pairs[int(i)] for i in idx]
        try:
            values.append(statistic(sample))
        except (DegenerateMarginals, ZeroVariance):
            continue
    if not values:
        raise ZeroVariance("statistic undefined on every resample")
    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [alpha, 100.0 - alpha])
    return float(lo), float(hi)


def icc_agreement(pairs: Sequence[tuple[float, float]]) -> float:
    """ICC(2,1): two-way layout, single measurement, absolute agreement."""
    n = len(pairs)
    if n < 3:
        raise ValueError("need at least three pairs")
    data = np.asarray(pairs, dtype=np.float64)   # n rows x 2 raters
    k = 2
    grand = data.mean()
    row_means = data.mean(axis=1)
    col_means = data.mean(axis=0)

    msr = k * np.sum((row_means - grand) ** 2) / (n - 1)
    msc = n * np.sum((col_means - grand) ** 2) / (k - 1)
    residual = data - row_means[:, None] - col_means[None, :] + grand
    mse = np.sum(residual ** 2) / ((n - 1) * (k - 1))

    denom = msr + (k - 1) * mse + (k / n) * (msc - mse)
    if denom == 0.0:
        raise ZeroVariance("no variance in either rater")
    return float((msr - mse) / denom)


def correlations(pairs: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """(Pearson, Spearman) on raw scores; Spearman uses average-rank ties."""
    if len(pairs) < 3:
        raise ValueError("need at least three pairs")
    data = np.asarray(pairs, dtype=np.float64)
    x, y = data[:, 0], data[:, 1]
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise ZeroVariance("constant input")
    pearson = float(np.corrcoef(x, y)[0, 1])
    rx, ry = rankdata(x), rankdata(y)
    if np.std(rx) == 0.0 or np.std(ry) == 0.0:
        raise ZeroVariance("constant ranks")
    spearman = float(np.corrcoef(rx, ry)[0, 1])
    return pearson, spearman


# --- threshold metrics ----------------------------------------------------------

@dataclass
class ThresholdMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float | None
    ppv: float | None
    npv: float | None
    sensitivity: float | None
    specificity: float | None
    f1: float | None

    @classmethod
    def from_cells(cls, tp: int, fp: int, fn: int, tn: int,
                   ) -> "ThresholdMetrics":
        def ratio(num, den):
            return None if den == 0 else num / den
        return cls(
            tp=tp, fp=fp, fn=fn, tn=tn,
            accuracy=ratio(tp + tn, tp + fp + fn + tn),
            ppv=ratio(tp, tp + fp),
            npv=ratio(tn, tn + fn),
            sensitivity=ratio(tp, tp + fn),
            specificity=ratio(tn, tn + fp),
            f1=ratio(2 * tp, 2 * tp + fp + fn),
        )

    def percent_row(self) -> dict:
        """Metrics as percentages rounded to one decimal; None stays None."""
        out = {}
        for name in ("accuracy", "ppv", "npv", "sensitivity",
                     "specificity", "f1"):
            value = getattr(self, name)
            out[name] = None if value is None else round(100.0 * value, 1)
        return out


def threshold_metrics(pairs: Sequence[tuple[int, int]],
                      threshold: int) -> ThresholdMetrics:
    """Dichotomize (reference, predicted) rounded scores at ``threshold``."""
    if not pairs:
        raise ValueError("no pairs")
    tp = fp = fn = tn = 0
    for ref, pred in pairs:
        r = threshold_class(int(ref), threshold)
        p = threshold_class(int(pred), threshold)
        if r and p:
            tp += 1
        elif not r and p:
            fp += 1
        elif r and not p:
            fn += 1
        else:
            tn += 1
    return ThresholdMetrics.from_cells(tp, fp, fn, tn)


# --- Bland-Altman -----------------------------------------------------------------

@dataclass
class BlandAltman:
    mean_diff: float
    sd_diff: float
    lower: float
    upper: float
    points: list[tuple[float, float]]   # ((x+y)/2, y-x)


def bland_altman(pairs: Sequence[tuple[float, float]]) -> BlandAltman:
    if len(pairs) < 2:
        raise ValueError("need at least two pairs")
    data = np.asarray(pairs, dtype=np.float64)
    diffs = data[:, 1] - data[:, 0]
    means = data.mean(axis=1)
    mean_diff = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    return BlandAltman(
        mean_diff=mean_diff,
        sd_diff=sd,
        lower=mean_diff - 1.96 * sd,
        upper=mean_diff + 1.96 * sd,
        points=[(float(m), float(d)) for m, d in zip(means, diffs)],
    )


# --- subgroup tables ---------------------------------------------------------------

@dataclass
class SubgroupReport:
    tables: dict        # key -> subgroup value -> threshold -> ThresholdMetrics
    notes: list[str]


def subgroup_evaluate(items: Sequence[tuple], keys: Sequence[str] = (
        "manufacturer", "sex", "kvp"),
        thresholds: Sequence[int] = (1, 100, 400)) -> SubgroupReport:
    """Per-subgroup threshold metrics.

    ``items`` are (reference rounded, predicted rounded, SeriesMeta).
    KVP partitions as 120 versus everything else; rows with a missing key
    value land in "unknown" and are flagged in the coverage notes.
    """
    notes = []
    tables: dict = {}
    for key in keys:
        groups: dict[str, list[tuple[int, int]]] = {}
        for ref, pred, meta in items:
            if key == "kvp":
                kvp = getattr(meta, "kvp", None)
                if kvp is None:
                    value = "unknown"
                else:
                    value = "120" if float(kvp) == 120.0 else "non120"
            else:
                value = getattr(meta, key, None) or "unknown"
            groups.setdefault(str(value), []).append((ref, pred))

        if key == "kvp":
            for expected in ("120", "non120"):
                if expected not in groups:
                    notes.append(f"kvp: no members in partition {expected}")
        if "unknown" in groups:
            notes.append(f"{key}: {len(groups['unknown'])} items lack a value")

        tables[key] = {
            value: {t: threshold_metrics(pairs, t) for t in thresholds}
            for value, pairs in sorted(groups.items())
        }
    return SubgroupReport(tables=tables, notes=notes)
