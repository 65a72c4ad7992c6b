"""Compute-budget allocation and training-strategy analysis.

Given a loss law L(N, D) and a fixed budget C = 6*N*D, the optimal
allocation minimizes predicted loss along the budget curve D = C/(6N).
The search runs on ln N with golden sections, so the answer is exact up to
the stated tolerance whenever the loss is unimodal along the curve (true
for the chinchilla and suboptimal families).

``alpha_stability`` reproduces the exponent-stability analysis: records are
bucketed by over-training ratio, each bucket gets a closed-form power-law
fit of loss against compute, and the per-bucket exponents above the
stability threshold are summarized with a moment-based (Jarque-Bera style)
normality check.  The moment test substitutes for Shapiro-Wilk and is named
in the report so nobody mistakes one for the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    BinTooSmall,
    KnobMissing,
    NoInteriorMinimum,
    NoRunReachesTarget,
    UnknownFamily,
)
from .fit import FitConfig, fit_power_loglog
from .laws import ChinchillaParams, LawParams, SubOptimalParams, loss_at, params_to_dict
from .runs import RunSeries, gaussian_smooth

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0

DEFAULT_N_BRACKET = (1e6, 1e13)
DEFAULT_OTR_THRESHOLD = 50.0


# ---------------------------------------------------------------------------
# Optimal allocation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AllocationPlan:
    budget: float
    n_star: float
    d_star: float
    otr_star: float
    predicted_loss: float
    law: LawParams

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "n_star": self.n_star,
            "d_star": self.d_star,
            "otr_star": self.otr_star,
            "predicted_loss": self.predicted_loss,
            "law": params_to_dict(self.law),
        }


def _golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Minimum of a unimodal f on [lo, hi] to within tol."""
    h = hi - lo
    if h <= tol:
        return 0.5 * (lo + hi)
    n_steps = int(math.ceil(math.log(tol / h) / math.log(_INV_PHI)))
    c = lo + _INV_PHI2 * h
    d = lo + _INV_PHI * h
    yc, yd = f(c), f(d)
    for _ in range(n_steps):
        if yc < yd:
            hi, d, yd = d, c, yc
            h *= _INV_PHI
            c = lo + _INV_PHI2 * h
            yc = f(c)
        else:
            lo, c, yc = c, d, yd
            h *= _INV_PHI
            d = lo + _INV_PHI * h
            yd = f(d)
    return 0.5 * (lo + hi)


def optimal_allocation(
    law: LawParams,
    budget: float,
    n_bracket: tuple[float, float] = DEFAULT_N_BRACKET,
    tol: float = 1e-6,
    scan_points: int = 257,
) -> AllocationPlan:
    """Best (N, D) split of a FLOP budget under a chinchilla-family law.

    A coarse log-spaced scan locates the global basin first (the repetition
    factors of the suboptimal family can carve a second local dip into the
    budget curve, which a bare golden section may fall into), then golden
    sections refine inside the bracketing scan neighbors.  Raises
    NoInteriorMinimum when the scan minimum sits on the bracket edge, i.e.
    the loss is monotone across the bracket, instead of returning a
    boundary guess.
    """
    if not isinstance(law, (ChinchillaParams, SubOptimalParams)):
        raise UnknownFamily(
            f"allocation needs a chinchilla or suboptimal law, got {type(law).__name__}"
        )
    if not budget > 0:
        raise ValueError("budget must be > 0")
    lo, hi = n_bracket
    if not 0 < lo < hi:
        raise ValueError("n_bracket must satisfy 0 < lo < hi")
    if scan_points < 3:
        raise ValueError("scan_points must be >= 3")

    ln_scan = np.linspace(math.log(lo), math.log(hi), scan_points)
    n_scan = np.exp(ln_scan)
    scan_losses = np.asarray(loss_at(law, n_scan, budget / (6.0 * n_scan)))
    j = int(np.argmin(scan_losses))
    if j == 0 or j == scan_points - 1:
        raise NoInteriorMinimum(
            f"loss is monotone over N in [{lo:g}, {hi:g}] at budget {budget:g}"
        )

    def loss_of_ln_n(ln_n: float) -> float:
        n = math.exp(ln_n)
        return float(loss_at(law, n, budget / (6.0 * n)))

    ln_star = _golden_section(loss_of_ln_n, ln_scan[j - 1], ln_scan[j + 1], tol)
    n_star = math.exp(ln_star)
    d_star = budget / (6.0 * n_star)
    return AllocationPlan(
        budget=float(budget),
        n_star=n_star,
        d_star=d_star,
        otr_star=d_star / n_star,
        predicted_loss=loss_of_ln_n(ln_star),
        law=law,
    )


@dataclass(frozen=True)
class SweepPoint:
    otr: float
    n: float
    d: float
    predicted_loss: float


def otr_sweep(law: LawParams, budget: float, otr_values) -> list[SweepPoint]:
    """Loss along the fixed-budget curve at chosen over-training ratios.

    For each ratio r the unique allocation on the budget is
    n = sqrt(budget / (6 r)), d = r * n.
    """
    if not budget > 0:
        raise ValueError("budget must be > 0")
    points = []
    for r in otr_values:
        r = float(r)
        if not r > 0:
            raise ValueError("otr values must be > 0")
        n = math.sqrt(budget / (6.0 * r))
        d = r * n
        points.append(
            SweepPoint(otr=r, n=n, d=d, predicted_loss=float(loss_at(law, n, d)))
        )
    return points


# ---------------------------------------------------------------------------
# Exponent stability across OTR bins
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinFit:
    otr_range: tuple[float, float]
    alpha: float
    lam: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "otr_range": list(self.otr_range),
            "alpha": self.alpha,
            "lambda": self.lam,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class ExponentStabilityReport:
    bins: tuple[BinFit, ...]
    mean_alpha: float
    std_alpha: float
    normality_stat: float
    normality_pass: bool
    normality_method: str
    otr_threshold: float
    n_stable_bins: int

    def to_dict(self) -> dict:
        return {
            "bins": [b.to_dict() for b in self.bins],
            "mean_alpha": self.mean_alpha,
            "std_alpha": self.std_alpha,
            "normality_stat": (
                None if math.isnan(self.normality_stat) else self.normality_stat
            ),
            "normality_pass": self.normality_pass,
            "normality_method": self.normality_method,
            "otr_threshold": self.otr_threshold,
            "n_stable_bins": self.n_stable_bins,
        }


def _jarque_bera(values: np.ndarray) -> float:
    """Moment-based normality statistic from sample skewness and kurtosis."""
    n = len(values)
    centered = values - values.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        return 0.0
    skew = float(np.mean(centered**3)) / m2**1.5
    kurt = float(np.mean(centered**4)) / m2**2
    return n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)


def alpha_stability(
    series: RunSeries,
    otr_bins,
    config: FitConfig | None = None,
    otr_threshold: float = DEFAULT_OTR_THRESHOLD,
    significance: float = 0.05,
) -> ExponentStabilityReport:
    """Per-OTR-bin power-law exponents of loss against compute.

    Each bin [lo, hi) gets the closed-form log-log fit of L = lam * C**(-a)
    with C = 6*N*D.  Bins entirely above ``otr_threshold`` feed the
    mean/std and the normality check; records outside every bin are
    ignored.  ``config`` is accepted for interface symmetry; the closed
    form has no tunables beyond the log residual space it already uses.
    """
    del config
    bins = [(float(lo), float(hi)) for lo, hi in otr_bins]
    if not bins:
        raise ValueError("otr_bins must be non-empty")

    fits = []
    for lo, hi in bins:
        compute, losses = [], []
        for rec in series.records:
            ratio = rec.tokens / rec.model_size
            if lo <= ratio < hi:
                compute.append(6.0 * rec.model_size * rec.tokens)
                losses.append(rec.loss)
        if len(losses) < 3:
            raise BinTooSmall((lo, hi), len(losses))
        lam, alpha = fit_power_loglog(np.array(compute), np.array(losses))
        fits.append(BinFit(otr_range=(lo, hi), alpha=alpha, lam=lam, n_points=len(losses)))

    stable = [b for b in fits if b.otr_range[0] >= otr_threshold]
    basis = stable if stable else fits
    alphas = np.array([b.alpha for b in basis])
    mean_alpha = float(alphas.mean())
    std_alpha = float(alphas.std(ddof=1)) if len(alphas) > 1 else 0.0

    if len(alphas) >= 3:
        stat = _jarque_bera(alphas)
        # chi^2 with 2 dof has the closed-form quantile -2*ln(significance)
        passed = stat < -2.0 * math.log(significance)
    else:
        stat = math.nan
        passed = False

    return ExponentStabilityReport(
        bins=tuple(fits),
        mean_alpha=mean_alpha,
        std_alpha=std_alpha,
        normality_stat=stat,
        normality_pass=passed,
        normality_method="jarque-bera",
        otr_threshold=otr_threshold,
        n_stable_bins=len(stable),
    )


# ---------------------------------------------------------------------------
# Hyperparameter frontier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrontierPoint:
    target_loss: float
    knob_value: float
    min_tokens: int

    def to_dict(self) -> dict:
        return {
            "target_loss": self.target_loss,
            "knob_value": self.knob_value,
            "min_tokens": self.min_tokens,
        }


@dataclass(frozen=True)
class FrontierWarning:
    target_loss: float
    knob_value: float
    reason: str

    def to_dict(self) -> dict:
        return {
            "target_loss": self.target_loss,
            "knob_value": self.knob_value,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class FrontierResult:
    knob: str
    points: tuple[FrontierPoint, ...]
    warnings: tuple[FrontierWarning, ...]

    def to_dict(self) -> dict:
        return {
            "knob": self.knob,
            "points": [p.to_dict() for p in self.points],
            "warnings": [w.to_dict() for w in self.warnings],
        }


def hyperparam_frontier(
    runs: RunSeries,
    knob: str,
    target_losses,
    smooth_window: int = 10,
) -> FrontierResult:
    """Minimum-token knob settings for a list of target losses.

    Losses are smoothed first (so noise cannot trigger early crossings),
    then for each target the knob value whose runs cross the target with
    the fewest tokens wins; ties go to the smaller knob value.  Knob values
    that never reach a target are dropped from that target with a warning;
    a target no run reaches raises NoRunReachesTarget.
    """
    if knob not in ("batch_size", "learning_rate"):
        raise ValueError("knob must be 'batch_size' or 'learning_rate'")

    by_run: dict[str, list] = {}
    for rec in runs.records:
        by_run.setdefault(rec.run_id, []).append(rec)
    knob_of_run: dict[str, float] = {}
    for run_id, records in by_run.items():
        values = {getattr(r, knob) for r in records}
        if None in values:
            raise KnobMissing(knob, run_id)
        if len(values) != 1:
            raise KnobMissing(knob, run_id, detail="not constant within the run")
        knob_of_run[run_id] = float(values.pop())

    smoothed = gaussian_smooth(runs, window=smooth_window)
    crossings: dict[float, dict[float, int]] = {}  # knob value -> target -> tokens
    targets = [float(t) for t in target_losses]
    for run_id, _ in by_run.items():
        records = sorted(
            (r for r in smoothed.records if r.run_id == run_id),
            key=lambda r: r.tokens,
        )
        value = knob_of_run[run_id]
        for target in targets:
            hit = next((r.tokens for r in records if r.loss <= target), None)
            if hit is None:
                continue
            per_target = crossings.setdefault(value, {})
            if target not in per_target or hit < per_target[target]:
                per_target[target] = hit

    knob_values = sorted(set(knob_of_run.values()))
    points = []
    warnings = []
    for target in targets:
        candidates = []
        for value in knob_values:
            tokens = crossings.get(value, {}).get(target)
            if tokens is None:
                warnings.append(
                    FrontierWarning(target, value, "no run at this value reaches the target")
                )
            else:
                candidates.append((tokens, value))
        if not candidates:
            raise NoRunReachesTarget(target)
        best_tokens, best_value = min(candidates)  # ties: smaller knob value
        points.append(
            FrontierPoint(target_loss=target, knob_value=best_value, min_tokens=best_tokens)
        )
    return FrontierResult(knob=knob, points=tuple(points), warnings=tuple(warnings))
