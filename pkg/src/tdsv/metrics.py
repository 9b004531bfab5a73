"""Threshold-sweep error analysis: EER, normalized minimum detection cost,
DET-curve emission on probit axes, and per-subset evaluation reports.

Conventions (fixed so independent oracles can match exactly):
  - decision rule: accept iff score >= threshold;
  - p_miss(t) = #(targets < t) / n_target, p_fa(t) = #(nontargets >= t) / n_nontarget;
  - operating points at every distinct score plus one sentinel on each side;
  - EER by linear interpolation on the segment where p_miss - p_fa changes sign;
  - minimum-cost ties resolve to the lowest threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .formats import fmt_float
from .model import DataError, ScoreRecord, TARGET_LABEL, Trial

DET_CLAMP = 1e-6

BUILTIN_SUBSETS = ("overall", "male", "female", "farsi", "english", "tc_vs_ic")


@dataclass(frozen=True)
class DcfParams:
    """Detection cost weights; defaults follow the SRE08 evaluation plan."""

    c_miss: float = 10.0
    c_fa: float = 1.0
    p_target: float = 0.01

    def __post_init__(self):
        if not (self.c_miss > 0.0 and self.c_fa > 0.0):
            raise DataError("c_miss and c_fa must be positive")
        if not (0.0 < self.p_target < 1.0):
            raise DataError(f"p_target must lie in (0, 1), got {self.p_target}")


@dataclass(frozen=True)
class ErrorCurve:
    thresholds: np.ndarray
    p_miss: np.ndarray
    p_fa: np.ndarray
    n_target: int
    n_nontarget: int


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    p_fa: float
    p_miss: float
    probit_fa: float
    probit_miss: float


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    min_dcf: float
    min_dcf_threshold: float
    det: list[DetPoint]
    n_target: int
    n_nontarget: int
    subset_reports: dict[str, "EvalReport"] = field(default_factory=dict)


def sweep(scores: Sequence[float], labels: Sequence[bool]) -> ErrorCurve:
    """Error rates at every distinct score plus sentinels beyond min and max."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError(f"scores and labels must be aligned 1-D, got {s.shape} vs {y.shape}")
    if not np.all(np.isfinite(s)):
        raise DataError("non-finite score")
    n_target = int(y.sum())
    n_nontarget = int((~y).sum())
    if n_target == 0 or n_nontarget == 0:
        raise DataError(
            f"need both classes: {n_target} targets, {n_nontarget} nontargets"
        )
    distinct = np.unique(s)
    thresholds = np.concatenate(([distinct[0] - 1.0], distinct, [distinct[-1] + 1.0]))
    tgt = np.sort(s[y])
    non = np.sort(s[~y])
    p_miss = np.searchsorted(tgt, thresholds, side="left") / n_target
    p_fa = (n_nontarget - np.searchsorted(non, thresholds, side="left")) / n_nontarget
    return ErrorCurve(thresholds, p_miss, p_fa, n_target, n_nontarget)


def eer(curve: ErrorCurve) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Walks the operating points for the sign change of p_miss - p_fa; an
    exact tie is returned directly, otherwise both rates are linearly
    interpolated along the bracketing segment.
    """
    diff = curve.p_miss - curve.p_fa
    idx = int(np.searchsorted(diff >= 0.0, True))  # diff is non-decreasing
    if diff[idx] == 0.0:
        return float(curve.p_miss[idx]), float(curve.thresholds[idx])
    lo, hi = idx - 1, idx
    dm = curve.p_miss[hi] - curve.p_miss[lo]
    df = curve.p_fa[hi] - curve.p_fa[lo]
    t = (curve.p_fa[lo] - curve.p_miss[lo]) / (dm - df)
    value = curve.p_miss[lo] + t * dm
    threshold = curve.thresholds[lo] + t * (curve.thresholds[hi] - curve.thresholds[lo])
    return float(value), float(threshold)


def dcf_normalizer(params: DcfParams) -> float:
    return min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target))


def min_dcf(curve: ErrorCurve, params: DcfParams = DcfParams()) -> tuple[float, float]:
    """Minimum normalized detection cost over all operating points and its
    threshold; ties resolve to the lowest threshold."""
    dcf = (
        params.c_miss * curve.p_miss * params.p_target
        + params.c_fa * curve.p_fa * (1.0 - params.p_target)
    ) / dcf_normalizer(params)
    idx = int(np.argmin(dcf))  # argmin takes the first (lowest-threshold) minimum
    return float(dcf[idx]), float(curve.thresholds[idx])


# Rational approximation of the inverse standard-normal CDF (relative error
# ~1.15e-9), tightened to full precision with one Newton step on erfc.
_PROBIT_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_PROBIT_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
             6.680131188771972e+01, -1.328068155288572e+01)
_PROBIT_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_PROBIT_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
             3.754408661907416e+00)
_P_LOW = 0.02425


def probit(p: float) -> float:
    """Inverse standard-normal CDF for p strictly inside (0, 1)."""
    if not (0.0 < p < 1.0):
        raise DataError(f"probit domain is (0, 1), got {p}")
    a, b, c, d = _PROBIT_A, _PROBIT_B, _PROBIT_C, _PROBIT_D
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    cdf = 0.5 * math.erfc(-x / math.sqrt(2.0))
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return x - (cdf - p) / pdf


def det_points(curve: ErrorCurve, clamp: float = DET_CLAMP) -> list[DetPoint]:
    """One row per operating point, ordered by increasing p_fa, with error
    probabilities clamped into (0, 1) before the probit transform."""
    points = []
    for i in range(len(curve.thresholds) - 1, -1, -1):
        pf = float(curve.p_fa[i])
        pm = float(curve.p_miss[i])
        pf_c = min(max(pf, clamp), 1.0 - clamp)
        pm_c = min(max(pm, clamp), 1.0 - clamp)
        points.append(
            DetPoint(float(curve.thresholds[i]), pf, pm, probit(pf_c), probit(pm_c))
        )
    return points


def evaluate(scores: Sequence[float], labels: Sequence[bool],
             params: DcfParams = DcfParams()) -> EvalReport:
    """Full single-set evaluation: sweep, EER, MinDCF, and DET rows."""
    curve = sweep(scores, labels)
    eer_value, eer_thr = eer(curve)
    dcf_value, dcf_thr = min_dcf(curve, params)
    return EvalReport(
        eer=eer_value,
        eer_threshold=eer_thr,
        min_dcf=dcf_value,
        min_dcf_threshold=dcf_thr,
        det=det_points(curve),
        n_target=curve.n_target,
        n_nontarget=curve.n_nontarget,
    )


def _subset_filters() -> dict[str, Callable[[Trial], bool]]:
    return {
        "overall": lambda t: True,
        "male": lambda t: t.gender == "male",
        "female": lambda t: t.gender == "female",
        "farsi": lambda t: t.language == "farsi",
        "english": lambda t: t.language == "english",
        "tc_vs_ic": lambda t: t.label in ("TC", "IC"),
    }


def subset_eval(records: Sequence[ScoreRecord], trials: Sequence[Trial],
                params: DcfParams = DcfParams(),
                subsets: Sequence[str] = BUILTIN_SUBSETS,
                score_of: Callable[[ScoreRecord], float] = lambda r: r.final) -> EvalReport:
    """Evaluate the overall set and each named subset on the final scores.

    Records and trials must be aligned (same order, matching ids). Unlabeled
    trials are excluded; a subset missing either class is omitted from
    `subset_reports` rather than reported as zero.
    """
    if len(records) != len(trials):
        raise DataError(f"{len(records)} records vs {len(trials)} trials")
    filters = _subset_filters()
    for name in subsets:
        if name not in filters:
            raise DataError(f"unknown subset {name!r} (known: {sorted(filters)})")

    labeled: list[tuple[ScoreRecord, Trial]] = []
    for rec, trial in zip(records, trials):
        if rec.model_id != trial.model_id or rec.test_utterance_id != trial.test_utterance_id:
            raise DataError(
                f"record/trial mismatch: ({rec.model_id}, {rec.test_utterance_id}) vs "
                f"({trial.model_id}, {trial.test_utterance_id})"
            )
        if trial.label is not None:
            labeled.append((rec, trial))
    if not labeled:
        raise DataError("no labeled trials to evaluate")

    def eval_subset(keep: Callable[[Trial], bool]) -> EvalReport | None:
        scores = [score_of(rec) for rec, trial in labeled if keep(trial)]
        labels = [trial.label == TARGET_LABEL for rec, trial in labeled if keep(trial)]
        if not any(labels) or all(labels):
            return None
        return evaluate(scores, labels, params)

    overall = eval_subset(filters["overall"])
    if overall is None:
        raise DataError("overall set is missing a class; cannot evaluate")
    for name in subsets:
        if name == "overall":
            overall.subset_reports[name] = EvalReport(
                overall.eer, overall.eer_threshold, overall.min_dcf,
                overall.min_dcf_threshold, overall.det, overall.n_target,
                overall.n_nontarget,
            )
            continue
        report = eval_subset(filters[name])
        if report is not None:
            overall.subset_reports[name] = report
    return overall


def write_report(report: EvalReport, report_path, det_dir,
                 subsets: Sequence[str] = BUILTIN_SUBSETS) -> None:
    """Emit the flat key=value report plus one DET CSV per present subset."""
    det_dir = Path(det_dir)
    det_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for name in sorted(subsets):
        sub = report.subset_reports.get(name)
        if sub is None:
            lines.append(f"{name}.absent=1")
            continue
        lines.append(f"{name}.eer={fmt_float(sub.eer)}")
        lines.append(f"{name}.eer_threshold={fmt_float(sub.eer_threshold)}")
        lines.append(f"{name}.min_dcf={fmt_float(sub.min_dcf)}")
        lines.append(f"{name}.min_dcf_threshold={fmt_float(sub.min_dcf_threshold)}")
        lines.append(f"{name}.n_target={sub.n_target}")
        lines.append(f"{name}.n_nontarget={sub.n_nontarget}")
        with open(det_dir / f"{name}.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("threshold,p_fa,p_miss,probit_fa,probit_miss\n")
            for pt in sub.det:
                fh.write(
                    ",".join(
                        fmt_float(v)
                        for v in (pt.threshold, pt.p_fa, pt.p_miss, pt.probit_fa, pt.probit_miss)
                    )
                    + "\n"
                )
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
