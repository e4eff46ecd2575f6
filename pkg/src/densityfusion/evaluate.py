"""Screening statistics: confusion cells, metrics with Wald intervals,
stratified tables, ROC/AUC and the rate-to-count back-solver.

All percentages are stored unrounded; :func:`fmt_pct` renders them with
two decimals, rounding half away from zero.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    AGE_BANDS,
    ACRDensity,
    CaseRecord,
    ConfusionCounts,
    DensityClass,
    Estimate,
    GroundTruth,
    METRIC_NAMES,
    MetricReport,
    TestResult,
    age_band,
)
from .errors import DegenerateLabelsError, EmptyCohortError, LengthMismatchError, NZeroError

Z95 = 1.96
UNDEFINED = "—"


def _as_bool(x) -> bool:
    if isinstance(x, TestResult):
        return x.positive
    if isinstance(x, GroundTruth):
        return x.positive
    return bool(x)


def confusion(results: Sequence, truths: Sequence) -> ConfusionCounts:
    """2x2 counts from per-case calls and ground truth (aligned by index)."""
    if len(results) != len(truths):
        raise LengthMismatchError(f"{len(results)} results but {len(truths)} truths")
    tp = fp = tn = fn = 0
    for r, t in zip(results, truths):
        pred, actual = _as_bool(r), _as_bool(t)
        if actual:
            tp += pred
            fn += not pred
        else:
            fp += pred
            tn += not pred
    return ConfusionCounts(tp, fp, tn, fn)


def wald_ci(p: float, n: int) -> tuple:
    """95% normal-approximation interval in percent, clipped to [0, 100]."""
    if n <= 0:
        raise NZeroError("Wald interval needs n > 0")
    half = Z95 * math.sqrt(max(p * (1.0 - p), 0.0) / n)
    return max(0.0, 100.0 * (p - half)), min(100.0, 100.0 * (p + half))


def _estimate(num: int, den: int) -> Optional[Estimate]:
    if den == 0:
        return None
    p = num / den
    lo, hi = wald_ci(p, den)
    return Estimate(100.0 * p, lo, hi)


def metrics(c: ConfusionCounts) -> MetricReport:
    """Sensitivity, specificity, PPV, NPV and balanced accuracy with 95% CIs.

    A metric whose denominator is zero is ``None``.  Balanced accuracy needs
    both classes; its interval uses the stratum size as ``n``.

    Raises
    ------
    EmptyCohortError
        If all four cells are zero.
    """
    if c.total == 0:
        raise EmptyCohortError("no cases to evaluate")
    sens = _estimate(c.tp, c.n_pos)
    spec = _estimate(c.tn, c.n_neg)
    ppv = _estimate(c.tp, c.tp + c.fp)
    npv = _estimate(c.tn, c.tn + c.fn)
    bal = None
    if sens is not None and spec is not None:
        p = 0.5 * (c.tp / c.n_pos + c.tn / c.n_neg)
        lo, hi = wald_ci(p, c.total)
        bal = Estimate(100.0 * p, lo, hi)
    return MetricReport(sens, spec, ppv, npv, bal, c.n_pos, c.n_neg, c)


def fmt_pct(x: Optional[float]) -> str:
    """Two decimals, half away from zero; ``None`` renders as an em dash."""
    if x is None:
        return UNDEFINED
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# back-solving published rates
# ---------------------------------------------------------------------------

def back_solve_counts(rate, n_range, decimals: Optional[int] = None) -> list:
    """All ``(count, n)`` whose rate ``100 * count / n`` prints as ``rate``.

    With half-up rounding at ``decimals`` places that is the half-open
    window ``rate - h <= 100 * count / n < rate + h``, ``h = 0.5 * 10**-decimals``.

    ``rate`` is a percentage.  Given as a string, its printed precision
    sets ``decimals`` ("17.0" -> 1, "94.55" -> 2); a float defaults to 2.
    ``n_range`` is an int or an iterable of candidate denominators.
    Arithmetic is exact (rational).
    """
    text = rate if isinstance(rate, str) else repr(float(rate))
    r = Fraction(Decimal(text.strip().rstrip("%")))
    if decimals is None:
        if isinstance(rate, str):
            exp = Decimal(text.strip().rstrip("%")).as_tuple().exponent
            decimals = max(0, -exp)
        else:
            decimals = 2
    tol = Fraction(1, 2 * 10 ** decimals)
    ns = [n_range] if isinstance(n_range, int) else list(n_range)
    out = []
    for n in ns:
        if n <= 0:
            continue
        lo = (r - tol) * n / 100
        hi = (r + tol) * n / 100
        k = max(0, math.floor(lo))
        while k <= min(n, math.ceil(hi)):
            if r - tol <= Fraction(100 * k, n) < r + tol:
                out.append((k, n))
            k += 1
    return out


# ---------------------------------------------------------------------------
# stratified reports
# ---------------------------------------------------------------------------

def strata(cases: Sequence[CaseRecord]) -> dict:
    """Stratum name -> list of case indices, in report order."""
    out = {"overall": list(range(len(cases)))}
    for cls in DensityClass:
        out[cls.value.lower()] = [i for i, c in enumerate(cases) if c.density_class is cls]
    for band in AGE_BANDS:
        out[f"age {band}"] = [i for i, c in enumerate(cases) if age_band(c.age) == band]
    for flag, name in ((True, "yes"), (False, "no")):
        out[f"menopause {name}"] = [i for i, c in enumerate(cases) if c.menopause is flag]
    for d in ACRDensity:
        out[f"density {d.value}"] = [i for i, c in enumerate(cases) if c.density is d]
    return out


def stratified_report(cases: Sequence[CaseRecord], results: Sequence) -> dict:
    """One :class:`MetricReport` per stratum; empty strata map to ``None``."""
    if len(cases) != len(results):
        raise LengthMismatchError(f"{len(cases)} cases but {len(results)} results")
    truths = [c.ground_truth for c in cases]
    table = {}
    for name, idx in strata(cases).items():
        if not idx:
            table[name] = None
            continue
        table[name] = metrics(confusion([results[i] for i in idx], [truths[i] for i in idx]))
    return table


def format_report_text(table: dict, title: str = "") -> str:
    """Aligned plain-text table, one line per stratum."""
    head = ["stratum", "n_pos", "n_neg"] + list(METRIC_NAMES)
    rows = []
    for name, rep in table.items():
        if rep is None:
            rows.append([name, "0", "0"] + [UNDEFINED] * len(METRIC_NAMES))
            continue
        cells = [name, str(rep.n_pos), str(rep.n_neg)]
        for _, est in rep.items():
            cells.append(UNDEFINED if est is None
                         else f"{fmt_pct(est.point)} ({fmt_pct(est.ci_lo)}-{fmt_pct(est.ci_hi)})")
        rows.append(cells)
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    lines = [title] if title else []
    for r in [head] + rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


CSV_COLUMNS = ("stratum", "metric", "point", "ci_lo", "ci_hi", "n_pos", "n_neg")


def format_report_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for name, rep in table.items():
        for metric in METRIC_NAMES:
            est = None if rep is None else getattr(rep, metric)
            n_pos = 0 if rep is None else rep.n_pos
            n_neg = 0 if rep is None else rep.n_neg
            if est is None:
                w.writerow([name, metric, UNDEFINED, UNDEFINED, UNDEFINED, n_pos, n_neg])
            else:
                w.writerow([name, metric, fmt_pct(est.point), fmt_pct(est.ci_lo), fmt_pct(est.ci_hi),
                            n_pos, n_neg])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # point k counts scores >= thresholds[k] as positive
    auc: float


def roc_curve(scores: Iterable[float], labels: Iterable) -> RocCurve:
    """ROC points from (0, 0) to (1, 1) sweeping distinct scores downwards.

    Tied scores move together, giving a diagonal segment; the trapezoid
    area therefore credits ties with one half.
    """
    s = np.asarray(list(scores), dtype=np.float64)
    y = np.asarray([_as_bool(v) for v in labels], dtype=bool)
    if s.shape != y.shape:
        raise LengthMismatchError(f"{s.size} scores but {y.size} labels")
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise DegenerateLabelsError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True]  # final index of each tie group
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0, tp] / P
    fpr = np.r_[0, fp] / N
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)
