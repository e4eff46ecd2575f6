"""Per-case reconstruction of the published 324-woman reference cohort.

Only aggregate rates were published.  The cell counts below are integer
back-solutions of those rates; :func:`build_reference_cohort` expands them
into individual cases whose age, menopause and ACR marginals follow the
published cohort description, and whose mammography/thermal calls give
exactly the per-stratum confusion cells.

The joint (mammography, thermal) call pattern within each cell is not
published.  It is fixed here so that the OR rule reproduces its published
rates as well: 3 cases negative on both among the positives, and 179 among
the negatives (105 fatty + 74 dense).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ACRDensity, CaseRecord, ConfusionCounts, GroundTruth
from .evaluate import back_solve_counts
from .risk import MAMMO_THRESHOLD, BScoreBins

# (tp, fp, tn, fn) per modality and density class
REFERENCE_COUNTS = {
    ("mammo", "fatty"): ConfusionCounts(26, 14, 124, 1),
    # the published dense row (83.08% specificity) has no solution over 131
    # negatives; 23/108 keeps the overall row exact
    ("mammo", "dense"): ConfusionCounts(19, 23, 108, 9),
    ("thermal", "fatty"): ConfusionCounts(25, 26, 112, 2),
    ("thermal", "dense"): ConfusionCounts(26, 40, 91, 2),
}

# published point rates (percent, as printed) the counts must reproduce
REFERENCE_RATES = {
    ("mammo", "overall"): {"sensitivity": "81.82", "specificity": "86.25", "ppv": "54.88", "npv": "95.87"},
    ("mammo", "fatty"): {"sensitivity": "96.30", "specificity": "89.86", "ppv": "65.00", "npv": "99.20"},
    ("mammo", "dense"): {"sensitivity": "67.86", "specificity": "83.08", "ppv": "46.34", "npv": "92.31"},
    ("thermal", "overall"): {"sensitivity": "92.73", "specificity": "75.46", "ppv": "43.59", "npv": "98.07"},
    ("thermal", "fatty"): {"sensitivity": "92.59", "specificity": "81.16", "ppv": "49.02", "npv": "98.25"},
    ("thermal", "dense"): {"sensitivity": "92.86", "specificity": "69.47", "ppv": "39.39", "npv": "97.85"},
    ("fusion", "overall"): {"sensitivity": "94.55", "specificity": "79.93", "ppv": "49.06", "npv": "98.62"},
    ("or", "overall"): {"sensitivity": "94.6", "specificity": "66.5", "ppv": "36.6", "npv": "98.4"},
}

# (mammo_positive, thermal_positive) -> number of cases, per (truth, class)
JOINT_CALLS = {
    (True, "fatty"): {(True, True): 25, (True, False): 1, (False, True): 0, (False, False): 1},
    (True, "dense"): {(True, True): 19, (True, False): 0, (False, True): 7, (False, False): 2},
    (False, "fatty"): {(True, True): 7, (True, False): 7, (False, True): 19, (False, False): 105},
    (False, "dense"): {(True, True): 6, (True, False): 17, (False, True): 34, (False, False): 74},
}

# cohort description: counts by age band, menopause and ACR grade
AGE_COUNTS = {True: (0, 5, 17, 16, 11, 6), False: (1, 39, 113, 71, 40, 5)}
AGE_RANGES = ((18, 29), (30, 39), (40, 49), (50, 59), (60, 69), (70, 85))
MENOPAUSE_YES = {True: 31, False: 117}
DENSITY_COUNTS = {
    (True, "fatty"): {ACRDensity.A: 1, ACRDensity.B: 26},
    (True, "dense"): {ACRDensity.C: 28, ACRDensity.D: 0},
    (False, "fatty"): {ACRDensity.A: 7, ACRDensity.B: 131},
    (False, "dense"): {ACRDensity.C: 116, ACRDensity.D: 15},
}


def overall_counts(modality: str) -> ConfusionCounts:
    return REFERENCE_COUNTS[(modality, "fatty")] + REFERENCE_COUNTS[(modality, "dense")]


def rate_cells(c: ConfusionCounts) -> dict:
    """Metric -> (numerator, denominator)."""
    return {"sensitivity": (c.tp, c.n_pos), "specificity": (c.tn, c.n_neg),
            "ppv": (c.tp, c.tp + c.fp), "npv": (c.tn, c.tn + c.fn)}


def verify_counts(counts: ConfusionCounts, rates: dict) -> list:
    """Metrics whose published rate is not reproduced by ``counts``.

    Each check runs :func:`back_solve_counts` at the denominator implied by
    ``counts`` and the printed precision of the rate.
    """
    bad = []
    for metric, (num, den) in rate_cells(counts).items():
        if metric in rates and (num, den) not in back_solve_counts(rates[metric], den):
            bad.append(metric)
    return bad


@dataclass(frozen=True)
class ReferenceCase:
    record: CaseRecord
    mammo_positive: bool
    thermal_positive: bool


def _cell_calls(truth: bool, cls: str) -> list:
    calls = []
    for pattern, n in JOINT_CALLS[(truth, cls)].items():
        calls += [pattern] * n
    return calls


def build_reference_cohort(seed: int = 0) -> list:
    """Expand the reference counts into 324 :class:`ReferenceCase` rows.

    Ages are drawn uniformly inside their bands; the oldest women in each
    truth class are marked post-menopausal.  Mammography probabilities lie
    on the correct side of the 0.43 threshold for each call.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for truth in (True, False):
        ages = []
        for (lo, hi), n in zip(AGE_RANGES, AGE_COUNTS[truth]):
            ages += rng.integers(lo, hi + 1, size=n).tolist()
        ages = np.array(ages)
        meno = np.zeros(ages.size, dtype=bool)
        meno[np.argsort(-ages, kind="stable")[:MENOPAUSE_YES[truth]]] = True
        people = rng.permutation(ages.size)
        k = 0
        for cls in ("fatty", "dense"):
            calls = _cell_calls(truth, cls)
            dens = []
            for d, n in DENSITY_COUNTS[(truth, cls)].items():
                dens += [d] * n
            assert len(calls) == len(dens)
            for (m_pos, t_pos), d in zip(calls, rng.permutation(np.array(dens, dtype=object))):
                i = people[k]
                k += 1
                rows.append((int(ages[i]), bool(meno[i]), d, truth, m_pos, t_pos))
    order = rng.permutation(len(rows))
    cases = []
    for j, idx in enumerate(order):
        age, meno, d, truth, m_pos, t_pos = rows[idx]
        p = rng.uniform(MAMMO_THRESHOLD + 0.01, 0.99) if m_pos else rng.uniform(0.01, MAMMO_THRESHOLD - 0.01)
        rec = CaseRecord(
            case_id=f"ref{j + 1:03d}", age=age, menopause=meno, density=d,
            ground_truth=GroundTruth.SUSPICIOUS if truth else GroundTruth.NOT_SUSPICIOUS,
            mammo_prob=round(float(p), 4), thermal_ref=None,
        )
        cases.append(ReferenceCase(rec, m_pos, t_pos))
    return cases


def reference_score_rows(cohort, bins: BScoreBins = BScoreBins(), seed: int = 0) -> list:
    """Score-file rows for the reference cohort.

    The group scores are not published, so only the ensemble probability
    and B-Score are filled, consistent with each thermal call.
    """
    rng = np.random.default_rng(seed + 1)
    cut = bins.cuts[1]  # grade 3 starts here
    rows = []
    for rc in cohort:
        lo, hi = (cut + 0.01, 0.99) if rc.thermal_positive else (0.01, cut - 0.01)
        p = float(rng.uniform(lo, hi))
        rows.append({"case_id": rc.record.case_id, "ensemble": round(p, 6),
                     "thermal_positive": rc.thermal_positive,
                     "mammo_positive": rc.record.mammo_prob > MAMMO_THRESHOLD})
    return rows
