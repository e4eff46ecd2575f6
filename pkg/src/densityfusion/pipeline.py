"""Batch plumbing between manifests, frames, features, models and score files."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ACRDensity, CaseRecord, GroundTruth, Side, Source, TestResult, View
from .errors import MissingRequiredModalityError, RangeError, ScreeningError, SchemaMismatchError
from .radiomics import RadiomicFeatureVector, average_views, extract_features
from .risk import ThermalModel, mammo_positive
from .segment import SegmentationParams, detect_hotspots, extract_vascular_map, segment_breast
from .thermal_io import (
    PhantomSpec,
    generate_phantom,
    load_thermal_frame,
    resolve_thermal_refs,
    write_manifest,
    write_pgm,
    write_thermal_frame,
)

log = logging.getLogger(__name__)

SCORE_COLUMNS = ("case_id", "s_hotspot", "s_vascular", "s_areolar", "ensemble", "bscore",
                 "thermal_positive", "mammo_positive")
FAILED = "FAILED"


# ---------------------------------------------------------------------------
# phantom cohorts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhantomCohortSpec:
    """How many phantom women to draw and the frame geometry they share.

    Malignant cases get one warm side: extra hotspots, more vessels and an
    areolar bump.  Benign cases are bilaterally matched.
    """

    n: int = 10
    malignant_fraction: float = 0.5
    base: PhantomSpec = PhantomSpec(noise=0.05)

    @classmethod
    def from_key_values(cls, kv: dict) -> "PhantomCohortSpec":
        names = {f.name for f in fields(PhantomSpec)}
        top, base = {}, {}
        for key, value in kv.items():
            if key == "n":
                top["n"] = int(value)
            elif key == "malignant_fraction":
                top["malignant_fraction"] = float(value)
            elif key in names:
                default = getattr(PhantomSpec(), key)
                if isinstance(default, tuple):
                    base[key] = tuple(float(x) for x in value.split(","))
                elif isinstance(default, bool):
                    base[key] = value.strip().lower() in ("1", "true", "yes")
                else:
                    base[key] = type(default)(value)
            else:
                raise RangeError(f"unknown phantom key {key!r}")
        spec = cls(**top, base=replace(PhantomSpec(noise=0.05), **base))
        if spec.n < 0 or not 0.0 <= spec.malignant_fraction <= 1.0:
            raise RangeError("need n >= 0 and malignant_fraction in [0, 1]")
        return spec


def phantom_case(i: int, seed: int, cohort: PhantomCohortSpec):
    """Case record, frame and truth for phantom woman ``i``."""
    rng = np.random.default_rng([seed, i])
    malignant = bool(rng.random() < cohort.malignant_fraction)
    base = cohort.base
    if malignant:
        warm = bool(rng.random() < 0.5)  # True: left side carries the findings
        hot, cold = int(rng.integers(1, 3)), 0
        v_hot, v_cold = int(rng.integers(2, 4)), int(rng.integers(0, 2))
        areola = float(rng.uniform(0.8, 1.5))
        per_side = {
            "hotspots": (hot, cold), "vessels": (v_hot, v_cold), "areola": (areola, 0.0),
        }
        if not warm:
            per_side = {k: v[::-1] for k, v in per_side.items()}
        spec = replace(base,
                       hotspots_left=per_side["hotspots"][0], hotspots_right=per_side["hotspots"][1],
                       vessels_left=per_side["vessels"][0], vessels_right=per_side["vessels"][1],
                       areola_delta_left=per_side["areola"][0], areola_delta_right=per_side["areola"][1],
                       hotspot_delta=min(5.0, base.hotspot_delta * 1.25))
        mammo = float(rng.uniform(0.30, 0.95))
    else:
        v = int(rng.integers(0, 2))
        spec = replace(base, hotspots_left=0, hotspots_right=0, vessels_left=v, vessels_right=v,
                       areola_delta_left=0.0, areola_delta_right=0.0)
        mammo = float(rng.uniform(0.02, 0.60))
    age = int(rng.integers(30, 76))
    density = ACRDensity(str(rng.choice(["A", "B", "C", "D"], p=[0.05, 0.45, 0.40, 0.10])))
    frame, truth = generate_phantom(spec, int(rng.integers(0, 2**31 - 1)))
    case = CaseRecord(
        case_id=f"ph{i:04d}", age=age, menopause=age >= 50, density=density,
        ground_truth=GroundTruth.SUSPICIOUS if malignant else GroundTruth.NOT_SUSPICIOUS,
        mammo_prob=round(mammo, 4), thermal_ref=f"frames/ph{i:04d}.pgm",
    )
    return case, frame, truth


def write_phantom_cohort(cohort: PhantomCohortSpec, out_dir, seed: int) -> Path:
    """Frames (PGM + .cal), truth JSON and ``manifest.csv`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    cases = []
    for i in range(cohort.n):
        case, frame, truth = phantom_case(i, seed, cohort)
        write_thermal_frame(frame, out / case.thermal_ref)
        (out / "truth" / f"{case.case_id}.json").write_text(truth.to_json(), encoding="utf-8")
        cases.append(case)
        log.info("phantom %s: %s", case.case_id, case.ground_truth.value)
    manifest = out / "manifest.csv"
    write_manifest(cases, manifest)
    return manifest


# ---------------------------------------------------------------------------
# features and scores
# ---------------------------------------------------------------------------

def case_features(case: CaseRecord, base_dir, params: SegmentationParams) -> RadiomicFeatureVector:
    """Feature vector of a case, averaged over all its thermal views."""
    paths = resolve_thermal_refs(case, base_dir)
    if not paths:
        raise MissingRequiredModalityError(f"{case.case_id}: no thermal_ref", case_ids=[case.case_id])
    vecs = []
    for k, p in enumerate(paths):
        view = View.FRONTAL if k == 0 else (View.LEFT_OBLIQUE if k == 1 else View.RIGHT_OBLIQUE)
        vecs.append(extract_features(load_thermal_frame(p, view), params))
    return average_views(vecs)


@dataclass(frozen=True)
class ScoreRow:
    case_id: str
    s_hotspot: Optional[float] = None
    s_vascular: Optional[float] = None
    s_areolar: Optional[float] = None
    ensemble: Optional[float] = None
    bscore: Optional[int] = None
    thermal_positive: Optional[bool] = None
    mammo_positive: Optional[bool] = None
    failed: bool = False
    error: str = ""

    def mammo_result(self) -> Optional[TestResult]:
        return None if self.mammo_positive is None else TestResult(self.mammo_positive, Source.MAMMO_AI)

    def thermal_result(self) -> Optional[TestResult]:
        if self.failed or self.thermal_positive is None:
            return None
        return TestResult(self.thermal_positive, Source.THERMALYTIX_AI)


def _mammo_call(case: CaseRecord, threshold: float) -> Optional[bool]:
    return None if case.mammo_prob is None else mammo_positive(case.mammo_prob, threshold)


def score_case(case: CaseRecord, base_dir, model: ThermalModel, params: SegmentationParams,
               threshold: float) -> ScoreRow:
    """Score one case; any pipeline error yields a FAILED row instead of raising."""
    m = _mammo_call(case, threshold)
    try:
        vec = case_features(case, base_dir, params)
        s = model.score(vec, case.age, case.menopause)
    except (ScreeningError, OSError) as exc:
        return ScoreRow(case.case_id, mammo_positive=m, failed=True, error=str(exc))
    return ScoreRow(case.case_id, s["s_hotspot"], s["s_vascular"], s["s_areolar"], s["ensemble"],
                    s["bscore"].grade, s["thermal_positive"], m)


def _score_star(args):
    return score_case(*args)


def score_cases(cases: Sequence[CaseRecord], base_dir, model: ThermalModel, params: SegmentationParams,
                threshold: float, jobs: int = 1) -> list:
    """Score all cases; output order follows ``cases`` for any ``jobs``."""
    work = [(c, base_dir, model, params, threshold) for c in cases]
    if jobs <= 1 or len(work) < 2:
        return [_score_star(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_score_star, work))


def _fmt_float(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def _fmt_bool(x: Optional[bool]) -> str:
    return "" if x is None else ("true" if x else "false")


def format_scores(rows: Sequence[ScoreRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for r in rows:
        if r.failed:
            w.writerow([r.case_id, "", "", "", "", FAILED, "", _fmt_bool(r.mammo_positive)])
            continue
        w.writerow([r.case_id, _fmt_float(r.s_hotspot), _fmt_float(r.s_vascular), _fmt_float(r.s_areolar),
                    _fmt_float(r.ensemble), "" if r.bscore is None else str(r.bscore),
                    _fmt_bool(r.thermal_positive), _fmt_bool(r.mammo_positive)])
    return buf.getvalue()


def _parse_opt(value: str, kind, where: str):
    value = value.strip()
    if value == "":
        return None
    if kind is bool:
        low = value.lower()
        if low not in ("true", "false"):
            raise RangeError(f"{where}: expected true/false, got {value!r}")
        return low == "true"
    try:
        out = kind(value)
    except ValueError:
        raise RangeError(f"{where}: bad value {value!r}") from None
    if kind is float and not math.isfinite(out):
        raise RangeError(f"{where}: non-finite value")
    return out


def parse_scores(text: str) -> dict:
    """Score CSV -> ``{case_id: ScoreRow}`` in file order."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != SCORE_COLUMNS:
        raise SchemaMismatchError(f"score file header must be {','.join(SCORE_COLUMNS)}")
    out = {}
    for lineno, row in enumerate(reader, 2):
        where = f"scores line {lineno}"
        cid = row["case_id"].strip()
        mammo = _parse_opt(row["mammo_positive"], bool, where)
        if row["bscore"].strip() == FAILED:
            out[cid] = ScoreRow(cid, mammo_positive=mammo, failed=True)
            continue
        out[cid] = ScoreRow(
            cid,
            *(_parse_opt(row[k], float, where) for k in ("s_hotspot", "s_vascular", "s_areolar", "ensemble")),
            bscore=_parse_opt(row["bscore"], int, where),
            thermal_positive=_parse_opt(row["thermal_positive"], bool, where),
            mammo_positive=mammo,
        )
    return out


def write_debug_maps(case: CaseRecord, base_dir, params: SegmentationParams, out_dir) -> None:
    """Hotspot label map and vessel skeleton of the first view as 16-bit PGMs."""
    paths = resolve_thermal_refs(case, base_dir)
    if not paths:
        return
    frame = load_thermal_frame(paths[0])
    mask = segment_breast(frame, params.ambient_cutoff)
    hs = detect_hotspots(frame, mask, params)
    vg = extract_vascular_map(frame, mask, params)
    # right-side labels are offset so ids stay unique in one image
    n_left = len(hs[Side.LEFT])
    labels = hs[Side.LEFT].labels + np.where(hs[Side.RIGHT].labels > 0, hs[Side.RIGHT].labels + n_left, 0)
    skel = vg[Side.LEFT].skeleton | vg[Side.RIGHT].skeleton
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(labels.astype(np.int64), out / f"{case.case_id}_hotspots.pgm")
    write_pgm(skel.astype(np.int64), out / f"{case.case_id}_vessels.pgm")
