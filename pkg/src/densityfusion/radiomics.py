"""Hand-crafted thermal features: hotspot, vascular and areolar groups.

The schema is fixed at 20 named values and carries a version tag; models
refuse vectors stamped with another version.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import BreastMask, HotspotMap, Side, ThermalFrame, VascularGraph, _frozen
from .errors import SchemaMismatchError

SCHEMA_VERSION = "radiomics-v1"
EPS = 1e-9

GROUPS = {
    "hotspot": (
        "hs_area_L", "hs_area_R", "hs_peak_dT_L", "hs_peak_dT_R",
        "hs_ecc_L", "hs_ecc_R", "hs_area_asym", "hs_peak_asym",
    ),
    "vascular": (
        "vs_edges_L", "vs_edges_R", "vs_branch_L", "vs_branch_R",
        "vs_caliber_L", "vs_caliber_R", "vs_count_sym", "vs_caliber_sym",
    ),
    "areolar": ("ar_mean_L", "ar_mean_R", "ar_dT", "ar_contrast"),
}
GROUP_ORDER = ("hotspot", "vascular", "areolar")


@dataclass(frozen=True)
class FeatureSchema:
    version: str = SCHEMA_VERSION
    groups: tuple = GROUP_ORDER

    @property
    def names(self) -> tuple:
        return tuple(n for g in self.groups for n in GROUPS[g])

    def group_slice(self, group: str) -> slice:
        start = 0
        for g in self.groups:
            if g == group:
                return slice(start, start + len(GROUPS[g]))
            start += len(GROUPS[g])
        raise SchemaMismatchError(f"unknown feature group {group!r}")


SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    values: np.ndarray

    def __post_init__(self):
        if self.name not in GROUPS:
            raise SchemaMismatchError(f"unknown feature group {self.name!r}")
        v = _frozen(self.values, dtype=np.float64)
        if v.shape != (len(GROUPS[self.name]),):
            raise SchemaMismatchError(
                f"group {self.name} expects {len(GROUPS[self.name])} values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def names(self) -> tuple:
        return GROUPS[self.name]

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class RadiomicFeatureVector:
    values: np.ndarray
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        v = _frozen(self.values, dtype=np.float64)
        if v.shape != (len(SCHEMA.names),):
            raise SchemaMismatchError(f"expected {len(SCHEMA.names)} features, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise SchemaMismatchError("feature vector contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def names(self) -> tuple:
        return SCHEMA.names

    def group(self, name: str) -> np.ndarray:
        return self.values[SCHEMA.group_slice(name)]

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))


# ---------------------------------------------------------------------------
# groups
# ---------------------------------------------------------------------------

def eccentricity(pixels: np.ndarray) -> float:
    """Ellipse eccentricity of a binary region from its central second moments.

    0 for a disk (or a single pixel), approaching 1 for a line.
    """
    rows, cols = np.nonzero(pixels)
    if rows.size < 2:
        return 0.0
    dr = rows - rows.mean()
    dc = cols - cols.mean()
    mrr, mcc, mrc = np.mean(dr * dr), np.mean(dc * dc), np.mean(dr * dc)
    half = 0.5 * (mrr + mcc)
    root = np.sqrt((0.5 * (mrr - mcc)) ** 2 + mrc ** 2)
    big, small = half + root, half - root
    if big <= 0:
        return 0.0
    return float(np.sqrt(max(0.0, 1.0 - small / big)))


def _side_hotspot_stats(m: HotspotMap):
    if not m.hotspots:
        return 0.0, 0.0, 0.0
    largest = max(m.hotspots, key=lambda h: (h.area, h.peak, -h.label))
    peak = max(h.peak for h in m.hotspots) - m.baseline
    return float(m.total_area), float(peak), eccentricity(m.labels == largest.label)


def hotspot_features(map_l: HotspotMap, map_r: HotspotMap, frame: Optional[ThermalFrame] = None) -> FeatureGroup:
    """Area, peak excess over the side mean, shape, and bilateral asymmetry.

    ``frame`` is accepted for interface symmetry; the maps already hold
    peaks and side baselines.
    """
    a_l, p_l, e_l = _side_hotspot_stats(map_l)
    a_r, p_r, e_r = _side_hotspot_stats(map_r)
    area_asym = abs(a_l - a_r) / max(a_l + a_r, 1.0)
    peak_asym = abs(p_l - p_r)
    return FeatureGroup("hotspot", [a_l, a_r, p_l, p_r, e_l, e_r, area_asym, peak_asym])


def vascular_features(g_l: VascularGraph, g_r: VascularGraph) -> FeatureGroup:
    e_l, e_r = float(len(g_l.edges)), float(len(g_r.edges))
    b_l, b_r = float(len(g_l.branch_nodes)), float(len(g_r.branch_nodes))
    c_l, c_r = g_l.mean_caliber, g_r.mean_caliber
    count_sym = abs(e_l - e_r) / max(e_l + e_r, 1.0)
    cal_sym = abs(c_l - c_r) / max(c_l + c_r, EPS)
    return FeatureGroup("vascular", [e_l, e_r, b_l, b_r, c_l, c_r, count_sym, cal_sym])


def areolar_features(regions, frame: ThermalFrame, masks: BreastMask) -> FeatureGroup:
    """Mean areolar temperature per side, their gap, and the larger contrast to the side mean.

    ``regions`` is anything with ``region(side)`` (see
    :class:`~densityfusion.segment.AreolarRegions`).  An empty region
    contributes the side mean, i.e. zero contrast.
    """
    means, contrasts = [], []
    for side in (Side.LEFT, Side.RIGHT):
        side_mask = masks.side(side)
        side_mean = float(frame.temps[side_mask].mean()) if side_mask.any() else 0.0
        reg = regions.region(side)
        m = float(frame.temps[reg].mean()) if reg.any() else side_mean
        means.append(m)
        contrasts.append(m - side_mean)
    return FeatureGroup("areolar", [means[0], means[1], abs(means[0] - means[1]), max(contrasts)])


def assemble_features(groups: Iterable[FeatureGroup], schema: FeatureSchema = SCHEMA) -> RadiomicFeatureVector:
    """Concatenate groups in schema order, matching by group name."""
    by_name = {}
    for g in groups:
        if g.name in by_name:
            raise SchemaMismatchError(f"feature group {g.name!r} given twice")
        by_name[g.name] = g
    if set(by_name) != set(schema.groups):
        raise SchemaMismatchError(
            f"groups {sorted(by_name)} do not match schema {sorted(schema.groups)}")
    values = np.concatenate([by_name[name].values for name in schema.groups])
    return RadiomicFeatureVector(values, schema.version)


def check_schema(vec: RadiomicFeatureVector, version: str = SCHEMA_VERSION) -> None:
    if vec.schema_version != version:
        raise SchemaMismatchError(f"feature schema {vec.schema_version!r}, expected {version!r}")


# ---------------------------------------------------------------------------
# frame -> vector
# ---------------------------------------------------------------------------

def extract_features(frame: ThermalFrame, params=None, landmarks: Optional[dict] = None) -> RadiomicFeatureVector:
    """Run segmentation on one frame and return its feature vector."""
    from .segment import (SegmentationParams, detect_hotspots, extract_vascular_map,
                          locate_areolar_regions, segment_breast)

    p = params if params is not None else SegmentationParams()
    mask = segment_breast(frame, p.ambient_cutoff)
    hs = detect_hotspots(frame, mask, p)
    vg = extract_vascular_map(frame, mask, p)
    ar = locate_areolar_regions(frame, mask, p, landmarks)
    return assemble_features([
        hotspot_features(hs[Side.LEFT], hs[Side.RIGHT], frame),
        vascular_features(vg[Side.LEFT], vg[Side.RIGHT]),
        areolar_features(ar, frame, mask),
    ])


def average_views(vectors: Sequence[RadiomicFeatureVector]) -> RadiomicFeatureVector:
    """Element-wise mean over several views of the same case."""
    if not vectors:
        raise SchemaMismatchError("no feature vectors to average")
    versions = {v.schema_version for v in vectors}
    if len(versions) != 1:
        raise SchemaMismatchError(f"mixed schema versions {sorted(versions)}")
    return RadiomicFeatureVector(np.mean([v.values for v in vectors], axis=0), versions.pop())


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def format_feature_csv(rows: Mapping[str, RadiomicFeatureVector]) -> str:
    """``case_id`` followed by the 20 named columns, ``repr`` floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("case_id",) + SCHEMA.names)
    for case_id, vec in rows.items():
        check_schema(vec)
        w.writerow([case_id] + [repr(float(x)) for x in vec.values])
    return buf.getvalue()


def parse_feature_csv(text: str) -> dict:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != ("case_id",) + SCHEMA.names:
        raise SchemaMismatchError("feature CSV header does not match schema " + SCHEMA_VERSION)
    return {row[0]: RadiomicFeatureVector([float(x) for x in row[1:]]) for row in reader if row}
