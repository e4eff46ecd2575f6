"""Domain types shared across the pipeline.

All records are frozen dataclasses; array-valued fields are stored as
read-only numpy arrays so values can be handed to worker processes or
cached without defensive copies.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadEnumError, OutOfPhysioRangeError, NonFiniteTemperatureError, RangeError

PHYSIO_MIN_C = 15.0
PHYSIO_MAX_C = 45.0


class ACRDensity(enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"

    @classmethod
    def parse(cls, value: str) -> "ACRDensity":
        try:
            return cls(value.strip().upper())
        except ValueError:
            raise BadEnumError(f"density {value!r} not in A-D") from None


class DensityClass(enum.Enum):
    FATTY = "FATTY"
    DENSE = "DENSE"


def classify_density(d: ACRDensity) -> DensityClass:
    """ACR A/B are fatty, C/D are dense."""
    return DensityClass.FATTY if d in (ACRDensity.A, ACRDensity.B) else DensityClass.DENSE


class GroundTruth(enum.Enum):
    SUSPICIOUS = "SUSPICIOUS"
    NOT_SUSPICIOUS = "NOT_SUSPICIOUS"

    @property
    def positive(self) -> bool:
        return self is GroundTruth.SUSPICIOUS

    @classmethod
    def parse(cls, value: str) -> "GroundTruth":
        try:
            return cls(value.strip().upper())
        except ValueError:
            raise BadEnumError(f"ground_truth {value!r} not SUSPICIOUS/NOT_SUSPICIOUS") from None


class View(enum.Enum):
    FRONTAL = "FRONTAL"
    LEFT_OBLIQUE = "LEFT_OBLIQUE"
    RIGHT_OBLIQUE = "RIGHT_OBLIQUE"


class Side(enum.Enum):
    # image-left / image-right of the body midline
    LEFT = "LEFT"
    RIGHT = "RIGHT"


class RiskBand(enum.Enum):
    LOW = "LOW"
    MODERATE = "MODERATE"
    HIGH = "HIGH"


class Source(enum.Enum):
    MAMMO_AI = "MAMMO_AI"
    THERMALYTIX_AI = "THERMALYTIX_AI"
    FUSED_DENSITY = "FUSED_DENSITY"
    FUSED_OR = "FUSED_OR"


# age band cut points: <30, 30-39, 40-49, 50-59, 60-69, >=70
AGE_BANDS = ("<30", "30-39", "40-49", "50-59", "60-69", ">=70")


def age_band(age: int) -> str:
    if age < 30:
        return AGE_BANDS[0]
    if age >= 70:
        return AGE_BANDS[-1]
    return AGE_BANDS[(age - 20) // 10]


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    age: int
    menopause: bool
    density: ACRDensity
    ground_truth: GroundTruth
    mammo_prob: Optional[float] = None
    thermal_ref: Optional[str] = None

    def __post_init__(self):
        if not self.case_id:
            raise RangeError("case_id must be non-empty")
        if self.age < 18:
            raise RangeError(f"{self.case_id}: age {self.age} below 18")
        if self.mammo_prob is not None:
            p = self.mammo_prob
            if not (math.isfinite(p) and 0.0 <= p <= 1.0):
                raise RangeError(f"{self.case_id}: mammo_prob {p} outside [0, 1]")

    @property
    def density_class(self) -> DensityClass:
        return classify_density(self.density)


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ThermalFrame:
    """Calibrated temperature image in degrees Celsius, indexed ``temps[row, col]``."""

    temps: np.ndarray
    view: View = View.FRONTAL

    def __post_init__(self):
        t = _frozen(self.temps, dtype=np.float64)
        if t.ndim != 2 or t.size == 0:
            raise RangeError(f"temperature matrix must be 2-D and non-empty, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise NonFiniteTemperatureError("frame contains NaN or infinite temperatures")
        lo, hi = float(t.min()), float(t.max())
        if lo < PHYSIO_MIN_C or hi > PHYSIO_MAX_C:
            raise OutOfPhysioRangeError(
                f"temperatures span [{lo:.3f}, {hi:.3f}] C, allowed [{PHYSIO_MIN_C}, {PHYSIO_MAX_C}]"
            )
        object.__setattr__(self, "temps", t)

    @property
    def height(self) -> int:
        return self.temps.shape[0]

    @property
    def width(self) -> int:
        return self.temps.shape[1]

    def mirrored(self) -> "ThermalFrame":
        return ThermalFrame(self.temps[:, ::-1], self.view)


@dataclass(frozen=True)
class BreastMask:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = _frozen(self.left, dtype=bool)
        right = _frozen(self.right, dtype=bool)
        if left.shape != right.shape:
            raise RangeError("left/right masks differ in shape")
        if np.any(left & right):
            raise RangeError("left and right breast masks overlap")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def side(self, side: Side) -> np.ndarray:
        return self.left if side is Side.LEFT else self.right

    @property
    def union(self) -> np.ndarray:
        return self.left | self.right


@dataclass(frozen=True)
class Hotspot:
    label: int
    area: int
    peak: float
    centroid: tuple  # (row, col)


@dataclass(frozen=True)
class HotspotMap:
    labels: np.ndarray
    hotspots: tuple = ()
    side: Optional[Side] = None
    baseline: float = 0.0  # mean temperature of the side mask

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen(self.labels, dtype=np.int32))
        object.__setattr__(self, "hotspots", tuple(self.hotspots))

    def __len__(self):
        return len(self.hotspots)

    @property
    def total_area(self) -> int:
        return sum(h.area for h in self.hotspots)


@dataclass(frozen=True)
class GraphNode:
    row: float
    col: float
    degree: int

    @property
    def is_branch(self) -> bool:
        return self.degree >= 3


@dataclass(frozen=True)
class GraphEdge:
    pixels: tuple  # ((row, col), ...) along the skeleton
    caliber: float
    nodes: tuple  # indices into VascularGraph.nodes

    @property
    def length(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class VascularGraph:
    skeleton: np.ndarray
    nodes: tuple = ()
    edges: tuple = ()
    side: Side = Side.LEFT

    def __post_init__(self):
        object.__setattr__(self, "skeleton", _frozen(self.skeleton, dtype=bool))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def branch_nodes(self) -> list:
        return [n for n in self.nodes if n.is_branch]

    @property
    def mean_caliber(self) -> float:
        if not self.edges:
            return 0.0
        return float(np.mean([e.caliber for e in self.edges]))


@dataclass(frozen=True)
class BScore:
    grade: int

    def __post_init__(self):
        if self.grade not in (1, 2, 3, 4, 5):
            raise RangeError(f"B-Score grade {self.grade} not in 1..5")

    @property
    def band(self) -> RiskBand:
        if self.grade <= 2:
            return RiskBand.LOW
        if self.grade == 3:
            return RiskBand.MODERATE
        return RiskBand.HIGH


@dataclass(frozen=True)
class TestResult:
    positive: bool
    source: Source

    __test__ = False  # not a pytest class


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise RangeError(f"{name} must be non-negative")

    @property
    def n_pos(self) -> int:
        return self.tp + self.fn

    @property
    def n_neg(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.n_pos + self.n_neg

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def as_tuple(self) -> tuple:
        return (self.tp, self.fp, self.tn, self.fn)


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a 95% interval, all in percent."""

    point: float
    ci_lo: float
    ci_hi: float


METRIC_NAMES = ("sensitivity", "specificity", "ppv", "npv", "balanced_accuracy")


@dataclass(frozen=True)
class MetricReport:
    sensitivity: Optional[Estimate]
    specificity: Optional[Estimate]
    ppv: Optional[Estimate]
    npv: Optional[Estimate]
    balanced_accuracy: Optional[Estimate]
    n_pos: int = 0
    n_neg: int = 0
    counts: Optional[ConfusionCounts] = field(default=None, compare=False)

    def items(self):
        for name in METRIC_NAMES:
            yield name, getattr(self, name)
