"""Case manifests, radiometric frame files and synthetic phantoms.

Manifest schema (UTF-8 CSV, LF line endings)::

    case_id,age,menopause,density,mammo_prob,thermal_ref,ground_truth

``mammo_prob`` and ``thermal_ref`` may be empty.  ``thermal_ref`` is a path
relative to the manifest's directory; several views may be joined with ``;``.

Frame formats:

* ``*.csv``: comma-separated decimal degrees Celsius, one image row per line.
* ``*.pgm``: binary P5, 16-bit big-endian (8-bit accepted when maxval < 256),
  with a sidecar ``*.cal`` holding ``scale=<float> offset=<float>``;
  temperature = raw * scale + offset.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ACRDensity, CaseRecord, GroundTruth, Side, ThermalFrame, View
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    DuplicateIdError,
    MissingColumnError,
    NonFiniteTemperatureError,
    RangeError,
    SpecOverflowError,
)

MANIFEST_COLUMNS = ("case_id", "age", "menopause", "density", "mammo_prob", "thermal_ref", "ground_truth")

_TRUE = {"true", "1", "yes", "y"}
_FALSE = {"false", "0", "no", "n"}


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _parse_bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise RangeError(f"{where}: menopause {text!r} is not a boolean")


def _parse_row(row: dict, lineno: int) -> CaseRecord:
    where = f"line {lineno}"
    try:
        age = int(row["age"])
    except ValueError:
        raise RangeError(f"{where}: age {row['age']!r} is not an integer") from None
    prob_text = row["mammo_prob"].strip()
    if prob_text:
        try:
            prob = float(prob_text)
        except ValueError:
            raise RangeError(f"{where}: mammo_prob {prob_text!r} is not a number") from None
        if not (math.isfinite(prob) and 0.0 <= prob <= 1.0):
            raise RangeError(f"{where}: mammo_prob {prob} outside [0, 1]")
    else:
        prob = None
    return CaseRecord(
        case_id=row["case_id"].strip(),
        age=age,
        menopause=_parse_bool(row["menopause"], where),
        density=ACRDensity.parse(row["density"]),
        ground_truth=GroundTruth.parse(row["ground_truth"]),
        mammo_prob=prob,
        thermal_ref=row["thermal_ref"].strip() or None,
    )


def parse_manifest(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise MissingColumnError(f"manifest lacks column(s): {', '.join(missing)}")
    cases, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        case = _parse_row(row, lineno)
        if case.case_id in seen:
            raise DuplicateIdError(f"line {lineno}: duplicate case_id {case.case_id!r}")
        seen.add(case.case_id)
        cases.append(case)
    return cases


def load_manifest(path) -> list:
    """Read a case manifest; rows keep file order."""
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def format_manifest(cases: Sequence[CaseRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    for c in cases:
        w.writerow([
            c.case_id,
            c.age,
            "true" if c.menopause else "false",
            c.density.value,
            "" if c.mammo_prob is None else repr(float(c.mammo_prob)),
            c.thermal_ref or "",
            c.ground_truth.value,
        ])
    return buf.getvalue()


def write_manifest(cases: Sequence[CaseRecord], path) -> None:
    Path(path).write_text(format_manifest(cases), encoding="utf-8", newline="\n")


def resolve_thermal_refs(case: CaseRecord, base_dir) -> list:
    if not case.thermal_ref:
        return []
    return [Path(base_dir) / p.strip() for p in case.thermal_ref.split(";") if p.strip()]


# ---------------------------------------------------------------------------
# thermal frames
# ---------------------------------------------------------------------------

def calibration_path(pgm_path) -> Path:
    return Path(pgm_path).with_suffix(".cal")


def _read_calibration(path: Path) -> tuple:
    values = dict(re.findall(r"(scale|offset)\s*=\s*(\S+)", path.read_text(encoding="utf-8")))
    if set(values) != {"scale", "offset"}:
        raise BadMagicError(f"{path}: calibration needs 'scale=<float> offset=<float>'")
    return float(values["scale"]), float(values["offset"])


def _pgm_tokens(data: bytes, count: int):
    """Return the first ``count`` header tokens and the offset of the pixel data."""
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise DimensionMismatchError("truncated PGM header")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise BadMagicError(f"{path}: not a binary PGM (magic {data[:2]!r})")
    tokens, offset = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise BadMagicError(f"{path}: malformed PGM header") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise DimensionMismatchError(f"{path}: bad PGM geometry {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    raster = data[offset:]
    expected = width * height * dtype.itemsize
    if len(raster) != expected:
        raise DimensionMismatchError(f"{path}: expected {expected} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=dtype).reshape(height, width).astype(np.int64)


def write_pgm(raw: np.ndarray, path) -> None:
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise DimensionMismatchError("PGM raster must be 2-D")
    if raw.min() < 0 or raw.max() > 65535:
        raise RangeError("PGM raw values must lie in [0, 65535]")
    height, width = raw.shape
    header = f"P5\n{width} {height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + raw.astype(">u2").tobytes())


def _parse_csv_frame(text: str, path) -> np.ndarray:
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise DimensionMismatchError(f"{path}: empty frame")
    values = []
    for r in rows:
        try:
            values.append([float(tok) for tok in r.split(",")])
        except ValueError as exc:
            raise RangeError(f"{path}: {exc}") from None
    width = len(values[0])
    if any(len(v) != width for v in values):
        raise DimensionMismatchError(f"{path}: ragged rows in temperature CSV")
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteTemperatureError(f"{path}: NaN/inf temperature present")
    return arr


def load_thermal_frame(path, view: View = View.FRONTAL) -> ThermalFrame:
    """Load a frame from ``.csv`` (degrees C) or ``.pgm`` + ``.cal`` (raw counts)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        raw = read_pgm(path)
        scale, offset = _read_calibration(calibration_path(path))
        temps = raw * scale + offset
    else:
        temps = _parse_csv_frame(path.read_text(encoding="utf-8"), path)
    return ThermalFrame(temps, view)


def write_thermal_frame(frame: ThermalFrame, path, scale: float = 0.001, offset: float = 15.0) -> None:
    """Write ``frame``; PGM output quantizes to ``scale`` and writes the ``.cal`` sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        raw = np.rint((frame.temps - offset) / scale).astype(np.int64)
        write_pgm(raw, path)
        calibration_path(path).write_text(f"scale={scale!r} offset={offset!r}\n", encoding="utf-8")
    else:
        lines = (",".join(repr(float(v)) for v in row) for row in frame.temps)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and planted structures of a synthetic frontal thermogram.

    Hotspot centres are drawn at radial fractions ``hotspot_band`` of the
    lobe radius; vessels stay within ``vessel_extent`` of the lobe centre.
    """

    height: int = 184
    width: int = 320
    margin: int = 24
    ambient: float = 24.0
    torso_temp: float = 34.0
    lobe_temp: float = 31.0
    lobe_radius: float = 56.0
    hotspots_left: int = 0
    hotspots_right: int = 0
    hotspot_delta: float = 2.0
    hotspot_radius: float = 10.0
    hotspot_band: tuple = (0.62, 0.82)
    vessels_left: int = 0
    vessels_right: int = 0
    vessel_caliber: float = 3.0
    vessel_delta: float = 1.5
    vessel_length: tuple = (16.0, 24.0)
    vessel_extent: float = 0.6
    vessel_branching: bool = False
    areola_delta_left: float = 0.0
    areola_delta_right: float = 0.0
    areola_spread: float = 24.0
    noise: float = 0.0
    max_retries: int = 500

    def validate(self):
        counts = (self.hotspots_left, self.hotspots_right, self.vessels_left, self.vessels_right)
        if min(counts) < 0:
            raise RangeError("structure counts must be >= 0")
        for name in ("hotspot_delta", "vessel_delta"):
            dt = getattr(self, name)
            if not 0.0 < dt <= 5.0:
                raise RangeError(f"{name}={dt} outside (0, 5] C")
        for name in ("areola_delta_left", "areola_delta_right"):
            if not 0.0 <= getattr(self, name) <= 5.0:
                raise RangeError(f"{name} outside [0, 5] C")
        if self.hotspot_radius < 1 or self.vessel_caliber < 1:
            raise RangeError("radii and calibers must be >= 1 px")
        if self.noise < 0:
            raise RangeError("noise must be >= 0")
        lo, hi = self.hotspot_band
        if not 0.0 <= lo <= hi <= 1.0:
            raise RangeError("hotspot_band must satisfy 0 <= lo <= hi <= 1")

    @property
    def torso_box(self) -> tuple:
        """Inclusive (row0, row1, col0, col1) of the warm torso rectangle."""
        m = self.margin
        return m, self.height - 1 - m, m, self.width - 1 - m

    def lobe_centers(self) -> dict:
        r0, r1, c0, c1 = self.torso_box
        mid_col = (self.width - 1) / 2.0
        row = (r0 + r1) / 2.0
        left_col = (c0 + mid_col) / 2.0
        return {Side.LEFT: (row, left_col), Side.RIGHT: (row, self.width - 1 - left_col)}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        kwargs = dict(d)
        for key in ("hotspot_band", "vessel_length"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class HotspotTruth:
    side: str
    center: tuple
    radius: float
    delta: float


@dataclass(frozen=True)
class VesselTruth:
    side: str
    segments: tuple  # ((r0, c0), (r1, c1)) pairs; one for straight, three for Y
    caliber: float
    delta: float

    @property
    def branching(self) -> bool:
        return len(self.segments) > 1


@dataclass(frozen=True)
class PhantomTruth:
    hotspots: tuple
    vessels: tuple
    areola_centers: dict
    lobe_centers: dict
    lobe_radius: float
    spec: PhantomSpec
    seed: int

    def hotspots_on(self, side: Side) -> list:
        return [h for h in self.hotspots if h.side == side.value]

    def vessels_on(self, side: Side) -> list:
        return [v for v in self.vessels if v.side == side.value]

    def to_json(self) -> str:
        d = {
            "seed": self.seed,
            "lobe_radius": self.lobe_radius,
            "lobe_centers": {k.value: list(v) for k, v in self.lobe_centers.items()},
            "areola_centers": {k.value: list(v) for k, v in self.areola_centers.items()},
            "hotspots": [asdict(h) for h in self.hotspots],
            "vessels": [asdict(v) for v in self.vessels],
            "spec": asdict(self.spec),
        }
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PhantomTruth":
        d = json.loads(text)
        tup = lambda pts: tuple(tuple(p) for p in pts)  # noqa: E731
        return cls(
            hotspots=tuple(HotspotTruth(h["side"], tuple(h["center"]), h["radius"], h["delta"])
                           for h in d["hotspots"]),
            vessels=tuple(VesselTruth(v["side"], tuple(tup(s) for s in v["segments"]),
                                      v["caliber"], v["delta"]) for v in d["vessels"]),
            areola_centers={Side(k): tuple(v) for k, v in d["areola_centers"].items()},
            lobe_centers={Side(k): tuple(v) for k, v in d["lobe_centers"].items()},
            lobe_radius=d["lobe_radius"],
            spec=PhantomSpec.from_dict(d["spec"]),
            seed=d["seed"],
        )


def _grid(spec: PhantomSpec):
    return np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)


def lobe_masks(spec: PhantomSpec) -> dict:
    """Pixel sets of the two synthetic breast lobes."""
    rr, cc = _grid(spec)
    return {side: np.hypot(rr - r, cc - c) <= spec.lobe_radius
            for side, (r, c) in spec.lobe_centers().items()}


def base_field(spec: PhantomSpec) -> np.ndarray:
    """Ambient background, torso plateau, and two cosine-shaped cool lobes."""
    rr, cc = _grid(spec)
    r0, r1, c0, c1 = spec.torso_box
    temps = np.full((spec.height, spec.width), spec.ambient)
    torso = (rr >= r0) & (rr <= r1) & (cc >= c0) & (cc <= c1)
    temps[torso] = spec.torso_temp
    depth = spec.torso_temp - spec.lobe_temp
    for r, c in spec.lobe_centers().values():
        u = np.hypot(rr - r, cc - c) / spec.lobe_radius
        inside = u < 1.0
        temps[inside] -= depth * 0.5 * (1.0 + np.cos(np.pi * u[inside]))
    return temps


def _segment_distance(rr, cc, p0, p1):
    (r0, c0), (r1, c1) = p0, p1
    dr, dc = r1 - r0, c1 - c0
    denom = dr * dr + dc * dc
    t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / denom, 0.0, 1.0)
    return np.hypot(rr - (r0 + t * dr), cc - (c0 + t * dc))


def _point_segment_distance(p, seg) -> float:
    d = _segment_distance(np.array([p[0]]), np.array([p[1]]), *seg)
    return float(d[0])


def _segments_distance(s, t) -> float:
    # 2-D segments: min over endpoint-to-segment distances, zero if they cross
    (a, b), (c, d) = s, t

    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    if (orient(a, b, c) * orient(a, b, d) < 0) and (orient(c, d, a) * orient(c, d, b) < 0):
        return 0.0
    return min(_point_segment_distance(a, t), _point_segment_distance(b, t),
               _point_segment_distance(c, s), _point_segment_distance(d, s))


def _vessel_segments(rng, center, spec):
    length = rng.uniform(*spec.vessel_length)
    theta = rng.uniform(0.0, np.pi)
    dr, dc = np.sin(theta), np.cos(theta)
    reach = spec.vessel_extent * spec.lobe_radius
    if spec.vessel_branching:
        # trunk then two limbs diverging by +-40 degrees
        trunk, limb = 0.5 * length, 0.45 * length
        rho = rng.uniform(0.0, max(reach - trunk, 0.0))
        phi = rng.uniform(0.0, 2 * np.pi)
        p0 = (center[0] + rho * np.sin(phi), center[1] + rho * np.cos(phi))
        joint = (p0[0] + trunk * dr, p0[1] + trunk * dc)
        segs = [(p0, joint)]
        for turn in (-0.7, 0.7):
            a = theta + turn
            segs.append((joint, (joint[0] + limb * np.sin(a), joint[1] + limb * np.cos(a))))
        return tuple(segs)
    rho = rng.uniform(0.0, max(reach - length / 2, 0.0))
    phi = rng.uniform(0.0, 2 * np.pi)
    mid = (center[0] + rho * np.sin(phi), center[1] + rho * np.cos(phi))
    half = length / 2
    p0 = (mid[0] - half * dr, mid[1] - half * dc)
    p1 = (mid[0] + half * dr, mid[1] + half * dc)
    return ((p0, p1),)


def _round_pt(p):
    return (round(float(p[0]), 6), round(float(p[1]), 6))


def generate_phantom(spec: PhantomSpec, seed: int = 0):
    """Render a phantom frame and return it with the exact planted truth.

    The frame is the base field plus Gaussian hotspot bumps (std = radius/2),
    anti-aliased vessel bars of the planted caliber, broad Gaussian areolar
    bumps and i.i.d. Gaussian noise.  Output is a pure function of
    ``(spec, seed)``.

    Raises
    ------
    SpecOverflowError
        If the structures cannot be placed without overlap within
        ``spec.max_retries`` draws each.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    centers = spec.lobe_centers()
    R = spec.lobe_radius
    hotspots, vessels = [], []

    def draw(n, side, make, ok, placed):
        for _ in range(n):
            for _attempt in range(spec.max_retries):
                item = make(side)
                if ok(item, side):
                    placed.append(item)
                    break
            else:
                raise SpecOverflowError(
                    f"could not place structure on {side.value} side after {spec.max_retries} tries")

    def make_vessel(side):
        segs = _vessel_segments(rng, centers[side], spec)
        segs = tuple((_round_pt(a), _round_pt(b)) for a, b in segs)
        return VesselTruth(side.value, segs, float(spec.vessel_caliber), float(spec.vessel_delta))

    def vessel_ok(v, side):
        cr, cc = centers[side]
        reach = spec.vessel_extent * R
        for a, b in v.segments:
            if max(np.hypot(a[0] - cr, a[1] - cc), np.hypot(b[0] - cr, b[1] - cc)) > reach:
                return False
        gap = spec.vessel_caliber + 6.0
        for other in vessels:
            for s in v.segments:
                for t in other.segments:
                    if _segments_distance(s, t) < gap:
                        return False
        return True

    def make_hotspot(side):
        lo, hi = spec.hotspot_band
        rho = R * rng.uniform(lo, hi)
        phi = rng.uniform(0.0, 2 * np.pi)
        cr, cc = centers[side]
        return HotspotTruth(side.value, _round_pt((cr + rho * np.sin(phi), cc + rho * np.cos(phi))),
                            float(spec.hotspot_radius), float(spec.hotspot_delta))

    def hotspot_ok(h, side):
        cr, cc = centers[side]
        if np.hypot(h.center[0] - cr, h.center[1] - cc) + h.radius > R:
            return False
        for o in hotspots:
            if np.hypot(h.center[0] - o.center[0], h.center[1] - o.center[1]) < h.radius + o.radius + 6:
                return False
        for v in vessels:
            for s in v.segments:
                if _point_segment_distance(h.center, s) < h.radius + v.caliber + 8:
                    return False
        return True

    for side, n in ((Side.LEFT, spec.vessels_left), (Side.RIGHT, spec.vessels_right)):
        draw(n, side, make_vessel, vessel_ok, vessels)
    for side, n in ((Side.LEFT, spec.hotspots_left), (Side.RIGHT, spec.hotspots_right)):
        draw(n, side, make_hotspot, hotspot_ok, hotspots)

    temps = base_field(spec)
    rr, cc = _grid(spec)
    for h in hotspots:
        s = h.radius / 2.0
        d2 = (rr - h.center[0]) ** 2 + (cc - h.center[1]) ** 2
        temps += h.delta * np.exp(-d2 / (2 * s * s))
    for v in vessels:
        d = np.min([_segment_distance(rr, cc, *seg) for seg in v.segments], axis=0)
        temps += v.delta * np.clip(v.caliber / 2 + 0.5 - d, 0.0, 1.0)
    areola_deltas = {Side.LEFT: spec.areola_delta_left, Side.RIGHT: spec.areola_delta_right}
    for side, (r, c) in centers.items():
        if areola_deltas[side] > 0:
            d2 = (rr - r) ** 2 + (cc - c) ** 2
            temps += areola_deltas[side] * np.exp(-d2 / (2 * spec.areola_spread ** 2))
    if spec.noise > 0:
        temps = temps + rng.normal(0.0, spec.noise, size=temps.shape)

    truth = PhantomTruth(
        hotspots=tuple(hotspots),
        vessels=tuple(vessels),
        areola_centers=dict(centers),
        lobe_centers=dict(centers),
        lobe_radius=R,
        spec=spec,
        seed=seed,
    )
    return ThermalFrame(temps), truth
