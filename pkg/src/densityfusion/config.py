"""Run configuration: a flat ``key=value`` file.

Recognised keys::

    segment.hotspot_k            float
    segment.min_hotspot_area     int
    segment.vesselness_scales    comma-separated floats
    segment.vessel_hysteresis    low,high percentiles
    segment.areola_radius        int
    segment.ambient_cutoff       float
    bscore.cuts                  four comma-separated floats
    mammo.threshold              float
    fusion.policy                DENSITY_INFORMED | OR_RULE | MAMMO_ONLY | THERMAL_ONLY | ALL
    train.lambda                 float
    train.iters                  int
    seed                         int

Blank lines and ``#`` comments are ignored.  Unknown keys are an error so
typos do not silently fall back to defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import RangeError, ScreeningError
from .fusion import FusionPolicy
from .risk import MAMMO_THRESHOLD, BScoreBins
from .segment import SegmentationParams


def _floats(v: str) -> tuple:
    return tuple(float(x) for x in v.split(",") if x.strip())


_SEGMENT_KEYS = {
    "hotspot_k": float,
    "min_hotspot_area": int,
    "vesselness_scales": _floats,
    "vessel_hysteresis": _floats,
    "areola_radius": int,
    "ambient_cutoff": float,
}


@dataclass(frozen=True)
class RunConfig:
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    bins: BScoreBins = field(default_factory=BScoreBins)
    mammo_threshold: float = MAMMO_THRESHOLD
    policy: Optional[FusionPolicy] = None  # None means every applicable policy
    train_lambda: float = 0.1
    train_iters: int = 500
    seed: int = 0


def parse_key_values(text: str, where: str = "config") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise RangeError(f"{where}:{lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def parse_policy(value: str) -> Optional[FusionPolicy]:
    return None if value.strip().upper() == "ALL" else FusionPolicy.parse(value)


def config_from_dict(kv: dict, where: str = "config") -> RunConfig:
    seg, cfg = {}, {}
    try:
        for key, value in kv.items():
            if key.startswith("segment."):
                name = key[len("segment."):]
                if name not in _SEGMENT_KEYS:
                    raise RangeError(f"{where}: unknown key {key!r}")
                seg[name] = _SEGMENT_KEYS[name](value)
            elif key == "bscore.cuts":
                cfg["bins"] = BScoreBins(_floats(value))
            elif key == "mammo.threshold":
                cfg["mammo_threshold"] = float(value)
            elif key == "fusion.policy":
                cfg["policy"] = parse_policy(value)
            elif key == "train.lambda":
                cfg["train_lambda"] = float(value)
            elif key == "train.iters":
                cfg["train_iters"] = int(value)
            elif key == "seed":
                cfg["seed"] = int(value)
            else:
                raise RangeError(f"{where}: unknown key {key!r}")
    except ScreeningError:
        raise
    except (ValueError, TypeError) as exc:
        raise RangeError(f"{where}: {exc}") from None
    return RunConfig(segmentation=SegmentationParams(**seg), **cfg)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(parse_key_values(fh.read(), str(path)), str(path))


def with_overrides(cfg: RunConfig, policy: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """Command-line flags take precedence over file values."""
    if policy is not None:
        cfg = replace(cfg, policy=parse_policy(policy))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg
