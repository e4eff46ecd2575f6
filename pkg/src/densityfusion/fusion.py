"""Combining the mammography and thermal calls per case."""
from __future__ import annotations

import enum
from typing import Optional, Sequence

from .core import CaseRecord, DensityClass, Source, TestResult
from .errors import BadEnumError, LengthMismatchError, MissingRequiredModalityError


class FusionPolicy(enum.Enum):
    DENSITY_INFORMED = "DENSITY_INFORMED"
    OR_RULE = "OR_RULE"
    MAMMO_ONLY = "MAMMO_ONLY"
    THERMAL_ONLY = "THERMAL_ONLY"

    @classmethod
    def parse(cls, value: str) -> "FusionPolicy":
        key = value.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise BadEnumError(f"unknown fusion policy {value!r}") from None


def route_density_informed(case: CaseRecord, mammo: Optional[TestResult],
                           thermal: Optional[TestResult]) -> TestResult:
    """Mammography call for fatty breasts, thermal call for dense ones.

    Only the selected modality is touched.
    """
    if case.density_class is DensityClass.FATTY:
        if mammo is None:
            raise MissingRequiredModalityError(
                f"{case.case_id}: density {case.density.value} needs a mammography result",
                case_ids=[case.case_id])
        return TestResult(mammo.positive, Source.FUSED_DENSITY)
    if thermal is None:
        raise MissingRequiredModalityError(
            f"{case.case_id}: density {case.density.value} needs a thermal result",
            case_ids=[case.case_id])
    return TestResult(thermal.positive, Source.FUSED_DENSITY)


def combine_or(mammo: TestResult, thermal: TestResult) -> TestResult:
    return TestResult(mammo.positive or thermal.positive, Source.FUSED_OR)


def _apply(policy: FusionPolicy, case, mammo, thermal) -> TestResult:
    if policy is FusionPolicy.DENSITY_INFORMED:
        return route_density_informed(case, mammo, thermal)
    if policy is FusionPolicy.MAMMO_ONLY:
        if mammo is None:
            raise MissingRequiredModalityError(f"{case.case_id}: no mammography result",
                                               case_ids=[case.case_id])
        return mammo
    if policy is FusionPolicy.THERMAL_ONLY:
        if thermal is None:
            raise MissingRequiredModalityError(f"{case.case_id}: no thermal result",
                                               case_ids=[case.case_id])
        return thermal
    if mammo is None or thermal is None:
        raise MissingRequiredModalityError(f"{case.case_id}: OR rule needs both modalities",
                                           case_ids=[case.case_id])
    return combine_or(mammo, thermal)


def run_policy(policy: FusionPolicy, cases: Sequence[CaseRecord],
               mammo_results: Sequence[Optional[TestResult]],
               thermal_results: Sequence[Optional[TestResult]]) -> list:
    """Apply ``policy`` case by case, preserving input order.

    Every case missing its required modality is collected, and a single
    :class:`MissingRequiredModalityError` lists all offending case ids.
    """
    if not (len(cases) == len(mammo_results) == len(thermal_results)):
        raise LengthMismatchError(
            f"{len(cases)} cases, {len(mammo_results)} mammography and {len(thermal_results)} thermal results")
    out, missing = [], []
    for case, m, t in zip(cases, mammo_results, thermal_results):
        try:
            out.append(_apply(policy, case, m, t))
        except MissingRequiredModalityError:
            missing.append(case.case_id)
    if missing:
        raise MissingRequiredModalityError(
            f"{policy.value}: {len(missing)} case(s) lack the required modality: {', '.join(missing)}",
            case_ids=missing)
    return out
