"""Decide whether a classified value lies inside its standard range.

Heart rate is age-indexed, pulmonary artery diameter weight-indexed, SpO2 has
a strict lower bound, and contractility is split into ejection and shortening
fractions.  APGAR, gradients and septal-defect sizes are always routed to
expert review: no standard values are assigned to them.
"""

from __future__ import annotations

import bisect
import enum
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import OutOfTableRange
from .labels import ClassLabel
from .tokenizer import Date, NumericLexeme

CP_WINDOW = 5
EJECTION_HINTS = frozenset({"éjection", "ejection", "FE", "Simpson"})
SHORTENING_HINTS = frozenset({"raccourcissement"})
FR_SHORTENING_SPAN = (15.0, 45.0)

TOLERANCE_NOTE = "engineering tolerance, not clinically validated"


class Status(str, enum.Enum):
    NORMAL = "Normal"
    CRITICAL = "Critical"
    EXPERT_REVIEW = "ExpertReview"
    UNKNOWN = "Unknown"

    def __str__(self) -> str:
        return self.value


class RangePolicy(str, enum.Enum):
    """How a range or sequence of readings is judged."""

    ANY = "any"  # critical if any component is out of range
    ALL = "all"  # critical only if every component is out of range
    MIDPOINT = "midpoint"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PatientContext:
    age_months: Optional[float] = None
    weight_kg: Optional[float] = None

    def __post_init__(self):
        if self.age_months is not None and self.age_months < 0:
            raise ValueError(f"age must be >= 0 months, got {self.age_months}")
        if self.weight_kg is not None and self.weight_kg <= 0:
            raise ValueError(f"weight must be > 0 kg, got {self.weight_kg}")

    def to_json(self) -> dict:
        return {"age_months": self.age_months, "weight_kg": self.weight_kg}

    @classmethod
    def from_json(cls, obj: Optional[dict]) -> "PatientContext":
        obj = obj or {}
        return cls(obj.get("age_months"), obj.get("weight_kg"))


@dataclass(frozen=True)
class HeartRateBracket:
    name: str
    min_months: int
    max_months: Optional[int]
    lo: float
    hi: float


@dataclass(frozen=True)
class ThresholdTables:
    heart_rate: tuple[HeartRateBracket, ...]
    pulmonary_diameter: tuple[tuple[float, float], ...]
    diameter_tolerance: float = 0.20
    spo2_min: float = 96.0
    ejection: tuple[float, float] = (50.0, 70.0)
    shortening: tuple[float, float] = (20.0, 40.0)

    def __post_init__(self):
        brackets = self.heart_rate
        if not brackets or brackets[0].min_months != 0 or brackets[-1].max_months is not None:
            raise ValueError("heart-rate brackets must start at 0 months and be open-ended")
        for prev, cur in zip(brackets, brackets[1:]):
            if prev.max_months is None or cur.min_months != prev.max_months + 1:
                raise ValueError(f"heart-rate brackets not contiguous at {cur.name!r}")
        rows = self.pulmonary_diameter
        for (w0, d0), (w1, d1) in zip(rows, rows[1:]):
            if not (w1 > w0 and d1 > d0):
                raise ValueError("diameter rows must increase strictly in weight and diameter")

    @classmethod
    def from_json(cls, obj: dict) -> "ThresholdTables":
        hr = tuple(
            HeartRateBracket(r["bracket"], r["min_months"], r["max_months"], float(r["bpm"][0]), float(r["bpm"][1]))
            for r in obj["heart_rate"]
        )
        pd = obj["pulmonary_diameter"]
        return cls(
            heart_rate=hr,
            pulmonary_diameter=tuple((float(w), float(d)) for w, d in pd["rows"]),
            diameter_tolerance=float(pd.get("tolerance", 0.2)),
            spo2_min=float(obj["spo2"]["min_exclusive"]),
            ejection=tuple(map(float, obj["contractility"]["ejection"])),
            shortening=tuple(map(float, obj["contractility"]["shortening"])),
        )

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "ThresholdTables":
        if path is None:
            text = resources.files("clinnum").joinpath("data/thresholds.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_json(json.loads(text))


@dataclass(frozen=True)
class CriticalityVerdict:
    status: Status
    applied_range: Optional[tuple[Optional[float], Optional[float]]] = None
    note: str = ""

    def __post_init__(self):
        has_range = self.applied_range is not None
        if self.status in (Status.NORMAL, Status.CRITICAL) and not has_range:
            raise ValueError(f"{self.status} verdict requires an applied range")
        if self.status in (Status.EXPERT_REVIEW, Status.UNKNOWN) and has_range:
            raise ValueError(f"{self.status} verdict cannot carry a range")


def _bracket(age_months: float, tables: ThresholdTables) -> HeartRateBracket:
    if age_months < 0:
        raise ValueError("age must be >= 0")
    starts = [b.min_months for b in tables.heart_rate]
    return tables.heart_rate[bisect.bisect_right(starts, age_months) - 1]


def heart_rate_range(age_months: float, tables: ThresholdTables) -> tuple[float, float]:
    b = _bracket(age_months, tables)
    return b.lo, b.hi


def pulmonary_diameter_nominal(weight_kg: float, tables: ThresholdTables) -> float:
    """Nominal diameter in mm; linear interpolation between table rows."""
    rows = tables.pulmonary_diameter
    weights = [w for w, _ in rows]
    if weight_kg < weights[0] or weight_kg > weights[-1]:
        raise OutOfTableRange(f"{weight_kg} kg is outside the table range [{weights[0]}, {weights[-1]}] kg")
    i = bisect.bisect_left(weights, weight_kg)
    if weights[i] == weight_kg:
        return rows[i][1]
    (w0, d0), (w1, d1) = rows[i - 1], rows[i]
    return d0 + (d1 - d0) * (weight_kg - w0) / (w1 - w0)


def resolve_contractility(context: Sequence[str], components: Sequence[float]) -> Optional[str]:
    """'ejection', 'shortening' or None from hint tokens ordered nearest first."""
    for tok in context:
        if tok in EJECTION_HINTS or tok.lower() in EJECTION_HINTS:
            return "ejection"
        if tok.lower() in SHORTENING_HINTS:
            return "shortening"
        if tok == "FR":
            lo, hi = FR_SHORTENING_SPAN
            if components and all(lo <= v <= hi for v in components):
                return "shortening"
            return None
    return None


def _judge(components: Sequence[float], inside, policy: RangePolicy) -> bool:
    """True when the reading is critical under ``policy``."""
    if policy is RangePolicy.MIDPOINT:
        return not inside((min(components) + max(components)) / 2.0)
    outside = [not inside(v) for v in components]
    return all(outside) if policy is RangePolicy.ALL else any(outside)


def assess(
    value: NumericLexeme,
    label: ClassLabel,
    ctx: PatientContext,
    tables: ThresholdTables,
    policy: RangePolicy = RangePolicy.ANY,
    context: Sequence[str] = (),
) -> CriticalityVerdict:
    """Verdict for one classified value.

    ``context`` holds neighbouring token texts, nearest first; it is only
    consulted for contractility, to tell ejection from shortening fraction.
    """
    label = ClassLabel(label)
    policy = RangePolicy(policy)
    if label is ClassLabel.O:
        return CriticalityVerdict(Status.UNKNOWN, note="out-of-class value; no range applies")
    if label in (ClassLabel.APGAR, ClassLabel.G, ClassLabel.CIA_CIV):
        return CriticalityVerdict(Status.EXPERT_REVIEW, note="no standard range; evaluate individually")
    if isinstance(value.form, Date):
        return CriticalityVerdict(Status.UNKNOWN, note=f"date value cannot be assessed as {label.name}")
    comps = value.components

    if label is ClassLabel.SO2:
        lo = tables.spo2_min
        critical = _judge(comps, lambda v: v > lo, policy)
        note = f"> {lo:g}%"
        if critical:
            note += ("; below threshold, flagged even when it is the patient's habitual level"
                     " (clinicians may not treat a known cyanotic baseline as critical)")
        return _verdict(critical, (lo, None), note)

    if label is ClassLabel.FC:
        if ctx.age_months is None:
            return CriticalityVerdict(Status.UNKNOWN, note="heart rate needs patient age")
        b = _bracket(ctx.age_months, tables)
        critical = _judge(comps, lambda v: b.lo <= v <= b.hi, policy)
        return _verdict(critical, (b.lo, b.hi), f"age bracket {b.name}: {b.lo:g}-{b.hi:g} bpm")

    if label is ClassLabel.Cp:
        kind = resolve_contractility(context, comps)
        if kind is None:
            return CriticalityVerdict(Status.EXPERT_REVIEW, note="ejection vs shortening fraction unresolved")
        lo, hi = tables.ejection if kind == "ejection" else tables.shortening
        critical = _judge(comps, lambda v: lo <= v <= hi, policy)
        return _verdict(critical, (lo, hi), f"{kind} fraction {lo:g}-{hi:g}%")

    if label is ClassLabel.D:
        if ctx.weight_kg is None:
            return CriticalityVerdict(Status.UNKNOWN, note="pulmonary diameter needs patient weight")
        try:
            nominal = pulmonary_diameter_nominal(ctx.weight_kg, tables)
        except OutOfTableRange as exc:
            return CriticalityVerdict(Status.UNKNOWN, note=str(exc))
        tol = tables.diameter_tolerance
        lo, hi = nominal * (1 - tol), nominal * (1 + tol)
        critical = _judge(comps, lambda v: abs(v - nominal) <= tol * nominal, policy)
        note = f"nominal {nominal:.2f} mm at {ctx.weight_kg:g} kg ± {tol:.0%} ({TOLERANCE_NOTE})"
        return _verdict(critical, (lo, hi), note)

    raise AssertionError(f"unhandled label {label!r}")


def _verdict(critical: bool, rng, note: str) -> CriticalityVerdict:
    return CriticalityVerdict(Status.CRITICAL if critical else Status.NORMAL, rng, note)


def verdict_row(value: NumericLexeme, label: ClassLabel, verdict: CriticalityVerdict) -> dict:
    return {
        "value": value.raw,
        "label": ClassLabel(label).name,
        "status": verdict.status.value,
        "range": list(verdict.applied_range) if verdict.applied_range else None,
        "note": verdict.note,
    }
