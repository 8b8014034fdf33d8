"""BMAC spoil characterisation: weighted attribute vote and shear-strength lookup."""
from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .errors import InvalidCategory, MissingAttribute

TIE_TOLERANCE = 1e-9
CATEGORIES = (1, 2, 3, 4)


class SpoilAttribute(enum.Enum):
    PARTICLE_SIZE = "particle_size"
    # consistency (cohesive) and relative density (cohesionless) share one weight
    CONSISTENCY_OR_DENSITY = "consistency_or_density"
    FABRIC_STRUCTURE = "fabric_structure"
    PLASTICITY = "plasticity"


DEFAULT_WEIGHTS: Mapping[SpoilAttribute, float] = {
    SpoilAttribute.PARTICLE_SIZE: 11.6,
    SpoilAttribute.CONSISTENCY_OR_DENSITY: 26.9,
    SpoilAttribute.FABRIC_STRUCTURE: 26.9,
    SpoilAttribute.PLASTICITY: 34.6,
}

# dataset label columns that feed each weighted attribute
TARGET_TO_ATTRIBUTE = {
    "particle_size": SpoilAttribute.PARTICLE_SIZE,
    "relative_density": SpoilAttribute.CONSISTENCY_OR_DENSITY,
    "fabric_structure": SpoilAttribute.FABRIC_STRUCTURE,
    "plasticity": SpoilAttribute.PLASTICITY,
}


class MobilisationMode(enum.Enum):
    UNSATURATED = "unsaturated"
    SATURATED = "saturated"
    REMOULDED = "remoulded"


@dataclass(frozen=True)
class Measured:
    """A tabulated value with its parenthesised companion, stored verbatim."""

    value: float
    spread: float

    def __str__(self):
        return f"{self.value:g} ({self.spread:g})"


@dataclass(frozen=True)
class ShearStrengthParams:
    unit_weight: Optional[Measured]  # kN/m^3, not tabulated for remoulded spoil
    cohesion: Measured  # kPa
    friction_angle: Measured  # degrees


@dataclass(frozen=True)
class BmacAssessment:
    cumulative: Mapping[int, float]
    assigned_category: int
    tie: bool
    labels: Mapping[SpoilAttribute, int]


def _m(value, spread):
    return Measured(float(value), float(spread))


_ZERO = _m(0, 0)

STRENGTH_TABLE: Mapping[tuple, ShearStrengthParams] = {
    (1, MobilisationMode.UNSATURATED): ShearStrengthParams(_m(18, 1), _m(20, 10), _m(25, 2.5)),
    (2, MobilisationMode.UNSATURATED): ShearStrengthParams(_m(18, 1), _m(30, 15), _m(28, 3)),
    (3, MobilisationMode.UNSATURATED): ShearStrengthParams(_m(18, 1), _m(50, 15), _m(30, 2)),
    (4, MobilisationMode.UNSATURATED): ShearStrengthParams(_m(18, 1), _m(50, 15), _m(35, 2.5)),
    (1, MobilisationMode.SATURATED): ShearStrengthParams(_m(20, 1), _m(0, 0), _m(18, 3)),
    (2, MobilisationMode.SATURATED): ShearStrengthParams(_m(20, 1), _m(15, 7.5), _m(23, 2.5)),
    (3, MobilisationMode.SATURATED): ShearStrengthParams(_m(20, 1), _m(20, 10), _m(25, 2.5)),
    (4, MobilisationMode.SATURATED): ShearStrengthParams(_m(20, 1), _m(0, 0), _m(30, 1.5)),
    (1, MobilisationMode.REMOULDED): ShearStrengthParams(None, _ZERO, _m(18, 1.5)),
    (2, MobilisationMode.REMOULDED): ShearStrengthParams(None, _ZERO, _m(18, 1.5)),
    (3, MobilisationMode.REMOULDED): ShearStrengthParams(None, _ZERO, _m(18, 1.5)),
    (4, MobilisationMode.REMOULDED): ShearStrengthParams(None, _ZERO, _m(28, 2)),
}


def _check_category(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value not in CATEGORIES:
        raise InvalidCategory(f"category must be an integer in 1..4, got {value!r}")
    return value


def score_bmac(
    labels: Mapping[SpoilAttribute, int],
    weights: Mapping[SpoilAttribute, float] = DEFAULT_WEIGHTS,
) -> BmacAssessment:
    """Sum attribute weights per category and pick the heaviest category.

    On a tie (within ``TIE_TOLERANCE``) the lowest-numbered tied category is
    assigned and ``tie`` is set.
    """
    for attr in SpoilAttribute:
        if attr not in labels:
            raise MissingAttribute(f"no category given for {attr.value}")
        w = weights.get(attr)
        if w is None or not (w > 0 and math.isfinite(w)):
            raise ValueError(f"weight for {attr.value} must be positive, got {w!r}")
    cumulative = {c: 0.0 for c in CATEGORIES}
    for attr in SpoilAttribute:
        cumulative[_check_category(labels[attr])] += float(weights[attr])
    best = max(cumulative.values())
    tied = [c for c in CATEGORIES if best - cumulative[c] <= TIE_TOLERANCE]
    return BmacAssessment(
        cumulative=cumulative,
        assigned_category=tied[0],
        tie=len(tied) > 1,
        labels={a: labels[a] for a in SpoilAttribute},
    )


def lookup_strength(category: int, mode: MobilisationMode) -> ShearStrengthParams:
    _check_category(category)
    return STRENGTH_TABLE[(category, MobilisationMode(mode))]


_CAT_RE = re.compile(r"^\s*(?:cat-?\s*)?([1-4])\s*$", re.IGNORECASE)


def parse_category(text) -> int:
    """Accept ``3``, ``"3"`` or ``"Cat-3"``; combined labels are rejected."""
    if isinstance(text, int) and not isinstance(text, bool):
        return _check_category(text)
    match = _CAT_RE.match(str(text))
    if not match:
        raise InvalidCategory(f"{text!r} is not a single category 1..4")
    return int(match.group(1))


SCORE_COLUMNS = ["sample_id"] + [a.value for a in SpoilAttribute]


def score_rows(rows: Iterable[Mapping[str, str]], weights=DEFAULT_WEIGHTS,
               with_strength: bool = False):
    """Score dict rows carrying ``sample_id`` and the four attribute columns."""
    for row in rows:
        labels = {}
        for attr in SpoilAttribute:
            if attr.value not in row or row[attr.value] in (None, ""):
                raise MissingAttribute(f"row {row.get('sample_id')!r} lacks {attr.value}")
            labels[attr] = parse_category(row[attr.value])
        result = score_bmac(labels, weights)
        out = dict(row)
        out["assigned_category"] = result.assigned_category
        out["tie"] = str(result.tie).lower()
        if with_strength:
            for mode in MobilisationMode:
                p = lookup_strength(result.assigned_category, mode)
                for name, m in (("unit_weight", p.unit_weight), ("cohesion", p.cohesion),
                                ("friction_angle", p.friction_angle)):
                    out[f"{mode.value}_{name}"] = "" if m is None else m.value
                    out[f"{mode.value}_{name}_spread"] = "" if m is None else m.spread
        yield out


def score_file(in_path, out_path, weights=DEFAULT_WEIGHTS, with_strength=False,
               delimiter=","):
    """Batch scoring of a delimited file; returns the number of rows written."""
    with open(in_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter=delimiter))
    scored = list(score_rows(rows, weights, with_strength))
    fields = list(rows[0].keys()) if rows else list(SCORE_COLUMNS)
    fields += [k for k in (scored[0].keys() if scored else ["assigned_category", "tie"])
               if k not in fields]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, delimiter=delimiter)
        writer.writeheader()
        writer.writerows(scored)
    return len(scored)
