"""Feature schema and concrete predictor points.

A `FeatureSpace` declares the K predictors a model scores: their names,
the direction (if any) in which default probability is known to move with
each one, and whether an applicant can realistically change the value.
A `FeaturePoint` is one applicant's K-vector, aligned to a space.

All types here are immutable; they can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import SchemaError

INCREASING = "increasing"
DECREASING = "decreasing"
NONE = "none"

_DIRECTIONS = (INCREASING, DECREASING, NONE)


@dataclass(frozen=True)
class FeatureSpace:
    """Ordered predictor schema.

    Parameters
    ----------
    names : feature identifiers, unique and non-empty, order fixes the
        meaning of every K-vector in the system.
    monotone : per-feature direction of the default probability in that
        feature: "increasing", "decreasing", or "none". Defaults to "none".
    mutable : per-feature flag, True when the applicant can change the
        value (used by reference-point policies). Defaults to True.
    """

    names: tuple[str, ...]
    monotone: tuple[str, ...] = ()
    mutable: tuple[bool, ...] = ()

    def __post_init__(self):
        names = tuple(self.names)
        if len(names) < 1:
            raise SchemaError("a feature space needs at least one feature")
        if any(not isinstance(n, str) or not n for n in names):
            raise SchemaError("feature names must be non-empty strings")
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        monotone = tuple(self.monotone) or (NONE,) * len(names)
        mutable = tuple(self.mutable) or (True,) * len(names)
        if len(monotone) != len(names) or len(mutable) != len(names):
            raise SchemaError(
                "monotone and mutable entries must match the number of features"
            )
        bad = [d for d in monotone if d not in _DIRECTIONS]
        if bad:
            raise SchemaError(f"unknown monotone direction(s): {bad}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "monotone", monotone)
        object.__setattr__(self, "mutable", tuple(bool(m) for m in mutable))

    def __len__(self) -> int:
        return len(self.names)

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def direction(self, name: str) -> str:
        return self.monotone[self.index(name)]

    def is_mutable(self, name: str) -> bool:
        return self.mutable[self.index(name)]

    def point(self, *values: float) -> "FeaturePoint":
        """Build a validated point in this space."""
        return FeaturePoint.of(values, space=self)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "features": [
                {"name": n, "monotone": d, "mutable": m}
                for n, d, m in zip(self.names, self.monotone, self.mutable)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureSpace":
        try:
            feats = doc["features"]
            return cls(
                names=tuple(f["name"] for f in feats),
                monotone=tuple(f.get("monotone", NONE) for f in feats),
                mutable=tuple(f.get("mutable", True) for f in feats),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed feature-space document: {exc}") from exc


@dataclass(frozen=True)
class FeaturePoint:
    """One applicant's predictor vector, aligned to a `FeatureSpace`."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(not math.isfinite(v) for v in vals):
            raise SchemaError(f"point values must be finite, got {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def of(
        cls, values: Iterable[float], space: FeatureSpace | None = None
    ) -> "FeaturePoint":
        p = cls(tuple(float(v) for v in values))
        if space is not None and len(p.values) != len(space):
            raise SchemaError(
                f"point has {len(p.values)} values but the space has "
                f"{len(space)} features"
            )
        return p

    def __len__(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


PointLike = Union[FeaturePoint, Sequence[float], np.ndarray]


def as_vector(point: PointLike, space: FeatureSpace) -> np.ndarray:
    """Coerce a point-like object to a validated float vector of length K."""
    if isinstance(point, FeaturePoint):
        vec = point.array
    else:
        vec = np.asarray(point, dtype=np.float64).reshape(-1)
    if vec.shape != (len(space),):
        raise SchemaError(
            f"point has shape {vec.shape}, expected ({len(space)},) for this space"
        )
    if not np.all(np.isfinite(vec)):
        raise SchemaError("point values must be finite")
    return vec
