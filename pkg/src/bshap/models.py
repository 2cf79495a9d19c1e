"""Scoring models: additive components, link handling, and decisions.

A `ModelSpec` is a sum of components evaluated in link space. With the
logit link the score is the log-odds of default and the probability is
its logistic inverse; with the identity link the score is used as the
probability directly. Components come in three kinds:

* `Polynomial` -- coefficient times a product of feature powers,
* `Tabulated`  -- a 1- to 3-dimensional lookup table with piecewise-linear
  or piecewise-constant interpolation, clamped at the boundary knots,
* `Expression` -- an arbitrary parsed expression tree.

Everything is immutable and evaluation is pure, so models can be shared
across any number of concurrent readers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import expit

from . import expr as ex
from .errors import DomainError, ModelError, SchemaError
from .features import FeatureSpace, PointLike, as_vector

LOGIT = "logit"
IDENTITY = "identity"

ACCEPT = "accept"
DECLINE = "decline"

MAX_POLY_POWER = 8

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Polynomial:
    """coefficient * prod(feature ** power); empty factors = a constant."""

    coefficient: float
    factors: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "coefficient", float(self.coefficient))
        facs = tuple((str(n), int(p)) for n, p in self.factors)
        for name, power in facs:
            if power < 1 or power > MAX_POLY_POWER:
                raise ModelError(
                    f"polynomial power for {name!r} must be in 1..{MAX_POLY_POWER}, "
                    f"got {power}"
                )
        if len({n for n, _ in facs}) != len(facs):
            raise ModelError("polynomial factors must reference distinct features")
        object.__setattr__(self, "factors", facs)

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(n for n, _ in self.factors)

    def evaluate(self, X: np.ndarray, index_of: dict[str, int]) -> np.ndarray:
        out = np.full(X.shape[0], self.coefficient, dtype=np.float64)
        for name, power in self.factors:
            col = X[:, index_of[name]]
            out = out * (col if power == 1 else col**power)
        return out


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Lookup table over 1-3 features.

    `knots` holds one strictly increasing axis per variable and `values`
    the grid of table values, shaped by the knot counts. Points outside
    the knot box are clamped to the boundary and flagged as extrapolated.
    """

    variables: tuple[str, ...]
    knots: tuple[tuple[float, ...], ...]
    values: np.ndarray
    interpolation: str = "linear"  # "linear" | "constant"

    def __post_init__(self):
        variables = tuple(str(v) for v in self.variables)
        if not 1 <= len(variables) <= 3:
            raise ModelError("tabulated components cover 1 to 3 features")
        if len(set(variables)) != len(variables):
            raise ModelError("tabulated variables must be distinct")
        knots = tuple(tuple(float(k) for k in axis) for axis in self.knots)
        if len(knots) != len(variables):
            raise ModelError("one knot axis per tabulated variable is required")
        for axis in knots:
            if len(axis) < 2:
                raise ModelError("each knot axis needs at least two knots")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ModelError("knots must be strictly increasing")
        values = np.asarray(self.values, dtype=np.float64)
        expected = tuple(len(axis) for axis in knots)
        if values.shape != expected:
            raise ModelError(
                f"table values have shape {values.shape}, expected {expected}"
            )
        if not np.all(np.isfinite(values)):
            raise ModelError("table values must be finite")
        if self.interpolation not in ("linear", "constant"):
            raise ModelError(
                f"interpolation must be 'linear' or 'constant', "
                f"got {self.interpolation!r}"
            )
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "knots", knots)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        axes = [np.asarray(a) for a in self.knots]
        return RegularGridInterpolator(axes, self.values, method="linear")

    def evaluate(
        self, X: np.ndarray, index_of: dict[str, int]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (values, extrapolated-row mask)."""
        coords = [X[:, index_of[v]] for v in self.variables]
        extrapolated = np.zeros(X.shape[0], dtype=bool)
        clamped = []
        for axis, c in zip(self.knots, coords):
            lo, hi = axis[0], axis[-1]
            extrapolated |= (c < lo) | (c > hi)
            clamped.append(np.clip(c, lo, hi))
        if self.interpolation == "linear":
            if len(self.variables) == 1:
                out = np.interp(clamped[0], self.knots[0], self.values)
            else:
                out = self._interpolator(np.column_stack(clamped))
        else:
            # left-closed cells: the value at knot i holds on [k_i, k_{i+1})
            idx = tuple(
                np.clip(
                    np.searchsorted(axis, c, side="right") - 1, 0, len(axis) - 1
                )
                for axis, c in zip(self.knots, clamped)
            )
            out = self.values[idx]
        return np.asarray(out, dtype=np.float64), extrapolated


@dataclass(frozen=True)
class Expression:
    """An arbitrary expression component."""

    tree: ex.Node

    @property
    def variables(self) -> frozenset[str]:
        return ex.variables(self.tree)

    def evaluate(self, X: np.ndarray, index_of: dict[str, int]) -> np.ndarray:
        return ex.evaluate(self.tree, X, index_of)


Component = Union[Polynomial, Tabulated, Expression]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A scoring model: a link plus a sum of components over a feature space."""

    link: str
    components: tuple[Component, ...]
    space: FeatureSpace

    def __post_init__(self):
        if self.link not in (LOGIT, IDENTITY):
            raise ModelError(f"link must be 'logit' or 'identity', got {self.link!r}")
        components = tuple(self.components)
        if not components:
            raise ModelError("a model needs at least one component")
        known = set(self.space.names)
        for c in components:
            missing = c.variables - known
            if missing:
                raise ModelError(
                    f"component references unknown feature(s): {sorted(missing)}"
                )
        object.__setattr__(self, "components", components)

    @cached_property
    def _index_of(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.space.names)}

    @property
    def k(self) -> int:
        return len(self.space)


@dataclass(frozen=True)
class Evaluation:
    """Score envelope for a single point."""

    value: float
    extrapolated: bool


@dataclass(frozen=True)
class DecisionConfig:
    """Accept/decline threshold on the probability of default."""

    threshold: float

    def __post_init__(self):
        t = float(self.threshold)
        if not 0.0 < t < 1.0:
            raise DomainError(f"threshold must lie strictly in (0, 1), got {t}")
        object.__setattr__(self, "threshold", t)


def evaluate_batch(
    model: ModelSpec, X: np.ndarray, with_flags: bool = False
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Link-space scores for an (N, K) batch of points.

    With `with_flags=True` also returns a per-row boolean mask marking rows
    where some tabulated component was clamped outside its knot range.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.k:
        raise SchemaError(
            f"batch has shape {X.shape}, expected (N, {model.k}) for this model"
        )
    total = np.zeros(X.shape[0], dtype=np.float64)
    flags = np.zeros(X.shape[0], dtype=bool)
    for c in model.components:
        if isinstance(c, Tabulated):
            vals, extra = c.evaluate(X, model._index_of)
            flags |= extra
        else:
            vals = c.evaluate(X, model._index_of)
        total += vals
    return (total, flags) if with_flags else total


def evaluate(model: ModelSpec, point: PointLike) -> float:
    """Link-space score f(x) at one point."""
    vec = as_vector(point, model.space)
    return float(evaluate_batch(model, vec[None, :])[0])


def evaluate_detailed(model: ModelSpec, point: PointLike) -> Evaluation:
    """Score plus the boundary-clamping flag for tabulated components."""
    vec = as_vector(point, model.space)
    values, flags = evaluate_batch(model, vec[None, :], with_flags=True)
    return Evaluation(value=float(values[0]), extrapolated=bool(flags[0]))


def to_link(p: float) -> float:
    """Log-odds of a probability: ln(p / (1 - p))."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie strictly in (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def to_probability(s: float) -> float:
    """Logistic inverse of a log-odds score: 1 / (1 + exp(-s))."""
    s = float(s)
    if not math.isfinite(s):
        raise DomainError(f"score must be finite, got {s}")
    return float(expit(s))


def probability_batch(model: ModelSpec, X: np.ndarray) -> np.ndarray:
    """Default probabilities for an (N, K) batch.

    Logit-link scores pass through the logistic inverse; identity-link
    scores are taken to already be probabilities.
    """
    scores = evaluate_batch(model, X)
    return expit(scores) if model.link == LOGIT else scores


def predict_probability(model: ModelSpec, point: PointLike) -> float:
    """Default probability p(x) at one point."""
    vec = as_vector(point, model.space)
    return float(probability_batch(model, vec[None, :])[0])


def decide(model: ModelSpec, point: PointLike, cfg: DecisionConfig) -> str:
    """Threshold decision: "accept" iff p(x) <= threshold."""
    return ACCEPT if predict_probability(model, point) <= cfg.threshold else DECLINE


# ---------------------------------------------------------------------------
# JSON serialization (schema version 1; documented in the README)
# ---------------------------------------------------------------------------


def _component_to_json(c: Component) -> dict:
    if isinstance(c, Polynomial):
        return {
            "kind": "polynomial",
            "variables": [n for n, _ in c.factors],
            "coefficients": {
                "scale": c.coefficient,
                "powers": [p for _, p in c.factors],
            },
        }
    if isinstance(c, Tabulated):
        return {
            "kind": "tabulated",
            "variables": list(c.variables),
            "knots": [list(axis) for axis in c.knots],
            "values": c.values.tolist(),
            "interpolation": c.interpolation,
        }
    if isinstance(c, Expression):
        return {
            "kind": "expression",
            "variables": sorted(c.variables),
            "expression": ex.to_text(c.tree),
        }
    raise ModelError(f"unknown component type {type(c).__name__}")


def model_to_json(model: ModelSpec) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "link": model.link,
        "feature_space": model.space.to_json(),
        "components": [_component_to_json(c) for c in model.components],
    }


def model_to_json_text(model: ModelSpec) -> str:
    return json.dumps(model_to_json(model), indent=2)


def _component_from_json(doc: dict, space: FeatureSpace) -> Component:
    kind = doc.get("kind")
    if kind == "polynomial":
        coeffs = doc["coefficients"]
        return Polynomial(
            coefficient=coeffs["scale"],
            factors=tuple(zip(doc["variables"], coeffs["powers"])),
        )
    if kind == "tabulated":
        return Tabulated(
            variables=tuple(doc["variables"]),
            knots=tuple(tuple(axis) for axis in doc["knots"]),
            values=np.asarray(doc["values"], dtype=np.float64),
            interpolation=doc.get("interpolation", "linear"),
        )
    if kind == "expression":
        from .dsl import parse_expression  # deferred: dsl imports this module

        return Expression(tree=parse_expression(doc["expression"], space))
    raise ModelError(f"unknown component kind {kind!r}")


def model_from_json(doc: dict | str) -> ModelSpec:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid model JSON: {exc}") from exc
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelError(
            f"unsupported model schema_version {version!r} "
            f"(this build reads version {MODEL_SCHEMA_VERSION})"
        )
    try:
        space = FeatureSpace.from_json(doc["feature_space"])
        components = tuple(
            _component_from_json(c, space) for c in doc["components"]
        )
        return ModelSpec(link=doc["link"], components=components, space=space)
    except KeyError as exc:
        raise ModelError(f"model document is missing field {exc}") from exc
