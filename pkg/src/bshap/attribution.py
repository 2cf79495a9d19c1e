"""Baseline-Shapley attribution of score differences.

Given a declined point x^D and an accepted reference x^A, the score
difference f(x^D) - f(x^A) is split into one additive contribution per
attribution unit (a feature, or a named group of features treated as a
single player). A unit's contribution averages, over all subsets S of
the other units, the effect of moving just that unit from its reference
value to its declined value while S sits at declined values and the rest
at reference values, weighted by |S|! (G - |S| - 1)! / G!.

Two computation routes exist:

* `explain_exact` enumerates all 2^G hybrid points once each (memoized by
  the unit-membership bitmask) and works for any model.
* `explain_additive` / `explain_pairwise` / `explain_triple` exploit a
  model whose additive terms couple at most 1, 2, or 3 features: each
  term is attributed from its own 2, 4, or 8 corner evaluations, which
  turns an exponential enumeration into a per-term constant.

Both routes satisfy the same identities -- contributions sum exactly to
the score difference, untouched units get zero, interchangeable units
get equal shares, and attribution is additive over models.

All computation here is pure; the per-call evaluation cache is local, so
distinct applicants can be explained concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .dsl import term_structure
from .errors import DispatchError, DomainError, SchemaError, TooManyGroupsError
from .features import FeatureSpace, PointLike, as_vector
from .models import (
    IDENTITY,
    ModelSpec,
    Tabulated,
    evaluate_batch,
    probability_batch,
)

SPACE_LINK = "link"
SPACE_PROBABILITY = "probability"

MAX_EXACT_GROUPS = 25
PERCENTAGE_GUARD = 1e-8
_EFFICIENCY_RTOL = 1e-9
_CHUNK_ROWS = 1 << 16


@dataclass(frozen=True)
class Grouping:
    """A partition of the feature indices into named attribution units."""

    names: tuple[str, ...]
    members: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        members = tuple(tuple(int(i) for i in m) for m in self.members)
        if len(names) != len(members):
            raise SchemaError("one name per group is required")
        if len(set(names)) != len(names):
            raise SchemaError("group names must be unique")
        if any(len(m) == 0 for m in members):
            raise SchemaError("groups must be non-empty")
        flat = [i for m in members for i in m]
        if sorted(flat) != list(range(len(flat))):
            raise SchemaError(
                "groups must partition the feature indices 0..K-1 "
                "(disjoint and exhaustive)"
            )
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.names)

    @property
    def k(self) -> int:
        return sum(len(m) for m in self.members)

    @property
    def all_singletons(self) -> bool:
        return all(len(m) == 1 for m in self.members)

    @classmethod
    def singletons(cls, space: FeatureSpace) -> "Grouping":
        return cls(names=space.names, members=tuple((i,) for i in range(len(space))))

    @classmethod
    def from_names(
        cls, space: FeatureSpace, groups: Mapping[str, Iterable[str]]
    ) -> "Grouping":
        """Build from {group name: [feature names]}; order follows the mapping."""
        return cls(
            names=tuple(groups.keys()),
            members=tuple(
                tuple(space.index(f) for f in feats) for feats in groups.values()
            ),
        )


@dataclass(frozen=True)
class AttributionResult:
    """Per-unit contributions to the score difference.

    `contributions` sum to `total` = f(x^D) - f(x^A) in the chosen space;
    `eval_count` counts the model (or sub-model) evaluations performed;
    `method` records which computation route produced the result.
    """

    unit_names: tuple[str, ...]
    contributions: tuple[float, ...]
    total: float
    space: str
    eval_count: int
    method: str
    grouping: Grouping

    def __post_init__(self):
        object.__setattr__(self, "unit_names", tuple(self.unit_names))
        object.__setattr__(
            self, "contributions", tuple(float(c) for c in self.contributions)
        )
        if len(self.unit_names) != len(self.contributions):
            raise SchemaError("one contribution per unit is required")
        if len(self.unit_names) != len(self.grouping):
            raise SchemaError("unit names must match the grouping")
        residual = abs(sum(self.contributions) - self.total)
        if residual > _EFFICIENCY_RTOL * max(1.0, abs(self.total)):
            raise SchemaError(
                f"contributions sum to {sum(self.contributions)!r} but the "
                f"total difference is {self.total!r}"
            )

    @property
    def percentages(self) -> tuple[float, ...] | None:
        """Share of the total per unit, in percent; None when the total is
        too small to divide by meaningfully."""
        if abs(self.total) < PERCENTAGE_GUARD:
            return None
        return tuple(c / self.total * 100.0 for c in self.contributions)

    def by_unit(self) -> dict[str, float]:
        return dict(zip(self.unit_names, self.contributions))


def shapley_weight(s: int, g: int) -> float:
    """Coalition weight s! (g - s - 1)! / g! via a multiplicative recurrence.

    Stable for g <= 25 or so; the weights over all subsets of the other
    g - 1 players sum to 1.
    """
    s, g = int(s), int(g)
    if g < 1:
        raise DomainError(f"player count must be >= 1, got {g}")
    if s < 0 or s >= g:
        raise DomainError(f"subset size must satisfy 0 <= s <= g-1, got s={s}, g={g}")
    w = 1.0 / g
    for i in range(1, s + 1):
        w *= i / (g - i)
    return w


def _weight_vector(g: int) -> np.ndarray:
    w = np.empty(g, dtype=np.float64)
    w[0] = 1.0 / g
    for s in range(1, g):
        w[s] = w[s - 1] * s / (g - s)
    return w


def _score_function(model: ModelSpec, space: str) -> Callable[[np.ndarray], np.ndarray]:
    if space == SPACE_LINK:
        return lambda X: evaluate_batch(model, X)
    if space == SPACE_PROBABILITY:
        return lambda X: probability_batch(model, X)
    raise SchemaError(f"space must be 'link' or 'probability', got {space!r}")


def _zero_result(grouping: Grouping, space: str, method: str) -> AttributionResult:
    return AttributionResult(
        unit_names=grouping.names,
        contributions=(0.0,) * len(grouping),
        total=0.0,
        space=space,
        eval_count=0,
        method=method,
        grouping=grouping,
    )


def explain_exact(
    model: ModelSpec,
    xD: PointLike,
    xA: PointLike,
    grouping: Grouping | None = None,
    space: str = SPACE_LINK,
) -> AttributionResult:
    """Exact enumeration over all 2^G unit-membership bitmasks.

    Each hybrid point (a mix of declined and reference values, unit by
    unit) is evaluated exactly once regardless of how many weighted
    differences reference it.
    """
    vD = as_vector(xD, model.space)
    vA = as_vector(xA, model.space)
    grouping = grouping or Grouping.singletons(model.space)
    if grouping.k != model.k:
        raise SchemaError(
            f"grouping covers {grouping.k} features but the model has {model.k}"
        )
    score = _score_function(model, space)
    g = len(grouping)
    if g > MAX_EXACT_GROUPS:
        raise TooManyGroupsError(
            f"exact enumeration over {g} units would need 2^{g} = {2**g:,} "
            f"model evaluations; collapse correlated features into at most "
            f"{MAX_EXACT_GROUPS} named groups and retry"
        )
    if np.array_equal(vD, vA):
        return _zero_result(grouping, space, "exact")

    unit_of = np.empty(model.k, dtype=np.uint32)
    for gi, members in enumerate(grouping.members):
        for fi in members:
            unit_of[fi] = gi

    n_masks = 1 << g
    masks = np.arange(n_masks, dtype=np.uint32)
    values = np.empty(n_masks, dtype=np.float64)
    for start in range(0, n_masks, _CHUNK_ROWS):
        chunk = masks[start : start + _CHUNK_ROWS]
        at_declined = ((chunk[:, None] >> unit_of[None, :]) & 1).astype(bool)
        hybrid = np.where(at_declined, vD[None, :], vA[None, :])
        values[start : start + _CHUNK_ROWS] = score(hybrid)

    weights = _weight_vector(g)
    sizes = np.bitwise_count(masks)
    contributions = []
    for gi in range(g):
        bit = np.uint32(1 << gi)
        without = masks[(masks & bit) == 0]
        s = sizes[(masks & bit) == 0]
        diffs = values[without | bit] - values[without]
        contributions.append(float(np.dot(weights[s], diffs)))

    return AttributionResult(
        unit_names=grouping.names,
        contributions=tuple(contributions),
        total=float(values[n_masks - 1] - values[0]),
        space=space,
        eval_count=n_masks,
        method="exact",
        grouping=grouping,
    )


def _terms_by_subset(model: ModelSpec) -> dict[tuple[int, ...], list]:
    """Group components by the (sorted) feature-index subset they read.

    Constant components are dropped: they cancel in every difference.
    """
    index_of = model._index_of
    subsets: dict[tuple[int, ...], list] = {}
    for c in model.components:
        vs = c.variables
        if not vs:
            continue
        key = tuple(sorted(index_of[v] for v in vs))
        subsets.setdefault(key, []).append(c)
    return subsets


def _submodel_corners(
    model: ModelSpec,
    components: list,
    subset: tuple[int, ...],
    vD: np.ndarray,
    vA: np.ndarray,
) -> np.ndarray:
    """Evaluate the sub-model at the 2^m corners mixing declined and
    reference values of its own features (reference order: bit j of the
    corner index moves feature subset[j] to its declined value)."""
    m = len(subset)
    corners = np.tile(vA, (1 << m, 1))
    for j, fi in enumerate(subset):
        on = (np.arange(1 << m) >> j) & 1 == 1
        corners[on, fi] = vD[fi]
    out = np.zeros(1 << m, dtype=np.float64)
    for c in components:
        vals = c.evaluate(corners, model._index_of)
        if isinstance(c, Tabulated):
            vals = vals[0]
        out += vals
    return out


def _closed_form(
    model: ModelSpec,
    xD: PointLike,
    xA: PointLike,
    max_allowed: int,
    method: str,
    space_label: str = SPACE_LINK,
) -> AttributionResult:
    vD = as_vector(xD, model.space)
    vA = as_vector(xA, model.space)
    structure = term_structure(model)
    if structure.max_order > max_allowed:
        suggestion = {2: "explain_pairwise", 3: "explain_triple"}.get(
            structure.max_order, "explain_exact"
        )
        raise DispatchError(
            f"model couples up to {structure.max_order} features per term; "
            f"the {method} path handles at most {max_allowed} -- use "
            f"{suggestion} (or the explain dispatcher)"
        )

    k = model.k
    contributions = np.zeros(k, dtype=np.float64)
    total = 0.0
    eval_count = 0
    for subset, comps in _terms_by_subset(model).items():
        m = len(subset)
        corner_values = _submodel_corners(model, comps, subset, vD, vA)
        eval_count += 1 << m
        total += float(corner_values[-1] - corner_values[0])
        weights = _weight_vector(m)
        local_masks = np.arange(1 << m)
        local_sizes = np.bitwise_count(local_masks.astype(np.uint32))
        for j, fi in enumerate(subset):
            without = local_masks[(local_masks >> j) & 1 == 0]
            s = local_sizes[(local_masks >> j) & 1 == 0]
            diffs = corner_values[without | (1 << j)] - corner_values[without]
            contributions[fi] += float(np.dot(weights[s], diffs))

    return AttributionResult(
        unit_names=model.space.names,
        contributions=tuple(float(c) for c in contributions),
        total=total,
        space=space_label,
        eval_count=eval_count,
        method=method,
        grouping=Grouping.singletons(model.space),
    )


def explain_additive(
    model: ModelSpec, xD: PointLike, xA: PointLike
) -> AttributionResult:
    """Per-feature main-effect differences for a model with no interactions.

    Each feature's contribution is its own term evaluated at the declined
    value minus the same term at the reference value: two sub-model
    evaluations per feature."""
    return _closed_form(model, xD, xA, max_allowed=1, method="additive")


def explain_pairwise(
    model: ModelSpec, xD: PointLike, xA: PointLike
) -> AttributionResult:
    """Closed form for models whose terms couple at most two features.

    Each pair term is attributed from its four corner evaluations: the
    moving feature's effect is averaged over the partner sitting at its
    declined and at its reference value. Main-effect terms contribute
    their plain differences. At most C(K,2)*4 + 2K evaluations."""
    return _closed_form(model, xD, xA, max_allowed=2, method="pairwise")


def explain_triple(
    model: ModelSpec, xD: PointLike, xA: PointLike
) -> AttributionResult:
    """Closed form for models whose terms couple at most three features.

    Three-feature terms are attributed from their eight cube corners with
    weights 1/3 (both partners declined), 1/6 and 1/6 (one each), and 1/3
    (both at reference); lower-order terms as in the pairwise path. At
    most C(K,3)*8 + C(K,2)*4 + 2K evaluations."""
    return _closed_form(model, xD, xA, max_allowed=3, method="triple")


def explain(
    model: ModelSpec,
    xD: PointLike,
    xA: PointLike,
    grouping: Grouping | None = None,
    space: str = SPACE_LINK,
) -> AttributionResult:
    """Dispatch to the cheapest valid route.

    Closed forms run when units are single features and the decomposed
    function really is additive over the model's terms: that holds in
    link space always, and in probability space only for identity-link
    models (the logistic transform does not distribute over sums).
    Everything else goes through exact enumeration over the groups.
    """
    grouping = grouping or Grouping.singletons(model.space)
    if space not in (SPACE_LINK, SPACE_PROBABILITY):
        raise SchemaError(f"space must be 'link' or 'probability', got {space!r}")
    additive_space = space == SPACE_LINK or model.link == IDENTITY
    if grouping.all_singletons and additive_space and grouping.k == model.k:
        max_order = term_structure(model).max_order
        if max_order <= 3:
            method = {0: "additive", 1: "additive", 2: "pairwise", 3: "triple"}[
                max_order
            ]
            per_feature = _closed_form(
                model, xD, xA, max_allowed=3, method=method, space_label=space
            )
            return _remap_singletons(per_feature, grouping)
    return explain_exact(model, xD, xA, grouping, space)


def _remap_singletons(
    result: AttributionResult, grouping: Grouping
) -> AttributionResult:
    """Reorder per-feature contributions onto a singleton grouping that may
    rename or reorder the units."""
    contributions = tuple(
        result.contributions[members[0]] for members in grouping.members
    )
    return AttributionResult(
        unit_names=grouping.names,
        contributions=contributions,
        total=result.total,
        space=result.space,
        eval_count=result.eval_count,
        method=result.method,
        grouping=grouping,
    )
