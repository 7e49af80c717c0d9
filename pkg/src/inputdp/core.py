"""Shared domain types for private learning of quadratic losses.

Everything downstream works over a bounded domain: feature vectors live in
the unit ball, labels in [-1, 1], and models in a ball of configurable
radius.  The types here carry those contracts so the calibration, noise,
and solver layers can rely on them instead of re-validating.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Slop allowed on norm/label bounds before an example is flagged invalid.
BOUND_TOL = 1e-9


def _as_float_vector(values, name: str) -> np.ndarray:
    """Coerce to a read-only 1-D float64 array, rejecting non-finite input."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Example:
    """One contributor's record: features in the unit ball, label in [-1, 1]."""

    x: np.ndarray
    y: float

    def __post_init__(self) -> None:
        x = _as_float_vector(self.x, "x")
        y = float(self.y)
        if not np.isfinite(y):
            raise ValueError("y must be finite")
        nrm = float(np.linalg.norm(x))
        if nrm > 1.0 + BOUND_TOL:
            raise ValueError(f"||x|| = {nrm:.6g} exceeds the unit-ball domain")
        if abs(y) > 1.0 + BOUND_TOL:
            raise ValueError(f"|y| = {abs(y):.6g} exceeds the label bound 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of examples, stored densely.

    ``features`` has shape (n, d) and ``labels`` shape (n,).  Construction
    enforces shape consistency and finiteness only; domain bounds are
    checked by :func:`validate_dataset` so that slightly out-of-domain data
    can still be loaded, inspected, and reported on.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64, copy=True)
        labs = np.array(self.labels, dtype=np.float64, copy=True)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {labs.shape}")
        if feats.shape[0] != labs.shape[0]:
            raise ValueError(
                f"features/labels length mismatch: {feats.shape[0]} vs {labs.shape[0]}"
            )
        if feats.shape[0] == 0:
            raise ValueError("dataset must contain at least one example")
        if not (np.all(np.isfinite(feats)) and np.all(np.isfinite(labs))):
            raise ValueError("dataset contains non-finite entries")
        feats.flags.writeable = False
        labs.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @classmethod
    def from_examples(cls, examples: Iterable[Example]) -> "Dataset":
        examples = list(examples)
        if not examples:
            raise ValueError("dataset must contain at least one example")
        dims = {ex.dim for ex in examples}
        if len(dims) != 1:
            raise ValueError(f"examples have inconsistent dimensions: {sorted(dims)}")
        return cls(
            features=np.stack([ex.x for ex in examples]),
            labels=np.array([ex.y for ex in examples]),
        )

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, index: int) -> Example:
        return Example(x=self.features[index], y=float(self.labels[index]))

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class LossConstants:
    """Curvature/gradient/domain constants a loss family declares.

    ``smoothness`` bounds the eigenvalues of each per-example quadratic
    term, ``lipschitz`` bounds per-example gradient norms over the model
    ball, ``radius`` is the model-ball radius, and ``dim`` the feature
    dimension.  Noise calibration consumes exactly these four numbers.
    """

    lipschitz: float
    smoothness: float
    radius: float
    dim: int

    def __post_init__(self) -> None:
        for name in ("lipschitz", "smoothness", "radius"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta) differential-privacy budget."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError(f"epsilon must be > 0, got {self.epsilon!r}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")


@dataclass(frozen=True)
class ModelVector:
    """A model constrained to the ball of the given radius.

    Construction projects onto the ball, so the norm invariant holds by
    definition; use :func:`project_to_ball` as the public constructor.
    """

    w: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be positive and finite, got {self.radius!r}")
        w = _as_float_vector(self.w, "w")
        # Rescale to a floating-point fixed point so that projecting an
        # already-projected vector returns it bit-identically (a single
        # rescale can leave the recomputed norm one ulp above the radius).
        nrm = float(np.linalg.norm(w))
        while nrm > self.radius:
            factor = self.radius / nrm
            if factor >= 1.0:
                break
            scaled = np.array(w * factor)
            if np.array_equal(scaled, w):
                break
            scaled.flags.writeable = False
            w = scaled
            nrm = float(np.linalg.norm(w))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.w.shape[0]


def project_to_ball(w, radius: float) -> ModelVector:
    """Project ``w`` onto the Euclidean ball of ``radius`` around the origin.

    Points inside the ball are returned unchanged; points outside are
    scaled back to the sphere.
    """
    return ModelVector(w=w, radius=radius)


@dataclass(frozen=True)
class DomainViolation:
    """One way an example fails the bounded-domain contract."""

    index: int
    kind: str  # "feature_norm" | "label_bound" | "non_finite"
    value: float


def validate_dataset(dataset: Dataset) -> list[DomainViolation]:
    """Check every example against the bounded domain; empty list means valid.

    Flags feature norms above 1 and labels outside [-1, 1] (both with
    1e-9 slop).  Dimension consistency and finiteness are enforced
    structurally at :class:`Dataset` construction.
    """
    violations: list[DomainViolation] = []
    norms = np.linalg.norm(dataset.features, axis=1)
    for i in np.nonzero(norms > 1.0 + BOUND_TOL)[0]:
        violations.append(
            DomainViolation(index=int(i), kind="feature_norm", value=float(norms[i]))
        )
    for i in np.nonzero(np.abs(dataset.labels) > 1.0 + BOUND_TOL)[0]:
        violations.append(
            DomainViolation(index=int(i), kind="label_bound", value=float(dataset.labels[i]))
        )
    violations.sort(key=lambda v: (v.index, v.kind))
    return violations
