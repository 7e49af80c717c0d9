"""Contributor-side randomization of quadratic-loss statistics.

Each contributor encodes their example into statistics (q, p, s), adds
Gaussian noise to q, subtracts Gaussian noise from p, and releases the
result.  Per-coordinate noise variances are (quad_noise_var / n) and
(linear_noise_var / n) from a :class:`~inputdp.calibration.NoiseCalibration`,
so the *aggregated* noise across n contributors has the calibrated scale.

Randomness is organized as explicit streams: an :class:`RngStream` is a
(seed, path) pair mapped to an independent numpy generator, so that each
contributor can own a stream and outputs are reproducible regardless of
evaluation order.  Within one example's stream the draw order is fixed:
quadratic noise first, then linear noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .calibration import NoiseCalibration
from .core import Dataset, PrivacyBudget
from .loss import LossSpec, QuadraticForm


@dataclass(frozen=True)
class RngStream:
    """A reproducible, addressable randomness source.

    ``child(*ids)`` derives an independent substream by extending the
    integer path (seed-sequence spawn keys under the hood), so a fixed
    (seed, path) always yields the same draws on a given platform.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        path = tuple(int(p) for p in self.path)
        if any(p < 0 for p in path):
            raise ValueError(f"stream path entries must be >= 0, got {path}")
        object.__setattr__(self, "path", path)

    def child(self, *ids: int) -> "RngStream":
        return RngStream(seed=self.seed, path=self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class PerturbedExample:
    """A contributor's released (noisy) statistics."""

    q: np.ndarray
    p: np.ndarray
    s: float

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if q.ndim != 1 or p.ndim != 1 or q.shape != p.shape:
            raise ValueError(
                f"q and p must be 1-D vectors of equal length, got {q.shape} and {p.shape}"
            )
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and math.isfinite(self.s)):
            raise ValueError("perturbed statistics must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "s", float(self.s))

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class NoiseRecord:
    """The raw noise draws behind a perturbed dataset (testing only).

    Retaining these alongside the released statistics voids the privacy
    semantics — the record exists so tests can reconstruct the exact
    noisy objective and check concentration claims.  ``quad_noise`` and
    ``linear_noise`` have shape (n, d): row i holds the noise added to
    q_i and the noise subtracted from p_i.
    """

    quad_noise: np.ndarray
    linear_noise: np.ndarray

    @property
    def linear_total(self) -> np.ndarray:
        """Aggregate linear-noise vector (the column sum of the draws)."""
        return self.linear_noise.sum(axis=0)


def perturb_example(
    form: QuadraticForm,
    cal: NoiseCalibration,
    rng: RngStream,
    *,
    record_noise: bool = False,
):
    """Randomize one contributor's statistics.

    Draws quadratic noise then linear noise from the given stream, each
    with per-coordinate sd (calibrated sd) / sqrt(n).  With
    ``record_noise`` the raw draws are returned alongside the release
    (testing only; see :class:`NoiseRecord`).
    """
    if form.dim != cal.constants.dim:
        raise ValueError(
            f"statistic dimension {form.dim} does not match calibration dim "
            f"{cal.constants.dim}"
        )
    gen = rng.generator()
    root_n = math.sqrt(cal.n)
    u = gen.standard_normal(form.dim) * (cal.quad_noise_sd / root_n)
    r = gen.standard_normal(form.dim) * (cal.linear_noise_sd / root_n)
    released = PerturbedExample(q=form.q + u, p=form.p - r, s=form.s)
    if record_noise:
        return released, u, r
    return released


def perturb_dataset(
    dataset: Dataset,
    spec: LossSpec,
    cal: NoiseCalibration,
    rng: RngStream,
    *,
    record_noise: bool = False,
):
    """Encode and randomize a whole dataset, one substream per example.

    Example i uses ``rng.child(i)``, so the output is the concatenation
    of n independent single-contributor releases; permuting examples
    together with their streams permutes the output identically.  With
    ``record_noise`` also returns the :class:`NoiseRecord` (testing only).
    """
    if len(dataset) != cal.n:
        raise ValueError(
            f"dataset size {len(dataset)} does not match calibration n = {cal.n}"
        )
    q_stats, p_stats, s_stats = spec.encode_dataset(dataset)
    n, dim = q_stats.shape
    root_n = math.sqrt(n)
    quad_scale = cal.quad_noise_sd / root_n
    linear_scale = cal.linear_noise_sd / root_n
    quad_noise = np.empty((n, dim))
    linear_noise = np.empty((n, dim))
    for i in range(n):
        gen = rng.child(i).generator()
        quad_noise[i] = gen.standard_normal(dim) * quad_scale
        linear_noise[i] = gen.standard_normal(dim) * linear_scale
    released = [
        PerturbedExample(q=q_stats[i] + quad_noise[i], p=p_stats[i] - linear_noise[i], s=float(s_stats[i]))
        for i in range(n)
    ]
    if record_noise:
        return released, NoiseRecord(quad_noise=quad_noise, linear_noise=linear_noise)
    return released


def gaussian_release(
    x: np.ndarray, diameter: float, budget: PrivacyBudget, rng: RngStream, slack: float = 1e-6
) -> np.ndarray:
    """Standard Gaussian-mechanism release of a bounded vector.

    Adds iid noise with sd (1 + slack) * sqrt(2 ln(1.25/delta)) *
    diameter / epsilon.  The guarantee needs the noise multiplier to be
    *strictly* above the sqrt(2 ln(1.25/delta)) infimum, hence the
    slack, and it only holds for epsilon in (0, 1), which is enforced
    here (the rest of the pipeline tolerates larger budgets).
    """
    if budget.epsilon >= 1.0:
        raise ValueError(
            f"gaussian release is only valid for epsilon in (0, 1), got "
            f"{budget.epsilon!r}; the sqrt(2 ln(1.25/delta)) noise scale has no "
            "guarantee at or above 1"
        )
    if diameter <= 0:
        raise ValueError(f"diameter must be > 0, got {diameter!r}")
    if slack < 0:
        raise ValueError(f"slack must be >= 0, got {slack!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"x must be a 1-D vector, got shape {x.shape}")
    sd = (
        (1.0 + slack)
        * math.sqrt(2.0 * math.log(1.25 / budget.delta))
        * diameter
        / budget.epsilon
    )
    return x + rng.generator().standard_normal(x.shape[0]) * sd


def _csv_header(dim: int) -> list[str]:
    return (
        [f"q_{j}" for j in range(dim)]
        + [f"p_{j}" for j in range(dim)]
        + ["s"]
    )


def write_perturbed_csv(path, released: list[PerturbedExample]) -> None:
    """Write released statistics as CSV with shortest round-trip floats.

    Columns are q_0..q_{d-1}, p_0..p_{d-1}, s; values are written with
    ``repr`` so a read-back reproduces every float bit for bit.
    """
    if not released:
        raise ValueError("nothing to write: empty release list")
    dim = released[0].dim
    if any(pe.dim != dim for pe in released):
        raise ValueError("released statistics have inconsistent dimensions")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(dim))
        for pe in released:
            writer.writerow(
                [repr(float(v)) for v in pe.q]
                + [repr(float(v)) for v in pe.p]
                + [repr(pe.s)]
            )


def read_perturbed_csv(path) -> list[PerturbedExample]:
    """Read back a file written by :func:`write_perturbed_csv`."""
    with open(path, newline="") as fh:
        rows: Iterator[list[str]] = iter(csv.reader(fh))
        try:
            header = next(rows)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 3 or header[-1] != "s" or (len(header) - 1) % 2 != 0:
            raise ValueError(f"{path}: not a perturbed-statistics CSV (header {header[:4]}...)")
        dim = (len(header) - 1) // 2
        if header != _csv_header(dim):
            raise ValueError(f"{path}: unexpected column names for dim {dim}")
        released = []
        for line_no, row in enumerate(rows, start=2):
            if len(row) != 2 * dim + 1:
                raise ValueError(f"{path}:{line_no}: expected {2 * dim + 1} fields, got {len(row)}")
            values = [float(v) for v in row]
            released.append(
                PerturbedExample(q=values[:dim], p=values[dim : 2 * dim], s=values[-1])
            )
    if not released:
        raise ValueError(f"{path}: no data rows")
    return released
