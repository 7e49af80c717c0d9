"""Verification tools: risk metrics, concentration checks, a DP verifier.

Everything here exists to *check* the pipeline's probabilistic claims
numerically rather than trust them:

* the exact algebraic identity tying the perturbed objective to the
  clean one plus noise terms (:func:`reconstruct_objective_identity`);
* Monte-Carlo coverage of the noise-ridge bracket and of the
  privacy-enabling event (:func:`noise_ridge_coverage`);
* frequency checks of the chi-square and Gaussian tail bounds the
  calibration leans on;
* a from-first-principles 1-D verifier of the Gaussian mechanism's
  (epsilon, delta) claim over threshold events;
* stability/utility gap checks between the noisy objective's minimizer
  and its noise-free counterpart.

:func:`run_check_suite` bundles these into serializable pass/fail
records for the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .calibration import (
    NoiseCalibration,
    calibrate,
    local_dp_asymptote,
    local_dp_level,
    noise_ridge_bounds,
    quad_noise_threshold,
    ridge_floor,
)
from .core import Dataset, LossConstants, ModelVector, PrivacyBudget
from .loss import LossSpec, empirical_objective
from .perturb import NoiseRecord, PerturbedExample, RngStream, perturb_dataset
from .solver import (
    QuadraticProgram,
    SolverConfig,
    SolverNonConvergenceError,
    assemble_plain,
    learn_non_private,
    minimize_ball_constrained,
)

__all__ = [
    "CoverageReport",
    "NoiseRecord",
    "dp_verifier_gaussian_1d",
    "excess_empirical_risk",
    "noise_free_gap",
    "noise_ridge_coverage",
    "reconstruct_objective_identity",
    "run_check_suite",
    "sample_noise_ridge",
    "tail_check_chi_square",
    "tail_check_gaussian",
    "worst_case_quad_stats",
]

# Clean excess-risk values this close below zero are solver roundoff.
_EXCESS_CLAMP = 1e-10


@dataclass(frozen=True)
class CoverageReport:
    """Monte-Carlo frequency of an event against its claimed probability."""

    trials: int
    hits: int
    target: float
    stderr: float

    @classmethod
    def from_hits(cls, hits: int, trials: int, target: float) -> "CoverageReport":
        freq = hits / trials
        return cls(
            trials=trials,
            hits=hits,
            target=target,
            stderr=math.sqrt(freq * (1.0 - freq) / trials),
        )

    @property
    def frequency(self) -> float:
        return self.hits / self.trials

    @property
    def passes(self) -> bool:
        """Frequency at least target minus three binomial standard errors."""
        return self.frequency >= self.target - 3.0 * self.stderr


def _model_array(w) -> np.ndarray:
    if isinstance(w, ModelVector):
        return w.w
    return np.asarray(w, dtype=np.float64)


def _solved(program: QuadraticProgram, config: SolverConfig | None) -> np.ndarray:
    result = minimize_ball_constrained(program, config)
    if not result.converged:
        cfg = config or SolverConfig()
        raise SolverNonConvergenceError(
            iterations=result.iterations, residual=result.residual, tol=cfg.tol
        )
    return result.w


def excess_empirical_risk(
    dataset: Dataset,
    spec: LossSpec,
    w,
    baseline=None,
    config: SolverConfig | None = None,
) -> float:
    """Unregularized empirical risk of ``w`` above the in-ball minimizer.

    ``baseline`` (the minimizer) is computed if not supplied.  Values
    within solver roundoff below zero are clamped to zero.
    """
    if baseline is None:
        baseline = learn_non_private(dataset, spec, reg_coeff=0.0, config=config)
    value = empirical_objective(dataset, spec, w) - empirical_objective(
        dataset, spec, baseline
    )
    if -_EXCESS_CLAMP <= value < 0.0:
        return 0.0
    return value


def reconstruct_objective_identity(
    dataset: Dataset,
    spec: LossSpec,
    record: NoiseRecord,
    w,
    reg_cap: float,
    epsilon: float,
) -> tuple[float, float]:
    """Evaluate the perturbed objective two ways; the values agree exactly.

    Left side: rebuild the released statistics from the clean data plus
    the recorded draws and evaluate the server's objective directly.
    Right side: clean mean loss, plus the aggregate linear-noise tilt
    (b.w / n), plus the quadratic form of the noise/data interaction
    matrix U'U + U'Q + Q'U, plus the explicit ridge.  Their equality is
    an algebraic identity, so the difference is pure floating-point
    roundoff — a strong end-to-end check of the noise bookkeeping.
    """
    wa = _model_array(w)
    q_stats, p_stats, s_stats = spec.encode_dataset(dataset)
    n = len(dataset)
    explicit_ridge = reg_cap - ridge_floor(spec.constants.smoothness, epsilon)

    q_released = q_stats + record.quad_noise
    p_released = p_stats - record.linear_noise
    qw = q_released @ wa
    lhs = float(
        np.mean(0.5 * qw * qw - p_released @ wa + s_stats)
        + explicit_ridge / (2.0 * n) * (wa @ wa)
    )

    clean_qw = q_stats @ wa
    mean_loss = float(np.mean(0.5 * clean_qw * clean_qw - p_stats @ wa + s_stats))
    noise_qw = record.quad_noise @ wa
    interaction = float(noise_qw @ noise_qw + 2.0 * clean_qw @ noise_qw)
    b = record.linear_total
    rhs = (
        mean_loss
        + float(b @ wa) / n
        + (interaction + explicit_ridge * float(wa @ wa)) / (2.0 * n)
    )
    return lhs, rhs


def worst_case_quad_stats(
    n: int,
    dim: int,
    direction: np.ndarray,
    smoothness: float,
    row_cap: float | None = None,
) -> np.ndarray:
    """Statistic matrix making the noise/data cross term maximal.

    All rows equal smoothness * sqrt(dim/n) times the unit probe
    direction, so the matrix attains the Frobenius budget
    smoothness * sqrt(dim) allowed on the valid domain while aligning
    every row with the probe — the binding case for the bracket's cross
    term.  ``row_cap`` (a per-statistic norm bound) clips the row norm
    when supplied.
    """
    direction = np.asarray(direction, dtype=np.float64)
    nrm = float(np.linalg.norm(direction))
    if nrm == 0.0:
        raise ValueError("direction must be nonzero")
    row_norm = smoothness * math.sqrt(dim / n)
    if row_cap is not None:
        row_norm = min(row_norm, row_cap)
    return np.tile(direction / nrm * row_norm, (n, 1))


def sample_noise_ridge(
    quad_stats: np.ndarray, quad_noise_sd: float, w: np.ndarray, rng: RngStream
) -> float:
    """One Monte-Carlo draw of the noise-induced ridge at a unit direction.

    Draws the full noise matrix U (rows iid with per-coordinate variance
    quad_noise_sd^2 / n) and evaluates w'(U'U + U'Q + Q'U)w.
    """
    quad_stats = np.asarray(quad_stats, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if abs(float(np.linalg.norm(w)) - 1.0) > 1e-9:
        raise ValueError("probe direction w must be a unit vector")
    n, dim = quad_stats.shape
    noise = rng.generator().standard_normal((n, dim)) * (quad_noise_sd / math.sqrt(n))
    noise_w = noise @ w
    return float(noise_w @ noise_w + 2.0 * (quad_stats @ w) @ noise_w)


def _noise_ridge_samples(
    quad_stats: np.ndarray,
    quad_noise_sd: float,
    w: np.ndarray,
    trials: int,
    rng: RngStream,
    chunk: int = 128,
) -> np.ndarray:
    """Vectorized draws of the noise ridge (same law as sample_noise_ridge)."""
    n, dim = quad_stats.shape
    scale = quad_noise_sd / math.sqrt(n)
    clean_w = quad_stats @ w
    gen = rng.generator()
    out = np.empty(trials)
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        noise = gen.standard_normal((m, n, dim)) * scale
        noise_w = noise @ w  # (m, n)
        out[done : done + m] = np.einsum("mn,mn->m", noise_w, noise_w) + 2.0 * (
            noise_w @ clean_w
        )
        done += m
    return out


def noise_ridge_coverage(
    quad_stats: np.ndarray,
    quad_noise_sd: float,
    w: np.ndarray,
    fail_prob: float,
    trials: int,
    rng: RngStream,
    smoothness: float,
) -> CoverageReport:
    """Monte-Carlo coverage of the noise-ridge bracket.

    Counts draws falling inside the bracket from
    :func:`~inputdp.calibration.noise_ridge_bounds` against the claimed
    probability 1 - fail_prob.
    """
    quad_stats = np.asarray(quad_stats, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if abs(float(np.linalg.norm(w)) - 1.0) > 1e-9:
        raise ValueError("probe direction w must be a unit vector")
    n, dim = quad_stats.shape
    bounds = noise_ridge_bounds(n, fail_prob, quad_noise_sd, smoothness, dim)
    samples = _noise_ridge_samples(quad_stats, quad_noise_sd, w, trials, rng)
    hits = int(np.count_nonzero((samples >= bounds.lower) & (samples <= bounds.upper)))
    return CoverageReport.from_hits(hits=hits, trials=trials, target=1.0 - fail_prob)


def tail_check_chi_square(
    dof: int, t: float, trials: int, rng: RngStream
) -> tuple[float, float]:
    """Observed frequencies of the two chi-square tail events.

    Upper event: Z - dof >= 2 sqrt(dof * t) + 2 t; lower event:
    dof - Z >= 2 sqrt(dof * t).  Each is claimed to occur with
    probability at most e^-t.
    """
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    if t <= 0:
        raise ValueError(f"t must be > 0, got {t!r}")
    draws = rng.generator().chisquare(dof, size=trials)
    upper = float(np.mean(draws - dof >= 2.0 * math.sqrt(dof * t) + 2.0 * t))
    lower = float(np.mean(dof - draws >= 2.0 * math.sqrt(dof * t)))
    return upper, lower


def tail_check_gaussian(t: float, trials: int, rng: RngStream) -> float:
    """Observed frequency of |Z| > t for standard normal Z.

    The bound e^{-t^2/2} being checked is only valid for t > 1, so
    smaller thresholds are rejected.
    """
    if t <= 1.0:
        raise ValueError(f"the two-sided Gaussian tail bound needs t > 1, got {t!r}")
    draws = rng.generator().standard_normal(trials)
    return float(np.mean(np.abs(draws) > t))


def dp_verifier_gaussian_1d(
    diameter: float, sigma: float, epsilon: float, grid_size: int = 10_000
) -> float:
    """Largest threshold-event privacy deficit of 1-D Gaussian releases.

    For the two extreme inputs x = 0 and x = diameter, scans threshold
    events (upper and lower tails, both input orderings) and returns

        sup_E  P[release(x) in E] - e^epsilon P[release(x') in E].

    A value at most delta certifies (epsilon, delta) over this event
    class; a value above delta is a concrete witness of violation.  Built
    only from Gaussian CDFs, independent of the calibration code paths.
    """
    if diameter <= 0 or sigma <= 0 or epsilon <= 0:
        raise ValueError("diameter, sigma and epsilon must all be > 0")
    if grid_size < 2:
        raise ValueError(f"grid_size must be >= 2, got {grid_size}")
    taus = np.linspace(-10.0 * sigma, diameter + 10.0 * sigma, grid_size)
    amp = math.exp(epsilon)

    def upper_tail(x: float) -> np.ndarray:
        return ndtr((x - taus) / sigma)  # P[x + sigma Z > tau]

    def lower_tail(x: float) -> np.ndarray:
        return ndtr((taus - x) / sigma)  # P[x + sigma Z < tau]

    deficits = [
        upper_tail(diameter) - amp * upper_tail(0.0),
        upper_tail(0.0) - amp * upper_tail(diameter),
        lower_tail(0.0) - amp * lower_tail(diameter),
        lower_tail(diameter) - amp * lower_tail(0.0),
    ]
    return float(max(np.max(d) for d in deficits))


def noise_free_gap(
    dataset: Dataset,
    spec: LossSpec,
    record: NoiseRecord,
    reg_cap: float,
    epsilon: float,
    config: SolverConfig | None = None,
) -> dict:
    """Distance and utility gap between the noisy minimizer and its
    linear-noise-free counterpart, with their theoretical bounds.

    The noise-free problem keeps the quadratic noise (it shares the
    noisy problem's curvature) and drops only the aggregate linear tilt
    b.  Strong convexity along the movement direction gives

        distance    <= 2 ||b|| / denom,
        utility gap <= 2 ||b||^2 / (n * denom),

    where denom = (noise ridge at the movement direction) + reg_cap -
    ridge_floor.  The bounds are only claimed when denom > 0 and the
    directional noise ridge is nonnegative (the analysis' hypothesis);
    ``applicable`` reports whether that held.
    """
    constants = spec.constants
    q_stats, p_stats, s_stats = spec.encode_dataset(dataset)
    n = len(dataset)
    explicit_ridge = reg_cap - ridge_floor(constants.smoothness, epsilon)
    if explicit_ridge < 0:
        raise ValueError(
            f"reg_cap = {reg_cap:.6g} is below the ridge floor; no guarantee applies"
        )
    q_released = q_stats + record.quad_noise
    b = record.linear_total

    a_noisy = q_released.T @ q_released / n
    base_lin = -p_stats.mean(axis=0)
    c0 = float(s_stats.mean())
    noisy = QuadraticProgram(
        A=a_noisy,
        b_lin=base_lin + record.linear_total / n,
        c0=c0,
        reg=explicit_ridge / n,
        radius=constants.radius,
    )
    noise_free = QuadraticProgram(
        A=a_noisy, b_lin=base_lin, c0=c0, reg=explicit_ridge / n, radius=constants.radius
    )
    w_noisy = _solved(noisy, config)
    w_free = _solved(noise_free, config)

    move = w_free - w_noisy
    distance = float(np.linalg.norm(move))
    if distance > 0.0:
        direction = move / distance
        dir_qw = record.quad_noise @ direction
        ridge_at_direction = float(
            dir_qw @ dir_qw + 2.0 * (q_stats @ direction) @ dir_qw
        )
    else:
        ridge_at_direction = 0.0
    denom = ridge_at_direction + reg_cap - ridge_floor(constants.smoothness, epsilon)
    b_norm = float(np.linalg.norm(b))
    utility_gap = noise_free.objective(w_noisy) - noise_free.objective(w_free)
    return {
        "distance": distance,
        "utility_gap": utility_gap,
        "ridge_at_direction": ridge_at_direction,
        "denom": denom,
        "applicable": bool(denom > 0.0 and ridge_at_direction >= 0.0),
        "distance_bound": 2.0 * b_norm / denom if denom > 0 else math.inf,
        "utility_bound": 2.0 * b_norm**2 / (n * denom) if denom > 0 else math.inf,
    }


def _check(
    name: str,
    params: dict,
    statistic: float,
    bound: float,
    direction: str,
) -> dict:
    if direction == "<=":
        ok = statistic <= bound
    else:
        ok = statistic >= bound
    return {
        "check": name,
        "params": params,
        "statistic": statistic,
        "bound": bound,
        "direction": direction,
        "pass": bool(ok),
    }


def run_check_suite(seed: int = 0) -> list[dict]:
    """Run the full numerical verification battery.

    Returns one serializable record per check: the observed statistic,
    the bound it is held to, and whether it passed.  Monte-Carlo checks
    use three-standard-error allowances on their claimed probabilities.
    """
    root = RngStream(seed, path=(90,))
    checks: list[dict] = []

    # Noise-ridge bracket and enabling-event coverage at the worst-case
    # statistic matrix, at the threshold noise scale.
    n, dim, fail_prob, smoothness, epsilon, trials = 1000, 14, 0.005, 1.0, 1.0, 10_000
    sd = quad_noise_threshold(n, fail_prob, dim, smoothness, epsilon)
    probe = np.zeros(dim)
    probe[0] = 1.0
    stats = worst_case_quad_stats(n, dim, probe, smoothness)
    report = noise_ridge_coverage(
        stats, sd, probe, fail_prob, trials, root.child(0), smoothness
    )
    checks.append(
        _check(
            "noise_ridge_bracket_coverage",
            {"n": n, "dim": dim, "fail_prob": fail_prob, "trials": trials},
            report.frequency,
            report.target - 3.0 * report.stderr,
            ">=",
        )
    )
    samples = _noise_ridge_samples(stats, sd, probe, trials, root.child(1))
    floor = ridge_floor(smoothness, epsilon)
    floor_report = CoverageReport.from_hits(
        hits=int(np.count_nonzero(samples >= floor)),
        trials=trials,
        target=1.0 - fail_prob,
    )
    checks.append(
        _check(
            "noise_ridge_floor_frequency",
            {"n": n, "dim": dim, "fail_prob": fail_prob, "trials": trials},
            floor_report.frequency,
            floor_report.target - 3.0 * floor_report.stderr,
            ">=",
        )
    )

    # Tail-bound frequency checks.
    tail_trials = 200_000
    for i, (dof, t) in enumerate([(100, 3.0), (1, 0.1), (50, 10.0)]):
        upper, lower = tail_check_chi_square(dof, t, tail_trials, root.child(10, i))
        bound = math.exp(-t)
        for side, freq in (("upper", upper), ("lower", lower)):
            se = math.sqrt(max(freq * (1 - freq), 1.0 / tail_trials) / tail_trials)
            checks.append(
                _check(
                    f"chi_square_tail_{side}",
                    {"dof": dof, "t": t, "trials": tail_trials},
                    freq,
                    bound + 3.0 * se,
                    "<=",
                )
            )
    for i, t in enumerate([1.25, 2.0, 3.0]):
        freq = tail_check_gaussian(t, tail_trials, root.child(11, i))
        se = math.sqrt(max(freq * (1 - freq), 1.0 / tail_trials) / tail_trials)
        checks.append(
            _check(
                "gaussian_tail",
                {"t": t, "trials": tail_trials},
                freq,
                math.exp(-(t**2) / 2.0) + 3.0 * se,
                "<=",
            )
        )

    # Gaussian-mechanism verifier: calibrated scale passes, a tenth of it
    # must be flagged as violating.
    budget = PrivacyBudget(epsilon=0.5, delta=0.01)
    diameter = 1.0
    sigma = math.sqrt(2.0 * math.log(1.25 / budget.delta)) * diameter / budget.epsilon
    observed = dp_verifier_gaussian_1d(diameter, sigma, budget.epsilon)
    checks.append(
        _check(
            "dp_verifier_calibrated",
            {"diameter": diameter, "sigma": sigma, "epsilon": budget.epsilon},
            observed,
            budget.delta,
            "<=",
        )
    )
    observed_low = dp_verifier_gaussian_1d(diameter, 0.1 * sigma, budget.epsilon)
    checks.append(
        _check(
            "dp_verifier_undernoised_detected",
            {"diameter": diameter, "sigma": 0.1 * sigma, "epsilon": budget.epsilon},
            observed_low,
            budget.delta,
            ">=",
        )
    )

    # Exact objective-reconstruction identity on random small instances.
    from .harness import generate_synthetic  # local import to avoid a cycle
    from .loss import linear_regression_loss

    max_rel = 0.0
    ident_budget = PrivacyBudget(epsilon=1.0, delta=0.01)
    for i in range(20):
        data = generate_synthetic(
            n=50, dim=5, noise_sd=0.1, rng=root.child(20, i), task="linear_regression"
        )
        spec = linear_regression_loss(radius=1.0, dim=5)
        cal = calibrate(ident_budget, len(data), spec.constants)
        _, rec = perturb_dataset(data, spec, cal, root.child(21, i), record_noise=True)
        gen = root.child(22, i).generator()
        for _ in range(5):
            w = gen.standard_normal(5)
            w *= gen.uniform(0, 1) / float(np.linalg.norm(w))
            lhs, rhs = reconstruct_objective_identity(
                data, spec, rec, w, reg_cap=16.0, epsilon=ident_budget.epsilon
            )
            max_rel = max(max_rel, abs(lhs - rhs) / (1.0 + abs(lhs)))
    checks.append(
        _check(
            "objective_reconstruction_identity",
            {"instances": 20, "probes": 5},
            max_rel,
            1e-9,
            "<=",
        )
    )

    # Local-privacy ratio approaches its closed-form limit.
    constants = LossConstants(lipschitz=2.0, smoothness=1.0, radius=1.0, dim=14)
    big_budget = PrivacyBudget(epsilon=1.0, delta=0.01)
    big_n = 10**8
    cal = calibrate(big_budget, big_n, constants)
    level = local_dp_level(cal)
    ratio = level.epsilon_constants_convention / math.sqrt(big_n * big_budget.epsilon)
    limit = local_dp_asymptote(big_budget, constants)
    checks.append(
        _check(
            "local_privacy_asymptote",
            {"n": big_n, "epsilon": big_budget.epsilon, "delta": big_budget.delta},
            abs(ratio / limit - 1.0),
            0.01,
            "<=",
        )
    )

    # Stability and utility bounds vs the linear-noise-free minimizer.
    worst_margin = math.inf
    for i in range(5):
        data = generate_synthetic(
            n=200, dim=8, noise_sd=0.1, rng=root.child(30, i), task="linear_regression"
        )
        spec = linear_regression_loss(radius=1.0, dim=8)
        cal = calibrate(ident_budget, len(data), spec.constants)
        _, rec = perturb_dataset(data, spec, cal, root.child(31, i), record_noise=True)
        gap = noise_free_gap(data, spec, rec, reg_cap=16.0, epsilon=ident_budget.epsilon)
        if gap["applicable"]:
            worst_margin = min(
                worst_margin,
                gap["distance_bound"] - gap["distance"],
                gap["utility_bound"] - gap["utility_gap"],
            )
    checks.append(
        _check(
            "noise_free_stability_bounds",
            {"instances": 5, "n": 200, "dim": 8},
            worst_margin,
            -1e-8,
            ">=",
        )
    )
    return checks
