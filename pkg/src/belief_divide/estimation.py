"""Maximum simulated likelihood fitting, standard errors, recovery harness.

The simulated objective is optimized with a derivative-free Nelder-Mead
simplex (optionally with random restarts) while the CRN store is held fixed,
so the objective is smooth in the parameters and the fit is deterministic
given (dataset, init, options).  Standard errors come from a central
finite-difference Hessian, with a user-resampling bootstrap as fallback when
the Hessian is not positive definite.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .core import FREE_PARAM_NAMES, ModelParams
from .dgp import Dataset, PopulationSpec, simulate_dataset
from .likelihood import CrnStore, SimulatedLikelihood, build_crn

__all__ = [
    "FitOptions",
    "EstimationResult",
    "RecoveryConfig",
    "RecoveryReport",
    "fit_msl",
    "standard_errors",
    "StdErrorResult",
    "fd_hessian",
    "se_from_hessian",
    "monte_carlo_recovery",
]

# Default simplex steps per free parameter; age coefficients are scaled by
# ~40 inside the index, so their steps are proportionally smaller.
_DEFAULT_STEPS: dict[str, float] = {
    "lam": 0.10,
    "c": 0.05,
    "alpha0": 0.10,
    "log_delta_alpha0": 0.05,
    "alpha1": 0.05,
    "alpha2": 0.005,
    "alpha3": 0.05,
    "alpha4": 0.05,
    "alpha5": 0.05,
    "log_sigma_n_sq": 0.20,
    "gamma0": 0.20,
    "delta_gamma0": 0.20,
    "gamma1": 0.10,
    "gamma2": 0.010,
    "gamma3": 0.10,
    "gamma4": 0.10,
    "gamma5": 0.10,
}


@dataclass(frozen=True)
class FitOptions:
    """Controls for one maximum simulated likelihood fit."""

    R: int = 100
    mixing: str = "per_user"
    draw_average: str = "per_path"
    seed: int = 0                      # CRN store seed and restart lineage
    max_evaluations: int = 4000        # per optimizer run
    tolerance: float = 0.02            # simplex diameter declaring convergence
    fatol: float = 0.01                # objective spread tolerance
    restarts: int = 3
    restart_scale: float = 2.0         # restart jitter, in units of simplex steps
    simplex_steps: dict[str, float] = field(default_factory=dict)
    free_names: tuple[str, ...] = FREE_PARAM_NAMES
    compute_std_errors: bool = False
    se_rel_step: float = 1e-3
    bootstrap_samples: int = 50
    bootstrap_max_evaluations: int = 400

    def step_vector(self) -> np.ndarray:
        steps = dict(_DEFAULT_STEPS)
        steps.update(self.simplex_steps)
        return np.array([steps[name] for name in self.free_names])


@dataclass(frozen=True)
class StdErrorResult:
    """Per-parameter standard errors plus how they were obtained.

    ``weak_directions`` lists parameters with (numerically) no curvature at
    the fitted point: directions the data does not identify.
    """

    values: dict[str, float]
    method: str               # "hessian" | "bootstrap"
    hessian_pd: bool
    weak_directions: tuple[str, ...] = ()


@dataclass(frozen=True)
class EstimationResult:
    params_hat: ModelParams
    loglik: float
    std_errors: StdErrorResult | None
    converged: bool
    n_evaluations: int
    wall_time: float
    free_names: tuple[str, ...] = FREE_PARAM_NAMES

    def free_estimates(self) -> dict[str, float]:
        return {name: getattr(self.params_hat, name) for name in self.free_names}


def _subset_vector(params: ModelParams, names: tuple[str, ...]) -> np.ndarray:
    return np.array([getattr(params, name) for name in names])


def _with_subset(params: ModelParams, names: tuple[str, ...], vector: np.ndarray) -> ModelParams:
    return replace(params, **{n: float(v) for n, v in zip(names, vector)})


def _simplex_around(x0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    simplex = np.tile(x0, (x0.size + 1, 1))
    for j in range(x0.size):
        simplex[j + 1, j] += steps[j]
    return simplex


def _simplex_diameter(simplex: np.ndarray) -> float:
    best = simplex[0]
    return float(np.max(np.abs(simplex - best)))


def _run_simplex(objective, x0, steps, options: "FitOptions"):
    return optimize.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options=dict(
            maxfev=options.max_evaluations,
            xatol=options.tolerance,
            fatol=options.fatol,
            adaptive=True,
            initial_simplex=_simplex_around(np.asarray(x0, dtype=float), steps),
        ),
    )


def fit_msl(
    dataset: Dataset,
    init: ModelParams,
    options: FitOptions = FitOptions(),
    crn: CrnStore | None = None,
) -> EstimationResult:
    """Maximize the simulated log-likelihood over the free parameters.

    The CRN store is built once from ``options.seed`` (unless supplied) and
    reused for every objective evaluation.  Convergence requires the final
    simplex diameter to fall below ``options.tolerance`` and, when restarts
    are enabled, the restart optima to agree within 1e-3 in objective value.
    The fixed normalizations (prior mean and log prior variance) are never
    touched.
    """
    start = time.perf_counter()
    if crn is None:
        crn = build_crn(dataset, options.R, options.seed)
    evaluator = SimulatedLikelihood(dataset, crn, options.R)
    names = options.free_names
    n_evaluations = 0

    def objective(vector: np.ndarray) -> float:
        nonlocal n_evaluations
        n_evaluations += 1
        try:
            value = evaluator.loglik(
                _with_subset(init, names, vector), options.mixing, options.draw_average
            )
        except ValueError:
            return 1e100
        return -value

    x0 = _subset_vector(init, names)
    f0 = objective(x0)
    if not math.isfinite(f0) or f0 >= 1e100:
        raise ValueError("simulated log-likelihood is not finite at the initial parameters")

    steps = options.step_vector()
    result = _run_simplex(objective, x0, steps, options)
    best = result
    restart_optima = [float(result.fun)]

    rng = np.random.default_rng(np.random.SeedSequence(options.seed, spawn_key=(0xF1,)))
    for _ in range(options.restarts):
        jitter = rng.normal(scale=options.restart_scale * steps)
        attempt = _run_simplex(objective, best.x + jitter, steps, options)
        restart_optima.append(float(attempt.fun))
        if attempt.fun < best.fun:
            best = attempt

    diameter = _simplex_diameter(best.final_simplex[0])
    agree = (max(restart_optima) - min(restart_optima)) <= 1e-3 if options.restarts else True
    converged = bool(diameter < options.tolerance and agree)

    params_hat = _with_subset(init, names, best.x)
    loglik = evaluator.loglik(params_hat, options.mixing, options.draw_average)

    ses: StdErrorResult | None = None
    if options.compute_std_errors and converged:
        ses = standard_errors(dataset, params_hat, crn, options)

    assert params_hat.v0 == init.v0 and params_hat.log_sigma0_sq == init.log_sigma0_sq
    return EstimationResult(
        params_hat=params_hat,
        loglik=loglik,
        std_errors=ses,
        converged=converged,
        n_evaluations=n_evaluations,
        wall_time=time.perf_counter() - start,
        free_names=names,
    )


def fd_hessian(f, x: np.ndarray, rel_step: float = 1e-3) -> np.ndarray:
    """Central finite-difference Hessian with per-coordinate relative steps."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    hess = np.empty((n, n))
    f0 = f(x)

    def at(**offsets) -> float:
        xp = x.copy()
        for j, s in offsets.items():
            xp[int(j)] += s
        return f(xp)

    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        hess[i, i] = (f(x + e) - 2.0 * f0 + f(x - e)) / (h[i] * h[i])
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            value = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = value
            hess[j, i] = value
    return hess


def se_from_hessian(neg_hessian: np.ndarray) -> np.ndarray | None:
    """SEs from the negative Hessian of a log-likelihood; None if not PD."""
    try:
        chol = np.linalg.cholesky(neg_hessian)
    except np.linalg.LinAlgError:
        return None
    inv = np.linalg.inv(neg_hessian)
    del chol
    diag = np.diag(inv)
    if np.any(diag <= 0):
        return None
    return np.sqrt(diag)


def standard_errors(
    dataset: Dataset,
    params_hat: ModelParams,
    crn: CrnStore,
    options: FitOptions = FitOptions(),
) -> StdErrorResult:
    """Standard errors at a fitted point, CRN held fixed.

    Default: square roots of the diagonal of the inverse negative Hessian,
    with the Hessian from central finite differences of the simulated
    log-likelihood.  When that Hessian is not positive definite the SEs fall
    back to a nonparametric bootstrap that resamples users and refits.
    """
    evaluator = SimulatedLikelihood(dataset, crn, options.R)
    names = options.free_names

    def loglik_at(vector: np.ndarray) -> float:
        return evaluator.loglik(
            _with_subset(params_hat, names, vector), options.mixing, options.draw_average
        )

    x_hat = _subset_vector(params_hat, names)
    hess = fd_hessian(loglik_at, x_hat, options.se_rel_step)
    weak = _flat_directions(-hess, names)
    ses = se_from_hessian(-hess)
    if ses is not None:
        return StdErrorResult(
            values={n: float(s) for n, s in zip(names, ses)},
            method="hessian",
            hessian_pd=True,
            weak_directions=weak,
        )
    ses = _bootstrap_ses(dataset, params_hat, options)
    return StdErrorResult(values=ses, method="bootstrap", hessian_pd=False,
                          weak_directions=weak)


def _flat_directions(neg_hessian: np.ndarray, names: tuple[str, ...]) -> tuple[str, ...]:
    """Parameters the data barely identifies at the fitted point.

    Flags non-positive curvature outright, plus any parameter whose
    curvature-implied standard error exceeds 10x the median.
    """
    curvature = np.diag(neg_hessian)
    positive = curvature[curvature > 0]
    if positive.size == 0:
        return tuple(names)
    median_proxy = float(np.median(1.0 / np.sqrt(positive)))
    weak = []
    for name, curv in zip(names, curvature):
        if curv <= 0 or 1.0 / math.sqrt(curv) > 10.0 * median_proxy:
            weak.append(name)
    return tuple(weak)


def _bootstrap_ses(
    dataset: Dataset, params_hat: ModelParams, options: FitOptions
) -> dict[str, float]:
    rng = np.random.default_rng(np.random.SeedSequence(options.seed, spawn_key=(0xB0,)))
    names = options.free_names
    refit_options = replace(
        options,
        restarts=0,
        compute_std_errors=False,
        max_evaluations=options.bootstrap_max_evaluations,
    )
    estimates = []
    panels = dataset.panels
    for b in range(options.bootstrap_samples):
        indices = rng.integers(0, len(panels), size=len(panels))
        # resampled users need unique ids so the CRN store stays well defined
        resampled = tuple(
            replace(panels[j], user_id=f"b{b:04d}_{k:05d}_{panels[j].user_id}")
            for k, j in enumerate(indices)
        )
        boot_data = Dataset(panels=resampled)
        boot_options = replace(refit_options, seed=int(rng.integers(2**63)))
        try:
            result = fit_msl(boot_data, params_hat, boot_options)
        except ValueError:
            continue
        estimates.append(_subset_vector(result.params_hat, names))
    if len(estimates) < 2:
        raise RuntimeError("bootstrap standard errors failed: too few successful refits")
    spread = np.std(np.asarray(estimates), axis=0, ddof=1)
    return {n: float(s) for n, s in zip(names, spread)}


@dataclass(frozen=True)
class RecoveryConfig:
    """One Monte Carlo identification experiment."""

    truth: ModelParams
    population: PopulationSpec
    n_replications: int
    fit_options: FitOptions = FitOptions()
    init: ModelParams | None = None     # defaults to the truth
    compute_ses: bool = False
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_replications < 1:
            raise ValueError("n_replications must be >= 1")


@dataclass(frozen=True)
class RecoveryReport:
    """Bias/RMSE (and optional coverage) of repeated simulate-and-fit cycles."""

    truth: ModelParams
    replications: tuple[EstimationResult, ...]
    failures: tuple[str, ...]
    bias: dict[str, float]
    rmse: dict[str, float]
    coverage: dict[str, float] | None
    weakly_identified: tuple[str, ...]

    def n_converged(self) -> int:
        return sum(r.converged for r in self.replications)


def _derive_seed(master_seed: int, tag: int) -> int:
    return int(np.random.SeedSequence(master_seed, spawn_key=(tag,)).generate_state(1)[0])


def monte_carlo_recovery(config: RecoveryConfig) -> RecoveryReport:
    """Repeated simulate-then-fit cycles at a known truth.

    Each replication gets an isolated seed lineage for both the synthetic
    data and the CRN store.  Failures are recorded, not fatal.  Parameters
    whose SE exceeds 10x the median SE are flagged as weakly identified.
    """
    truth = config.truth
    init = config.init if config.init is not None else truth
    names = config.fit_options.free_names
    results: list[EstimationResult] = []
    failures: list[str] = []

    for rep in range(config.n_replications):
        data_seed = _derive_seed(config.master_seed, 2 * rep)
        crn_seed = _derive_seed(config.master_seed, 2 * rep + 1)
        try:
            dataset, _ = simulate_dataset(
                replace(config.population, master_seed=data_seed), truth
            )
            fit_options = replace(
                config.fit_options, seed=crn_seed, compute_std_errors=config.compute_ses
            )
            results.append(fit_msl(dataset, init, fit_options))
        except Exception as exc:  # noqa: BLE001 - replication failures are data
            failures.append(f"replication {rep}: {exc}")

    converged = [r for r in results if r.converged]
    usable = converged if converged else results
    truth_vec = _subset_vector(truth, names)
    bias: dict[str, float] = {}
    rmse: dict[str, float] = {}
    if usable:
        estimates = np.array([_subset_vector(r.params_hat, names) for r in usable])
        errors = estimates - truth_vec
        bias = {n: float(b) for n, b in zip(names, errors.mean(axis=0))}
        rmse = {n: float(r) for n, r in zip(names, np.sqrt((errors**2).mean(axis=0)))}

    coverage = None
    if config.compute_ses:
        covered = {n: 0 for n in names}
        counted = 0
        for r in usable:
            if r.std_errors is None:
                continue
            counted += 1
            for j, n in enumerate(names):
                se = r.std_errors.values[n]
                half = 1.96 * se
                if abs(getattr(r.params_hat, n) - truth_vec[j]) <= half:
                    covered[n] += 1
        if counted:
            coverage = {n: covered[n] / counted for n in names}

    weak: set[str] = set()
    se_sets = [r.std_errors for r in usable if r.std_errors is not None]
    for se in se_sets:
        weak.update(se.weak_directions)
    if se_sets:
        mean_ses = {n: float(np.mean([s.values[n] for s in se_sets])) for n in names}
        median_se = float(np.median(list(mean_ses.values())))
        if median_se > 0:
            weak.update(n for n in names if mean_ses[n] > 10.0 * median_se)

    return RecoveryReport(
        truth=truth,
        replications=tuple(results),
        failures=tuple(failures),
        bias=bias,
        rmse=rmse,
        coverage=coverage,
        weakly_identified=tuple(sorted(weak)),
    )
