"""Command-line surface: gen-data, estimate, recover, policy, report.

Every command that writes an output directory also writes a ``manifest.json``
recording the command, configuration snapshot, seed, code version, and input
digests, so the run can be reproduced bit-exactly.  Randomness is controlled
by ``--seed`` (falling back to the ``BELIEF_DIVIDE_SEED`` environment
variable, then to the config file).  Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import io as bd_io
from .core import LatentClass, ModelParams, UserProfile
from .dgp import CountProcess, PopulationSpec, ProfileSampler, simulate_dataset
from .estimation import FitOptions, RecoveryConfig, fit_msl, monte_carlo_recovery
from .policy import (
    Scenario,
    SimConfig,
    fast_learner_profile,
    simulate_trajectory,
    slow_learner_profile,
    trajectory_stream,
    trap_comparison_scenarios,
    trap_probability,
)

SEED_ENV_VAR = "BELIEF_DIVIDE_SEED"

_PARAM_ROWS = [
    # (json key, display symbol, description)
    ("v0", "v0", "Prior mean of the perceived tool utility"),
    ("log_sigma0_sq", "log(sigma0^2)", "Log prior variance of the perceived utility"),
    ("lambda", "lambda", "Latent-class membership logit"),
    ("c", "c", "Outside-option representative utility"),
    ("alpha0", "alpha0", "Tool utility intercept (class 1)"),
    ("log_delta_alpha0", "log(d_alpha0)", "Log class-2 increment to the utility intercept"),
    ("alpha1", "alpha1 (high_edu)", "Education shift of tool utility"),
    ("alpha2", "alpha2 (age)", "Age slope of tool utility"),
    ("alpha3", "alpha3 (male)", "Gender shift of tool utility"),
    ("alpha4", "alpha4 (white)", "Race shift of tool utility"),
    ("alpha5", "alpha5 (it)", "IT-occupation shift of tool utility"),
    ("sigma_n_sq", "sigma_n^2", "News-signal variance"),
    ("gamma0", "gamma0", "Usage-signal log-variance intercept (class 1)"),
    ("delta_gamma0", "d_gamma0", "Class-2 increment to the log-variance intercept"),
    ("gamma1", "gamma1 (high_edu)", "Education shift of the signal log-variance"),
    ("gamma2", "gamma2 (age)", "Age slope of the signal log-variance"),
    ("gamma3", "gamma3 (male)", "Gender shift of the signal log-variance"),
    ("gamma4", "gamma4 (white)", "Race shift of the signal log-variance"),
    ("gamma5", "gamma5 (it)", "IT-occupation shift of the signal log-variance"),
]
_SE_KEY_BY_PARAM = {"lambda": "lam", "sigma_n_sq": "log_sigma_n_sq"}


def _resolve_seed(args, config_seed: int | None = None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    if config_seed is not None:
        return config_seed
    return 0


def _apply_threads(args) -> None:
    threads = getattr(args, "threads", None)
    if threads is None:
        return
    if threads < 1:
        raise ValueError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _count_process(cfg: dict) -> CountProcess:
    kind = cfg.get("kind")
    if kind == "fixed":
        return CountProcess.fixed(int(cfg["count"]))
    if kind == "poisson":
        return CountProcess.poisson(float(cfg["mean"]))
    if kind == "none":
        return CountProcess.none()
    raise ValueError(f"unknown count process kind: {kind!r}")


def _population_spec(cfg: dict, seed: int) -> PopulationSpec:
    sampler_cfg = cfg.get("profile_sampler", {})
    return PopulationSpec(
        n_users=int(cfg["n_users"]),
        horizon_days=int(cfg["horizon_days"]),
        opportunity_process=_count_process(
            cfg.get("opportunity_process", {"kind": "poisson", "mean": 18.0})
        ),
        news_process=_count_process(cfg.get("news_process", {"kind": "poisson", "mean": 0.01})),
        profile_sampler=ProfileSampler(**sampler_cfg),
        master_seed=seed,
    )


def _sim_config(cfg: dict, seed: int) -> SimConfig:
    allowed = {
        "days", "opportunities_per_day", "pre_training_uses", "include_news",
        "news_mean", "trap_eval_day", "trap_ratio", "n_trajectories", "n_bootstrap",
    }
    unknown = set(cfg) - allowed - {"master_seed"}
    if unknown:
        raise ValueError(f"unknown simulation config keys: {', '.join(sorted(unknown))}")
    return SimConfig(**{k: v for k, v in cfg.items() if k in allowed}, master_seed=seed)


def _fit_options(cfg: dict, seed: int) -> FitOptions:
    mapping = {
        "R": "R", "mixing": "mixing", "max_evaluations": "max_evaluations",
        "tolerance": "tolerance", "fatol": "fatol", "restarts": "restarts",
        "compute_std_errors": "compute_std_errors",
        "bootstrap_samples": "bootstrap_samples",
    }
    unknown = set(cfg) - set(mapping)
    if unknown:
        raise ValueError(f"unknown fit option keys: {', '.join(sorted(unknown))}")
    return FitOptions(seed=seed, **{mapping[k]: v for k, v in cfg.items()})


def _manifest(args, command: str, config: dict, seed: int | None, inputs: list, outputs: list,
              started: float, out_dir) -> None:
    manifest = bd_io.RunManifest(
        command=command,
        config=config,
        master_seed=seed,
        code_version=__version__,
        input_digests={str(p): bd_io.file_digest(p) for p in inputs},
        outputs=[str(p) for p in outputs],
        wall_time_s=time.perf_counter() - started,
    )
    bd_io.write_manifest(manifest, out_dir)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    started = time.perf_counter()
    cfg = _load_json(args.config)
    seed = _resolve_seed(args, cfg.get("master_seed"))
    spec = _population_spec(cfg, seed)
    params = bd_io.read_params(args.params) if args.params else bd_io.table4_params()
    dataset, truths = simulate_dataset(spec, params)

    out = _out_dir(args)
    paths = [out / "profiles.csv", out / "panel.csv", out / "truth_users.csv",
             out / "truth_beliefs.csv"]
    bd_io.write_dataset(dataset, paths[0], paths[1])
    bd_io.write_truth(truths, paths[2], paths[3])
    inputs = [args.config] + ([args.params] if args.params else [])
    _manifest(args, "gen-data", cfg | {"master_seed": seed}, seed, inputs, paths, started, out)
    print(f"wrote {len(dataset)} users x {spec.horizon_days} days to {out}")
    return 0


def cmd_estimate(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args)
    dataset = bd_io.load_panel(args.profiles, args.panel)
    init = bd_io.read_params(args.init)
    fit_cfg = _load_json(args.fit_config) if args.fit_config else {}
    options = _fit_options(fit_cfg, seed)
    options = replace(
        options,
        R=args.R if args.R is not None else options.R,
        mixing=args.mixing or options.mixing,
        max_evaluations=args.budget if args.budget is not None else options.max_evaluations,
        restarts=args.restarts if args.restarts is not None else options.restarts,
        compute_std_errors=not args.no_std_errors
        if args.no_std_errors is not None
        else options.compute_std_errors,
    )
    result = fit_msl(dataset, init, options)

    out = _out_dir(args)
    result_path = out / "result.json"
    bd_io.write_estimation_result(result, result_path)
    config = {
        "R": options.R, "mixing": options.mixing,
        "max_evaluations": options.max_evaluations, "tolerance": options.tolerance,
        "restarts": options.restarts, "compute_std_errors": options.compute_std_errors,
    }
    inputs = [args.profiles, args.panel, args.init] + (
        [args.fit_config] if args.fit_config else []
    )
    _manifest(args, "estimate", config, seed, inputs, [result_path], started, out)
    status = "converged" if result.converged else "NOT converged"
    print(f"{status}: loglik={result.loglik:.4f} after {result.n_evaluations} evaluations")
    return 0


def cmd_recover(args) -> int:
    started = time.perf_counter()
    cfg = _load_json(args.config)
    seed = _resolve_seed(args, cfg.get("master_seed"))
    truth_cfg = cfg["truth"]
    if isinstance(truth_cfg, str):
        truth = bd_io.read_params(Path(args.config).parent / truth_cfg)
    else:
        tmp = Path(args.out) / "_truth_tmp.json"
        _out_dir(args)
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(truth_cfg, fh)
        truth = bd_io.read_params(tmp)
        tmp.unlink()
    config = RecoveryConfig(
        truth=truth,
        population=_population_spec(cfg["population"], seed),
        n_replications=int(cfg["n_replications"]),
        fit_options=_fit_options(cfg.get("fit", {}), seed),
        compute_ses=bool(cfg.get("compute_ses", False)),
        master_seed=seed,
    )
    report = monte_carlo_recovery(config)

    out = _out_dir(args)
    report_path = out / "recovery.json"
    bd_io.write_recovery_report(report, report_path)
    _manifest(args, "recover", cfg | {"master_seed": seed}, seed, [args.config],
              [report_path], started, out)
    print(
        f"{report.n_converged()}/{len(report.replications)} replications converged; "
        f"{len(report.failures)} failures"
    )
    return 0


def _profile_from_config(path) -> UserProfile:
    cfg = _load_json(path)
    return UserProfile(
        high_edu=bool(cfg["high_edu"]),
        age=int(cfg["age"]),
        male=bool(cfg["male"]),
        white=bool(cfg["white"]),
        it=bool(cfg["it"]),
        latent_class=LatentClass(int(cfg.get("latent_class", 2))),
    )


def cmd_policy(args) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args)
    params = bd_io.read_params(args.params)
    out = _out_dir(args)
    outputs: list[Path] = []
    config_snapshot: dict = {"preset": args.preset, "master_seed": seed}

    if args.preset == "paper-fig4":
        config = SimConfig(
            n_trajectories=args.trajectories or 10_000,
            n_bootstrap=args.bootstrap or 1_000,
            master_seed=seed,
        )
        estimates = [
            trap_probability(s.profile, params, s.config, v_override=s.v_override, label=s.label)
            for s in trap_comparison_scenarios(params, config)
        ]
        csv_path = out / "errorbar.csv"
        svg_path = out / "errorbar.svg"
        bd_io.write_trap_estimates(estimates, csv_path)
        svg_path.write_text(bd_io.render_error_bar_svg(estimates), encoding="utf-8")
        outputs += [csv_path, svg_path]
        config_snapshot |= {"n_trajectories": config.n_trajectories,
                            "n_bootstrap": config.n_bootstrap}
    elif args.preset == "paper-fig3":
        from .core import representative_utility

        profile = fast_learner_profile()
        config = SimConfig(days=args.days or 1000, master_seed=seed)
        series = []
        for label, training in (("untrained", 0), ("trained_200", 200)):
            cfg = replace(config, pre_training_uses=training)
            traj = simulate_trajectory(profile, params, cfg, trajectory_stream(seed, 0))
            path = out / f"trajectory_{label}.csv"
            bd_io.write_trajectory(traj, path)
            outputs.append(path)
            series.append((label, traj.belief_means))
        svg_path = out / "belief_paths.svg"
        svg_path.write_text(
            bd_io.render_belief_paths_svg(
                series, reference=representative_utility(profile, params)
            ),
            encoding="utf-8",
        )
        outputs.append(svg_path)
        config_snapshot |= {"days": config.days}
    else:
        cfg = _load_json(args.config) if args.config else {}
        config = _sim_config(cfg, seed)
        if args.trajectories:
            config = replace(config, n_trajectories=args.trajectories)
        if args.bootstrap:
            config = replace(config, n_bootstrap=args.bootstrap)
        if args.profile_config:
            profile, label = _profile_from_config(args.profile_config), "custom"
        elif args.profile == "fast":
            profile, label = fast_learner_profile(), "fast"
        else:
            profile, label = slow_learner_profile(), "slow"
        estimate = trap_probability(profile, params, config, label=label)
        traj = simulate_trajectory(profile, params, config, trajectory_stream(seed, 0))
        csv_path = out / "errorbar.csv"
        traj_path = out / "trajectory.csv"
        bd_io.write_trap_estimates([estimate], csv_path)
        bd_io.write_trajectory(traj, traj_path)
        outputs += [csv_path, traj_path]
        config_snapshot |= {"config": cfg, "profile": label,
                            "n_trajectories": config.n_trajectories}

    inputs = [args.params] + ([args.config] if args.config else []) + (
        [args.profile_config] if args.profile_config else []
    )
    _manifest(args, "policy", config_snapshot, seed, inputs, outputs, started, out)
    print(f"wrote {len(outputs)} policy outputs to {out}")
    return 0


def _render_report(payload: dict) -> str:
    if "params_hat" in payload:
        values = payload["params_hat"]
        ses = (payload.get("std_errors") or {}).get("values") or {}
        extra = [
            "",
            f"log-likelihood: {payload['loglik']:.4f}",
            f"converged: {payload['converged']}  evaluations: {payload['n_evaluations']}",
        ]
    else:
        values, ses, extra = payload, {}, []

    lines = [
        f"{'Parameter':<20} {'Description':<52} {'Value':>10} {'Std':>10}",
        "-" * 94,
    ]
    for key, symbol, description in _PARAM_ROWS:
        value = values[key]
        if key in ("v0", "log_sigma0_sq"):
            se_text = "(fixed)"
        else:
            se = ses.get(_SE_KEY_BY_PARAM.get(key, key))
            se_text = f"({se:.3f})" if se is not None else "--"
        lines.append(f"{symbol:<20} {description:<52} {value:>10.3f} {se_text:>10}")
    return "\n".join(lines + extra)


def cmd_report(args) -> int:
    payload = _load_json(args.result)
    print(_render_report(payload))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="belief-divide",
        description="Bayesian learning model of tool adoption: simulate, estimate, and "
        "run belief-trajectory policy experiments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides env/config)")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")

    p = sub.add_parser("gen-data", help="simulate a synthetic panel dataset")
    p.add_argument("--config", required=True, help="population spec JSON")
    p.add_argument("--params", default=None, help="parameter JSON (default: bundled estimates)")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("estimate", help="fit by maximum simulated likelihood")
    p.add_argument("--profiles", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--init", required=True, help="initial parameter JSON")
    p.add_argument("--fit-config", default=None, help="fit options JSON")
    p.add_argument("--R", type=int, default=None, help="simulation draws")
    p.add_argument("--mixing", choices=["per_user", "per_observation"], default=None)
    p.add_argument("--budget", type=int, default=None, help="max objective evaluations")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--no-std-errors", action="store_const", const=True, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("recover", help="Monte Carlo parameter-recovery experiment")
    p.add_argument("--config", required=True, help="recovery config JSON")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("policy", help="belief-trajectory policy simulations")
    p.add_argument("--params", required=True, help="parameter JSON")
    p.add_argument("--preset", choices=["paper-fig3", "paper-fig4"], default=None)
    p.add_argument("--config", default=None, help="simulation config JSON")
    p.add_argument("--profile", choices=["fast", "slow"], default="slow")
    p.add_argument("--profile-config", default=None, help="custom profile JSON")
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--bootstrap", type=int, default=None)
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("report", help="render a result or parameter JSON as a table")
    p.add_argument("result", help="result.json or parameter JSON path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
