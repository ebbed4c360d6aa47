"""File formats: panel/profile CSVs, parameter and result JSON, manifests.

All writers emit a fixed column/key order and shortest round-trip decimal
formatting (``repr``), so identical inputs always produce byte-identical
files regardless of locale or platform.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import LatentClass, ModelParams, UserProfile
from .dgp import Dataset, DayObservation, UserGroundTruth, UserPanel
from .estimation import EstimationResult, RecoveryReport
from .policy import TrapEstimate, Trajectory

__all__ = [
    "PanelValidationError",
    "load_panel",
    "write_dataset",
    "write_truth",
    "read_params",
    "write_params",
    "table4_params",
    "write_estimation_result",
    "write_recovery_report",
    "write_trap_estimates",
    "write_trajectory",
    "RunManifest",
    "write_manifest",
    "file_digest",
    "render_error_bar_svg",
    "render_belief_paths_svg",
]

PROFILE_COLUMNS = ["user_id", "high_edu", "age", "male", "white", "it"]
PANEL_COLUMNS = ["user_id", "day", "w_total", "w_gpt", "w_news"]
TRUTH_USER_COLUMNS = ["user_id", "latent_class", "representative_utility", "signal_variance"]
TRUTH_BELIEF_COLUMNS = [
    "user_id", "day", "belief_mean", "belief_variance", "usage_signal_sum", "news_signal_sum",
]
ERROR_BAR_COLUMNS = ["label", "point", "ci_low", "ci_high"]
TRAJECTORY_COLUMNS = ["day", "belief_mean", "belief_variance", "uses"]

# JSON key order for parameter files; the news-signal variance is stored in
# levels, everything else as held internally.
PARAM_KEYS = [
    "v0", "log_sigma0_sq", "lambda", "c", "alpha0", "log_delta_alpha0",
    "alpha1", "alpha2", "alpha3", "alpha4", "alpha5",
    "sigma_n_sq", "gamma0", "delta_gamma0",
    "gamma1", "gamma2", "gamma3", "gamma4", "gamma5",
]
_FIXED_KEYS = {"v0": 0.0, "log_sigma0_sq": 4.0}


class PanelValidationError(ValueError):
    """All validation problems found while loading a panel dataset."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        shown = "\n  ".join(self.errors[:20])
        suffix = "" if len(self.errors) <= 20 else f"\n  ... and {len(self.errors) - 20} more"
        super().__init__(f"panel validation failed:\n  {shown}{suffix}")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path: Path, columns: list[str]) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelValidationError([f"{path}: file is empty"]) from None
        if header != columns:
            raise PanelValidationError(
                [f"{path}: expected header {','.join(columns)}, got {','.join(header)}"]
            )
        return [dict(zip(columns, row)) for row in reader]


def _parse_int(raw: str, what: str, line: int, errors: list[str], minimum: int = 0) -> int:
    try:
        value = int(raw)
    except ValueError:
        errors.append(f"line {line}: {what} is not an integer: {raw!r}")
        return 0
    if value < minimum:
        errors.append(f"line {line}: {what} must be >= {minimum}, got {value}")
    return value


def load_panel(profiles_path, panel_path) -> Dataset:
    """Load and validate a profiles CSV plus a panel CSV into a dataset.

    The load is all-or-nothing: every violation is collected with its file
    line number and reported in one :class:`PanelValidationError`.
    """
    profiles_path = Path(profiles_path)
    panel_path = Path(panel_path)
    errors: list[str] = []

    profile_rows = _read_csv(profiles_path, PROFILE_COLUMNS)
    profiles: dict[str, UserProfile] = {}
    order: list[str] = []
    for offset, row in enumerate(profile_rows):
        line = offset + 2
        uid = row["user_id"]
        if not uid:
            errors.append(f"{profiles_path.name} line {line}: empty user_id")
            continue
        if uid in profiles:
            errors.append(f"{profiles_path.name} line {line}: duplicate user_id {uid!r}")
            continue
        age = _parse_int(row["age"], "age", line, errors)
        flags = {}
        for name in ("high_edu", "male", "white", "it"):
            raw = row[name]
            if raw not in ("0", "1"):
                errors.append(f"{profiles_path.name} line {line}: {name} must be 0 or 1, got {raw!r}")
                raw = "0"
            flags[name] = raw == "1"
        try:
            profiles[uid] = UserProfile(age=age, **flags)
        except ValueError as exc:
            errors.append(f"{profiles_path.name} line {line}: {exc}")
            continue
        order.append(uid)

    panel_rows = _read_csv(panel_path, PANEL_COLUMNS)
    if not panel_rows:
        errors.append(f"{panel_path.name}: no observations")
    observations: dict[str, list[DayObservation]] = {uid: [] for uid in order}
    seen_days: set[tuple[str, int]] = set()
    for offset, row in enumerate(panel_rows):
        line = offset + 2
        uid = row["user_id"]
        if uid not in profiles:
            errors.append(f"{panel_path.name} line {line}: unknown user_id {uid!r}")
            continue
        day = _parse_int(row["day"], "day", line, errors)
        w_total = _parse_int(row["w_total"], "w_total", line, errors)
        w_gpt = _parse_int(row["w_gpt"], "w_gpt", line, errors)
        w_news = _parse_int(row["w_news"], "w_news", line, errors)
        if w_gpt > w_total:
            errors.append(
                f"{panel_path.name} line {line}: w_gpt={w_gpt} exceeds w_total={w_total}"
            )
            continue
        if (uid, day) in seen_days:
            errors.append(f"{panel_path.name} line {line}: duplicate (user_id, day) = ({uid}, {day})")
            continue
        seen_days.add((uid, day))
        observations[uid].append(
            DayObservation(day=day, w_total=w_total, w_gpt=w_gpt, w_news=w_news)
        )

    if errors:
        raise PanelValidationError(errors)

    panels = tuple(
        UserPanel(
            user_id=uid,
            profile=profiles[uid],
            observations=tuple(sorted(observations[uid], key=lambda o: o.day)),
        )
        for uid in order
    )
    return Dataset(panels=panels)


def write_dataset(dataset: Dataset, profiles_path, panel_path) -> None:
    _write_csv(
        Path(profiles_path),
        PROFILE_COLUMNS,
        (
            (p.user_id, p.profile.high_edu, p.profile.age, p.profile.male,
             p.profile.white, p.profile.it)
            for p in dataset
        ),
    )
    _write_csv(
        Path(panel_path),
        PANEL_COLUMNS,
        (
            (p.user_id, o.day, o.w_total, o.w_gpt, o.w_news)
            for p in dataset
            for o in p.observations
        ),
    )


def write_truth(truths, users_path, beliefs_path) -> None:
    """Ground-truth tables: one per-user row plus the full belief paths."""
    _write_csv(
        Path(users_path),
        TRUTH_USER_COLUMNS,
        (
            (t.user_id, t.latent_class.value, t.representative_utility, t.signal_variance)
            for t in truths
        ),
    )

    def belief_rows():
        for t in truths:
            for day in range(len(t.usage_signal_sums)):
                yield (
                    t.user_id, day + 1,
                    t.belief_means[day + 1], t.belief_variances[day + 1],
                    t.usage_signal_sums[day], t.news_signal_sums[day],
                )

    _write_csv(Path(beliefs_path), TRUTH_BELIEF_COLUMNS, belief_rows())


def _sigma_level_for_roundtrip(log_value: float) -> float:
    """Level whose log rounds back to exactly ``log_value`` when possible."""
    level = math.exp(log_value)
    for candidate in (level, math.nextafter(level, 0.0), math.nextafter(level, math.inf)):
        if candidate > 0 and math.log(candidate) == log_value:
            return candidate
    return level


def read_params(path) -> ModelParams:
    """Read a parameter JSON file (fixed hyperparameters optional)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object of parameters")
    unknown = sorted(set(raw) - set(PARAM_KEYS))
    if unknown:
        raise ValueError(f"{path}: unknown parameter keys: {', '.join(unknown)}")
    missing = sorted(set(PARAM_KEYS) - set(raw) - set(_FIXED_KEYS))
    if missing:
        raise ValueError(f"{path}: missing parameter keys: {', '.join(missing)}")
    values = {k: float(raw.get(k, _FIXED_KEYS.get(k))) for k in PARAM_KEYS}
    if values["sigma_n_sq"] <= 0:
        raise ValueError(f"{path}: sigma_n_sq must be positive")
    return ModelParams(
        c=values["c"],
        alpha0=values["alpha0"],
        log_delta_alpha0=values["log_delta_alpha0"],
        alpha1=values["alpha1"],
        alpha2=values["alpha2"],
        alpha3=values["alpha3"],
        alpha4=values["alpha4"],
        alpha5=values["alpha5"],
        gamma0=values["gamma0"],
        delta_gamma0=values["delta_gamma0"],
        gamma1=values["gamma1"],
        gamma2=values["gamma2"],
        gamma3=values["gamma3"],
        gamma4=values["gamma4"],
        gamma5=values["gamma5"],
        log_sigma_n_sq=math.log(values["sigma_n_sq"]),
        lam=values["lambda"],
        v0=values["v0"],
        log_sigma0_sq=values["log_sigma0_sq"],
    )


def params_to_dict(params: ModelParams) -> dict[str, float]:
    """Parameter mapping in canonical key order (news variance in levels)."""
    out: dict[str, float] = {}
    for key in PARAM_KEYS:
        if key == "lambda":
            out[key] = params.lam
        elif key == "sigma_n_sq":
            out[key] = _sigma_level_for_roundtrip(params.log_sigma_n_sq)
        else:
            out[key] = getattr(params, key)
    return out


def write_params(params: ModelParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh, indent=2)
        fh.write("\n")


def table4_params() -> ModelParams:
    """The bundled headline parameter estimates."""
    ref = resources.files("belief_divide").joinpath("data/table4.json")
    with resources.as_file(ref) as path:
        return read_params(path)


def _se_payload(result: EstimationResult):
    if result.std_errors is None:
        return None
    return {
        "values": result.std_errors.values,
        "method": result.std_errors.method,
        "hessian_pd": result.std_errors.hessian_pd,
    }


def estimation_result_to_dict(result: EstimationResult) -> dict:
    # wall time lives in the run manifest so result files stay reproducible
    return {
        "params_hat": params_to_dict(result.params_hat),
        "loglik": result.loglik,
        "std_errors": _se_payload(result),
        "converged": result.converged,
        "n_evaluations": result.n_evaluations,
    }


def write_estimation_result(result: EstimationResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(estimation_result_to_dict(result), fh, indent=2)
        fh.write("\n")


def write_recovery_report(report: RecoveryReport, path) -> None:
    payload = {
        "truth": params_to_dict(report.truth),
        "n_replications": len(report.replications),
        "n_converged": report.n_converged(),
        "failures": list(report.failures),
        "bias": report.bias,
        "rmse": report.rmse,
        "coverage": report.coverage,
        "weakly_identified": list(report.weakly_identified),
        "replications": [estimation_result_to_dict(r) for r in report.replications],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_trap_estimates(estimates: list[TrapEstimate], path) -> None:
    _write_csv(
        Path(path),
        ERROR_BAR_COLUMNS,
        ((e.label, e.point, e.ci_low, e.ci_high) for e in estimates),
    )


def write_trajectory(trajectory: Trajectory, path) -> None:
    """Daily belief path CSV; day 0 is the post-training starting belief."""

    def rows():
        yield (0, trajectory.belief_means[0], trajectory.belief_variances[0], 0)
        for d in range(trajectory.uses.size):
            yield (
                d + 1,
                trajectory.belief_means[d + 1],
                trajectory.belief_variances[d + 1],
                trajectory.uses[d],
            )

    _write_csv(Path(path), TRAJECTORY_COLUMNS, rows())


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record for one CLI invocation."""

    command: str
    config: dict
    master_seed: int | None
    code_version: str
    input_digests: dict[str, str]
    outputs: list[str]
    wall_time_s: float


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    path = Path(out_dir) / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2, default=str)
        fh.write("\n")
    return path


def _svg_header(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def render_error_bar_svg(estimates: list[TrapEstimate], title: str = "Trapping probability") -> str:
    """Static error-bar chart: one bar per estimate with its 95% CI whisker."""
    width, height = 640, 400
    left, right, top, bottom = 70, 20, 40, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    y_max = max(0.01, max(e.ci_high for e in estimates) * 1.15)

    def x_of(i: int) -> float:
        return left + plot_w * (i + 0.5) / len(estimates)

    def y_of(v: float) -> float:
        return top + plot_h * (1.0 - v / y_max)

    parts = _svg_header(width, height)
    parts.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    parts.append(
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>'
    )
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = frac * y_max
        y = y_of(v)
        parts.append(f'<line x1="{left - 4}" y1="{y}" x2="{left}" y2="{y}" stroke="black"/>')
        parts.append(
            f'<text x="{left - 8}" y="{y + 4}" text-anchor="end" font-size="11">{v:.3f}</text>'
        )
    for i, e in enumerate(estimates):
        x = x_of(i)
        parts.append(
            f'<line x1="{x}" y1="{y_of(e.ci_low)}" x2="{x}" y2="{y_of(e.ci_high)}" '
            f'stroke="steelblue" stroke-width="2"/>'
        )
        for v in (e.ci_low, e.ci_high):
            parts.append(
                f'<line x1="{x - 6}" y1="{y_of(v)}" x2="{x + 6}" y2="{y_of(v)}" '
                f'stroke="steelblue" stroke-width="2"/>'
            )
        parts.append(f'<circle cx="{x}" cy="{y_of(e.point)}" r="4" fill="crimson"/>')
        parts.append(
            f'<text x="{x}" y="{top + plot_h + 18}" text-anchor="middle" font-size="11">{e.label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def render_belief_paths_svg(
    series: list[tuple[str, np.ndarray]],
    reference: float | None = None,
    title: str = "Belief over time",
) -> str:
    """Static scatter of one or more daily belief-mean paths."""
    width, height = 720, 420
    left, right, top, bottom = 60, 20, 40, 50
    plot_w = width - left - right
    plot_h = height - top - bottom
    all_y = np.concatenate([y for _, y in series])
    y_min = float(min(all_y.min(), 0.0 if reference is None else reference)) - 0.5
    y_max = float(max(all_y.max(), 0.0 if reference is None else reference)) + 0.5
    n_days = max(len(y) for _, y in series)
    colors = ["crimson", "steelblue", "seagreen", "darkorange"]

    def x_of(d: int) -> float:
        return left + plot_w * d / max(1, n_days - 1)

    def y_of(v: float) -> float:
        return top + plot_h * (1.0 - (v - y_min) / (y_max - y_min))

    parts = _svg_header(width, height)
    parts.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    parts.append(
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>'
    )
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    if reference is not None:
        y = y_of(reference)
        parts.append(
            f'<line x1="{left}" y1="{y}" x2="{left + plot_w}" y2="{y}" '
            f'stroke="gray" stroke-dasharray="6,4"/>'
        )
    for s, (label, ys) in enumerate(series):
        color = colors[s % len(colors)]
        step = max(1, len(ys) // 500)  # cap point count for file size
        for d in range(0, len(ys), step):
            parts.append(
                f'<circle cx="{x_of(d):.1f}" cy="{y_of(float(ys[d])):.1f}" r="1.6" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{left + 10}" y="{top + 16 + 16 * s}" font-size="12" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
