"""Command-line front end.

Commands:
    enkf-lab validate <model.json>
    enkf-lab kf <model.json> -o DIR
    enkf-lab study <model.json> <study.json> -o DIR
        [--seed S] [--format json|csv|both] [--dump-trajectories] [--workers W]

Exit codes: 0 success, 1 domain-invalid input, 2 I/O or parse failure.
Seed precedence: --seed flag > study file > ENKF_LAB_SEED env var > 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .enkf import coupled_run
from .ensemble import write_ensemble
from .experiment import ALL_METRICS, Metric, StudyConfig, run_study
from .jsonio import write_canonical_json
from .kf import kf_run
from .model import (
    GaussianState,
    LinearModel,
    ModelFormatError,
    ValidationError,
    load_model,
    validate_model,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2

SEED_ENV_VAR = "ENKF_LAB_SEED"


class StudyFormatError(ValueError):
    """A study file cannot be parsed into a StudyConfig."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enkf-lab",
        description="Linear-Gaussian filtering lab: exact Kalman filter, "
        "perturbed-observation EnKF, and convergence studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a model file")
    p_validate.add_argument("model", help="model JSON file")

    p_kf = sub.add_parser("kf", help="run the exact Kalman filter")
    p_kf.add_argument("model", help="model JSON file")
    p_kf.add_argument("-o", "--out", required=True, help="output directory")

    p_study = sub.add_parser("study", help="run a replicated convergence study")
    p_study.add_argument("model", help="model JSON file")
    p_study.add_argument("study", help="study JSON file")
    p_study.add_argument("-o", "--out", required=True, help="output directory")
    p_study.add_argument("--seed", type=int, default=None, help="seed override")
    p_study.add_argument(
        "--format", choices=("json", "csv", "both"), default="both",
        dest="fmt", help="report output format",
    )
    p_study.add_argument(
        "--dump-trajectories", action="store_true",
        help="write per-step binary ensemble snapshots of replicate 0 per N",
    )
    p_study.add_argument(
        "--workers", type=int, default=1, help="max parallel replicate workers"
    )
    return parser


def cmd_validate(model_path: str) -> int:
    model, _ = load_model(model_path, validate=False)
    result = validate_model(model)
    if not result.ok:
        for violation in result.violations:
            print(violation, file=sys.stderr)
        return EXIT_INVALID
    print(
        f"model ok: state_dim={model.state_dim} obs_dim={model.obs_dim} "
        f"steps={len(model.steps)}"
    )
    return EXIT_OK


def _state_dict(state: GaussianState) -> dict:
    return {"mean": state.mean.tolist(), "cov": state.cov.tolist()}


def cmd_kf(model_path: str, out_dir: str) -> int:
    model, init = load_model(model_path)
    trajectory = kf_run(model, init)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "init": _state_dict(trajectory.init),
        "steps": [
            {
                "k": k,
                "forecast": _state_dict(step.forecast),
                "gain": step.gain.tolist(),
                "analysis": _state_dict(step.analysis),
            }
            for k, step in enumerate(trajectory.steps, start=1)
        ],
    }
    write_canonical_json(out / "kf.json", payload)
    print(f"wrote {out / 'kf.json'}")
    return EXIT_OK


def _build_study_config(raw: dict, model: LinearModel, init: GaussianState, seed: int):
    if "n_grid" not in raw or "replicates" not in raw:
        raise StudyFormatError("study file needs n_grid and replicates")
    metric_names = raw.get("metrics")
    if metric_names is None:
        metrics = ALL_METRICS
    else:
        try:
            metrics = tuple(Metric(name) for name in metric_names)
        except ValueError as exc:
            raise StudyFormatError(f"unknown metric in study file: {exc}") from exc
    return StudyConfig(
        model=model,
        init=init,
        seed=seed,
        n_grid=raw["n_grid"],
        replicates=raw["replicates"],
        p_list=raw.get("p_list", (2.0, 4.0)),
        metrics=metrics,
    )


def _resolve_seed(cli_seed, study_raw_seed) -> int:
    if cli_seed is not None:
        return cli_seed
    if study_raw_seed is not None:
        return int(study_raw_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    return 0


def _dump_trajectories(out: Path, config: StudyConfig) -> None:
    # Replicate 0 stands in for the whole study; every replicate is
    # regenerable from (seed, replicate, N) anyway.
    trajectory = kf_run(config.model, config.init)
    root = out / "trajectories"
    for n in config.n_grid:
        run = coupled_run(config.model, config.init, config.seed, 0, n, trajectory)
        n_dir = root / f"n{n}"
        n_dir.mkdir(parents=True, exist_ok=True)
        index = {"n": n, "replicate": 0, "seed": config.seed, "steps": []}
        for state in run:
            x_name = f"step{state.step}.x.bin"
            u_name = f"step{state.step}.u.bin"
            write_ensemble(n_dir / x_name, state.enkf_ensemble)
            write_ensemble(n_dir / u_name, state.reference_ensemble)
            index["steps"].append(
                {
                    "k": state.step,
                    "x": x_name,
                    "u": u_name,
                    "ensemble_gain": None
                    if state.ensemble_gain is None
                    else state.ensemble_gain.tolist(),
                    "exact_gain": None
                    if state.exact_gain is None
                    else state.exact_gain.tolist(),
                }
            )
        write_canonical_json(n_dir / "index.json", index)


def cmd_study(
    model_path: str,
    study_path: str,
    out_dir: str,
    seed: int | None = None,
    fmt: str = "both",
    dump_trajectories: bool = False,
    workers: int = 1,
) -> int:
    model, init = load_model(model_path)
    with open(Path(study_path), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise StudyFormatError("study file must contain a JSON object")
    resolved_seed = _resolve_seed(seed, raw.get("seed"))
    config = _build_study_config(raw, model, init, resolved_seed)

    report = run_study(config, workers=max(1, workers))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt in ("json", "both"):
        report.write_json(out / "report.json")
    if fmt in ("csv", "both"):
        report.write_estimates_csv(out / "estimates.csv")
        report.write_rates_csv(out / "rates.csv")
    if dump_trajectories:
        _dump_trajectories(out, config)

    last_fit: dict[str, object] = {}
    for row in report.rates:
        last_fit[row.metric] = row
    for metric in sorted(last_fit):
        row = last_fit[metric]
        print(
            f"{metric} k={row.k}: slope={row.slope:+.3f} "
            f"intercept={row.intercept:+.3f} max_residual={row.max_residual:.3f}"
        )
    for row in report.moment_flags:
        if row.flagged:
            print(f"{row.metric} k={row.k}: explosion flag RAISED "
                  f"(max/min={row.max_over_min:.2f})")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.model)
        if args.command == "kf":
            return cmd_kf(args.model, args.out)
        if args.command == "study":
            return cmd_study(
                args.model,
                args.study,
                args.out,
                seed=args.seed,
                fmt=args.fmt,
                dump_trajectories=args.dump_trajectories,
                workers=args.workers,
            )
        raise AssertionError(f"unhandled command {args.command!r}")
    except (ModelFormatError, StudyFormatError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
