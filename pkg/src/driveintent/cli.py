"""Command-line pipeline: generate traces, build datasets, train, evaluate,
and serve interactive labeling sessions.

Every subcommand writes a manifest.json of its fully resolved configuration
and seeds, sufficient to reproduce the run byte-for-byte.  Outputs carry no
timestamps; identical invocations produce identical trees.

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from . import __version__
from .classifiers import (
    DEFAULT_GRIDS,
    TRAINERS,
    ClassifierError,
    cross_validate,
    predict,
)
from .config import AppConfig, ConfigError, load_config
from .dataset_io import (
    DatasetError,
    build_dataset_from_dir,
    iter_traces_dir,
    load_model,
    read_feature_table,
    read_normalizer,
    read_trace,
    save_model,
    split_episodes,
    trace_filename,
    write_feature_table,
    write_normalizer,
    write_split,
    write_trace,
)
from .domain import ModeLabel, derive_rng, format_float
from .driver import SurrogateDriver, apply_label_noise, sample_profiles
from .evaluation import (
    EvaluationError,
    analyze_traces,
    probability_trace,
    render_text,
    report_from_parts,
)
from .simulation import SimulationError, generate_scenarios, run_episode

ALGORITHMS = ("svm", "rf", "lr")


def _resolve_out_dir(args, command: str) -> str:
    """--out-dir wins; else the DRIVEINTENT_OUT_DIR environment override;
    else ./runs/<command>."""
    if args.out_dir:
        return args.out_dir
    env = os.environ.get("DRIVEINTENT_OUT_DIR")
    if env:
        return os.path.join(env, command)
    return os.path.join("runs", command)


def _write_manifest(out_dir: str, command: str, payload: dict) -> str:
    path = os.path.join(out_dir, "manifest.json")
    doc = {"tool_version": __version__, "command": command, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load(args) -> tuple[AppConfig, int]:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    return cfg, seed


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg, seed = _load(args)
    out_dir = _resolve_out_dir(args, "generate")
    traces_dir = os.path.join(out_dir, "traces")
    os.makedirs(traces_dir, exist_ok=True)
    label_noise = cfg.label_noise if args.label_noise is None else args.label_noise

    profiles = sample_profiles(cfg.profile_count, seed)
    scenarios = generate_scenarios(cfg.grid, seed, cfg.geometry)
    stats = {
        p.name: {"episodes": 0, "lane_changes": 0, "aborts": 0, "collisions": 0}
        for p in profiles
    }

    n_total = len(profiles) * len(scenarios) * cfg.grid.replicates
    done = 0
    for params in profiles:
        for spec in scenarios:
            for rep in range(cfg.grid.replicates):
                episode_id = f"{params.name}-{spec.scenario_id}-r{rep}"
                ep_seed = int(
                    derive_rng(seed, "episode", episode_id).integers(0, 2**63 - 1)
                )
                trace = run_episode(
                    spec,
                    SurrogateDriver(params),
                    cfg.sensor,
                    seed=ep_seed,
                    geometry=cfg.geometry,
                    episode_id=episode_id,
                    config_digest=cfg.digest,
                )
                if label_noise:
                    trace = apply_label_noise(
                        trace, params, derive_rng(seed, "label", episode_id)
                    )
                write_trace(trace, os.path.join(traces_dir, trace_filename(trace)))
                s = stats[params.name]
                s["episodes"] += 1
                s["lane_changes"] += sum(
                    1 for e in trace.mode_events if e.sigma == "sigma3"
                )
                s["aborts"] += sum(1 for e in trace.mode_events if e.sigma == "sigma0")
                s["collisions"] += int(trace.collided)
                done += 1
                if done % 200 == 0:
                    print(f"  {done}/{n_total} episodes", file=sys.stderr)

    lines = [f"batch: {n_total} episodes, {len(scenarios)} scenarios, seed {seed}"]
    for name in sorted(stats):
        s = stats[name]
        lines.append(
            f"{name}: episodes={s['episodes']} lane_changes={s['lane_changes']} "
            f"aborts={s['aborts']} collisions={s['collisions']}"
        )
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary)
    _write_manifest(
        out_dir,
        "generate",
        {
            "seed": seed,
            "label_noise": label_noise,
            "config_digest": cfg.digest,
            "config": cfg.resolved_dict(),
            "profiles": [p.to_dict() for p in profiles],
            "scenario_count": len(scenarios),
            "episode_count": n_total,
        },
    )
    print(summary, end="")
    print(f"traces written to {traces_dir}")
    return 0


# ---------------------------------------------------------------------------
# featurize
# ---------------------------------------------------------------------------


def cmd_featurize(args) -> int:
    cfg, seed = _load(args)
    out_dir = _resolve_out_dir(args, "featurize")
    os.makedirs(out_dir, exist_ok=True)
    traces_dir = args.traces

    episode_ids = [
        name[: -len(".jsonl")]
        for name in sorted(os.listdir(traces_dir))
        if name.endswith(".jsonl")
    ]
    if not episode_ids:
        raise DatasetError(f"{traces_dir}: no trace files found")
    manifest = split_episodes(episode_ids, cfg.train_fraction, seed)
    built = build_dataset_from_dir(traces_dir, manifest, cfg.sensor, cfg.geometry)

    write_feature_table(built.train, os.path.join(out_dir, "train.csv"))
    write_feature_table(built.test, os.path.join(out_dir, "test.csv"))
    write_normalizer(built.normalizer, os.path.join(out_dir, "normalizer.json"))
    write_split(manifest, os.path.join(out_dir, "split.txt"))

    lines = [
        f"episodes: {len(episode_ids)} "
        f"(train {len(manifest.episodes('train'))}, test {len(manifest.episodes('test'))})",
        f"rows: train={len(built.train)} test={len(built.test)}",
        f"excluded episodes: {len(built.excluded_episodes)}",
    ]
    for episode_id, reason in built.excluded_episodes:
        lines.append(f"  {episode_id}: {reason}")
    summary = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(summary)
    _write_manifest(
        out_dir,
        "featurize",
        {
            "seed": seed,
            "traces_dir": os.path.abspath(traces_dir),
            "train_fraction": cfg.train_fraction,
            "config_digest": cfg.digest,
            "config": cfg.resolved_dict(),
            "excluded": built.excluded_episodes,
        },
    )
    print(summary, end="")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _deterministic_subsample(data, cap: int, seed: int, purpose: str):
    if len(data) <= cap:
        return data
    rng = derive_rng(seed, "subsample", purpose)
    idx = np.sort(rng.choice(len(data), size=cap, replace=False))
    return data.subset(idx)


def cmd_train(args) -> int:
    cfg, seed = _load(args)
    out_dir = _resolve_out_dir(args, "train")
    os.makedirs(out_dir, exist_ok=True)
    algo = args.algo

    train = read_feature_table(os.path.join(args.dataset, "train.csv"))
    normalizer = read_normalizer(os.path.join(args.dataset, "normalizer.json"))

    params = dict(cfg.train.defaults[algo])
    cv_table = None
    use_cv = cfg.train.cross_validate if args.cv is None else args.cv
    if use_cv:
        cv_data = _deterministic_subsample(train, cfg.train.rf_subsample, seed, "cv")
        result = cross_validate(
            cv_data, algo, DEFAULT_GRIDS[algo], k=cfg.train.cv_folds, seed=seed
        )
        params = result.best_params
        cv_table = [
            {"params": combo, "mean_accuracy": score} for combo, score in result.table
        ]
        print(f"cross-validation selected {params}")

    fit_data = train
    if algo == "rf":
        fit_data = _deterministic_subsample(train, cfg.train.rf_subsample, seed, "rf")
    elif algo == "lr" and cfg.train.lr_subsample:
        fit_data = _deterministic_subsample(train, cfg.train.lr_subsample, seed, "lr")
    model = TRAINERS[algo](fit_data, params, seed)
    model.normalizer = normalizer
    model.meta["train_rows"] = len(fit_data)

    train_preds = predict(model, train.features)
    train_acc = float(np.mean(train_preds == train.labels))
    model.meta["train_accuracy"] = train_acc

    model_path = os.path.join(out_dir, f"model_{algo}.json")
    save_model(model, model_path)
    _write_manifest(
        out_dir,
        "train",
        {
            "seed": seed,
            "algorithm": algo,
            "dataset_dir": os.path.abspath(args.dataset),
            "hyperparameters": params,
            "cross_validation": cv_table,
            "fit_rows": len(fit_data),
            "config_digest": cfg.digest,
            "config": cfg.resolved_dict(),
        },
    )
    print(f"{algo}: trained on {len(fit_data)} rows, training accuracy {train_acc:.4f}")
    print(f"model written to {model_path}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    format_float(v) if isinstance(v, float) else str(v) for v in row
                )
                + "\n"
            )


def cmd_eval(args) -> int:
    cfg, seed = _load(args)
    out_dir = _resolve_out_dir(args, "eval")
    os.makedirs(out_dir, exist_ok=True)

    model = load_model(args.model)
    test = read_feature_table(os.path.join(args.dataset, "test.csv"))
    preds = predict(model, test.features)

    test_episodes = set(str(g) for g in test.groups)
    prob_episode: dict = {"id": None, "path": None}

    def stream():
        for trace in iter_traces_dir(args.traces):
            if (
                prob_episode["id"] is None
                and trace.episode_id in test_episodes
                and any(e.sigma == "sigma2" for e in trace.mode_events)
            ):
                prob_episode["id"] = trace.episode_id
                prob_episode["path"] = os.path.join(
                    args.traces, trace_filename(trace)
                )
            yield trace

    timing, dists = analyze_traces(stream(), cfg.geometry, cfg.sensor)
    report = report_from_parts(model.kind, preds, test, timing, dists)

    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(render_text(report))

    acc = report.accuracy
    scen = acc.accuracy_by_scenario
    _write_csv(
        os.path.join(out_dir, "accuracy.csv"),
        ["algo", "overall", "scen1", "scen2", "scen3", "scen0", "rows"],
        [
            [
                model.kind,
                acc.overall_accuracy,
                scen.get(1, (float("nan"), 0))[0],
                scen.get(2, (float("nan"), 0))[0],
                scen.get(3, (float("nan"), 0))[0],
                scen.get(0, (float("nan"), 0))[0],
                acc.n_rows,
            ]
        ],
    )
    _write_csv(
        os.path.join(out_dir, "confusion.csv"),
        ["true_mode", "pred_lk", "pred_prep", "pred_lc", "row_count"],
        [
            [m.short, *[float(v) for v in acc.confusion[i]], int(acc.confusion_counts[i].sum())]
            for i, m in enumerate(ModeLabel)
        ],
    )
    _write_csv(
        os.path.join(out_dir, "timing.csv"),
        ["metric", "mean_s", "std_s", "n"],
        [[k, m, s, n] for k, (m, s, n) in report.timing_summary().items()],
    )
    _write_csv(
        os.path.join(out_dir, "timing_samples.csv"),
        ["metric", "seconds"],
        [["T_P", v] for v in timing.t_p]
        + [["dT_P", v] for v in timing.dt_p]
        + [["dT_LC", v] for v in timing.dt_lc]
        + [["T_P_aborted", v] for v in timing.t_p_aborted],
    )
    _write_csv(
        os.path.join(out_dir, "transitions.csv"),
        ["metric", "mean", "std_events", "std_profiles", "n"],
        [
            [k, m, se, sp, len(dists.transition[k])]
            for k, (m, se, sp) in report.transition_summary().items()
        ],
    )
    hist_rows = []
    for mode in ModeLabel:
        edges, counts = dists.histogram(mode)
        for i, count in enumerate(counts):
            hist_rows.append([mode.short, float(edges[i]), float(edges[i + 1]), int(count)])
    _write_csv(
        os.path.join(out_dir, "lateral_hist.csv"),
        ["mode", "bin_left_m", "bin_right_m", "count"],
        hist_rows,
    )

    prob_rows = None
    if model.kind != "svm" and prob_episode["path"] is not None:
        if model.normalizer is None:
            raise DatasetError("model file carries no normalizer")
        prob_trace_obj = read_trace(prob_episode["path"])
        prob_rows = probability_trace(
            model, prob_trace_obj, model.normalizer, cfg.sensor, cfg.geometry
        )
        _write_csv(
            os.path.join(out_dir, "probability_trace.csv"),
            ["time_s", "p_lk", "p_prep", "p_lc", "true_mode"],
            [[r[0], r[1], r[2], r[3], int(r[4])] for r in prob_rows],
        )

    from .report import render_figures  # deferred: pulls in matplotlib

    figures = render_figures(report, prob_rows, out_dir, prefix=model.kind)

    _write_manifest(
        out_dir,
        "eval",
        {
            "seed": seed,
            "model_path": os.path.abspath(args.model),
            "dataset_dir": os.path.abspath(args.dataset),
            "traces_dir": os.path.abspath(args.traces),
            "algorithm": model.kind,
            "probability_trace_episode": prob_episode["id"],
            "figures": [os.path.basename(f) for f in figures],
            "config_digest": cfg.digest,
            "config": cfg.resolved_dict(),
        },
    )
    print(render_text(report), end="")
    print(f"report written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    cfg, seed = _load(args)
    from .session import headless_check, serve_forever  # deferred: asyncio setup

    port = args.port if args.port is not None else cfg.serve.port
    if args.headless_check:
        return headless_check(cfg, seed)
    return serve_forever(cfg, seed, port=port)


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driveintent",
        description=(
            "Two-lane highway batch simulator, per-tick intent datasets, "
            "from-scratch classifiers, and a live labeling service."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config path (default: packaged config)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="output directory (default runs/<command>)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "generate", parents=[common], help="run batch episodes, write trace files"
    )
    p.add_argument(
        "--label-noise",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="override the config's label_noise flag",
    )
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "featurize", parents=[common], help="build train/test feature tables"
    )
    p.add_argument("--traces", required=True, help="directory of trace files")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train one classifier")
    p.add_argument("--dataset", required=True, help="featurize output directory")
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument(
        "--cv",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="grid-search hyperparameters by cross-validation before training",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "eval", parents=[common], help="evaluate a model, write report + figures"
    )
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--dataset", required=True, help="featurize output directory")
    p.add_argument("--traces", required=True, help="directory of trace files")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "serve", parents=[common], help="run the interactive labeling service"
    )
    p.add_argument("--port", type=int, help="override the config port")
    p.add_argument(
        "--headless-check",
        action="store_true",
        help="run one synthetic client handshake and exit",
    )
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        DatasetError,
        ClassifierError,
        EvaluationError,
        SimulationError,
        FileNotFoundError,
        NotADirectoryError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
