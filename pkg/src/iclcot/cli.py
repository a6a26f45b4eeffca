"""Command-line driver: train, pipeline, eval, report, text-eval.

Configs are TOML (human-edited); manifests are JSON (machine-read) and
carry a full config snapshot plus the seed, so every subcommand can be
replayed by passing the manifest as --config. All randomness flows from
one top-level seed through named streams. Exit codes are part of the
contract: 0 ok, 2 config error, 3 numeric abort, 4 empty pruned pool,
5 report mismatch.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .autocot import PipelineConfig, run_pipeline, selected_demos_from_manifest
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    EmptyPrunedPoolError,
    IclcotError,
    NanLossError,
    ReportMismatchError,
)
from .evaluation import (
    EvalConfig,
    attach_trials_from_csv,
    compare,
    comparison_to_markdown,
    report_from_csv,
    report_to_csv,
    run_eval,
    trials_to_csv,
)
from .figures import render_comparison_plot, render_mse_plot
from .llm import (
    LlmClient,
    LlmEndpointConfig,
    MockCompletionsTransport,
    RecordingTransport,
    ReplayTransport,
    load_dataset,
    text_pipeline_eval,
    text_rows_to_markdown,
)
from .model import ModelConfig, TrainConfig, TransformerModel, train
from .rng import RngState

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_EMPTY_PRUNE = 4
EXIT_REPORT_MISMATCH = 5

_MISSING = object()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict, seed: int, extra: str = "") -> str:
    payload = canonical_json({"config": config, "seed": seed, "extra": extra})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"iclcot-{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"iclcot-{__version__}"


def load_config(path: str | Path) -> tuple[dict, int | None]:
    """Read a TOML config, or a JSON manifest (replay) whose snapshot wins."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    if path.suffix == ".json":
        obj = json.loads(path.read_text(encoding="utf-8"))
        if "config" not in obj:
            raise ConfigError(str(path), "manifest has no config snapshot")
        return obj["config"], obj.get("seed")
    try:
        with open(path, "rb") as f:
            return tomllib.load(f), None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML parse error: {exc}") from exc


def _field(cfg: dict, section: str, key: str, cast, default=_MISSING):
    sec = cfg.get(section)
    if not isinstance(sec, dict):
        if default is not _MISSING:
            return default
        raise ConfigError(section, "missing section")
    if key not in sec:
        if default is not _MISSING:
            return default
        raise ConfigError(f"{section}.{key}", "missing required field")
    try:
        return cast(sec[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}", f"invalid value: {exc}") from exc


def make_model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        n_layers=_field(cfg, "model", "n_layers", int),
        n_heads=_field(cfg, "model", "n_heads", int),
        embed_dim=_field(cfg, "model", "embed_dim", int),
        max_tokens=_field(cfg, "model", "max_tokens", int),
        input_dim=_field(cfg, "model", "input_dim", int),
    )


def make_train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        steps=_field(cfg, "train", "steps", int),
        batch_size=_field(cfg, "train", "batch_size", int),
        learning_rate=_field(cfg, "train", "learning_rate", float),
        k_max=_field(cfg, "train", "k_max", int),
        family=_field(cfg, "train", "family", str),
        hidden_dim=_field(cfg, "train", "hidden_dim", int, 100),
        seed=seed,
    )


def _epsilon(value):
    if value == "median":
        return "median"
    return float(value)


def make_pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        pool_size=_field(cfg, "pipeline", "pool_size", int),
        epsilon=_field(cfg, "pipeline", "epsilon", _epsilon),
        batch_size=_field(cfg, "pipeline", "batch_size", int),
        epochs=_field(cfg, "pipeline", "epochs", int),
        pool_k=_field(cfg, "pipeline", "pool_k", int),
        repeats=_field(cfg, "pipeline", "repeats", int, 64),
        policy_lr=_field(cfg, "pipeline", "policy_lr", float, 0.5),
    )


def make_eval_config(cfg: dict, seed: int, with_pipeline: bool) -> EvalConfig:
    lengths = tuple(
        int(c) for c in _field(cfg, "eval", "context_lengths", list)
    )
    return EvalConfig(
        context_lengths=lengths,
        repeats=_field(cfg, "eval", "repeats", int, 64),
        trials=_field(cfg, "eval", "trials", int, 32),
        family=_field(cfg, "eval", "family", str),
        d=_field(cfg, "eval", "d", int),
        hidden_dim=_field(cfg, "eval", "hidden_dim", int, 100),
        seed=seed,
        pipeline=make_pipeline_config(cfg) if with_pipeline else None,
    )


def resolve_seed(cfg: dict, cli_seed: int | None, manifest_seed: int | None) -> int:
    if cli_seed is not None:
        return cli_seed
    if manifest_seed is not None:
        return manifest_seed
    return int(cfg.get("seed", 0))


def _run_dir(out: str, run_id: str) -> Path:
    d = Path(out) / "runs" / run_id
    d.mkdir(parents=True, exist_ok=True)
    return d


def _update_manifest(run_dir: Path, run_id: str, command: str, config: dict,
                     seed: int, artifacts: dict, extra: dict | None = None) -> None:
    path = run_dir / "manifest.json"
    manifest = (
        json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    )
    manifest.update(
        {"run_id": run_id, "config": config, "seed": seed, "version": version_string()}
    )
    commands = manifest.setdefault("commands", {})
    entry = {
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": artifacts,
    }
    if extra:
        entry.update(extra)
    commands[command] = entry
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# -- subcommands -----------------------------------------------------------------


def cmd_train(args) -> int:
    config, manifest_seed = load_config(args.config)
    seed = resolve_seed(config, args.seed, manifest_seed)
    model_cfg = make_model_config(config)
    train_cfg = make_train_config(config, seed)
    run_id = config_hash(config, seed)
    run_dir = _run_dir(args.out, run_id)

    weights, curve = train(train_cfg, model_cfg)
    ckpt = run_dir / "checkpoint.bin"
    save_checkpoint(weights, ckpt)
    loss_csv = run_dir / "train_loss.csv"
    loss_csv.write_text(
        "step,loss\n" + "".join(f"{s},{float(l)!s}\n" for s, l in curve),
        encoding="utf-8",
    )
    _update_manifest(
        run_dir, run_id, "train", config, seed,
        {"checkpoint": str(ckpt), "train_loss": str(loss_csv)},
        {"param_count": weights.param_count(), "final_loss": curve[-1][1]},
    )
    print(f"trained {weights.param_count()} params; final loss {curve[-1][1]:.6g}")
    print(f"run dir: {run_dir}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    config, manifest_seed = load_config(args.config)
    seed = resolve_seed(config, args.seed, manifest_seed)
    pipe_cfg = make_pipeline_config(config)
    family = _field(config, "pipeline", "family", str,
                    _field(config, "train", "family", str, "linear"))
    hidden = _field(config, "pipeline", "hidden_dim", int,
                    _field(config, "train", "hidden_dim", int, 100))
    weights = load_checkpoint(args.checkpoint)
    model = TransformerModel(weights)
    run_id = config_hash(config, seed)
    run_dir = _run_dir(args.out, run_id)

    result = run_pipeline(
        model, pipe_cfg, family, model.input_dim,
        RngState(seed).named("pipeline"), hidden_dim=hidden,
    )
    pipeline_json = run_dir / "pipeline.json"
    pipeline_json.write_text(
        json.dumps(result.to_manifest(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _update_manifest(
        run_dir, run_id, "pipeline", config, seed,
        {"pipeline": str(pipeline_json), "checkpoint": str(args.checkpoint)},
        {"retained": len(result.retained_indices),
         "selection": result.to_manifest()["selected_pool_indices"]},
    )
    print(f"pool {pipe_cfg.pool_size}, retained {len(result.retained_indices)}, "
          f"selected {result.to_manifest()['selected_pool_indices']}")
    print(f"run dir: {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config, manifest_seed = load_config(args.config)
    seed = resolve_seed(config, args.seed, manifest_seed)
    weights = load_checkpoint(args.checkpoint)
    model = TransformerModel(weights)

    selected_demos = None
    pipeline_manifest = None
    if args.pipeline:
        pipeline_manifest = json.loads(Path(args.pipeline).read_text(encoding="utf-8"))
        selected_demos = selected_demos_from_manifest(pipeline_manifest)
    eval_cfg = make_eval_config(config, seed, with_pipeline=False)

    extra = canonical_json(pipeline_manifest) if pipeline_manifest else ""
    run_id = config_hash(config, seed, extra=hashlib.sha256(extra.encode()).hexdigest())
    run_dir = _run_dir(args.out, run_id)
    metrics_csv = run_dir / "metrics.csv"
    trials_csv = run_dir / "trials.csv"

    def flush(report):
        report.config_hash = run_id
        metrics_csv.write_text(report_to_csv(report), encoding="utf-8")
        trials_csv.write_text(trials_to_csv(report), encoding="utf-8")

    rng = RngState(seed).named("eval")
    try:
        report = run_eval(model, eval_cfg, rng, selected_demos=selected_demos,
                          partial_sink=flush)
    except IclcotError:
        _update_manifest(run_dir, run_id, "eval", config, seed,
                         {"metrics": str(metrics_csv)}, {"partial": True})
        raise
    report.config_hash = run_id
    flush(report)
    plot_svg = run_dir / "plot.svg"
    render_mse_plot([report], plot_svg, salt=run_id)
    _update_manifest(
        run_dir, run_id, "eval", config, seed,
        {"metrics": str(metrics_csv), "trials": str(trials_csv),
         "plot": str(plot_svg), "checkpoint": str(args.checkpoint)},
        {"method": report.method,
         "pipeline_manifest": pipeline_manifest} if pipeline_manifest
        else {"method": report.method},
    )
    print(report_to_csv(report), end="")
    print(f"run dir: {run_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    def read_report(path: str):
        p = Path(path)
        report = report_from_csv(p.read_text(encoding="utf-8"))
        sidecar = p.with_name("trials.csv")
        if sidecar.exists():
            report = attach_trials_from_csv(report, sidecar.read_text(encoding="utf-8"))
        return report

    baseline = read_report(args.baseline_csv)
    autocot = read_report(args.autocot_csv)
    comp = compare(baseline, autocot)
    md = comparison_to_markdown(comp)
    print(md)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.md").write_text(md + "\n", encoding="utf-8")
    render_comparison_plot(comp, out_dir / "comparison.svg")
    return EXIT_OK


def _make_text_transport(config: dict, record_path: Path | None):
    kind = _field(config, "text", "transport", str, "http")
    if kind == "mock":
        logprob = _field(config, "text", "mock_logprob", float, -0.5)
        transport = MockCompletionsTransport(logprob_for=lambda tok: logprob)
    elif kind.startswith("replay:"):
        transport = ReplayTransport(kind.split(":", 1)[1])
    elif kind == "http":
        transport = None  # LlmClient builds HttpTransport (needs API key env)
    else:
        raise ConfigError("text.transport", f"unknown transport {kind!r}")
    if record_path is not None and transport is not None:
        transport = RecordingTransport(transport, record_path)
    return transport


def cmd_text_eval(args) -> int:
    config, manifest_seed = load_config(args.config)
    seed = resolve_seed(config, args.seed, manifest_seed)
    run_id = config_hash(config, seed)
    run_dir = _run_dir(args.out, run_id)

    dataset_path = _field(config, "text", "dataset", str)
    records = load_dataset(dataset_path)
    endpoint = LlmEndpointConfig(
        base_url=_field(config, "text", "base_url", str, "http://localhost:8000"),
        model=_field(config, "text", "model", str, "gpt2"),
        timeout_s=_field(config, "text", "timeout_s", float, 30.0),
        max_retries=_field(config, "text", "max_retries", int, 3),
    )
    record_path = (run_dir / "replay.ndjson") if args.record else None
    transport = _make_text_transport(config, record_path)
    client = LlmClient(endpoint, transport=transport)

    if not records:
        print("warning: dataset is empty; nothing to evaluate", file=sys.stderr)
        rows = []
    else:
        rows = text_pipeline_eval(
            client,
            records,
            context_lengths=[int(c) for c in _field(config, "text", "context_lengths", list, [1, 3, 5])],
            epsilon=_field(config, "text", "epsilon", float, 5.0),
            rng=RngState(seed).named("text"),
            pool_size=_field(config, "text", "pool_size", int, 8),
            batch_size=_field(config, "text", "batch_size", int, 4),
            epochs=_field(config, "text", "epochs", int, 20),
            policy_lr=_field(config, "text", "policy_lr", float, 0.5),
        )
    md = text_rows_to_markdown(rows)
    print(md)
    (run_dir / "text_report.md").write_text(md + "\n", encoding="utf-8")
    csv_lines = ["context_len,autocot_nll,baseline_nll"] + [
        f"{r.context_len},{r.autocot_nll!s},{r.baseline_nll!s}" for r in rows
    ]
    (run_dir / "text_metrics.csv").write_text("\n".join(csv_lines) + "\n",
                                              encoding="utf-8")
    artifacts = {"report": str(run_dir / "text_report.md"),
                 "metrics": str(run_dir / "text_metrics.csv")}
    if record_path is not None:
        artifacts["replay"] = str(record_path)
    _update_manifest(run_dir, run_id, "text-eval", config, seed, artifacts)
    print(f"run dir: {run_dir}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iclcot",
        description="In-context learning with automatic chain-of-thought selection",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML config or JSON manifest")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=".", help="output root (runs/<id>/ inside)")
        p.add_argument("--record", action="store_true",
                       help="record endpoint traffic to a replay log")

    p = sub.add_parser("train", help="train a transformer on sampled tasks")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pipeline", help="augment/prune/select demonstrations")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="benchmark baseline or Auto-CoT")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pipeline", default=None, help="pipeline.json for the Auto-CoT path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="compare baseline and Auto-CoT CSVs")
    p.add_argument("baseline_csv")
    p.add_argument("autocot_csv")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("text-eval", help="text scenario against a completions endpoint")
    common(p)
    p.set_defaults(func=cmd_text_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NanLossError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NAN
    except EmptyPrunedPoolError as exc:
        print(
            f"empty pruned pool: {exc}\n"
            f"suggested epsilon: {exc.min_loss * 1.01:.6g}",
            file=sys.stderr,
        )
        return EXIT_EMPTY_PRUNE
    except ReportMismatchError as exc:
        print(f"report mismatch: {exc}", file=sys.stderr)
        return EXIT_REPORT_MISMATCH
    except IclcotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
