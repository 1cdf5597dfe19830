"""Batch command-line entry point.

Commands: ``sci generate | train | eval | ablate | plot``. Every command is
a single process; concurrent invocations must target distinct output
directories (a lock file enforces this). Completed outputs carry exactly one
manifest, written atomically last, so an interrupted run is recognizable by
its absence; absent ``--force``, commands skip complete outputs and refuse
incomplete ones.

Exit codes: 0 success, 2 usage/config/data error, 3 numeric failure.
``SCI_NUM_THREADS`` caps worker threads (default 1 for reproducibility).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import torch

from . import __version__
from .errors import (
    ConfigError,
    DatasetError,
    LockError,
    NumericFailureError,
    DeterminismError,
    SCIError,
)
from .ident_eval import write_ablation_json
from .synthgen import GenConfig, make_process, sample_dataset, write_dataset, read_dataset
from .svae import ModelConfig, SCIModel, forward, load_checkpoint
from .trainer import (
    TrainConfig,
    default_model_config,
    evaluate,
    derive_seed,
    read_metrics_csv,
    run_ablation,
    train,
)

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"

GEN_KEYS = ("v", "n", "d_x", "K", "num_contexts", "motif_bank_size",
            "noise_scale", "overlap_policy", "seed", "task")
TRAIN_KEYS = ("epochs", "batch_size", "alpha", "beta", "gamma", "rho_prior",
              "temperature_start", "temperature_end", "learning_rate", "seed",
              "variant", "task", "eval_every")
MODEL_KEYS = ("hidden_dim", "embed_dim", "predictor_dim", "max_hops",
              "rho_prior", "learned_priors", "attention_aggregates", "task")


def load_defaults() -> Dict[str, object]:
    from importlib import resources

    text = resources.files("sci").joinpath("defaults.toml").read_text()
    return tomllib.loads(text)


def load_config(path: Optional[str], overrides: Optional[Dict[str, object]] = None) -> Dict[str, object]:
    """Defaults, overlaid by the user's flat TOML file, then CLI overrides."""
    config = load_defaults()
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        with config_path.open("rb") as fh:
            try:
                user = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"config file {config_path} is not valid TOML: {exc}") from exc
        for key, value in user.items():
            if key not in config:
                raise ConfigError(f"unknown config key {key!r} in {config_path}")
            base = config[key]
            if isinstance(base, bool) != isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be {type(base).__name__}")
            if isinstance(base, float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, type(base)):
                raise ConfigError(
                    f"config key {key!r} must be {type(base).__name__}, "
                    f"got {type(value).__name__}"
                )
            config[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value
    return config


@contextmanager
def directory_lock(directory: Path):
    """Exclusive per-directory lock; a second concurrent invocation fails."""
    directory.mkdir(parents=True, exist_ok=True)
    lock_path = directory / LOCK_NAME
    try:
        fd = os.open(str(lock_path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise LockError(
            f"{directory} is locked by another invocation (remove {lock_path} "
            "if that run is dead)"
        ) from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def write_manifest(
    directory: Path,
    command: str,
    config: Dict[str, object],
    inputs: Sequence[str],
    outputs: Sequence[str],
    seed: int,
    started: float,
) -> None:
    payload = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    tmp = directory / (MANIFEST_NAME + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, directory / MANIFEST_NAME)


def check_output_dir(directory: Path, force: bool) -> bool:
    """True → already complete, skip. False → proceed (dir ready)."""
    if not directory.exists():
        return False
    manifest = directory / MANIFEST_NAME
    contents = [p for p in directory.iterdir() if p.name != LOCK_NAME]
    if not contents:
        return False
    if force:
        for item in contents:
            if item.is_dir():
                shutil.rmtree(item)
            else:
                item.unlink()
        return False
    if manifest.exists():
        return True
    raise ConfigError(
        f"{directory} contains output but no manifest (incomplete run); "
        "rerun with --force to overwrite"
    )


def _gen_config(config: Dict[str, object]) -> GenConfig:
    kwargs = {key: config[key] for key in GEN_KEYS}
    return GenConfig(**kwargs)


def _train_config(config: Dict[str, object]) -> TrainConfig:
    kwargs = {key: config[key] for key in TRAIN_KEYS}
    return TrainConfig(**kwargs)


def _model_config(dataset, cfg: TrainConfig, config: Dict[str, object]) -> ModelConfig:
    overrides = {key: config[key] for key in MODEL_KEYS if key not in ("rho_prior", "task")}
    if int(config["latent_dim"]) > 0:
        overrides["latent_dim"] = int(config["latent_dim"])
    return default_model_config(dataset, cfg, **overrides)


def cmd_generate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    config = load_config(args.config, {"seed": args.seed})
    gen_cfg = _gen_config(config)
    out_path = Path(args.out)
    out_dir = out_path.parent if str(out_path.parent) else Path(".")
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    if out_path.exists():
        if manifest_path.exists() and not args.force:
            print(f"{out_path} already generated; use --force to regenerate")
            return 0
        if not manifest_path.exists() and not args.force:
            raise ConfigError(
                f"{out_path} exists without a manifest (incomplete run); "
                "rerun with --force to overwrite"
            )
    with directory_lock(out_dir):
        import numpy as np

        process = make_process(gen_cfg)
        rng = np.random.default_rng(np.random.SeedSequence([gen_cfg.seed, 0xDA7A5E7]))
        dataset = sample_dataset(process, int(config["num_samples"]), rng)
        write_dataset(dataset, out_path)
        payload = {
            "command": "generate",
            "config": config,
            "inputs": [],
            "outputs": [str(out_path)],
            "seed": gen_cfg.seed,
            "version": __version__,
            "duration_seconds": round(time.monotonic() - started, 3),
        }
        tmp = manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, manifest_path)
    print(f"wrote {len(dataset)} records to {out_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    started = time.monotonic()
    overrides: Dict[str, object] = {"seed": args.seed}
    if args.variant is not None:
        overrides["variant"] = args.variant
    config = load_config(args.config, overrides)
    out_dir = Path(args.out_dir)
    if check_output_dir(out_dir, args.force):
        print(f"{out_dir} already contains a completed run; use --force to retrain")
        return 0
    dataset = read_dataset(args.data)
    cfg = _train_config(dict(config, task=dataset.task))
    with directory_lock(out_dir):
        model = SCIModel(
            _model_config(dataset, cfg, config),
            torch.Generator().manual_seed(cfg.seed),
        )
        result = train(model, dataset, cfg, out_dir)
        outputs = ["best.pt", "final.pt", "metrics.csv"]
        write_manifest(
            out_dir, "train", config, [str(args.data)], outputs, cfg.seed, started
        )
    final = result.log.rows[-1]
    print(
        f"trained {cfg.epochs} epochs; final total {final.losses['total']:.4f}; "
        f"best epoch {result.best_epoch} (val total {result.best_val_total:.4f})"
    )
    return 0


def _eval_report(result, dataset) -> Dict[str, object]:
    report: Dict[str, object] = {
        "task": dataset.task,
        "task_metric": result.task_metric,
        "num_records": result.num_records,
        "losses": result.loss_means,
    }
    if result.ident is not None:
        report.update(result.ident.to_json())
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    train_cfg = None
    seed = args.seed if args.seed is not None else 0
    saved = payload.get("extra", {}).get("train_config")
    if saved is not None:
        train_cfg = TrainConfig(**saved)
        if args.seed is None:
            seed = derive_seed(train_cfg.seed, "eval-root")
    result = evaluate(
        model,
        dataset,
        dataset.task,
        train_cfg=train_cfg,
        seed=seed,
        compute_block_r2=dataset.has_ground_truth,
    )
    report = _eval_report(result, dataset)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    started = time.monotonic()
    config = load_config(args.config, {"seed": args.seed})
    out_dir = Path(args.out_dir)
    if check_output_dir(out_dir, args.force):
        print(f"{out_dir} already contains a completed ablation; use --force to rerun")
        return 0
    dataset = read_dataset(args.data)
    cfg = _train_config(dict(config, task=dataset.task))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    with directory_lock(out_dir):
        table, results = run_ablation(
            dataset, cfg, variants, seeds,
            model_config=_model_config(dataset, cfg, config),
            out_dir=out_dir,
        )
        write_ablation_json(table, out_dir / "ablation.json")
        (out_dir / "ablation.txt").write_text(table.format_table() + "\n")
        failed = [
            f"{r.variant}/seed{r.seed}: {r.error}"
            for runs in results.values() for r in runs if r.status == "failed"
        ]
        if failed:
            (out_dir / "failures.txt").write_text("\n".join(failed) + "\n")
        write_manifest(
            out_dir, "ablate", config, [str(args.data)],
            ["ablation.json", "ablation.txt"], cfg.seed, started,
        )
    print(table.format_table())
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    from . import plots

    started = time.monotonic()
    out_dir = Path(args.out_dir)
    if check_output_dir(out_dir, args.force):
        print(f"{out_dir} already contains plots; use --force to redraw")
        return 0

    metrics_path = Path(args.metrics) if args.metrics else None
    ablation_path = Path(args.ablation) if args.ablation else None
    checkpoint_path = Path(args.checkpoint) if args.checkpoint else None
    if args.run_dir is not None:
        run_dir = Path(args.run_dir)
        if metrics_path is None and (run_dir / "metrics.csv").exists():
            metrics_path = run_dir / "metrics.csv"
        if ablation_path is None and (run_dir / "ablation.json").exists():
            ablation_path = run_dir / "ablation.json"
        # Substructure panels need an input graph, so the run directory's
        # checkpoint is only picked up when --data names one.
        if checkpoint_path is None and args.data is not None and (run_dir / "best.pt").exists():
            checkpoint_path = run_dir / "best.pt"
    if metrics_path is None and ablation_path is None and checkpoint_path is None:
        raise ConfigError(
            "nothing to plot: pass --run-dir or at least one of "
            "--metrics/--ablation/--checkpoint"
        )

    outputs: List[str] = []
    with directory_lock(out_dir):
        if metrics_path is not None:
            rows = read_metrics_csv(metrics_path)
            plots.plot_loss_curves(rows, out_dir / "loss_curves.png")
            outputs.append("loss_curves.png")
        if ablation_path is not None:
            table = _ablation_table_from_json(ablation_path)
            plots.plot_ablation_bars(table, out_dir / "ablation_bars.png")
            outputs.append("ablation_bars.png")
        if checkpoint_path is not None:
            if args.data is None:
                raise ConfigError("--checkpoint plotting needs --data for an input graph")
            model, extra = load_checkpoint(checkpoint_path)
            dataset = read_dataset(args.data)
            index = args.index
            if not 0 <= index < len(dataset):
                raise ConfigError(f"--index {index} out of range for {len(dataset)} records")
            graph = dataset[index][0]
            seed = args.seed if args.seed is not None else 0
            gen = torch.Generator().manual_seed(derive_seed(seed, "plot"))
            with torch.no_grad():
                out = forward(model, graph, gen, temperature=0.1, hard=True)
            panels = {
                "B_hat_r": out.B_hat_r.B,
                "G_r": out.G_r,
                "G_ir": out.G_ir,
                "A": graph.A,
            }
            plots.plot_substructure_panels(panels, out_dir / "substructure.png")
            outputs.append("substructure.png")
        config = {
            "metrics": str(metrics_path) if metrics_path else None,
            "ablation": str(ablation_path) if ablation_path else None,
            "checkpoint": str(checkpoint_path) if checkpoint_path else None,
            "data": args.data,
            "index": args.index,
        }
        write_manifest(
            out_dir, "plot", config,
            [str(p) for p in (metrics_path, ablation_path, checkpoint_path) if p],
            outputs, args.seed if args.seed is not None else 0, started,
        )
    print(f"wrote {', '.join(outputs)} to {out_dir}")
    return 0


def _ablation_table_from_json(path: Path):
    from .ident_eval import AblationRow, AblationTable

    try:
        payload = json.loads(Path(path).read_text())
        rows = []
        for variant, entry in payload["variants"].items():
            stats = {
                k: None if v is None else (float(v["mean"]), float(v["std"]))
                for k, v in entry["metrics"].items()
            }
            rows.append(
                AblationRow(
                    variant=variant,
                    num_runs=int(entry["num_runs"]),
                    stats=stats,
                    diff_vs_full=entry.get("diff_vs_full", {}),
                )
            )
        return AblationTable(rows=tuple(rows), absent=tuple(payload.get("absent", [])))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot parse ablation table {path}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sci",
        description="Generative-model workbench: synthesize graph datasets, "
        "train, evaluate, ablate, and plot.",
    )
    parser.add_argument("--version", action="version", version=f"sci {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat TOML config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", parents=[common], help="synthesize a dataset")
    p_gen.add_argument("--out", required=True, help="output JSONL path")
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", parents=[common], help="train a model")
    p_train.add_argument("--data", required=True, help="input JSONL dataset")
    p_train.add_argument("--out-dir", required=True, help="run output directory")
    p_train.add_argument("--variant", default=None,
                         choices=["full", "no_r", "no_h", "no_n", "no_k"])
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", default=None, help="also write the JSON report here")
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", parents=[common], help="run the ablation grid")
    p_abl.add_argument("--data", required=True)
    p_abl.add_argument("--out-dir", required=True)
    p_abl.add_argument("--variants", default="full,no_r,no_h,no_n,no_k")
    p_abl.add_argument("--seeds", default="0,1,2")
    p_abl.set_defaults(func=cmd_ablate)

    p_plot = sub.add_parser("plot", parents=[common], help="render figures")
    p_plot.add_argument("--run-dir", default=None, help="infer inputs from a run directory")
    p_plot.add_argument("--metrics", default=None, help="metrics CSV for loss curves")
    p_plot.add_argument("--ablation", default=None, help="ablation JSON for bar charts")
    p_plot.add_argument("--checkpoint", default=None, help="checkpoint for substructure panels")
    p_plot.add_argument("--data", default=None, help="dataset supplying the plotted graph")
    p_plot.add_argument("--index", type=int, default=0, help="record index for the panels")
    p_plot.add_argument("--out-dir", required=True)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    torch.set_num_threads(max(1, int(os.environ.get("SCI_NUM_THREADS", "1"))))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericFailureError, DeterminismError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SCIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
