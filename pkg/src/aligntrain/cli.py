"""Command-line entry point for single runs, strategy ablations, noise stress
tests, and synthetic corpus generation.

Every command is driven by an optional key-value manifest file plus flags
(flags win), and writes machine-readable CSV artifacts; ``report`` (or
``--figures`` on the run commands) renders PNG figures next to them.

Exit status: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import encoder, evaluate, figures
from . import data as data_mod
from . import trainer as trainer_mod
from .data import FeatureDataset, FeatureFileError, NoiseSpec
from .scheduler import Strategy, write_weight_trajectory
from .trainer import CheckpointError, TrainConfig, TrainingError, TrainResult

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

DEFAULT_NOISE_SCALE = 7.5  # lands the fixed baseline mid-difficulty at the default desk scale


class ManifestError(Exception):
    """Unreadable or inconsistent manifest/flag configuration."""


@dataclass
class SyntheticSource:
    pairs: int = 800
    latent_dim: int = 16
    d_img: int = 64
    d_txt: int = 64
    noise_scale: float = DEFAULT_NOISE_SCALE
    data_seed: int = 0
    train_frac: float = 0.75
    val_frac: float = 0.125


@dataclass
class FileSource:
    train_file: Path
    val_file: Path
    test_file: Path


@dataclass
class ExperimentManifest:
    """One experiment: a data source, a training config, the strategies to
    compare, the noise scenarios to stress, and the repetition count."""

    dataset: SyntheticSource | FileSource
    train: TrainConfig
    strategies: list[Strategy]
    scenarios: list[NoiseSpec]
    repeats: int
    out_dir: Path

    def __post_init__(self):
        if not self.strategies:
            raise ManifestError("at least one strategy is required")
        if self.repeats < 1:
            raise ManifestError("repeats must be >= 1")


def read_manifest_file(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        else:
            key, _, value = line.partition(" ")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ManifestError(f"{path}:{lineno}: cannot parse {raw!r}")
        out[key] = value
    return out


_INT_KEYS = {
    "pairs", "latent_dim", "d_img", "d_txt", "data_seed", "batch_size",
    "epochs", "embed_dim", "seed", "noise_seed", "repeats",
}
_FLOAT_KEYS = {
    "noise_scale", "train_frac", "val_frac", "learning_rate", "tau",
    "adam_beta1", "adam_beta2", "adam_epsilon", "caption_noise", "image_noise", "snr",
}
_STR_KEYS = {"strategy", "strategies", "train_file", "val_file", "test_file", "out_dir"}


def _coerce(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except ValueError as exc:
        raise ManifestError(f"manifest key {key!r}: {exc}") from exc
    if key in _STR_KEYS:
        return value
    raise ManifestError(f"unknown manifest key {key!r}")


def _parse_strategies(text: str) -> list[Strategy]:
    out = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            out.append(Strategy(token))
        except ValueError as exc:
            raise ManifestError(f"unknown strategy {token!r}") from exc
    return out


def build_manifest(args: argparse.Namespace) -> ExperimentManifest:
    """Merge manifest-file keys with command-line overrides (flags win)."""
    settings: dict = {}
    if args.manifest:
        for key, value in read_manifest_file(Path(args.manifest)).items():
            settings[key] = _coerce(key, value)

    flag_map = {
        "strategy": "strategy", "strategies": "strategies", "seed": "seed",
        "epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate",
        "tau": "tau", "embed_dim": "embed_dim", "out_dir": "out_dir",
        "adam_beta1": "adam_beta1", "adam_beta2": "adam_beta2", "adam_epsilon": "adam_epsilon",
        "caption_noise": "caption_noise", "image_noise": "image_noise",
        "snr": "snr", "noise_seed": "noise_seed", "repeats": "repeats",
        "pairs": "pairs", "latent_dim": "latent_dim", "d_img": "d_img",
        "d_txt": "d_txt", "noise_scale": "noise_scale", "data_seed": "data_seed",
        "train_frac": "train_frac", "val_frac": "val_frac",
        "train_file": "train_file", "val_file": "val_file", "test_file": "test_file",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[key] = value

    file_keys = [k for k in ("train_file", "val_file", "test_file") if k in settings]
    if file_keys and len(file_keys) != 3:
        raise ManifestError("feature-file mode needs train_file, val_file, and test_file")
    if file_keys:
        dataset: SyntheticSource | FileSource = FileSource(
            Path(settings["train_file"]), Path(settings["val_file"]), Path(settings["test_file"])
        )
    else:
        dataset = SyntheticSource(
            **{
                f.name: settings[f.name]
                for f in fields(SyntheticSource)
                if f.name in settings
            }
        )

    try:
        config = TrainConfig(
            learning_rate=settings.get("learning_rate", 5e-4),
            batch_size=settings.get("batch_size", 32),
            epochs=settings.get("epochs", 30),
            tau=settings.get("tau", 0.05),
            embed_dim=settings.get("embed_dim", 256),
            strategy=Strategy(settings.get("strategy", "fixed")),
            seed=settings.get("seed", 0),
            adam_beta1=settings.get("adam_beta1", 0.9),
            adam_beta2=settings.get("adam_beta2", 0.999),
            adam_epsilon=settings.get("adam_epsilon", 1e-8),
        )
    except ValueError as exc:
        raise ManifestError(f"invalid training config: {exc}") from exc

    if "strategies" in settings:
        strategies = _parse_strategies(settings["strategies"])
    else:
        strategies = list(Strategy)

    scenarios = []
    noise_seed = settings.get("noise_seed", 0)
    snr = settings.get("snr", 10.0)
    caption = settings.get("caption_noise", 0.0)
    image = settings.get("image_noise", 0.0)
    combine = bool(getattr(args, "combine_noise", False))
    try:
        if combine and (caption > 0 or image > 0):
            scenarios.append(
                NoiseSpec(caption_swap_fraction=caption, image_noise_fraction=image,
                          target_snr=snr, seed=noise_seed)
            )
        else:  # separate scenarios per noise kind
            if caption > 0:
                scenarios.append(NoiseSpec(caption_swap_fraction=caption, seed=noise_seed))
            if image > 0:
                scenarios.append(
                    NoiseSpec(image_noise_fraction=image, target_snr=snr, seed=noise_seed)
                )
    except ValueError as exc:
        raise ManifestError(f"invalid noise scenario: {exc}") from exc

    return ExperimentManifest(
        dataset=dataset,
        train=config,
        strategies=strategies,
        scenarios=scenarios,
        repeats=settings.get("repeats", 2),
        out_dir=Path(settings.get("out_dir", "runs")),
    )


def resolve_datasets(manifest: ExperimentManifest) -> tuple[FeatureDataset, FeatureDataset, FeatureDataset]:
    src = manifest.dataset
    if isinstance(src, FileSource):
        for p in (src.train_file, src.val_file, src.test_file):
            if not p.exists():
                raise FileNotFoundError(f"feature file not found: {p}")
        return (
            data_mod.load_features(src.train_file, "train"),
            data_mod.load_features(src.val_file, "val"),
            data_mod.load_features(src.test_file, "test"),
        )
    full = data_mod.generate_synthetic(
        src.pairs, src.latent_dim, src.d_img, src.d_txt, src.noise_scale, src.data_seed
    )
    return data_mod.split_dataset(full, src.train_frac, src.val_frac, src.data_seed)


# ---------------------------------------------------------------------------
# Running one (strategy, scenario, seed) cell
# ---------------------------------------------------------------------------


def trajectory_rows(result: TrainResult) -> list[dict]:
    return [
        {
            "epoch": e.epoch,
            "strategy": result.config.strategy.value,
            "w_i": repr(e.w_i),
            "w_t": repr(e.w_t),
            "sigma_i": repr(e.sigma_i),
            "sigma_t": repr(e.sigma_t),
            "entropy_i": repr(e.entropy_i),
            "entropy_t": repr(e.entropy_t),
            "margin_i": repr(e.margin_i),
            "margin_t": repr(e.margin_t),
        }
        for e in result.record.epochs
    ]


def run_cell(
    train_ds: FeatureDataset,
    val_ds: FeatureDataset,
    test_ds: FeatureDataset,
    config: TrainConfig,
    scenario: NoiseSpec,
    out_dir: Path | None,
    write_embeddings: bool = False,
) -> tuple[TrainResult, evaluate.RetrievalReport]:
    """Train one cell, evaluate on the clean test split, write its artifacts."""
    noised = data_mod.apply_noise(train_ds, scenario)
    result = trainer_mod.train(noised, val_ds, config)
    emb_i, emb_t = encoder.embed(result.params, test_ds.img, test_ds.txt)
    ks = tuple(k for k in (1, 5, 10) if k <= test_ds.n_pairs)
    report = evaluate.recall_at_k(
        emb_i, emb_t, ks,
        strategy=config.strategy.value, seed=config.seed, scenario=scenario.label(),
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        trainer_mod.save_checkpoint(result.params, config, result.record, out_dir / "checkpoint.txt")
        trainer_mod.write_training_log(out_dir / "training_log.csv", result.record)
        trainer_mod.write_batch_log(out_dir / "batch_log.csv", result.record)
        write_weight_trajectory(out_dir / "weight_trajectory.csv", trajectory_rows(result))
        evaluate.write_metrics_csv(out_dir / "metrics.csv", [report])
        if write_embeddings:
            evaluate.export_embeddings(emb_i, emb_t, test_ds.pair_ids, out_dir / "embeddings.csv")
    return result, report


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _write_rows(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


_TABLE_METRICS = [("r1_i2t", "i2t", 1), ("r5_i2t", "i2t", 5), ("r1_t2i", "t2i", 1), ("r5_t2i", "t2i", 5)]


def _metric_cells(report: evaluate.RetrievalReport) -> dict[str, float]:
    return {name: report.get(direction, k) for name, direction, k in _TABLE_METRICS}


def write_loss_curves(path: Path, results: list[tuple[str, str, int, TrainResult]]) -> None:
    rows = []
    for strategy, scenario, seed, result in results:
        for e in result.record.epochs:
            rows.append(
                {
                    "strategy": strategy,
                    "scenario": scenario,
                    "seed": seed,
                    "epoch": e.epoch,
                    "mean_l_i2t": repr(e.mean_l_i2t),
                    "mean_l_t2i": repr(e.mean_l_t2i),
                    "mean_total": repr(e.mean_total),
                }
            )
    _write_rows(
        path,
        ["strategy", "scenario", "seed", "epoch", "mean_l_i2t", "mean_l_t2i", "mean_total"],
        rows,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(manifest: ExperimentManifest) -> int:
    if not isinstance(manifest.dataset, SyntheticSource):
        raise ManifestError("gen requires synthetic dataset parameters, not feature files")
    train_ds, val_ds, test_ds = resolve_datasets(manifest)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    for ds, name in ((train_ds, "train"), (val_ds, "val"), (test_ds, "test")):
        path = manifest.out_dir / f"features_{name}.txt"
        data_mod.save_features(ds, path)
        print(f"wrote {path} ({ds.n_pairs} pairs)")
    return EXIT_OK


def cmd_train(manifest: ExperimentManifest, render: bool) -> int:
    train_ds, val_ds, test_ds = resolve_datasets(manifest)
    scenario = manifest.scenarios[0] if manifest.scenarios else NoiseSpec()
    _, report = run_cell(
        train_ds, val_ds, test_ds, manifest.train, scenario, manifest.out_dir,
        write_embeddings=True,
    )
    for direction in evaluate.DIRECTIONS:
        parts = ", ".join(f"R@{k}={report.get(direction, k):.1f}" for k in report.ks)
        print(f"{direction} ({scenario.label()}): {parts}")
    print(f"artifacts in {manifest.out_dir}")
    if render:
        for png in figures.render_report(manifest.out_dir):
            print(f"figure {png}")
    return EXIT_OK


def cmd_ablation(manifest: ExperimentManifest, render: bool) -> int:
    if len(manifest.strategies) < 2:
        raise ManifestError("ablation needs at least two strategies to compare")
    train_ds, val_ds, test_ds = resolve_datasets(manifest)
    scenario = manifest.scenarios[0] if manifest.scenarios else NoiseSpec()
    manifest.out_dir.mkdir(parents=True, exist_ok=True)

    by_seed_rows = []
    table_rows = []
    curve_results = []
    for strategy in manifest.strategies:
        per_seed = []
        for r in range(manifest.repeats):
            seed = manifest.train.seed + r
            config = TrainConfig(
                **{
                    **{f.name: getattr(manifest.train, f.name) for f in fields(TrainConfig)},
                    "strategy": strategy,
                    "seed": seed,
                }
            )
            cell_dir = manifest.out_dir / "cells" / f"{strategy.value}_seed{seed}"
            result, report = run_cell(train_ds, val_ds, test_ds, config, scenario, cell_dir)
            cells = _metric_cells(report)
            per_seed.append(cells)
            by_seed_rows.append(
                {"strategy": strategy.value, "seed": seed,
                 **{k: repr(v) for k, v in cells.items()}}
            )
            curve_results.append((strategy.value, scenario.label(), seed, result))
        table_rows.append(
            {
                "strategy": strategy.value,
                **{
                    name: repr(_mean([cells[name] for cells in per_seed]))
                    for name, _, _ in _TABLE_METRICS
                },
            }
        )

    # controlled-comparison guarantee: every strategy must have seen the same
    # mini-batch sequence for a given seed
    sequences: dict[int, list] = {}
    for strategy_name, _, seed, result in curve_results:
        firsts = [e.first_batch for e in result.record.epochs]
        if seed in sequences and sequences[seed] != firsts:
            raise RuntimeError(
                f"batch sequences diverged across strategies for seed {seed}"
            )
        sequences.setdefault(seed, firsts)

    metric_names = [name for name, _, _ in _TABLE_METRICS]
    _write_rows(manifest.out_dir / "ablation.csv", ["strategy"] + metric_names, table_rows)
    _write_rows(
        manifest.out_dir / "ablation_by_seed.csv", ["strategy", "seed"] + metric_names, by_seed_rows
    )
    write_loss_curves(manifest.out_dir / "loss_curves.csv", curve_results)

    print(f"{'strategy':<16}" + "".join(f"{m:>10}" for m in metric_names))
    for row in table_rows:
        print(f"{row['strategy']:<16}" + "".join(f"{float(row[m]):>10.2f}" for m in metric_names))
    print(f"artifacts in {manifest.out_dir}")
    if render:
        for png in figures.render_report(manifest.out_dir):
            print(f"figure {png}")
    return EXIT_OK


def cmd_stress(manifest: ExperimentManifest, render: bool) -> int:
    if not manifest.scenarios:
        raise ManifestError("stress needs at least one noise scenario "
                            "(set --caption-noise and/or --image-noise)")
    train_ds, val_ds, test_ds = resolve_datasets(manifest)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    scenarios = [NoiseSpec(seed=manifest.scenarios[0].seed)] + manifest.scenarios

    by_seed_rows = []
    summary_rows = []
    curve_results = []
    means: dict[tuple[str, str], dict[str, float]] = {}
    for strategy in manifest.strategies:
        for scenario in scenarios:
            per_seed = []
            for r in range(manifest.repeats):
                seed = manifest.train.seed + r
                config = TrainConfig(
                    **{
                        **{f.name: getattr(manifest.train, f.name) for f in fields(TrainConfig)},
                        "strategy": strategy,
                        "seed": seed,
                    }
                )
                cell_dir = (
                    manifest.out_dir / "cells" / f"{strategy.value}_{scenario.label()}_seed{seed}"
                )
                result, report = run_cell(train_ds, val_ds, test_ds, config, scenario, cell_dir)
                cells = _metric_cells(report)
                per_seed.append(cells)
                by_seed_rows.append(
                    {"strategy": strategy.value, "scenario": scenario.label(), "seed": seed,
                     **{k: repr(v) for k, v in cells.items()}}
                )
                curve_results.append((strategy.value, scenario.label(), seed, result))
            means[(strategy.value, scenario.label())] = {
                name: _mean([cells[name] for cells in per_seed]) for name, _, _ in _TABLE_METRICS
            }

    for strategy in manifest.strategies:
        clean = means[(strategy.value, "clean")]
        for scenario in scenarios:
            cell = means[(strategy.value, scenario.label())]
            row = {
                "strategy": strategy.value,
                "scenario": scenario.label(),
                **{name: repr(cell[name]) for name, _, _ in _TABLE_METRICS},
            }
            for name in ("r5_i2t", "r5_t2i"):
                drop = 100.0 * (clean[name] - cell[name]) / clean[name] if clean[name] else 0.0
                row[f"drop_{name}"] = repr(drop)
            summary_rows.append(row)

    metric_names = [name for name, _, _ in _TABLE_METRICS]
    _write_rows(
        manifest.out_dir / "stress_by_seed.csv",
        ["strategy", "scenario", "seed"] + metric_names,
        by_seed_rows,
    )
    _write_rows(
        manifest.out_dir / "stress_summary.csv",
        ["strategy", "scenario"] + metric_names + ["drop_r5_i2t", "drop_r5_t2i"],
        summary_rows,
    )
    write_loss_curves(manifest.out_dir / "loss_curves.csv", curve_results)

    print(f"{'strategy':<16}{'scenario':<24}{'R@5 i2t':>10}{'drop %':>10}")
    for row in summary_rows:
        print(
            f"{row['strategy']:<16}{row['scenario']:<24}"
            f"{float(row['r5_i2t']):>10.2f}{float(row['drop_r5_i2t']):>10.2f}"
        )
    print(f"artifacts in {manifest.out_dir}")
    if render:
        for png in figures.render_report(manifest.out_dir):
            print(f"figure {png}")
    return EXIT_OK


def cmd_report(out_dir: Path) -> int:
    if not out_dir.exists():
        raise FileNotFoundError(f"output directory not found: {out_dir}")
    written = figures.render_report(out_dir)
    if not written:
        print(f"no renderable CSV artifacts under {out_dir}")
    for png in written:
        print(f"figure {png}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="key-value manifest file; flags override it")
    p.add_argument("--out-dir", dest="out_dir", help="artifact directory (default: runs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--tau", type=float, help="softmax temperature")
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--adam-beta1", dest="adam_beta1", type=float)
    p.add_argument("--adam-beta2", dest="adam_beta2", type=float)
    p.add_argument("--adam-epsilon", dest="adam_epsilon", type=float)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--strategies", help="comma-separated strategy list")
    p.add_argument("--repeats", type=int, help="runs per strategy (seeds seed..seed+n-1)")
    p.add_argument("--caption-noise", dest="caption_noise", type=float,
                   help="fraction of training captions to swap")
    p.add_argument("--image-noise", dest="image_noise", type=float,
                   help="fraction of training image rows to corrupt")
    p.add_argument("--snr", type=float, help="target signal-to-noise ratio for image noise")
    p.add_argument("--noise-seed", dest="noise_seed", type=int)
    p.add_argument("--combine-noise", dest="combine_noise", action="store_true",
                   help="apply caption and image noise in one combined scenario")
    # synthetic source
    p.add_argument("--pairs", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--d-img", dest="d_img", type=int)
    p.add_argument("--d-txt", dest="d_txt", type=int)
    p.add_argument("--noise-scale", dest="noise_scale", type=float)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    # precomputed feature files
    p.add_argument("--train-file", dest="train_file")
    p.add_argument("--val-file", dest="val_file")
    p.add_argument("--test-file", dest="test_file")
    p.add_argument("--figures", action="store_true", help="render PNG figures after the run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aligntrain",
        description="Contrastive image-text alignment with adaptive loss-weight scheduling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen", "generate synthetic feature files (train/val/test)"),
        ("train", "train one strategy and evaluate on the test split"),
        ("ablation", "compare strategies on identical batch sequences"),
        ("stress", "train under noise scenarios, evaluate on the clean test split"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
    p_report = sub.add_parser("report", help="render figures from an output directory")
    p_report.add_argument("--out-dir", dest="out_dir", default="runs")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    try:
        if args.command == "report":
            return cmd_report(Path(args.out_dir))
        manifest = build_manifest(args)
        if args.command == "gen":
            return cmd_gen(manifest)
        if args.command == "train":
            return cmd_train(manifest, args.figures)
        if args.command == "ablation":
            return cmd_ablation(manifest, args.figures)
        if args.command == "stress":
            return cmd_stress(manifest, args.figures)
        raise ManifestError(f"unknown command {args.command!r}")  # pragma: no cover
    except (ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError, FeatureFileError, CheckpointError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
