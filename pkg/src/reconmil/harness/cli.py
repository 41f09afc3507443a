"""Command-line entry point: ``reconmil <command>``."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import click

from reconmil import bagstore
from reconmil.harness import plots
from reconmil.harness.checkpoint import load_checkpoint, save_checkpoint
from reconmil.harness.config import load_config, save_config


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=float))


def _fail(msg: str) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for per-epoch losses.")
def main(verbose: int) -> None:
    """Multiple-instance learning with latent reconstruction and bi-stream blocks."""
    level = logging.WARNING if verbose == 0 else (logging.INFO if verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON with SynthConfig keys plus an optional 'seed'.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth(config_path, out):
    """Generate a synthetic dataset (.rmb files + manifest.csv)."""
    raw = json.loads(Path(config_path).read_text())
    seed = int(raw.pop("seed", 0))
    known = {f.name for f in fields(bagstore.SynthConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        _fail(f"unknown config keys: {', '.join(unknown)}")
    if "instances_per_bag" in raw:
        raw["instances_per_bag"] = tuple(raw["instances_per_bag"])
    try:
        cfg = bagstore.SynthConfig(**raw)
        bags = bagstore.synth_bags(cfg, seed)
    except ValueError as exc:
        _fail(str(exc))
    manifest = bagstore.save_dataset(bags, out)
    witnesses = {b.bag_id: [int(i) for i in b.witnesses] for b in bags}
    _write_json({"config": asdict(cfg), "seed": seed, "witnesses": witnesses}, Path(out) / "synth.json")
    click.echo(f"wrote {len(bags)} bags to {out} ({manifest.name})")


def _load(config_path, manifest):
    try:
        cfg = load_config(config_path)
        records = bagstore.load_manifest(manifest)
        bags = bagstore.load_bags(records)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    return cfg, records, bags


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--fold", default=0, show_default=True, help="Fold held out as the test split.")
def train(config_path, manifest, out, fold):
    """Train one model: fold --fold is test, the next fold validation, the rest training."""
    from reconmil.harness.cv import split_indices
    from reconmil.harness.train import train_run
    cfg, records, bags = _load(config_path, manifest)
    folds = bagstore.make_folds(records, cfg.k_folds, cfg.seed)
    val_f, train_f = split_indices(folds.k, fold)
    pick = lambda fs: [b for b in bags if folds.fold_of(b.bag_id) in fs]  # noqa: E731
    try:
        res = train_run(pick(train_f), pick([val_f]), cfg, test_bags=pick([fold]),
                        num_classes=bagstore.num_classes(records) if cfg.task == "classification" else None)
    except (ValueError, RuntimeError) as exc:
        _fail(str(exc))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.rmc"
    save_checkpoint(ckpt, res.params, {"config": cfg.to_dict(), "cut_points": res.record.cut_points})
    res.record.checkpoint_path = str(ckpt)
    _write_json(res.record.to_dict(), out / "run.json")
    _write_json(res.record.metrics.to_dict(), out / "report.json")
    save_config(cfg, out / "config.json")
    plots.loss_curves(res.record, out / "loss_curves.png")
    click.echo(json.dumps(res.record.metrics.values))


def _cv_outputs(result, out: Path, title: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(result.report.to_dict(), out / "report.json")
    _write_json(result.to_dict(), out / "cv.json")
    plots.fold_metrics(result.report, out / "folds.png", title=title)
    for i, (rec, params) in enumerate(zip(result.runs, result.params)):
        ckpt = out / f"fold{i}.rmc"
        save_checkpoint(ckpt, params, {"config": rec.config, "cut_points": rec.cut_points})
        rec.checkpoint_path = str(ckpt)
        plots.loss_curves(rec, out / f"fold{i}_loss.png")
    _write_json(result.to_dict(), out / "cv.json")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def cv(config_path, manifest, out):
    """k-fold cross-validation of the full model."""
    from reconmil.harness.cv import run_cv
    cfg, _, bags = _load(config_path, manifest)
    try:
        result = run_cv(bags, cfg)
    except (ValueError, RuntimeError) as exc:
        _fail(str(exc))
    _cv_outputs(result, Path(out), "ReconMIL")
    click.echo(json.dumps({"mean": result.report.mean, "std": result.report.std}))


@main.command()
@click.option("--kind", type=click.Choice(["mean", "max", "attention"]), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def baseline(kind, config_path, manifest, out):
    """Pooling baseline on raw features under the same folds and optimizer."""
    from reconmil.harness.cv import run_baseline
    cfg, _, bags = _load(config_path, manifest)
    try:
        result = run_baseline(kind, bags, cfg)
    except (ValueError, RuntimeError) as exc:
        _fail(str(exc))
    _cv_outputs(result, Path(out), f"{kind} pooling")
    click.echo(json.dumps({"mean": result.report.mean, "std": result.report.std}))


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Optional JSON report path.")
def eval_cmd(checkpoint, manifest, out):
    """Evaluate a checkpoint on every bag of a manifest (forward passes only)."""
    from reconmil.harness.train import evaluate
    try:
        params, meta = load_checkpoint(checkpoint)
        bags = bagstore.load_bags(bagstore.load_manifest(manifest))
        ordering = meta.get("config", {}).get("ordering", "coords_raster")
        report = evaluate(params, bags, ordering)
    except ValueError as exc:
        _fail(str(exc))
    if out:
        _write_json(report.to_dict(), out)
    click.echo(json.dumps(report.values))


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--bag", "bag_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_prefix", required=True, help="Output prefix for .csv/.pgm/.png.")
def saliency(checkpoint, bag_path, out_prefix):
    """Export per-instance gate saliency for one bag."""
    from reconmil.harness.saliency import export_saliency
    try:
        params, meta = load_checkpoint(checkpoint)
        bag = bagstore.read_bag(bag_path)
        paths = export_saliency(params, bag, out_prefix, meta.get("config", {}).get("ordering", "coords_raster"))
    except ValueError as exc:
        _fail(str(exc))
    click.echo(" ".join(str(p) for p in paths.values()))


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
def probe(checkpoint, manifest):
    """Linear-probe AUC on mean-pooled raw features versus LSR latents (binary tasks)."""
    from reconmil.harness.probe import latent_probe
    try:
        params, _ = load_checkpoint(checkpoint)
        out = latent_probe(params, bagstore.load_bags(bagstore.load_manifest(manifest)))
    except ValueError as exc:
        _fail(str(exc))
    click.echo(json.dumps(out))


@main.command()
@click.option("--seed", default=0, show_default=True)
def gradcheck(seed):
    """Finite-difference check of every primitive, one layer, LSR and the full loss."""
    from reconmil.harness.suites import run_gradient_suite
    results = run_gradient_suite(seed, echo=click.echo)
    sys.exit(0 if all(r.passed for r in results) else 1)


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--cases", default=50, show_default=True)
def oracle(seed, cases):
    """Scan / convolution kernels against naive loop references."""
    from reconmil.harness.suites import run_oracle_suite
    results = run_oracle_suite(seed, cases, echo=click.echo)
    sys.exit(0 if all(r.passed for r in results) else 1)


@main.command()
@click.argument("what", type=click.Choice(["shift", "lambda"]))
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="JSON record of the sweep.")
@click.option("--seeds", default="0,1,2", show_default=True)
def calibrate(what, out, seeds):
    """Run a pre-registered calibration sweep (witness shift or reconstruction weight)."""
    from reconmil.harness import benchmark
    seed_list = [int(s) for s in seeds.split(",")]
    if what == "shift":
        rec = benchmark.calibrate_shift(seed_list)
    else:
        rec = benchmark.lambda_sweep(seed_list)
    _write_json(rec, out)
    click.echo(json.dumps(rec, indent=2))


if __name__ == "__main__":
    main()
