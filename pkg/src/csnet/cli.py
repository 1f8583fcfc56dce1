"""Command-line entry point: gen, train, eval, sweep, verify.

Every command is reproducible from (config file, seed): artifacts under
checksum contain no timestamps, and reruns with the same inputs produce
byte-identical datasets, metrics, and checkpoints. Exit codes: 0
success, 1 verification failure, 2 configuration error, 3 I/O or data
integrity error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import evaluate, report, train as train_mod, verify
from .config import RunConfig, desk_config, dump_config, load_config, parse_config
from .data import (
    SPLIT_TAGS,
    build_benchmark,
    default_attributes,
    generate_shapes,
    load_dataset,
    load_triplets,
    save_dataset,
    save_triplets,
    split,
)
from .errors import (
    CapabilityError,
    ConfigError,
    ContractError,
    DataIntegrityError,
    InfeasibilityError,
    RoutingError,
)
from .model import load_checkpoint, save_checkpoint

DATASET_FILE = "dataset.bin"
TRIPLET_FILES = {tag: f"triplets_{tag}.txt" for tag in SPLIT_TAGS}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else desk_config()
    return cfg


def _prepare_out(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise DataIntegrityError(f"output directory {out_dir} exists; pass --force to overwrite")
        for p in sorted(out_dir.rglob("*"), reverse=True):
            p.unlink() if p.is_file() else p.rmdir()
    out_dir.mkdir(parents=True, exist_ok=True)


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    if args.seed is not None:
        cfg = parse_config({"data": {"seed": args.seed}}, base=cfg)
    out_dir = Path(args.out)
    _prepare_out(out_dir, args.force)

    attrs = default_attributes(cfg.data.shapes, cfg.data.colors, cfg.data.sizes)
    radii = {k: tuple(v) for k, v in cfg.data.radii.items()}
    ds = generate_shapes(
        attrs,
        cfg.data.n_samples,
        image_side=cfg.data.image_side,
        noise_std=cfg.data.noise_std,
        seed=cfg.data.seed,
        center_jitter=cfg.data.center_jitter,
        brightness_max=cfg.data.brightness_max,
        radii=radii,
    )
    ds = split(ds, cfg.data.fractions, seed=cfg.data.seed)
    triplet_sets = build_benchmark(
        ds,
        cfg.conditions,
        cfg.data.triplets_train,
        cfg.data.triplets_val,
        cfg.data.triplets_test,
        seed=cfg.data.seed,
        min_gap=cfg.data.numeric_gap,
    )
    save_dataset(ds, out_dir / DATASET_FILE)
    for tag, triplets in zip(SPLIT_TAGS, triplet_sets):
        save_triplets(triplets, out_dir / TRIPLET_FILES[tag])

    files = [DATASET_FILE, *TRIPLET_FILES.values()]
    manifest = {
        "config": cfg.to_dict(),
        "conditions": list(cfg.conditions),
        "files": {name: _sha256(out_dir / name) for name in files},
        "counts": {
            "samples": ds.n_samples,
            "splits": {tag: int(len(ds.split_indices(tag))) for tag in SPLIT_TAGS},
            "triplets": {tag: len(ts) for tag, ts in zip(SPLIT_TAGS, triplet_sets)},
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote dataset and triplet files to {out_dir}")
    for tag in SPLIT_TAGS:
        print(f"  {tag}: {manifest['counts']['splits'][tag]} samples, "
              f"{manifest['counts']['triplets'][tag]} triplets")
    return 0


def _load_data_dir(data_dir: Path):
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataIntegrityError(f"no manifest.json in {data_dir}")
    manifest = json.loads(manifest_path.read_text())
    for name, digest in manifest["files"].items():
        actual = _sha256(data_dir / name)
        if actual != digest:
            raise DataIntegrityError(f"checksum mismatch for {name}: {actual} != recorded {digest}")
    ds = load_dataset(data_dir / DATASET_FILE)
    triplets = {tag: load_triplets(data_dir / TRIPLET_FILES[tag]) for tag in SPLIT_TAGS}
    return manifest, ds, triplets


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    manifest, ds, triplets = _load_data_dir(Path(args.data))
    if list(cfg.conditions) != manifest["conditions"]:
        raise ConfigError(
            f"config conditions {list(cfg.conditions)} do not match dataset manifest "
            f"{manifest['conditions']}"
        )
    seed = args.seed if args.seed is not None else cfg.training.seed
    out_dir = Path(args.out)
    _prepare_out(out_dir, args.force)
    ckpt_dir = out_dir / "checkpoints"
    fig_dir = out_dir / "figures"
    ckpt_dir.mkdir()
    fig_dir.mkdir()

    tcfg = cfg.train_config(seed=seed)
    saved: list[str] = []

    def on_improve(epoch: int, nets, bank) -> None:
        name = f"epoch_{epoch:03d}.json"
        save_checkpoint(
            ckpt_dir / name, nets, bank, tcfg.variant,
            extra={"conditions": list(cfg.conditions), "epoch": epoch, "seed": seed},
        )
        saved.append(name)

    result = train_mod.train(
        tcfg, ds, triplets["train"], triplets["val"], cfg.conditions, on_improve=on_improve
    )
    best_epoch = result.history.best_epoch
    (ckpt_dir / "manifest.json").write_text(
        json.dumps({"best": f"epoch_{best_epoch:03d}.json", "saved": saved}, indent=2) + "\n"
    )
    train_mod.write_metrics(result.history, out_dir / "metrics.jsonl")
    (out_dir / "resolved_config.json").write_text(dump_config(cfg))

    val_report = evaluate.triplet_error(*result.eval_model(), triplets["val"], ds)
    (out_dir / "report_val.json").write_text(
        json.dumps(val_report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    report.save_training_curves(result.history, fig_dir / "training_curves.png")
    report.save_condition_errors(val_report, list(cfg.conditions), fig_dir / "val_condition_errors.png")

    for r in result.history.records:
        print(f"epoch {r.epoch:3d}  train_loss={r.train_loss:.4f}  "
              f"val_error={r.val_error:.4f}  ({r.seconds:.1f}s)")
    print(f"best epoch {best_epoch} (val_error={result.history.records[best_epoch].val_error:.4f})")
    print(f"validation error of returned model: {val_report.overall_error:.4f}")
    return 0


def cmd_eval(args) -> int:
    nets, bank, meta = load_checkpoint(args.checkpoint)
    _, ds, triplets = _load_data_dir(Path(args.data))
    conditions = meta["extra"].get("conditions", [])
    variant = meta["variant"]
    model = nets if variant == "specialist_set" else nets[0]
    eval_triplets = triplets[args.split]
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "figures").mkdir(exist_ok=True)
        (out_dir / "exports").mkdir(exist_ok=True)

    rep = evaluate.triplet_error(model, bank, eval_triplets, ds)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    if out_dir is not None:
        (out_dir / f"report_{args.split}.json").write_text(
            json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        report.save_condition_errors(rep, conditions, out_dir / "figures" / "condition_errors.png")

    if bank is not None:
        mrep = evaluate.mask_stats(bank, threshold=args.mask_threshold)
        if out_dir is not None:
            (out_dir / "mask_report.json").write_text(
                json.dumps(mrep.to_dict(), indent=2, sort_keys=True) + "\n"
            )
            report.save_mask_heatmap(mrep.matrix, conditions, out_dir / "figures" / "mask_heatmap.png")
        active = ", ".join(f"{conditions[c] if c < len(conditions) else c}={n}"
                           for c, n in sorted(mrep.active_counts.items()))
        print(f"mask active dimensions: {active}")

    if args.export_full or args.export_subspace:
        if out_dir is None:
            raise ConfigError("--out is required for embedding exports")
    if args.export_full:
        evaluate.export_embeddings(
            model if variant != "specialist_set" else nets[0],
            None, ds, None, out_dir / "exports" / "embeddings_full.tsv",
        )
        print("exported full embeddings")
    for c in args.export_subspace or ():
        if bank is None:
            raise CapabilityError(f"checkpoint variant {variant!r} has no masks to export subspaces")
        evaluate.export_embeddings(
            nets[0], bank, ds, c, out_dir / "exports" / f"embeddings_subspace_{c}.tsv",
            threshold=args.mask_threshold,
        )
        print(f"exported subspace for condition {c}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    manifest, ds, _ = _load_data_dir(Path(args.data))
    if list(cfg.conditions) != manifest["conditions"]:
        raise ConfigError("config conditions do not match dataset manifest")
    seed = args.seed if args.seed is not None else cfg.training.seed
    out_dir = Path(args.out)
    _prepare_out(out_dir, args.force)
    (out_dir / "figures").mkdir()

    rows = evaluate.budget_sweep(
        cfg.train_config(),
        ds,
        cfg.conditions,
        cfg.eval.budgets,
        cfg.eval.sweep_variants,
        cfg.data.triplets_val,
        cfg.data.triplets_test,
        seed,
    )
    with open(out_dir / "sweep.tsv", "w") as fh:
        fh.write("variant\tbudget\terror\tseed\n")
        for r in rows:
            fh.write(f"{r.variant}\t{r.budget}\t{r.error:.17g}\t{r.seed}\n")
    ranking = sorted(rows, key=lambda r: r.error)
    with open(out_dir / "sweep_summary.txt", "w") as fh:
        fh.write("rank  variant            budget  error\n")
        for i, r in enumerate(ranking, 1):
            fh.write(f"{i:>4d}  {r.variant:<18s} {r.budget:>6d}  {r.error:.4f}\n")
    report.save_budget_curves(rows, out_dir / "figures" / "budget_curves.png")
    print(f"wrote {len(rows)} sweep rows to {out_dir / 'sweep.tsv'}")
    best = ranking[0]
    print(f"best cell: {best.variant} @ {best.budget} triplets/condition -> {best.error:.4f}")
    return 0


def cmd_verify(args) -> int:
    results = verify.run_battery()
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} verification check(s) FAILED")
        return 1
    print(f"all {len(results)} verification checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csnet",
        description="Conditional similarity embeddings: data generation, training, evaluation.",
    )
    parser.add_argument("--config", help="JSON config path (defaults to the built-in desk profile)")
    parser.add_argument("--seed", type=int, help="override the data seed (gen) or training seed (train/sweep)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the dataset and triplet files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train the configured variant")
    p.add_argument("--data", required=True, help="directory produced by gen")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=SPLIT_TAGS, default="test")
    p.add_argument("--out", help="directory for reports, figures, and exports")
    p.add_argument("--export-full", action="store_true", help="export full embeddings")
    p.add_argument("--export-subspace", type=int, action="append", metavar="C",
                   help="export the masked subspace for condition C (repeatable)")
    p.add_argument("--mask-threshold", type=float, default=1e-3)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="triplet-budget sweep across variants")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("verify", help="run the built-in verification battery")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError, CapabilityError, RoutingError, InfeasibilityError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataIntegrityError, OSError) as exc:
        print(f"I/O or integrity error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
