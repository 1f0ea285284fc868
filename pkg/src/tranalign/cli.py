"""Command-line entry point.

Subcommands: gen-data, train, eval, grid, query. Values resolve as
defaults <- config file <- flags, the effective configuration is echoed into
run_manifest.json under --out, and every delimited output gets its figures
rendered alongside. TARD_LOG=DEBUG|INFO|WARNING controls verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import evaluation, reports, synthgen, trainer
from .config import (
    REGIMES,
    effective_config,
    config_digest,
    load_config_file,
    parse_resolution,
    train_config_from,
)
from .errors import TranAlignError
from .imaging import ImageSample, load_image

log = logging.getLogger(__name__)

GRID_COMBOS = (
    ("A", "baseline", False, False),
    ("AE", "baseline", True, False),
    ("AC", "expanded", False, False),
    ("ACE", "expanded", True, False),
    ("BD", "transfer", False, False),
    ("BDE", "transfer", True, False),
    ("BDF", "transfer", False, True),
    ("BDEF", "transfer", True, True),
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tranalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic vessel dataset")
    _add_common(p)
    p.add_argument("--resolution", help="generated image size as HxW")
    p.add_argument("--parallel", action="store_true", default=None, help="render with threads")

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    p.add_argument("--manifest", required=True, help="training dataset manifest")
    p.add_argument("--transfer-manifest", help="manifest for transfer images (default: --manifest)")
    p.add_argument("--regime", choices=REGIMES)
    p.add_argument("--sss-train", action=argparse.BooleanOptionalAction)
    p.add_argument("--sss-transfer", action=argparse.BooleanOptionalAction)
    p.add_argument("--transfer-type", help="vessel type used as transfer source")
    p.add_argument("--resolution", help="model input size as HxW")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on query/gallery splits")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--sss-test", action=argparse.BooleanOptionalAction)
    p.add_argument("--resolution", help="model input size as HxW")

    p = sub.add_parser("grid", help="run every training-method combination")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--transfer-manifest")
    p.add_argument("--sss-test", action=argparse.BooleanOptionalAction)
    p.add_argument("--transfer-type")
    p.add_argument("--resolution", help="model input size as HxW")
    p.add_argument("--parallel", action="store_true", default=None)

    p = sub.add_parser("query", help="rank the gallery against one image")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--manifest", required=True, help="gallery manifest")
    p.add_argument("--topk", type=int)
    p.add_argument("--query-id", type=int, help="true identity of the image, if known")
    p.add_argument("--resolution", help="model input size as HxW")

    return parser


def _effective(args: argparse.Namespace, flag_keys: dict[str, str]) -> dict:
    file_values = load_config_file(args.config) if args.config else None
    overrides = {}
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return effective_config(file_values, overrides)


def _write_run_manifest(out_dir: Path, command: str, cfg: dict, outputs: list[str]) -> None:
    doc = {"command": command, "effective_config": cfg, "outputs": sorted(outputs)}
    with (out_dir / "run_manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_gen_data(args) -> int:
    cfg = _effective(args, {"seed": "seed", "resolution": "gen_resolution", "parallel": "parallel"})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds_cfg = synthgen.DatasetConfig(
        seed=cfg["seed"],
        ids_per_type=cfg["ids_per_type"],
        images_per_id=cfg["images_per_id"],
        out_dir=str(out_dir),
        resolution=parse_resolution(cfg["gen_resolution"]),
        target_type=cfg["target_type"],
        query_fraction=cfg["query_fraction"],
        workers=4 if cfg["parallel"] else 1,
    )
    manifest = synthgen.generate_dataset(ds_cfg)
    _write_run_manifest(out_dir, "gen-data", cfg, [manifest.name])
    print(f"wrote {manifest}")
    return 0


def _train_flag_keys() -> dict[str, str]:
    return {
        "seed": "seed",
        "regime": "regime",
        "sss_train": "sss_train",
        "sss_transfer": "sss_transfer",
        "transfer_type": "transfer_type",
        "resolution": "resolution",
        "epochs": "epochs",
    }


def _cmd_train(args) -> int:
    cfg = _effective(args, _train_flag_keys())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = train_config_from(cfg)
    transfer_manifest = args.transfer_manifest or args.manifest
    result = trainer.train(tc, args.manifest, transfer_manifest, out_dir)
    _write_run_manifest(out_dir, "train", cfg, ["checkpoint.tard", "loss_log.csv"])
    print(f"trained {tc.epochs} epochs over {result.num_classes} identities -> {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _effective(args, {"seed": "seed", "sss_test": "sss_test", "resolution": "resolution"})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = train_config_from(cfg)
    metrics = evaluation.evaluate(
        args.checkpoint,
        args.manifest,
        lam=tc.lam,
        sss_test=cfg["sss_test"],
        r=tc.r,
        resolution=tc.resolution,
        interpolation=tc.interpolation,
    )
    row = reports.metrics_row(
        metrics,
        combo="",
        seed=tc.seed,
        regime=tc.regime,
        sss_train=tc.sss_train,
        sss_transfer=tc.sss_transfer,
        sss_test=bool(cfg["sss_test"]),
        transfer_type=tc.transfer_type if tc.regime != "baseline" else "",
        config_digest=config_digest(tc).hex(),
    )
    reports.write_metrics_csv(out_dir / "metrics.csv", [row])
    (out_dir / "metrics.txt").write_text(reports.metrics_table([row]), encoding="utf-8")
    reports.render_cmc_figure(metrics, out_dir / "cmc.png")
    _write_run_manifest(out_dir, "eval", cfg, ["metrics.csv", "metrics.txt", "cmc.png"])
    print(reports.metrics_table([row]), end="")
    return 0


def _grid_single(cfg: dict, combo: str, regime: str, sss_train: bool, sss_transfer: bool,
                 seed: int, manifest: str, transfer_manifest: str, out_dir: Path) -> dict:
    run_cfg = dict(cfg)
    run_cfg.update(regime=regime, sss_train=sss_train, sss_transfer=sss_transfer, seed=seed)
    tc = train_config_from(run_cfg)
    run_dir = out_dir / "runs" / f"{combo}_s{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    result = trainer.train(tc, manifest, transfer_manifest, run_dir)
    metrics = evaluation.evaluate(
        result.model,
        manifest,
        lam=tc.lam,
        sss_test=cfg["sss_test"],
        r=tc.r,
        resolution=tc.resolution,
        interpolation=tc.interpolation,
    )
    return reports.metrics_row(
        metrics,
        combo=combo,
        seed=seed,
        regime=regime,
        sss_train=sss_train,
        sss_transfer=sss_transfer,
        sss_test=bool(cfg["sss_test"]),
        transfer_type=tc.transfer_type if regime != "baseline" else "",
        config_digest=config_digest(tc).hex(),
    )


def _cmd_grid(args) -> int:
    cfg = _effective(
        args,
        {
            "seed": "seed",
            "sss_test": "sss_test",
            "transfer_type": "transfer_type",
            "resolution": "resolution",
            "parallel": "parallel",
        },
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    transfer_manifest = args.transfer_manifest or args.manifest
    jobs = [
        (combo, regime, sss_train, sss_transfer, seed)
        for combo, regime, sss_train, sss_transfer in GRID_COMBOS
        for seed in cfg["grid_seeds"]
    ]

    def run_one(job):
        combo, regime, sss_train, sss_transfer, seed = job
        return _grid_single(
            cfg, combo, regime, sss_train, sss_transfer, seed,
            args.manifest, transfer_manifest, out_dir,
        )

    if cfg["parallel"]:
        with ThreadPoolExecutor(max_workers=min(4, len(jobs))) as pool:
            rows = list(pool.map(run_one, jobs))
    else:
        rows = [run_one(job) for job in jobs]

    summary_rows = []
    for combo, regime, sss_train, sss_transfer in GRID_COMBOS:
        combo_rows = [r for r in rows if r["combo"] == combo]
        summary = {
            "combo": combo,
            "seed": "median",
            "regime": regime,
            "sss_train": sss_train,
            "sss_transfer": sss_transfer,
            "sss_test": bool(cfg["sss_test"]),
            "transfer_type": combo_rows[0]["transfer_type"],
            "num_queries": combo_rows[0]["num_queries"],
            "config_digest": "",
        }
        for col in ("map", "rank1", "rank5", "rank10", "rank20"):
            summary[col] = statistics.median(r[col] for r in combo_rows)
        summary_rows.append(summary)

    reports.write_metrics_csv(out_dir / "grid_runs.csv", rows)
    reports.write_metrics_csv(out_dir / "grid_summary.csv", summary_rows)
    reports.render_grid_figure(summary_rows, out_dir / "grid_map.png")
    (out_dir / "grid_summary.txt").write_text(
        reports.metrics_table(summary_rows), encoding="utf-8"
    )
    _write_run_manifest(
        out_dir, "grid", cfg,
        ["grid_runs.csv", "grid_summary.csv", "grid_summary.txt", "grid_map.png"],
    )
    print(reports.metrics_table(summary_rows), end="")
    return 0


def _cmd_query(args) -> int:
    cfg = _effective(args, {"seed": "seed", "topk": "topk", "resolution": "resolution"})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = train_config_from(cfg)
    report = evaluation.query_topk(
        args.checkpoint,
        args.image,
        args.manifest,
        k=cfg["topk"],
        lam=tc.lam,
        r=tc.r,
        resolution=tc.resolution,
        interpolation=tc.interpolation,
        query_id=args.query_id,
    )
    with (out_dir / "query_report.json").open("w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")

    query_sample = ImageSample(
        pixels=load_image(args.image),
        identity_id=max(0, report.query_identity or 0),
        vessel_type="warship",
        split="query",
        source_path=str(args.image),
    )
    ranked = [
        (
            ImageSample(
                pixels=load_image(e.path),
                identity_id=e.identity_id,
                vessel_type="warship",
                split="gallery",
                source_path=e.path,
            ),
            e.correct,
        )
        for e in report.entries
    ]
    reports.render_query_figure(query_sample, ranked, out_dir / "query.png")
    _write_run_manifest(out_dir, "query", cfg, ["query_report.json", "query.png"])
    for rank, e in enumerate(report.entries, start=1):
        marker = "?" if e.correct is None else ("+" if e.correct else "-")
        print(f"{rank:3d} {marker} id={e.identity_id:<5d} d={e.distance:.6f} {e.path}")
    return 0


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grid": _cmd_grid,
    "query": _cmd_query,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("TARD_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except TranAlignError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error (io): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
