"""Command-line entry point.

Subcommands: ``train`` (multi-trial experiment), ``eval`` (one checkpoint on one
manifest), ``embed-analysis``, ``synth`` (generate a synthetic dataset to disk),
and ``compare`` (Welch t-test between two experiment directories). Failures exit
nonzero with a machine-readable JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .checkpoint import load_checkpoint
from .data import load_manifest, save_manifest
from .experiment import (
    ABLATIONS,
    ExperimentConfig,
    compare,
    condition_from_code,
    run_experiment,
)
from .synth import SynthSpec, generate_synthetic


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avemo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a multi-trial training experiment")
    p_train.add_argument("--config", required=True, help="experiment config JSON")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--ablation", choices=ABLATIONS, default=None, help="override the config's ablation")
    p_train.add_argument("--seed", type=int, default=None, help="override the config's base seed")
    p_train.add_argument("--trials", type=int, default=None, help="override the config's trial count")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--condition", required=True, choices=["av", "a", "v"])
    p_eval.add_argument("--out", default=None, help="optional report JSON path")

    p_embed = sub.add_parser("embed-analysis", help="shared-embedding cosine distances")
    p_embed.add_argument("--ckpt", required=True)
    p_embed.add_argument("--manifest", required=True)
    p_embed.add_argument("--out", default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset to disk")
    p_synth.add_argument("--spec", required=True, help="SynthSpec JSON (optional 'seed' field)")
    p_synth.add_argument("--out", required=True, help="output dataset directory")

    p_cmp = sub.add_parser("compare", help="Welch t-test between two experiment dirs")
    p_cmp.add_argument("--a", required=True, dest="dir_a")
    p_cmp.add_argument("--b", required=True, dest="dir_b")
    p_cmp.add_argument("--metric", required=True)
    p_cmp.add_argument("--out", default=None)

    return parser


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)


def cmd_train(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.ablation is not None:
        config.ablation = args.ablation
    if args.seed is not None:
        config.base_seed = args.seed
    if args.trials is not None:
        config.trials = args.trials
    out_dir = run_experiment(config, args.out)
    print(f"experiment written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.ckpt)
    dataset = load_manifest(args.manifest, acoustic_dim=model.config.acoustic_dim,
                            visual_dim=model.config.visual_dim)
    condition = condition_from_code(args.condition)
    if meta.get("av_steps") == 0 and condition.value == "audio_visual":
        logging.getLogger(__name__).warning("fusion head in this checkpoint is untrained")
    reports = metrics.evaluate(model, dataset.samples, dataset.task, dataset.num_classes, [condition])
    _emit({"reports": [r.to_dict() for r in reports], "checkpoint_meta": meta}, args.out)
    return 0


def cmd_embed_analysis(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    dataset = load_manifest(args.manifest, acoustic_dim=model.config.acoustic_dim,
                            visual_dim=model.config.visual_dim)
    report = metrics.embedding_analysis(model, dataset.samples)
    _emit(
        {
            "mean_cosine_distance": report.mean_distance,
            "num_samples": len(report.distances),
            "skipped": report.skipped,
            "quantiles": {
                "p10": float(np.quantile(report.distances, 0.10)),
                "p50": float(np.quantile(report.distances, 0.50)),
                "p90": float(np.quantile(report.distances, 0.90)),
            },
        },
        args.out,
    )
    return 0


def cmd_synth(args) -> int:
    doc = json.loads(Path(args.spec).read_text())
    seed = doc.pop("seed", 0)
    spec = SynthSpec(**doc)
    dataset = generate_synthetic(spec, seed=seed)
    manifest_path = save_manifest(dataset, args.out)
    meta_path = Path(args.out) / "synth_meta.json"
    meta_path.write_text(json.dumps(dataset.meta["generator"], sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(dataset)} samples: {manifest_path}")
    return 0


def cmd_compare(args) -> int:
    result = compare(args.dir_a, args.dir_b, args.metric)
    _emit(result, args.out)
    return 0


_HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "embed-analysis": cmd_embed_analysis,
    "synth": cmd_synth,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
