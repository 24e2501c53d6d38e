"""Command-line surface: dataset synthesis, two-stage training, evaluation.

Every command reads one JSON config file and writes fixed-name outputs under
``--out``. The config is copied into the output directory so any run is
reproducible from that directory alone.

Config schema (all sections optional):
    {
      "generator": { ... GeneratorSpec field overrides ... },
      "train":     { ... TrainConfig field overrides ... },
      "dataset":   "path/to/dataset.jsonl",
      "checkpoint": "path/to/stage1.kuda",
      "model":      "path/to/model.kuda",
      "inspect_ids": ["s00001", ...]
    }
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import gradcheck as G
from .metrics import MetricReport
from .pipeline import (
    KudaModel,
    TrainConfig,
    desk_profile,
    downstream_stage,
    evaluate,
    make_feature_batch,
    paper_profile,
    pretrain_stage,
    sentiment_ratio,
)
from .fusion import MODALITIES
from .snapshot import SnapshotError, load_snapshot, save_snapshot

VERBS = ("synth", "pretrain", "train", "eval", "stats", "inspect", "gradcheck")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kuda", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    return p


def _load_config(args) -> dict:
    if args.config is None:
        return {}
    try:
        return json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise D.DataError(f"cannot read config {args.config}: {exc}") from None


def _train_config(args, cfg: dict) -> TrainConfig:
    profile = desk_profile if args.profile == "desk" else paper_profile
    tc = profile(**cfg.get("train", {}))
    if args.seed is not None:
        tc.seed = args.seed
    return tc


def _generator_spec(args, cfg: dict) -> D.GeneratorSpec:
    return D.GeneratorSpec(**cfg.get("generator", {}))


def _prepare_out(args) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    if args.config is not None:
        shutil.copy(args.config, args.out / "config.json")
    return args.out


def _dataset_path(args, cfg: dict) -> Path:
    return Path(cfg.get("dataset", args.out / "dataset.jsonl"))


def _load_dataset(args, cfg: dict, tc: TrainConfig) -> list:
    return D.load(_dataset_path(args, cfg), label_range=tc.label_range)


def _write_log(out: Path, rows: list[dict]):
    with open(out / "log.jsonl", "a") as fh:
        for i, row in enumerate(rows):
            fh.write(json.dumps({"step": i, **row}) + "\n")


def _json_dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args, cfg):
    out = _prepare_out(args)
    spec = _generator_spec(args, cfg)
    seed = args.seed if args.seed is not None else cfg.get("train", {}).get("seed", 0)
    records = D.synthesize(spec, seed)
    D.store(records, out / "dataset.jsonl")
    _write_log(out, [{"event": "synth", "n_samples": len(records), "seed": seed}])
    print(f"wrote {len(records)} samples to {out / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_stats(args, cfg):
    out = _prepare_out(args)
    tc = _train_config(args, cfg)
    records = _load_dataset(args, cfg, tc)
    stats = D.dominance_stats(records)
    _json_dump(out / "stats.json", stats.to_dict())
    print(f"{'modality':<10}{'dominant':>10}{'noise':>10}")
    for m in MODALITIES:
        print(f"{m:<10}{stats.dominant[m]:>10.3f}{stats.noise[m]:>10.3f}")
    print(f"noise-sample proportion: {stats.noise_sample_proportion:.3f}; ties: {stats.tie_count}")
    return EXIT_OK


def cmd_pretrain(args, cfg):
    out = _prepare_out(args)
    tc = _train_config(args, cfg)
    tc.stage = "pretrain"
    records = _load_dataset(args, cfg, tc)
    checkpoint, log = pretrain_stage(records, tc)
    save_snapshot(out / "stage1.kuda", checkpoint)
    _write_log(out, log)
    print(f"stage-1 checkpoint at {out / 'stage1.kuda'}; best val MAE {min(r['val_mae']['mean'] for r in log):.4f}")
    return EXIT_OK


def cmd_train(args, cfg):
    out = _prepare_out(args)
    tc = _train_config(args, cfg)
    tc.stage = "downstream"
    records = _load_dataset(args, cfg, tc)
    checkpoint = None
    if "no_KIP" not in tc.ablations:
        ckpt_path = Path(cfg.get("checkpoint", args.out / "stage1.kuda"))
        checkpoint = load_snapshot(ckpt_path)
    model, log = downstream_stage(records, checkpoint, tc)
    save_snapshot(out / "model.kuda", model.all_params())
    _write_log(out, log)
    print(f"model at {out / 'model.kuda'}; best val MAE {min(r['val_mae'] for r in log):.4f}")
    return EXIT_OK


def _load_model(args, cfg, tc) -> KudaModel:
    model = KudaModel(tc)
    model_path = Path(cfg.get("model", args.out / "model.kuda"))
    model.load_params(load_snapshot(model_path))
    return model


def cmd_eval(args, cfg):
    out = _prepare_out(args)
    tc = _train_config(args, cfg)
    records = _load_dataset(args, cfg, tc)
    test = D.split(records, "test")
    model = _load_model(args, cfg, tc)
    report, preds, attention_rows, feature_rows = evaluate(model, test)
    _json_dump(out / "metrics.json", report.to_dict())
    with open(out / "attention.jsonl", "w") as fh:
        for row in attention_rows:
            fh.write(json.dumps(row) + "\n")
    with open(out / "features.jsonl", "w") as fh:
        for row in feature_rows:
            fh.write(json.dumps(row) + "\n")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_inspect(args, cfg):
    out = _prepare_out(args)
    tc = _train_config(args, cfg)
    records = _load_dataset(args, cfg, tc)
    model = _load_model(args, cfg, tc)
    by_id = {r.id: r for r in records}
    ids = cfg.get("inspect_ids") or [r.id for r in D.split(records, "test")[:3]]
    bundle = []
    for sid in ids:
        if sid not in by_id:
            raise D.DataError(f"inspect: sample id {sid!r} not in dataset")
        rec = by_id[sid]
        batch = make_feature_batch([rec])
        pred = float(model.predict(batch)[0])
        unimodal = model.forward_unimodal(batch)
        y_hat = {m: float(unimodal[m][1].data.reshape(-1)[0]) for m in MODALITIES}
        ratio = sentiment_ratio(
            {m: unimodal[m][1] for m in MODALITIES}, np.asarray([[rec.y]]), tc.k
        ).values()
        attn = [
            {m: w[0].tolist() for m, w in per_mod.items()}
            for per_mod in model.last_attention
        ]
        bundle.append(
            {
                "sample_id": sid,
                "labels": {"text": rec.y_t, "vision": rec.y_v, "audio": rec.y_a, "multimodal": rec.y},
                "prediction": pred,
                "unimodal_predictions": y_hat,
                "train_mode_ratios": ratio,
                "dominant": sorted(D.dominant_set(rec)),
                "noise": sorted(D.noise_set(rec)),
                "attention": attn,
            }
        )
    _json_dump(out / "inspect.json", bundle)
    print(f"wrote case-study bundle for {len(bundle)} samples to {out / 'inspect.json'}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    results = G.run_all()
    width = max(len(r["op"]) for r in results)
    ok = True
    for r in results:
        status = "pass" if r["passed"] else "FAIL"
        print(f"{r['op']:<{width}}  {status}  rel_err={r['rel_err']:.2e}")
        ok = ok and r["passed"]
    return EXIT_OK if ok else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    handlers = {
        "synth": cmd_synth,
        "stats": cmd_stats,
        "pretrain": cmd_pretrain,
        "train": cmd_train,
        "eval": cmd_eval,
        "inspect": cmd_inspect,
        "gradcheck": cmd_gradcheck,
    }
    try:
        cfg = _load_config(args)
        return handlers[args.verb](args, cfg)
    except (D.DataError, SnapshotError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TypeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
