"""Command-line entry point.

Subcommands cover the whole pipeline: synthesize data, train, evaluate,
decode, and verify gradients. Every run is reproducible from its config
file and seed, and each command echoes the effective configuration into
``run_config.json`` in its output directory.

Exit codes: 0 success, 1 usage or missing file, 2 validation failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import gradcheck
from .data import (SyntheticWorldSpec, Vocabulary, build_vocab, detokenize,
                   generate_synthetic, load_manifest, save_manifest, tokenize)
from .encoder import MODALITIES, VocabEmbeddingTable
from .errors import NumericalError, ShapeError, ValidationError
from .losses import LossConfig
from .model import CaptionModel, ModelConfig
from .training import TrainConfig, evaluate, train

SCHEMA_VERSION = 1


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    version = cfg.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"{path}: schema_version {version} unsupported "
                              f"(expected {SCHEMA_VERSION})")
    return cfg


def _build_dataclass(cls, section: dict, where: str, **overrides):
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _write_run_config(out_dir: str, subcommand: str, seed, config: dict):
    payload = {"schema_version": SCHEMA_VERSION, "subcommand": subcommand,
               "seed": seed, "config": config}
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        json.dump(payload, fh, indent=2)


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _parse_modalities(text):
    if text is None:
        return None
    mods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in mods if m not in MODALITIES]
    if bad:
        raise ValidationError(f"unknown modalities {bad}; choose from {MODALITIES}")
    if not mods:
        raise ValidationError("at least one modality is required")
    return mods


def _infer_dims(records) -> dict:
    first = records[0].events[0].snippets[0]
    d_agent = 1
    for rec in records:
        for ev in rec.events:
            for sn in ev.snippets:
                if sn.agents.shape[0] > 0:
                    d_agent = sn.agents.shape[1]
                    break
    return {"d_env": first.env.shape[0], "d_agent": d_agent,
            "d_frame": first.frame.shape[0]}


def _max_rows_needed(records, vocab: Vocabulary, max_len: int) -> int:
    need = 0
    for rec in records:
        for ev in rec.events:
            n_text = len(tokenize(ev.caption)) + 2    # bos + tokens + eos
            need = max(need, len(ev.snippets) + max(n_text, max_len + 1))
    return need + 1


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    spec = _build_dataclass(SyntheticWorldSpec, cfg, "world spec", seed=args.seed)
    out = _ensure_out(args.out)
    corpus = generate_synthetic(spec)
    save_manifest(corpus.train, os.path.join(out, "train.jsonl"))
    if corpus.held_out:
        save_manifest(corpus.held_out, os.path.join(out, "held_out.jsonl"))
    corpus.table.save(os.path.join(out, "table.json"))
    _write_run_config(out, "gen-data", spec.seed, asdict(spec))
    print(f"wrote {len(corpus.train)} train and {len(corpus.held_out)} held-out "
          f"videos to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    for key in cfg:
        if key not in ("model", "train", "loss"):
            raise ValidationError(f"unknown config section {key!r} "
                                  "(expected model/train/loss)")
    records = load_manifest(args.manifest)
    if not records:
        raise ValidationError(f"{args.manifest}: manifest holds no videos")
    table = VocabEmbeddingTable.load(args.table)
    vocab = build_vocab(ev.caption for rec in records for ev in rec.events)

    model_section = dict(cfg.get("model", {}))
    model_section.update(_infer_dims(records))
    model_section["vocab_size"] = len(vocab)
    if args.k is not None:
        model_section["k"] = args.k
    if args.max_len is not None:
        model_section["max_len"] = args.max_len
    if args.modalities is not None:
        model_section["modalities"] = _parse_modalities(args.modalities)
    if args.seed is not None:
        model_section["seed"] = args.seed
    probe_max_len = model_section.get("max_len", 16)
    model_section.setdefault("max_pos", _max_rows_needed(records, vocab, probe_max_len))
    model_cfg = _build_dataclass(ModelConfig, model_section, "model config")
    if model_cfg.k > table.n_tokens:
        raise ValidationError(f"k={model_cfg.k} exceeds the {table.n_tokens} "
                              "tokens in the embedding table")

    train_cfg = _build_dataclass(TrainConfig, cfg.get("train", {}), "train config",
                                 seed=args.seed)
    loss_section = dict(cfg.get("loss", {}))
    if args.loss is not None:
        loss_section["use_contrastive"] = args.loss == "combined"
    loss_cfg = _build_dataclass(LossConfig, loss_section, "loss config")

    out = _ensure_out(args.out)
    model = CaptionModel(model_cfg)
    model.check_table(table, vocab)
    ckpt_path = os.path.join(out, "checkpoint.json")
    effective = {
        "model": dict(asdict(model_cfg), modalities=list(model_cfg.modalities)),
        "train": asdict(train_cfg),
        "loss": dict(asdict(loss_cfg),
                     penalty_excludes=list(loss_cfg.penalty_excludes)),
    }
    _write_run_config(out, "train", train_cfg.seed, effective)
    try:
        history = train(model, records, table, vocab, train_cfg, loss_cfg,
                        log_path=os.path.join(out, "train_log.jsonl"))
    except NumericalError:
        model.save_checkpoint(ckpt_path, vocab_tokens=vocab.id_to_token)
        raise
    model.save_checkpoint(ckpt_path, vocab_tokens=vocab.id_to_token)
    final = history[-1].acc if history else float("nan")
    print(f"trained {len(history)} epochs; final teacher-forced accuracy "
          f"{final:.3f}; checkpoint at {ckpt_path}")
    return 0


def _load_model_and_vocab(checkpoint_path: str):
    model, vocab_tokens = CaptionModel.load_checkpoint(checkpoint_path)
    if vocab_tokens is None:
        raise ValidationError(f"{checkpoint_path}: checkpoint carries no vocabulary")
    vocab = Vocabulary(vocab_tokens[4:])
    if vocab.id_to_token != list(vocab_tokens):
        raise ValidationError(f"{checkpoint_path}: stored vocabulary is not in "
                              "canonical order")
    return model, vocab


def cmd_eval(args) -> int:
    model, vocab = _load_model_and_vocab(args.checkpoint)
    records = load_manifest(args.manifest)
    if not records:
        raise ValidationError(f"{args.manifest}: manifest holds no videos")
    table = VocabEmbeddingTable.load(args.table)
    rep = evaluate(model, records, table, vocab, max_len=args.max_len)
    out = _ensure_out(args.out)
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(rep, fh, indent=2)
    _write_run_config(out, "eval", model.config.seed, {
        "checkpoint": args.checkpoint, "manifest": args.manifest,
        "table": args.table, "max_len": args.max_len})
    print(json.dumps(rep, indent=2))
    return 0


def cmd_decode(args) -> int:
    model, vocab = _load_model_and_vocab(args.checkpoint)
    records = load_manifest(args.manifest)
    if not records:
        raise ValidationError(f"{args.manifest}: manifest holds no videos")
    table = VocabEmbeddingTable.load(args.table)
    model.check_table(table, vocab)
    out = _ensure_out(args.out)
    path = os.path.join(out, "decoded.jsonl")
    with open(path, "w") as fh:
        for rec in records:
            ids = model.decode_video(rec, table, args.max_len)
            sentences = [detokenize(vocab.decode(line)) for line in ids]
            fh.write(json.dumps({"video_id": rec.video_id,
                                 "sentences": sentences}) + "\n")
    _write_run_config(out, "decode", model.config.seed, {
        "checkpoint": args.checkpoint, "manifest": args.manifest,
        "table": args.table, "max_len": args.max_len})
    print(f"wrote paragraphs for {len(records)} videos to {path}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    n_seeds = cfg.get("n_seeds", 10)
    seed = args.seed if args.seed is not None else cfg.get("seed", 7)
    prim = gradcheck.run_primitive_checks(n_seeds=n_seeds)
    print(f"primitives ok: {len(prim)} ops, worst {max(prim.values()):.3e}")
    full = gradcheck.run_end_to_end_check(seed=seed)
    print(f"end-to-end ok: {len(full)} parameter tensors, "
          f"worst {max(full.values()):.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paracap",
        description="Desk-scale video paragraph captioning pipeline.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--manifest", required=True, help="training manifest (JSON lines)")
    p.add_argument("--table", required=True, help="vocabulary embedding table JSON")
    p.add_argument("--modalities", help="comma list from env,agent,ling")
    p.add_argument("--loss", choices=("combined", "mle"),
                   help="combined = captioning + alignment, mle = captioning only")
    p.add_argument("--max-len", type=int, help="decode length cap stored in the model")
    p.add_argument("--k", type=int, help="scene elements retrieved per snippet")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a manifest")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="write greedy captions for a manifest")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("gradcheck", help="run the finite-difference suites")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = getattr(exc, "filename", None) or exc
        print(f"error: file not found: {name}", file=sys.stderr)
        return 1
    except (ValidationError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
