"""Command-line pipeline: generate → train-vocab → pretrain → distill →
embed → probe → report.

Each verb reads the run config (JSON file plus flag overrides), checks its
prerequisite artifacts, and writes outputs under the run directory. All
stages are deterministic: re-running with unchanged inputs reproduces
outputs byte-identically, and every artifact carries the config hash and
master seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import baselines, encoder, pretrain, probe, report
from .config import METHODS, RunConfig, apply_overrides
from .grammar import serialize_document
from .pretrain import Dataset, TrainResult, encode_dataset
from .synthgen import (TASK_IDS, generate_corpus, read_corpus_jsonl,
                       read_labels_jsonl, write_corpus_jsonl, write_labels_jsonl)
from .tokenizer import load_vocab, save_vocab, train_vocab
from .util import (derived_rng, load_container, save_container,
                   write_sidecar_meta)


class PrerequisiteError(RuntimeError):
    """A required upstream artifact is missing or unreadable."""


def _require(path: str, produced_by: str) -> None:
    if not os.path.exists(path):
        raise PrerequisiteError(
            f"missing artifact {path!r}; run `txnlm {produced_by}` first")


def _load_corpus(cfg: RunConfig):
    _require(cfg.corpus_path, "generate")
    return read_corpus_jsonl(cfg.corpus_path)


def _documents(corpus) -> dict[str, str]:
    return {acct: serialize_document(acct, txns).render() for acct, txns in corpus}


def _load_encoded(cfg: RunConfig, max_context: int):
    """(dataset, vocab) for the configured corpus and context length."""
    _require(cfg.vocab_path, "train-vocab")
    vocab = load_vocab(cfg.vocab_path)
    corpus = _load_corpus(cfg)
    return encode_dataset(_documents(corpus), vocab, max_context), vocab


def _cls_table(params, model_config, data: Dataset, batch: int = 64) -> np.ndarray:
    out = np.zeros((len(data), model_config.d_model), dtype=np.float64)
    for lo in range(0, len(data), batch):
        ids, mask = data.take(slice(lo, lo + batch))
        out[lo:lo + ids.shape[0]] = encoder.cls_embedding(params, ids, mask,
                                                          model_config)
    return out


# ---------------------------------------------------------------------------
# verbs

def cmd_generate(cfg: RunConfig, quiet: bool) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    corpus, labels = generate_corpus(cfg.generator, n_workers=cfg.threads)
    write_corpus_jsonl(cfg.corpus_path, corpus)
    write_sidecar_meta(cfg.corpus_path, cfg.fingerprint, cfg.seed, "generate")
    write_labels_jsonl(cfg.labels_path, labels)
    write_sidecar_meta(cfg.labels_path, cfg.fingerprint, cfg.seed, "generate")
    cfg.save(os.path.join(cfg.out_dir, "config.json"))
    if not quiet:
        n_txn = sum(len(t) for _, t in corpus)
        print(f"[generate] {len(corpus)} accounts, {n_txn} transactions "
              f"→ {cfg.corpus_path}")


def cmd_train_vocab(cfg: RunConfig, quiet: bool) -> None:
    corpus = _load_corpus(cfg)
    lines = [serialize_document(a, t).render() for a, t in corpus]
    vocab = train_vocab(lines, target_size=cfg.vocab.target_size,
                        min_frequency=cfg.vocab.min_frequency)
    save_vocab(cfg.vocab_path, vocab, cfg.fingerprint, cfg.seed)
    if not quiet:
        print(f"[train-vocab] {vocab.size} tokens "
              f"({vocab.reserved_size} reserved) → {cfg.vocab_path}")


def _make_curve_hook(cfg: RunConfig, model_config, data: Dataset, labels_by_task):
    """Probe-during-pretraining hook for the learning-curve log."""
    n = min(cfg.probe.probe_accounts, len(data))
    idx = np.sort(derived_rng(cfg.seed, "curve-sample").choice(
        len(data), size=n, replace=False))
    sub = Dataset(ids=data.ids[idx], attention_mask=data.attention_mask[idx],
                  account_ids=[data.account_ids[i] for i in idx])

    def hook(step: int, params) -> list[tuple[str, str, float]]:
        emb = _cls_table(params, model_config, sub)
        rows = []
        for task in cfg.probe.curve_tasks:
            spec = probe.TASK_SPECS[task]
            encoded = probe.encode_task_labels(labels_by_task[task], spec)
            scores = probe.probe_task(emb, sub.account_ids, encoded, spec,
                                      cfg.seed, cfg.probe.l2, cfg.probe.max_iter)
            rows.append((task, spec.metric_ids[0], scores[spec.metric_ids[0]]))
        return rows

    return hook


def cmd_pretrain(cfg: RunConfig, quiet: bool, method: str = "bert",
                 resume_from: str | None = None) -> TrainResult | None:
    if method == "coles":
        corpus = _load_corpus(cfg)
        histories = {a: t for a, t in corpus}
        seed = cfg.seed + cfg.coles.seed_offset
        params, history = baselines.coles_train(histories, cfg.coles.config,
                                                cfg.coles.steps, seed, quiet=quiet)
        baselines.save_coles_checkpoint(cfg.coles_path, cfg.coles.config,
                                        params, seed, cfg.coles.steps)
        if not quiet:
            print(f"[pretrain] coles final loss {history[-1][1]:.4f} "
                  f"→ {cfg.coles_path}")
        return None
    if method != "bert":
        raise PrerequisiteError(f"pretrain supports methods bert|coles, got {method}")

    data, vocab = _load_encoded(cfg, cfg.model.max_context)
    # the learned vocabulary may fall short of the configured target when
    # the corpus runs out of merges; size the model to what actually exists
    model_config = dataclasses.replace(cfg.model, vocab_size=vocab.size)
    hook = None
    if cfg.train.probe_every:
        _require(cfg.labels_path, "generate")
        raw = read_labels_jsonl(cfg.labels_path)
        labels_by_task = {t: {a: v[t] for a, v in raw.items()}
                          for t in cfg.probe.curve_tasks}
        hook = _make_curve_hook(cfg, model_config, data, labels_by_task)
    result = pretrain.pretrain(data, model_config, cfg.train, cfg.teacher_dir,
                               resume_from=resume_from, probe_hook=hook,
                               quiet=quiet)
    if not quiet:
        print(f"[pretrain] final checkpoint → {result.final_checkpoint}")
    return result


def cmd_distill(cfg: RunConfig, quiet: bool) -> TrainResult:
    teacher_ckpt = os.path.join(cfg.teacher_dir, "checkpoint_final.bin")
    _require(teacher_ckpt, "pretrain")
    t_config, t_params, _, _ = encoder.load_checkpoint(teacher_ckpt)
    data, vocab = _load_encoded(cfg, cfg.student_model.max_context)
    student_model = dataclasses.replace(cfg.student_model, vocab_size=vocab.size)
    result = pretrain.pretrain(data, student_model, cfg.student_train,
                               cfg.student_dir, teacher=(t_params, t_config),
                               distill=cfg.distill, quiet=quiet)
    if not quiet:
        print(f"[distill] final checkpoint → {result.final_checkpoint}")
    return result


def _embed_method(cfg: RunConfig, method: str):
    """(account_ids, vectors) for one method, loading what it needs."""
    if method == "feateng":
        corpus = _load_corpus(cfg)
        return baselines.feat_eng_table({a: t for a, t in corpus})
    if method == "coles":
        _require(cfg.coles_path, "pretrain --method coles")
        _, params, _ = baselines.load_coles_checkpoint(cfg.coles_path)
        corpus = _load_corpus(cfg)
        return baselines.coles_embed_table({a: t for a, t in corpus}, params)
    if method in ("bert", "distilbert"):
        ckpt_dir = cfg.teacher_dir if method == "bert" else cfg.student_dir
        verb = "pretrain" if method == "bert" else "distill"
        ckpt = os.path.join(ckpt_dir, "checkpoint_final.bin")
        _require(ckpt, verb)
        model_config, params, _, _ = encoder.load_checkpoint(ckpt)
        data, _ = _load_encoded(cfg, model_config.max_context)
        return data.account_ids, _cls_table(params, model_config, data)
    raise PrerequisiteError(f"unknown method {method!r}")


def cmd_embed(cfg: RunConfig, quiet: bool, method: str) -> None:
    ids, vectors = _embed_method(cfg, method)
    path = cfg.embeddings_path(method)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    header = {"kind": "txnlm-embeddings", "version": 1, "method": method,
              "account_ids": list(ids), "config_hash": cfg.fingerprint,
              "seed": cfg.seed}
    save_container(path, header, {"vectors": np.ascontiguousarray(vectors)})
    if not quiet:
        print(f"[embed] {method}: {vectors.shape[0]}×{vectors.shape[1]} → {path}")


def load_embeddings(path: str):
    header, arrays = load_container(path)
    if header.get("kind") != "txnlm-embeddings":
        raise ValueError(f"{path}: not an embeddings file")
    return header["account_ids"], arrays["vectors"]


def cmd_probe(cfg: RunConfig, quiet: bool) -> None:
    _require(cfg.labels_path, "generate")
    method_embeddings = {}
    for method in cfg.methods:
        path = cfg.embeddings_path(method)
        _require(path, f"embed --method {method}")
        method_embeddings[method] = load_embeddings(path)
    raw = read_labels_jsonl(cfg.labels_path)
    task_labels = {t: {a: v[t] for a, v in raw.items()} for t in TASK_IDS}
    entries = probe.run_probe(method_embeddings, task_labels, cfg.seed,
                              l2=cfg.probe.l2, max_iter=cfg.probe.max_iter,
                              quiet=quiet)
    os.makedirs(cfg.reports_dir, exist_ok=True)
    probe.write_score_csv(cfg.scores_path, entries, cfg.fingerprint, cfg.seed)
    probe.write_summary_json(cfg.summary_path, entries, cfg.fingerprint, cfg.seed)
    if not quiet:
        print(f"[probe] {len(entries)} scores → {cfg.scores_path}")


def cmd_report(cfg: RunConfig, quiet: bool) -> None:
    _require(cfg.scores_path, "probe")
    entries = probe.read_score_csv(cfg.scores_path)
    os.makedirs(cfg.reports_dir, exist_ok=True)
    paths = report.write_group_tables(entries, cfg.reports_dir,
                                      cfg.fingerprint, cfg.seed)
    hist_path = os.path.join(cfg.reports_dir, "rank_histogram.svg")
    report.write_rank_histogram_svg(entries, hist_path)
    paths.append(hist_path)
    probe_log = os.path.join(cfg.teacher_dir, "probe_log.csv")
    if os.path.exists(probe_log):
        curve_path = os.path.join(cfg.reports_dir, "learning_curve.svg")
        report.write_learning_curve_svg(probe_log, curve_path)
        paths.append(curve_path)
    if not quiet:
        for p in paths:
            print(f"[report] wrote {p}")


def cmd_all(cfg: RunConfig, quiet: bool) -> None:
    cmd_generate(cfg, quiet)
    cmd_train_vocab(cfg, quiet)
    if "bert" in cfg.methods or "distilbert" in cfg.methods:
        cmd_pretrain(cfg, quiet, method="bert")
    if "distilbert" in cfg.methods:
        cmd_distill(cfg, quiet)
    if "coles" in cfg.methods:
        cmd_pretrain(cfg, quiet, method="coles")
    for method in cfg.methods:
        cmd_embed(cfg, quiet, method)
    cmd_probe(cfg, quiet)
    cmd_report(cfg, quiet)


# ---------------------------------------------------------------------------
# argument plumbing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="txnlm",
        description="Transaction-language pretraining and probing pipeline.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="run config JSON file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker cap for parallel stages")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (dotted path); repeatable")
        p.add_argument("--quiet", action="store_true")
        return p

    common(sub.add_parser("generate", help="synthesize corpus + labels"))
    common(sub.add_parser("train-vocab", help="learn the subword vocabulary"))
    p = common(sub.add_parser("pretrain", help="MLM-pretrain the encoder "
                                               "(or train the CoLES baseline)"))
    p.add_argument("--method", choices=("bert", "coles"), default="bert")
    p.add_argument("--resume-from", help="checkpoint to resume from")
    common(sub.add_parser("distill", help="train the student against the teacher"))
    p = common(sub.add_parser("embed", help="write per-account embeddings"))
    p.add_argument("--method", choices=METHODS, required=True)
    common(sub.add_parser("probe", help="linear-probe all methods on all tasks"))
    common(sub.add_parser("report", help="emit tables and figures"))
    common(sub.add_parser("all", help="run the full pipeline"))
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    data = cfg.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.threads is not None:
        data["threads"] = args.threads
    cfg = RunConfig.from_dict(data)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        quiet = args.quiet
        if args.verb == "generate":
            cmd_generate(cfg, quiet)
        elif args.verb == "train-vocab":
            cmd_train_vocab(cfg, quiet)
        elif args.verb == "pretrain":
            cmd_pretrain(cfg, quiet, method=args.method,
                         resume_from=args.resume_from)
        elif args.verb == "distill":
            cmd_distill(cfg, quiet)
        elif args.verb == "embed":
            cmd_embed(cfg, quiet, method=args.method)
        elif args.verb == "probe":
            cmd_probe(cfg, quiet)
        elif args.verb == "report":
            cmd_report(cfg, quiet)
        elif args.verb == "all":
            cmd_all(cfg, quiet)
        else:  # pragma: no cover - argparse enforces the choices
            raise ValueError(f"unknown verb {args.verb}")
    except (PrerequisiteError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
