"""Command-line surface: gen, train, decode, reorder, eval, stats.

Every command validates its inputs before touching the filesystem, writes
outputs to a temporary sibling directory, and renames it into place, so a
failed run never leaves a half-written result. Outputs are byte-identical
across reruns with the same seeds; the effective configuration (never any
path) is echoed into each output directory as ``_run_config.json``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure. Errors are
emitted as one JSON record per line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .core import (
    Corpus,
    Document,
    InputOrder,
    dumps_canonical,
    load_corpus,
    ocr_order,
    replace_order,
    save_corpus,
    validate_document,
)
from .datagen import GenConfig, gen_corpus, shuffle_order
from .decode import DecodeConfig, Prediction, decode_document, reorder
from .scorer import EncoderConfig, load_checkpoint, save_checkpoint
from .train import Hyper, train

TASK_CHOICES = ("ner", "el", "rop", "bio")


class CliError(ValueError):
    """Validation failure: bad arguments, config, or inputs."""


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

_SECTIONS = {
    "encoder": EncoderConfig,
    "gen": GenConfig,
    "train": Hyper,
    "decode": DecodeConfig,
}


def load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise CliError("config file must hold a JSON object")
    for section in raw:
        if section not in _SECTIONS:
            raise CliError(f"unknown config section {section!r}")
    return raw


def build_section(raw: dict, section: str, overrides: dict | None = None):
    cls = _SECTIONS[section]
    fields = dict(raw.get(section, {}))
    if overrides:
        fields.update(overrides)
    if section == "gen" and "words_per_doc" in fields:
        fields["words_per_doc"] = tuple(fields["words_per_doc"])
    try:
        return cls(**fields)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad [{section}] config: {exc}") from exc


def _echo_config(directory: str, record: dict) -> None:
    with open(os.path.join(directory, "_run_config.json"), "w", encoding="utf-8") as f:
        f.write(dumps_canonical(record))
        f.write("\n")


def _atomic_dir(out: str) -> tuple[str, Callable[[], None]]:
    """A staging directory plus the commit that renames it to ``out``."""
    parent = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(parent, exist_ok=True)
    if os.path.exists(out):
        raise CliError(f"output path already exists: {out}")
    tmp = tempfile.mkdtemp(prefix=os.path.basename(out) + ".tmp.", dir=parent)

    def commit():
        os.replace(tmp, out)

    return tmp, commit


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Map preserving item order; thread-parallel when workers > 1, so
    parallelism never changes output bytes."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _load_corpus_checked(path: str) -> Corpus:
    if not os.path.isdir(path):
        raise CliError(f"corpus directory not found: {path}")
    try:
        corpus = load_corpus(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load corpus at {path}: {exc}") from exc
    bad = []
    for doc in corpus.documents:
        problems = validate_document(doc)
        if problems:
            bad.append({"id": doc.id, "violations": problems[:5]})
    if bad:
        raise CliError(f"corpus contains invalid documents: {json.dumps(bad[:3])}")
    return corpus


def _split_docs(corpus: Corpus, split: str) -> tuple[Document, ...]:
    if split not in corpus.splits:
        raise CliError(f"corpus has no split {split!r}; has {sorted(corpus.splits)}")
    docs = corpus.split(split)
    if not docs:
        raise CliError(f"split {split!r} is empty")
    return docs


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    raw = load_run_config(args.config)
    overrides = {} if args.seed is None else {"seed": args.seed}
    gcfg: GenConfig = build_section(raw, "gen", overrides)
    corpus = gen_corpus(gcfg, workers=args.workers)
    tmp, commit = _atomic_dir(args.out)
    save_corpus(corpus, tmp)
    _echo_config(tmp, {"gen": gcfg.__dict__ | {"words_per_doc": list(gcfg.words_per_doc)}})
    commit()
    print(f"wrote {len(corpus.documents)} documents to {args.out}")
    return 0


def cmd_train(args) -> int:
    raw = load_run_config(args.config)
    overrides = {} if args.seed is None else {"seed": args.seed}
    config: EncoderConfig = build_section(raw, "encoder", overrides)
    hyper: Hyper = build_section(raw, "train")
    corpus = _load_corpus_checked(args.corpus)
    docs = _split_docs(corpus, "train")
    if args.task == "rop" and any(d.gold_order is None for d in docs):
        raise CliError("rop training needs gold_order on every training document")
    params, log = train(docs, args.task, config, hyper)
    tmp, commit = _atomic_dir(args.out)
    save_checkpoint(params, os.path.join(tmp, "model.ckpt"))
    with open(os.path.join(tmp, "train_log.json"), "w", encoding="utf-8") as f:
        f.write(dumps_canonical(log.to_record()))
        f.write("\n")
    _echo_config(tmp, {"task": args.task, "encoder": config.to_record(), "train": hyper.__dict__})
    commit()
    last = log.losses[-1] if log.losses else float("nan")
    status = "aborted" if log.aborted else "done"
    print(f"{status}: {len(log.losses)} steps, final loss {last:.6f} -> {args.out}")
    return 0


def _eval_order(doc: Document, index: int, shuffle_seed: int | None) -> InputOrder:
    if shuffle_seed is not None:
        seed = np.random.SeedSequence([shuffle_seed, index]).generate_state(1)[0]
        return shuffle_order(doc, int(seed))
    if doc.input_order is not None:
        return InputOrder(doc.input_order)
    return ocr_order(doc)


def cmd_decode(args) -> int:
    raw = load_run_config(args.config)
    dcfg: DecodeConfig = build_section(raw, "decode")
    if not os.path.isfile(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    params = load_checkpoint(args.checkpoint)
    if params.task != args.task:
        raise CliError(f"checkpoint was trained for task {params.task!r}, not {args.task!r}")
    corpus = _load_corpus_checked(args.corpus)
    docs = _split_docs(corpus, args.split)
    if params.entity_types != corpus.entity_types:
        raise CliError(
            f"checkpoint entity types {params.entity_types} do not match corpus "
            f"{corpus.entity_types}"
        )

    def run(pair: tuple[int, Document]) -> Prediction:
        i, doc = pair
        return decode_document(doc, params, dcfg, order=_eval_order(doc, i, args.shuffle_seed))

    preds = _pmap(run, list(enumerate(docs)), args.workers)
    tmp, commit = _atomic_dir(args.out)
    for p in preds:
        with open(os.path.join(tmp, f"{p.doc_id}.json"), "w", encoding="utf-8") as f:
            f.write(dumps_canonical(p.to_record()))
            f.write("\n")
    _echo_config(
        tmp,
        {
            "task": args.task,
            "split": args.split,
            "decode": dcfg.__dict__,
            "shuffle_seed": args.shuffle_seed,
        },
    )
    commit()
    print(f"decoded {len(preds)} documents -> {args.out}")
    return 0


def cmd_reorder(args) -> int:
    if not os.path.isfile(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    params = load_checkpoint(args.checkpoint)
    if params.task != "rop":
        raise CliError(f"reorder needs a rop checkpoint, got task {params.task!r}")
    corpus = _load_corpus_checked(args.corpus)
    dcfg = build_section(load_run_config(args.config), "decode")

    def run(doc: Document) -> Document:
        return replace_order(doc, reorder(doc, params, dcfg))

    docs = _pmap(run, list(corpus.documents), args.workers)
    tmp, commit = _atomic_dir(args.out)
    save_corpus(Corpus(tuple(docs), corpus.splits), tmp)
    _echo_config(tmp, {"decode": dcfg.__dict__, "reordered": True})
    commit()
    print(f"reordered {len(docs)} documents -> {args.out}")
    return 0


def _load_predictions(directory: str, ids: Sequence[str]) -> dict[str, Prediction]:
    if not os.path.isdir(directory):
        raise CliError(f"predictions directory not found: {directory}")
    missing, preds = [], {}
    for doc_id in ids:
        path = os.path.join(directory, f"{doc_id}.json")
        if not os.path.isfile(path):
            missing.append(doc_id)
            continue
        with open(path, "r", encoding="utf-8") as f:
            preds[doc_id] = Prediction.from_record(json.load(f))
    if missing:
        raise CliError(
            f"predictions missing for {len(missing)} corpus documents: {missing[:10]}"
        )
    return preds


def cmd_eval(args) -> int:
    corpus = _load_corpus_checked(args.corpus)
    docs = _split_docs(corpus, args.split)
    preds = _load_predictions(args.predictions, [d.id for d in docs])
    report: dict
    if args.task in ("ner", "bio"):
        pred_entities, gold_entities = [], []
        total_words = 0
        for doc in docs:
            p = preds[doc.id]
            if p.entities is None:
                raise CliError(f"prediction for {doc.id} lacks entities")
            pred_entities.extend(e.to_entity() for e in p.entities)
            gold_entities.extend(doc.entities)
            total_words += doc.n_words
        ent = metrics.entity_f1(pred_entities, gold_entities, corpus.entity_types)
        word = metrics.word_f1(pred_entities, gold_entities, total_words, corpus.entity_types)
        print(ent.format_table("entity-level"))
        print()
        print(word.format_table("word-level"))
        report = {"entity": ent.to_record(), "word": word.to_record()}
    elif args.task == "el":
        correct = predicted = gold = 0
        for doc in docs:
            p = preds[doc.id]
            if p.links is None:
                raise CliError(f"prediction for {doc.id} lacks links")
            rep = metrics.link_f1(doc.entities, p.links, doc.entities, doc.links)
            correct += rep.correct
            predicted += rep.predicted
            gold += rep.gold
        if predicted == 0 and gold == 0:
            p = r = f1 = 1.0
        else:
            p = correct / predicted if predicted else 0.0
            r = correct / gold if gold else 0.0
            f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        report = {"precision": p, "recall": r, "f1": f1, "links": gold}
        print(f"link precision {p:.4f} recall {r:.4f} f1 {f1:.4f} (gold links: {gold})")
    elif args.task == "rop":
        bleus, ards = [], []
        for doc in docs:
            p = preds[doc.id]
            if p.predicted_order is None:
                raise CliError(f"prediction for {doc.id} lacks predicted_order")
            if doc.gold_order is None:
                raise CliError(f"document {doc.id} lacks gold_order")
            bleus.append(metrics.page_bleu(p.predicted_order, doc.gold_order))
            ards.append(metrics.ard(p.predicted_order, doc.gold_order))
        report = {
            "bleu": float(np.mean(bleus)),
            "ard": float(np.mean(ards)),
            "pages": len(bleus),
        }
        print(f"page bleu {report['bleu']:.2f}  ard {report['ard']:.4f}  pages {len(bleus)}")
    else:
        raise CliError(f"unknown eval task {args.task!r}")

    if args.out:
        tmp, commit = _atomic_dir(args.out)
        with open(os.path.join(tmp, "report.json"), "w", encoding="utf-8") as f:
            f.write(dumps_canonical(report))
            f.write("\n")
        _echo_config(tmp, {"task": args.task, "split": args.split})
        commit()
    return 0


def cmd_stats(args) -> int:
    corpus = _load_corpus_checked(args.corpus)
    stats = metrics.dataset_stats(corpus)
    print(stats.format_table())
    if args.out:
        tmp, commit = _atomic_dir(args.out)
        with open(os.path.join(tmp, "stats.json"), "w", encoding="utf-8") as f:
            f.write(dumps_canonical(stats.to_record()))
            f.write("\n")
        commit()
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenpath",
        description="Grid-label information extraction on visually-rich documents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, workers=False):
        p.add_argument("--config", default=None, help="JSON run config file")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        if out_required:
            p.add_argument("--out", required=True, help="output directory (must not exist)")
        if workers:
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p, workers=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--task", required=True, choices=TASK_CHOICES)
    p.add_argument("--corpus", required=True)
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="decode predictions with a checkpoint")
    p.add_argument("--task", required=True, choices=TASK_CHOICES)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument(
        "--shuffle-seed",
        type=int,
        default=None,
        help="evaluate under segment-shuffled input orders",
    )
    common(p, workers=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("reorder", help="write a corpus with predicted input orders")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    common(p, workers=True)
    p.set_defaults(fn=cmd_reorder)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--task", required=True, choices=TASK_CHOICES)
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="optional report directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None, help="optional stats directory")
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(json.dumps({"error": str(exc), "kind": "validation"}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(
            json.dumps({"error": str(exc), "kind": type(exc).__name__}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
