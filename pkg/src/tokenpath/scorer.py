"""Toy layout-aware encoder, bilinear pair-scoring heads, and losses.

Numerics are float64 numpy end to end. Gradients are hand-derived reverse
mode and checked against central finite differences in the test suite.

Indexing convention: hidden state row i always belongs to word i of the
document, never to input position i. The input order enters the model only
through the 1D positional features (the rank of each word under the order),
so with ``use_1d_position="none"`` the computation literally never touches
the order. Score grids inherit the convention: ``scores[t, i, j]`` is the
logit for word i linking to word j under relation type t. A view of the
grid in input-position space, when needed, is just a row/column gather.

The encoder itself is a per-word MLP over text + layout embeddings. All
pairwise interaction happens in the scoring heads, which is what keeps the
gradient code small; the box features include multi-frequency sinusoids so
a bilinear form can express relative-offset detectors such as "j sits just
right of i on the same row".
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import Document, InputOrder
from . import labels as labels_mod

MAX_SEQUENCE = 512
CHECKPOINT_MAGIC = b"TPPCKPT1"

_FREQS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
N_BOX_FEATURES = 8 + 4 * len(_FREQS)

TASKS = ("ner", "el", "rop", "bio")

_1D_MODES = ("none", "global", "local")
_2D_MODES = ("word", "segment")


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 64
    vocab_buckets: int = 4096
    use_1d_position: str = "none"
    use_2d_position: str = "word"
    mlp_layers: int = 2
    dropout_rate: float = 0.1
    multi_dropout_k: int = 4
    positional_residual: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.hidden_dim % 2:
            raise ValueError(f"hidden_dim must be a positive even number, got {self.hidden_dim}")
        if self.vocab_buckets < 2:
            raise ValueError("vocab_buckets must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.multi_dropout_k < 1:
            raise ValueError("multi_dropout_k must be >= 1")
        if self.mlp_layers < 1:
            raise ValueError("mlp_layers must be >= 1")
        if self.use_1d_position not in _1D_MODES:
            raise ValueError(f"use_1d_position must be one of {_1D_MODES}")
        if self.use_2d_position not in _2D_MODES:
            raise ValueError(f"use_2d_position must be one of {_2D_MODES}")

    def to_record(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "vocab_buckets": self.vocab_buckets,
            "use_1d_position": self.use_1d_position,
            "use_2d_position": self.use_2d_position,
            "mlp_layers": self.mlp_layers,
            "dropout_rate": self.dropout_rate,
            "multi_dropout_k": self.multi_dropout_k,
            "positional_residual": self.positional_residual,
            "seed": self.seed,
        }

    @staticmethod
    def from_record(rec: Mapping) -> "EncoderConfig":
        return EncoderConfig(**rec)


def relation_count(task: str, n_types: int) -> int:
    if task == "ner":
        return n_types
    if task in ("el", "rop"):
        return 1
    if task == "bio":
        return 0
    raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")


@dataclass
class ModelParams:
    config: EncoderConfig
    task: str
    entity_types: tuple[str, ...]
    arrays: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config, self.task, self.entity_types,
            {k: v.copy() for k, v in self.arrays.items()},
        )

    @property
    def n_relations(self) -> int:
        return relation_count(self.task, len(self.entity_types))


def init_params(config: EncoderConfig, task: str, entity_types: Sequence[str]) -> ModelParams:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng(config.seed)
    d = config.hidden_dim
    a: dict[str, np.ndarray] = {}
    a["tok_emb"] = rng.normal(0.0, 0.5, (config.vocab_buckets, d))
    a["pos2d_w"] = rng.normal(0.0, 0.5 / np.sqrt(N_BOX_FEATURES), (N_BOX_FEATURES, d))
    if config.use_1d_position == "global":
        a["pos1d"] = rng.normal(0.0, 0.3, (MAX_SEQUENCE, d))
    elif config.use_1d_position == "local":
        a["pos1d_seg"] = rng.normal(0.0, 0.3, (MAX_SEQUENCE, d))
        a["pos1d_word"] = rng.normal(0.0, 0.3, (MAX_SEQUENCE, d))
    for l in range(config.mlp_layers):
        a[f"enc_w{l}"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        a[f"enc_b{l}"] = np.zeros(d)
    for t in range(relation_count(task, len(entity_types))):
        a[f"q_w{t}"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        a[f"q_b{t}"] = np.zeros(d)
        a[f"k_w{t}"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        a[f"k_b{t}"] = np.zeros(d)
    if task == "rop":
        a["aux_emb"] = rng.normal(0.0, 0.5, d)
    if task == "bio":
        n_tags = 2 * len(entity_types) + 1
        a["cls_w"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, n_tags))
        a["cls_b"] = np.zeros(n_tags)
    return ModelParams(config, task, tuple(entity_types), a)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def hash_token(text: str, buckets: int) -> int:
    # crc32 rather than hash(): stable across processes, which the
    # determinism guarantees depend on.
    return zlib.crc32(text.encode("utf-8")) % buckets


def box_features(boxes: np.ndarray, page_w: float, page_h: float) -> np.ndarray:
    """(n, 4) raw boxes -> (n, N_BOX_FEATURES) normalized + sinusoidal."""
    x0 = boxes[:, 0] / page_w
    y0 = boxes[:, 1] / page_h
    x1 = boxes[:, 2] / page_w
    y1 = boxes[:, 3] / page_h
    cx = (x0 + x1) / 2.0
    cy = (y0 + y1) / 2.0
    cols = [x0, y0, x1, y1, cx, cy, x1 - x0, y1 - y0]
    for c in (cx, cy):
        for f in _FREQS:
            cols.append(np.sin(2.0 * np.pi * f * c))
            cols.append(np.cos(2.0 * np.pi * f * c))
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class DocFeatures:
    ids: np.ndarray     # (n,) token bucket per word
    phi: np.ndarray     # (n, N_BOX_FEATURES) per word
    seg_of: np.ndarray  # (n,) segment ordinal per word


def featurize(doc: Document, config: EncoderConfig) -> DocFeatures:
    n = doc.n_words
    ids = np.array([hash_token(w.text, config.vocab_buckets) for w in doc.words])
    seg_of = np.zeros(n, dtype=np.int64)
    for si, seg in enumerate(doc.segments):
        for wi in seg.word_indices:
            seg_of[wi] = si
    if config.use_2d_position == "word":
        boxes = np.array([w.box.as_tuple() for w in doc.words])
    else:
        boxes = np.array(
            [doc.segments[seg_of[i]].box.as_tuple() for i in range(n)]
        )
    return DocFeatures(ids=ids, phi=box_features(boxes, doc.page_width, doc.page_height), seg_of=seg_of)


def _rank_indices(feats: DocFeatures, order: InputOrder) -> dict[str, np.ndarray]:
    """1D position indices per word (word-indexed, derived from the order)."""
    n = len(order.perm)
    inv = np.asarray(order.inverse())
    out = {"global": inv}
    seg_at_pos = feats.seg_of[np.asarray(order.perm)]
    block = np.zeros(n, dtype=np.int64)
    if n > 1:
        block[1:] = np.cumsum(seg_at_pos[1:] != seg_at_pos[:-1])
    within = np.arange(n) - np.concatenate(([0], np.flatnonzero(np.diff(block))+1))[block]
    seg_rank = np.zeros(n, dtype=np.int64)
    word_rank = np.zeros(n, dtype=np.int64)
    seg_rank[np.asarray(order.perm)] = block
    word_rank[np.asarray(order.perm)] = within
    out["seg"] = seg_rank
    out["word"] = word_rank
    return out


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def _pos1d_sum(params: ModelParams, feats: DocFeatures, order: InputOrder) -> np.ndarray | None:
    cfg = params.config
    if cfg.use_1d_position == "none":
        return None
    ranks = _rank_indices(feats, order)
    if cfg.use_1d_position == "global":
        return params.arrays["pos1d"][ranks["global"]]
    return params.arrays["pos1d_seg"][ranks["seg"]] + params.arrays["pos1d_word"][ranks["word"]]


def encode(
    doc: Document,
    order: InputOrder,
    params: ModelParams,
    *,
    train_mode: bool = False,
    rng=None,
    features: DocFeatures | None = None,
) -> np.ndarray:
    """Hidden states, shape (n, hidden_dim); row i belongs to word i.

    Deterministic regardless of ``train_mode``: the toy encoder carries no
    internal noise, regularization noise lives in the output heads (see
    multi-dropout in the loss functions). The arguments are accepted so the
    call site reads the same as for stochastic encoders.
    """
    del train_mode, rng
    n = doc.n_words
    if n > MAX_SEQUENCE:
        raise ValueError(f"document has {n} words, max sequence is {MAX_SEQUENCE}")
    feats = features if features is not None else featurize(doc, params.config)
    h, _ = _encode_cached(feats, order, params)
    return h


def _encode_cached(feats: DocFeatures, order: InputOrder, params: ModelParams):
    cfg = params.config
    a = params.arrays
    x = a["tok_emb"][feats.ids] + feats.phi @ a["pos2d_w"]
    p1 = _pos1d_sum(params, feats, order)
    if p1 is not None:
        x = x + p1
    acts = [x]
    cur = x
    for l in range(cfg.mlp_layers):
        cur = np.tanh(cur @ a[f"enc_w{l}"] + a[f"enc_b{l}"])
        acts.append(cur)
    h = cur
    if cfg.positional_residual and p1 is not None:
        h = h + p1
    return h, (acts, p1)


def global_pointer_scores(h: np.ndarray, params: ModelParams) -> np.ndarray:
    """Bilinear pair scores, shape (n_relations, m, m) where m = h rows.

    score[t, i, j] = (W_q^t h_i + b_q^t) . (W_k^t h_j + b_k^t) / sqrt(d)
    """
    if h.size == 0:
        raise ValueError("empty hidden states")
    d = params.config.hidden_dim
    a = params.arrays
    out = np.empty((params.n_relations, h.shape[0], h.shape[0]))
    for t in range(params.n_relations):
        q = h @ a[f"q_w{t}"] + a[f"q_b{t}"]
        k = h @ a[f"k_w{t}"] + a[f"k_b{t}"]
        out[t] = (q @ k.T) / np.sqrt(d)
    return out


def score_document(
    doc: Document,
    order: InputOrder,
    params: ModelParams,
    features: DocFeatures | None = None,
) -> np.ndarray:
    """Eval-mode model output for one document.

    ner/el: (n_relations, n, n) score grids over word indices.
    rop:    (n+1, n+1) grid; node 0 is the auxiliary start, node i+1 word i.
    bio:    (n, n_tags) classification logits per word.
    """
    h = encode(doc, order, params, features=features)
    a = params.arrays
    if params.task == "bio":
        return h @ a["cls_w"] + a["cls_b"]
    if params.task == "rop":
        h = np.vstack([a["aux_emb"][None, :], h])
        return global_pointer_scores(h, params)[0]
    return global_pointer_scores(h, params)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _log1p_sumexp(v: np.ndarray) -> float:
    """log(1 + sum(exp(v))), stable, 0.0 for an empty v."""
    if v.size == 0:
        return 0.0
    m = max(float(v.max()), 0.0)
    return m + np.log(np.exp(-m) + np.exp(v - m).sum())


def grid_loss(scores: np.ndarray, grid_labels: np.ndarray) -> float:
    """Class-imbalance multilabel loss, summed over relation types.

    Per type: log(1 + sum_neg e^s) + log(1 + sum_pos e^-s). Saturates to 0
    once positives score >> 0 and negatives << 0; robust to grids with at
    most n positive cells out of n^2.
    """
    loss, _ = _grid_loss_grad(scores, grid_labels, want_grad=False)
    return loss


def _grid_loss_grad(scores, grid_labels, want_grad=True):
    if scores.shape != grid_labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {grid_labels.shape}")
    total = 0.0
    ds = np.zeros_like(scores) if want_grad else None
    for t in range(scores.shape[0]):
        s = scores[t]
        pos = grid_labels[t].astype(bool)
        neg = ~pos
        lse_n = _log1p_sumexp(s[neg])
        lse_p = _log1p_sumexp(-s[pos])
        total += lse_n + lse_p
        if want_grad:
            dst = ds[t]
            dst[neg] = np.exp(s[neg] - lse_n)
            dst[pos] = -np.exp(-s[pos] - lse_p)
    return total, ds


def _softmax_ce_grad(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy over rows; returns (loss, dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sm = ez / ez.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -float(np.mean(z[rows, targets] - np.log(ez.sum(axis=1))))
    d = sm
    d[rows, targets] -= 1.0
    return loss, d / n


# ---------------------------------------------------------------------------
# Task instances and the full forward/backward
# ---------------------------------------------------------------------------


@dataclass
class TaskInstance:
    """One document prepared for one task: features, order, and targets.

    ``target`` is (T, n, n) bool for ner/el, (n+1, n+1) bool for rop, and a
    (n,) int tag-id vector for bio. Grid targets are in word-index space,
    matching the score grids.
    """

    features: DocFeatures
    order: InputOrder
    target: np.ndarray


def make_instance(
    doc: Document,
    order: InputOrder,
    task: str,
    params_config: EncoderConfig,
    features: DocFeatures | None = None,
) -> TaskInstance:
    feats = features if features is not None else featurize(doc, params_config)
    if task == "ner":
        target = labels_mod.ner_grids(doc)
    elif task == "el":
        target = labels_mod.el_grid(doc)[None, :, :]
    elif task == "rop":
        if doc.gold_order is None:
            raise ValueError(f"doc {doc.id} has no gold order; cannot build rop target")
        target = labels_mod.rop_grid(doc, InputOrder(doc.gold_order))[None, :, :]
    elif task == "bio":
        tag_of = {t: i for i, t in enumerate(labels_mod.bio_tag_names(doc.entity_types))}
        tags = labels_mod.bio_encode(doc, order)
        target = np.zeros(doc.n_words, dtype=np.int64)
        for pos, tag in enumerate(tags):
            target[order.perm[pos]] = tag_of[tag]
    else:
        raise ValueError(f"unknown task {task!r}")
    return TaskInstance(features=feats, order=order, target=target)


def _draw_masks(shape, k, keep_prob, rng):
    return (rng.random((k,) + shape) < keep_prob).astype(float)


def task_loss_and_grad(
    params: ModelParams,
    instances: Sequence[TaskInstance],
    *,
    train_mode: bool = False,
    rng=None,
):
    """Mean loss over instances and its gradient w.r.t. every parameter.

    With multi-dropout (train_mode, dropout_rate > 0, K heads) the loss is
    the mean over K dropout-masked copies of the head input; the head
    weights are shared across copies. Masks come from ``rng``, so a caller
    that reseeds identically gets an identical loss surface, which is what
    the finite-difference checks rely on.
    """
    return _run_batch(params, instances, train_mode, rng, want_grad=True)


def task_loss(params, instances, *, train_mode=False, rng=None) -> float:
    loss, _ = _run_batch(params, instances, train_mode, rng, want_grad=False)
    return loss


def _run_batch(params, instances, train_mode, rng, want_grad):
    cfg = params.config
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()} if want_grad else None
    total = 0.0
    use_masks = train_mode and cfg.dropout_rate > 0.0
    if use_masks and rng is None:
        raise ValueError("train_mode with dropout requires an rng")
    # Divergence shows up as inf/nan loss and is reported via the exception;
    # the intermediate overflow warnings are just noise on the way there.
    with np.errstate(over="ignore", invalid="ignore"):
        for inst in instances:
            n_rows = len(inst.order.perm) + (1 if params.task == "rop" else 0)
            masks = (
                _draw_masks((n_rows, cfg.hidden_dim), cfg.multi_dropout_k, 1.0 - cfg.dropout_rate, rng)
                if use_masks
                else None
            )
            total += _instance_run(params, inst, masks, grads)
    scale = 1.0 / max(1, len(instances))
    if want_grad:
        for g in grads.values():
            g *= scale
    loss = total * scale
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss}")
    return loss, grads


def _instance_run(params, inst, masks, grads):
    cfg = params.config
    a = params.arrays
    h, (acts, p1) = _encode_cached(inst.features, inst.order, params)
    task = params.task
    if task == "rop":
        h_head = np.vstack([a["aux_emb"][None, :], h])
    else:
        h_head = h

    keep = 1.0 - cfg.dropout_rate
    copies = (
        [(h_head * m / keep, m / keep) for m in masks]
        if masks is not None
        else [(h_head, None)]
    )
    k_copies = len(copies)

    loss = 0.0
    dh_head = np.zeros_like(h_head) if grads is not None else None
    for hc, mscale in copies:
        if task == "bio":
            logits = hc @ a["cls_w"] + a["cls_b"]
            li, dlogits = _softmax_ce_grad(logits, inst.target)
            loss += li / k_copies
            if grads is None:
                continue
            dlogits /= k_copies
            grads["cls_w"] += hc.T @ dlogits
            grads["cls_b"] += dlogits.sum(axis=0)
            dhc = dlogits @ a["cls_w"].T
        else:
            d = cfg.hidden_dim
            scores = np.empty((params.n_relations,) + (hc.shape[0],) * 2)
            qs, ks = [], []
            for t in range(params.n_relations):
                q = hc @ a[f"q_w{t}"] + a[f"q_b{t}"]
                k = hc @ a[f"k_w{t}"] + a[f"k_b{t}"]
                qs.append(q)
                ks.append(k)
                scores[t] = (q @ k.T) / np.sqrt(d)
            li, dscores = _grid_loss_grad(scores, inst.target, want_grad=grads is not None)
            loss += li / k_copies
            if grads is None:
                continue
            dhc = np.zeros_like(hc)
            for t in range(params.n_relations):
                ds = dscores[t] / (np.sqrt(d) * k_copies)
                dq = ds @ ks[t]
                dk = ds.T @ qs[t]
                grads[f"q_w{t}"] += hc.T @ dq
                grads[f"q_b{t}"] += dq.sum(axis=0)
                grads[f"k_w{t}"] += hc.T @ dk
                grads[f"k_b{t}"] += dk.sum(axis=0)
                dhc += dq @ a[f"q_w{t}"].T + dk @ a[f"k_w{t}"].T
        dh_head += dhc * mscale if mscale is not None else dhc

    if grads is None:
        return loss

    if task == "rop":
        grads["aux_emb"] += dh_head[0]
        dh = dh_head[1:]
    else:
        dh = dh_head

    # h = mlp_out (+ p1 when positional_residual); the residual feeds the
    # 1D tables directly.
    dp1 = dh.copy() if (cfg.positional_residual and p1 is not None) else None
    da = dh
    for l in reversed(range(cfg.mlp_layers)):
        out_l = acts[l + 1]
        dz = da * (1.0 - out_l * out_l)
        grads[f"enc_w{l}"] += acts[l].T @ dz
        grads[f"enc_b{l}"] += dz.sum(axis=0)
        da = dz @ a[f"enc_w{l}"].T
    dx = da
    np.add.at(grads["tok_emb"], inst.features.ids, dx)
    grads["pos2d_w"] += inst.features.phi.T @ dx
    if p1 is not None:
        d_all = dx + dp1 if dp1 is not None else dx
        ranks = _rank_indices(inst.features, inst.order)
        if cfg.use_1d_position == "global":
            np.add.at(grads["pos1d"], ranks["global"], d_all)
        else:
            np.add.at(grads["pos1d_seg"], ranks["seg"], d_all)
            np.add.at(grads["pos1d_word"], ranks["word"], d_all)
    return loss


# ---------------------------------------------------------------------------
# Parameter vector utilities (finite-difference checks, optimizers)
# ---------------------------------------------------------------------------


def params_to_vector(params: ModelParams) -> np.ndarray:
    names = sorted(params.arrays)
    return np.concatenate([params.arrays[n].ravel() for n in names])


def vector_to_params(params: ModelParams, vec: np.ndarray) -> ModelParams:
    names = sorted(params.arrays)
    out = {}
    i = 0
    for n in names:
        shape = params.arrays[n].shape
        size = params.arrays[n].size
        out[n] = vec[i : i + size].reshape(shape).copy()
        i += size
    if i != vec.size:
        raise ValueError(f"vector has {vec.size} entries, params need {i}")
    return ModelParams(params.config, params.task, params.entity_types, out)


def grads_to_vector(params: ModelParams, grads: Mapping[str, np.ndarray]) -> np.ndarray:
    names = sorted(params.arrays)
    return np.concatenate([grads[n].ravel() for n in names])


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------
# magic "TPPCKPT1", then a little-endian uint64 header length, then a
# canonical JSON header (config, task, entity types, array table), then the
# raw row-major float64 array payloads in header order. Loading and saving
# again must reproduce the file byte for byte.


def save_checkpoint(params: ModelParams, path: str) -> None:
    names = sorted(params.arrays)
    header = {
        "config": params.config.to_record(),
        "task": params.task,
        "entity_types": list(params.entity_types),
        "seed": params.config.seed,
        "arrays": [{"name": n, "shape": list(params.arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
            arrays[spec["name"]] = data.astype(np.float64).copy()
        trailing = f.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after arrays")
    config = EncoderConfig.from_record(header["config"])
    return ModelParams(config, header["task"], tuple(header["entity_types"]), arrays)
