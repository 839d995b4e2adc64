"""Mini-batch gradient descent with linear warmup.

Plain first-order updates keep the trainer dependency-free and exactly
reproducible: given (seed, config, corpus, hyper) the whole trajectory is
deterministic, including which documents get shuffled input orders.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Document, InputOrder, ocr_order
from .datagen import shuffle_order
from .scorer import (
    EncoderConfig,
    ModelParams,
    featurize,
    init_params,
    make_instance,
    task_loss_and_grad,
)


@dataclass(frozen=True)
class Hyper:
    lr: float = 1e-3
    steps: int = 1000
    batch_size: int = 8
    warmup_fraction: float = 0.01
    weight_decay: float = 1e-5
    shuffle_proportion: float = 0.0
    # Optional global gradient-norm cap. Off by default; the pair-scoring
    # loss concentrates its gradient on a handful of cells, and with a
    # constant learning rate one hard batch late in training can otherwise
    # throw away an almost-converged fit.
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 0 or self.batch_size < 1:
            raise ValueError(f"bad hyperparameters: {self}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
        if not 0.0 <= self.shuffle_proportion <= 1.0:
            raise ValueError("shuffle_proportion must be in [0, 1]")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be positive when set")


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    def to_record(self) -> dict:
        return {
            "losses": self.losses,
            "lrs": self.lrs,
            "aborted": self.aborted,
            "message": self.message,
        }


def train(
    docs: Sequence[Document],
    task: str,
    config: EncoderConfig,
    hyper: Hyper,
) -> tuple[ModelParams, TrainLog]:
    """Train a model for one task on a document list.

    Each epoch a fraction ``hyper.shuffle_proportion`` of documents is
    presented under a random segment-shuffled input order instead of OCR
    order; an order-free config is provably unaffected, which is the whole
    trick. Divergence (non-finite loss) aborts and returns the parameters
    from before the poisoning update.
    """
    if not docs:
        raise ValueError("empty training corpus")
    types = docs[0].entity_types
    for d in docs:
        if d.entity_types != types:
            raise ValueError(f"doc {d.id} has a different entity type registry")
    params = init_params(config, task, types)
    log = TrainLog()
    if hyper.steps == 0:
        return params, log

    feats = [featurize(d, config) for d in docs]
    base_orders = [ocr_order(d) for d in docs]
    # Word-space grid targets never depend on the input order, so cache them.
    static_target = task in ("ner", "el", "rop")
    cached = (
        [make_instance(d, base_orders[i], task, config, feats[i]) for i, d in enumerate(docs)]
        if static_target
        else None
    )

    batch_rng, shuf_rng, drop_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    warmup_steps = max(1, int(round(hyper.steps * hyper.warmup_fraction)))
    step = 0
    snapshot = params.copy()
    while step < hyper.steps:
        epoch_docs = batch_rng.permutation(len(docs))
        orders: dict[int, InputOrder] = {}
        for i in range(len(docs)):
            if shuf_rng.random() < hyper.shuffle_proportion:
                orders[i] = shuffle_order(docs[i], int(shuf_rng.integers(2**31)))
            else:
                orders[i] = base_orders[i]
        for lo in range(0, len(epoch_docs), hyper.batch_size):
            if step >= hyper.steps:
                break
            batch = epoch_docs[lo : lo + hyper.batch_size]
            instances = []
            for i in batch:
                if static_target:
                    inst = cached[i]
                    if orders[i] is not base_orders[i]:
                        inst = type(inst)(inst.features, orders[i], inst.target)
                else:
                    inst = make_instance(docs[i], orders[i], task, config, feats[i])
                instances.append(inst)
            try:
                loss, grads = task_loss_and_grad(
                    params, instances, train_mode=True, rng=drop_rng
                )
            except FloatingPointError as exc:
                log.aborted = True
                log.message = f"aborted at step {step}: {exc}"
                return snapshot, log
            if hyper.max_grad_norm is not None:
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > hyper.max_grad_norm:
                    scale = hyper.max_grad_norm / norm
                    for g in grads.values():
                        g *= scale
            lr = hyper.lr * min(1.0, (step + 1) / warmup_steps)
            snapshot = params.copy()
            for name, arr in params.arrays.items():
                arr -= lr * (grads[name] + hyper.weight_decay * arr)
            log.losses.append(loss)
            log.lrs.append(lr)
            step += 1
    return params, log
