"""Grid-path extraction vs sequence labeling under shuffled inputs.

Trains two small models on the same disordered corpus: the pair-scoring
grid head (order-free config) and a per-token BIO classifier that uses 1D
position features. Evaluates both on ordered and segment-shuffled test
inputs. The grid model's predictions cannot change under shuffling; the
tagger's fall apart.

Runs a deliberately small configuration (a couple of minutes on a laptop);
the full-strength version of this comparison lives in the acceptance tests.
"""

import numpy as np

from tokenpath import (
    EncoderConfig,
    GenConfig,
    Hyper,
    entity_f1,
    gen_corpus,
    shuffle_order,
    train,
)
from tokenpath.decode import DecodeConfig, decode_document


def f1_under(docs, params, orders):
    pred, gold = [], []
    for doc, order in zip(docs, orders):
        p = decode_document(doc, params, DecodeConfig(), order=order)
        pred.extend(e.to_entity() for e in p.entities)
        gold.extend(doc.entities)
    return entity_f1(pred, gold).f1


def main():
    corpus = gen_corpus(GenConfig(
        doc_count=220, words_per_doc=(10, 30), entity_types=3,
        multi_row_prob=0.5, multi_column_prob=0.5, long_entity_prob=0.3,
        interleave_prob=0.5, val_fraction=0.0, test_fraction=60 / 220, seed=1,
    ))
    train_docs, test_docs = corpus.split("train"), corpus.split("test")

    grid_cfg = EncoderConfig(use_1d_position="none", use_2d_position="word",
                             dropout_rate=0.0, multi_dropout_k=1, seed=0)
    grid, _ = train(train_docs, "ner", grid_cfg,
                    Hyper(lr=0.06, steps=1500, batch_size=32,
                          warmup_fraction=0.1, weight_decay=1e-4))

    bio_cfg = EncoderConfig(use_1d_position="global", use_2d_position="word",
                            positional_residual=True, dropout_rate=0.0,
                            multi_dropout_k=1, seed=0)
    bio, _ = train(train_docs, "bio", bio_cfg,
                   Hyper(lr=0.3, steps=1500, batch_size=32,
                         warmup_fraction=0.1, weight_decay=1e-4))

    from tokenpath.core import ocr_order

    ordered = [ocr_order(d) for d in test_docs]
    shuffled = [shuffle_order(d, 1000 + i) for i, d in enumerate(test_docs)]

    print(f"{'model':<14} {'ordered F1':>11} {'shuffled F1':>12}")
    for name, params in (("grid paths", grid), ("bio tagging", bio)):
        a = f1_under(test_docs, params, ordered)
        b = f1_under(test_docs, params, shuffled)
        print(f"{name:<14} {a:>11.4f} {b:>12.4f}")


if __name__ == "__main__":
    main()
