"""Turn score grids into entities, links, or a global reading order.

All decoders are pure functions of the grids they receive and are agnostic
to whether the grid is indexed by word id or by input position; outputs use
the same index space as the input grid. The model pipeline in this package
produces word-indexed grids, so decoded paths are word indices directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Document, Entity, InputOrder, ocr_order
from .labels import bio_decode, bio_tag_names
from .scorer import DocFeatures, ModelParams, score_document


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.0
    max_entities: int = 100
    beam_size: int = 8

    def __post_init__(self):
        if self.max_entities < 1:
            raise ValueError("max_entities must be >= 1")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")


@dataclass(frozen=True)
class DecodedEntity:
    type_id: int
    word_indices: tuple[int, ...]
    confidence: float

    def to_entity(self) -> Entity:
        return Entity(self.type_id, self.word_indices)


def ner_decode(scores: np.ndarray, config: DecodeConfig = DecodeConfig()) -> list[DecodedEntity]:
    """Greedy token-path extraction from per-type score grids (T, n, n).

    Per type: keep pairs scoring above the threshold; deduplicate so each
    token keeps at most its best outgoing and best incoming edge (ties go
    to the lower end index, then the lower begin index); follow successor
    pointers from tokens that have an out-edge but no in-edge; a revisit of
    the current path stops the walk, and leftover pure cycles are emitted
    starting from their lowest-index token. Above-threshold diagonal cells
    not absorbed into any path become singleton entities. Finally, entities
    across all types are ranked by mean edge score and capped at
    ``max_entities``.
    """
    if scores.ndim != 3 or scores.shape[1] != scores.shape[2]:
        raise ValueError(f"expected (types, n, n) scores, got {scores.shape}")
    out: list[DecodedEntity] = []
    n = scores.shape[1]
    for t in range(scores.shape[0]):
        s = scores[t]
        diag = np.diag(s).copy()
        off = s.copy()
        np.fill_diagonal(off, -np.inf)
        off[off <= config.threshold] = -np.inf

        # Best outgoing edge per begin token; argmax takes the first (lowest
        # end index) on ties.
        best_end = off.argmax(axis=1)
        begins = np.flatnonzero(np.isfinite(off[np.arange(n), best_end]))
        # Best incoming edge per end token, lowest begin on ties.
        succ: dict[int, int] = {}
        best_in: dict[int, tuple[float, int]] = {}
        for i in begins:
            j = int(best_end[i])
            sc = float(off[i, j])
            cur = best_in.get(j)
            if cur is None or sc > cur[0]:
                best_in[j] = (sc, int(i))
        for j, (_, i) in best_in.items():
            succ[i] = j
        has_in = set(best_in)

        absorbed: set[int] = set()
        paths: list[list[int]] = []

        def walk(start: int) -> None:
            path = [start]
            seen = {start}
            cur = start
            while cur in succ:
                nxt = succ[cur]
                if nxt in seen:
                    break
                path.append(nxt)
                seen.add(nxt)
                cur = nxt
            paths.append(path)
            absorbed.update(path)

        for start in sorted(set(succ) - has_in):
            walk(start)
        # Whatever still has an out-edge now sits on a pure cycle.
        while True:
            rest = sorted(set(succ) - absorbed)
            if not rest:
                break
            walk(rest[0])

        for path in paths:
            edge_scores = [s[a, b] for a, b in zip(path, path[1:])]
            out.append(DecodedEntity(t, tuple(path), float(np.mean(edge_scores))))
        for i in np.flatnonzero(diag > config.threshold):
            if int(i) not in absorbed:
                out.append(DecodedEntity(t, (int(i),), float(diag[i])))

    out.sort(key=lambda e: (-e.confidence, e.type_id, e.word_indices))
    out = out[: config.max_entities]
    out.sort(key=lambda e: (e.type_id, e.word_indices))
    return out


def el_decode(scores: np.ndarray, entities: Sequence[Entity]) -> list[tuple[int, int]]:
    """Mean-logit linking: entity A links to B iff the mean score over all
    (token of A, token of B) pairs is strictly positive. Returns index pairs
    into ``entities``."""
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"expected one (n, n) grid, got {scores.shape}")
    links: list[tuple[int, int]] = []
    for ai, a in enumerate(entities):
        rows = np.asarray(a.word_indices)
        for bi, b in enumerate(entities):
            if ai == bi:
                continue
            mean = float(scores[np.ix_(rows, np.asarray(b.word_indices))].mean())
            if mean > 0.0:
                links.append((ai, bi))
    return links


def rop_decode(scores: np.ndarray, config: DecodeConfig = DecodeConfig()) -> tuple[int, ...]:
    """Beam search for the best full path from the auxiliary start node.

    ``scores`` is (n+1, n+1) with node 0 the start and node i+1 token i.
    Partial paths are scored by the sum of log-sigmoid edge logits; only
    unvisited tokens extend a path, so the result is always a permutation
    of all n tokens. ``beam_size`` 1 is plain greedy successor selection.
    """
    m = scores.shape[0]
    if scores.ndim != 2 or scores.shape[1] != m:
        raise ValueError(f"expected a square grid, got {scores.shape}")
    n = m - 1
    if n == 0:
        return ()
    logsig = -np.logaddexp(0.0, -scores)

    # beams: (score, last node, visited bool row, path)
    beams = [(0.0, 0, np.zeros(m, dtype=bool), [])]
    beams[0][2][0] = True
    for _ in range(n):
        cand_scores = []
        cand_meta = []
        for bi, (sc, last, visited, _) in enumerate(beams):
            ext = logsig[last].copy()
            ext[visited] = -np.inf
            cand_scores.append(sc + ext)
            cand_meta.append(bi)
        flat = np.concatenate(cand_scores)
        width = min(config.beam_size, int(np.isfinite(flat).sum()))
        # Stable pick: score descending, then beam index, then node index.
        top = np.lexsort((np.tile(np.arange(m), len(beams)), -flat))[:width]
        new_beams = []
        for pos in top:
            bi, node = divmod(int(pos), m)
            sc, last, visited, path = beams[bi]
            nv = visited.copy()
            nv[node] = True
            new_beams.append((float(flat[pos]), node, nv, path + [node]))
        beams = new_beams
    best = max(beams, key=lambda b: b[0])
    return tuple(v - 1 for v in best[3])


def reorder(
    doc: Document,
    rop_params: ModelParams,
    config: DecodeConfig = DecodeConfig(),
    features: DocFeatures | None = None,
) -> InputOrder:
    """Predicted reading order for a document, as an input order.

    Encodes under OCR order (harmless for order-free configs), scores the
    (n+1)-node grid, and beam-decodes a full permutation. The result feeds
    ``apply_order`` or any downstream sequence-labeling pipeline.
    """
    if rop_params.task != "rop":
        raise ValueError(f"reorder needs rop params, got task {rop_params.task!r}")
    grid = score_document(doc, ocr_order(doc), rop_params, features=features)
    return InputOrder(rop_decode(grid, config))


# ---------------------------------------------------------------------------
# Per-document prediction records (the decoded-output file format)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    entities: tuple[DecodedEntity, ...] | None = None
    links: tuple[tuple[int, int], ...] | None = None
    predicted_order: tuple[int, ...] | None = None

    def to_record(self) -> dict:
        rec: dict = {"id": self.doc_id}
        if self.entities is not None:
            rec["entities"] = [
                {
                    "type": e.type_id,
                    "word_indices": list(e.word_indices),
                    "confidence": e.confidence,
                }
                for e in self.entities
            ]
        if self.links is not None:
            rec["links"] = [list(l) for l in self.links]
        if self.predicted_order is not None:
            rec["predicted_order"] = list(self.predicted_order)
        return rec

    @staticmethod
    def from_record(rec: Mapping) -> "Prediction":
        entities = None
        if "entities" in rec:
            entities = tuple(
                DecodedEntity(
                    int(e["type"]), tuple(int(i) for i in e["word_indices"]),
                    float(e.get("confidence", 0.0)),
                )
                for e in rec["entities"]
            )
        links = (
            tuple((int(a), int(b)) for a, b in rec["links"]) if "links" in rec else None
        )
        order = (
            tuple(int(i) for i in rec["predicted_order"])
            if "predicted_order" in rec
            else None
        )
        return Prediction(str(rec["id"]), entities, links, order)


def decode_document(
    doc: Document,
    params: ModelParams,
    config: DecodeConfig = DecodeConfig(),
    order: InputOrder | None = None,
    features: DocFeatures | None = None,
) -> Prediction:
    """Run the task-appropriate decoder for one document.

    ``order`` defaults to the document's stored input order if present
    (e.g. written by a reordering pre-process), else OCR order. For the el
    task the grid is aggregated over the document's gold entities, the
    standard setting for linking evaluation.
    """
    if order is None:
        order = (
            InputOrder(doc.input_order) if doc.input_order is not None else ocr_order(doc)
        )
    output = score_document(doc, order, params, features=features)
    if params.task == "ner":
        return Prediction(doc.id, entities=tuple(ner_decode(output, config)))
    if params.task == "el":
        return Prediction(doc.id, links=tuple(el_decode(output[0], doc.entities)))
    if params.task == "rop":
        return Prediction(doc.id, predicted_order=rop_decode(output, config))
    # bio: argmax tags along the input order, then span extraction.
    tag_list = bio_tag_names(params.entity_types)
    tag_ids = output.argmax(axis=1)
    tags = [tag_list[tag_ids[w]] for w in order.perm]
    ents = bio_decode(tags, order, params.entity_types)
    return Prediction(
        doc.id,
        entities=tuple(DecodedEntity(e.type_id, e.word_indices, 0.0) for e in ents),
    )
