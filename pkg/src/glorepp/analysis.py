"""Nearest-neighbour inspection and majority-label export of relation embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

from .encoder import EmbeddingTable
from .relgraph import RelationGraph

__all__ = [
    "LabeledEmbedding",
    "cosine_similarity",
    "nearest_neighbors",
    "auto_label",
    "label_purity",
    "labeled_embeddings",
    "write_labeled",
    "format_neighbors",
]


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def nearest_neighbors(query: str, query_vector, table: EmbeddingTable, k: int = 5) -> list[tuple[str, float]]:
    """Top-``k`` table entries by cosine similarity, excluding the query string itself.

    Ties on similarity are broken by the rendered relation string.
    """
    if len(table) == 0:
        raise ValueError("embedding table is empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vector, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("query vector is zero")
    norms = np.linalg.norm(table.vectors, axis=1)
    sims = (table.vectors @ q) / np.where(norms > 0, norms * qn, 1.0)
    sims = np.where(norms > 0, np.clip(sims, -1.0, 1.0), -np.inf)
    cands = [(rel, float(s)) for rel, s in zip(table.relations, sims)
             if rel != query and np.isfinite(s)]
    cands.sort(key=lambda rs: (-rs[1], rs[0]))
    return cands[:k]


def auto_label(graph: RelationGraph) -> dict[str, Optional[str]]:
    """KB relation covering strictly more than half of a row's weight, else ``None``."""
    labels = {}
    w = graph.weights
    for i, t in enumerate(graph.textual_vocab):
        lo, hi = w.indptr[i], w.indptr[i + 1]
        if hi == lo:
            labels[t] = None
            continue
        k = lo + int(np.argmax(w.data[lo:hi]))
        labels[t] = graph.kb_vocab[w.indices[k]] if w.data[k] > 0.5 else None
    return labels


def dominant_weights(graph: RelationGraph) -> dict[str, float]:
    w = graph.weights
    return {t: float(w.data[w.indptr[i]:w.indptr[i + 1]].max(initial=0.0))
            for i, t in enumerate(graph.textual_vocab)}


def label_purity(table: EmbeddingTable, labels: dict, k: int = 5) -> float:
    """Mean share of each labelled relation's ``k`` nearest labelled neighbours with the same label."""
    keep = [i for i, r in enumerate(table.relations) if labels.get(r)]
    if len(keep) < 2:
        raise ValueError("need at least two labelled relations")
    sub = EmbeddingTable([table.relations[i] for i in keep], table.vectors[keep])
    scores = []
    for rel, vec in zip(sub.relations, sub.vectors):
        nn = nearest_neighbors(rel, vec, sub, k)
        scores.append(np.mean([labels[n] == labels[rel] for n, _ in nn]))
    return float(np.mean(scores))


@dataclass
class LabeledEmbedding:
    relation: str
    z: np.ndarray
    label: Optional[str]
    dominant_weight: float


def labeled_embeddings(table: EmbeddingTable, graph: RelationGraph,
                       min_count: int = 5) -> list[LabeledEmbedding]:
    """Join embeddings with majority labels; rows with fewer than ``min_count``
    co-occurrences are left out."""
    labels = auto_label(graph)
    dom = dominant_weights(graph)
    totals = dict(zip(graph.textual_vocab, graph.row_totals()))
    out = []
    for rel, z in zip(table.relations, table.vectors):
        if rel not in labels or totals[rel] < min_count:
            continue
        out.append(LabeledEmbedding(rel, z, labels[rel], dom[rel]))
    return out


def write_labeled(rows: Sequence[LabeledEmbedding], out: TextIO) -> None:
    out.write("#relation\tlabel\tz\n")
    for row in rows:
        vec = " ".join(format(float(v), ".17g") for v in row.z)
        out.write(f"{row.relation}\t{row.label or ''}\t{vec}\n")


def format_neighbors(neighbors: Sequence[tuple[str, float]]) -> str:
    lines = ["#rank\tsimilarity\trelation"]
    lines += [f"{i}\t{s:.4f}\t{rel}" for i, (rel, s) in enumerate(neighbors, start=1)]
    return "\n".join(lines) + "\n"
