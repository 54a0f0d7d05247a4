"""Distant-supervision alignment and the textual/KB relation co-occurrence graph."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np
from scipy import sparse

from .deppath import is_symmetric, parse_relation, relation_length

__all__ = [
    "KbTriple",
    "KbStore",
    "CoocCounts",
    "FilterConfig",
    "RelationGraph",
    "GraphFormatError",
    "load_kb",
    "align_corpus",
    "apply_filters",
    "normalize",
    "split_train_validation",
    "save_graph",
    "load_graph",
]

log = logging.getLogger(__name__)

GRAPH_HEADER = "#textual\tkb\tcount\tweight"
KB_VOCAB_PREFIX = "#kb_vocab"
ROW_SUM_TOL = 1e-9


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True)
class KbTriple:
    subject: str
    relation: str
    object: str

    def __post_init__(self):
        if not (self.subject and self.relation and self.object):
            raise ValueError("KB triple fields must be non-empty")


@dataclass
class KbStore:
    triples: set = field(default_factory=set)
    relation_whitelist: Optional[frozenset] = None

    def __post_init__(self):
        self._by_pair: dict[tuple[str, str], list[str]] = {}
        for t in sorted(self.triples, key=lambda t: (t.subject, t.object, t.relation)):
            self._by_pair.setdefault((t.subject, t.object), []).append(t.relation)

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple) -> bool:
        if not isinstance(triple, KbTriple):
            triple = KbTriple(*triple)
        return triple in self.triples

    def relations_between(self, subject: str, obj: str) -> list[str]:
        """KB relations r with (subject, r, obj) in the store, sorted, whitelist applied."""
        rels = self._by_pair.get((subject, obj), [])
        if self.relation_whitelist is not None:
            rels = [r for r in rels if r in self.relation_whitelist]
        return rels

    def add(self, triple: KbTriple) -> None:
        if triple not in self.triples:
            self.triples.add(triple)
            rels = self._by_pair.setdefault((triple.subject, triple.object), [])
            rels.append(triple.relation)
            rels.sort()


def load_kb(lines: Iterable[str], whitelist: Optional[Iterable[str]] = None) -> KbStore:
    """Read ``subject<TAB>relation<TAB>object`` lines; duplicates collapse."""
    triples = set()
    bad = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3 or not all(cols):
            bad.append(lineno)
            continue
        triples.add(KbTriple(*cols))
    if bad:
        raise ValueError(f"malformed KB lines (need 3 non-empty columns): {bad}")
    wl = frozenset(whitelist) if whitelist is not None else None
    if wl is not None and not wl:
        raise ValueError("relation whitelist is enabled but empty")
    return KbStore(triples, wl)


@dataclass
class CoocCounts:
    """Sparse co-occurrence counts keyed by rendered textual relation."""

    pair_counts: Counter = field(default_factory=Counter)
    occurrence_counts: Counter = field(default_factory=Counter)
    skipped: int = 0

    def __add__(self, other: "CoocCounts") -> "CoocCounts":
        return CoocCounts(self.pair_counts + other.pair_counts,
                          self.occurrence_counts + other.occurrence_counts,
                          self.skipped + other.skipped)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoocCounts):
            return NotImplemented
        return (dict(self.pair_counts) == dict(other.pair_counts)
                and dict(self.occurrence_counts) == dict(other.occurrence_counts))

    def rows(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for (t, r), c in self.pair_counts.items():
            out.setdefault(t, {})[r] = c
        return out


def align_corpus(triples: Iterable[tuple], kb: KbStore) -> CoocCounts:
    """Count textual relation occurrences and their KB co-occurrences.

    Each ``(e1, t, e2, ...)`` adds one occurrence of ``t`` and one pair count
    for every KB relation ``r`` with ``(e1, r, e2)`` in ``kb``.
    """
    counts = CoocCounts()
    for triple in triples:
        e1, t, e2 = triple[0], triple[1], triple[2]
        if not isinstance(t, str):
            t = str(t)
        try:
            parse_relation(t)
        except ValueError:
            counts.skipped += 1
            continue
        counts.occurrence_counts[t] += 1
        for r in kb.relations_between(e1, e2):
            counts.pair_counts[(t, r)] += 1
    if counts.skipped:
        log.warning("skipped %d triples with unparseable relations", counts.skipped)
    return counts


@dataclass(frozen=True)
class FilterConfig:
    max_length: int = 10
    min_occurrences: int = 2
    drop_symmetric: bool = True
    whitelist: Optional[frozenset] = None


def apply_filters(counts: CoocCounts, config: FilterConfig = FilterConfig()) -> CoocCounts:
    keep = set()
    for t, n in counts.occurrence_counts.items():
        if n < config.min_occurrences:
            continue
        rel = parse_relation(t)
        if relation_length(rel) > config.max_length:
            continue
        if config.drop_symmetric and is_symmetric(rel):
            continue
        keep.add(t)
    wl = config.whitelist
    pairs = Counter({
        (t, r): c for (t, r), c in counts.pair_counts.items()
        if t in keep and (wl is None or r in wl)
    })
    occ = Counter({t: n for t, n in counts.occurrence_counts.items() if t in keep})
    return CoocCounts(pairs, occ, counts.skipped)


@dataclass
class RelationGraph:
    """Row-stochastic bipartite graph: textual relations x KB relations.

    ``counts`` holds the raw co-occurrence counts behind ``weights`` (same
    sparsity pattern).  Row order of ``textual_vocab`` is the matrix row order.
    """

    textual_vocab: list
    kb_vocab: list
    weights: sparse.csr_matrix
    counts: sparse.csr_matrix

    def __post_init__(self):
        self._row_index = {t: i for i, t in enumerate(self.textual_vocab)}
        self._kb_index = {r: j for j, r in enumerate(self.kb_vocab)}

    @property
    def n_rows(self) -> int:
        return len(self.textual_vocab)

    @property
    def n_edges(self) -> int:
        return int(self.weights.nnz)

    def row_index(self, t: str) -> int:
        return self._row_index[t]

    def kb_index(self, r: str) -> int:
        return self._kb_index[r]

    def row(self, i: int) -> dict[str, float]:
        lo, hi = self.weights.indptr[i], self.weights.indptr[i + 1]
        return {self.kb_vocab[j]: float(w)
                for j, w in zip(self.weights.indices[lo:hi], self.weights.data[lo:hi])}

    def dense_targets(self, rows=None) -> np.ndarray:
        if rows is None:
            return self.weights.toarray()
        return self.weights[np.asarray(rows, dtype=np.int64)].toarray()

    def row_totals(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel()

    def subgraph(self, rows) -> "RelationGraph":
        rows = np.asarray(sorted(rows), dtype=np.int64)
        return RelationGraph([self.textual_vocab[i] for i in rows], list(self.kb_vocab),
                             self.weights[rows].tocsr(), self.counts[rows].tocsr())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RelationGraph):
            return NotImplemented
        return (self.textual_vocab == other.textual_vocab
                and self.kb_vocab == other.kb_vocab
                and _csr_equal(self.weights, other.weights)
                and _csr_equal(self.counts, other.counts))


def _csr_equal(a: sparse.csr_matrix, b: sparse.csr_matrix) -> bool:
    a, b = a.tocsr(), b.tocsr()
    a.sort_indices()
    b.sort_indices()
    return (a.shape == b.shape and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices) and np.array_equal(a.data, b.data))


def _build(rows: dict[str, dict[str, int]], kb_vocab: list[str]) -> RelationGraph:
    textual = sorted(rows)
    kb_index = {r: j for j, r in enumerate(kb_vocab)}
    indptr, indices, cdata, wdata = [0], [], [], []
    for t in textual:
        items = sorted(rows[t].items(), key=lambda kv: kb_index[kv[0]])
        total = sum(c for _, c in items)
        for r, c in items:
            indices.append(kb_index[r])
            cdata.append(c)
            wdata.append(c / total)
        indptr.append(len(indices))
    shape = (len(textual), len(kb_vocab))
    weights = sparse.csr_matrix((np.array(wdata, dtype=np.float64), indices, indptr), shape=shape)
    counts = sparse.csr_matrix((np.array(cdata, dtype=np.int64), indices, indptr), shape=shape)
    return RelationGraph(textual, list(kb_vocab), weights, counts)


def normalize(counts: CoocCounts) -> RelationGraph:
    """Turn filtered counts into p(r | t); relations never matched in the KB are dropped."""
    rows = {t: row for t, row in counts.rows().items() if sum(row.values()) > 0}
    dropped = [t for t in counts.occurrence_counts if t not in rows]
    if dropped:
        log.info("dropped %d textual relations with no KB co-occurrence", len(dropped))
    kb_vocab = sorted({r for row in rows.values() for r in row})
    return _build(rows, kb_vocab)


def split_train_validation(graph: RelationGraph, fraction: float = 0.05,
                           seed: int = 0) -> tuple[RelationGraph, RelationGraph]:
    """Hold out ``ceil(fraction * rows)`` textual relations for validation."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n = graph.n_rows
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, graph has {n}")
    n_val = min(n - 1, math.ceil(fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    val_rows = perm[:n_val]
    train_rows = perm[n_val:]
    return graph.subgraph(train_rows), graph.subgraph(val_rows)


def save_graph(graph: RelationGraph, out: TextIO) -> None:
    out.write(GRAPH_HEADER + "\n")
    out.write("\t".join([KB_VOCAB_PREFIX, *graph.kb_vocab]) + "\n")
    w, c = graph.weights, graph.counts
    for i, t in enumerate(graph.textual_vocab):
        for k in range(w.indptr[i], w.indptr[i + 1]):
            r = graph.kb_vocab[w.indices[k]]
            out.write(f"{t}\t{r}\t{int(c.data[k])}\t{format(float(w.data[k]), '.17g')}\n")


def load_graph(lines: Iterable[str]) -> RelationGraph:
    """Inverse of :func:`save_graph`.  Rows must sum to one."""
    rows: dict[str, list[tuple[str, int, float]]] = {}
    order: list[str] = []
    kb = set()
    declared = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if line.startswith(KB_VOCAB_PREFIX):
            declared = [r for r in line.split("\t")[1:] if r]
            continue
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise GraphFormatError(f"line {lineno}: expected 4 columns, got {len(cols)}")
        t, r = cols[0], cols[1]
        try:
            cnt, wt = int(cols[2]), float(cols[3])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: bad count or weight") from None
        if not 0 < wt <= 1:
            raise GraphFormatError(f"line {lineno}: weight {wt} outside (0, 1]")
        if t not in rows:
            rows[t] = []
            order.append(t)
        elif order[-1] != t:
            raise GraphFormatError(f"line {lineno}: rows of {t!r} are not grouped")
        rows[t].append((r, cnt, wt))
        kb.add(r)
    for t in order:
        total = math.fsum(wt for _, _, wt in rows[t])
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise GraphFormatError(f"row {t!r} sums to {total!r}, not 1")
    if declared is not None:
        missing = kb - set(declared)
        if missing:
            raise GraphFormatError(f"KB relations missing from vocabulary line: {sorted(missing)}")
        kb_vocab = declared
    else:
        kb_vocab = sorted(kb)
    kb_index = {r: j for j, r in enumerate(kb_vocab)}
    indptr, indices, cdata, wdata = [0], [], [], []
    for t in order:
        for r, cnt, wt in sorted(rows[t], key=lambda e: kb_index[e[0]]):
            indices.append(kb_index[r])
            cdata.append(cnt)
            wdata.append(wt)
        indptr.append(len(indices))
    shape = (len(order), len(kb_vocab))
    return RelationGraph(
        order, kb_vocab,
        sparse.csr_matrix((np.array(wdata, dtype=np.float64), indices, indptr), shape=shape),
        sparse.csr_matrix((np.array(cdata, dtype=np.int64), indices, indptr), shape=shape),
    )
