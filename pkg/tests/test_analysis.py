import io
import math
from collections import Counter

import numpy as np
import pytest

from glorepp.analysis import (
    auto_label,
    cosine_similarity,
    format_neighbors,
    label_purity,
    labeled_embeddings,
    nearest_neighbors,
    write_labeled,
)
from glorepp.encoder import EmbeddingTable, load_embeddings
from glorepp.relgraph import CoocCounts, normalize


def test_cosine_examples():
    assert cosine_similarity([1, 2], [1, 2]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(math.sqrt(0.5), abs=1e-4)
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 0])


def test_cosine_scaling():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.normal(size=5)
        c = rng.uniform(0.01, 100)
        assert abs(cosine_similarity(a, c * a) - 1.0) <= 1e-12
        assert abs(cosine_similarity(a, -c * a) + 1.0) <= 1e-12


def test_neighbors_exclusion_and_short_table():
    t = EmbeddingTable(["q", "x"], np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert [r for r, _ in nearest_neighbors("q", t.vectors[0], t, k=5)] == ["x"]
    t = EmbeddingTable(["a", "b", "c"], np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    got = nearest_neighbors("q", np.array([1.0, 0.1]), t, k=10)
    assert [r for r, _ in got] == ["a", "c", "b"]
    with pytest.raises(ValueError):
        nearest_neighbors("q", np.ones(2), EmbeddingTable([], np.zeros((0, 2))))


def test_neighbors_match_full_sort():
    rng = np.random.default_rng(1)
    for trial in range(30):
        n = int(rng.integers(2, 1000)) if trial % 3 == 0 else 20
        rels = [f"<r{i:04d}>" for i in range(n)]
        vecs = np.round(rng.normal(size=(n, 3)), 1)  # rounding creates ties
        vecs[np.all(vecs == 0, axis=1)] = 1.0
        table = EmbeddingTable(rels, vecs)
        q = rng.normal(size=3)
        oracle = sorted(((r, cosine_similarity(q, v)) for r, v in zip(rels, vecs) if r != rels[0]),
                        key=lambda rs: (-rs[1], rs[0]))[:5]
        got = nearest_neighbors(rels[0], q, table, k=5)
        assert [r for r, _ in got] == [r for r, _ in oracle]
        np.testing.assert_allclose([s for _, s in got], [s for _, s in oracle], atol=1e-12)


def _graph(rows):
    pairs = Counter({(t, r): c for t, row in rows.items() for r, c in row.items()})
    return normalize(CoocCounts(pairs, Counter({t: sum(row.values()) for t, row in rows.items()})))


def test_auto_label_rule():
    g = _graph({"<f>": {"founder": 2468, "named_after": 305}, "<h>": {"a": 1, "b": 1}, "<o>": {"a": 3}})
    labels = auto_label(g)
    assert labels == {"<f>": "founder", "<h>": None, "<o>": "a"}


def test_label_purity_and_labeled_export():
    g = _graph({"<a1>": {"x": 9}, "<a2>": {"x": 8}, "<b1>": {"y": 7}, "<b2>": {"y": 2}, "<n>": {"x": 1, "y": 1}})
    table = EmbeddingTable(g.textual_vocab, np.array([[1, 0.1], [1, 0.2], [0.1, 1], [0.2, 1], [1, 1]]))
    labels = auto_label(g)
    assert label_purity(table, labels, k=1) == 1.0
    rows = labeled_embeddings(table, g, min_count=5)
    assert [r.relation for r in rows] == ["<a1>", "<a2>", "<b1>"]
    assert rows[0].label == "x" and rows[0].dominant_weight == 1.0
    buf = io.StringIO()
    write_labeled(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "#relation\tlabel\tz"
    back = load_embeddings(lines)
    np.testing.assert_array_equal(back.vectors, table.vectors[:3])


def test_neighbor_report_format():
    text = format_neighbors([("<a>", 0.98765), ("<b>", 0.5)])
    assert text.splitlines() == ["#rank\tsimilarity\trelation", "1\t0.9877\t<a>", "2\t0.5000\t<b>"]
