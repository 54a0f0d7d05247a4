import io

import numpy as np
import pytest

from glorepp.downstream import (
    NA,
    Bag,
    KbcConfig,
    KbcDataset,
    KbcModel,
    embed_pair,
    ensemble_scores,
    evaluate_kbc,
    evaluate_re,
    format_kbc_table,
    init_kbc_model,
    kbc_ranks,
    load_bags,
    load_kbc_dataset,
    precision_at_n,
    rank_metrics,
    ranked_predictions,
    score_triple,
    train_kbc,
    write_bags,
)
from glorepp.encoder import EncoderConfig, RelationEncoder
from glorepp.synthetic import synthetic_kbc, synthetic_re
from oracles import kbc_rank_oracle, precision_oracle, tiny_graph

TINY = EncoderConfig(d_model=8, layer_count=1, head_count=2, ff_dim=8, z_dim=8)


def encoder():
    return RelationEncoder.create(tiny_graph(), TINY, seed=0)


# --- bag averaging and ensembles -------------------------------------------------

def test_embed_pair_means():
    m = encoder()
    rels = ["<-dobj> founded <nsubj>", "<nmod>", "<-appos> capital <nmod:of>"]
    np.testing.assert_array_equal(embed_pair(Bag("p", "a", "b", rels[:1]), m), m.encode(rels[0]))
    z = m.encode_many(rels)
    got = embed_pair(Bag("p", "a", "b", rels), m)
    oracle = [sum(z[i, d] for i in range(3)) / 3 for d in range(z.shape[1])]
    np.testing.assert_allclose(got, oracle, atol=1e-15)
    with pytest.raises(ValueError):
        embed_pair(Bag("p", "a", "b", [" ".join(["<a>"] * 12)]), m)


def test_embed_pair_opposite_vectors_cancel():
    class Stub:
        config = TINY

        @staticmethod
        def encode_many(rels):
            z = np.arange(1.0, 9.0)
            return np.stack([z, -z])

    np.testing.assert_array_equal(embed_pair(Bag("p", "a", "b", ["<a>", "<b>"]), Stub), 0.0)


def test_ensemble_examples():
    base, emb = np.array([0.8, 0.2]), np.array([0.2, 0.8])
    np.testing.assert_array_equal(ensemble_scores(base, emb, 0.0), base)
    np.testing.assert_array_equal(ensemble_scores(base, emb, 1.0), emb)
    np.testing.assert_allclose(ensemble_scores(base, emb, 0.5), [0.5, 0.5])
    with pytest.raises(ValueError):
        ensemble_scores(base, np.ones(3), 0.5)


def test_ensemble_alpha_zero_keeps_argmax():
    rng = np.random.default_rng(0)
    for _ in range(200):
        base, emb = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        assert np.argmax(ensemble_scores(base, emb, 0.0)) == np.argmax(base)


# --- precision at N ----------------------------------------------------------

def test_precision_examples():
    preds = [(f"p{i}", "r", 1.0 - i / 10) for i in range(10)]
    gold = {(f"p{i}", "r") for i in (0, 1, 2, 4, 6)}
    assert precision_at_n(preds, gold, [5, 10]) == {5: 0.8, 10: 0.5}
    top4 = preds[:4]
    assert precision_at_n(top4, {("p0", "r"), ("p1", "r"), ("p3", "r")}, [4]) == {4: 0.75}
    assert precision_at_n(top4, {(p, r) for p, r, _ in top4}, [1, 2, 4]) == {1: 1.0, 2: 1.0, 4: 1.0}


def test_precision_beyond_available(caplog):
    preds = [("a", "r", 0.9), ("b", "r", 0.1)]
    assert precision_at_n(preds, {("a", "r")}, [10]) == {10: 0.5}
    assert "only 2" in caplog.text


def test_precision_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 101))
        preds = [(f"p{rng.integers(20)}", f"r{rng.integers(4)}", float(rng.integers(0, 5)) / 4)
                 for _ in range(n)]
        gold = {(p, r) for p, r, _ in preds if rng.random() < 0.4}
        cutoffs = sorted({int(c) for c in rng.integers(1, n + 1, size=3)})
        assert precision_at_n(preds, gold, cutoffs) == precision_oracle(preds, gold, cutoffs)


def test_ranked_predictions_excludes_na():
    bags = [Bag("p1", "a", "b", ["<a>"]), Bag("p2", "c", "d", ["<a>"])]
    preds = ranked_predictions(bags, np.array([[0.9, 0.1], [0.2, 0.8]]), [NA, "r"])
    assert preds == [("p2", "r", 0.8), ("p1", "r", 0.1)]


def test_bag_file_round_trip():
    targets, tr, _ = synthetic_re(n_train=5, n_test=1, seed=0)
    buf = io.StringIO()
    write_bags(tr, targets, buf)
    t2, back = load_bags(buf.getvalue().splitlines())
    assert t2 == targets
    for a, b in zip(tr, back):
        assert (a.pair_id, a.relations, a.gold) == (b.pair_id, b.relations, b.gold)
        np.testing.assert_array_equal(a.base_scores, b.base_scores)
    with pytest.raises(ValueError):
        load_bags(["#relations\tNA,r", "p\ta\tb\tr\t<a>\t0.5"])


def test_evaluate_re_freezes_encoder():
    targets, tr, te = synthetic_re(n_train=60, n_test=40, seed=0)
    from glorepp.synthetic import pattern_graph
    g, _ = pattern_graph(30, 5, seed=0)
    m = RelationEncoder.create(g, TINY, seed=0)
    before = {k: v.copy() for k, v in m.params.items()}
    rep = evaluate_re(tr, te, targets, m, cutoffs=[10, 20], head_epochs=5)
    assert all(np.array_equal(before[k], m.params[k]) for k in before)
    assert 0.0 <= rep.alpha <= 1.0 and set(rep.base) == {10, 20}


# --- KB completion scoring ------------------------------------------------------

def _model(kind, d=2):
    ents, rels = ["a", "b", "c"], ["r"]
    p = {"entity": np.zeros((3, d))}
    if kind in ("distmult", "combined"):
        p["rel_dm"] = np.zeros((1, d))
    if kind in ("e", "combined"):
        p["rel_subj"] = np.zeros((1, d))
        p["rel_obj"] = np.zeros((1, d))
    return KbcModel(kind, ents, rels, p)


def test_distmult_hand_value_and_symmetry():
    m = _model("distmult")
    m.params["entity"][:] = [[1, 0], [1, 0], [0.3, -2]]
    m.params["rel_dm"][0] = [1, 1]
    assert score_triple(m, "a", "r", "b") == 1.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        m.params["entity"] = rng.normal(size=(3, 2))
        m.params["rel_dm"] = rng.normal(size=(1, 2))
        assert score_triple(m, "a", "r", "c") == score_triple(m, "c", "r", "a")
    with pytest.raises(KeyError):
        score_triple(m, "a", "r", "zzz")


def test_model_e_properties():
    m = _model("e")
    m.params["rel_subj"][0] = [1, 2]
    m.params["rel_obj"][0] = [3, 4]
    assert score_triple(m, "a", "r", "b") == 0.0
    rng = np.random.default_rng(1)
    for _ in range(20):
        m.params["entity"] = rng.normal(size=(3, 2))
        assert score_triple(m, "a", "r", "b") != score_triple(m, "b", "r", "a")
    m.params["rel_obj"][0] = m.params["rel_subj"][0]
    assert score_triple(m, "a", "r", "b") == score_triple(m, "b", "r", "a")


def test_object_scores_agree_with_score_triple():
    rng = np.random.default_rng(2)
    for kind in ("distmult", "e", "combined"):
        m = _model(kind, d=3)
        for k in m.params:
            m.params[k] = rng.normal(size=m.params[k].shape)
        got = m.object_scores("b", "r")
        ref = [score_triple(m, "b", "r", e) for e in m.entities]
        np.testing.assert_allclose(got, ref, atol=1e-12)


def test_rank_metric_hand_cases():
    mrr, _ = rank_metrics([1, 2, 4])
    assert abs(mrr - 58.33) <= 0.01
    assert rank_metrics([3, 15])[1] == 50.0
    assert rank_metrics([1]) == (100.0, 100.0)


def _random_dataset(rng, n_ent):
    ents = [f"e{i:02d}" for i in range(n_ent)]
    rels = ["r0", "r1", "r2"]
    facts = sorted({(ents[rng.integers(n_ent)], rels[rng.integers(3)], ents[rng.integers(n_ent)])
                    for _ in range(int(rng.integers(5, 150)))})
    k = max(1, min(100, len(facts) // 3))
    idx = rng.permutation(len(facts))
    test = [facts[i] for i in sorted(idx[:k])]
    train = [facts[i] for i in sorted(idx[k:])]
    mentions = {(a, b): ["<nmod>"] for a, _, b in facts if rng.random() < 0.3}
    return KbcDataset(ents, rels, train, test, mentions)


def test_kbc_ranks_match_brute_force():
    rng = np.random.default_rng(3)
    for trial in range(100):
        ds = _random_dataset(rng, int(rng.integers(3, 51)))
        kind = ("distmult", "e", "combined")[trial % 3]
        m = _model(kind, d=3)
        m = KbcModel(kind, ds.entities, ds.relations,
                     {k: np.round(rng.normal(size=(len(ds.entities) if k == "entity" else 3, 3)), 1)
                      for k in m.params})
        known = set(ds.train) | set(ds.test)
        oracle = [kbc_rank_oracle(lambda a, r, b: score_triple(m, a, r, b), ds.entities, known, e1, r, e2)
                  for e1, r, e2 in ds.test]
        assert kbc_ranks(m, ds) == oracle
        rep = evaluate_kbc(m, ds)
        flags = [ds.has_mentions(t) for t in ds.test]
        with_r = [r for r, f in zip(oracle, flags) if f]
        assert rep["overall"]["MRR"] == pytest.approx(100 * np.mean([1 / r for r in oracle]), abs=1e-9)
        assert rep["overall"]["HITS@10"] == pytest.approx(100 * np.mean([r <= 10 for r in oracle]), abs=1e-9)
        assert rep["with_mentions"]["n"] == len(with_r)
        if with_r:
            assert rep["with_mentions"]["MRR"] == pytest.approx(100 * np.mean([1 / r for r in with_r]), abs=1e-9)


def test_single_fact_learned():
    ds = KbcDataset(["a", "b"], ["r"], [("a", "r", "b")], [], {})
    m = train_kbc(ds, None, KbcConfig(dim=4, negatives=1, epochs=50, batch_size=1, seed=0))
    assert score_triple(m, "a", "r", "b") > score_triple(m, "a", "r", "a")


def test_kbc_frozen_encoder_and_kb_only_projection():
    ds = synthetic_kbc(n_entities=40, n_relations=4, facts_per_relation=10, seed=0)
    enc = encoder()
    before = {k: v.copy() for k, v in enc.params.items()}
    cfg = KbcConfig(dim=4, negatives=5, epochs=2, use_mentions=False, seed=1)
    kb_only = train_kbc(ds, enc, cfg)
    ref = init_kbc_model(ds, cfg, enc)
    np.testing.assert_array_equal(kb_only.params["proj_dm_w"], ref.params["proj_dm_w"])
    np.testing.assert_array_equal(kb_only.params["proj_dm_b"], ref.params["proj_dm_b"])
    assert kb_only.text_vocab == []
    emb = train_kbc(ds, enc, KbcConfig(dim=4, negatives=5, epochs=2, seed=1))
    assert not np.array_equal(emb.params["proj_dm_w"], ref.params["proj_dm_w"])
    assert all(np.array_equal(before[k], enc.params[k]) for k in before)
    again = train_kbc(ds, enc, KbcConfig(dim=4, negatives=5, epochs=2, seed=1))
    assert all(np.array_equal(emb.params[k], again.params[k]) for k in emb.params)


def test_kbc_dataset_validation():
    with pytest.raises(ValueError):
        KbcDataset(["a", "b"], ["r"], [("a", "r", "b")], [("a", "r", "b")])
    with pytest.raises(ValueError):
        load_kbc_dataset(["a\tr"], [], [])
    ds = load_kbc_dataset(["a\tr\tb"], ["b\tr\ta"], ["a\tb\t<nmod>"])
    assert ds.has_mentions(("a", "r", "b")) and not ds.has_mentions(("b", "r", "a"))
    with pytest.raises(ValueError):
        train_kbc(KbcDataset(["a"], ["r"], [], []), None)


def test_kbc_table_layout():
    rep = {k: {"MRR": 12.345, "HITS@10": 50.0, "n": 2} for k in ("overall", "with_mentions", "without_mentions")}
    text = format_kbc_table([("DistMult (KB only)", rep)])
    assert "With mentions" in text and "12.3" in text
