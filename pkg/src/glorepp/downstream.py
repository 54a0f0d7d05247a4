"""Downstream use of frozen relation embeddings.

Relation extraction: average the embeddings of a bag's textual relations,
project them with a single trained layer, and mix the result with a base
extractor's scores.  KB completion: DistMult, model E, or both, where
textual mentions act as extra relation types whose vectors are an affine
projection of the frozen embedding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .encoder import RelationEncoder
from .numkit import Adam, Tensor, concat, stack

__all__ = [
    "NA",
    "Bag",
    "load_bags",
    "embed_pair",
    "ReHead",
    "train_re_head",
    "ensemble_scores",
    "ranked_predictions",
    "precision_at_n",
    "select_alpha",
    "evaluate_re",
    "KbcDataset",
    "KbcConfig",
    "KbcModel",
    "load_kbc_dataset",
    "score_triple",
    "train_kbc",
    "evaluate_kbc",
    "kbc_ranks",
    "rank_metrics",
    "format_kbc_table",
]

log = logging.getLogger(__name__)

NA = "NA"
DEFAULT_CUTOFFS = (100, 300, 500, 700, 900, 1000)


# ==========================================================================
# relation extraction


@dataclass
class Bag:
    pair_id: str
    entity1: str
    entity2: str
    relations: list
    gold: frozenset = frozenset()
    base_scores: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.relations:
            raise ValueError(f"bag {self.pair_id} has no contextual relations")


def load_bags(lines: Iterable[str]) -> tuple[list, list]:
    """Parse a bag TSV; returns (target relations, bags).

    The target relation order comes from a ``#relations<TAB>r1,r2,...`` line,
    which is required when any bag carries base scores.
    """
    targets: list = []
    bags = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if line.startswith("#relations"):
            targets = [r for r in line.split("\t", 1)[1].split(",") if r]
            continue
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (5, 6):
            raise ValueError(f"line {lineno}: expected 5 or 6 columns, got {len(cols)}")
        gold = frozenset(g for g in cols[3].split(",") if g)
        rels = [r for r in cols[4].split("||") if r]
        base = None
        if len(cols) == 6 and cols[5]:
            base = np.array([float(x) for x in cols[5].split(",")])
            if len(base) != len(targets):
                raise ValueError(f"line {lineno}: {len(base)} base scores for {len(targets)} relations")
        bags.append(Bag(cols[0], cols[1], cols[2], rels, gold, base))
    if not targets:
        targets = sorted({g for b in bags for g in b.gold} | {NA})
    return targets, bags


def write_bags(bags: Sequence[Bag], targets: Sequence[str], out) -> None:
    out.write("#relations\t" + ",".join(targets) + "\n")
    for b in bags:
        cols = [b.pair_id, b.entity1, b.entity2, ",".join(sorted(b.gold)), "||".join(b.relations)]
        if b.base_scores is not None:
            cols.append(",".join(format(float(x), ".17g") for x in b.base_scores))
        out.write("\t".join(cols) + "\n")


def embed_pair(bag: Bag, model: RelationEncoder) -> np.ndarray:
    """Mean embedding of the bag's encodable relations."""
    usable = [r for r in bag.relations if len(r.split(" ")) <= model.config.max_length]
    if not usable:
        raise ValueError(f"bag {bag.pair_id} has no encodable relations")
    z = model.encode_many(usable)
    return z.sum(axis=0) / len(usable)


@dataclass
class ReHead:
    weight: np.ndarray  # (z_dim, n_targets)
    bias: np.ndarray

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        """Independent sigmoid scores renormalized to a distribution per row."""
        s = 0.5 * (1.0 + np.tanh(0.5 * (x @ self.weight + self.bias)))
        return s / s.sum(axis=-1, keepdims=True)


def train_re_head(features: np.ndarray, labels: np.ndarray, seed: int = 0, epochs: int = 200,
                  lr: float = 0.01, batch_size: int = 64, l2: float = 1e-4) -> ReHead:
    """Single linear layer with multi-label sigmoid cross-entropy."""
    rng = np.random.default_rng(seed)
    z_dim, n_out = features.shape[1], labels.shape[1]
    bound = 1.0 / math.sqrt(z_dim)
    params = {"w": rng.uniform(-bound, bound, (z_dim, n_out)), "b": np.zeros(n_out)}
    opt = Adam(params, d_model=1, constant_lr=lr, beta2=0.999, eps=1e-8)
    for _ in range(epochs):
        order = rng.permutation(len(features))
        for lo in range(0, len(order), batch_size):
            idx = order[lo : lo + batch_size]
            w = Tensor(params["w"], requires_grad=True)
            b = Tensor(params["b"], requires_grad=True)
            logits = Tensor(features[idx]) @ w + b
            y = labels[idx]
            # [log(1 - sigmoid(x)), log sigmoid(x)] = log_softmax([0, x])
            logp = stack([Tensor(np.zeros(logits.shape)), logits], axis=-1).log_softmax(axis=-1)
            bce = -(logp[..., 1] * y + logp[..., 0] * (1.0 - y)).sum(axis=-1).mean()
            loss = bce + (w * w).sum() * l2
            loss.backward()
            opt.step({"w": w.grad, "b": b.grad})
    return ReHead(params["w"], params["b"])


def ensemble_scores(base, emb, alpha: float) -> np.ndarray:
    base = np.asarray(base, dtype=np.float64)
    emb = np.asarray(emb, dtype=np.float64)
    if base.shape != emb.shape:
        raise ValueError(f"score length mismatch: {base.shape} vs {emb.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return (1.0 - alpha) * base + alpha * emb


def ranked_predictions(bags: Sequence[Bag], scores: np.ndarray, targets: Sequence[str],
                       exclude: Sequence[str] = (NA,)) -> list[tuple[str, str, float]]:
    """Every (pair, relation, score) except excluded relations, globally ranked."""
    out = []
    for bag, row in zip(bags, scores):
        for j, rel in enumerate(targets):
            if rel in exclude:
                continue
            out.append((bag.pair_id, rel, float(row[j])))
    out.sort(key=lambda p: (-p[2], p[0], p[1]))
    return out


def precision_at_n(predictions: Sequence[tuple], gold: set, cutoffs: Sequence[int]) -> dict:
    """Fraction of the top-N predictions found in ``gold`` (a set of (pair, relation))."""
    ranked = sorted(predictions, key=lambda p: (-p[2], p[0], p[1]))
    hits = np.cumsum([1 if (p[0], p[1]) in gold else 0 for p in ranked])
    out = {}
    for n in cutoffs:
        if n < 1:
            raise ValueError("cutoffs must be >= 1")
        m = min(n, len(ranked))
        if m < n:
            log.warning("precision@%d computed over only %d predictions", n, m)
        out[n] = float(hits[m - 1]) / m if m else 0.0
    return out


def gold_facts(bags: Sequence[Bag]) -> set:
    return {(b.pair_id, g) for b in bags for g in b.gold if g != NA}


def select_alpha(bags: Sequence[Bag], base: np.ndarray, emb: np.ndarray, targets: Sequence[str],
                 cutoffs: Sequence[int], grid: Optional[Sequence[float]] = None) -> float:
    """Alpha maximizing precision at the middle cutoff; ties go to the mean over
    all cutoffs, then to the smaller alpha."""
    grid = np.round(np.linspace(0.0, 1.0, 21), 10) if grid is None else grid
    gold = gold_facts(bags)
    mid = sorted(cutoffs)[(len(cutoffs) - 1) // 2]
    best_key, best_alpha = None, 0.0
    for a in grid:
        scores = ensemble_scores(base, emb, float(a))
        prec = precision_at_n(ranked_predictions(bags, scores, targets), gold, cutoffs)
        key = (prec[mid], sum(prec.values()) / len(prec), -float(a))
        if best_key is None or key > best_key:
            best_key, best_alpha = key, float(a)
    return best_alpha


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, None)
    s = x.sum(axis=-1, keepdims=True)
    return np.where(s > 0, x / np.where(s > 0, s, 1.0), 1.0 / x.shape[-1])


@dataclass
class ReReport:
    alpha: float
    cutoffs: list
    base: dict
    embedding: dict
    ensemble: dict

    def rows(self) -> list[tuple[str, dict]]:
        return [("base", self.base), ("embedding", self.embedding), ("ensemble", self.ensemble)]


def evaluate_re(train_bags: Sequence[Bag], test_bags: Sequence[Bag], targets: Sequence[str],
                model: RelationEncoder, cutoffs: Sequence[int] = DEFAULT_CUTOFFS,
                validation_fraction: float = 0.2, seed: int = 0, head_epochs: int = 200) -> ReReport:
    """Train the projection head, tune alpha on held-out training bags, score the test bags."""
    if any(b.base_scores is None for b in list(train_bags) + list(test_bags)):
        raise ValueError("every bag needs base-model scores for the ensemble")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_bags))
    n_val = max(1, int(math.ceil(validation_fraction * len(train_bags))))
    val_idx, fit_idx = sorted(order[:n_val]), sorted(order[n_val:])
    col = {r: j for j, r in enumerate(targets)}

    def feats(bags):
        return np.stack([embed_pair(b, model) for b in bags])

    def multi_hot(bags):
        y = np.zeros((len(bags), len(targets)))
        for i, b in enumerate(bags):
            for g in (b.gold or {NA}):
                if g in col:
                    y[i, col[g]] = 1.0
        return y

    fit = [train_bags[i] for i in fit_idx]
    val = [train_bags[i] for i in val_idx]
    head = train_re_head(feats(fit), multi_hot(fit), seed=seed, epochs=head_epochs)

    val_emb = head.probabilities(feats(val))
    val_base = _normalize_rows(np.stack([b.base_scores for b in val]))
    alpha = select_alpha(val, val_base, val_emb, targets, cutoffs)

    test_emb = head.probabilities(feats(test_bags))
    test_base = _normalize_rows(np.stack([b.base_scores for b in test_bags]))
    gold = gold_facts(test_bags)

    def p_at(scores):
        return precision_at_n(ranked_predictions(test_bags, scores, targets), gold, cutoffs)

    return ReReport(alpha, list(cutoffs), p_at(test_base), p_at(test_emb),
                    p_at(ensemble_scores(test_base, test_emb, alpha)))


# ==========================================================================
# KB completion


@dataclass
class KbcDataset:
    entities: list
    relations: list
    train: list  # (e1, r, e2) tuples
    test: list
    mentions: dict = field(default_factory=dict)  # (e1, e2) -> list of rendered relations

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValueError(f"{len(overlap)} test triples also appear in training")
        for (a, b) in self.mentions:
            if a not in self.entity_index or b not in self.entity_index:
                raise ValueError(f"mention pair ({a}, {b}) uses an unknown entity")

    def has_mentions(self, triple) -> bool:
        return bool(self.mentions.get((triple[0], triple[2])))

    def textual_relations(self) -> list:
        return sorted({t for ts in self.mentions.values() for t in ts})


def load_kbc_dataset(train_lines: Iterable[str], test_lines: Iterable[str],
                     mention_lines: Iterable[str] = ()) -> KbcDataset:
    def triples(lines, what):
        out = []
        for lineno, raw in enumerate(lines, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise ValueError(f"{what} line {lineno}: expected 3 columns")
            out.append(tuple(cols))
        return out

    train = triples(train_lines, "train")
    test = triples(test_lines, "test")
    mentions: dict = {}
    for e1, e2, t in triples(mention_lines, "mention"):
        mentions.setdefault((e1, e2), []).append(t)
    entities = sorted({x for tr in train + test for x in (tr[0], tr[2])}
                      | {x for pair in mentions for x in pair})
    relations = sorted({tr[1] for tr in train + test})
    return KbcDataset(entities, relations, train, test, mentions)


@dataclass(frozen=True)
class KbcConfig:
    kind: str = "distmult"  # distmult | e | combined
    dim: int = 32
    negatives: int = 200
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.01
    l2: float = 1e-4
    use_mentions: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("distmult", "e", "combined"):
            raise ValueError(f"unknown KBC model kind {self.kind!r}")


@dataclass
class KbcModel:
    """Entity and relation vectors; textual relations reach them through ``proj_*``.

    ``text_z`` holds the frozen embedding of every textual relation in
    ``text_vocab``; it is never updated.
    """

    kind: str
    entities: list
    relations: list
    params: dict
    text_vocab: list = field(default_factory=list)
    text_z: Optional[np.ndarray] = None

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self.text_index = {t: i for i, t in enumerate(self.text_vocab)}

    @property
    def uses_distmult(self) -> bool:
        return self.kind in ("distmult", "combined")

    @property
    def uses_e(self) -> bool:
        return self.kind in ("e", "combined")

    def relation_vectors(self, r: str) -> dict:
        """Relation-side vectors for a KB relation id or a known textual relation."""
        p = self.params
        out = {}
        if r in self.relation_index:
            j = self.relation_index[r]
            if self.uses_distmult:
                out["dm"] = p["rel_dm"][j]
            if self.uses_e:
                out["subj"], out["obj"] = p["rel_subj"][j], p["rel_obj"][j]
            return out
        if r not in self.text_index:
            raise KeyError(f"unknown relation {r!r}")
        z = self.text_z[self.text_index[r]]
        d = p["entity"].shape[1]
        if self.uses_distmult:
            out["dm"] = z @ p["proj_dm_w"] + p["proj_dm_b"]
        if self.uses_e:
            pair = z @ p["proj_e_w"] + p["proj_e_b"]
            out["subj"], out["obj"] = pair[:d], pair[d:]
        return out

    def object_scores(self, e1: str, r: str) -> np.ndarray:
        """Score of ``(e1, r, e)`` for every entity ``e``."""
        ent = self.params["entity"]
        v1 = ent[self.entity_index[e1]]
        vecs = self.relation_vectors(r)
        scores = np.zeros(len(self.entities))
        if "dm" in vecs:
            # entity product first: exactly symmetric in the two entities
            scores = scores + (v1 * ent * vecs["dm"]).sum(axis=1)
        if "subj" in vecs:
            # same association order as score_triple, so ties agree bit for bit
            scores = scores + ((v1 * vecs["subj"]).sum() + (ent * vecs["obj"]).sum(axis=1))
        return scores


def score_triple(model: KbcModel, e1: str, r: str, e2: str) -> float:
    for e in (e1, e2):
        if e not in model.entity_index:
            raise KeyError(f"unknown entity {e!r}")
    ent = model.params["entity"]
    v1, v2 = ent[model.entity_index[e1]], ent[model.entity_index[e2]]
    vecs = model.relation_vectors(r)
    score = 0.0
    if "dm" in vecs:
        score += float((v1 * v2 * vecs["dm"]).sum())
    if "subj" in vecs:
        score += float((v1 * vecs["subj"]).sum() + (v2 * vecs["obj"]).sum())
    return score


def init_kbc_model(dataset: KbcDataset, config: KbcConfig, encoder: Optional[RelationEncoder]) -> KbcModel:
    rng = np.random.default_rng(config.seed)
    d = config.dim
    bound = 1.0 / math.sqrt(d)
    p = {"entity": rng.uniform(-bound, bound, (len(dataset.entities), d))}
    R = len(dataset.relations)
    if config.kind in ("distmult", "combined"):
        p["rel_dm"] = rng.uniform(-bound, bound, (R, d))
    if config.kind in ("e", "combined"):
        p["rel_subj"] = rng.uniform(-bound, bound, (R, d))
        p["rel_obj"] = rng.uniform(-bound, bound, (R, d))
    text_vocab: list = []
    text_z = None
    if encoder is not None:
        zd = encoder.config.z_dim
        zb = 1.0 / math.sqrt(zd)
        if config.kind in ("distmult", "combined"):
            p["proj_dm_w"] = rng.uniform(-zb, zb, (zd, d))
            p["proj_dm_b"] = np.zeros(d)
        if config.kind in ("e", "combined"):
            p["proj_e_w"] = rng.uniform(-zb, zb, (zd, 2 * d))
            p["proj_e_b"] = np.zeros(2 * d)
        if config.use_mentions:
            text_vocab = [t for t in dataset.textual_relations()
                          if len(t.split(" ")) <= encoder.config.max_length]
            text_z = encoder.encode_many(text_vocab)
    return KbcModel(config.kind, list(dataset.entities), list(dataset.relations), p, text_vocab, text_z)


def train_kbc(dataset: KbcDataset, encoder: Optional[RelationEncoder], config: KbcConfig = KbcConfig(),
              progress=None) -> KbcModel:
    """Sampled-softmax training against corrupted objects.

    Training examples are the KB triples plus, when ``config.use_mentions``,
    every textual mention (e1, t, e2).  The encoder is only read.
    """
    if not dataset.train:
        raise ValueError("empty training set")
    model = init_kbc_model(dataset, config, encoder)
    n_kb = len(dataset.relations)
    ent_idx, rel_idx = model.entity_index, model.relation_index
    ex_e1, ex_r, ex_e2 = [], [], []
    for e1, r, e2 in dataset.train:
        ex_e1.append(ent_idx[e1]); ex_r.append(rel_idx[r]); ex_e2.append(ent_idx[e2])
    if config.use_mentions and model.text_vocab:
        for (e1, e2), ts in sorted(dataset.mentions.items()):
            for t in ts:
                if t in model.text_index:
                    ex_e1.append(ent_idx[e1]); ex_r.append(n_kb + model.text_index[t]); ex_e2.append(ent_idx[e2])
    ex_e1, ex_r, ex_e2 = (np.array(a, dtype=np.int64) for a in (ex_e1, ex_r, ex_e2))

    trainable = ["entity"] + [k for k in ("rel_dm", "rel_subj", "rel_obj") if k in model.params]
    uses_text = config.use_mentions and model.text_z is not None and len(model.text_vocab) > 0
    if uses_text:
        trainable += [k for k in ("proj_dm_w", "proj_dm_b", "proj_e_w", "proj_e_b") if k in model.params]
    live = {k: model.params[k] for k in trainable}
    opt = Adam(live, d_model=1, constant_lr=config.lr, beta2=0.999, eps=1e-8)
    rng = np.random.default_rng(config.seed + 1)
    n_ent = len(model.entities)
    d = config.dim
    text_z = Tensor(model.text_z) if uses_text else None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(ex_e1))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            B = len(idx)
            neg = rng.integers(0, n_ent - 1, size=(B, config.negatives))
            gold = ex_e2[idx][:, None]
            neg = neg + (neg >= gold)  # skip the gold object
            cands = np.concatenate([gold, neg], axis=1)
            P = {k: Tensor(v, requires_grad=True) for k, v in live.items()}
            ent = P["entity"]
            e1v = ent.take_rows(ex_e1[idx])
            cv = ent.take_rows(cands)
            scores = Tensor(np.zeros(cands.shape))
            ridx = ex_r[idx]
            if model.uses_distmult:
                table = P["rel_dm"]
                if uses_text:
                    table = concat([table, text_z @ P["proj_dm_w"] + P["proj_dm_b"]], axis=0)
                rv = table.take_rows(ridx)
                scores = scores + (cv * (e1v * rv).reshape(B, 1, d)).sum(axis=-1)
            if model.uses_e:
                subj, obj = P["rel_subj"], P["rel_obj"]
                if uses_text:
                    pair = text_z @ P["proj_e_w"] + P["proj_e_b"]
                    subj = concat([subj, pair[:, :d]], axis=0)
                    obj = concat([obj, pair[:, d:]], axis=0)
                sv, ov = subj.take_rows(ridx), obj.take_rows(ridx)
                scores = scores + (e1v * sv).sum(axis=-1, keepdims=True) + (cv * ov.reshape(B, 1, d)).sum(axis=-1)
            nll = -scores.log_softmax(axis=-1)[:, 0].mean()
            reg = sum(((P[k] * P[k]).sum() for k in P if not k.startswith("proj")), Tensor(0.0))
            loss = nll + reg * (config.l2 / len(ex_e1) * B)
            if not math.isfinite(loss.item()):
                raise RuntimeError(f"KBC training diverged at epoch {epoch}")
            loss.backward()
            opt.step({k: t.grad for k, t in P.items()})
            total += nll.item() * B
        if progress is not None:
            progress(epoch, total / len(ex_e1))
    model.params.update(live)
    return model


def kbc_ranks(model: KbcModel, dataset: KbcDataset) -> list[int]:
    """Filtered rank of the gold object for each test triple (score desc, entity index asc)."""
    known: dict = {}
    for e1, r, e2 in list(dataset.train) + list(dataset.test):
        known.setdefault((e1, r), set()).add(e2)
    ranks = []
    for e1, r, e2 in dataset.test:
        if e2 not in model.entity_index:
            raise KeyError(f"gold entity {e2!r} unknown")
        scores = model.object_scores(e1, r)
        g = model.entity_index[e2]
        gs = scores[g]
        others = np.ones(len(scores), dtype=bool)
        for o in known[(e1, r)]:
            others[model.entity_index[o]] = False
        idx = np.arange(len(scores))
        ahead = others & ((scores > gs) | ((scores == gs) & (idx < g)))
        ranks.append(int(ahead.sum()) + 1)
    return ranks


def rank_metrics(ranks: Sequence[int]) -> tuple[float, float]:
    if not ranks:
        return float("nan"), float("nan")
    r = np.asarray(ranks, dtype=np.float64)
    return float(100.0 * np.mean(1.0 / r)), float(100.0 * np.mean(r <= 10))


def evaluate_kbc(model: KbcModel, dataset: KbcDataset) -> dict:
    """MRR and HITS@10 (x100) overall and split by whether the test pair has mentions."""
    ranks = kbc_ranks(model, dataset)
    flags = [dataset.has_mentions(t) for t in dataset.test]
    with_m = [r for r, f in zip(ranks, flags) if f]
    without = [r for r, f in zip(ranks, flags) if not f]
    out = {}
    for name, subset in (("overall", ranks), ("with_mentions", with_m), ("without_mentions", without)):
        mrr, hits = rank_metrics(subset)
        out[name] = {"MRR": mrr, "HITS@10": hits, "n": len(subset)}
    return out


def format_kbc_table(rows: Sequence[tuple[str, dict]]) -> str:
    """Human-readable table with Overall / With mentions / Without mentions columns."""
    head = f"{'Model':<28}{'Overall':>18}{'With mentions':>20}{'Without mentions':>20}"
    sub = f"{'':<28}" + f"{'MRR':>9}{'HITS@10':>9}" + f"{'MRR':>11}{'HITS@10':>9}" * 2
    lines = [head, sub]
    for name, rep in rows:
        cells = []
        for key in ("overall", "with_mentions", "without_mentions"):
            cells.append((rep[key]["MRR"], rep[key]["HITS@10"]))
        lines.append(f"{name:<28}{cells[0][0]:>9.1f}{cells[0][1]:>9.1f}"
                     f"{cells[1][0]:>11.1f}{cells[1][1]:>9.1f}{cells[2][0]:>11.1f}{cells[2][1]:>9.1f}")
    return "\n".join(lines)
