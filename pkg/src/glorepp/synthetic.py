"""Seeded synthetic data: relation patterns, co-occurrence graphs, parsed corpora.

Each KB relation owns a disjoint set of keywords; textual relations for it
are the keyword path decorated with fillers drawn from a vocabulary shared
by all relations, so only the keyword carries signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deppath import (
    Dep,
    EntityMention,
    Lexical,
    ParsedToken,
    SentenceGraph,
    TextualRelation,
    parse_relation,
    render_relation,
)
from .relgraph import CoocCounts, KbStore, KbTriple, RelationGraph, normalize

__all__ = [
    "PATTERNS",
    "Pattern",
    "pattern_relations",
    "pattern_graph",
    "sentence_from_relation",
    "to_conllu",
    "SyntheticCorpus",
    "synthetic_corpus",
    "marginal_entropy",
    "synthetic_re",
    "synthetic_kbc",
    "DEMO_CONFIG",
    "write_demo",
]


@dataclass(frozen=True)
class Pattern:
    kb_relation: str
    up_label: str
    keyword: str
    down_label: str


PATTERNS = (
    Pattern("people.person.place_of_birth", "nsubjpass", "born", "nmod:in"),
    Pattern("organization.organization.founders", "dobj", "founded", "nsubj"),
    Pattern("people.person.employer", "nsubj", "works", "nmod:for"),
    Pattern("people.person.spouse", "nsubj", "married", "dobj"),
    Pattern("location.country.capital", "nsubj", "capital", "nmod:of"),
    Pattern("book.author.works_written", "nsubj", "wrote", "dobj"),
    Pattern("location.location.containedby", "nsubjpass", "located", "nmod:within"),
    Pattern("organization.organization.members", "dobj", "joined", "nsubj"),
    Pattern("people.person.children", "nmod:of", "father", "nsubj"),
    Pattern("people.person.education", "nsubj", "graduated", "nmod:from"),
)

FILLERS = (
    "nov.", "1925", "1963", "city", "later", "also", "first", "town", "year", "state",
    "early", "raised", "family", "group", "new", "old", "north", "south", "home", "time",
)
MODIFIER_LABELS = ("nmod:on", "appos", "advmod", "nmod:at", "xcomp", "compound")


def _variant(p: Pattern, kind: int, rng: np.random.Generator) -> TextualRelation:
    f1, f2 = rng.choice(FILLERS, size=2, replace=False)
    m1, m2 = rng.choice(MODIFIER_LABELS, size=2, replace=False)
    up = Dep(p.up_label, "up")
    down = Dep(p.down_label, "down")
    kw = Lexical(p.keyword)
    if kind == 0:
        els = [up, kw, Dep(m1, "down"), Lexical(f1), down]
    elif kind == 1:
        els = [Dep(m1, "up"), Lexical(f1), Dep(p.up_label, "up"), kw, down]
    elif kind == 2:
        els = [up, kw, Dep(m1, "down"), Lexical(f1), Dep(m2, "down"), Lexical(f2), down]
    else:
        els = [Dep(m1, "up"), Lexical(f1), Dep(p.up_label, "up"), kw, Dep(m2, "down"), Lexical(f2), down]
    return TextualRelation(tuple(els))


def pattern_relations(pattern: Pattern, count: int, rng: np.random.Generator,
                      include_base: bool = True) -> list[str]:
    """``count`` distinct rendered relations expressing ``pattern``."""
    out: dict[str, None] = {}
    if include_base:
        base = TextualRelation((Dep(pattern.up_label, "up"), Lexical(pattern.keyword),
                                Dep(pattern.down_label, "down")))
        out[render_relation(base)] = None
    while len(out) < count:
        out.setdefault(render_relation(_variant(pattern, int(rng.integers(4)), rng)), None)
    return list(out)[:count]


def pattern_graph(n_relations: int = 50, n_patterns: int = 5, seed: int = 0,
                  dominant: tuple = (20, 60), noise_share: float = 0.25) -> tuple[RelationGraph, dict]:
    """Co-occurrence graph whose rows are dominated by their generating KB relation.

    Returns the graph and a map from rendered relation to generating KB relation.
    """
    rng = np.random.default_rng(seed)
    patterns = PATTERNS[:n_patterns]
    per = [n_relations // n_patterns + (1 if k < n_relations % n_patterns else 0)
           for k in range(n_patterns)]
    counts = CoocCounts()
    source = {}
    for k, (p, n) in enumerate(zip(patterns, per)):
        for t in pattern_relations(p, n, rng):
            c = int(rng.integers(dominant[0], dominant[1] + 1))
            counts.pair_counts[(t, p.kb_relation)] += c
            total = c
            others = [q for j, q in enumerate(patterns) if j != k]
            for j in rng.choice(len(others), size=min(2, len(others)), replace=False):
                noise = int(rng.integers(0, max(1, int(c * noise_share)) + 1))
                if noise:
                    counts.pair_counts[(t, others[j].kb_relation)] += noise
                    total += noise
            counts.occurrence_counts[t] += total
            source[t] = p.kb_relation
    return normalize(counts), source


# --------------------------------------------------------------------------
# corpora


def sentence_from_relation(relation, subject: str, obj: str, sentence_id: str = "",
                           subject_id: str = "", object_id: str = "") -> SentenceGraph:
    """A minimal parsed sentence whose subject-to-object path is ``relation``.

    Tokens are the subject, the path's lexical items and the object, in path
    order.  Requires the ``up* down*`` direction shape of a tree path.
    """
    t = relation if isinstance(relation, TextualRelation) else parse_relation(relation)
    deps = [e for e in t.elements if isinstance(e, Dep)]
    lex = [e for e in t.elements if isinstance(e, Lexical)]
    if len(deps) != len(lex) + 1 or any(
        isinstance(a, Dep) == isinstance(b, Dep) for a, b in zip(t.elements, t.elements[1:])
    ):
        raise ValueError("relation must alternate dependency and lexical elements")
    dirs = [d.direction for d in deps]
    if "down" in dirs and "up" in dirs[dirs.index("down"):]:
        raise ValueError("relation is not a tree path (down edge followed by up edge)")
    surfaces = [subject] + [e.surface for e in lex] + [obj]
    n = len(surfaces)
    heads = [0] * n
    labels = ["root"] * n
    for k, d in enumerate(deps):
        if d.direction == "up":
            heads[k], labels[k] = k + 2, d.label
        else:
            heads[k + 1], labels[k + 1] = k + 1, d.label
    tokens = tuple(ParsedToken(i + 1, s, heads[i], labels[i]) for i, s in enumerate(surfaces))
    mentions = (EntityMention(1, 1, subject_id or subject), EntityMention(n, n, object_id or obj))
    return SentenceGraph(tokens, mentions, sentence_id)


def to_conllu(sentences) -> str:
    blocks = []
    for s in sentences:
        lines = [f"# sent_id = {s.sentence_id}"] if s.sentence_id else []
        for m in s.mentions:
            lines.append(f"#MENTION\t{m.start}\t{m.end}\t{m.entity_id}")
        for tok in s.tokens:
            lines.append("\t".join([str(tok.index), tok.surface, tok.surface.lower(), "_", "_", "_",
                                    str(tok.head), tok.deprel, "_", "_"]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


@dataclass
class SyntheticCorpus:
    sentences: list
    kb: KbStore
    facts: list  # KbTriple list, sorted
    relation_source: dict  # rendered relation -> generating KB relation (None for noise)


def synthetic_corpus(n_sentences: int = 1000, n_patterns: int = 5, n_entities: int = 120,
                     relations_per_pattern: int = 12, wrong_label_rate: float = 0.15,
                     noise_rate: float = 0.1, seed: int = 0) -> SyntheticCorpus:
    """Entity-annotated parsed sentences aligned with a random KB.

    Most sentences express a KB fact with a path from that fact's pattern.  A
    ``wrong_label_rate`` share express a different pattern for an entity pair
    that holds the fact (distant supervision's wrong labels), a
    ``noise_rate`` share link unrelated entity pairs, and a few are
    conjunctions, which the symmetry filter must drop.
    """
    rng = np.random.default_rng(seed)
    patterns = PATTERNS[:n_patterns]
    entities = [f"m.{i:04d}" for i in range(n_entities)]
    rel_pool = {p.kb_relation: pattern_relations(p, relations_per_pattern, rng) for p in patterns}
    facts = set()
    n_facts = max(n_patterns, n_sentences // 4)
    while len(facts) < n_facts:
        p = patterns[int(rng.integers(n_patterns))]
        a, b = rng.choice(n_entities, size=2, replace=False)
        facts.add(KbTriple(entities[a], p.kb_relation, entities[b]))
    facts = sorted(facts, key=lambda f: (f.subject, f.relation, f.object))
    kb = KbStore(set(facts))
    source: dict = {}
    sentences = []
    for i in range(n_sentences):
        sid = f"syn{i:06d}"
        roll = rng.random()
        if roll < 0.02:
            a, b = rng.choice(n_entities, size=2, replace=False)
            rel = f"<-conj> {rng.choice(['and', 'or'])} <conj>"
            subj, obj = entities[a], entities[b]
        elif roll < 0.02 + noise_rate:
            a, b = rng.choice(n_entities, size=2, replace=False)
            subj, obj = entities[a], entities[b]
            pool = rel_pool[patterns[int(rng.integers(n_patterns))].kb_relation]
            rel = pool[int(rng.integers(len(pool)))]
        else:
            f = facts[int(rng.integers(len(facts)))]
            subj, obj = f.subject, f.object
            rel_name = f.relation
            if rng.random() < wrong_label_rate:
                rel_name = patterns[int(rng.integers(n_patterns))].kb_relation
            pool = rel_pool[rel_name]
            rel = pool[int(rng.integers(len(pool)))]
            source[rel] = source.get(rel) or _pattern_of(rel, patterns)
        sentences.append(sentence_from_relation(rel, _surface(subj), _surface(obj), sid, subj, obj))
    return SyntheticCorpus(sentences, kb, facts, source)


def _surface(entity: str) -> str:
    return "E" + entity.replace(".", "")


def _pattern_of(rel: str, patterns) -> str:
    for p in patterns:
        if f" {p.keyword} " in f" {rel} ":
            return p.kb_relation
    return ""


def marginal_entropy(graph: RelationGraph) -> float:
    """Entropy of the mean target distribution over rows."""
    marg = np.asarray(graph.weights.mean(axis=0)).ravel()
    marg = marg[marg > 0]
    return float(-(marg * np.log(marg)).sum())


NEUTRAL_KEYWORDS = ("said", "met", "saw", "visited", "thanked", "praised")


def _neutral_relations(count: int, rng: np.random.Generator) -> list[str]:
    out: dict[str, None] = {}
    while len(out) < count:
        kw = str(rng.choice(NEUTRAL_KEYWORDS))
        if rng.random() < 0.5:
            rel = f"<-nsubj> {kw} <dobj>"
            if rng.random() < 0.7:
                rel = f"<-nsubj> {kw} <{rng.choice(MODIFIER_LABELS)}> {rng.choice(FILLERS)} <dobj>"
        else:
            rel = f"<-{rng.choice(MODIFIER_LABELS)}> {rng.choice(FILLERS)} <-nsubj> {kw} <dobj>"
        out.setdefault(rel, None)
    return list(out)


def synthetic_re(n_train: int = 600, n_test: int = 400, n_patterns: int = 5, na_share: float = 0.3,
                 wrong_label_rate: float = 0.2, base_signal: float = 1.0, base_noise: float = 1.0,
                 seed: int = 0):
    """Relation-extraction bags with a deliberately noisy base model.

    Returns ``(targets, train_bags, test_bags)``; ``targets[0]`` is ``NA``.
    Base scores are a softmax of a weak gold indicator plus Gaussian noise.
    """
    from .downstream import NA, Bag

    rng = np.random.default_rng(seed)
    patterns = PATTERNS[:n_patterns]
    targets = [NA] + [p.kb_relation for p in patterns]
    pools = {p.kb_relation: pattern_relations(p, 40, rng, include_base=False) for p in patterns}
    neutral = _neutral_relations(60, rng)

    def make(n, prefix):
        bags = []
        for i in range(n):
            if rng.random() < na_share:
                gold = frozenset()
                rels = [neutral[int(rng.integers(len(neutral)))] for _ in range(int(rng.integers(1, 4)))]
            else:
                k = int(rng.integers(n_patterns))
                gold = frozenset({patterns[k].kb_relation})
                rels = []
                for _ in range(int(rng.integers(1, 4))):
                    if rng.random() < wrong_label_rate:
                        pool = neutral if rng.random() < 0.5 else pools[patterns[int(rng.integers(n_patterns))].kb_relation]
                    else:
                        pool = pools[patterns[k].kb_relation]
                    rels.append(pool[int(rng.integers(len(pool)))])
            signal = np.zeros(len(targets))
            for g in gold or {NA}:
                signal[targets.index(g)] = base_signal
            base = signal + rng.normal(0.0, base_noise, len(targets))
            base = np.exp(base - base.max())
            base /= base.sum()
            bags.append(Bag(f"{prefix}{i:05d}", f"{prefix}e{2 * i}", f"{prefix}e{2 * i + 1}",
                            rels, gold, base))
        return bags

    return targets, make(n_train, "tr"), make(n_test, "te")


def synthetic_kbc(n_entities: int = 200, n_relations: int = 10, facts_per_relation: int = 60,
                  test_share: float = 0.3, mention_rate: float = 0.5, noise_mentions: int = 100,
                  seed: int = 0):
    """Typed random KB with textual mentions drawn from the pattern vocabulary.

    Entities fall into ``n_relations`` types; relation ``r`` links type ``r``
    subjects to type ``r + 3`` objects.  Returns a
    :class:`~glorepp.downstream.KbcDataset`.
    """
    from .downstream import KbcDataset

    rng = np.random.default_rng(seed)
    patterns = PATTERNS[:n_relations]
    n_types = n_relations
    entities = [f"/m/e{i:04d}" for i in range(n_entities)]
    by_type = [entities[t::n_types] for t in range(n_types)]
    pools = {p.kb_relation: pattern_relations(p, 20, rng) for p in patterns}
    facts = []
    for r, p in enumerate(patterns):
        subj, obj = by_type[r], by_type[(r + 3) % n_types]
        seen = set()
        while len(seen) < facts_per_relation:
            seen.add((subj[int(rng.integers(len(subj)))], obj[int(rng.integers(len(obj)))]))
        facts += [(a, p.kb_relation, b) for a, b in sorted(seen)]
    order = rng.permutation(len(facts))
    n_test = int(round(test_share * len(facts)))
    test = sorted(facts[i] for i in order[:n_test])
    train = sorted(facts[i] for i in order[n_test:])
    mentions: dict = {}
    for a, rel, b in facts:
        if rng.random() < mention_rate:
            pool = pools[rel]
            mentions.setdefault((a, b), []).extend(
                pool[int(rng.integers(len(pool)))] for _ in range(int(rng.integers(1, 3))))
    for _ in range(noise_mentions):
        a, b = rng.choice(n_entities, size=2, replace=False)
        pool = pools[patterns[int(rng.integers(n_relations))].kb_relation]
        mentions.setdefault((entities[a], entities[b]), []).append(pool[int(rng.integers(len(pool)))])
    return KbcDataset(sorted(entities), sorted(p.kb_relation for p in patterns), train, test, mentions)


DEMO_CONFIG = """\
# Demo pipeline configuration; paths are relative to this file.
seed = 0
paths.corpus = corpus.conllu
paths.kb = kb.tsv
paths.re_train = re_train.tsv
paths.re_test = re_test.tsv
paths.kbc_train = kbc_train.tsv
paths.kbc_test = kbc_test.tsv
paths.kbc_mentions = kbc_mentions.tsv
filter.max_length = 10
filter.min_occurrences = 2
encoder.d_model = 32
encoder.layer_count = 2
encoder.head_count = 2
encoder.ff_dim = 64
encoder.z_dim = 32
train.max_epochs = 80
train.batch_size = 8
train.warmup_steps = 20
kbc.kind = distmult
kbc.dim = 32
kbc.epochs = 40
re.cutoffs = 50,100,150,200
re.min_count = 5
"""


def write_demo(directory, seed: int = 0, n_sentences: int = 2000) -> None:
    """Write the small bundled demo inputs and ``demo.cfg`` into ``directory``."""
    from pathlib import Path

    from .downstream import write_bags

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    corpus = synthetic_corpus(n_sentences=n_sentences, n_patterns=5, n_entities=150, seed=seed)
    (d / "corpus.conllu").write_text(to_conllu(corpus.sentences), encoding="utf-8")
    (d / "kb.tsv").write_text("".join(f"{f.subject}\t{f.relation}\t{f.object}\n" for f in corpus.facts),
                              encoding="utf-8")
    targets, tr, te = synthetic_re(n_train=300, n_test=200, seed=seed + 1)
    for name, bags in (("re_train.tsv", tr), ("re_test.tsv", te)):
        with open(d / name, "w", encoding="utf-8") as fh:
            write_bags(bags, targets, fh)
    ds = synthetic_kbc(n_entities=100, n_relations=5, facts_per_relation=40, noise_mentions=40, seed=seed + 2)
    lines = lambda rows: "".join("\t".join(r) + "\n" for r in rows)
    (d / "kbc_train.tsv").write_text(lines(ds.train), encoding="utf-8")
    (d / "kbc_test.tsv").write_text(lines(ds.test), encoding="utf-8")
    mentions = [(a, b, t) for (a, b), ts in sorted(ds.mentions.items()) for t in ts]
    (d / "kbc_mentions.tsv").write_text(lines(mentions), encoding="utf-8")
    (d / "demo.cfg").write_text(DEMO_CONFIG, encoding="utf-8")
