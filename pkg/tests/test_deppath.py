import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glorepp.deppath import (
    ConlluError,
    Dep,
    EntityMention,
    Lexical,
    ParsedToken,
    SentenceGraph,
    TextualRelation,
    extract_path,
    extract_triples,
    is_symmetric,
    mention_head,
    parse_conllu,
    parse_relation,
    relation_length,
    render_relation,
    reverse_relation,
)
from oracles import bfs_path, random_sentence

FOUNDED = TextualRelation((Dep("dobj", "up"), Lexical("founded"), Dep("nsubj", "down")))
CONJ = TextualRelation((Dep("conj", "up"), Lexical("apples"), Dep("conj", "down")))


def conllu_line(i, form, head, rel):
    return "\t".join([str(i), form, "_", "_", "_", "_", str(head), rel, "_", "_"])


def ford_sentence():
    tokens = (ParsedToken(1, "Henry_Ford", 2, "nsubj"),
              ParsedToken(2, "founded", 0, "root"),
              ParsedToken(3, "Ford_Motor_Company", 2, "dobj"))
    mentions = (EntityMention(1, 1, "HenryFord"), EntityMention(3, 3, "FordMotorCo"))
    return SentenceGraph(tokens, mentions, "ford")


# --- parsing -----------------------------------------------------------------

def test_parse_minimal_block():
    lines = ["# sent_id = ford", "#MENTION\t1\t1\tHenryFord", "#MENTION\t3\t3\tFordMotorCo",
             conllu_line(1, "Ford", 2, "nsubj"), conllu_line(2, "founded", 0, "root"),
             conllu_line(3, "Company", 2, "dobj")]
    (s,) = parse_conllu(lines)
    assert s.sentence_id == "ford"
    assert [t.index for t in s.tokens if t.head == 0] == [2]
    assert len(s.mentions) == 2


def test_parse_cycle_names_sentence():
    lines = ["# sent_id = bad", conllu_line(1, "a", 2, "x"), conllu_line(2, "b", 3, "x"),
             conllu_line(3, "c", 1, "x")]
    with pytest.raises(ConlluError) as err:
        parse_conllu(lines)
    assert "bad" in str(err.value)


def test_parse_empty_stream():
    assert parse_conllu([]) == []


def test_parse_bad_column_count_reports_line():
    lines = ["# sent_id = s", conllu_line(1, "a", 0, "root"), "2\tb\t_"]
    with pytest.raises(ConlluError) as err:
        parse_conllu(lines)
    assert err.value.line == 3


def test_parse_mention_out_of_range():
    lines = ["#MENTION\t1\t5\tX", conllu_line(1, "a", 0, "root")]
    with pytest.raises(ConlluError):
        parse_conllu(lines)


def test_parse_skips_multiword_tokens():
    lines = ["1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_", conllu_line(1, "de", 2, "case"),
             conllu_line(2, "el", 0, "root")]
    (s,) = parse_conllu(lines)
    assert len(s.tokens) == 2


# --- mention heads -------------------------------------------------------------

def _chain(heads):
    return tuple(ParsedToken(i, f"w{i}", h, "dep") for i, h in enumerate(heads, start=1))


def test_mention_head_single_token():
    s = ford_sentence()
    assert mention_head(s, s.mentions[0]) == 1


def test_mention_head_governed_from_outside():
    # head(3)=4, head(4)=7
    s = SentenceGraph(_chain([7, 7, 4, 7, 7, 7, 0]), (EntityMention(3, 4, "X"),), "m")
    assert mention_head(s, s.mentions[0]) == 4


def test_mention_head_leftmost_tie():
    # head(1)=5, head(2)=6
    s = SentenceGraph(_chain([5, 6, 6, 6, 6, 0]), (EntityMention(1, 2, "X"),), "m")
    assert mention_head(s, s.mentions[0]) == 1


# --- path extraction -------------------------------------------------------------

def test_extract_company_to_person():
    s = ford_sentence()
    assert extract_path(s, s.mentions[1], s.mentions[0]) == FOUNDED
    assert render_relation(extract_path(s, s.mentions[1], s.mentions[0])) == "<-dobj> founded <nsubj>"


def test_extract_person_to_company():
    s = ford_sentence()
    t = extract_path(s, s.mentions[0], s.mentions[1])
    assert render_relation(t) == "<-nsubj> founded <dobj>"
    assert t == reverse_relation(FOUNDED)


def test_intermediate_entity_blocks_path():
    # C hangs off B, so the A to C path runs through the B mention
    tokens = (ParsedToken(1, "A", 2, "nsubj"), ParsedToken(2, "met", 0, "root"),
              ParsedToken(3, "B", 2, "dobj"), ParsedToken(4, "C", 3, "nmod"))
    mentions = (EntityMention(1, 1, "A"), EntityMention(3, 3, "B"), EntityMention(4, 4, "C"))
    s = SentenceGraph(tokens, mentions, "abc")
    assert extract_path(s, mentions[0], mentions[2]) is None
    assert extract_path(s, mentions[0], mentions[1]) is not None


def test_direct_edge_has_no_lexical_token():
    tokens = (ParsedToken(1, "Paris", 0, "root"), ParsedToken(2, "France", 1, "nmod"))
    s = SentenceGraph(tokens, (EntityMention(1, 1, "P"), EntityMention(2, 2, "F")), "d")
    assert render_relation(extract_path(s, s.mentions[0], s.mentions[1])) == "<nmod>"
    assert render_relation(extract_path(s, s.mentions[1], s.mentions[0])) == "<-nmod>"


def test_extract_triples_both_orders():
    out = list(extract_triples(ford_sentence()))
    assert [(a, render_relation(t), b) for a, t, b, _ in out] == [
        ("HenryFord", "<-nsubj> founded <dobj>", "FordMotorCo"),
        ("FordMotorCo", "<-dobj> founded <nsubj>", "HenryFord"),
    ]


def test_lexical_normalization():
    tokens = (ParsedToken(1, "A", 2, "nsubj"), ParsedToken(2, "Moved To", 0, "root"),
              ParsedToken(3, "B", 2, "obl"))
    s = SentenceGraph(tokens, (EntityMention(1, 1, "A"), EntityMention(3, 3, "B")), "n")
    assert render_relation(extract_path(s, s.mentions[0], s.mentions[1])) == "<-nsubj> moved_to <obl>"


def test_random_trees_match_bfs():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(300):
        s = random_sentence(rng)
        for a in s.mentions:
            for b in s.mentions:
                if a == b:
                    continue
                got = extract_path(s, a, b)
                assert (render_relation(got) if got else None) == bfs_path(s, a, b)
                checked += 1
    assert checked > 100


def test_path_reversal_property():
    rng = np.random.default_rng(11)
    for _ in range(200):
        s = random_sentence(rng)
        for a in s.mentions:
            for b in s.mentions:
                if a != b:
                    fwd, back = extract_path(s, a, b), extract_path(s, b, a)
                    assert (fwd is None) == (back is None)
                    if fwd is not None:
                        assert fwd == reverse_relation(back)


# --- relation algebra ----------------------------------------------------------

def test_reverse_examples():
    assert reverse_relation(FOUNDED) == TextualRelation(
        (Dep("nsubj", "up"), Lexical("founded"), Dep("dobj", "down")))
    assert reverse_relation(CONJ) == CONJ


def test_symmetry_examples():
    assert is_symmetric(CONJ)
    assert not is_symmetric(FOUNDED)
    assert not is_symmetric(TextualRelation((Dep("nmod", "down"),)))


def test_relation_length():
    assert relation_length(FOUNDED) == 3
    assert relation_length(TextualRelation((Dep("nmod", "down"),))) == 1
    els = [Dep("a", "up")] + [x for _ in range(4) for x in (Lexical("w"), Dep("a", "down"))]
    assert relation_length(TextualRelation(tuple(els))) == 9


def test_render_and_parse():
    assert parse_relation("<nmod:in>") == TextualRelation((Dep("nmod:in", "down"),))
    with pytest.raises(ValueError):
        parse_relation("founded")
    for bad in ("<>", "<-> x <a>", "<a", "<a>  <b>", "<a> x> <b>"):
        with pytest.raises(ValueError):
            parse_relation(bad)


labels = st.text(alphabet="abcdefgh:_", min_size=1, max_size=6)
words = st.text(alphabet="abcxyz0_.'", min_size=1, max_size=6)
deps = st.builds(Dep, labels, st.sampled_from(["up", "down"]))


@st.composite
def relations(draw):
    n = draw(st.integers(0, 4))
    els = [draw(deps)]
    for _ in range(n):
        if draw(st.booleans()):
            els.append(draw(st.builds(Lexical, words)))
        els.append(draw(deps))
    return TextualRelation(tuple(els))


@settings(max_examples=200, deadline=None)
@given(relations())
def test_relation_properties(t):
    assert parse_relation(render_relation(t)) == t
    assert reverse_relation(reverse_relation(t)) == t
    assert is_symmetric(t) == (render_relation(t) == render_relation(reverse_relation(t)))
    assert relation_length(t) == relation_length(reverse_relation(t))
