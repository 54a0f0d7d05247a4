"""Textual relations as shortest dependency paths between entity mentions.

Input is CoNLL-U style text: sentence blocks separated by blank lines, ten
tab-separated columns per token (HEAD in column 7, DEPREL in column 8), and
entity mentions given inline as ``#MENTION<TAB>start<TAB>end<TAB>entity_id``
lines (1-based, inclusive token indices).  An optional ``# sent_id = ...``
comment names the sentence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Union

__all__ = [
    "ConlluError",
    "ParsedToken",
    "EntityMention",
    "SentenceGraph",
    "Lexical",
    "Dep",
    "TextualRelation",
    "parse_conllu",
    "mention_head",
    "extract_path",
    "extract_triples",
    "reverse_relation",
    "is_symmetric",
    "relation_length",
    "render_relation",
    "parse_relation",
]

UP = "up"
DOWN = "down"


class ConlluError(ValueError):
    """Malformed sentence block; carries the sentence id and line number."""

    def __init__(self, message: str, sentence_id: str = "", line: int = 0):
        self.sentence_id = sentence_id
        self.line = line
        super().__init__(f"sentence {sentence_id!r} (line {line}): {message}")


@dataclass(frozen=True)
class ParsedToken:
    index: int
    surface: str
    head: int
    deprel: str


@dataclass(frozen=True)
class EntityMention:
    start: int
    end: int
    entity_id: str

    @property
    def span(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class SentenceGraph:
    tokens: tuple
    mentions: tuple
    sentence_id: str = ""

    def __post_init__(self):
        _validate_tree(self.tokens, self.sentence_id)
        _validate_mentions(self.mentions, len(self.tokens), self.sentence_id)

    def token(self, index: int) -> ParsedToken:
        return self.tokens[index - 1]

    def head_of(self, index: int) -> int:
        return self.tokens[index - 1].head


def _validate_tree(tokens: Sequence[ParsedToken], sid: str, line: int = 0) -> None:
    n = len(tokens)
    if n == 0:
        raise ConlluError("sentence has no tokens", sid, line)
    roots = 0
    for pos, tok in enumerate(tokens, start=1):
        if tok.index != pos:
            raise ConlluError(f"token index {tok.index} out of sequence (expected {pos})", sid, line)
        if tok.head == 0:
            roots += 1
        elif not 1 <= tok.head <= n or tok.head == tok.index:
            raise ConlluError(f"token {tok.index} has invalid head {tok.head}", sid, line)
    if roots != 1:
        raise ConlluError(f"expected exactly one root, found {roots}", sid, line)
    for tok in tokens:
        seen = set()
        cur = tok.index
        while cur != 0:
            if cur in seen:
                raise ConlluError(f"head cycle through token {cur}", sid, line)
            seen.add(cur)
            cur = tokens[cur - 1].head


def _validate_mentions(mentions: Sequence[EntityMention], n: int, sid: str, line: int = 0) -> None:
    covered: dict[int, EntityMention] = {}
    for m in mentions:
        if not m.entity_id:
            raise ConlluError("mention without entity id", sid, line)
        if m.start < 1 or m.end > n or m.start > m.end:
            raise ConlluError(f"mention span {m.start}-{m.end} outside 1..{n}", sid, line)
        for i in m.span:
            if i in covered:
                raise ConlluError(f"mentions overlap at token {i}", sid, line)
            covered[i] = m


def parse_conllu(lines: Iterable[str]) -> list[SentenceGraph]:
    """Parse sentence blocks into validated :class:`SentenceGraph` objects."""
    sentences = []
    block: list[tuple[int, str]] = []
    for lineno, raw in enumerate(itertools.chain(lines, [""]), start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if line.strip():
            block.append((lineno, line))
            continue
        if block:
            sentences.append(_parse_block(block, len(sentences)))
            block = []
    return sentences


def _parse_block(block: list[tuple[int, str]], ordinal: int) -> SentenceGraph:
    sid = f"s{ordinal + 1}"
    for _, line in block:
        if line.startswith("# sent_id"):
            sid = line.split("=", 1)[1].strip() if "=" in line else sid
    first_line = block[0][0]
    tokens: list[ParsedToken] = []
    mentions: list[EntityMention] = []
    for lineno, line in block:
        if line.startswith("#MENTION"):
            cols = line.split("\t")
            if len(cols) != 4:
                raise ConlluError(f"mention line needs 4 columns, got {len(cols)}", sid, lineno)
            try:
                start, end = int(cols[1]), int(cols[2])
            except ValueError:
                raise ConlluError("mention bounds must be integers", sid, lineno) from None
            mentions.append(EntityMention(start, end, cols[3].strip()))
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"expected 10 columns, got {len(cols)}", sid, lineno)
        if not cols[0].isdigit():
            # multiword ranges (1-2) and empty nodes (1.1) carry no tree edges
            continue
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluError(f"non-integer head {cols[6]!r}", sid, lineno) from None
        tokens.append(ParsedToken(int(cols[0]), cols[1], head, cols[7]))
    _validate_tree(tokens, sid, first_line)
    _validate_mentions(mentions, len(tokens), sid, first_line)
    return SentenceGraph(tuple(tokens), tuple(mentions), sid)


# --------------------------------------------------------------------------
# path elements
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Lexical:
    surface: str

    def __post_init__(self):
        bad = self.surface.startswith("<") or ">" in self.surface
        if not self.surface or bad or any(c.isspace() for c in self.surface):
            raise ValueError(f"invalid lexical surface {self.surface!r}")

    def render(self) -> str:
        return self.surface


@dataclass(frozen=True)
class Dep:
    label: str
    direction: str

    def __post_init__(self):
        bad = self.label.startswith("-") or "<" in self.label or ">" in self.label
        if not self.label or bad or any(c.isspace() for c in self.label):
            raise ValueError(f"invalid dependency label {self.label!r}")
        if self.direction not in (UP, DOWN):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")

    def flipped(self) -> "Dep":
        return Dep(self.label, DOWN if self.direction == UP else UP)

    def render(self) -> str:
        return f"<-{self.label}>" if self.direction == UP else f"<{self.label}>"


PathElement = Union[Lexical, Dep]


@dataclass(frozen=True)
class TextualRelation:
    elements: tuple = field()

    def __post_init__(self):
        els = tuple(self.elements)
        object.__setattr__(self, "elements", els)
        if not els:
            raise ValueError("textual relation must have at least one element")
        if not isinstance(els[0], Dep) or not isinstance(els[-1], Dep):
            raise ValueError("textual relation must start and end with a dependency edge")

    def __len__(self) -> int:
        return len(self.elements)

    def __str__(self) -> str:
        return render_relation(self)


def reverse_relation(t: TextualRelation) -> TextualRelation:
    return TextualRelation(tuple(
        e.flipped() if isinstance(e, Dep) else e for e in reversed(t.elements)
    ))


def is_symmetric(t: TextualRelation) -> bool:
    """True when the path reads the same from either end.

    This catches conjunction paths such as ``<-conj> apples <conj>``.
    """
    return t == reverse_relation(t)


def relation_length(t: TextualRelation) -> int:
    return len(t.elements)


def render_relation(t: TextualRelation) -> str:
    return " ".join(e.render() for e in t.elements)


def parse_element(token: str) -> PathElement:
    if token.startswith("<"):
        if not token.endswith(">") or len(token) < 3:
            raise ValueError(f"malformed dependency token {token!r}")
        inner = token[1:-1]
        if inner.startswith("-"):
            label, direction = inner[1:], UP
        else:
            label, direction = inner, DOWN
        if not label or "<" in label:
            raise ValueError(f"malformed dependency token {token!r}")
        return Dep(label, direction)
    if ">" in token:
        raise ValueError(f"malformed token {token!r}")
    return Lexical(token)


def parse_relation(text: str) -> TextualRelation:
    parts = text.split(" ")
    if not text or any(p == "" for p in parts):
        raise ValueError(f"malformed relation string {text!r}")
    return TextualRelation(tuple(parse_element(p) for p in parts))


# --------------------------------------------------------------------------
# extraction
# --------------------------------------------------------------------------


def mention_head(sentence: SentenceGraph, mention: EntityMention) -> int:
    """Syntactic head of a mention: the leftmost span token governed from outside."""
    span = mention.span
    for i in span:
        if sentence.head_of(i) not in span:
            return i
    # unreachable for a tree: some span token must be governed from outside
    raise AssertionError("mention span has no external head")


def _ancestors(sentence: SentenceGraph, index: int) -> list[int]:
    chain = [index]
    while sentence.head_of(chain[-1]) != 0:
        chain.append(sentence.head_of(chain[-1]))
    return chain


def tree_path(sentence: SentenceGraph, a: int, b: int) -> tuple[list[int], list[int]]:
    """Token indices going up from ``a`` to the lowest common ancestor, then down to ``b``.

    Returns ``(up, down)`` where ``up`` starts at ``a`` and ends at the LCA and
    ``down`` runs from the LCA's child to ``b`` (empty when ``b`` is the LCA).
    """
    up_a = _ancestors(sentence, a)
    up_b = _ancestors(sentence, b)
    on_b = set(up_b)
    for k, node in enumerate(up_a):
        if node in on_b:
            lca_pos_a = k
            break
    lca = up_a[lca_pos_a]
    up = up_a[: lca_pos_a + 1]
    down = list(reversed(up_b[: up_b.index(lca)]))
    return up, down


def extract_path(sentence: SentenceGraph, source: EntityMention,
                 target: EntityMention) -> Optional[TextualRelation]:
    """Shortest dependency path from ``source`` to ``target``.

    Returns ``None`` when an intermediate token belongs to another mention.
    """
    if source == target:
        raise ValueError("source and target mentions must differ")
    a, b = mention_head(sentence, source), mention_head(sentence, target)
    if a == b:
        return None
    up, down = tree_path(sentence, a, b)
    nodes = up + down
    others = [m for m in sentence.mentions if m != source and m != target]
    blocked = {i for m in others for i in m.span}
    if any(i in blocked for i in nodes[1:-1]):
        return None

    # the LCA is emitted once, by the up-leg, and only if it is not an endpoint
    elements: list[PathElement] = []
    for child in up[:-1]:
        elements.append(Dep(sentence.token(child).deprel, UP))
        parent = sentence.head_of(child)
        if parent != b:
            elements.append(Lexical(_normalize(sentence.token(parent).surface)))
    for child in down:
        elements.append(Dep(sentence.token(child).deprel, DOWN))
        if child != b:
            elements.append(Lexical(_normalize(sentence.token(child).surface)))
    return TextualRelation(tuple(elements))


def _normalize(surface: str) -> str:
    # angle brackets are reserved for dependency tokens
    text = "_".join(surface.lower().split()).replace("<", "(").replace(">", ")")
    return text or "_"


def extract_triples(sentence: SentenceGraph) -> Iterator[tuple[str, TextualRelation, str, str]]:
    """All ``(subject, relation, object, sentence_id)`` for ordered mention pairs."""
    for src, dst in itertools.permutations(sentence.mentions, 2):
        if src.entity_id == dst.entity_id:
            continue
        t = extract_path(sentence, src, dst)
        if t is not None:
            yield src.entity_id, t, dst.entity_id, sentence.sentence_id
