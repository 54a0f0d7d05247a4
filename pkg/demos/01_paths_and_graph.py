"""Step 1: from parsed sentences to a relation graph.

Each sentence carries entity mentions.  For every ordered mention pair we take
the shortest dependency path, align the pair with the KB, and count how often
each textual relation co-occurs with each KB relation.  Normalizing a row gives
the target distribution the encoder learns.
"""

from glorepp.deppath import EntityMention, ParsedToken, SentenceGraph, extract_triples, render_relation

from _common import head, run, workdir

tokens = (ParsedToken(1, "Henry", 2, "compound"), ParsedToken(2, "Ford", 3, "nsubj"),
          ParsedToken(3, "founded", 0, "root"), ParsedToken(4, "the", 6, "det"),
          ParsedToken(5, "Ford", 6, "compound"), ParsedToken(6, "Company", 3, "dobj"))
sentence = SentenceGraph(tokens, (EntityMention(1, 2, "m.ford"), EntityMention(5, 6, "m.fmc")), "s1")
print("Paths in both directions for one sentence:")
for e1, rel, e2, _ in extract_triples(sentence):
    print(f"    {e1:8s} {render_relation(rel):28s} {e2}")

w = workdir()
print("\nExtract paths from the bundled synthetic corpus:")
run("extract", "--corpus", w / "corpus.conllu", "--out", w / "triples.tsv")
head(w / "triples.tsv", 5)

print("\nAlign with the KB, filter, and normalize:")
run("build-graph", "--triples", w / "triples.tsv", "--kb", w / "kb.tsv", "--out", w / "graph.tsv")
head(w / "graph.tsv", 6)
