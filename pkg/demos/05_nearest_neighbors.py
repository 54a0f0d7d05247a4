"""Step 5: look at the embedding space.

Export an embedding for every graph row, then ask for the nearest neighbors
of one relation.  Relations from the same lexical pattern should cluster.
"""

from pathlib import Path

from glorepp.analysis import auto_label, label_purity
from glorepp.encoder import load_embeddings
from glorepp.relgraph import load_graph

from _common import run, workdir

w = workdir()
if not (w / "encoder.ckpt").exists():
    raise SystemExit("run 02_train_encoder.py first")
run("export", "--checkpoint", w / "encoder.ckpt", "--graph", w / "graph.tsv", "--out", w / "embeddings.tsv")
table = load_embeddings(Path(w / "embeddings.tsv").read_text().splitlines())
graph = load_graph(Path(w / "graph.tsv").read_text().splitlines())
query = table.relations[0]
run("nn", "--checkpoint", w / "encoder.ckpt", "--table", w / "embeddings.tsv", "--query", query, "-k", 5)
labels = auto_label(graph)
print(f"\nQuery label: {labels.get(query)}")
print(f"5-NN label purity over the graph: {label_purity(table, labels, k=5):.3f}")
