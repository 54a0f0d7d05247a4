"""Step 2: train the relation encoder on the graph.

The encoder reads a textual relation token by token and predicts its row of
the graph.  Training minimizes soft cross-entropy and keeps the checkpoint
with the lowest validation loss.
"""

from glorepp.cli import RunConfig
from glorepp.synthetic import DEMO_CONFIG

from _common import head, run, workdir

w = workdir()
if not (w / "graph.tsv").exists():
    raise SystemExit("run 01_paths_and_graph.py first")
cfg = RunConfig.from_lines(DEMO_CONFIG.splitlines())
enc, tr = cfg.encoder, cfg.train
run("train", "--graph", w / "graph.tsv", "--out", w / "encoder.ckpt", "--log", w / "loss_log.tsv",
    "--d-model", enc.d_model, "--layers", enc.layer_count, "--heads", enc.head_count,
    "--ff-dim", enc.ff_dim, "--z-dim", enc.z_dim, "--epochs", tr.max_epochs,
    "--batch-size", tr.batch_size, "--warmup", tr.warmup_steps)
print("Loss log (epoch, train loss, validation loss):")
lines = (w / "loss_log.tsv").read_text().splitlines()
for line in lines[:4] + ["    ..."] + lines[-2:]:
    print("   ", line)
