"""Step 4: KB completion with embedded mentions.

DistMult learns from KB facts alone.  The Emb variant also treats each
textual mention of an entity pair as an extra relation whose vector is a
projection of the frozen encoder output.  The gain shows up on test pairs
that have mentions.
"""

from pathlib import Path

from _common import run, workdir

w = workdir()
if not (w / "encoder.ckpt").exists():
    raise SystemExit("run 02_train_encoder.py first")
run("eval-kbc", "--checkpoint", w / "encoder.ckpt", "--train", w / "kbc_train.tsv",
    "--test", w / "kbc_test.tsv", "--mentions", w / "kbc_mentions.tsv", "--out", w / "kbc_report.tsv",
    "--kind", "distmult", "--dim", 32, "--epochs", 40)
print(Path(w / "kbc_report.txt").read_text())
