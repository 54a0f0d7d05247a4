"""Step 3: relation extraction with an embedding ensemble.

A noisy base model scores each entity-pair bag.  The frozen encoder embeds
every textual relation in the bag, a small head maps the mean embedding to
relation scores, and the two are mixed with an alpha tuned on held-out bags.
"""

from _common import head, run, workdir

w = workdir()
if not (w / "encoder.ckpt").exists():
    raise SystemExit("run 02_train_encoder.py first")
run("eval-re", "--checkpoint", w / "encoder.ckpt", "--train-bags", w / "re_train.tsv",
    "--test-bags", w / "re_test.tsv", "--out", w / "re_report.tsv", "--cutoffs", "50,100,150,200")
print("Precision at N (percent):")
head(w / "re_report.tsv")
