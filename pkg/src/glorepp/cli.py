"""Command-line pipeline: extract, build-graph, train, eval-re, eval-kbc, nn, export.

Every subcommand also accepts ``--config FILE``, a flat ``section.key = value``
file; explicit flags win over the file, and ``GLORE_SEED`` wins over both for
the seed.  ``pipeline`` runs the stages end to end from one config.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import io
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analysis import format_neighbors, labeled_embeddings, nearest_neighbors, write_labeled
from .deppath import ConlluError, extract_triples, parse_conllu, render_relation
from .downstream import (
    DEFAULT_CUTOFFS,
    KbcConfig,
    evaluate_kbc,
    evaluate_re,
    format_kbc_table,
    load_bags,
    load_kbc_dataset,
    train_kbc,
)
from .encoder import (
    Checkpoint,
    EncoderConfig,
    RelationEncoder,
    TrainConfig,
    export_embeddings,
    load_embeddings,
    load_word_vectors,
    train,
)
from .relgraph import (
    FilterConfig,
    align_corpus,
    apply_filters,
    load_graph,
    load_kb,
    normalize,
    save_graph,
    split_train_validation,
)

__all__ = ["main", "dispatch", "RunConfig", "run_pipeline", "PipelineError", "atomic_write"]

log = logging.getLogger("glorepp")

SUBCOMMANDS = ("extract", "build-graph", "train", "eval-re", "eval-kbc", "nn", "export", "pipeline")


class ValidationError(Exception):
    """Bad input: missing file, malformed content.  Maps to exit status 1."""


class PipelineError(ValidationError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    filter: FilterConfig = field(default_factory=FilterConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    kbc: KbcConfig = field(default_factory=KbcConfig)
    re: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        return cls.from_lines(path.read_text(encoding="utf-8").splitlines(), base_dir=path.parent)

    @classmethod
    def from_lines(cls, lines, base_dir=None) -> "RunConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value
        return cls.from_mapping(raw, base_dir)

    @classmethod
    def from_mapping(cls, raw: dict, base_dir=None) -> "RunConfig":
        sections: dict[str, dict] = {"paths": {}, "filter": {}, "encoder": {}, "train": {}, "kbc": {}, "re": {}}
        seed = 0
        for key, value in raw.items():
            if key == "seed":
                seed = int(value)
                continue
            section, _, name = key.partition(".")
            if section not in sections or not name:
                raise ValidationError(f"unknown config key {key!r}")
            sections[section][name] = value
        env_seed = os.environ.get("GLORE_SEED")
        if env_seed:
            seed = int(env_seed)
        filt = _coerce(FilterConfig, sections["filter"])
        if "whitelist" in sections["filter"]:
            wl = sections["filter"]["whitelist"]
            filt = dataclasses.replace(filt, whitelist=frozenset(x for x in wl.split(",") if x) or None)
        tr = _coerce(TrainConfig, sections["train"])
        tr = dataclasses.replace(tr, seed=seed)
        kbc = dataclasses.replace(_coerce(KbcConfig, sections["kbc"]), seed=seed)
        return cls(seed=seed, paths=sections["paths"], filter=filt,
                   encoder=_coerce(EncoderConfig, sections["encoder"]), train=tr, kbc=kbc,
                   re=sections["re"], base_dir=Path(base_dir) if base_dir else Path.cwd())

    def path(self, key: str, required: bool = True) -> Optional[Path]:
        value = self.paths.get(key)
        if not value:
            if required:
                raise ValidationError(f"config is missing paths.{key}")
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def _coerce(cls, values: dict):
    kwargs = {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    for name, value in values.items():
        if name not in types:
            raise ValidationError(f"unknown {cls.__name__} option {name!r}")
        if name == "whitelist":
            continue
        t = str(types[name])
        if value.lower() in ("none", ""):
            kwargs[name] = None
        elif "bool" in t:
            kwargs[name] = value.lower() in ("1", "true", "yes", "on")
        elif "int" in t:
            kwargs[name] = int(value)
        elif "float" in t:
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{cls.__name__}: {exc}") from None


# --------------------------------------------------------------------------
# I/O helpers


def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def provenance(seed: int, inputs: Sequence[Path]) -> str:
    parts = [f"{Path(p).name}:{_digest(Path(p))}" for p in inputs]
    return f"# glorepp {__version__} seed={seed} inputs={','.join(parts) or '-'}"


def _require(path) -> Path:
    if path is None:
        raise ValidationError("missing required input path")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"input file not found: {p}")
    return p


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


# --------------------------------------------------------------------------
# stages (shared by subcommands and the pipeline)


def stage_extract(corpus: Path, out: Path, seed: int) -> dict:
    corpus = _require(corpus)
    try:
        sentences = parse_conllu(_read_lines(corpus))
    except ConlluError as exc:
        raise PipelineError("extract", str(exc)) from None
    lines = [provenance(seed, [corpus]), "#subject\trelation\tobject\tsentence_id"]
    n = 0
    for s in sentences:
        for e1, t, e2, sid in extract_triples(s):
            lines.append(f"{e1}\t{render_relation(t)}\t{e2}\t{sid}")
            n += 1
    atomic_write(out, "\n".join(lines) + "\n")
    return {"sentences": len(sentences), "triples": n}


def _read_triples(path: Path) -> list[tuple]:
    out = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 4 columns")
        out.append(tuple(cols))
    return out


def stage_build_graph(triples: Path, kb: Path, out: Path, filt: FilterConfig, seed: int) -> dict:
    triples, kb = _require(triples), _require(kb)
    try:
        store = load_kb(_read_lines(kb), filt.whitelist)
    except ValueError as exc:
        raise PipelineError("build-graph", str(exc)) from None
    counts = align_corpus(_read_triples(triples), store)
    graph = normalize(apply_filters(counts, filt))
    if graph.n_rows == 0:
        raise PipelineError("build-graph", "no rows survive alignment and filtering")
    buf = io.StringIO()
    buf.write(provenance(seed, [triples, kb]) + "\n")
    save_graph(graph, buf)
    atomic_write(out, buf.getvalue())
    return {"textual_relations": len(counts.occurrence_counts), "graph_rows": graph.n_rows,
            "graph_edges": graph.n_edges, "kb_relations": len(graph.kb_vocab)}


def _load_graph_file(path: Path):
    try:
        return load_graph(_read_lines(_require(path)))
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def stage_train(graph_path: Path, out: Path, enc_cfg: EncoderConfig, tr_cfg: TrainConfig,
                log_path: Optional[Path], pretrained: Optional[Path]) -> dict:
    graph = _load_graph_file(graph_path)
    if graph.n_rows < 2:
        raise PipelineError("train", f"graph has {graph.n_rows} rows; need at least 2")
    vectors = None
    inputs = [Path(graph_path)]
    if pretrained is not None:
        pretrained = _require(pretrained)
        inputs.append(pretrained)
        vectors = load_word_vectors(_read_lines(pretrained))
    tr, va = split_train_validation(graph, tr_cfg.validation_fraction, tr_cfg.seed)
    model = RelationEncoder.create(graph, enc_cfg, seed=tr_cfg.seed, pretrained=vectors)
    result = train(tr, va, model, tr_cfg)
    best = result.best
    best.meta = {"provenance": provenance(tr_cfg.seed, inputs), "seed": tr_cfg.seed}
    atomic_write(out, best.to_bytes())
    if log_path is not None:
        atomic_write(log_path, provenance(tr_cfg.seed, inputs) + "\n" + result.log_tsv())
    return {"epochs": len(result.log) - 1, "best_epoch": best.epoch,
            "best_val_loss": best.val_loss, "initial_val_loss": result.log[0][2],
            "train_rows": tr.n_rows, "val_rows": va.n_rows}


def _load_checkpoint(path) -> Checkpoint:
    path = _require(path)
    try:
        return Checkpoint.load(path.read_bytes())
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"{path}: {exc}") from None


def stage_eval_re(ckpt: Path, train_bags: Path, test_bags: Path, out: Path,
                  cutoffs: Sequence[int], seed: int) -> dict:
    model = _load_checkpoint(ckpt).model
    targets, tr = load_bags(_read_lines(_require(train_bags)))
    targets2, te = load_bags(_read_lines(_require(test_bags)))
    if targets != targets2:
        raise ValidationError("train and test bag files declare different relation lists")
    report = evaluate_re(tr, te, targets, model, cutoffs=cutoffs, seed=seed)
    lines = [provenance(seed, [Path(ckpt), Path(train_bags), Path(test_bags)]),
             f"#alpha\t{report.alpha:.2f}",
             "#model\t" + "\t".join(f"P@{n}" for n in report.cutoffs)]
    for name, prec in report.rows():
        lines.append(name + "\t" + "\t".join(f"{100 * prec[n]:.1f}" for n in report.cutoffs))
    atomic_write(out, "\n".join(lines) + "\n")
    return {"alpha": report.alpha,
            **{f"re_base_P@{n}": report.base[n] for n in report.cutoffs},
            **{f"re_ensemble_P@{n}": report.ensemble[n] for n in report.cutoffs}}


def stage_eval_kbc(ckpt: Path, train_path: Path, test_path: Path, mentions: Optional[Path],
                   out: Path, cfg: KbcConfig, seed: int) -> dict:
    encoder = _load_checkpoint(ckpt).model
    inputs = [_require(ckpt), _require(train_path), _require(test_path)]
    mention_lines = []
    if mentions is not None:
        inputs.append(_require(mentions))
        mention_lines = _read_lines(Path(mentions))
    try:
        ds = load_kbc_dataset(_read_lines(Path(train_path)), _read_lines(Path(test_path)), mention_lines)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    kinds = ("distmult", "combined") if cfg.kind == "combined" else (cfg.kind,)
    label = {"distmult": "DistMult", "e": "E", "combined": "E+DistMult"}
    rows = []
    for kind in kinds:
        for use in (False, True):
            model = train_kbc(ds, encoder, dataclasses.replace(cfg, kind=kind, use_mentions=use, seed=seed))
            name = f"{'Emb-' if use else ''}{label[kind]}{'' if use else ' (KB only)'}"
            rows.append((name, evaluate_kbc(model, ds)))
    lines = [provenance(seed, inputs),
             "#model\toverall_MRR\toverall_HITS@10\twith_MRR\twith_HITS@10\twithout_MRR\twithout_HITS@10"]
    for name, rep in rows:
        cells = [f"{rep[k][m]:.2f}" for k in ("overall", "with_mentions", "without_mentions")
                 for m in ("MRR", "HITS@10")]
        lines.append(name + "\t" + "\t".join(cells))
    text = "\n".join(lines) + "\n"
    atomic_write(out, text)
    atomic_write(Path(out).with_suffix(".txt"), format_kbc_table(rows) + "\n")
    return {f"kbc_{name}_MRR": rep["overall"]["MRR"] for name, rep in rows}


def stage_export(ckpt: Path, graph_path: Path, out: Path, labeled: bool, min_count: int, seed: int) -> dict:
    model = _load_checkpoint(ckpt).model
    graph = _load_graph_file(graph_path)
    header = provenance(seed, [Path(ckpt), Path(graph_path)])
    buf = io.StringIO()
    table = export_embeddings(graph.textual_vocab, model, buf, header=header)
    if labeled:
        buf = io.StringIO()
        buf.write(header + "\n")
        write_labeled(labeled_embeddings(table, graph, min_count), buf)
    atomic_write(out, buf.getvalue())
    return {"exported": len(table)}


def stage_nn(ckpt: Path, table_path: Path, query: str, k: int, out: Optional[Path], seed: int) -> str:
    model = _load_checkpoint(ckpt).model
    table = load_embeddings(_read_lines(_require(table_path)))
    if len(table) == 0:
        raise ValidationError("embedding table is empty")
    try:
        qz = model.encode(query)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    text = provenance(seed, [Path(ckpt), Path(table_path)]) + "\n" + format_neighbors(
        nearest_neighbors(query, qz, table, k))
    if out is not None:
        atomic_write(out, text)
    return text


# --------------------------------------------------------------------------
# pipeline


def run_pipeline(config: RunConfig, out_dir) -> dict:
    """extract -> build-graph -> train -> export -> eval stages; returns a summary dict.

    Stops at the first failing stage; the summary then carries ``stopped_at``.
    """
    out_dir = Path(out_dir)
    seed = config.seed
    summary: dict = {"seed": seed}
    triples = out_dir / "triples.tsv"
    graph = out_dir / "graph.tsv"
    ckpt = out_dir / "encoder.ckpt"
    try:
        summary.update(stage_extract(config.path("corpus"), triples, seed))
        summary.update(stage_build_graph(triples, config.path("kb"), graph, config.filter, seed))
        summary.update(stage_train(graph, ckpt, config.encoder, config.train, out_dir / "loss_log.tsv",
                                   config.path("pretrained", required=False)))
        summary.update(stage_export(ckpt, graph, out_dir / "embeddings.tsv", False, 0, seed))
        stage_export(ckpt, graph, out_dir / "labeled_embeddings.tsv", True,
                     int(config.re.get("min_count", 5)), seed)
        if config.path("re_train", required=False):
            cutoffs = _cutoffs(config.re.get("cutoffs"))
            summary.update(stage_eval_re(ckpt, config.path("re_train"), config.path("re_test"),
                                         out_dir / "re_report.tsv", cutoffs, seed))
        if config.path("kbc_train", required=False):
            summary.update(stage_eval_kbc(ckpt, config.path("kbc_train"), config.path("kbc_test"),
                                          config.path("kbc_mentions", required=False),
                                          out_dir / "kbc_report.tsv", config.kbc, seed))
    except PipelineError as exc:
        summary["stopped_at"] = exc.stage
        summary["reason"] = str(exc)
    lines = [f"# glorepp {__version__} seed={seed}", "#key\tvalue"]
    for key, value in summary.items():
        if isinstance(value, float):
            value = format(value, ".17g")
        lines.append(f"{key}\t{value}")
    atomic_write(out_dir / "summary.tsv", "\n".join(lines) + "\n")
    return summary


def _cutoffs(text) -> tuple:
    if not text:
        return DEFAULT_CUTOFFS
    return tuple(int(x) for x in str(text).split(",") if x)


# --------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glorepp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"glorepp {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        return sp

    sp = cmd("extract", "shortest dependency paths from a CoNLL-U corpus")
    sp.add_argument("--corpus", type=Path)
    sp.add_argument("--out", type=Path, required=True)

    sp = cmd("build-graph", "align triples with a KB and normalize co-occurrences")
    sp.add_argument("--triples", type=Path, required=True)
    sp.add_argument("--kb", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--max-length", type=int)
    sp.add_argument("--min-occurrences", type=int)
    sp.add_argument("--keep-symmetric", action="store_true")
    sp.add_argument("--whitelist", type=Path, help="file with one KB relation id per line")

    sp = cmd("train", "train the relation encoder on a graph")
    sp.add_argument("--graph", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--log", type=Path)
    sp.add_argument("--pretrained", type=Path)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--kind", choices=("transformer", "recurrent"))
    sp.add_argument("--d-model", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--heads", type=int)
    sp.add_argument("--ff-dim", type=int)
    sp.add_argument("--z-dim", type=int)
    sp.add_argument("--warmup", type=int)

    sp = cmd("eval-re", "bag-level relation extraction with an ensemble")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--train-bags", type=Path, required=True)
    sp.add_argument("--test-bags", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--cutoffs", default=None)

    sp = cmd("eval-kbc", "KB completion with and without embedded mentions")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--train", type=Path, required=True)
    sp.add_argument("--test", type=Path, required=True)
    sp.add_argument("--mentions", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--kind", choices=("distmult", "e", "combined"))
    sp.add_argument("--dim", type=int)
    sp.add_argument("--negatives", type=int)
    sp.add_argument("--epochs", type=int)

    sp = cmd("nn", "nearest neighbours of a textual relation")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--table", type=Path, required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("-k", "--k", type=int, default=5)
    sp.add_argument("--out", type=Path)

    sp = cmd("export", "write embeddings of every graph row")
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--graph", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--labeled", action="store_true")
    sp.add_argument("--min-count", type=int, default=5)

    sp = cmd("pipeline", "run every stage from one config file")
    sp.add_argument("--out-dir", type=Path, required=True)
    return p


def _config_for(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_mapping({})
    if args.seed is not None and not os.environ.get("GLORE_SEED"):
        cfg.seed = args.seed
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.kbc = dataclasses.replace(cfg.kbc, seed=args.seed)
    return cfg


def _override(obj, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(obj, **changes) if changes else obj


def dispatch(argv: Sequence[str]) -> int:
    parser = _parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_for(args)
        cmd = args.command
        if cmd == "extract":
            stats = stage_extract(args.corpus or cfg.path("corpus"), args.out, cfg.seed)
        elif cmd == "build-graph":
            filt = _override(cfg.filter, max_length=args.max_length, min_occurrences=args.min_occurrences)
            if args.keep_symmetric:
                filt = dataclasses.replace(filt, drop_symmetric=False)
            if args.whitelist:
                wl = [x.strip() for x in _read_lines(_require(args.whitelist)) if x.strip()]
                filt = dataclasses.replace(filt, whitelist=frozenset(wl))
            stats = stage_build_graph(args.triples, args.kb or cfg.path("kb"), args.out, filt, cfg.seed)
        elif cmd == "train":
            enc = _override(cfg.encoder, encoder_kind=args.kind, d_model=args.d_model,
                            layer_count=args.layers, head_count=args.heads, ff_dim=args.ff_dim,
                            z_dim=args.z_dim)
            tr = _override(cfg.train, max_epochs=args.epochs, batch_size=args.batch_size,
                           warmup_steps=args.warmup)
            graph = args.graph or cfg.path("graph")
            if not Path(graph).is_file():
                raise ValidationError(f"input file not found: {graph}")
            stats = stage_train(graph, args.out, enc, tr, args.log,
                                args.pretrained or cfg.path("pretrained", required=False))
        elif cmd == "eval-re":
            stats = stage_eval_re(args.checkpoint, args.train_bags, args.test_bags, args.out,
                                  _cutoffs(args.cutoffs or cfg.re.get("cutoffs")), cfg.seed)
        elif cmd == "eval-kbc":
            kbc = _override(cfg.kbc, kind=args.kind, dim=args.dim, negatives=args.negatives,
                            epochs=args.epochs)
            stats = stage_eval_kbc(args.checkpoint, args.train, args.test, args.mentions, args.out,
                                   kbc, cfg.seed)
        elif cmd == "nn":
            text = stage_nn(args.checkpoint, args.table, args.query, args.k, args.out, cfg.seed)
            if args.out is None:
                sys.stdout.write(text)
            stats = {}
        elif cmd == "export":
            stats = stage_export(args.checkpoint, args.graph, args.out, args.labeled, args.min_count, cfg.seed)
        else:
            if not args.config:
                raise ValidationError("pipeline needs --config")
            stats = run_pipeline(cfg, args.out_dir)
            if "stopped_at" in stats:
                sys.stderr.write(f"glorepp: stopped at {stats['stopped_at']}: {stats['reason']}\n")
                return 1
    except ValidationError as exc:
        sys.stderr.write(f"glorepp: {exc}\n")
        return 1
    for key, value in stats.items():
        log.info("%s = %s", key, value)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
