"""Sequence encoder mapping a textual relation to an embedding ``z``.

Training fits ``softmax(W z + b)`` to the co-occurrence distribution of each
textual relation in a :class:`~glorepp.relgraph.RelationGraph`.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .deppath import TextualRelation, parse_relation, render_relation
from .numkit import (
    Adam,
    Tensor,
    layer_norm,
    masked_mean,
    scaled_dot_product_attention,
    sinusoidal_positions,
    soft_cross_entropy,
    softmax,
    where,
)
from .relgraph import RelationGraph

__all__ = [
    "PAD",
    "UNK",
    "Vocab",
    "EncoderConfig",
    "TrainConfig",
    "RelationEncoder",
    "Checkpoint",
    "TrainResult",
    "TrainingDiverged",
    "build_vocab",
    "load_word_vectors",
    "init_params",
    "train",
    "export_embeddings",
    "load_embeddings",
    "EmbeddingTable",
]

log = logging.getLogger(__name__)

# Uppercase never survives lexical normalization, so these cannot collide with path tokens.
PAD = "[PAD]"
UNK = "[UNK]"

CHECKPOINT_MAGIC = b"GLOREPP-CKPT\n"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


class Vocab:
    """Token <-> id map shared by lexical and direction-tagged dependency tokens."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            tokens = [PAD, UNK] + [t for t in tokens if t not in (PAD, UNK)]
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def id(self, token: str) -> int:
        return self.index.get(token, 1)

    def ids(self, relation) -> list[int]:
        text = relation if isinstance(relation, str) else render_relation(relation)
        return [self.id(tok) for tok in text.split(" ")]

    @staticmethod
    def is_dependency(token: str) -> bool:
        return token.startswith("<")


def build_vocab(graph: RelationGraph) -> Vocab:
    if graph.n_rows == 0:
        raise ValueError("cannot build a vocabulary from an empty graph")
    seen: dict[str, None] = {}
    for t in graph.textual_vocab:
        for tok in t.split(" "):
            seen.setdefault(tok, None)
    return Vocab([PAD, UNK, *sorted(seen)])


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 48
    layer_count: int = 6
    head_count: int = 6
    ff_dim: int = 256
    z_dim: int = 64
    max_length: int = 10
    encoder_kind: str = "transformer"
    dropout: float = 0.0
    word_dim: Optional[int] = None  # embedding width; None means d_model

    def __post_init__(self):
        if self.encoder_kind not in ("transformer", "recurrent"):
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.encoder_kind == "transformer" and self.d_model % self.head_count:
            raise ValueError("d_model must be divisible by head_count")
        if min(self.d_model, self.layer_count, self.head_count, self.ff_dim,
               self.z_dim, self.max_length) < 1:
            raise ValueError("encoder dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def embed_dim(self) -> int:
        return self.word_dim or self.d_model


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    validation_fraction: float = 0.05
    warmup_steps: int = 400
    lr_scale: float = 1.0
    patience: Optional[int] = None
    pretrained_path: Optional[str] = None

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")


# --------------------------------------------------------------------------
# parameters


def load_word_vectors(lines: Iterable[str]) -> dict[str, np.ndarray]:
    """Read ``token v1 ... vd`` lines (GloVe text format)."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise ValueError(f"line {lineno}: vector line needs a token and values")
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric vector value") from None
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ValueError(f"line {lineno}: dimension {vec.size} differs from {dim}")
        vectors[parts[0]] = vec
    return vectors


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(vocab: Vocab, kb_size: int, config: EncoderConfig,
                pretrained: Optional[dict] = None, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded parameters; lexical rows come from ``pretrained`` when available.

    With pretrained vectors the embedding width is the vectors' width, and an
    ``input_proj`` matrix maps it to ``d_model`` if the two differ.
    """
    rng = np.random.default_rng(seed)
    d = config.d_model
    e_dim = config.embed_dim
    if pretrained:
        file_dim = len(next(iter(pretrained.values())))
        if config.word_dim is not None and config.word_dim != file_dim:
            raise ValueError(f"word_dim {config.word_dim} != pretrained dimension {file_dim}")
        e_dim = file_dim
    p: dict[str, np.ndarray] = {}
    embed = _uniform(rng, (len(vocab), e_dim), e_dim)
    embed[vocab.pad_id] = 0.0
    if pretrained:
        for i, tok in enumerate(vocab.tokens):
            if i > 1 and not Vocab.is_dependency(tok) and tok in pretrained:
                embed[i] = pretrained[tok]
    p["embed"] = embed
    if e_dim != d:
        p["input_proj"] = _uniform(rng, (e_dim, d), e_dim)

    if config.encoder_kind == "transformer":
        for layer in range(config.layer_count):
            pre = f"layer{layer}."
            for w in ("wq", "wk", "wv", "wo"):
                p[pre + w] = _uniform(rng, (d, d), d)
                p[pre + "b" + w[1]] = np.zeros(d)
            p[pre + "ln1_g"] = np.ones(d)
            p[pre + "ln1_b"] = np.zeros(d)
            p[pre + "ff_w1"] = _uniform(rng, (d, config.ff_dim), d)
            p[pre + "ff_b1"] = np.zeros(config.ff_dim)
            p[pre + "ff_w2"] = _uniform(rng, (config.ff_dim, d), config.ff_dim)
            p[pre + "ff_b2"] = np.zeros(d)
            p[pre + "ln2_g"] = np.ones(d)
            p[pre + "ln2_b"] = np.zeros(d)
    else:
        for gate in ("z", "r", "h"):
            p[f"gru.w{gate}"] = _uniform(rng, (d, d), d)
            p[f"gru.u{gate}"] = _uniform(rng, (d, d), d)
            p[f"gru.b{gate}"] = np.zeros(d)

    p["pool_w"] = _uniform(rng, (d, config.z_dim), d)
    p["pool_b"] = np.zeros(config.z_dim)
    p["out_w"] = _uniform(rng, (config.z_dim, kb_size), config.z_dim)
    p["out_b"] = np.zeros(kb_size)
    return p


# --------------------------------------------------------------------------
# model


@dataclass
class RelationEncoder:
    """Config, vocabulary and parameters of one encoder, plus the KB label space."""

    config: EncoderConfig
    vocab: Vocab
    kb_vocab: list
    params: dict

    @classmethod
    def create(cls, graph: RelationGraph, config: EncoderConfig, seed: int = 0,
               pretrained: Optional[dict] = None) -> "RelationEncoder":
        vocab = build_vocab(graph)
        params = init_params(vocab, len(graph.kb_vocab), config, pretrained, seed)
        return cls(config, vocab, list(graph.kb_vocab), params)

    # -- batching -------------------------------------------------------

    def token_ids(self, relations: Sequence) -> tuple[np.ndarray, np.ndarray]:
        seqs = [self.vocab.ids(r) for r in relations]
        for r, s in zip(relations, seqs):
            if len(s) > self.config.max_length:
                raise ValueError(f"relation longer than {self.config.max_length}: {r}")
        length = max(len(s) for s in seqs)
        ids = np.full((len(seqs), length), self.vocab.pad_id, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = s
        return ids, ids != self.vocab.pad_id

    # -- forward --------------------------------------------------------

    def forward_z(self, ids: np.ndarray, mask: np.ndarray, params: dict,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
        """Tensor-valued embedding ``z`` for a padded id batch; ``params`` maps names to Tensors."""
        cfg = self.config
        x = params["embed"].take_rows(ids)
        if "input_proj" in params:
            x = x @ params["input_proj"]
        if cfg.encoder_kind == "transformer":
            x = x + sinusoidal_positions(ids.shape[1], cfg.d_model)
            h = self._transformer(x, mask, params, rng)
            pooled = masked_mean(h, mask)
        else:
            pooled = self._gru(x, mask, params)
        return pooled @ params["pool_w"] + params["pool_b"]

    def _dropout(self, x: Tensor, rng) -> Tensor:
        rate = self.config.dropout
        if rng is None or rate == 0.0:
            return x
        keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * keep

    def _transformer(self, x: Tensor, mask: np.ndarray, p: dict, rng) -> Tensor:
        cfg = self.config
        B, L = mask.shape
        H, dh = cfg.head_count, cfg.d_model // cfg.head_count
        key_mask = mask[:, None, None, :]

        def heads(t: Tensor) -> Tensor:
            return t.reshape(B, L, H, dh).transpose(0, 2, 1, 3)

        for layer in range(cfg.layer_count):
            pre = f"layer{layer}."
            q = heads(x @ p[pre + "wq"] + p[pre + "bq"])
            k = heads(x @ p[pre + "wk"] + p[pre + "bk"])
            v = heads(x @ p[pre + "wv"] + p[pre + "bv"])
            att = scaled_dot_product_attention(q, k, v, key_mask)
            att = att.transpose(0, 2, 1, 3).reshape(B, L, cfg.d_model)
            att = att @ p[pre + "wo"] + p[pre + "bo"]
            x = layer_norm(x + self._dropout(att, rng), p[pre + "ln1_g"], p[pre + "ln1_b"])
            ff = (x @ p[pre + "ff_w1"] + p[pre + "ff_b1"]).relu() @ p[pre + "ff_w2"] + p[pre + "ff_b2"]
            x = layer_norm(x + self._dropout(ff, rng), p[pre + "ln2_g"], p[pre + "ln2_b"])
        return x

    def _gru(self, x: Tensor, mask: np.ndarray, p: dict) -> Tensor:
        B, L = mask.shape
        h = Tensor(np.zeros((B, self.config.d_model)))
        for t in range(L):
            xt = x[:, t, :]
            z = (xt @ p["gru.wz"] + h @ p["gru.uz"] + p["gru.bz"]).sigmoid()
            r = (xt @ p["gru.wr"] + h @ p["gru.ur"] + p["gru.br"]).sigmoid()
            cand = (xt @ p["gru.wh"] + (r * h) @ p["gru.uh"] + p["gru.bh"]).tanh()
            h_new = h + z * (cand - h)
            h = where(mask[:, t : t + 1], h_new, h)
        return h

    def _constants(self) -> dict:
        return {k: Tensor(v) for k, v in self.params.items()}

    # -- public inference ------------------------------------------------

    def encode_many(self, relations: Sequence, batch_size: int = 256) -> np.ndarray:
        consts = self._constants()
        out = []
        for lo in range(0, len(relations), batch_size):
            ids, mask = self.token_ids(relations[lo : lo + batch_size])
            out.append(self.forward_z(ids, mask, consts).data)
        if not out:
            return np.zeros((0, self.config.z_dim))
        return np.concatenate(out, axis=0)

    def encode(self, relation) -> np.ndarray:
        return self.encode_many([relation])[0]

    def logits_many(self, relations: Sequence) -> np.ndarray:
        z = self.encode_many(relations)
        return z @ self.params["out_w"] + self.params["out_b"]

    def predict(self, relation) -> np.ndarray:
        """``softmax(W z + b)`` over ``kb_vocab``."""
        return softmax(self.logits_many([relation])[0])

    def predict_many(self, relations: Sequence) -> np.ndarray:
        return softmax(self.logits_many(relations))

    # -- loss -------------------------------------------------------------

    def loss_tensor(self, relations: Sequence, targets: np.ndarray, params: dict,
                    rng=None) -> Tensor:
        if len(relations) == 0:
            raise ValueError("empty batch")
        ids, mask = self.token_ids(relations)
        z = self.forward_z(ids, mask, params, rng)
        logits = z @ params["out_w"] + params["out_b"]
        return soft_cross_entropy(logits, targets)

    def batch_loss(self, relations: Sequence, targets: np.ndarray,
                   rng=None) -> tuple[float, dict]:
        """Mean cross-entropy over the batch and its gradient for every parameter."""
        leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in self.params.items()}
        loss = self.loss_tensor(relations, targets, leaves, rng)
        loss.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in leaves.items()}
        return loss.item(), grads

    def mean_loss(self, relations: Sequence, targets: np.ndarray, batch_size: int = 256) -> float:
        consts = self._constants()
        total = 0.0
        for lo in range(0, len(relations), batch_size):
            part = relations[lo : lo + batch_size]
            total += self.loss_tensor(part, targets[lo : lo + batch_size], consts).item() * len(part)
        return total / len(relations)

    def copy(self) -> "RelationEncoder":
        return RelationEncoder(self.config, self.vocab, list(self.kb_vocab),
                               {k: v.copy() for k, v in self.params.items()})


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: RelationEncoder
    epoch: int
    val_loss: float
    meta: dict = field(default_factory=dict)  # provenance, stored in the header

    def save(self, out) -> None:
        """Write to a binary file object: magic, JSON header line, raw float64 tensors."""
        names = list(self.model.params)
        tensors, offset = [], 0
        for n in names:
            arr = self.model.params[n]
            tensors.append({"name": n, "shape": list(arr.shape), "offset": offset})
            offset += arr.size * 8
        header = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.model.config),
            "vocab": self.model.vocab.tokens,
            "kb_vocab": self.model.kb_vocab,
            "epoch": self.epoch,
            "val_loss": self.val_loss,
            "tensors": tensors,
            "meta": self.meta,
        }
        out.write(CHECKPOINT_MAGIC)
        out.write(json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8") + b"\n")
        for n in names:
            out.write(np.ascontiguousarray(self.model.params[n], dtype="<f8").tobytes())

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.save(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, stream) -> "Checkpoint":
        data = stream.read() if hasattr(stream, "read") else bytes(stream)
        if not data.startswith(CHECKPOINT_MAGIC):
            raise ValueError("not a checkpoint file")
        rest = data[len(CHECKPOINT_MAGIC):]
        nl = rest.index(b"\n")
        header = json.loads(rest[:nl].decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        body = rest[nl + 1 :]
        params = {}
        for spec in header["tensors"]:
            n = int(np.prod(spec["shape"], dtype=np.int64))
            raw = body[spec["offset"] : spec["offset"] + 8 * n]
            if len(raw) != 8 * n:
                raise ValueError(f"checkpoint truncated in tensor {spec['name']}")
            params[spec["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(spec["shape"])
        model = RelationEncoder(EncoderConfig(**header["config"]), Vocab(header["vocab"]),
                                header["kb_vocab"], params)
        return cls(model, header["epoch"], header["val_loss"], header.get("meta", {}))


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    best: Checkpoint
    log: list  # (epoch, train_loss, val_loss); epoch 0 is the untrained model
    seen_relations: set = field(default_factory=set)

    def log_tsv(self) -> str:
        lines = ["#epoch\ttrain_loss\tval_loss"]
        lines += [f"{e}\t{format(tr, '.17g')}\t{format(va, '.17g')}" for e, tr, va in self.log]
        return "\n".join(lines) + "\n"


def train(train_graph: RelationGraph, val_graph: RelationGraph, model: RelationEncoder,
          config: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Seeded minibatch Adam; keeps the parameters with the lowest validation loss."""
    if train_graph.n_rows == 0 or val_graph.n_rows == 0:
        raise ValueError("training and validation graphs must be non-empty")
    if set(train_graph.textual_vocab) & set(val_graph.textual_vocab):
        raise ValueError("training and validation relations overlap")
    if list(train_graph.kb_vocab) != list(model.kb_vocab) or list(val_graph.kb_vocab) != list(model.kb_vocab):
        raise ValueError("graph KB vocabulary does not match the model output layer")

    tr_rel = list(train_graph.textual_vocab)
    tr_tgt = train_graph.dense_targets()
    va_rel = list(val_graph.textual_vocab)
    va_tgt = val_graph.dense_targets()

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, d_model=model.config.d_model, warmup_steps=config.warmup_steps,
               lr_scale=config.lr_scale)
    log_rows = [(0, model.mean_loss(tr_rel, tr_tgt), model.mean_loss(va_rel, va_tgt))]
    seen: set = set()
    best: Optional[Checkpoint] = None
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(tr_rel))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = [tr_rel[i] for i in idx]
            seen.update(batch)
            loss, grads = model.batch_loss(batch, tr_tgt[idx], rng)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            opt.step(grads)
            total += loss * len(idx)
        val = model.mean_loss(va_rel, va_tgt)
        if not math.isfinite(val):
            raise TrainingDiverged(epoch)
        log_rows.append((epoch, total / len(tr_rel), val))
        if progress is not None:
            progress(epoch, total / len(tr_rel), val)
        if best is None or val < best.val_loss:
            best = Checkpoint(model.copy(), epoch, val)
            since_best = 0
        else:
            since_best += 1
            if config.patience is not None and since_best >= config.patience:
                break
    return TrainResult(best, log_rows, seen)


# --------------------------------------------------------------------------
# embedding tables


@dataclass
class EmbeddingTable:
    relations: list
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.relations)

    def lookup(self, relation: str) -> np.ndarray:
        return self.vectors[self.relations.index(relation)]


def export_embeddings(relations: Sequence, model: RelationEncoder, out: TextIO,
                      header: str = "") -> EmbeddingTable:
    """Write ``relation<TAB>z1 z2 ...`` lines; over-length relations are skipped."""
    keep = []
    for r in relations:
        text = r if isinstance(r, str) else render_relation(r)
        if len(text.split(" ")) > model.config.max_length:
            log.warning("skipping over-length relation %s", text)
            continue
        keep.append(text)
    vectors = model.encode_many(keep) if keep else np.zeros((0, model.config.z_dim))
    if header:
        out.write(header.rstrip("\n") + "\n")
    out.write(f"#relation\tz[{model.config.z_dim}]\n")
    for text, z in zip(keep, vectors):
        out.write(text + "\t" + " ".join(format(float(v), ".17g") for v in z) + "\n")
    return EmbeddingTable(keep, vectors)


def load_embeddings(lines: Iterable[str]) -> EmbeddingTable:
    rels, vecs = [], []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"line {lineno}: expected relation<TAB>vector")
        rels.append(parts[0])
        vecs.append([float(x) for x in parts[-1].split(" ")])
    if not vecs:
        return EmbeddingTable([], np.zeros((0, 0)))
    return EmbeddingTable(rels, np.array(vecs, dtype=np.float64))
