"""Convolutional recurrent attention network and its ablations.

Variants:

* ``CRAN`` - conv blocks, BiLSTM, attention
* ``CAN``  - conv blocks, mean pooling instead of the BiLSTM, attention
* ``CRN``  - conv blocks, BiLSTM, no attention
* ``CNN``  - conv blocks, mean pooling, no attention
"""
import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    InvalidConfigError,
    InvalidInputError,
    InvalidShapeError,
    NoAttentionError,
)
from .nn import Parameter, Tensor

VARIANTS = ("CRAN", "CAN", "CRN", "CNN")


@dataclass
class ModelConfig:
    variant: str = "CRAN"
    conv_blocks: int = 4
    convs_per_block: int = 2
    filters: int = 64
    kernel: int = 3
    # a single size for every block, or one size per block
    pool: object = 2
    lstm_layers: int = 2
    lstm_hidden: int = 512
    fc_sizes: tuple = (500, 300)
    attention_dim: int = 300
    genres: int = 10
    dropout_recurrent: float = 0.2
    dropout_fc: float = 0.5
    n_mels: int = 128
    n_frames: int = 4000
    normalize_input: bool = True
    seed: int = 0

    def __post_init__(self):
        self.variant = str(self.variant).upper()
        self.fc_sizes = tuple(int(s) for s in self.fc_sizes)
        if not isinstance(self.pool, int):
            self.pool = tuple(int(p) for p in self.pool)
        self.validate()

    @property
    def pool_sizes(self):
        if isinstance(self.pool, int):
            return (self.pool,) * self.conv_blocks
        return self.pool

    @property
    def time_slots(self):
        return self.n_frames // math.prod(self.pool_sizes)

    @property
    def recurrent(self):
        return self.variant in ("CRAN", "CRN")

    @property
    def attention(self):
        return self.variant in ("CRAN", "CAN")

    def validate(self):
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.conv_blocks < 1 or self.convs_per_block < 1 or self.filters < 1:
            raise InvalidConfigError("conv_blocks, convs_per_block and filters must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidConfigError(f"kernel must be odd, got {self.kernel}")
        if len(self.pool_sizes) != self.conv_blocks or min(self.pool_sizes) < 1:
            raise InvalidConfigError(f"need {self.conv_blocks} positive pool sizes, got {self.pool!r}")
        if self.n_frames % math.prod(self.pool_sizes):
            raise InvalidConfigError(
                f"{self.n_frames} frames not divisible by total pooling {math.prod(self.pool_sizes)}")
        if not self.fc_sizes:
            raise InvalidConfigError("fc_sizes must not be empty")
        if self.attention_dim != self.fc_sizes[-1]:
            raise InvalidConfigError(
                f"attention_dim ({self.attention_dim}) must equal the last FC size ({self.fc_sizes[-1]})")
        if self.lstm_layers < 1 or self.lstm_hidden < 1 or self.genres < 2:
            raise InvalidConfigError("lstm_layers, lstm_hidden must be positive and genres >= 2")
        for rate in (self.dropout_recurrent, self.dropout_fc):
            if not 0.0 <= rate < 1.0:
                raise InvalidConfigError(f"dropout rate {rate} not in [0, 1)")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["fc_sizes"] = list(self.fc_sizes)
        d["pool"] = self.pool if isinstance(self.pool, int) else list(self.pool)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def tiny(cls, **overrides):
        """Small config: 2 blocks, 8 filters, 16 time slots, H=8, d=8, G=3.

        With the full 4000-frame input the two pools are 10 and 25.
        """
        base = dict(conv_blocks=2, filters=8, pool=(10, 25), lstm_hidden=8,
                    fc_sizes=(16, 8), attention_dim=8, genres=3)
        base.update(overrides)
        return cls(**base)


@dataclass
class ForwardOutputs:
    logits: Tensor
    genre_probs: np.ndarray
    attention: Optional[np.ndarray]
    context: Optional[np.ndarray]
    pooled: Optional[np.ndarray]
    u_prime: np.ndarray


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class CRAN:
    """The network; holds named Parameters and runs forward passes."""

    def __init__(self, config):
        self.config = config
        self.params = {}
        self._build(np.random.default_rng(config.seed))

    def _add(self, name, value):
        self.params[name] = Parameter(value, name=name)

    def _build(self, rng):
        cfg = self.config
        c_in = cfg.n_mels
        for b in range(cfg.conv_blocks):
            for j in range(cfg.convs_per_block):
                shape = (cfg.filters, c_in, cfg.kernel)
                self._add(f"conv{b}_{j}.w", _glorot(rng, shape, c_in * cfg.kernel, cfg.filters * cfg.kernel))
                self._add(f"conv{b}_{j}.b", np.zeros(cfg.filters))
                c_in = cfg.filters
        H = cfg.lstm_hidden
        if cfg.recurrent:
            d_in = cfg.filters
            for layer in range(cfg.lstm_layers):
                for direction in ("fw", "bw"):
                    prefix = f"lstm{layer}.{direction}"
                    self._add(f"{prefix}.W", _glorot(rng, (4 * H, d_in), d_in, 4 * H))
                    self._add(f"{prefix}.U", _glorot(rng, (4 * H, H), H, 4 * H))
                    bias = np.zeros(4 * H)
                    bias[H:2 * H] = 1.0
                    self._add(f"{prefix}.b", bias)
                d_in = 2 * H
        else:
            self._add("proj.W", _glorot(rng, (2 * H, cfg.filters), cfg.filters, 2 * H))
            self._add("proj.b", np.zeros(2 * H))
        d_in = 2 * H
        for i, size in enumerate(cfg.fc_sizes):
            self._add(f"fc{i}.W", _glorot(rng, (size, d_in), d_in, size))
            self._add(f"fc{i}.b", np.zeros(size))
            d_in = size
        d = cfg.attention_dim
        if cfg.attention:
            self._add("attn.ts_W", _glorot(rng, (d, cfg.filters), cfg.filters, d))
            self._add("attn.a_W", _glorot(rng, (1, d), d, 1))
            self._add("attn.P", np.eye(d))
        self._add("out.W", _glorot(rng, (cfg.genres, d), d, cfg.genres))
        self._add("out.b", np.zeros(cfg.genres))

    def parameters(self):
        return list(self.params.values())

    def prepare(self, mel):
        """Input array for the network from a MelSpectrogram or raw array."""
        values = getattr(mel, "values", mel)
        x = np.asarray(values, dtype=np.float64)
        cfg = self.config
        if x.shape != (cfg.n_mels, cfg.n_frames):
            raise InvalidShapeError(f"model expects {cfg.n_mels}x{cfg.n_frames} input, got {x.shape}")
        if cfg.normalize_input:
            peak = x.max()
            if peak > 0:
                x = x / peak
        return x

    def feature_extract(self, mel):
        """Conv/pool blocks; returns the T x filters slot sequence."""
        p = self.params
        h = Tensor(self.prepare(mel))
        for b, pool in enumerate(self.config.pool_sizes):
            for j in range(self.config.convs_per_block):
                h = nn.elu(nn.conv1d(h, p[f"conv{b}_{j}.w"], p[f"conv{b}_{j}.b"]))
            h = nn.maxpool1d(h, pool)
        return nn.transpose(h)

    def summarize(self, U, training=False, rng=None):
        """u' from the slot sequence: BiLSTM final states, or projected mean."""
        cfg, p = self.config, self.params
        if cfg.recurrent:
            seq, final = U, None
            for layer in range(cfg.lstm_layers):
                seq = nn.dropout(seq, cfg.dropout_recurrent, training, rng)
                fw = tuple(p[f"lstm{layer}.fw.{k}"] for k in "WUb")
                bw = tuple(p[f"lstm{layer}.bw.{k}"] for k in "WUb")
                seq, final = nn.bilstm(seq, fw, bw)
            return final
        return nn.dense(nn.mean_rows(U), p["proj.W"], p["proj.b"])

    def fc_stack(self, u_prime, training=False, rng=None):
        """tanh of the FC stack output (the vector shared by both attention gates)."""
        p = self.params
        h = u_prime
        last = len(self.config.fc_sizes) - 1
        for i in range(last + 1):
            h = nn.dense(h, p[f"fc{i}.W"], p[f"fc{i}.b"])
            if i < last:
                h = nn.elu(h)
            h = nn.dropout(h, self.config.dropout_fc, training, rng)
        return nn.tanh(h)

    def attend(self, U, fc_vec):
        """Similarity vectors, soft attention and the context vector.

        Returns ``(alpha, z, m)`` as Tensors.
        """
        p = self.params
        T = U.shape[0]
        g = nn.tanh(nn.dense_rows(U, p["attn.ts_W"]))
        v = nn.elementwise_mul(g, nn.repeat_rows(fc_vec, T))
        scores = nn.tanh(nn.transpose(nn.dense_rows(v, p["attn.a_W"])))
        alpha = nn.softmax(nn.row(scores, 0))
        z = nn.dense(nn.weighted_sum_rows(alpha, v), p["attn.P"])
        m = nn.elementwise_mul(nn.tanh(z), fc_vec)
        return alpha, z, m

    def head(self, U, training=False, rng=None):
        u_prime = self.summarize(U, training, rng)
        fc_vec = self.fc_stack(u_prime, training, rng)
        alpha = z = m = None
        if self.config.attention:
            alpha, z, m = self.attend(U, fc_vec)
            feat = m
        else:
            feat = fc_vec
        logits = nn.dense(feat, self.params["out.W"], self.params["out.b"])
        shifted = np.exp(logits.data - logits.data.max())
        return ForwardOutputs(
            logits=logits,
            genre_probs=shifted / shifted.sum(),
            attention=None if alpha is None else alpha.data.copy(),
            context=None if m is None else m.data.copy(),
            pooled=None if z is None else z.data.copy(),
            u_prime=u_prime.data.copy(),
        )

    def forward(self, mel, training=False, rng=None):
        if training and rng is None:
            raise InvalidConfigError("training-mode forward needs a random generator for dropout")
        return self.head(self.feature_extract(mel), training, rng)

    def attention_profile(self, mel):
        if not self.config.attention:
            raise NoAttentionError(
                f"variant {self.config.variant} has no attention; use the energy extractor instead")
        return self.forward(mel).attention


def loss(outputs, target):
    """Categorical cross-entropy of the genre distribution against ``target``."""
    value, _ = nn.softmax_cross_entropy(outputs.logits, target)
    return value


def predict_topk(model, mel, k):
    """Genre indices of the k most probable genres; ties go to the lower index."""
    G = model.config.genres
    if not 1 <= k <= G:
        raise InvalidInputError(f"k must be in [1, {G}], got {k}")
    probs = model.forward(mel).genre_probs
    return topk_from_probs(probs, k)


def topk_from_probs(probs, k):
    return [int(i) for i in np.argsort(-np.asarray(probs), kind="stable")[:k]]


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"CRAN"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    parameters: dict
    optimizer: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, metadata=None):
        params = {name: p.data.copy() for name, p in model.params.items()}
        optimizer = {
            name: {"m": p.adam_m.copy(), "v": p.adam_v.copy(), "step": int(p.step_count)}
            for name, p in model.params.items()
        }
        return cls(model.config, params, optimizer, dict(metadata or {}))

    def build_model(self):
        model = CRAN(self.config)
        if set(model.params) != set(self.parameters):
            raise CheckpointError("checkpoint parameters do not match the configured architecture")
        for name, p in model.params.items():
            value = self.parameters[name]
            if value.shape != p.shape:
                raise CheckpointError(f"parameter {name} has shape {value.shape}, expected {p.shape}")
            p.data = value.copy()
            state = self.optimizer.get(name)
            if state:
                p.adam_m = state["m"].copy()
                p.adam_v = state["v"].copy()
                p.step_count = int(state["step"])
        return model


def _pack_tensor(name, arr):
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def encode_checkpoint(ckpt):
    steps = {name: st["step"] for name, st in ckpt.optimizer.items()}
    header = {
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config.hash(),
        "metadata": ckpt.metadata,
        "step_counts": steps,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tensors = [(name, arr) for name, arr in sorted(ckpt.parameters.items())]
    for name, st in sorted(ckpt.optimizer.items()):
        tensors.append((f"adam_m:{name}", st["m"]))
        tensors.append((f"adam_v:{name}", st["v"]))
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    parts.extend(_pack_tensor(n, a) for n, a in tensors)
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint is truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def decode_checkpoint(blob, expected_config=None):
    r = _Reader(blob)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a CRAN checkpoint (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    try:
        header = json.loads(r.take(r.u32()).decode())
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint header is corrupt: {exc}") from exc
    if config.hash() != header.get("config_hash"):
        raise CheckpointVersionError("checkpoint config hash mismatch")
    if expected_config is not None and expected_config.hash() != config.hash():
        raise CheckpointVersionError("checkpoint was written for a different model config")
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = math.prod(dims)
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint tensors")
    params = {n: a for n, a in tensors.items() if ":" not in n}
    steps = header.get("step_counts", {})
    optimizer = {}
    for name in params:
        if f"adam_m:{name}" in tensors:
            optimizer[name] = {"m": tensors[f"adam_m:{name}"], "v": tensors[f"adam_v:{name}"],
                               "step": int(steps.get(name, 0))}
    return Checkpoint(config, params, optimizer, header.get("metadata", {}))


def save(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def load(path, expected_config=None):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), expected_config)
