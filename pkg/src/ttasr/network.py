"""Transducer network: conv front-end, truncated self-attention encoder,
embedding+LSTM label encoder, and the joint network.

The acoustic side subsamples time 4x through the conv strides, so one
encoder frame spans 40 ms of audio; each attention layer then sees a
banded window of 20 frames left and 5 right, which is what makes the
encoder streamable with bounded per-layer lookahead. The label side is a
unidirectional LSTM over the embedded token history (row 0 encodes the
empty history via the blank embedding). Everything is built from the
autodiff op set, so one `backward()` on the loss yields exact parameter
gradients.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError
from .features import FeatureMatrix
from .losses import ctc_loss_node, rnnt_loss_node

_CKPT_MAGIC = b"TTCK"
_LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int  # V+1 including blank
    feat_dim: int = 80
    conv_channels: tuple = (32, 32, 96)
    conv_kernels: tuple = ((41, 11), (21, 11), (21, 11))
    conv_time_strides: tuple = (2, 2, 1)
    conv_freq_strides: tuple = (2, 2, 1)
    num_blocks: int = 10
    num_heads: int = 8
    d_model: int = 256
    ffn_mult: int = 4
    left_context: int = 20
    right_context: int = 5
    embed_dim: int = 128
    lstm_layers: int = 2
    lstm_hidden: int = 700
    joint_dim: int = 256
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include blank plus >= 1 label")
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by {self.num_heads} heads"
            )
        if self.left_context < 0 or self.right_context < 0:
            raise ValueError("attention context bounds must be >= 0")
        if not (
            len(self.conv_channels)
            == len(self.conv_kernels)
            == len(self.conv_time_strides)
            == len(self.conv_freq_strides)
        ):
            raise ValueError("conv layer lists must have equal length")
        for dim in (
            self.feat_dim, self.num_blocks, self.d_model, self.ffn_mult,
            self.embed_dim, self.lstm_layers, self.lstm_hidden, self.joint_dim,
        ):
            if dim < 1:
                raise ValueError("all dimensions must be >= 1")

    @classmethod
    def tiny(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """Desk-scale configuration for tests and the overfit harness."""
        defaults = dict(
            vocab_size=vocab_size,
            conv_channels=(8, 8, 16),
            conv_kernels=((11, 5), (7, 3), (7, 3)),
            num_blocks=2,
            num_heads=4,
            d_model=64,
            ffn_mult=2,
            embed_dim=32,
            lstm_layers=2,
            lstm_hidden=64,
            joint_dim=64,
        )
        defaults.update(overrides)
        return cls(**defaults)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def time_reduction(self) -> int:
        out = 1
        for s in self.conv_time_strides:
            out *= s
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        for key in ("conv_channels", "conv_time_strides", "conv_freq_strides"):
            if key in data:
                data[key] = tuple(data[key])
        if "conv_kernels" in data:
            data["conv_kernels"] = tuple(tuple(k) for k in data["conv_kernels"])
        return cls(**data)


class _Params:
    """Flat name -> Tensor registry with seeded initialization."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.tensors: dict[str, Tensor] = {}

    def uniform(self, name: str, shape, scale: float) -> Tensor:
        data = self.rng.uniform(-scale, scale, size=shape).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
        self.tensors[name] = t
        return t

    def constant(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value.astype(self.dtype), requires_grad=True)
        self.tensors[name] = t
        return t


class Linear:
    def __init__(self, params: _Params, name: str, d_in: int, d_out: int):
        scale = 1.0 / np.sqrt(d_in)
        self.w = params.uniform(f"{name}.w", (d_in, d_out), scale)
        self.b = params.uniform(f"{name}.b", (d_out,), scale)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, params: _Params, name: str, dim: int):
        self.gamma = params.constant(f"{name}.gamma", np.ones(dim))
        self.beta = params.constant(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.standardize(x, eps=_LN_EPS) * self.gamma + self.beta


class MultiHeadSelfAttention:
    def __init__(self, params: _Params, name: str, d_model: int, num_heads: int):
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.wq = Linear(params, f"{name}.q", d_model, d_model)
        self.wk = Linear(params, f"{name}.k", d_model, d_model)
        self.wv = Linear(params, f"{name}.v", d_model, d_model)
        self.wo = Linear(params, f"{name}.out", d_model, d_model)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        frames = x.shape[0]

        def split(t):  # (T, D) -> (H, T, d_head)
            return ad.swapaxes(t.reshape((frames, self.num_heads, self.d_head)), 0, 1)

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = ad.matmul(q, ad.swapaxes(k, 1, 2)) * (1.0 / np.sqrt(self.d_head))
        attn = ad.masked_softmax(scores, mask[None, :, :])
        ctx = ad.swapaxes(ad.matmul(attn, v), 0, 1).reshape((frames, -1))
        return self.wo(ctx)


class EncoderBlock:
    """Pre-norm self-attention + position-wise feed-forward, both residual."""

    def __init__(self, params: _Params, name: str, cfg: ModelConfig):
        self.ln1 = LayerNorm(params, f"{name}.ln1", cfg.d_model)
        self.attn = MultiHeadSelfAttention(
            params, f"{name}.attn", cfg.d_model, cfg.num_heads
        )
        self.ln2 = LayerNorm(params, f"{name}.ln2", cfg.d_model)
        self.ff1 = Linear(params, f"{name}.ff1", cfg.d_model, cfg.ffn_mult * cfg.d_model)
        self.ff2 = Linear(params, f"{name}.ff2", cfg.ffn_mult * cfg.d_model, cfg.d_model)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ff2(ad.relu(self.ff1(self.ln2(x))))


def attention_band_mask(frames: int, left: int, right: int) -> np.ndarray:
    """Boolean (T, T) mask: query t may attend keys in [t-left, t+right]."""
    idx = np.arange(frames)
    rel = idx[None, :] - idx[:, None]
    return (rel >= -left) & (rel <= right)


def sinusoidal_positions(frames: int, dim: int, dtype) -> np.ndarray:
    pos = np.arange(frames)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return pe.astype(dtype)


class ConvFrontend:
    """Three 2-D convolutions over (time, freq) with 4x time reduction."""

    def __init__(self, params: _Params, name: str, cfg: ModelConfig):
        self.cfg = cfg
        self.weights = []
        c_in = 1
        freq = cfg.feat_dim
        for i, (c_out, kernel) in enumerate(zip(cfg.conv_channels, cfg.conv_kernels)):
            kt, kf = kernel
            scale = 1.0 / np.sqrt(c_in * kt * kf)
            w = params.uniform(f"{name}.conv{i}.w", (c_out, c_in, kt, kf), scale)
            b = params.uniform(f"{name}.conv{i}.b", (c_out,), scale)
            self.weights.append((w, b))
            c_in = c_out
            freq = ad.conv2d_output_len(freq, cfg.conv_freq_strides[i])
        self.out_freq = freq
        self.proj = Linear(
            params, f"{name}.proj", cfg.conv_channels[-1] * freq, cfg.d_model
        )

    def output_frames(self, frames: int) -> int:
        for s in self.cfg.conv_time_strides:
            frames = ad.conv2d_output_len(frames, s)
        return frames

    def __call__(self, values: np.ndarray) -> Tensor:
        """values: (feat_dim, T) normalized features -> (T', d_model)."""
        frames = values.shape[1]
        if frames < 1:
            raise ValueError("need at least one feature frame")
        x = Tensor(values.T[None, :, :].astype(self.cfg.np_dtype))
        for i, (w, b) in enumerate(self.weights):
            strides = (
                self.cfg.conv_time_strides[i], self.cfg.conv_freq_strides[i]
            )
            x = ad.relu(ad.conv2d(x, w, b, strides))
        out_t = x.shape[1]
        x = ad.swapaxes(x, 0, 1).reshape((out_t, -1))
        return self.proj(x)


class AcousticEncoder:
    def __init__(self, params: _Params, cfg: ModelConfig):
        self.cfg = cfg
        self.frontend = ConvFrontend(params, "encoder.frontend", cfg)
        self.blocks = [
            EncoderBlock(params, f"encoder.block{i}", cfg)
            for i in range(cfg.num_blocks)
        ]
        self.ln_final = LayerNorm(params, "encoder.ln_final", cfg.d_model)

    def __call__(self, feat: FeatureMatrix) -> Tensor:
        if not feat.normalized:
            raise ValueError("encoder expects normalized features")
        if feat.d != self.cfg.feat_dim:
            raise ValueError(
                f"feature dim {feat.d} != configured {self.cfg.feat_dim}"
            )
        x = self.frontend(feat.values)
        return self.encode_frames(x)

    def encode_frames(self, x: Tensor) -> Tensor:
        """Run the attention stack on already-projected (T', d_model) frames."""
        frames = x.shape[0]
        x = x + sinusoidal_positions(frames, self.cfg.d_model, self.cfg.np_dtype)
        mask = attention_band_mask(
            frames, self.cfg.left_context, self.cfg.right_context
        )
        for block in self.blocks:
            x = block(x, mask)
        return self.ln_final(x)

    def right_receptive_field(self, enc_frame: int) -> int:
        """Input-frame index beyond which enc_frame's output cannot depend.

        Upper bound: each attention layer adds `right_context` encoder
        frames; the conv stack adds its own kernel reach before
        subsampling.
        """
        cfg = self.cfg
        enc_reach = enc_frame + cfg.num_blocks * cfg.right_context
        bound = enc_reach
        conv_right = 0
        stride_prod = 1
        for (kt, _), st in zip(cfg.conv_kernels, cfg.conv_time_strides):
            conv_right += (kt - 1) * stride_prod
            stride_prod *= st
        return bound * stride_prod + conv_right


class LstmLayer:
    """Standard LSTM cell (input/forget/cell/output gates, +1 forget bias)."""

    def __init__(self, params: _Params, name: str, d_in: int, hidden: int):
        self.hidden = hidden
        scale = 1.0 / np.sqrt(hidden)
        self.wx = params.uniform(f"{name}.wx", (d_in, 4 * hidden), scale)
        self.wh = params.uniform(f"{name}.wh", (hidden, 4 * hidden), scale)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # forget gate starts open
        self.b = params.constant(f"{name}.b", bias)

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h_prev, c_prev = state
        gates = ad.matmul(x, self.wx) + ad.matmul(h_prev, self.wh) + self.b
        n = self.hidden
        i = ad.sigmoid(gates[:, 0 * n : 1 * n])
        f = ad.sigmoid(gates[:, 1 * n : 2 * n])
        g = ad.tanh(gates[:, 2 * n : 3 * n])
        o = ad.sigmoid(gates[:, 3 * n : 4 * n])
        c = f * c_prev + i * g
        h = o * ad.tanh(c)
        return h, c


class LabelEncoder:
    """Embedding + unidirectional LSTM stack over the label history."""

    def __init__(self, params: _Params, cfg: ModelConfig):
        self.cfg = cfg
        scale = 1.0 / np.sqrt(cfg.embed_dim)
        self.embed = params.uniform(
            "label.embed", (cfg.vocab_size, cfg.embed_dim), scale
        )
        self.layers = []
        d_in = cfg.embed_dim
        for i in range(cfg.lstm_layers):
            self.layers.append(
                LstmLayer(params, f"label.lstm{i}", d_in, cfg.lstm_hidden)
            )
            d_in = cfg.lstm_hidden

    def initial_state(self):
        dt = self.cfg.np_dtype
        return [
            (
                Tensor(np.zeros((1, self.cfg.lstm_hidden), dtype=dt)),
                Tensor(np.zeros((1, self.cfg.lstm_hidden), dtype=dt)),
            )
            for _ in self.layers
        ]

    def step(self, token_id: int, state):
        """Advance the history by one token; id 0 is the start symbol."""
        if not 0 <= token_id < self.cfg.vocab_size:
            raise ValueError(f"token id {token_id} out of range")
        x = ad.embedding(self.embed, np.asarray([token_id]))
        new_state = []
        for layer, layer_state in zip(self.layers, state):
            h, c = layer.step(x, layer_state)
            new_state.append((h, c))
            x = h
        return x, new_state

    def __call__(self, label_ids) -> Tensor:
        """(U+1, hidden): row u encodes the history y_1..y_u."""
        rows = []
        state = self.initial_state()
        out, state = self.step(0, state)
        rows.append(out)
        for y in label_ids:
            if y == 0:
                raise ValueError("label sequences may not contain blank")
            out, state = self.step(int(y), state)
            rows.append(out)
        return ad.concat(rows, axis=0)


class JointNetwork:
    """z = tanh(W1 p + W2 q + b1); logits = W3 z + b2."""

    def __init__(self, params: _Params, cfg: ModelConfig):
        j = cfg.joint_dim
        self.w1 = params.uniform(
            "joint.w1", (cfg.d_model, j), 1.0 / np.sqrt(cfg.d_model)
        )
        self.w2 = params.uniform(
            "joint.w2", (cfg.lstm_hidden, j), 1.0 / np.sqrt(cfg.lstm_hidden)
        )
        self.b1 = params.uniform("joint.b1", (j,), 1.0 / np.sqrt(j))
        self.w3 = params.uniform("joint.w3", (j, cfg.vocab_size), 1.0 / np.sqrt(j))
        self.b2 = params.uniform(
            "joint.b2", (cfg.vocab_size,), 1.0 / np.sqrt(j)
        )

    def lattice(self, acoustic: Tensor, labels_enc: Tensor) -> Tensor:
        """(T', d_model) x (U+1, hidden) -> (T', U+1, V+1) logits."""
        p = ad.matmul(acoustic, self.w1)  # (T', J)
        q = ad.matmul(labels_enc, self.w2)  # (U+1, J)
        t_dim, j = p.shape
        u_dim = q.shape[0]
        z = ad.tanh(p.reshape((t_dim, 1, j)) + q.reshape((1, u_dim, j)) + self.b1)
        return ad.matmul(z, self.w3) + self.b2

    def single(self, p_vec: np.ndarray, q_vec: np.ndarray) -> np.ndarray:
        """Numpy-only logits for one (t, u) pair (decoding hot path)."""
        z = np.tanh(p_vec @ self.w1.data + q_vec @ self.w2.data + self.b1.data)
        return z @ self.w3.data + self.b2.data


class TransducerModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self._params = _Params(config.seed, config.np_dtype)
        self.encoder = AcousticEncoder(self._params, config)
        self.label_encoder = LabelEncoder(self._params, config)
        self.joint = JointNetwork(self._params, config)

    def parameters(self) -> dict[str, Tensor]:
        return self._params.tensors

    def zero_grad(self):
        for t in self._params.tensors.values():
            t.grad = None

    def lattice_logits(self, feat: FeatureMatrix, label_ids) -> Tensor:
        acoustic = self.encoder(feat)
        labels_enc = self.label_encoder(label_ids)
        return self.joint.lattice(acoustic, labels_enc)

    def loss(self, feat: FeatureMatrix, label_ids) -> Tensor:
        return rnnt_loss_node(self.lattice_logits(feat, label_ids), label_ids)


class CtcModel:
    """Acoustic encoder plus a temporary frame-posterior projection.

    Used for the pretraining phase only; the head is dropped when the
    encoder is transplanted into the transducer.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self._params = _Params(config.seed, config.np_dtype)
        self.encoder = AcousticEncoder(self._params, config)
        self.head = Linear(self._params, "ctc_head", config.d_model, config.vocab_size)

    def parameters(self) -> dict[str, Tensor]:
        return self._params.tensors

    def zero_grad(self):
        for t in self._params.tensors.values():
            t.grad = None

    def loss(self, feat: FeatureMatrix, label_ids):
        logits = self.head(self.encoder(feat))
        return ctc_loss_node(logits, label_ids)


def save_checkpoint(path, config: ModelConfig, arrays: dict[str, np.ndarray],
                    extra: dict | None = None) -> None:
    """Single-file checkpoint: JSON header + raw little-endian f32 blocks."""
    manifest = []
    offset = 0
    blocks = []
    for name in sorted(arrays):
        block = np.ascontiguousarray(arrays[name], dtype="<f4")
        manifest.append(
            {"name": name, "shape": list(block.shape), "offset": offset}
        )
        blocks.append(block.tobytes())
        offset += len(blocks[-1])
    header = json.dumps(
        {
            "format_version": 1,
            "config": config.to_dict(),
            "params": manifest,
            "extra": extra or {},
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for block in blocks:
            fh.write(block)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        base = fh.tell()
        arrays = {}
        for entry in header["params"]:
            fh.seek(base + entry["offset"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            arrays[entry["name"]] = data.reshape(entry["shape"]).copy()
    config = ModelConfig.from_dict(header["config"])
    return config, arrays, header.get("extra", {})


def load_parameters(model, arrays: dict[str, np.ndarray], prefix: str = "",
                    strict: bool = True) -> list[str]:
    """Copy checkpoint arrays into a model's parameters.

    With a prefix, only matching names load (encoder transplants). Returns
    the names actually loaded.
    """
    params = model.parameters()
    loaded = []
    for name, tensor in params.items():
        if prefix and not name.startswith(prefix):
            continue
        if name not in arrays:
            if strict:
                raise CheckpointError(f"checkpoint missing parameter {name!r}")
            continue
        value = arrays[name]
        if tuple(value.shape) != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {value.shape}, "
                f"model {tensor.data.shape}"
            )
        tensor.data = value.astype(model.config.np_dtype)
        loaded.append(name)
    if strict and not prefix:
        unknown = set(arrays) - set(params)
        if unknown:
            raise CheckpointError(f"checkpoint has unknown parameters {sorted(unknown)}")
    return loaded
