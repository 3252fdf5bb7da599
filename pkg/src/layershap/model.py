"""A small pre-norm decoder-only transformer written directly in numpy.

Each block has the seven inner matrices of a LLaMA-style layer: the attention
projections (q, k, v, o) and a gated feed-forward network (gate, up, down),
with RMSNorm before each half and rotary position embeddings on q and k.
Matrices are stored ``(out_features, in_features)`` and applied as ``x @ W.T``.

Weights are stored as float32. Arithmetic runs in float64 unless a ``dtype``
is passed; training uses float32 for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterator

import numpy as np
from scipy.special import expit

from .coalition import LayerSet
from .errors import InvalidInputError, InvalidParameterError, NumericFailure

INNER_NAMES = ("q_proj", "k_proj", "v_proj", "o_proj", "gate_proj", "up_proj", "down_proj")
NORM_NAMES = ("attn_norm", "ffn_norm")
RMS_EPS = 1e-5
ROPE_BASE = 10000.0


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 6
    ffn_hidden: int = 176
    max_seq_len: int = 256
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seed" and getattr(self, f.name) <= 0:
                raise InvalidParameterError(f"{f.name} must be positive")
        if self.d_model % self.n_heads:
            raise InvalidParameterError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2:
            raise InvalidParameterError("head dimension must be even for rotary embeddings")
        if self.seed < 0:
            raise InvalidParameterError("seed must be non-negative")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class LayerWeights:
    q_proj: np.ndarray
    k_proj: np.ndarray
    v_proj: np.ndarray
    o_proj: np.ndarray
    gate_proj: np.ndarray
    up_proj: np.ndarray
    down_proj: np.ndarray
    attn_norm: np.ndarray
    ffn_norm: np.ndarray

    def matrices(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in INNER_NAMES]

    def arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    embedding: np.ndarray
    layers: list[LayerWeights]
    final_norm: np.ndarray
    head: np.ndarray
    version: int = field(default=1)

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """All parameter arrays in checkpoint order."""
        yield "embedding", self.embedding
        for i, layer in enumerate(self.layers):
            for name, arr in layer.arrays():
                yield f"layers.{i}.{name}", arr
        yield "final_norm", self.final_norm
        yield "head", self.head

    def map_arrays(self, fn) -> ModelCheckpoint:
        layers = [LayerWeights(**{n: fn(a) for n, a in layer.arrays()}) for layer in self.layers]
        return replace(self, embedding=fn(self.embedding), layers=layers,
                       final_norm=fn(self.final_norm), head=fn(self.head))

    def copy(self) -> ModelCheckpoint:
        return self.map_arrays(np.copy)

    def astype(self, dtype) -> ModelCheckpoint:
        return self.map_arrays(lambda a: np.array(a, dtype=dtype))

    def equals(self, other: ModelCheckpoint) -> bool:
        """Bit-exact equality of config and every array."""
        if self.config != other.config or self.version != other.version:
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.named_arrays(), other.named_arrays())
        )


def init_model(config: ModelConfig) -> ModelCheckpoint:
    rng = np.random.default_rng(config.seed)
    d, f, V = config.d_model, config.ffn_hidden, config.vocab_size
    std = 0.02
    resid_std = std / np.sqrt(2 * config.n_layers)

    def normal(shape, s):
        return (rng.standard_normal(shape) * s).astype(np.float32)

    embedding = normal((V, d), std)
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            q_proj=normal((d, d), std),
            k_proj=normal((d, d), std),
            v_proj=normal((d, d), std),
            o_proj=normal((d, d), resid_std),
            gate_proj=normal((f, d), std),
            up_proj=normal((f, d), std),
            down_proj=normal((d, f), resid_std),
            attn_norm=np.ones(d, np.float32),
            ffn_norm=np.ones(d, np.float32),
        ))
    return ModelCheckpoint(config, embedding, layers, np.ones(d, np.float32), normal((V, d), std))


def _rope_tables(length: int, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    freqs = ROPE_BASE ** (-np.arange(half) / half)
    angles = np.arange(length)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def _rope(x, cos, sin, inverse=False):
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    if inverse:
        sin = -sin
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _rmsnorm(x, gain):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    n = x * r
    return n * gain, n, r


def _rmsnorm_backward(dy, gain, n, r):
    dgain = (dy * n).reshape(-1, n.shape[-1]).sum(axis=0)
    dn = dy * gain
    dx = r * (dn - n * np.mean(dn * n, axis=-1, keepdims=True))
    return dx, dgain


def _split_heads(x, n_heads):
    B, L, d = x.shape
    return x.reshape(B, L, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, L, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, H * hd)


def _check_tokens(model: ModelCheckpoint, tokens) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] == 0:
        raise InvalidInputError(f"tokens must be a non-empty 1-D or 2-D array, got shape {tokens.shape}")
    if not np.issubdtype(tokens.dtype, np.integer):
        raise InvalidInputError("tokens must be integers")
    if tokens.shape[1] > model.config.max_seq_len:
        raise InvalidInputError(
            f"sequence length {tokens.shape[1]} exceeds max_seq_len {model.config.max_seq_len}"
        )
    if tokens.min() < 0 or tokens.max() >= model.config.vocab_size:
        raise InvalidInputError(f"token ids must lie in [0, {model.config.vocab_size})")
    return tokens.astype(np.int64)


@dataclass
class ForwardResult:
    logits: np.ndarray
    hidden: list[np.ndarray] | None = None
    input_norms: list[dict[str, np.ndarray]] | None = None
    cache: dict | None = None


def _active_mask(model: ModelCheckpoint, active: LayerSet | None) -> list[bool]:
    T = model.config.n_layers
    if active is None:
        return [True] * T
    if active.population != T:
        raise InvalidParameterError(f"coalition is over {active.population} layers, model has {T}")
    return [t in active for t in range(1, T + 1)]


def _block_forward(w: LayerWeights, x, cos, sin, causal, n_heads, keep):
    f64 = lambda a: np.asarray(a, x.dtype)  # noqa: E731
    B, L, d = x.shape
    scale = float(1.0 / np.sqrt(d // n_heads))
    h, n1, r1 = _rmsnorm(x, f64(w.attn_norm))
    q = _rope(_split_heads(h @ f64(w.q_proj).T, n_heads), cos, sin)
    k = _rope(_split_heads(h @ f64(w.k_proj).T, n_heads), cos, sin)
    v = _split_heads(h @ f64(w.v_proj).T, n_heads)
    scores = q @ k.transpose(0, 1, 3, 2)
    scores *= scale
    scores += causal
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores, out=scores)
    p /= p.sum(axis=-1, keepdims=True)
    attn = _merge_heads(p @ v)
    x1 = x + attn @ f64(w.o_proj).T
    h2, n2, r2 = _rmsnorm(x1, f64(w.ffn_norm))
    gate = h2 @ f64(w.gate_proj).T
    up = h2 @ f64(w.up_proj).T
    sg = expit(gate)
    act = gate * sg * up
    out = x1 + act @ f64(w.down_proj).T
    saved = dict(h=h, n1=n1, r1=r1, q=q, k=k, v=v, p=p, attn=attn, h2=h2, n2=n2, r2=r2,
                 gate=gate, up=up, sg=sg, act=act) if keep else None
    inputs = dict(qkv=h, o=attn, ffn=h2, down=act)
    return out, saved, inputs


def forward(
    model: ModelCheckpoint,
    tokens,
    active: LayerSet | None = None,
    *,
    capture_hidden: bool = False,
    collect_input_norms: bool = False,
    keep_cache: bool = False,
    dtype=np.float64,
) -> ForwardResult:
    """Run the model on ``tokens`` (shape ``(L,)`` or ``(B, L)``).

    Layers outside ``active`` are skipped: the residual stream passes through
    them unchanged. ``active=None`` runs every layer.

    With ``capture_hidden`` the result holds ``T + 1`` residual states (the
    embeddings, then the output of each layer). With ``collect_input_norms`` it
    holds, per layer, the squared L2 norm of every input feature of each inner
    matrix, summed over all positions.
    """
    cfg = model.config
    squeeze = np.ndim(tokens) == 1
    tokens = _check_tokens(model, tokens)
    mask = _active_mask(model, active)
    L = tokens.shape[1]
    cos, sin = (a.astype(dtype) for a in _rope_tables(L, cfg.head_dim))
    causal = np.triu(np.full((L, L), -np.inf, dtype), 1)

    x = np.asarray(model.embedding, dtype)[tokens]
    hidden = [x] if capture_hidden else None
    norms = [] if collect_input_norms else None
    saved = []
    for t, (w, on) in enumerate(zip(model.layers, mask), start=1):
        if on:
            x, block_cache, inputs = _block_forward(w, x, cos, sin, causal, cfg.n_heads, keep_cache)
            if not np.isfinite(x).all():
                raise NumericFailure(f"non-finite activations after layer {t}")
        else:
            block_cache = inputs = None
        saved.append(block_cache)
        if capture_hidden:
            hidden.append(x)
        if collect_input_norms:
            norms.append(None if inputs is None else {
                k: np.einsum("bli,bli->i", a, a) for k, a in inputs.items()
            })
    hf, nf, rf = _rmsnorm(x, np.asarray(model.final_norm, dtype))
    logits = hf @ np.asarray(model.head, dtype).T
    if not np.isfinite(logits).all():
        raise NumericFailure("non-finite logits")
    cache = None
    if keep_cache:
        cache = dict(tokens=tokens, mask=mask, blocks=saved, cos=cos, sin=sin, x_final=x,
                     hf=hf, nf=nf, rf=rf)
    if squeeze and not keep_cache:
        logits = logits[0]
        if hidden is not None:
            hidden = [h[0] for h in hidden]
    return ForwardResult(logits, hidden, norms, cache)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_and_grads(model: ModelCheckpoint, tokens: np.ndarray, dtype=np.float64) -> tuple[float, ModelCheckpoint]:
    """Mean next-token cross-entropy (nats) over ``tokens[:, :-1] -> tokens[:, 1:]``.

    Returns the loss and a checkpoint-shaped container of gradients in ``dtype``.
    """
    tokens = np.asarray(tokens)
    inputs, targets = tokens[:, :-1], tokens[:, 1:]
    res = forward(model, inputs, keep_cache=True, dtype=dtype)
    c = res.cache
    B, L, V = res.logits.shape
    lp = log_softmax(res.logits)
    count = B * L
    loss = -np.take_along_axis(lp, targets[..., None], axis=-1).sum() / count

    dlogits = np.exp(lp)
    np.put_along_axis(dlogits, targets[..., None],
                      np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits /= count

    f64 = lambda a: np.asarray(a, dtype)  # noqa: E731
    cfg = model.config
    d = cfg.d_model
    grads = model.map_arrays(lambda a: np.zeros(a.shape, dtype))
    grads.head[:] = dlogits.reshape(-1, V).T @ c["hf"].reshape(-1, d)
    dhf = dlogits @ f64(model.head)
    dx, grads.final_norm[:] = _rmsnorm_backward(dhf, f64(model.final_norm), c["nf"], c["rf"])

    scale = float(1.0 / np.sqrt(cfg.head_dim))
    for w, g, s in reversed(list(zip(model.layers, grads.layers, c["blocks"]))):
        if s is None:
            continue
        flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
        # feed-forward half
        g.down_proj[:] = flat(dx).T @ flat(s["act"])
        dact = dx @ f64(w.down_proj)
        gate, sg = s["gate"], s["sg"]
        dgate = dact * s["up"] * (sg + gate * sg * (1.0 - sg))
        dup = dact * gate * sg
        g.gate_proj[:] = flat(dgate).T @ flat(s["h2"])
        g.up_proj[:] = flat(dup).T @ flat(s["h2"])
        dh2 = dgate @ f64(w.gate_proj) + dup @ f64(w.up_proj)
        dx1, g.ffn_norm[:] = _rmsnorm_backward(dh2, f64(w.ffn_norm), s["n2"], s["r2"])
        dx = dx + dx1
        # attention half
        g.o_proj[:] = flat(dx).T @ flat(s["attn"])
        dattn = _split_heads(dx @ f64(w.o_proj), cfg.n_heads)
        p = s["p"]
        dp = dattn @ s["v"].transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ dattn
        dscores = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * scale
        dq = _rope(dscores @ s["k"], c["cos"], c["sin"], inverse=True)
        dk = _rope(dscores.transpose(0, 1, 3, 2) @ s["q"], c["cos"], c["sin"], inverse=True)
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        h = s["h"]
        g.q_proj[:] = flat(dq).T @ flat(h)
        g.k_proj[:] = flat(dk).T @ flat(h)
        g.v_proj[:] = flat(dv).T @ flat(h)
        dh = dq @ f64(w.q_proj) + dk @ f64(w.k_proj) + dv @ f64(w.v_proj)
        dx0, g.attn_norm[:] = _rmsnorm_backward(dh, f64(w.attn_norm), s["n1"], s["r1"])
        dx = dx + dx0
    np.add.at(grads.embedding, c["tokens"], dx)
    return float(loss), grads
