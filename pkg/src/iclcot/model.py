"""Decoder-only transformer over interleaved prompt tokens.

Prompts are embedded as a sequence of (d+2)-vectors: the first d entries
carry the payload (an x vector, a y scalar in slot 0, or a reasoning-chain
step padded/truncated to d), entry d is a type flag (0=x, 1=y, 2=chain
step), entry d+1 is reserved. Per pair the order is x, chain steps, y; the
sequence ends with the query x. The model reads one scalar prediction at
every x-token position (its estimate of the y that follows that x) under a
strict causal mask.

Architecture: learned input projection, learned absolute positional
embeddings (zero-initialized), pre-norm residual blocks with multi-head
causal attention and a GELU MLP of expansion 4, final layer norm, scalar
readout. Weights are float32; the same graph runs in float64 for gradient
checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import GradientTape, Tensor, backward
from .errors import CapacityError, ContractError, NanLossError, ShapeError
from .optim import AdamState, adam_step
from .rng import RngState
from .tasks import Prompt
from .oracles import ChainTrace

FLAG_X = 0.0
FLAG_Y = 1.0
FLAG_CHAIN = 2.0

MLP_EXPANSION = 4


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    embed_dim: int
    max_tokens: int
    input_dim: int

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ContractError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        for field in ("n_layers", "n_heads", "embed_dim", "max_tokens", "input_dim"):
            if getattr(self, field) < 1:
                raise ContractError(f"{field} must be >= 1")

    @property
    def token_dim(self) -> int:
        return self.input_dim + 2

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "embed_dim": self.embed_dim,
            "max_tokens": self.max_tokens,
            "input_dim": self.input_dim,
        }

    @staticmethod
    def from_dict(obj: dict) -> "ModelConfig":
        return ModelConfig(**{k: int(obj[k]) for k in (
            "n_layers", "n_heads", "embed_dim", "max_tokens", "input_dim")})


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int
    learning_rate: float
    k_max: int
    seed: int
    family: str
    hidden_dim: int = 100  # relu2nn task width

    def __post_init__(self):
        for field in ("steps", "batch_size", "k_max", "hidden_dim"):
            if getattr(self, field) < 1:
                raise ContractError(f"{field} must be >= 1")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")


# -- token layout -------------------------------------------------------------


def _fit_to_dim(vec: np.ndarray, d: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    if vec.shape[0] >= d:
        return vec[:d]
    return np.concatenate([vec, np.zeros(d - vec.shape[0])])


def pair_token_rows(
    d: int, x: np.ndarray, y: float, chain: ChainTrace | None = None
) -> list[np.ndarray]:
    """Token rows for one demonstration pair: x, chain steps, y."""
    rows = []
    row = np.zeros(d + 2)
    row[:d] = x
    row[d] = FLAG_X
    rows.append(row)
    if chain is not None:
        for _, step in chain.steps:
            row = np.zeros(d + 2)
            row[:d] = _fit_to_dim(step, d)
            row[d] = FLAG_CHAIN
            rows.append(row)
    row = np.zeros(d + 2)
    row[0] = y
    row[d] = FLAG_Y
    rows.append(row)
    return rows


def prompt_token_rows(
    d: int,
    prompt: Prompt,
    chains: tuple[ChainTrace, ...] | None = None,
    include_query: bool = True,
) -> list[np.ndarray]:
    """Token rows for a whole prompt (pairs in order, then the query x)."""
    if prompt.d != d:
        raise ShapeError(f"prompt dimension {prompt.d} != model input_dim {d}")
    if chains is not None and len(chains) != prompt.k:
        raise ShapeError(f"{len(chains)} chains for {prompt.k} pairs")
    rows: list[np.ndarray] = []
    for j in range(prompt.k):
        rows.extend(
            pair_token_rows(d, prompt.xs[j], float(prompt.ys[j]),
                            None if chains is None else chains[j])
        )
    if include_query:
        row = np.zeros(d + 2)
        row[:d] = prompt.query_x
        row[d] = FLAG_X
        rows.append(row)
    return rows


def embed_prompt(
    cfg: ModelConfig, prompt: Prompt, chains: tuple[ChainTrace, ...] | None = None
) -> np.ndarray:
    """(T, d+2) token matrix for `prompt`; raises CapacityError past max_tokens."""
    rows = prompt_token_rows(cfg.input_dim, prompt, chains)
    if len(rows) > cfg.max_tokens:
        raise CapacityError(f"{len(rows)} tokens exceed max_tokens={cfg.max_tokens}")
    return np.stack(rows)


def x_token_positions(tokens: np.ndarray) -> np.ndarray:
    """Positions of x tokens (type flag 0) in a (T, d+2) token matrix."""
    flags = tokens[..., -2]
    return np.where(flags == FLAG_X)[0]


# -- weights ------------------------------------------------------------------


def weight_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    e = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {
        "w_in": (cfg.token_dim, e),
        "b_in": (e,),
        "pos": (cfg.max_tokens, e),
    }
    for i in range(cfg.n_layers):
        shapes[f"l{i}.ln1_g"] = (e,)
        shapes[f"l{i}.ln1_b"] = (e,)
        shapes[f"l{i}.w_qkv"] = (e, 3 * e)
        shapes[f"l{i}.b_qkv"] = (3 * e,)
        shapes[f"l{i}.w_o"] = (e, e)
        shapes[f"l{i}.b_o"] = (e,)
        shapes[f"l{i}.ln2_g"] = (e,)
        shapes[f"l{i}.ln2_b"] = (e,)
        shapes[f"l{i}.w_fc"] = (e, MLP_EXPANSION * e)
        shapes[f"l{i}.b_fc"] = (MLP_EXPANSION * e,)
        shapes[f"l{i}.w_proj"] = (MLP_EXPANSION * e, e)
        shapes[f"l{i}.b_proj"] = (e,)
    shapes["lnf_g"] = (e,)
    shapes["lnf_b"] = (e,)
    shapes["w_out"] = (e, 1)
    shapes["b_out"] = (1,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in weight_shapes(cfg).values())


class TransformerWeights:
    """Named weight arrays plus the config they were built for."""

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        expected = weight_shapes(config)
        if set(arrays) != set(expected):
            raise ShapeError("weight names do not match the config's layout")
        for name, a in arrays.items():
            if a.shape != expected[name]:
                raise ShapeError(f"{name}: shape {a.shape} != {expected[name]}")
        self.config = config
        self.arrays = arrays

    @property
    def dtype(self):
        return self.arrays["w_in"].dtype

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> "TransformerWeights":
        return TransformerWeights(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "TransformerWeights":
        return TransformerWeights(
            self.config, {k: v.astype(dtype) for k, v in self.arrays.items()}
        )


def init_weights(cfg: ModelConfig, rng: RngState, dtype=np.float32) -> TransformerWeights:
    """Projection weights ~ N(0, 0.02^2); biases, positional embeddings zero;
    layer-norm gains one. Zero positional init keeps never-trained positions
    inert when prompts run past the trained length."""
    arrays: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(("_g",)):
            arrays[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(("_b", "b_in", "b_out")) or name == "pos" or ".b_" in name:
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            flat = rng.normal(int(np.prod(shape))) * 0.02
            arrays[name] = flat.reshape(shape).astype(dtype)
    return TransformerWeights(cfg, arrays)


# -- forward ------------------------------------------------------------------


def _causal_mask(t: int, dtype) -> np.ndarray:
    mask = np.zeros((t, t), dtype=dtype)
    mask[np.triu_indices(t, k=1)] = -np.inf
    return mask


def forward_graph(
    params: dict[str, Tensor], cfg: ModelConfig, tokens: np.ndarray
) -> Tensor:
    """Scalar head value at every position; tokens (B, T, d+2) -> (B, T)."""
    b, t, token_dim = tokens.shape
    if token_dim != cfg.token_dim:
        raise ShapeError(f"token dim {token_dim} != {cfg.token_dim}")
    if t > cfg.max_tokens:
        raise CapacityError(f"{t} tokens exceed max_tokens={cfg.max_tokens}")
    e = cfg.embed_dim
    n_heads = cfg.n_heads
    head_dim = e // n_heads
    dtype = params["w_in"].dtype
    scale = 1.0 / float(np.sqrt(head_dim))
    mask = _causal_mask(t, np.float64 if dtype == np.float64 else np.float32)

    x = Tensor(tokens.astype(dtype, copy=False)) @ params["w_in"] + params["b_in"]
    x = x + params["pos"][:t]
    for i in range(cfg.n_layers):
        pre = x.layer_norm(params[f"l{i}.ln1_g"], params[f"l{i}.ln1_b"])
        qkv = pre @ params[f"l{i}.w_qkv"] + params[f"l{i}.b_qkv"]
        q = qkv[:, :, :e].reshape(b, t, n_heads, head_dim).transpose(0, 2, 1, 3)
        k = qkv[:, :, e:2 * e].reshape(b, t, n_heads, head_dim).transpose(0, 2, 1, 3)
        v = qkv[:, :, 2 * e:].reshape(b, t, n_heads, head_dim).transpose(0, 2, 1, 3)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        att = scores.masked_softmax(mask)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, e)
        x = x + ctx @ params[f"l{i}.w_o"] + params[f"l{i}.b_o"]
        pre2 = x.layer_norm(params[f"l{i}.ln2_g"], params[f"l{i}.ln2_b"])
        h = (pre2 @ params[f"l{i}.w_fc"] + params[f"l{i}.b_fc"]).gelu()
        x = x + h @ params[f"l{i}.w_proj"] + params[f"l{i}.b_proj"]
    x = x.layer_norm(params["lnf_g"], params["lnf_b"])
    out = x @ params["w_out"] + params["b_out"]
    return out.reshape(b, t)


def forward_predict_batch(weights: TransformerWeights, tokens: np.ndarray) -> np.ndarray:
    """Predictions at every x-token position for a rectangular batch that
    shares one flag layout; (B, T, d+2) -> (B, n_x), float64."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 3:
        raise ShapeError(f"expected (B, T, d+2) tokens, got {tokens.shape}")
    if not np.all(tokens[..., -2] == tokens[0, :, -2]):
        raise ShapeError("batch rows must share one token-flag layout")
    x_pos = x_token_positions(tokens[0])
    params = {k: Tensor(v) for k, v in weights.arrays.items()}
    preds = forward_graph(params, weights.config, tokens)
    return preds.data[:, x_pos].astype(np.float64)


def forward_predict(weights: TransformerWeights, tokens: np.ndarray) -> np.ndarray:
    """Predictions at every x-token position of one prompt; (T, d+2) -> (n_x,)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError(f"expected (T, d+2) tokens, got {tokens.shape}")
    return forward_predict_batch(weights, tokens[None])[0]


class TransformerModel:
    """Trained weights bundled behind the predictor interface the pipeline
    and the evaluation harness consume."""

    def __init__(self, weights: TransformerWeights):
        self.weights = weights

    @property
    def config(self) -> ModelConfig:
        return self.weights.config

    @property
    def input_dim(self) -> int:
        return self.weights.config.input_dim

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        return forward_predict(self.weights, tokens)

    def predict_batch(self, tokens: np.ndarray) -> np.ndarray:
        return forward_predict_batch(self.weights, tokens)


# -- training -----------------------------------------------------------------


def _sample_training_batch(
    family: str, d: int, h: int, k: int, batch: int, rng: RngState
) -> tuple[np.ndarray, np.ndarray]:
    """Fresh tasks and prompts in batch form.

    Returns (tokens (B, 2k+1, d+2), targets (B, k+1)): targets[:, j] is the
    ground-truth y at the j-th x token (the last being the query).
    """
    xs = rng.normal(batch * (k + 1), d).reshape(batch, k + 1, d)
    if family == "linear":
        w = rng.normal(batch, d)
        ys = np.einsum("bkd,bd->bk", xs, w)
    elif family == "relu2nn":
        w1 = rng.normal(batch * h, d).reshape(batch, h, d)
        b1 = rng.normal(batch, h)
        w2 = rng.normal(batch, h)
        b2 = rng.normal(batch)
        hidden = np.maximum(np.einsum("bkd,bhd->bkh", xs, w1) + b1[:, None, :], 0.0)
        ys = np.maximum(np.einsum("bkh,bh->bk", hidden, w2) + b2[:, None], 0.0)
    else:
        raise ContractError(f"unknown family {family!r}")
    t = 2 * k + 1
    tokens = np.zeros((batch, t, d + 2))
    tokens[:, 0::2, :d] = xs
    tokens[:, 1::2, 0] = ys[:, :k]
    tokens[:, 1::2, d] = FLAG_Y
    return tokens, ys


def train(
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    rng: RngState | None = None,
    log_every: int | None = None,
) -> tuple[TransformerWeights, list[tuple[int, float]]]:
    """Train by Adam on freshly sampled tasks/prompts each step.

    Each batch draws one context length k ~ U{1..k_max} so every prefix
    length is trained; the loss is the squared error averaged over the k+1
    x positions and the batch. Returns the weights and the logged loss
    curve [(step, loss), ...].
    """
    if 2 * train_cfg.k_max + 1 > model_cfg.max_tokens:
        raise CapacityError(
            f"k_max={train_cfg.k_max} needs {2 * train_cfg.k_max + 1} tokens"
            f" > max_tokens={model_cfg.max_tokens}"
        )
    if model_cfg.input_dim < 1:
        raise ContractError("input_dim must be >= 1")
    rng = rng if rng is not None else RngState(train_cfg.seed).named("train")
    rng_init = rng.named("init")
    rng_data = rng.named("data")
    weights = init_weights(model_cfg, rng_init)
    state = AdamState(weights.arrays)
    log_every = log_every or max(1, train_cfg.steps // 200)
    curve: list[tuple[int, float]] = []

    for step in range(train_cfg.steps):
        k = 1 + int(rng_data.uniform(1)[0] * train_cfg.k_max)
        k = min(k, train_cfg.k_max)
        tokens, targets = _sample_training_batch(
            train_cfg.family, model_cfg.input_dim, train_cfg.hidden_dim,
            k, train_cfg.batch_size, rng_data,
        )
        tape = GradientTape()
        params = {name: tape.param(name, a) for name, a in weights.arrays.items()}
        preds = forward_graph(params, model_cfg, tokens)
        preds_x = preds[:, np.arange(0, 2 * k + 1, 2)]
        diff = preds_x - targets.astype(weights.dtype)
        loss = (diff * diff).mean()
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise NanLossError(step, train_cfg.learning_rate)
        grads = backward(tape, loss)
        adam_step(weights.arrays, grads, state, lr=train_cfg.learning_rate)
        if step % log_every == 0 or step == train_cfg.steps - 1:
            curve.append((step, loss_val))
    return weights, curve
