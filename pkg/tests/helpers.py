"""Shared test stubs: deterministic predictor doubles for the pipeline and
the evaluation harness."""

from __future__ import annotations

import numpy as np

from iclcot.model import ModelConfig, x_token_positions
from iclcot.oracles import least_squares_fit


def tiny_config(d: int = 5, max_tokens: int = 64) -> ModelConfig:
    return ModelConfig(n_layers=1, n_heads=1, embed_dim=8,
                       max_tokens=max_tokens, input_dim=d)


class KeyedStubModel:
    """Predicts a scripted value keyed on the final query payload; every
    other position predicts zero. Lets tests pin per-demo losses exactly."""

    def __init__(self, config: ModelConfig, table: dict[bytes, float],
                 default: float = 0.0):
        self.config = config
        self.table = table
        self.default = default

    def _query_pred(self, tokens: np.ndarray) -> float:
        d = self.config.input_dim
        x_pos = x_token_positions(tokens)
        key = np.ascontiguousarray(tokens[x_pos[-1], :d]).tobytes()
        return self.table.get(key, self.default)

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        x_pos = x_token_positions(tokens)
        out = np.zeros(len(x_pos))
        out[-1] = self._query_pred(tokens)
        return out

    def predict_batch(self, tokens: np.ndarray) -> np.ndarray:
        return np.stack([self.predict(t) for t in tokens])


def key_for(query_x: np.ndarray) -> bytes:
    return np.ascontiguousarray(np.asarray(query_x, dtype=np.float64)).tobytes()


class LeastSquaresStubModel:
    """Perfect-oracle stand-in for noiseless linear tasks: fits least squares
    on the prompt's plain (x, y) pairs and predicts every x token from it."""

    def __init__(self, config: ModelConfig):
        self.config = config

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        d = self.config.input_dim
        flags = tokens[:, d]
        xs = tokens[flags == 0.0][:, :d]
        ys = tokens[flags == 1.0][:, 0]
        preds = np.zeros(xs.shape[0])
        for i in range(xs.shape[0]):
            if i == 0:
                preds[i] = 0.0
            else:
                w_hat = least_squares_fit(xs[:i], ys[:i])
                preds[i] = float(w_hat @ xs[i])
        return preds

    def predict_batch(self, tokens: np.ndarray) -> np.ndarray:
        return np.stack([self.predict(t) for t in tokens])


class NoisyStubModel:
    """Prediction = pseudo-random value derived from the token bytes
    (CRC-based, so stable across processes); deterministic per prompt,
    varies across resampled prompts."""

    def __init__(self, config: ModelConfig, scale: float = 1.0, bias: float = 0.0):
        self.config = config
        self.scale = scale
        self.bias = bias

    def predict(self, tokens: np.ndarray) -> np.ndarray:
        import zlib

        x_pos = x_token_positions(tokens)
        out = np.zeros(len(x_pos))
        h = zlib.crc32(np.ascontiguousarray(tokens).tobytes()) % 10_000
        out[-1] = self.bias + self.scale * (h / 10_000 - 0.5)
        return out

    def predict_batch(self, tokens: np.ndarray) -> np.ndarray:
        return np.stack([self.predict(t) for t in tokens])
