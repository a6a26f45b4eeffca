"""Ground-truth references the rest of the package is checked against.

- least_squares_fit: minimum-norm least squares via SVD pseudo-inverse,
  the classical estimator the in-context learner is compared to.
- chain_trace: exact intermediate activations of a task network, used as
  the numeric reasoning-chain generator.
- expected_policy_gradient_bruteforce: exact gradient of the expected
  selection loss by full enumeration, the oracle for the sampled estimator.
- finite_difference_grads: central differences, the oracle for autodiff.

Everything here is float64 and stateless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, ShapeError
from .numerics import softmax
from .tasks import LinearTask, Relu2NNTask, Task, task_eval

BRUTEFORCE_MAX_POOL = 12


@dataclass(frozen=True)
class ChainTrace:
    """Labeled intermediate steps of one task evaluation; `final` equals
    task_eval(task, x) exactly."""

    steps: tuple[tuple[str, np.ndarray], ...]
    final: float


def least_squares_fit(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares weights for pairs (xs, ys), float64."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 1:
        raise ShapeError(f"need a (k>=1, d) design matrix, got {xs.shape}")
    if ys.shape != (xs.shape[0],):
        raise ShapeError(f"ys shape {ys.shape} != ({xs.shape[0]},)")
    w_hat, *_ = np.linalg.lstsq(xs, ys, rcond=None)
    return w_hat


def chain_trace(task: Task, x: np.ndarray) -> ChainTrace:
    """Exact forward trace of `task` at `x`.

    ReLU-2NN: [("layer1", hidden), ("layer2", [y])]. Linear tasks get the
    one-step analogue [("products", w*x), ("output", [y])].
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (task.d,):
        raise ShapeError(f"x shape {x.shape} != ({task.d},)")
    final = task_eval(task, x)
    if isinstance(task, LinearTask):
        steps = (("products", task.w * x), ("output", np.array([final])))
    else:
        # same single-row arithmetic as task_eval, so recomposing the trace
        # through the second layer reproduces `final` bit-for-bit
        hidden = np.maximum(x[None, :] @ task.w1.T + task.b1, 0.0)[0]
        steps = (("layer1", hidden), ("layer2", np.array([final])))
    return ChainTrace(steps=steps, final=final)


def chain_to_dict(trace: ChainTrace) -> dict:
    return {
        "steps": [[label, vec.tolist()] for label, vec in trace.steps],
        "final": trace.final,
    }


def chain_from_dict(obj: dict) -> ChainTrace:
    return ChainTrace(
        steps=tuple((label, np.asarray(vec, dtype=np.float64)) for label, vec in obj["steps"]),
        final=float(obj["final"]),
    )


def expected_policy_gradient_bruteforce(
    losses: np.ndarray, logits: np.ndarray
) -> np.ndarray:
    """Exact gradient of E_{i ~ softmax(logits)}[losses_i] w.r.t. logits,
    by enumerating every pool entry. Pools larger than 12 are refused."""
    losses = np.asarray(losses, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    n = losses.shape[0]
    if logits.shape != (n,):
        raise ShapeError(f"logits shape {logits.shape} != ({n},)")
    if n > BRUTEFORCE_MAX_POOL:
        raise ContractError(f"pool size {n} > {BRUTEFORCE_MAX_POOL}; not enumerable")
    p = softmax(logits)
    grad = np.zeros(n)
    for j in range(n):
        for i in range(n):  # d p_i / d z_j = p_i (delta_ij - p_j)
            grad[j] += losses[i] * p[i] * ((1.0 if i == j else 0.0) - p[j])
    return grad


def finite_difference_grads(
    f: Callable[[dict[str, np.ndarray]], float],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    slices: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central-difference gradients of scalar f at `params` (float64).

    `slices` optionally restricts each parameter to a set of flat indices
    (gradients elsewhere are returned as NaN) to keep large checks cheap.
    """
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.full(p.size, np.nan)
        idxs = (
            range(p.size)
            if slices is None or name not in slices
            else np.asarray(slices[name]).ravel()
        )
        for i in idxs:
            flat = p.ravel().copy()
            flat[i] += h
            hi = f({**params, name: flat.reshape(p.shape)})
            flat[i] -= 2 * h
            lo = f({**params, name: flat.reshape(p.shape)})
            g[i] = (hi - lo) / (2 * h)
        out[name] = g.reshape(p.shape)
    return out
