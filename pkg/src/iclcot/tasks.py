"""Ground-truth task sampling and prompt construction.

Two function families: linear maps f(x) = w.x with w ~ N(0, I_d), and
two-layer ReLU networks y = relu(w2 @ relu(w1 x + b1) + b2) whose weights
are drawn once and fixed for the task's lifetime. Prompts interleave k
demonstration pairs (x_j, f(x_j)) with a held-out query input; all task
arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .rng import RngState

DEFAULT_HIDDEN = 100

FAMILIES = ("linear", "relu2nn")


@dataclass(frozen=True)
class LinearTask:
    w: np.ndarray  # (d,)

    @property
    def d(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class Relu2NNTask:
    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (1, h)
    b2: float

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def h(self) -> int:
        return self.w1.shape[0]


Task = LinearTask | Relu2NNTask


@dataclass(frozen=True)
class Prompt:
    """k demonstration pairs plus a query input; query_y is the ground truth
    at query_x when known (always filled by sample_prompt)."""

    xs: np.ndarray  # (k, d)
    ys: np.ndarray  # (k,)
    query_x: np.ndarray  # (d,)
    query_y: float | None = None

    @property
    def k(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.query_x.shape[0]


def sample_linear_task(d: int, rng: RngState) -> LinearTask:
    if d < 1:
        raise ContractError(f"d must be >= 1, got {d}")
    return LinearTask(w=rng.normal(d))


def sample_relu2nn_task(d: int, h: int, rng: RngState) -> Relu2NNTask:
    if d < 1 or h < 1:
        raise ContractError(f"d and h must be >= 1, got ({d}, {h})")
    return Relu2NNTask(
        w1=rng.normal(h, d),
        b1=rng.normal(h),
        w2=rng.normal(1, h),
        b2=float(rng.normal(1)[0]),
    )


def task_eval(task: Task, x: np.ndarray) -> float:
    """Exact function value at x, float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (task.d,):
        raise ShapeError(f"x shape {x.shape} != ({task.d},)")
    # single-row batch keeps scalar and batched evaluation bit-identical
    return float(task_eval_batch(task, x[None, :])[0])


def task_eval_batch(task: Task, xs: np.ndarray) -> np.ndarray:
    """Function values for a batch of inputs, shape (n, d) -> (n,)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != task.d:
        raise ShapeError(f"xs shape {xs.shape} incompatible with d={task.d}")
    if isinstance(task, LinearTask):
        return xs @ task.w
    hidden = np.maximum(xs @ task.w1.T + task.b1, 0.0)
    return np.maximum(hidden @ task.w2[0] + task.b2, 0.0)


def sample_prompt(task: Task, k: int, rng: RngState) -> Prompt:
    """k pairs with x ~ N(0, I_d), a fresh query x, and the query truth."""
    if k < 0:
        raise ContractError(f"k must be >= 0, got {k}")
    d = task.d
    xs = rng.normal(k, d) if k > 0 else np.zeros((0, d))
    query_x = rng.normal(d)
    # per-row evaluation so stored ys match task_eval bit-for-bit
    ys = np.array([task_eval(task, x) for x in xs]) if k > 0 else np.zeros(0)
    return Prompt(xs=xs, ys=ys, query_x=query_x, query_y=task_eval(task, query_x))


def fresh_eval_task(family: str, d: int, rng: RngState, h: int = DEFAULT_HIDDEN) -> Task:
    """A new evaluation task; callers pass an rng from a stream disjoint
    from every training stream."""
    if family == "linear":
        return sample_linear_task(d, rng)
    if family == "relu2nn":
        return sample_relu2nn_task(d, h, rng)
    raise ContractError(f"unknown family {family!r}; expected one of {FAMILIES}")


def sample_task(family: str, d: int, rng: RngState, h: int = DEFAULT_HIDDEN) -> Task:
    """Training-side task sampling (same distribution as fresh_eval_task)."""
    return fresh_eval_task(family, d, rng, h=h)


# -- lossless serialization (JSON-compatible dicts) --------------------------


def prompt_to_dict(prompt: Prompt) -> dict:
    return {
        "xs": prompt.xs.tolist(),
        "ys": prompt.ys.tolist(),
        "query_x": prompt.query_x.tolist(),
        "query_y": prompt.query_y,
    }


def prompt_from_dict(obj: dict) -> Prompt:
    d = len(obj["query_x"])
    xs = np.asarray(obj["xs"], dtype=np.float64).reshape(-1, d)
    return Prompt(
        xs=xs,
        ys=np.asarray(obj["ys"], dtype=np.float64),
        query_x=np.asarray(obj["query_x"], dtype=np.float64),
        query_y=None if obj.get("query_y") is None else float(obj["query_y"]),
    )


def task_to_dict(task: Task) -> dict:
    if isinstance(task, LinearTask):
        return {"family": "linear", "w": task.w.tolist()}
    return {
        "family": "relu2nn",
        "w1": task.w1.tolist(),
        "b1": task.b1.tolist(),
        "w2": task.w2.tolist(),
        "b2": task.b2,
    }


def task_from_dict(obj: dict) -> Task:
    if obj["family"] == "linear":
        return LinearTask(w=np.asarray(obj["w"], dtype=np.float64))
    return Relu2NNTask(
        w1=np.asarray(obj["w1"], dtype=np.float64),
        b1=np.asarray(obj["b1"], dtype=np.float64),
        w2=np.asarray(obj["w2"], dtype=np.float64),
        b2=float(obj["b2"]),
    )
