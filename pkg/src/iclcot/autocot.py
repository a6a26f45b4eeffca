"""Demonstration augmentation, pruning, policy selection, averaged inference.

The four stages run against a trained model:

1. augment: build a pool of K demonstrations, each a fresh task with a
   k-pair prompt and one reasoning chain per pair from a generator.
2. prune: keep demonstrations whose model loss on their own query,
   (prediction - truth)^2 / d, is at most epsilon.
3. select: train softmax-policy logits over the pruned pool with the
   baseline-subtracted (variance-reduced) REINFORCE gradient; the top-B
   logits are the selection.
4. inference: prepend the selected demonstrations to an evaluation prompt
   and average the query prediction over `repeats` independently resampled
   context sets (the query input stays fixed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CapacityError,
    ContractError,
    EmptyPrunedPoolError,
    PipelineError,
    ShapeError,
)
from .model import prompt_token_rows
from .numerics import softmax
from .oracles import ChainTrace, chain_from_dict, chain_to_dict, chain_trace
from .rng import RngState
from .tasks import (
    Prompt,
    Task,
    prompt_from_dict,
    prompt_to_dict,
    sample_prompt,
    sample_task,
    task_eval,
    task_from_dict,
    task_to_dict,
)

log = logging.getLogger(__name__)

ChainGenerator = Callable[[Task, np.ndarray, float], ChainTrace]


def oracle_chain_generator(task: Task, x: np.ndarray, y: float) -> ChainTrace:
    """Exact numeric chains: the task's own intermediate activations."""
    return chain_trace(task, x)


@dataclass
class Demonstration:
    prompt: Prompt
    chains: tuple[ChainTrace, ...]
    task: Task
    task_id: int

    def __post_init__(self):
        if len(self.chains) != self.prompt.k:
            raise ShapeError(
                f"{len(self.chains)} chains for {self.prompt.k} pairs"
            )


@dataclass
class DemoPool:
    demos: list[Demonstration]

    def __len__(self) -> int:
        return len(self.demos)

    def __getitem__(self, i: int) -> Demonstration:
        return self.demos[i]


@dataclass
class SelectionPolicy:
    """Softmax sampling distribution over a pruned pool."""

    logits: np.ndarray
    steps: int = 0

    def probs(self) -> np.ndarray:
        return softmax(self.logits)


@dataclass(frozen=True)
class PipelineConfig:
    pool_size: int  # K
    epsilon: float | str  # prune threshold in normalized-loss units, or "median"
    batch_size: int  # B: policy batch size and selection size
    epochs: int  # N
    pool_k: int  # context length of pool demonstrations
    repeats: int = 64
    policy_lr: float = 0.5

    def __post_init__(self):
        if self.pool_size < 1:
            raise ContractError("pool_size must be >= 1")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2 (baseline needs two samples)")
        if self.repeats < 1:
            raise ContractError("repeats must be >= 1")
        if self.pool_k < 1:
            raise ContractError("pool_k must be >= 1")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if isinstance(self.epsilon, str):
            if self.epsilon != "median":
                raise ContractError(f"epsilon must be positive or 'median', got {self.epsilon!r}")
        elif self.epsilon <= 0:
            raise ContractError("epsilon must be positive")

    def to_dict(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "epsilon": self.epsilon,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "pool_k": self.pool_k,
            "repeats": self.repeats,
            "policy_lr": self.policy_lr,
        }

    @staticmethod
    def from_dict(obj: dict) -> "PipelineConfig":
        return PipelineConfig(
            pool_size=int(obj["pool_size"]),
            epsilon=obj["epsilon"] if obj["epsilon"] == "median" else float(obj["epsilon"]),
            batch_size=int(obj["batch_size"]),
            epochs=int(obj["epochs"]),
            pool_k=int(obj["pool_k"]),
            repeats=int(obj.get("repeats", 64)),
            policy_lr=float(obj.get("policy_lr", 0.5)),
        )


# -- stage 1: augment ---------------------------------------------------------


def augment(
    family: str,
    pool_size: int,
    k: int,
    d: int,
    generator: ChainGenerator,
    rng: RngState,
    h: int = 100,
) -> DemoPool:
    """Pool of `pool_size` demonstrations, each a fresh task + prompt + chains.

    A generator failure skips and resamples that demonstration; more than
    50% failures aborts the pipeline.
    """
    demos: list[Demonstration] = []
    failures = 0
    max_attempts = 2 * pool_size
    attempt = 0
    while len(demos) < pool_size and attempt < max_attempts:
        attempt += 1
        task = sample_task(family, d, rng, h=h)
        prompt = sample_prompt(task, k, rng)
        try:
            chains = tuple(
                generator(task, prompt.xs[j], float(prompt.ys[j]))
                for j in range(prompt.k)
            )
        except Exception as exc:  # noqa: BLE001 - generator is caller-supplied
            failures += 1
            log.warning("chain generator failed (attempt %d): %s", attempt, exc)
            continue
        demos.append(Demonstration(prompt=prompt, chains=chains, task=task,
                                   task_id=len(demos)))
    if len(demos) < pool_size:
        raise PipelineError(
            f"chain generation failed {failures}/{attempt} attempts; pool incomplete"
        )
    return DemoPool(demos)


# -- stage 2: prune -----------------------------------------------------------


def build_prompt_tokens(
    model_config,
    demos: Sequence[Demonstration],
    prompt: Prompt,
    chains: tuple[ChainTrace, ...] | None = None,
) -> np.ndarray:
    """Token matrix: selected demonstrations' (x, chain, y) triples, then the
    prompt's pairs and query. Raises CapacityError past max_tokens."""
    d = model_config.input_dim
    rows: list[np.ndarray] = []
    for demo in demos:
        rows.extend(prompt_token_rows(d, demo.prompt, demo.chains, include_query=False))
    rows.extend(prompt_token_rows(d, prompt, chains, include_query=True))
    if len(rows) > model_config.max_tokens:
        raise CapacityError(
            f"{len(rows)} tokens exceed max_tokens={model_config.max_tokens}"
        )
    return np.stack(rows)


def autocot_query_loss(
    model,
    prompt: Prompt,
    task: Task,
    chains: tuple[ChainTrace, ...] | None = None,
    demos: Sequence[Demonstration] = (),
) -> float:
    """Normalized query loss (prediction - truth)^2 / d of one forward pass
    on a (possibly demonstration-augmented) prompt."""
    tokens = build_prompt_tokens(model.config, demos, prompt, chains)
    pred = float(model.predict(tokens)[-1])
    truth = task_eval(task, prompt.query_x)
    return (pred - truth) ** 2 / prompt.d


def pool_losses(model, pool: DemoPool) -> np.ndarray:
    """Each demonstration's model loss on its own query, with its chains."""
    tokens = [
        build_prompt_tokens(model.config, (), demo.prompt, demo.chains)
        for demo in pool.demos
    ]
    truths = np.array([task_eval(d.task, d.prompt.query_x) for d in pool.demos])
    dims = np.array([d.prompt.d for d in pool.demos], dtype=np.float64)
    same_layout = len(tokens) > 0 and all(
        t.shape == tokens[0].shape and np.array_equal(t[:, -2], tokens[0][:, -2])
        for t in tokens
    )
    if same_layout:
        preds = model.predict_batch(np.stack(tokens))[:, -1]
    else:
        preds = np.array([float(model.predict(t)[-1]) for t in tokens])
    return (preds - truths) ** 2 / dims


def _prune_by_losses(pool: DemoPool, losses: np.ndarray, epsilon: float) -> tuple[DemoPool, list[int]]:
    kept = [i for i, l in enumerate(losses) if l <= epsilon]
    if not kept:
        raise EmptyPrunedPoolError(float(np.min(losses)))
    return DemoPool([pool.demos[i] for i in kept]), kept


def prune(pool: DemoPool, model, epsilon: float) -> DemoPool:
    """Demonstrations whose query loss is <= epsilon, in pool order."""
    if not isinstance(epsilon, str) and epsilon <= 0:
        raise ContractError("epsilon must be positive")
    losses = pool_losses(model, pool)
    eps = float(np.median(losses)) if epsilon == "median" else float(epsilon)
    pruned, _ = _prune_by_losses(pool, losses, eps)
    return pruned


# -- stage 3: select ----------------------------------------------------------


def policy_gradient(
    losses: np.ndarray, indices: np.ndarray, logits: np.ndarray
) -> np.ndarray:
    """Variance-reduced REINFORCE estimate of the expected-loss gradient.

    grad = 1/(B-1) * sum_b (L_b - mean L) * d log p(i_b) / d logits,
    with d log p(i)/d z = onehot(i) - softmax(z). Unbiased for B >= 2.
    """
    losses = np.asarray(losses, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    b = losses.shape[0]
    if b < 2:
        raise ContractError("policy gradient needs a batch of >= 2 samples")
    if indices.shape != (b,):
        raise ShapeError(f"indices shape {indices.shape} != ({b},)")
    if not np.all(np.isfinite(losses)):
        raise ContractError("losses must be finite")
    p = softmax(logits)
    centered = losses - losses.mean()
    grad = np.zeros_like(p)
    np.add.at(grad, indices, centered)
    grad -= centered.sum() * p
    return grad / (b - 1)


def train_policy_logits(
    losses: np.ndarray,
    logits: np.ndarray,
    epochs: int,
    batch_size: int,
    policy_lr: float,
    rng: RngState,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Core selection loop: sample a batch from the softmax policy, estimate
    the gradient of the expected loss, take a plain gradient-descent step.
    Returns the final logits and the per-epoch trajectory."""
    logits = np.asarray(logits, dtype=np.float64).copy()
    losses = np.asarray(losses, dtype=np.float64)
    history: list[np.ndarray] = []
    for _ in range(epochs):
        probs = softmax(logits)
        indices = np.array([rng.choice(probs) for _ in range(batch_size)])
        grad = policy_gradient(losses[indices], indices, logits)
        logits -= policy_lr * grad
        history.append(logits.copy())
    return logits, history


def select_train(
    policy: SelectionPolicy,
    pool: DemoPool,
    model,
    cfg: PipelineConfig,
    rng: RngState,
    losses: np.ndarray | None = None,
) -> tuple[SelectionPolicy, list[np.ndarray]]:
    """N epochs of sample-batch / evaluate / gradient-step on the logits.

    Demo losses are deterministic for a fixed model, so they are computed
    once and looked up per sample. Returns the trained policy and the
    per-epoch logits trajectory.
    """
    if len(pool) == 0:
        raise ContractError("cannot train a policy over an empty pool")
    if policy.logits.shape != (len(pool),):
        raise ShapeError(f"policy size {policy.logits.shape} != pool size {len(pool)}")
    if losses is None:
        losses = pool_losses(model, pool)
    logits, history = train_policy_logits(
        losses, policy.logits, cfg.epochs, cfg.batch_size, cfg.policy_lr, rng
    )
    return SelectionPolicy(logits=logits, steps=policy.steps + cfg.epochs), history


def top_selection(policy: SelectionPolicy, count: int) -> list[int]:
    """Indices of the `count` highest-logit demonstrations (stable order)."""
    order = np.argsort(-policy.logits, kind="stable")
    return [int(i) for i in order[: min(count, policy.logits.shape[0])]]


# -- stage 4: inference ---------------------------------------------------------


def repeat_predictions(
    model,
    demos: Sequence[Demonstration],
    task: Task,
    prompt: Prompt,
    repeats: int,
    rng: RngState | None = None,
) -> np.ndarray:
    """Query predictions over `repeats` runs, shape (repeats,).

    The first run uses `prompt` as given; later runs keep the query input
    and the demonstrations fixed but resample the prompt's context pairs
    fresh from `task`.
    """
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    if repeats > 1 and rng is None:
        raise ContractError("resampled repeats need an rng")
    token_sets = [build_prompt_tokens(model.config, demos, prompt)]
    for _ in range(repeats - 1):
        fresh = sample_prompt(task, prompt.k, rng)
        fresh = Prompt(xs=fresh.xs, ys=fresh.ys, query_x=prompt.query_x,
                       query_y=prompt.query_y)
        token_sets.append(build_prompt_tokens(model.config, demos, fresh))
    return model.predict_batch(np.stack(token_sets))[:, -1].astype(np.float64)


def inference(
    model,
    demos: Sequence[Demonstration],
    task: Task,
    prompt: Prompt,
    repeats: int,
    rng: RngState | None = None,
) -> float:
    """Averaged query prediction over `repeats` runs (see repeat_predictions)."""
    return float(repeat_predictions(model, demos, task, prompt, repeats, rng).mean())


# -- orchestration --------------------------------------------------------------


@dataclass
class PipelineResult:
    """Everything needed to replay any stage of one pipeline run."""

    config: PipelineConfig
    family: str
    d: int
    hidden_dim: int
    seed: int
    stream: int
    pool: DemoPool
    pool_losses: np.ndarray
    epsilon_resolved: float
    retained_indices: list[int]
    policy: SelectionPolicy
    policy_history: list[np.ndarray] = field(default_factory=list)
    selection: list[int] = field(default_factory=list)  # into retained_indices

    @property
    def selected_demos(self) -> list[Demonstration]:
        pruned = [self.pool.demos[i] for i in self.retained_indices]
        return [pruned[i] for i in self.selection]

    def to_manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "family": self.family,
            "d": self.d,
            "hidden_dim": self.hidden_dim,
            "seeds": {"seed": self.seed, "stream": self.stream},
            "pool_losses": [float(x) for x in self.pool_losses],
            "epsilon_resolved": self.epsilon_resolved,
            "retained_indices": self.retained_indices,
            "policy_logits_per_epoch": [h.tolist() for h in self.policy_history],
            "final_logits": self.policy.logits.tolist(),
            "selection": self.selection,
            "selected_pool_indices": [self.retained_indices[i] for i in self.selection],
            "pool": [
                {
                    "task": task_to_dict(demo.task),
                    "prompt": prompt_to_dict(demo.prompt),
                    "chains": [chain_to_dict(c) for c in demo.chains],
                }
                for demo in self.pool.demos
            ],
        }


def selected_demos_from_manifest(manifest: dict) -> list[Demonstration]:
    demos = []
    for idx in manifest["selected_pool_indices"]:
        entry = manifest["pool"][idx]
        demos.append(
            Demonstration(
                prompt=prompt_from_dict(entry["prompt"]),
                chains=tuple(chain_from_dict(c) for c in entry["chains"]),
                task=task_from_dict(entry["task"]),
                task_id=idx,
            )
        )
    return demos


def run_pipeline(
    model,
    cfg: PipelineConfig,
    family: str,
    d: int,
    rng: RngState,
    generator: ChainGenerator = oracle_chain_generator,
    hidden_dim: int = 100,
) -> PipelineResult:
    """Augment -> prune -> select, returning a replayable result."""
    pool_rng = rng.named("pool")
    policy_rng = rng.named("policy")
    pool = augment(family, cfg.pool_size, cfg.pool_k, d, generator, pool_rng, h=hidden_dim)
    losses = pool_losses(model, pool)
    eps = float(np.median(losses)) if cfg.epsilon == "median" else float(cfg.epsilon)
    pruned, retained = _prune_by_losses(pool, losses, eps)
    policy = SelectionPolicy(logits=np.zeros(len(pruned)))
    policy, history = select_train(
        policy, pruned, model, cfg, policy_rng, losses=losses[retained]
    )
    selection = top_selection(policy, cfg.batch_size)
    return PipelineResult(
        config=cfg,
        family=family,
        d=d,
        hidden_dim=hidden_dim,
        seed=rng.seed,
        stream=rng.stream,
        pool=pool,
        pool_losses=losses,
        epsilon_resolved=eps,
        retained_indices=retained,
        policy=policy,
        policy_history=history,
        selection=selection,
    )
