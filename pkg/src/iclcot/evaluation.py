"""Benchmark harness: normalized MSE and AUC versus context length.

Baseline runs score each of `repeats` resampled-context predictions
separately and average the losses; the Auto-CoT path averages the
predictions first (stage 4 of the pipeline) and scores the mean. Trials are
paired across methods: trial i uses the same task, query and context
resamples for both, so reports from the same seed support a paired sign
test.

AUC is reported for the regression outputs by binarizing the truths at
their median (label = truth > median) and ranking trials by predicted
value, with tied predictions contributing 0.5. This is an interpretation:
it is deterministic and label-balanced, but it is a definition choice, not
a quantity the task fixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .autocot import (
    ChainGenerator,
    Demonstration,
    PipelineConfig,
    PipelineResult,
    oracle_chain_generator,
    repeat_predictions,
    run_pipeline,
)
from .errors import ContractError, MetricUndefinedError, ReportMismatchError, ShapeError
from .rng import RngState
from .tasks import fresh_eval_task, sample_prompt

CSV_COLUMNS = ("method", "context_len", "trials", "repeats", "mse_mean",
               "mse_stderr", "auc", "seed", "config_hash")

TRIALS_CSV_COLUMNS = ("method", "context_len", "trial", "loss", "pred", "truth")


def mse_normalized(pred: float, truth: float, d: int) -> float:
    """(pred - truth)^2 / d, the per-query evaluation loss."""
    if d < 1:
        raise ContractError(f"d must be >= 1, got {d}")
    return (float(pred) - float(truth)) ** 2 / d


def auc_binarized(preds: np.ndarray, truths: np.ndarray) -> float:
    """ROC AUC with labels = (truth > median(truths)) and scores = preds;
    tied scores contribute 0.5. Raises MetricUndefinedError when only one
    label class is present."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise ShapeError(f"preds {preds.shape} and truths {truths.shape} must be equal 1-D")
    if preds.size < 2:
        raise ContractError("AUC needs at least 2 samples")
    labels = truths > np.median(truths)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC undefined: only one label class present")
    order = np.argsort(preds, kind="mergesort")
    ranks = np.empty(preds.size)
    i = 0
    while i < preds.size:  # average ranks across tied scores
        j = i
        while j < preds.size and preds[order[j]] == preds[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0
        i = j
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def sign_test_pvalue(deltas: np.ndarray, alternative: str = "two-sided") -> float:
    """Paired sign test on per-trial deltas; zeros are dropped.

    alternative="less" tests whether deltas tend negative (the first method
    of the pair losing less); "two-sided" doubles the smaller tail.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    nonzero = deltas[deltas != 0.0]
    n = nonzero.size
    if n == 0:
        return 1.0
    neg = int((nonzero < 0).sum())

    def tail_le(k: int) -> Fraction:
        return Fraction(sum(math.comb(n, j) for j in range(0, k + 1)), 2**n)

    if alternative == "less":
        # small p when negatives dominate: P(X <= n - neg) with X ~ Bin(n, 1/2)
        p = tail_le(n - neg)
    elif alternative == "two-sided":
        p = 2 * tail_le(min(neg, n - neg))
    else:
        raise ContractError(f"unknown alternative {alternative!r}")
    return float(min(p, Fraction(1)))


@dataclass(frozen=True)
class EvalConfig:
    context_lengths: tuple[int, ...] = (1, 4, 8, 15, 24, 33, 40)
    repeats: int = 64
    trials: int = 32
    seed: int = 0
    family: str = "linear"
    d: int = 20
    hidden_dim: int = 100
    pipeline: PipelineConfig | None = None  # absent -> baseline

    def __post_init__(self):
        if any(c < 1 for c in self.context_lengths):
            raise ContractError("context lengths must be positive")
        if self.repeats < 1 or self.trials < 1:
            raise ContractError("repeats and trials must be >= 1")


@dataclass
class LengthResult:
    context_len: int
    trials: int
    repeats: int
    mse_mean: float
    mse_stderr: float
    auc: float | None
    per_trial_losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    per_trial_preds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    per_trial_truths: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class EvalReport:
    method: str
    rows: list[LengthResult]
    seed: int
    config_hash: str = ""
    partial: bool = False
    pipeline_result: PipelineResult | None = None

    def context_lengths(self) -> tuple[int, ...]:
        return tuple(r.context_len for r in self.rows)


def _trial_rng(rng: RngState, length_index: int, trial: int, trials: int) -> RngState:
    return rng.split(length_index * trials + trial)


def run_eval(
    model,
    cfg: EvalConfig,
    rng: RngState | None = None,
    selected_demos: Sequence[Demonstration] | None = None,
    generator: ChainGenerator = oracle_chain_generator,
    partial_sink: Callable[["EvalReport"], None] | None = None,
) -> EvalReport:
    """Evaluate `model` over cfg.context_lengths.

    With a pipeline config (or explicit selected_demos) the Auto-CoT path
    runs end to end; otherwise the baseline. Per-trial streams derive from
    (seed, trial index), so baseline and Auto-CoT runs with the same seed
    evaluate the same tasks, queries and context resamples (paired trials).
    On error the exception propagates after `partial_sink` receives the
    rows finished so far flagged partial=True.
    """
    rng = rng if rng is not None else RngState(cfg.seed).named("eval")
    pipeline_result = None
    if selected_demos is None and cfg.pipeline is not None:
        pipeline_result = run_pipeline(
            model, cfg.pipeline, cfg.family, cfg.d, rng.named("pipeline"),
            generator=generator, hidden_dim=cfg.hidden_dim,
        )
        selected_demos = pipeline_result.selected_demos
    demos: Sequence[Demonstration] = selected_demos if selected_demos is not None else ()
    method = "autocot" if len(demos) > 0 or cfg.pipeline is not None else "baseline"
    average_predictions = method == "autocot"

    lengths = sorted(cfg.context_lengths)
    rows: list[LengthResult] = []
    try:
        for li, c in enumerate(lengths):
            losses = np.zeros(cfg.trials)
            preds = np.zeros(cfg.trials)
            truths = np.zeros(cfg.trials)
            for t in range(cfg.trials):
                trng = _trial_rng(rng, li, t, cfg.trials)
                task = fresh_eval_task(cfg.family, cfg.d, trng, h=cfg.hidden_dim)
                prompt = sample_prompt(task, c, trng)
                truth = float(prompt.query_y)
                run_preds = repeat_predictions(
                    model, demos, task, prompt, cfg.repeats, trng
                )
                if average_predictions:
                    pred = float(run_preds.mean())
                    loss = mse_normalized(pred, truth, cfg.d)
                else:
                    pred = float(run_preds.mean())
                    loss = float(
                        np.mean((run_preds - truth) ** 2) / cfg.d
                    )
                losses[t] = loss
                preds[t] = pred
                truths[t] = truth
            try:
                auc = auc_binarized(preds, truths) if cfg.trials >= 2 else None
            except MetricUndefinedError:
                auc = None
            stderr = (
                float(losses.std(ddof=1) / np.sqrt(cfg.trials)) if cfg.trials > 1 else 0.0
            )
            rows.append(
                LengthResult(
                    context_len=c,
                    trials=cfg.trials,
                    repeats=cfg.repeats,
                    mse_mean=float(losses.mean()),
                    mse_stderr=stderr,
                    auc=auc,
                    per_trial_losses=losses,
                    per_trial_preds=preds,
                    per_trial_truths=truths,
                )
            )
    except Exception:
        if partial_sink is not None:
            partial_sink(EvalReport(method=method, rows=rows, seed=cfg.seed,
                                    partial=True, pipeline_result=pipeline_result))
        raise
    return EvalReport(
        method=method, rows=rows, seed=cfg.seed, pipeline_result=pipeline_result
    )


# -- comparison ----------------------------------------------------------------


@dataclass
class ComparisonRow:
    context_len: int
    baseline_mse: float
    autocot_mse: float
    delta: float  # autocot - baseline; negative = Auto-CoT better
    p_value: float | None


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]


def compare(baseline: EvalReport, autocot: EvalReport) -> ComparisonReport:
    """Paired per-length table; delta = autocot - baseline (negative means
    Auto-CoT better). The p-value is a two-sided paired sign test over
    per-trial losses when both reports carry them with equal trial counts."""
    if baseline.context_lengths() != autocot.context_lengths():
        raise ReportMismatchError(
            f"context lengths differ: {baseline.context_lengths()} vs "
            f"{autocot.context_lengths()}"
        )
    rows = []
    for rb, ra in zip(baseline.rows, autocot.rows):
        p = None
        if (
            rb.per_trial_losses.size == ra.per_trial_losses.size
            and rb.per_trial_losses.size > 0
        ):
            p = sign_test_pvalue(ra.per_trial_losses - rb.per_trial_losses)
        rows.append(
            ComparisonRow(
                context_len=rb.context_len,
                baseline_mse=rb.mse_mean,
                autocot_mse=ra.mse_mean,
                delta=ra.mse_mean - rb.mse_mean,
                p_value=p,
            )
        )
    return ComparisonReport(rows=rows)


def comparison_to_markdown(comp: ComparisonReport) -> str:
    lines = [
        "| context_len | baseline_mse | autocot_mse | delta | sign_test_p |",
        "|---|---|---|---|---|",
    ]
    for r in comp.rows:
        p = "" if r.p_value is None else _fmt(r.p_value)
        lines.append(
            f"| {r.context_len} | {_fmt(r.baseline_mse)} | {_fmt(r.autocot_mse)} "
            f"| {_fmt(r.delta)} | {p} |"
        )
    lines.append("")
    lines.append("delta = autocot - baseline; negative delta = Auto-CoT better.")
    return "\n".join(lines)


# -- CSV ------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return str(float(x))


def report_to_csv(report: EvalReport) -> str:
    """metrics.csv body: exact column set, one row per context length.
    An undefined AUC is an empty field."""
    lines = [",".join(CSV_COLUMNS)]
    for r in report.rows:
        auc = "" if r.auc is None else _fmt(r.auc)
        lines.append(
            f"{report.method},{r.context_len},{r.trials},{r.repeats},"
            f"{_fmt(r.mse_mean)},{_fmt(r.mse_stderr)},{auc},"
            f"{report.seed},{report.config_hash}"
        )
    return "\n".join(lines) + "\n"


def report_from_csv(text: str) -> EvalReport:
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = tuple(lines[0].split(","))
    if header != CSV_COLUMNS:
        raise ReportMismatchError(f"unexpected CSV header {header}")
    rows = []
    method = "baseline"
    seed = 0
    config_hash = ""
    for ln in lines[1:]:
        parts = ln.split(",")
        method = parts[0]
        seed = int(parts[7])
        config_hash = parts[8]
        rows.append(
            LengthResult(
                context_len=int(parts[1]),
                trials=int(parts[2]),
                repeats=int(parts[3]),
                mse_mean=float(parts[4]),
                mse_stderr=float(parts[5]),
                auc=None if parts[6] == "" else float(parts[6]),
            )
        )
    rows.sort(key=lambda r: r.context_len)
    return EvalReport(method=method, rows=rows, seed=seed, config_hash=config_hash)


def trials_to_csv(report: EvalReport) -> str:
    """Per-trial sidecar enabling the paired sign test across runs."""
    lines = [",".join(TRIALS_CSV_COLUMNS)]
    for r in report.rows:
        for t in range(r.per_trial_losses.size):
            lines.append(
                f"{report.method},{r.context_len},{t},{_fmt(r.per_trial_losses[t])},"
                f"{_fmt(r.per_trial_preds[t])},{_fmt(r.per_trial_truths[t])}"
            )
    return "\n".join(lines) + "\n"


def attach_trials_from_csv(report: EvalReport, text: str) -> EvalReport:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if tuple(lines[0].split(",")) != TRIALS_CSV_COLUMNS:
        raise ReportMismatchError("unexpected trials CSV header")
    by_len: dict[int, list[tuple[int, float, float, float]]] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        by_len.setdefault(int(parts[1]), []).append(
            (int(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]))
        )
    rows = []
    for r in report.rows:
        entries = sorted(by_len.get(r.context_len, []))
        if entries:
            r = replace(
                r,
                per_trial_losses=np.array([e[1] for e in entries]),
                per_trial_preds=np.array([e[2] for e in entries]),
                per_trial_truths=np.array([e[3] for e in entries]),
            )
        rows.append(r)
    return EvalReport(
        method=report.method, rows=rows, seed=report.seed,
        config_hash=report.config_hash, partial=report.partial,
    )
