"""Loss, Adam optimizer and the training loop with validation selection.

The loss is mean binary cross-entropy over elements and users plus an
explicit L2 penalty over every trainable tensor; log arguments are clamped
to [1e-12, 1] so the loss stays finite.  Training shuffles users with an
(seed, epoch)-derived generator, so two runs with the same seed produce
identical logs and parameter trajectories.  Within a batch, per-user forward
passes may run on a thread pool against the read-only parameter values; the
batch tape is then combined and stepped serially, keeping gradient reduction
a deterministic ordered sum.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import Tensor
from .data import Dataset, UserSequence, subsample_train
from .graph import build_dynamic_graphs
from .model import ABLATIONS, ModelParams, forward, init_params

LOG_CLAMP = 1e-12


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass
class TrainConfig:
    """Hyperparameters for architecture and optimization.

    The attention width always equals ``embed_dim`` (the fused update needs
    matching dimensions), and ``conv_out_dim`` defaults to it too.
    """

    embed_dim: int = 32
    conv_layers: int = 2
    heads: int = 4
    conv_out_dim: int | None = None
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    l2: float = 0.0
    seed: int = 0
    ablation: str = "full"
    graph_mode: str = "dynamic"
    feature_norm: bool = False
    agg_normalize: bool = False
    train_fraction: float = 1.0
    select_k: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.conv_out_dim is None:
            self.conv_out_dim = self.embed_dim
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.ablation != "full" and self.conv_out_dim != self.embed_dim:
            raise ValueError("ablation modes require conv_out_dim == embed_dim")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def bce_l2_loss(
    y_hat: list[Tensor],
    y_true: list[np.ndarray],
    params: ModelParams,
    l2: float,
) -> Tensor:
    """Batch loss: ``-(1/N) sum_i (1/m) sum_j [y log p + (1-y) log(1-p)]``
    plus ``l2 * ||W||^2`` over all trainable tensors."""
    if len(y_hat) != len(y_true):
        raise ValueError(f"batch size mismatch: {len(y_hat)} predictions, {len(y_true)} targets")
    per_user = []
    for probs, target in zip(y_hat, y_true):
        target = np.asarray(target, dtype=np.float64).reshape(-1, 1)
        if target.shape != probs.shape:
            raise ValueError(f"target shape {target.shape} != prediction shape {probs.shape}")
        pos = ad.constant(target)
        neg = ad.constant(1.0 - target)
        flipped = ad.add(ad.scale(probs, -1.0), ad.constant(np.ones_like(target)))
        term = ad.add(
            ad.mul(pos, ad.log(ad.clamp(probs, LOG_CLAMP, 1.0))),
            ad.mul(neg, ad.log(ad.clamp(flipped, LOG_CLAMP, 1.0))),
        )
        per_user.append(ad.reduce_mean(term))
    stacked = ad.concat(per_user, axis=0) if len(per_user) > 1 else per_user[0]
    loss = ad.scale(ad.reduce_mean(stacked), -1.0)
    if l2 != 0.0:
        squares = [ad.reduce_sum(ad.mul(p, p)) for p in params.tensors()]
        penalty = ad.reduce_sum(ad.concat(squares, axis=0))
        loss = ad.add(loss, ad.scale(penalty, l2))
    return loss


@dataclass
class AdamState:
    """First/second moment estimates per parameter, with bias correction."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, named: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.values) for name, t in named.items()},
            v={name: np.zeros_like(t.values) for name, t in named.items()},
        )


def adam_step(named: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place; missing grads count as zero."""
    state.step += 1
    t = state.step
    for name, p in named.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1**t)
        v_hat = state.v[name] / (1.0 - state.beta2**t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainResult:
    params: ModelParams  # loaded with the best-on-validation snapshot
    best_epoch: int
    best_score: float
    log: list[dict] = field(repr=False)


def _target_vector(seq: UserSequence, num_elements: int) -> np.ndarray:
    y = np.zeros((num_elements, 1))
    y[sorted(seq.target)] = 1.0
    return y


def _forward_batch(sequences, graphs, params, config) -> list:
    def run(i):
        return forward(
            sequences[i].history,
            params,
            ablation=config.ablation,
            graph=graphs[i],
            feature_norm=config.feature_norm,
            agg_normalize=config.agg_normalize,
        )

    indices = range(len(sequences))
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(run, indices))
    return [run(i) for i in indices]


def _validate(params, config, sequences, graphs, k) -> dict[str, float]:
    recalls, ndcgs, hits = [], [], []
    for trace, seq in zip(_forward_batch(sequences, graphs, params, config), sequences):
        ranked = metrics.topk(trace.probs(), k)
        recalls.append(metrics.recall_at_k(ranked, seq.target))
        ndcgs.append(metrics.ndcg_at_k(ranked, seq.target, k))
        hits.append(bool(set(ranked) & seq.target))
    return {
        f"recall@{k}": float(np.mean(recalls)),
        f"ndcg@{k}": float(np.mean(ndcgs)),
        f"phr@{k}": metrics.phr_at_k(hits),
    }


def train(dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Optimize on the train split, selecting the checkpoint with the best
    validation Recall@``select_k``.

    Raises ``TrainingDiverged`` naming the epoch and batch if the loss goes
    non-finite.
    """
    if not dataset.train or not dataset.valid:
        raise ValueError("training needs non-empty train and validation splits")
    if config.train_fraction < 1.0:
        dataset = subsample_train(dataset, config.train_fraction, seed=config.seed)

    m = dataset.num_elements
    params = init_params(
        m,
        embed_dim=config.embed_dim,
        conv_layers=config.conv_layers,
        heads=config.heads,
        conv_out_dim=config.conv_out_dim,
        seed=config.seed,
    )
    named = params.named()
    state = AdamState.for_params(named)

    graph_of = lambda seq: build_dynamic_graphs(seq.history, mode=config.graph_mode)
    train_graphs = [graph_of(seq) for seq in dataset.train]
    valid_graphs = [graph_of(seq) for seq in dataset.valid]
    targets = [_target_vector(seq, m) for seq in dataset.train]

    select_k = min(config.select_k, m)  # tiny vocabularies cap the cutoff
    n = len(dataset.train)
    log: list[dict] = []
    best_score, best_epoch, best_values = -1.0, 0, params.snapshot()
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            seqs = [dataset.train[i] for i in batch]
            graphs = [train_graphs[i] for i in batch]
            traces = _forward_batch(seqs, graphs, params, config)
            loss = bce_l2_loss(
                [t.y_hat for t in traces], [targets[i] for i in batch], params, config.l2
            )
            value = loss.values.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            params.zero_grad()
            ad.backward(loss)
            adam_step(named, state, config.lr)
            batch_losses.append(value)

        row = {"epoch": epoch, "loss": float(np.mean(batch_losses))}
        row.update(_validate(params, config, dataset.valid, valid_graphs, select_k))
        log.append(row)
        score = row[f"recall@{select_k}"]
        if score > best_score:
            best_score, best_epoch, best_values = score, epoch, params.snapshot()

    params.load_snapshot(best_values)
    return TrainResult(params=params, best_epoch=best_epoch, best_score=best_score, log=log)


def write_log_csv(log: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(log[0].keys()))
        writer.writeheader()
        writer.writerows(log)


# ---------------------------------------------------------------------------
# gradient audit


def run_grad_audit(config: TrainConfig | None = None, tol: float = 1e-4) -> dict:
    """Finite-difference check of every parameter tensor through the full
    loss on a fixed toy user (4 elements, 3 of them appearing over 3 steps).

    The toy geometry is fixed; ablation mode, head count and the other
    behavioural switches come from ``config``.
    """
    if config is None:
        config = TrainConfig()
    if 4 % config.heads != 0:
        raise ValueError("audit uses a width of 4; heads must divide 4")
    history = [frozenset({0, 1}), frozenset({1, 2}), frozenset({0, 2})]
    target = np.zeros((4, 1))
    target[[0, 3]] = 1.0
    params = init_params(
        4, embed_dim=4, conv_layers=config.conv_layers, heads=config.heads, seed=7
    )
    graph = build_dynamic_graphs(history, mode=config.graph_mode)

    def loss_fn():
        trace = forward(
            history,
            params,
            ablation=config.ablation,
            graph=graph,
            feature_norm=config.feature_norm,
            agg_normalize=config.agg_normalize,
        )
        return bce_l2_loss([trace.y_hat], [target], params, config.l2)

    report = ad.grad_check(loss_fn, params.named(), step=1e-5, tol=tol)
    report["config"] = {"ablation": config.ablation, "heads": config.heads, "l2": config.l2}
    return report
