"""The temporal-set prediction network.

Per user, the forward pass runs four stages over the history of element sets:

1. weighted graph convolutions on the per-timestep co-occurrence graphs,
   giving each appearing element one feature row per timestep;
2. causally masked multi-head self-attention over each element's timestep
   rows, followed by a learned weighted aggregation into one vector;
3. a gated blend of the shared static embedding rows with the per-user
   dynamic vectors (rows of elements outside the user's history stay
   untouched);
4. a sigmoid scoring head over all element rows.

Ablation switches replace stage 1 with repeated raw embeddings (``no_erl``),
stage 2 with a plain temporal mean (``no_tdl``), or both (``neither``).
Forward passes over different users may run in parallel against a read-only
snapshot of the parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import SetPredictor, check_history
from .graph import CooccurrenceGraph, build_dynamic_graphs

ABLATIONS = ("full", "no_erl", "no_tdl", "neither")

_FEATURE_NORM_EPS = 1e-5


@dataclass
class ModelParams:
    """All trainable tensors, with gradient slots managed by the tape."""

    embeddings: Tensor  # m x F, static element representations
    conv_w: list[Tensor]  # layer l: F_l x F_{l-1}, shared across timesteps
    conv_b: list[Tensor]  # layer l: 1 x F_l
    heads: list[tuple[Tensor, Tensor, Tensor]]  # per head (W_q, W_k, W_v)
    w_agg: Tensor  # F x 1, timestep importance
    gamma: Tensor  # m x 1, static/dynamic gate
    w_out: Tensor  # F x 1
    b_out: Tensor  # 1 x 1

    def named(self) -> dict[str, Tensor]:
        out = {"embeddings": self.embeddings}
        for l, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"conv{l}_w"] = w
            out[f"conv{l}_b"] = b
        for h, (wq, wk, wv) in enumerate(self.heads):
            out[f"head{h}_q"] = wq
            out[f"head{h}_k"] = wk
            out[f"head{h}_v"] = wv
        out["w_agg"] = self.w_agg
        out["gamma"] = self.gamma
        out["w_out"] = self.w_out
        out["b_out"] = self.b_out
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.named().items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self.named().items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {t.shape}")
            t.values = arr.copy()

    @property
    def num_elements(self) -> int:
        return self.embeddings.shape[0]


def init_params(
    num_elements: int,
    embed_dim: int = 32,
    conv_layers: int = 2,
    heads: int = 4,
    conv_out_dim: int | None = None,
    seed: int = 0,
) -> ModelParams:
    """Fresh parameters: embeddings from the standard normal, weight matrices
    uniform in +-1/sqrt(fan_in), biases zero, gate at 0.5."""
    if conv_out_dim is None:
        conv_out_dim = embed_dim
    if conv_layers < 1:
        raise ValueError("need at least one convolutional layer")
    if embed_dim % heads != 0:
        raise ValueError(f"heads ({heads}) must divide the embedding dim ({embed_dim})")
    rng = np.random.default_rng(seed)

    def uniform(rows, cols, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))

    conv_w, conv_b = [], []
    in_dim = embed_dim
    for _ in range(conv_layers):
        conv_w.append(uniform(conv_out_dim, in_dim, in_dim))
        conv_b.append(ad.parameter(np.zeros((1, conv_out_dim))))
        in_dim = conv_out_dim

    head_dim = embed_dim // heads
    head_params = [
        tuple(uniform(conv_out_dim, head_dim, conv_out_dim) for _ in range(3))
        for _ in range(heads)
    ]
    return ModelParams(
        embeddings=ad.parameter(rng.standard_normal((num_elements, embed_dim))),
        conv_w=conv_w,
        conv_b=conv_b,
        heads=head_params,
        w_agg=uniform(embed_dim, 1, embed_dim),
        gamma=ad.parameter(np.full((num_elements, 1), 0.5)),
        w_out=uniform(embed_dim, 1, embed_dim),
        b_out=ad.parameter(np.zeros((1, 1))),
    )


@dataclass
class ForwardTrace:
    """Intermediate tensors of one user's forward pass."""

    nodes: tuple[int, ...]  # element indices appearing in the history
    conv_stacks: list[Tensor]  # per node: T x F' timestep features
    attended: list[Tensor] | None  # per node: T x F'' (None under no_tdl/neither)
    pooled: list[Tensor]  # per node: F'' x 1 compact representation
    e_update: Tensor  # m x F fused state
    y_hat: Tensor  # m x 1 probabilities
    graph: CooccurrenceGraph | None = field(default=None, repr=False)

    def probs(self) -> np.ndarray:
        return self.y_hat.values[:, 0].copy()


def causal_mask(length: int) -> np.ndarray:
    """Additive mask: row t may attend to columns t' <= t only."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = -np.inf
    return mask


def graph_conv(
    graph: CooccurrenceGraph,
    embeddings: Tensor,
    conv_w: list[Tensor],
    conv_b: list[Tensor],
    feature_norm: bool = False,
) -> list[Tensor]:
    """Per-element stacked timestep features from the weighted convolutions.

    For timestep t and layer l the node features become
    ``act(A_t @ H @ W_l^T + b_l)`` with ReLU on hidden layers and identity on
    the last; layer 0 input is the element's embedding row.  Returns one
    T x F' tensor per node, rows ordered by timestep.
    """
    num_nodes = graph.num_nodes
    base = ad.row_gather(embeddings, list(graph.nodes))
    per_step = []
    for a in graph.adjacency:
        h = base
        a_const = ad.constant(a)
        last = len(conv_w) - 1
        for l, (w, b) in enumerate(zip(conv_w, conv_b)):
            h = ad.add(ad.matmul(a_const, ad.matmul(h, ad.transpose(w))), b)
            if l < last:
                h = ad.relu(h)
                if feature_norm:
                    h = _standardize_columns(h)
        per_step.append(h)
    stacked = ad.concat(per_step, axis=0) if len(per_step) > 1 else per_step[0]
    steps = len(per_step)
    return [
        ad.row_gather(stacked, [t * num_nodes + j for t in range(steps)])
        for j in range(num_nodes)
    ]


def _standardize_columns(h: Tensor) -> Tensor:
    """Zero-mean unit-variance per feature across nodes (train-speed aid,
    stand-in for batch normalization; off by default)."""
    rows = h.shape[0]
    mean = ad.reduce_mean(h, axis=0)
    centered = ad.add(h, ad.scale(mean, -1.0))
    var = ad.reduce_mean(ad.mul(centered, centered), axis=0)
    inv_std = ad.powc(ad.add(var, ad.constant(np.full((1, h.shape[1]), _FEATURE_NORM_EPS))), -0.5)
    spread = ad.matmul(ad.constant(np.ones((rows, 1))), inv_std)
    return ad.mul(centered, spread)


def temporal_attention(
    c_stack: Tensor,
    heads: list[tuple[Tensor, Tensor, Tensor]],
    mask: np.ndarray,
) -> Tensor:
    """Causally masked self-attention over one element's timestep rows.

    Per head: ``softmax(Q K^T / sqrt(d_head) + mask) V`` with Q, K, V linear
    in the input rows; head outputs are concatenated on the feature axis.
    The per-head scaling uses the head width so the variance argument behind
    the single-head formula carries over.
    """
    outputs = []
    for wq, wk, wv in heads:
        head_dim = wq.shape[1]
        q = ad.matmul(c_stack, wq)
        k = ad.matmul(c_stack, wk)
        v = ad.matmul(c_stack, wv)
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(head_dim))
        attn = ad.masked_softmax(scores, mask)
        outputs.append(ad.matmul(attn, v))
    return ad.concat(outputs, axis=1) if len(outputs) > 1 else outputs[0]


def aggregate(z_stack: Tensor, w_agg: Tensor, normalize: bool = False) -> Tensor:
    """Compress timestep rows into one vector, weighted by ``Z w_agg``.

    The weights are used raw; ``normalize=True`` runs them through a softmax
    instead (stability experiments only).
    """
    weights = ad.matmul(z_stack, w_agg)  # T x 1
    if normalize:
        row = ad.masked_softmax(ad.transpose(weights), np.zeros((1, z_stack.shape[0])))
        return ad.transpose(ad.matmul(row, z_stack))
    return ad.matmul(ad.transpose(z_stack), weights)


def gated_fuse(
    embeddings: Tensor,
    nodes,
    pooled: list[Tensor],
    gamma: Tensor,
) -> Tensor:
    """Blend static embedding rows with dynamic vectors for appearing elements.

    Rows at ``nodes`` become ``(1 - g) * E_row + g * z`` with the gate value
    taken from ``gamma`` at the element's global index; all other rows are
    returned exactly as in ``embeddings``.
    """
    nodes = list(nodes)
    dim = embeddings.shape[1]
    dynamic = ad.concat([ad.transpose(z) for z in pooled], axis=0)  # V x F
    gate = ad.matmul(ad.row_gather(gamma, nodes), ad.constant(np.ones((1, dim))))
    keep = ad.add(ad.scale(gate, -1.0), ad.constant(np.ones((len(nodes), dim))))
    static = ad.row_gather(embeddings, nodes)
    fused = ad.add(ad.mul(static, keep), ad.mul(dynamic, gate))
    return ad.row_scatter_update(embeddings, nodes, fused)


def predict_probs(e_update: Tensor, w_out: Tensor, b_out: Tensor) -> Tensor:
    """Per-element probabilities for the next set: sigmoid(E w_o + b_o)."""
    return ad.sigmoid(ad.add(ad.matmul(e_update, w_out), b_out))


def forward(
    history,
    params: ModelParams,
    ablation: str = "full",
    graph: CooccurrenceGraph | None = None,
    graph_mode: str = "dynamic",
    feature_norm: bool = False,
    agg_normalize: bool = False,
) -> ForwardTrace:
    """Run the full pipeline for one user's history of element-index sets."""
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}, expected one of {ABLATIONS}")
    history = [frozenset(s) for s in history]
    if not history:
        raise ValueError("history must be non-empty")
    if graph is None:
        graph = build_dynamic_graphs(history, mode=graph_mode)
    steps = len(history)
    nodes = graph.nodes

    if ablation in ("full", "no_tdl"):
        conv_stacks = graph_conv(
            graph, params.embeddings, params.conv_w, params.conv_b, feature_norm
        )
    else:  # raw embedding rows repeated once per timestep
        conv_stacks = []
        for v in nodes:
            row = ad.row_gather(params.embeddings, [v])
            conv_stacks.append(ad.concat([row] * steps, axis=0) if steps > 1 else row)

    if ablation in ("full", "no_erl"):
        mask = causal_mask(steps)
        attended = [temporal_attention(c, params.heads, mask) for c in conv_stacks]
        pooled = [aggregate(z, params.w_agg, agg_normalize) for z in attended]
    else:  # plain temporal mean
        attended = None
        pooled = [ad.transpose(ad.reduce_mean(c, axis=0)) for c in conv_stacks]

    e_update = gated_fuse(params.embeddings, nodes, pooled, params.gamma)
    y_hat = predict_probs(e_update, params.w_out, params.b_out)
    return ForwardTrace(
        nodes=nodes,
        conv_stacks=conv_stacks,
        attended=attended,
        pooled=pooled,
        e_update=e_update,
        y_hat=y_hat,
        graph=graph,
    )


# ---------------------------------------------------------------------------
# checkpoints: one JSON document of named tensors


def save_checkpoint(params: ModelParams, config: dict, path, vocab=None) -> None:
    tensors = {
        name: {"shape": list(t.shape), "values": t.values.reshape(-1).tolist()}
        for name, t in params.named().items()
    }
    doc = {"format": "tempsets-checkpoint-v1", "config": config, "tensors": tensors}
    if vocab is not None:
        doc["vocab"] = {"raw_of": vocab.raw_of, "freq": vocab.freq}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> tuple[ModelParams, dict, "ElementVocab | None"]:
    from .data import ElementVocab

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "tempsets-checkpoint-v1":
        raise ValueError(f"{path}: not a checkpoint file")
    config = doc["config"]
    params = init_params(
        num_elements=config["num_elements"],
        embed_dim=config["embed_dim"],
        conv_layers=config["conv_layers"],
        heads=config["heads"],
        conv_out_dim=config.get("conv_out_dim"),
    )
    values = {}
    for name, entry in doc["tensors"].items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        values[name] = arr
    params.load_snapshot(values)  # validates shapes against the config
    vocab = None
    if "vocab" in doc:
        vocab = ElementVocab(raw_of=doc["vocab"]["raw_of"], freq=doc["vocab"]["freq"])
    return params, config, vocab


# ---------------------------------------------------------------------------
# estimator


class DNNTSP(SetPredictor):
    """Trainable temporal-set predictor with the estimator interface.

    ``fit`` takes a preprocessed ``Dataset`` (train/valid splits plus vocab)
    and keeps the parameters that score best on the validation split;
    ``predict_proba`` scores a single user's history of element-index sets.
    """

    def __init__(
        self,
        embed_dim: int = 32,
        conv_layers: int = 2,
        heads: int = 4,
        conv_out_dim: int | None = None,
        lr: float = 0.001,
        epochs: int = 100,
        batch_size: int = 64,
        l2: float = 0.0,
        seed: int = 0,
        ablation: str = "full",
        graph_mode: str = "dynamic",
        feature_norm: bool = False,
        agg_normalize: bool = False,
        train_fraction: float = 1.0,
        select_k: int = 10,
        workers: int = 1,
    ):
        self.embed_dim = embed_dim
        self.conv_layers = conv_layers
        self.heads = heads
        self.conv_out_dim = conv_out_dim
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed
        self.ablation = ablation
        self.graph_mode = graph_mode
        self.feature_norm = feature_norm
        self.agg_normalize = agg_normalize
        self.train_fraction = train_fraction
        self.select_k = select_k
        self.workers = workers
        self.params_: ModelParams | None = None
        self.vocab_ = None
        self.log_: list[dict] | None = None
        self.best_epoch_: int | None = None

    def fit(self, dataset) -> "DNNTSP":
        from .training import TrainConfig, train

        config = TrainConfig(**self.get_params())
        result = train(dataset, config)
        self.params_ = result.params
        self.vocab_ = dataset.vocab
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        return self

    def predict_proba(self, history) -> np.ndarray:
        self._check_fitted("params_")
        sets = check_history(history, self.params_.num_elements)
        trace = forward(
            sets,
            self.params_,
            ablation=self.ablation,
            graph_mode=self.graph_mode,
            feature_norm=self.feature_norm,
            agg_normalize=self.agg_normalize,
        )
        return trace.probs()

    def config_dict(self) -> dict:
        self._check_fitted("params_")
        cfg = self.get_params()
        cfg["num_elements"] = self.params_.num_elements
        if cfg["conv_out_dim"] is None:
            cfg["conv_out_dim"] = self.embed_dim
        return cfg

    def save(self, path) -> None:
        save_checkpoint(self.params_, self.config_dict(), path, vocab=self.vocab_)

    @classmethod
    def load(cls, path) -> "DNNTSP":
        params, config, vocab = load_checkpoint(path)
        known = set(cls._param_names())
        est = cls(**{k: v for k, v in config.items() if k in known})
        est.params_ = params
        est.vocab_ = vocab
        return est
