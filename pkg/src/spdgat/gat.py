"""Edge-weighted GATv2 classifier over connectomes.

Attention scores follow the v2 ordering (nonlinearity inside, attention
vector outside): e_ij = a^T LeakyReLU([Theta h_i || Theta h_j]), normalized
by a per-destination softmax.  Neighbor aggregation uses edge-aware message
vectors m_ij = MLP([h_i ; h_j ; w_ij]) weighted by the attention
coefficients, so the scalar connectivity weight enters every update.  The
graph embedding is a residual readout g = MLP(z) + z over the node sum (or
mean), followed by a linear head and log-softmax.

Training runs the stratified sample-selection stage, class-balancing
oversampling, and a seeded Adam loop; everything lives on the reverse-mode
tape from :mod:`spdgat.autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_step
from .errors import DimensionMismatch, EmptyClass, ShapeMismatch
from .graphs import Connectome
from .metrics import stratified_kfold, weighted_f1
from .selection import (
    SelectionConfig,
    SelectionRow,
    build_pair_features,
    fit_difference_regressor,
    random_oversample,
    score_samples,
    select_top_k_stratified,
)


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    classes: int
    hidden_dim: int = 8
    heads: int = 2
    layers: int = 2
    dropout: float = 0.1
    negative_slope: float = 0.2
    readout: str = "sum"  # sum | mean

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.readout not in ("sum", "mean"):
            raise ValueError(f"readout must be 'sum' or 'mean', got {self.readout!r}")
        if self.layers < 1 or self.heads < 1:
            raise ValueError("layers and heads must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 2
    seed: int = 0
    weight_decay: float = 0.0
    sample_selection: bool = True


@dataclass
class TrainRecord:
    epoch: int
    fold: int
    train_loss: float
    val_loss: float
    val_f1: float


@dataclass
class AttentionRecord:
    """Attention coefficients of one forward pass, indexed by directed edge."""

    dim: int
    dst: np.ndarray
    src: np.ndarray
    alphas: list  # per layer: (heads, n_edges) array

    def dense(self) -> list:
        """One (d, d) matrix per (layer, head); entry (i, j) is i's attention on j."""
        mats = []
        for layer_alphas in self.alphas:
            for head in layer_alphas:
                m = np.zeros((self.dim, self.dim))
                m[self.dst, self.src] = head
                mats.append(m)
        return mats


@dataclass
class Prediction:
    class_id: int
    log_probs: np.ndarray
    attention: AttentionRecord


@dataclass
class TrainResult:
    records: list
    selection: list | None
    train_attention: dict
    holdout_ids: list


class GatModel:
    """Parameter container; all arrays are float64 and live in a flat named dict."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    @staticmethod
    def _layer_dims(config: ModelConfig) -> list:
        dims = []
        f_in = config.in_dim
        for layer in range(config.layers):
            dims.append((f_in, config.hidden_dim))
            last = layer == config.layers - 1
            f_in = config.hidden_dim if last else config.hidden_dim * config.heads
        return dims

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "GatModel":
        """Glorot-uniform weights, zero biases, deterministic under the seed."""
        rng = np.random.default_rng(seed)

        def glorot(fan_out, fan_in):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_out, fan_in))

        params: dict = {}
        for layer, (f_in, f_out) in enumerate(cls._layer_dims(config)):
            for head in range(config.heads):
                params[f"layer{layer}.head{head}.theta"] = glorot(f_out, f_in)
                params[f"layer{layer}.head{head}.attn"] = glorot(1, 2 * f_out)[0]
            msg_in = 2 * f_in + 1
            params[f"layer{layer}.message.w0"] = glorot(f_out, msg_in)
            params[f"layer{layer}.message.b0"] = np.zeros(f_out)
            params[f"layer{layer}.message.w1"] = glorot(f_out, f_out)
            params[f"layer{layer}.message.b1"] = np.zeros(f_out)
        h = config.hidden_dim
        params["readout.w0"] = glorot(h, h)
        params["readout.b0"] = np.zeros(h)
        params["readout.w1"] = glorot(h, h)
        params["readout.b1"] = np.zeros(h)
        params["classifier.w"] = glorot(config.classes, h)
        params["classifier.b"] = np.zeros(config.classes)
        return cls(config, params)

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}


def connectome_edges(conn: Connectome):
    """Directed edge arrays (dst, src, weight) over all nonzero entries.

    Row i collects from column j, matching the attention orientation
    "importance of j's features to i".  Order is row-major, hence
    deterministic.
    """
    dst, src = np.nonzero(conn.weights)
    return dst, src, conn.weights[dst, src]


def _mlp(x: Tensor, p: dict, prefix: str) -> Tensor:
    hidden = ad.elu(ad.add(ad.matmul(x, _transpose(p[f"{prefix}.w0"])), p[f"{prefix}.b0"]))
    return ad.add(ad.matmul(hidden, _transpose(p[f"{prefix}.w1"])), p[f"{prefix}.b1"])


def _transpose(tensor: Tensor) -> Tensor:
    out_shape = tensor.data.T.shape

    def bwd(g):
        return (g.T,)

    return ad._make(np.ascontiguousarray(tensor.data.T), (tensor,), bwd)


def forward_connectome(
    model: GatModel,
    conn: Connectome,
    tape: Tape | None = None,
    leaves: dict | None = None,
    train: bool = False,
    dropout_seeds=None,
):
    """Run the full stack on one graph.

    Returns (log_probs Tensor of shape (1, C), AttentionRecord).  When a tape
    and bound parameter leaves are given the pass is recorded for backward;
    otherwise it is a pure evaluation.
    """
    cfg = model.config
    if conn.node_features.shape[1] != cfg.in_dim:
        raise DimensionMismatch(
            f"model expects {cfg.in_dim} node features, got {conn.node_features.shape[1]}"
        )
    if leaves is None:
        if tape is None:
            tape = Tape()
        leaves = {k: tape.tensor(v, requires_grad=False) for k, v in model.params.items()}

    d = conn.dim
    dst, src, w = connectome_edges(conn)
    w_col = w.reshape(-1, 1)
    h = Tensor(conn.node_features)
    seeds = iter(dropout_seeds) if dropout_seeds is not None else None

    alphas_per_layer = []
    for layer in range(cfg.layers):
        last = layer == cfg.layers - 1
        # edge-aware messages, shared across heads
        msg_in = ad.concat([ad.gather_rows(h, dst), ad.gather_rows(h, src), Tensor(w_col)], axis=1)
        messages = _mlp(msg_in, leaves, f"layer{layer}.message")

        head_aggs = []
        layer_alphas = np.zeros((cfg.heads, dst.size))
        for head in range(cfg.heads):
            theta = leaves[f"layer{layer}.head{head}.theta"]
            attn = leaves[f"layer{layer}.head{head}.attn"]
            q = ad.matmul(h, _transpose(theta))
            pair = ad.concat([ad.gather_rows(q, dst), ad.gather_rows(q, src)], axis=1)
            scores = ad.matmul(ad.leaky_relu(pair, cfg.negative_slope), attn)
            alpha = ad.softmax_over_segments(scores, dst, d)
            layer_alphas[head] = alpha.data
            if train and cfg.dropout > 0:
                alpha = ad.dropout(alpha, cfg.dropout, int(next(seeds)), train=True)
            weighted = ad.mul(ad.reshape(alpha, (-1, 1)), messages)
            head_aggs.append(ad.segment_sum(weighted, dst, d))
        alphas_per_layer.append(layer_alphas)

        if last:
            total = head_aggs[0]
            for agg in head_aggs[1:]:
                total = ad.add(total, agg)
            h = ad.elu(ad.scalar_mul(total, 1.0 / cfg.heads))
        else:
            h = ad.concat([ad.elu(agg) for agg in head_aggs], axis=1)

    z = ad.segment_sum(h, np.zeros(d, dtype=np.intp), 1)
    if cfg.readout == "mean":
        z = ad.scalar_mul(z, 1.0 / d)
    g = ad.add(_mlp(z, leaves, "readout"), z)
    logits = ad.add(ad.matmul(g, _transpose(leaves["classifier.w"])), leaves["classifier.b"])
    log_probs = ad.log_softmax_rows(logits)
    record = AttentionRecord(dim=d, dst=dst, src=src, alphas=alphas_per_layer)
    return log_probs, record


def predict(model: GatModel, conn: Connectome) -> Prediction:
    """Evaluation-mode forward pass; ties go to the lowest class id."""
    log_probs, record = forward_connectome(model, conn, train=False)
    vec = log_probs.data[0]
    return Prediction(class_id=int(np.argmax(vec)), log_probs=vec, attention=record)


def class_weights(labels, n_classes: int) -> np.ndarray:
    """Inverse-frequency rescaling weights, normalized to mean 1 over present classes."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = labels.size / (n_classes * counts[present])
    w[present] /= w[present].mean()
    return w


def weighted_nll_loss(log_probs: Tensor, labels, weights) -> Tensor:
    """Class-weighted negative log likelihood, averaged over the batch.

    ``labels`` may be integer ids or a one-hot matrix aligned with the
    (n, C) log-probability rows.
    """
    n, c = log_probs.data.shape
    labels = np.asarray(labels)
    if labels.ndim == 1:
        onehot = np.zeros((n, c))
        onehot[np.arange(n), labels] = 1.0
    else:
        onehot = labels.astype(np.float64)
    if onehot.shape != (n, c):
        raise ShapeMismatch(f"labels shape {onehot.shape} vs log_probs {log_probs.data.shape}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (c,):
        raise ShapeMismatch(f"class weights shape {weights.shape}, expected ({c},)")
    return ad.scalar_mul(ad.sum_all(ad.mul(log_probs, onehot * weights)), -1.0 / n)


def _eval_loss(model: GatModel, samples, weights) -> float:
    if not samples:
        return float("nan")
    logps = np.stack([predict(model, s).log_probs for s in samples])
    labels = np.array([s.label for s in samples])
    onehot = np.zeros_like(logps)
    onehot[np.arange(len(samples)), labels] = 1.0
    return float(-(onehot * weights * logps).sum() / len(samples))


def train(
    model: GatModel,
    samples: list,
    selection_cfg: SelectionConfig,
    train_cfg: TrainConfig,
    fold: int = 0,
) -> TrainResult:
    """Sample selection, oversampling, and the seeded Adam training loop.

    The fold's training pool is split (stratified, seeded) into a train-in
    group and a holdout group; selection scores train-in samples against the
    holdout features only, and the holdout group serves as the validation
    set for per-epoch monitoring.  The model parameters are updated in
    place.
    """
    cfg = model.config
    labels = np.array([s.label for s in samples])
    present = np.unique(labels)
    if present.size < cfg.classes:
        missing = sorted(set(range(cfg.classes)) - set(present.tolist()))
        raise EmptyClass(f"training pool lacks class(es) {missing}")

    assign = stratified_kfold(labels, selection_cfg.folds, seed=train_cfg.seed + 104729)
    holdout = [s for s, a in zip(samples, assign) if a == 0]
    train_in = [s for s, a in zip(samples, assign) if a != 0]

    selection_rows = None
    if train_cfg.sample_selection:
        pairs = build_pair_features(train_in, selection_cfg)
        regressor = fit_difference_regressor(pairs, selection_cfg.ridge_lambda)
        scores = score_samples(regressor, train_in, holdout, selection_cfg)
        id_labels = {s.subject_id: s.label for s in train_in}
        chosen = set(select_top_k_stratified(scores, id_labels, selection_cfg.k_per_class))
        selection_rows = [
            SelectionRow(s.subject_id, s.label, scores[s.subject_id], s.subject_id in chosen)
            for s in train_in
        ]
        selected = [s for s in train_in if s.subject_id in chosen]
    else:
        selected = list(train_in)

    train_set = random_oversample(selected, selection_cfg.oversample_seed)
    weights = class_weights([s.label for s in train_set], cfg.classes)

    rng = np.random.default_rng(train_cfg.seed)
    state = AdamState()
    records: list = []
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + train_cfg.batch_size]]
            tape = Tape()
            leaves = {k: tape.tensor(v, requires_grad=True) for k, v in model.params.items()}
            logps = []
            for sample in batch:
                n_seeds = cfg.layers * cfg.heads
                seeds = rng.integers(0, 2**63, size=n_seeds)
                lp, _ = forward_connectome(
                    model, sample, tape=tape, leaves=leaves, train=True, dropout_seeds=seeds
                )
                logps.append(lp)
            loss = weighted_nll_loss(
                ad.concat(logps, axis=0), [s.label for s in batch], weights
            )
            ad.backward(loss)
            grads = {k: leaves[k].grad for k in model.params if leaves[k].grad is not None}
            model.params, state = adam_step(
                model.params,
                grads,
                state,
                lr=train_cfg.lr,
                weight_decay=train_cfg.weight_decay,
            )
        val_f1 = float("nan")
        if holdout:
            preds = [predict(model, s).class_id for s in holdout]
            val_f1 = weighted_f1([s.label for s in holdout], preds)
        records.append(
            TrainRecord(
                epoch=epoch,
                fold=fold,
                train_loss=_eval_loss(model, train_set, weights),
                val_loss=_eval_loss(model, holdout, weights),
                val_f1=val_f1,
            )
        )

    train_attention = {s.subject_id: predict(model, s).attention for s in selected}
    return TrainResult(
        records=records,
        selection=selection_rows,
        train_attention=train_attention,
        holdout_ids=[s.subject_id for s in holdout],
    )
