"""Minimal reverse-mode differentiation engine over dense float64 tensors.

A :class:`Tape` records every operation in execution order; backward
traverses the records in exact reverse order and accumulates gradients
additively across fan-out.  The op set is just large enough to express an
edge-weighted graph-attention stack: dense linear algebra, concatenation,
gather/segment primitives (the segment softmax is the per-node attention
normalization), pointwise nonlinearities, and dropout.

Tensors detached from any tape still compute forward values, which is how
evaluation-mode passes run without recording.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DetachedTensor,
    InvalidSegment,
    NonFinite,
    NotScalar,
    ShapeMismatch,
)

_DEBUG_FINITE = False


def set_debug_finite_checks(enabled: bool) -> None:
    """Toggle a finiteness assertion after every forward op (slow; tests only)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


@dataclass
class _Node:
    node_id: int
    input_ids: tuple
    backward_fn: object  # callable(grad_out) -> tuple of input grads (None for constants)
    tensor: "Tensor"


class Tensor:
    """Dense float64 array with an optional tape attachment."""

    __slots__ = ("data", "requires_grad", "tape", "node_id", "grad")

    def __init__(self, data, requires_grad: bool = False, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.tape = tape
        self.node_id: int | None = None
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Append-only operation record; topological order equals append order."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def tensor(self, data, requires_grad: bool = False) -> Tensor:
        """Create a leaf tensor attached to this tape."""
        t = Tensor(data, requires_grad=requires_grad, tape=self)
        t.node_id = len(self._nodes)
        self._nodes.append(_Node(t.node_id, (), None, t))
        return t

    def _record(self, out: Tensor, inputs: tuple, backward_fn) -> None:
        out.node_id = len(self._nodes)
        self._nodes.append(
            _Node(out.node_id, tuple(t.node_id for t in inputs), backward_fn, out)
        )

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of ``loss`` into every requires_grad tensor on the tape."""
        if loss.tape is not self or loss.node_id is None:
            raise DetachedTensor("loss tensor is not attached to this tape")
        if loss.data.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node in reversed(self._nodes[: loss.node_id + 1]):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node.tensor.requires_grad:
                node.tensor.grad = g if node.tensor.grad is None else node.tensor.grad + g
            if node.backward_fn is None:
                continue
            input_grads = node.backward_fn(g)
            for input_id, gi in zip(node.input_ids, input_grads):
                if gi is None or input_id is None:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + gi
                else:
                    grads[input_id] = gi


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; see :meth:`Tape.backward`."""
    if loss.tape is None:
        raise DetachedTensor("loss tensor was never attached to a tape")
    loss.tape.backward(loss)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _find_tape(inputs) -> "Tape | None":
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise DetachedTensor("operands live on different tapes")
            tape = t.tape
    return tape


def _make(data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    if _DEBUG_FINITE and not np.isfinite(data).all():
        raise NonFinite("non-finite value produced by a forward op")
    tape = _find_tape(inputs)
    track = tape is not None and any(
        t.tape is tape and t.node_id is not None for t in inputs
    )
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs), tape=tape)
    if track:
        tape._record(out, tuple(t if t.tape is tape else _Placeholder for t in inputs), backward_fn)
    return out


class _PlaceholderType:
    """Stands in for constant (off-tape) operands inside node input lists."""

    node_id = None


_Placeholder = _PlaceholderType()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}") from exc

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(data, (a, b), bwd)


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _make(a.data * c, (a,), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product; supports (m,k)@(k,n) and (m,k)@(k,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul: unsupported ranks {a.data.ndim} @ {b.data.ndim}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    if b.data.ndim == 2:

        def bwd(g):
            return g @ b.data.T, a.data.T @ g

    else:

        def bwd(g):
            return np.outer(g, b.data), a.data.T @ g

    return _make(data, (a, b), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat along axis {axis}: {[t.shape for t in ts]}") from exc
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _make(data, tuple(ts), bwd)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape {a.shape} -> {shape}") from exc
    orig = a.data.shape

    def bwd(g):
        return (g.reshape(orig),)

    return _make(data, (a,), bwd)


def gather_rows(a, indices) -> Tensor:
    """Select rows by integer index; backward scatter-adds."""
    a = _as_tensor(a)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatch("gather_rows: indices must be integers")
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= a.data.shape[0]:
        raise ShapeMismatch("gather_rows: index out of range")
    data = a.data[idx]
    shape = a.data.shape

    def bwd(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(data, (a,), bwd)


def _check_segments(segments: np.ndarray, length: int, num_segments: int) -> np.ndarray:
    seg = np.asarray(segments)
    if not np.issubdtype(seg.dtype, np.integer):
        raise InvalidSegment("segment ids must be integers")
    if seg.ndim != 1 or seg.shape[0] != length:
        raise InvalidSegment(f"expected {length} segment ids, got shape {seg.shape}")
    if length and (seg.min() < 0 or seg.max() >= num_segments):
        raise InvalidSegment("segment id out of range")
    return seg


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum rows that share a segment id into one output row per segment."""
    a = _as_tensor(a)
    seg = _check_segments(segments, a.data.shape[0], num_segments)
    data = np.zeros((num_segments,) + a.data.shape[1:])
    np.add.at(data, seg, a.data)

    def bwd(g):
        return (g[seg],)

    return _make(data, (a,), bwd)


def softmax_over_segments(scores, segments, num_segments: int) -> Tensor:
    """Softmax normalization within each segment along axis 0.

    With segments holding each edge's destination node, this is exactly the
    per-node attention normalization: the outputs of one segment sum to 1.
    """
    s = _as_tensor(scores)
    seg = _check_segments(segments, s.data.shape[0], num_segments)
    tail = s.data.shape[1:]
    # per-segment max subtraction for numerical stability
    peak = np.full((num_segments,) + tail, -np.inf)
    np.maximum.at(peak, seg, s.data)
    shifted = s.data - peak[seg]
    e = np.exp(shifted)
    denom = np.zeros((num_segments,) + tail)
    np.add.at(denom, seg, e)
    y = e / denom[seg]

    def bwd(g):
        dot = np.zeros((num_segments,) + tail)
        np.add.at(dot, seg, g * y)
        return ((g - dot[seg]) * y,)

    return _make(y, (s,), bwd)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    data = np.where(pos, a.data, slope * a.data)

    def bwd(g):
        return (np.where(pos, g, slope * g),)

    return _make(data, (a,), bwd)


def elu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    expm1 = np.expm1(np.minimum(a.data, 0.0))
    data = np.where(pos, a.data, expm1)

    def bwd(g):
        return (np.where(pos, g, g * (expm1 + 1.0)),)

    return _make(data, (a,), bwd)


def elementwise_log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)
    vals = a.data

    def bwd(g):
        return (g / vals,)

    return _make(data, (a,), bwd)


def log_softmax_rows(a) -> Tensor:
    """Row-wise log-softmax of a (n, c) tensor, numerically stable."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"log_softmax_rows expects rank 2, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    data = shifted - logz
    soft = np.exp(data)

    def bwd(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _make(data, (a,), bwd)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum()), (a,), bwd)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    shape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.asarray(a.data.mean()), (a,), bwd)


def dropout(a, p: float, seed: int, train: bool) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or p == 0."""
    a = _as_tensor(a)
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0:
        mask = None
        data = a.data
    else:
        rng = np.random.default_rng(seed)
        mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
        data = a.data * mask

    def bwd(g):
        return (g if mask is None else g * mask,)

    return _make(data, (a,), bwd)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second-moment accumulators, keyed like the parameter dict."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
):
    """One bias-corrected Adam update; returns (new params, new state).

    Missing gradients are treated as zero.  ``weight_decay`` adds the classic
    L2 term to the gradient before the moment updates.
    """
    new_state = AdamState(step=state.step + 1, m=dict(state.m), v=dict(state.v))
    t = new_state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"adam_step: grad shape {g.shape} != param shape {p.shape} for {name!r}")
        if weight_decay != 0.0:
            g = g + weight_decay * p
        m = beta1 * new_state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * new_state.v.get(name, 0.0) + (1 - beta2) * g * g
        new_state.m[name] = m
        new_state.v[name] = v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out, new_state


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SGCK"
_CKPT_VERSION = 1


def save_checkpoint(params: dict, path) -> None:
    """Write named float64 tensors in a flat little-endian binary layout.

    Header: 4-byte magic, u32 version, u32 tensor count.  Per tensor: u32
    name length, utf-8 name, u32 rank, u64 dims, raw little-endian float64
    payload.  Tensors are written in sorted-name order so identical
    parameter dicts serialize to identical bytes.
    """
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            payload = np.frombuffer(fh.read(8 * n), dtype="<f8")
            params[name] = payload.reshape(dims).astype(np.float64)
        return params
