"""Weighted-graph view of a connectome and node centrality measures.

A connectome is a complete weighted graph over regions of interest, so the
unweighted degree and closeness measures are degenerate unless the graph is
sparsified first; :func:`sparsify` keeps the strongest edges by |weight|
quantile.  Centralities use the magnitude |w| of the (possibly negative)
correlation weights; the signed weights are preserved for the classifier.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, NoConvergence, NonFinite, NonSquare

DEFAULT_SPARSIFY_QUANTILE = 0.9


@dataclass(frozen=True)
class Connectome:
    """Weighted undirected graph over d regions with a class label.

    ``weights`` is symmetric with a zero diagonal (self-loops removed at
    construction).  ``node_features`` defaults to the rows of the weight
    matrix, i.e. each node's connectivity profile.
    """

    weights: np.ndarray
    node_features: np.ndarray
    label: int
    subject_id: str

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class CentralityProfile:
    degree: np.ndarray
    closeness: np.ndarray
    eigenvector: np.ndarray

    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.degree, self.closeness, self.eigenvector])


def from_matrix(
    m: np.ndarray,
    subject_id: str,
    label: int,
    check_range: bool = True,
) -> Connectome:
    """Build a :class:`Connectome` from a square correlation-like matrix.

    Symmetrizes by (m + m.T)/2 and zeroes the diagonal.  Node feature row i
    is row i of the resulting weight matrix.  ``check_range=False`` skips the
    |w| <= 1 correlation-range check (needed for standardized inputs, whose
    entries are z-scores rather than correlations).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise NonFinite(f"subject {subject_id!r}: non-finite entries")
    w = 0.5 * (m + m.T)
    np.fill_diagonal(w, 0.0)
    if check_range and np.abs(w).max(initial=0.0) > 1 + 1e-9:
        raise ValueError(
            f"subject {subject_id!r}: |weight| > 1; not a correlation matrix "
            "(pass check_range=False for standardized inputs)"
        )
    return Connectome(weights=w, node_features=w.copy(), label=int(label), subject_id=subject_id)


def sparsify(c: Connectome, quantile: float) -> Connectome:
    """Keep edges whose |weight| is at or above the given quantile of all off-diagonal |w|.

    Ties at the threshold are kept, so the rule is deterministic; quantile 0
    returns the graph unchanged.
    """
    if not 0 <= quantile < 1:
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    if quantile == 0:
        return c
    iu, ju = np.triu_indices(c.dim, k=1)
    mags = np.abs(c.weights[iu, ju])
    threshold = np.quantile(mags, quantile)
    w = np.where(np.abs(c.weights) >= threshold, c.weights, 0.0)
    np.fill_diagonal(w, 0.0)
    return replace(c, weights=w)


def degree_centrality(c: Connectome) -> np.ndarray:
    """Count of incident nonzero edges per node."""
    return (c.weights != 0).sum(axis=1).astype(np.float64)


def _dijkstra(lengths: np.ndarray, source: int) -> np.ndarray:
    """Single-source shortest paths on a dense nonnegative length matrix.

    ``lengths[i, j]`` is inf where no edge exists.
    """
    d = lengths.shape[0]
    dist = np.full(d, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(d, dtype=bool)
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in np.nonzero(np.isfinite(lengths[u]))[0]:
            alt = du + lengths[u, v]
            if alt < dist[v]:
                dist[v] = alt
                heapq.heappush(heap, (alt, v))
    return dist


def closeness_centrality(c: Connectome) -> np.ndarray:
    """Closeness on shortest paths with edge length 1/|w|.

    Stronger connections mean shorter distances.  Uses the reachable-set
    normalization: with r nodes reachable from j at total distance D,
    closeness(j) = ((r - 1) / D) * ((r - 1) / (d - 1)); isolated nodes score
    zero.
    """
    d = c.dim
    with np.errstate(divide="ignore"):
        lengths = np.where(c.weights != 0, 1.0 / np.abs(c.weights), np.inf)
    np.fill_diagonal(lengths, np.inf)
    out = np.zeros(d)
    for j in range(d):
        dist = _dijkstra(lengths, j)
        reachable = np.isfinite(dist)
        r = int(reachable.sum())  # includes j itself
        total = dist[reachable].sum()
        if r > 1 and total > 0:
            out[j] = ((r - 1) / total) * ((r - 1) / (d - 1))
    return out


def eigenvector_centrality(
    c: Connectome,
    tol: float = 1e-6,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Principal-eigenvector centrality of A = |W| by power iteration.

    Iterates with A + I (the identity shift leaves eigenvectors untouched
    but breaks the +/-lambda magnitude tie of bipartite graphs, where the
    unshifted iteration oscillates forever).  Starts from the uniform
    vector, renormalizes to unit Euclidean norm each step, and stops once
    successive iterates differ by less than ``tol`` in the infinity norm.
    The result is nonnegative with unit norm.  The default tolerance is
    forgiving because sparsified graphs can fragment into components with
    nearly tied dominant eigenvalues, where the iteration plateaus; pass a
    tighter ``tol`` for connected graphs.

    Raises
    ------
    NoConvergence
        After ``max_iter`` steps, which signals a degenerate spectrum.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.abs(c.weights)
    v = np.full(c.dim, 1.0 / np.sqrt(c.dim))
    residual = np.inf
    for _ in range(max_iter):
        nxt = a @ v + v
        norm = np.linalg.norm(nxt)
        if norm == 0:
            raise NoConvergence(max_iter, np.inf)
        nxt /= norm
        residual = np.abs(nxt - v).max()
        if residual < tol:
            return nxt
        v = nxt
    raise NoConvergence(max_iter, residual)


def centrality_profile(
    c: Connectome,
    sparsify_quantile: float = DEFAULT_SPARSIFY_QUANTILE,
) -> CentralityProfile:
    """Degree, closeness, and eigenvector centrality on the sparsified graph."""
    s = sparsify(c, sparsify_quantile)
    return CentralityProfile(
        degree=degree_centrality(s),
        closeness=closeness_centrality(s),
        eigenvector=eigenvector_centrality(s),
    )
