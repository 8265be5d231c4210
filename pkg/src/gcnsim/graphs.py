"""Synthetic graph workloads: power-law degree graphs with sparse features.

Node degrees in real graph datasets are heavy-tailed, which is exactly what
makes naive row partitioning unbalanced, so the generator samples a discrete
power law and wires nodes with a configuration-model pairing. The result is
simplified (no self loops, no multi-edges) and symmetrized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matrix import DenseMatrix, ShapeError, SparseMatrixCSR

_PAIRING_TRIES = 10
_EDGE_YIELD = 0.9  # accept a pairing that keeps this fraction after simplification


@dataclass
class GraphBundle:
    """One workload: adjacency structure, node features, optional weights."""

    adjacency: SparseMatrixCSR
    features: SparseMatrixCSR
    weights: list = field(default_factory=list)
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.validate()

    @property
    def nodes(self) -> int:
        return self.adjacency.rows

    def validate(self) -> None:
        if self.adjacency.rows != self.adjacency.cols:
            raise ShapeError("adjacency must be square")
        self.adjacency.validate()
        self.features.validate()
        if self.features.rows != self.adjacency.rows:
            raise ShapeError(f"{self.features.rows} feature rows for "
                             f"{self.adjacency.rows} nodes")
        dim = self.features.cols
        for i, w in enumerate(self.weights):
            if w.rows != dim:
                raise ShapeError(f"weight {i} expects {w.rows} inputs, got {dim}")
            dim = w.cols
        if self.labels is not None and len(self.labels) != self.adjacency.rows:
            raise ShapeError("one label per node required")


def _degree_pmf(cap: int, exponent: float, tilt: float) -> np.ndarray:
    """Power law k^-exponent on [1, cap] with an exponential tilt e^(tilt*k).

    The tilt is the knob that sets the mean: 0 is the pure truncated power
    law, negative drains the tail, positive feeds it. Computed in log space
    so large tilt*cap cannot overflow.
    """
    k = np.arange(1, cap + 1, dtype=np.float64)
    logw = -exponent * np.log(k) + tilt * k
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def _fit_tilt(cap: int, exponent: float, target: float) -> np.ndarray:
    """PMF on [1, cap] whose mean hits the target degree (bisection on tilt)."""
    k = np.arange(1, cap + 1, dtype=np.float64)

    def mean(t):
        return float(_degree_pmf(cap, exponent, t) @ k)

    lo, hi = -50.0, 1e-3
    while mean(hi) < target and hi < 8.0:
        hi *= 2
    for _ in range(80):
        mid = (lo + hi) / 2
        if mean(mid) < target:
            lo = mid
        else:
            hi = mid
    return _degree_pmf(cap, exponent, hi)


def _degree_counts(n: int, pmf: np.ndarray, rng) -> np.ndarray:
    """How many nodes get each degree: systematic rounding of n*pmf.

    One uniform shift rounds every expected count up or down while keeping
    the total at exactly n, so the degree histogram tracks the law without
    the edge-count variance a heavy-tailed iid sample would have.
    """
    cum = np.concatenate([[0.0], np.cumsum(n * pmf)])
    marks = np.floor(cum + rng.random()).astype(np.int64)
    return np.diff(marks)


def _pair_stubs(degrees: np.ndarray, rng) -> set:
    stubs = np.repeat(np.arange(len(degrees)), degrees)
    rng.shuffle(stubs)
    if len(stubs) % 2:
        stubs = stubs[:-1]
    u, v = stubs[0::2], stubs[1::2]
    keep = u != v
    edges = {(min(a, b), max(a, b)) for a, b in zip(u[keep], v[keep])}
    return edges


def random_features(n: int, n_features: int, density: float, rng
                    ) -> SparseMatrixCSR:
    """Sparse SINT4 feature matrix with nonzero entries at the given density."""
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density {density} not in (0, 1]")
    flat = np.flatnonzero(rng.random(n * n_features) < density)
    vals = rng.choice(np.concatenate([np.arange(-8, 0), np.arange(1, 8)]),
                      size=len(flat))
    return SparseMatrixCSR.from_coo(n, n_features, flat // n_features,
                                    flat % n_features, vals, 4, 3)


def gen_powerlaw(n: int, avg_degree: float, exponent: float = 2.1,
                 seed: int = 0, n_features: int = 64,
                 feature_density: float = 0.1) -> GraphBundle:
    """Deterministic synthetic workload with a power-law degree sequence.

    The pairing is retried when simplification (dropping self loops and
    duplicates) eats too many edges; dense degree requests near n-1 can
    exhaust the retry budget and raise.
    """
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if avg_degree < 1:
        raise ValueError(f"avg_degree must be >= 1, got {avg_degree}")
    if avg_degree > n - 1:
        raise ValueError(f"avg_degree {avg_degree} impossible on {n} nodes")
    rng = np.random.default_rng(seed)
    # structural cutoff: degrees above sqrt(n*d) force multi-edges anyway
    cap = min(n - 1, max(1, round((n * avg_degree) ** 0.5)))
    pmf = _fit_tilt(cap, exponent, avg_degree)
    support = np.arange(1, cap + 1)
    target = n * avg_degree / 2
    edges = None
    for _ in range(_PAIRING_TRIES):
        degrees = np.repeat(support, _degree_counts(n, pmf, rng))
        rng.shuffle(degrees)
        cand = _pair_stubs(degrees, rng)
        if len(cand) >= _EDGE_YIELD * target:
            edges = cand
            break
    if edges is None:
        raise ValueError(f"could not realize avg degree {avg_degree} on {n} "
                         f"nodes after {_PAIRING_TRIES} pairings")
    e = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    rr = np.concatenate([e[:, 0], e[:, 1]])
    cc = np.concatenate([e[:, 1], e[:, 0]])
    adjacency = SparseMatrixCSR.from_coo(n, n, rr, cc,
                                         np.ones(len(rr), dtype=np.int64), 4, 0)
    features = random_features(n, n_features, feature_density, rng)
    return GraphBundle(adjacency, features)


def degree_stats(a: SparseMatrixCSR) -> dict:
    deg = a.row_nnz()
    return {
        "edges": int(deg.sum()) // 2,
        "mean": float(deg.mean()),
        "median": float(np.median(deg)),
        "max": int(deg.max()),
    }


def random_weights(dims: list[int], seed: int = 0) -> list[DenseMatrix]:
    """SINT4 weight chain for the given layer dimensions."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dimensions")
    rng = np.random.default_rng(seed)
    return [DenseMatrix(rng.integers(-8, 8, (dims[i], dims[i + 1])), 4, 3)
            for i in range(len(dims) - 1)]
