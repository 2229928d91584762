"""Gossip mixing matrices: construction, validation, averaging, spectral gap.

A mixing matrix ``W`` couples ``m`` nodes; row ``i`` holds the weights node
``i`` applies to its neighbors' vectors in one communication round.  Every
matrix produced or accepted here is symmetric, doubly stochastic, has strictly
positive diagonal, and induces a connected graph, which together force the
disagreement contraction factor ``nu = max(|lam_2|, |lam_m|) < 1``:
one round of gossip shrinks the deviation from the network mean by at least
``nu`` while leaving the mean itself untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TopologyError",
    "MixingMatrix",
    "make_mixing_matrix",
    "build_ring",
    "build_regular3",
    "build_complete",
    "compute_nu",
    "validate_mixing_weights",
    "mix",
]

_ATOL = 1e-12
# Dense symmetric eigensolve up to this size; power iteration on the deflated
# matrix beyond it.
_DENSE_EIG_MAX = 64


class TopologyError(ValueError):
    """A mixing matrix (or the parameters used to build one) is invalid."""


def validate_mixing_weights(weights: np.ndarray, *, allow_singleton: bool = False) -> None:
    """Raise ``TopologyError`` unless ``weights`` is a valid mixing matrix.

    Checks, in order: square shape, finite entries, nonnegativity, symmetry
    (within 1e-12), strictly positive diagonal, row and column sums equal to 1
    (within 1e-12), and connectivity of the induced graph.  The spectral
    condition ``nu < 1`` is checked by :func:`compute_nu`, which every
    construction path goes through.

    ``allow_singleton`` admits the degenerate 1x1 matrix ``[[1]]`` (a network
    of one node, useful only for degeneracy checks); by default ``m >= 2``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise TopologyError(f"mixing matrix must be square, got shape {w.shape}")
    m = w.shape[0]
    if m < 2 and not allow_singleton:
        raise TopologyError(f"mixing matrix needs at least 2 nodes, got {m}")
    if m < 1:
        raise TopologyError("mixing matrix needs at least 1 node")
    if not np.all(np.isfinite(w)):
        raise TopologyError("mixing matrix has non-finite entries")
    if np.any(w < 0):
        raise TopologyError("mixing matrix has negative entries")
    if not np.allclose(w, w.T, rtol=0.0, atol=_ATOL):
        raise TopologyError("mixing matrix is not symmetric within 1e-12")
    if np.any(np.diag(w) <= 0):
        raise TopologyError("mixing matrix diagonal must be strictly positive")
    row_sums = w.sum(axis=1)
    col_sums = w.sum(axis=0)
    if not np.allclose(row_sums, 1.0, rtol=0.0, atol=_ATOL):
        raise TopologyError("row sums deviate from 1 beyond 1e-12")
    if not np.allclose(col_sums, 1.0, rtol=0.0, atol=_ATOL):
        raise TopologyError("column sums deviate from 1 beyond 1e-12")
    if not _connected(w):
        raise TopologyError("mixing matrix induces a disconnected graph")


def _connected(w: np.ndarray) -> bool:
    """Breadth-first search over positive off-diagonal entries."""
    m = w.shape[0]
    seen = np.zeros(m, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(w[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                frontier.append(int(j))
    return bool(seen.all())


def compute_nu(weights: np.ndarray, *, allow_singleton: bool = False) -> float:
    """Second-largest eigenvalue magnitude of a valid mixing matrix.

    For a symmetric doubly stochastic ``W`` the largest eigenvalue is 1 with
    eigenvector all-ones; ``nu = max(|lam_2|, |lam_m|)`` governs how fast
    repeated gossip contracts disagreement.  Dense symmetric eigensolve up to
    64 nodes; deterministic power iteration on ``W - (1/m)11^T`` above that.

    Raises ``TopologyError`` if the matrix is invalid or ``nu >= 1``.
    """
    validate_mixing_weights(weights, allow_singleton=allow_singleton)
    w = np.asarray(weights, dtype=float)
    m = w.shape[0]
    if m == 1:
        return 0.0
    if m <= _DENSE_EIG_MAX:
        lams = np.linalg.eigvalsh(w)  # ascending
        nu = float(max(abs(lams[0]), abs(lams[-2])))
    else:
        nu = _power_iteration_nu(w)
    if nu >= 1.0 - 1e-15:
        raise TopologyError(f"mixing matrix does not contract: nu = {nu}")
    return nu


def _power_iteration_nu(w: np.ndarray, *, tol: float = 1e-14, max_iter: int = 200_000) -> float:
    """Dominant |eigenvalue| of the mean-deflated matrix, by power iteration.

    The deflation ``B = W - (1/m)11^T`` removes the unit eigenvalue, so the
    spectral radius of ``B`` is exactly ``nu``.  The probe vector is fixed, so
    the result is deterministic.  Accuracy degrades when the second and third
    eigenvalue magnitudes nearly coincide; the iteration cap keeps worst cases
    bounded while the norm estimate still converges monotonically in practice.
    """
    m = w.shape[0]
    b = w - 1.0 / m
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0x5EED)))
    v = rng.standard_normal(m)
    v -= v.mean()
    v /= np.linalg.norm(v)
    norm = 0.0
    for _ in range(max_iter):
        bv = b @ v
        bv -= bv.mean()  # stay orthogonal to the all-ones eigenvector
        new_norm = float(np.linalg.norm(bv))
        if new_norm == 0.0:
            return 0.0
        v = bv / new_norm
        if abs(new_norm - norm) <= tol * max(1.0, new_norm):
            norm = new_norm
            break
        norm = new_norm
    return norm


@dataclass(frozen=True)
class MixingMatrix:
    """A validated gossip matrix together with its contraction factor.

    Attributes:
        weights: the (m, m) matrix itself (read-only array).
        nu: ``max(|lam_2|, |lam_m|)``, the disagreement contraction factor.
    """

    weights: np.ndarray
    nu: float

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Off-diagonal neighbor count per node (self links excluded)."""
        off = self.weights > 0
        return off.sum(axis=1) - np.diag(off).astype(int)

    def neighbors(self, i: int) -> list[int]:
        """Indices with positive weight in row ``i`` (self included)."""
        return [int(j) for j in np.nonzero(self.weights[i] > 0)[0]]


def make_mixing_matrix(weights: np.ndarray, *, allow_singleton: bool = False) -> MixingMatrix:
    """Validate ``weights`` and wrap it with its computed ``nu``."""
    w = np.array(weights, dtype=float, copy=True)
    nu = compute_nu(w, allow_singleton=allow_singleton)
    w.setflags(write=False)
    return MixingMatrix(weights=w, nu=nu)


def _circulant(m: int, offsets: set[int]) -> np.ndarray:
    """Uniform-weight circulant over ``{0} | offsets`` (0 = self link)."""
    links = {0} | {off % m for off in offsets}
    weight = 1.0 / len(links)
    row = np.zeros(m)
    for off in links:
        row[off] = weight
    return np.stack([np.roll(row, i) for i in range(m)])


def build_ring(m: int) -> MixingMatrix:
    """Ring of ``m >= 3`` nodes; each averages itself and both neighbors at 1/3.

    ``nu`` follows the circulant spectrum ``(1 + 2cos(2*pi*k/m))/3``: the ring
    on 3 nodes is already complete (nu = 0) and nu -> 1 as the ring grows.
    """
    if m < 3:
        raise TopologyError(f"ring needs at least 3 nodes, got {m}")
    return make_mixing_matrix(_circulant(m, {1, m - 1}))


def build_regular3(m: int) -> MixingMatrix:
    """Circulant ring-plus-chords topology on ``m >= 4`` nodes.

    Even ``m``: offsets {±1, m/2}, a true 3-regular graph with uniform 1/4
    weights.  Odd ``m`` (where 3-regular graphs cannot exist): offsets
    {±1, ±(m//2)}, a connected 4-regular circulant with uniform 1/5 weights
    (for m = 5 this is the complete graph).  Check ``MixingMatrix.degrees``
    for the realized degree.
    """
    if m < 4:
        raise TopologyError(f"regular3 needs at least 4 nodes, got {m}")
    if m % 2 == 0:
        offsets = {1, m - 1, m // 2}
    else:
        h = m // 2
        offsets = {1, m - 1, h, m - h}
    return make_mixing_matrix(_circulant(m, offsets))


def build_complete(m: int) -> MixingMatrix:
    """Complete graph: every entry 1/m.  One gossip round averages exactly."""
    if m < 2:
        raise TopologyError(f"complete graph needs at least 2 nodes, got {m}")
    return make_mixing_matrix(np.full((m, m), 1.0 / m))


def mix(matrix: MixingMatrix, vectors: np.ndarray) -> np.ndarray:
    """One gossip round: row ``i`` of the result is ``sum_j W_ij vectors[j]``.

    ``vectors`` is an (m, d) stack (or anything ``np.asarray`` makes one of).
    Preserves the mean exactly up to floating point and contracts the
    deviation from it by at least ``matrix.nu``.
    """
    arr = np.asarray(vectors, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
        return (matrix.weights @ arr)[:, 0]
    if arr.shape[0] != matrix.m:
        raise TopologyError(
            f"expected {matrix.m} stacked vectors, got {arr.shape[0]}"
        )
    return matrix.weights @ arr
