"""Per-node adaptive scaling matrices.

Each node keeps a diagonal positive definite matrix ``A_t`` that rescales its
tracked search direction (``x`` update uses ``A_t^{-1} w_t``).  Three kinds:

* ``adam``: exponential moving average of squared gradients,
  ``a_t = varrho a_{t-1} + (1 - varrho) g_t^2``, ``A_t = diag(sqrt(a_t)) + rho I``.
* ``bb``: curvature-pair scalar
  ``a_t = |<dx, dg>| / ||dx||^2 + rho``, ``A_t = a_t I``, where both gradients
  in ``dg`` are evaluated on the *same* sample/minibatch (the pair the
  estimator update already produced, so no extra evaluations are spent).
* ``identity``: ``A_t = rho I`` (the non-adaptive baseline; with rho = 1 this
  is vanilla tracking).

Every kind keeps all diagonal entries >= rho, so ``A_t^{-1}`` exists and is
bounded by 1/rho — the property the convergence analysis leans on.
"""
from __future__ import annotations

import abc

import numpy as np

__all__ = [
    "Preconditioner",
    "AdamLike",
    "BarzilaiBorwein",
    "Identity",
    "make_preconditioner",
    "adam_update",
    "bb_update",
    "apply_inverse",
    "matrix_norm",
    "KINDS",
]

KINDS = ("adam", "bb", "identity")


class Preconditioner(abc.ABC):
    """Diagonal adaptive matrix with a uniform update interface.

    ``update`` receives the freshest gradient signal plus (for curvature
    pairs) the current/previous iterates and the previous-iterate gradient
    evaluated on the same sample.  Kinds ignore what they do not need.
    """

    kind: str
    rho: float
    dim: int

    @abc.abstractmethod
    def update(
        self,
        grad: np.ndarray,
        *,
        x: np.ndarray | None = None,
        x_prev: np.ndarray | None = None,
        grad_prev: np.ndarray | None = None,
    ) -> None:
        ...

    @abc.abstractmethod
    def diagonal(self) -> np.ndarray:
        """The (dim,) diagonal of ``A_t``; every entry >= rho."""

    def apply_inverse(self, w: np.ndarray) -> np.ndarray:
        """``A_t^{-1} w`` (entrywise division by the diagonal)."""
        return np.asarray(w, dtype=float) / self.diagonal()

    def norm(self) -> float:
        """Spectral norm ``||A_t||`` = max diagonal entry."""
        return float(self.diagonal().max())

    def _check_floor(self) -> None:
        assert self.diagonal().min() >= self.rho * (1.0 - 1e-12), (
            f"adaptive diagonal fell below rho={self.rho}"
        )


class AdamLike(Preconditioner):
    """Second-moment EMA: ``a_t = varrho a_{t-1} + (1-varrho) g_t^2``, a_0 = 0.

    Unrolled, ``a_t = sum_{l=1..t} (1-varrho) varrho^(t-l) g_l^2``; with unit
    gradients and varrho = 0.9 two updates give a_2 = 0.19 exactly.
    """

    kind = "adam"

    def __init__(self, dim: int, rho: float, varrho: float) -> None:
        if not 0.0 < varrho < 1.0:
            raise ValueError(f"varrho must lie in (0, 1), got {varrho}")
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        self.dim = dim
        self.rho = float(rho)
        self.varrho = float(varrho)
        self.a = np.zeros(dim)

    def update(self, grad, *, x=None, x_prev=None, grad_prev=None) -> None:
        g = np.asarray(grad, dtype=float)
        self.a = self.varrho * self.a + (1.0 - self.varrho) * g * g
        self._check_floor()

    def diagonal(self) -> np.ndarray:
        return np.sqrt(self.a) + self.rho


class BarzilaiBorwein(Preconditioner):
    """Scalar curvature estimate from one secant pair per step.

    ``a_t = |<x_t - x_prev, g_t - g_prev>| / ||x_t - x_prev||^2 + rho`` with
    both gradients on the same sample.  Before the first pair exists, and
    whenever the iterate displacement is exactly zero, the previous scalar is
    kept (initially ``1 + rho``).  On an L-smooth quadratic the raw quotient
    is the Rayleigh curvature and never exceeds L, so ``||A_t|| <= L + rho``.
    """

    kind = "bb"

    def __init__(self, dim: int, rho: float) -> None:
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        self.dim = dim
        self.rho = float(rho)
        self.a = 1.0 + self.rho

    def update(self, grad, *, x=None, x_prev=None, grad_prev=None) -> None:
        if x is None or x_prev is None or grad_prev is None:
            return  # no secant pair yet: keep the current scalar
        dx = np.asarray(x, dtype=float) - np.asarray(x_prev, dtype=float)
        denom = float(dx @ dx)
        if denom == 0.0:
            return
        dg = np.asarray(grad, dtype=float) - np.asarray(grad_prev, dtype=float)
        self.a = abs(float(dx @ dg)) / denom + self.rho
        self._check_floor()

    def diagonal(self) -> np.ndarray:
        return np.full(self.dim, self.a)

    def norm(self) -> float:
        return self.a


class Identity(Preconditioner):
    """``A_t = rho I`` for all t: tracking without adaptivity."""

    kind = "identity"

    def __init__(self, dim: int, rho: float) -> None:
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        self.dim = dim
        self.rho = float(rho)

    def update(self, grad, *, x=None, x_prev=None, grad_prev=None) -> None:
        return

    def diagonal(self) -> np.ndarray:
        return np.full(self.dim, self.rho)

    def norm(self) -> float:
        return self.rho


def make_preconditioner(kind: str, dim: int, rho: float, varrho: float = 0.9) -> Preconditioner:
    """Build one node's adaptive state of the named kind."""
    if kind == "adam":
        return AdamLike(dim, rho, varrho)
    if kind == "bb":
        return BarzilaiBorwein(dim, rho)
    if kind == "identity":
        return Identity(dim, rho)
    raise ValueError(f"unknown adaptive kind {kind!r}; expected one of {KINDS}")


# Thin functional aliases, convenient in tests and scripts.

def adam_update(state: AdamLike, grad: np.ndarray) -> None:
    state.update(grad)


def bb_update(
    state: BarzilaiBorwein,
    x: np.ndarray,
    x_prev: np.ndarray,
    grad: np.ndarray,
    grad_prev: np.ndarray,
) -> None:
    state.update(grad, x=x, x_prev=x_prev, grad_prev=grad_prev)


def apply_inverse(state: Preconditioner, w: np.ndarray) -> np.ndarray:
    return state.apply_inverse(w)


def matrix_norm(state: Preconditioner) -> float:
    return state.norm()
