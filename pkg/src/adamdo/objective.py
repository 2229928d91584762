"""Local objectives, gradients, and the data paths that feed them.

Each node ``i`` owns a finite-sum objective ``f_i(x) = (1/n) sum_k f_ik(x)``;
the network minimizes ``F(x) = (1/m) sum_i f_i(x)``.  Two families live here:

* the nonconvex sigmoid classification loss
  ``f(x; (a, l)) = 1/(1 + exp(l <a, x>)) + lam ||x||^2`` used by the LIBSVM
  and synthetic data paths, and
* finite-sum quadratics ``f_ik(x) = x^T Q_ik x / 2 + c_ik^T x`` with exact
  smoothness constants and minimizers, used as the deterministic test bench.

Sampling helpers (minibatch indices without replacement, seeded partition)
keep every reduction in ascending index order so reruns are bitwise stable.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DatasetError",
    "Sample",
    "NodeDataset",
    "sigmoid_loss",
    "sigmoid_grad",
    "Objective",
    "SigmoidObjective",
    "QuadraticObjective",
    "parse_libsvm",
    "partition",
    "synthetic_logistic",
    "random_quadratic",
    "draw_minibatch",
    "global_loss",
    "global_grad",
    "smoothness",
    "quadratic_minimizer",
]

# Philox stream tags (spawn_key domains) for the data side.  Optimizer node
# streams live in a different domain (see optimizer.py) so data generation and
# index sampling never share a counter stream.
_STREAM_DATA_MASTER = 0
_STREAM_NODE_DATA = 1
_STREAM_PARTITION = 2


def _philox(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=key))
    )


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent sample collection."""


@dataclass(frozen=True)
class Sample:
    """One labeled example: dense feature vector and a label in {-1, +1}."""

    features: np.ndarray
    label: int

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise DatasetError(f"label must be +1 or -1, got {self.label}")


@dataclass(frozen=True)
class NodeDataset:
    """One node's shard: (n, d) features and (n,) labels in {-1, +1}."""

    node_id: int
    features: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def sample(self, k: int) -> Sample:
        return Sample(features=self.features[k], label=int(self.labels[k]))


def _sigmoid(z: float | np.ndarray) -> float | np.ndarray:
    """1/(1+e^z) without overflow for large |z|."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    # z >= 0: 1/(1+e^z) = q/(1+q) with q = e^-z <= 1
    q = np.exp(-z[pos])
    out[pos] = q / (1.0 + q)
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return out if out.ndim else float(out)


def _sigmoid_curvature(z: np.ndarray) -> np.ndarray:
    """e^z/(1+e^z)^2 = q/(1+q)^2 with q = e^-|z|; symmetric and stable."""
    q = np.exp(-np.abs(np.asarray(z, dtype=float)))
    return q / (1.0 + q) ** 2


def sigmoid_loss(x: np.ndarray, sample: Sample, lam: float) -> float:
    """``1/(1 + exp(l <a, x>)) + lam ||x||^2`` — bounded, smooth, nonconvex."""
    z = sample.label * float(sample.features @ x)
    return float(_sigmoid(z)) + lam * float(x @ x)


def sigmoid_grad(x: np.ndarray, sample: Sample, lam: float) -> np.ndarray:
    """Gradient of :func:`sigmoid_loss`: ``-l a e^z/(1+e^z)^2 + 2 lam x``."""
    z = sample.label * float(sample.features @ x)
    s = float(_sigmoid_curvature(np.asarray(z)))
    return -sample.label * s * sample.features + 2.0 * lam * x


class Objective(abc.ABC):
    """One node's finite-sum objective.

    ``grad`` is defined as the minibatch gradient over the full index range so
    that ``minibatch_grad(x, arange(n))`` and ``grad(x)`` follow the identical
    summation path (bitwise equal), which the tracking identities rely on.
    """

    n: int
    dim: int

    @abc.abstractmethod
    def component_loss(self, x: np.ndarray, k: int) -> float:
        ...

    @abc.abstractmethod
    def component_grad(self, x: np.ndarray, k: int) -> np.ndarray:
        ...

    def component_grads(self, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """(b, d) stack of component gradients at ``x`` for ``indices``."""
        return np.stack([self.component_grad(x, int(k)) for k in indices])

    def minibatch_grad(self, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """Mean component gradient over ``indices``, summed in ascending order."""
        idx = np.sort(np.asarray(indices, dtype=int))
        if idx.size == 0:
            raise ValueError("minibatch must contain at least one index")
        return self.component_grads(x, idx).mean(axis=0)

    def loss(self, x: np.ndarray) -> float:
        vals = [self.component_loss(x, k) for k in range(self.n)]
        return float(np.mean(vals))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.minibatch_grad(x, np.arange(self.n))


class SigmoidObjective(Objective):
    """Sigmoid classification loss over one node's shard."""

    def __init__(self, dataset: NodeDataset, lam: float) -> None:
        if lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {lam}")
        self.dataset = dataset
        self.lam = float(lam)
        self.n = dataset.n
        self.dim = dataset.dim

    def component_loss(self, x: np.ndarray, k: int) -> float:
        return sigmoid_loss(x, self.dataset.sample(k), self.lam)

    def component_grad(self, x: np.ndarray, k: int) -> np.ndarray:
        return sigmoid_grad(x, self.dataset.sample(k), self.lam)

    def component_grads(self, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=int)
        feats = self.dataset.features[idx]
        labels = self.dataset.labels[idx].astype(float)
        z = labels * (feats @ x)
        coef = -labels * _sigmoid_curvature(z)
        return coef[:, None] * feats + 2.0 * self.lam * x

    def loss(self, x: np.ndarray) -> float:
        z = self.dataset.labels.astype(float) * (self.dataset.features @ x)
        return float(np.mean(_sigmoid(z))) + self.lam * float(x @ x)


class QuadraticObjective(Objective):
    """Finite-sum quadratic ``f_k(x) = x^T Q_k x / 2 + c_k^T x``.

    ``Q`` is an (n, d, d) stack of symmetric matrices, ``c`` an (n, d) stack.
    Exact gradients make this the bench for every deterministic identity.
    """

    def __init__(self, Q: np.ndarray, c: np.ndarray) -> None:
        Q = np.asarray(Q, dtype=float)
        c = np.asarray(c, dtype=float)
        if Q.ndim == 2:
            Q = Q[None]
            c = np.asarray(c, dtype=float)[None]
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2] or c.shape != Q.shape[:2]:
            raise ValueError(f"inconsistent quadratic shapes {Q.shape}, {c.shape}")
        if not np.allclose(Q, np.swapaxes(Q, 1, 2), rtol=0.0, atol=1e-12):
            raise ValueError("quadratic matrices must be symmetric")
        self.Q = Q
        self.c = c
        self.n = Q.shape[0]
        self.dim = Q.shape[1]
        self.Q_mean = Q.mean(axis=0)
        self.c_mean = c.mean(axis=0)

    def component_loss(self, x: np.ndarray, k: int) -> float:
        return 0.5 * float(x @ self.Q[k] @ x) + float(self.c[k] @ x)

    def component_grad(self, x: np.ndarray, k: int) -> np.ndarray:
        return self.Q[k] @ x + self.c[k]

    def component_grads(self, x: np.ndarray, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=int)
        return self.Q[idx] @ x + self.c[idx]

    @property
    def lipschitz(self) -> float:
        """max_k lam_max(Q_k): smoothness of every component (and the mean)."""
        return float(max(np.linalg.eigvalsh(q)[-1] for q in self.Q))


def parse_libsvm(path: str, *, on_extra_labels: str = "error") -> list[Sample]:
    """Read a sparse 1-based ``label idx:val`` file into dense samples.

    Labels: files whose label set is exactly {-1, +1} pass through; any other
    two-label file maps the smaller numeric label to +1 and the larger to -1.
    Files with more than two distinct labels raise a ``DatasetError`` naming
    every observed label unless ``on_extra_labels="drop"``, which keeps the
    two most frequent labels (ties broken by numeric order) and drops the
    remaining lines.  Feature dimension is the largest index seen anywhere.
    """
    if on_extra_labels not in ("error", "drop"):
        raise ValueError(f"on_extra_labels must be 'error' or 'drop', got {on_extra_labels!r}")
    raw: list[tuple[float, dict[int, float]]] = []
    max_idx = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed label {parts[0]!r}") from None
            entries: dict[int, float] = {}
            for tok in parts[1:]:
                idx_s, _, val_s = tok.partition(":")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: malformed feature {tok!r}") from None
                if idx < 1:
                    raise DatasetError(f"{path}:{lineno}: feature index {idx} is not 1-based")
                entries[idx] = val
                max_idx = max(max_idx, idx)
            raw.append((label, entries))
    if not raw:
        raise DatasetError(f"{path}: no samples")
    observed = sorted({label for label, _ in raw})
    if set(observed) <= {-1.0, 1.0}:
        mapping = {lab: int(lab) for lab in observed}
    elif len(observed) == 2:
        mapping = {observed[0]: 1, observed[1]: -1}
    else:
        counts = {lab: 0 for lab in observed}
        for lab, _ in raw:
            counts[lab] += 1
        if on_extra_labels == "error":
            raise DatasetError(
                f"{path}: expected two label values, found {len(observed)}: "
                + ", ".join(str(l) for l in observed)
            )
        top2 = sorted(sorted(counts), key=lambda l: -counts[l])[:2]
        keep = sorted(top2)
        mapping = {keep[0]: 1, keep[1]: -1}
        raw = [(lab, ent) for lab, ent in raw if lab in mapping]
    samples = []
    for label, entries in raw:
        vec = np.zeros(max_idx)
        for idx, val in entries.items():
            vec[idx - 1] = val
        samples.append(Sample(features=vec, label=mapping[label]))
    return samples


def partition(samples: list[Sample], m: int, seed: int) -> list[NodeDataset]:
    """Seeded shuffle, truncate to a multiple of ``m``, contiguous equal split.

    Equal shard sizes keep the per-node finite-sum identities exact; when
    ``m`` does not divide the sample count, the trailing remainder of the
    shuffled order is dropped (deterministically, given ``seed``).
    """
    if m < 1:
        raise ValueError(f"need at least one node, got m={m}")
    if len(samples) < m:
        raise DatasetError(f"cannot split {len(samples)} samples across {m} nodes")
    dims = {s.features.shape[0] for s in samples}
    if len(dims) != 1:
        raise DatasetError(f"inconsistent feature dimensions: {sorted(dims)}")
    rng = _philox(seed, _STREAM_PARTITION)
    order = rng.permutation(len(samples))
    per = len(samples) // m
    order = order[: per * m]
    shards = []
    for i in range(m):
        chunk = order[i * per : (i + 1) * per]
        feats = np.stack([samples[j].features for j in chunk])
        labels = np.array([samples[j].label for j in chunk], dtype=int)
        shards.append(NodeDataset(node_id=i, features=feats, labels=labels))
    return shards


def synthetic_logistic(
    m: int,
    n: int,
    d: int,
    seed: int,
    heterogeneity: float = 0.5,
    lam: float = 1e-5,
    *,
    margin: float = 0.0,
    label_noise: float = 0.3,
) -> list[SigmoidObjective]:
    """Seeded synthetic classification task with a data-heterogeneity knob.

    A master stream draws one planted weight vector and per-node cluster
    directions; node ``i`` then draws its features around its own cluster mean
    (scaled by ``heterogeneity``; 0 means all nodes sample one distribution)
    and labels them by the planted rule plus Gaussian label noise scaled by
    ``label_noise``.  Every stream is a counter-based (seed, role, node)
    Philox stream, so shards are independent of generation order.

    ``margin`` shifts each sample along the planted direction toward its own
    label, planting a separation gap like the one real curated classification
    sets tend to have.  At the default 0 the raw features are kept, which
    leaves many samples arbitrarily close to the decision boundary; the
    sigmoid loss then has a long flat tail (near-boundary samples keep
    curvature alive however large the iterate grows), so first-order methods
    creep instead of converging.  Use a margin around 1 for tasks meant to
    reach a small stationary gap in tens of epochs.
    """
    if not 0.0 <= heterogeneity <= 1.0:
        raise ValueError(f"heterogeneity must lie in [0, 1], got {heterogeneity}")
    if m < 1 or n < 1 or d < 1:
        raise ValueError(f"need positive m, n, d; got {(m, n, d)}")
    if not np.isfinite(margin) or margin < 0.0:
        raise ValueError(f"margin must be finite and >= 0, got {margin}")
    if not np.isfinite(label_noise) or label_noise < 0.0:
        raise ValueError(f"label_noise must be finite and >= 0, got {label_noise}")
    master = _philox(seed, _STREAM_DATA_MASTER)
    w_star = master.standard_normal(d)
    w_star /= np.linalg.norm(w_star)
    cluster = 1.5 * master.standard_normal((m, d))
    shards = []
    for i in range(m):
        node_rng = _philox(seed, _STREAM_NODE_DATA, i)
        feats = heterogeneity * cluster[i] + node_rng.standard_normal((n, d))
        raw = feats @ w_star + label_noise * node_rng.standard_normal(n)
        labels = np.where(raw >= 0, 1, -1)
        if margin > 0.0:
            feats = feats + (margin * labels)[:, None] * w_star[None, :]
        shards.append(
            SigmoidObjective(NodeDataset(node_id=i, features=feats, labels=labels), lam)
        )
    return shards


def random_quadratic(
    m: int,
    d: int,
    seed: int,
    *,
    n: int = 1,
    mu_min: float = 0.5,
    mu_max: float = 3.0,
) -> list[QuadraticObjective]:
    """Seeded heterogeneous SPD quadratics, one finite sum per node.

    Component eigenvalues are drawn uniformly in [mu_min, mu_max] under random
    orthogonal frames, so the exact network smoothness and minimizer are
    available through :func:`smoothness` / :func:`quadratic_minimizer`.
    """
    objs = []
    for i in range(m):
        node_rng = _philox(seed, _STREAM_NODE_DATA, i)
        Qs = np.empty((n, d, d))
        cs = np.empty((n, d))
        for k in range(n):
            basis, _ = np.linalg.qr(node_rng.standard_normal((d, d)))
            eigs = node_rng.uniform(mu_min, mu_max, size=d)
            Qs[k] = (basis * eigs) @ basis.T
            Qs[k] = 0.5 * (Qs[k] + Qs[k].T)
            cs[k] = node_rng.standard_normal(d)
        objs.append(QuadraticObjective(Qs, cs))
    return objs


def draw_minibatch(rng: np.random.Generator, n: int, b: int) -> np.ndarray:
    """``b`` indices uniform without replacement, returned in ascending order."""
    if not 1 <= b <= n:
        raise ValueError(f"batch size must satisfy 1 <= b <= n, got b={b}, n={n}")
    return np.sort(rng.choice(n, size=b, replace=False))


def global_loss(objectives: list[Objective], x: np.ndarray) -> float:
    """``F(x) = (1/m) sum_i f_i(x)``."""
    return float(np.mean([obj.loss(x) for obj in objectives]))


def global_grad(objectives: list[Objective], x: np.ndarray) -> np.ndarray:
    """``grad F(x)``, averaged over nodes in ascending index order."""
    return np.stack([obj.grad(x) for obj in objectives]).mean(axis=0)


def smoothness(objectives: list[QuadraticObjective]) -> float:
    """Exact L for quadratic networks: max eigenvalue over all components."""
    return float(
        max(np.linalg.eigvalsh(q)[-1] for obj in objectives for q in obj.Q)
    )


def quadratic_minimizer(objectives: list[QuadraticObjective]) -> tuple[np.ndarray, float]:
    """Global minimizer and value of a quadratic network (mean Hessian SPD)."""
    Q = np.mean([obj.Q_mean for obj in objectives], axis=0)
    c = np.mean([obj.c_mean for obj in objectives], axis=0)
    eigs = np.linalg.eigvalsh(Q)
    if eigs[0] <= 0:
        raise ValueError("network Hessian is not positive definite")
    x_star = np.linalg.solve(Q, -c)
    f_star = 0.5 * float(x_star @ Q @ x_star) + float(c @ x_star)
    return x_star, f_star
