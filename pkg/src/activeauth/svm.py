"""Per-user RBF-SVM verifier trained with SMO.

The solver works on the soft-margin dual

    min 1/2 a'Qa - e'a   s.t.  y'a = 0,  0 <= a_i <= C,   Q_ij = y_i y_j K_ij

with maximal-violating-pair working set selection and the LIBSVM two-variable
update. Decision values are ``sum_i dual_coef_i K(sv_i, x) + bias`` on
standardized inputs, genuine labelled +1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from numba import njit

from .data import ChannelId

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
KKT_TOL = 1e-3
MAX_ITER = 100_000
_TAU = 1e-12


class ConvergenceError(RuntimeError):
    pass


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class HyperGrid:
    C_values: tuple[float, ...] = (2.0**-3, 2.0**-1, 2.0, 2.0**3, 2.0**5)
    # multiples of the median pairwise distance of the standardized data
    sigma_factors: tuple[float, ...] = tuple(2.0**k for k in range(-2, 5))
    folds: int = 3
    # absolute kernel widths; override the median heuristic when given
    sigma_values: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.C_values or not (self.sigma_values or self.sigma_factors):
            raise ValueError("hyperparameter grid must be non-empty")
        if min(self.C_values) <= 0:
            raise ValueError("C values must be > 0")
        sig = self.sigma_values or self.sigma_factors
        if min(sig) <= 0:
            raise ValueError("sigma values must be > 0")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")

    def to_json(self) -> dict[str, Any]:
        return {
            "C_values": list(self.C_values),
            "sigma_factors": list(self.sigma_factors),
            "sigma_values": None if self.sigma_values is None else list(self.sigma_values),
            "folds": self.folds,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "HyperGrid":
        sv = doc.get("sigma_values")
        return cls(
            C_values=tuple(float(c) for c in doc["C_values"]),
            sigma_factors=tuple(float(s) for s in doc["sigma_factors"]),
            folds=int(doc["folds"]),
            sigma_values=None if sv is None else tuple(float(s) for s in sv),
        )


@dataclass(frozen=True)
class Scaler:
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        shift = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(shift, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.shift) / self.scale

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.shift


def sq_dists(A: np.ndarray, B: np.ndarray, block: int = 256) -> np.ndarray:
    """Pairwise squared Euclidean distances by explicit differences.

    Avoids BLAS so results do not depend on threading.
    """
    out = np.empty((A.shape[0], B.shape[0]))
    for s in range(0, A.shape[0], block):
        diff = A[s : s + block, None, :] - B[None, :, :]
        out[s : s + block] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def rbf(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-sq_dists(A, B) / (2.0 * sigma * sigma))


@njit(cache=True)
def _smo(K, y, C, eps, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        # maximal violating pair
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] < 0 and alpha[t] < C) or (y[t] > 0 and alpha[t] > 0):
                if v < gmin:
                    gmin = v
                    j = t
        if i < 0 or j < 0 or gmax - gmin < eps:
            converged = True
            break
        it += 1
        Kii = K[i, i]
        Kjj = K[j, j]
        Kij = K[i, j]
        old_ai = alpha[i]
        old_aj = alpha[j]
        if y[i] != y[j]:
            quad = Kii + Kjj - 2.0 * Kij
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = Kii + Kjj - 2.0 * Kij
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - old_ai
        daj = alpha[j] - old_aj
        for t in range(n):
            G[t] += y[t] * (y[i] * K[t, i] * dai + y[j] * K[t, j] * daj)

    # bias from free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    total = 0.0
    nfree = 0
    for t in range(n):
        yG = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            total += yG
            nfree += 1
    if nfree > 0:
        rho = total / nfree
    else:
        rho = 0.5 * (ub + lb)
    return alpha, rho, it, converged


def solve_dual(K: np.ndarray, y: np.ndarray, C: float, eps: float = KKT_TOL, max_iter: int = MAX_ITER):
    """Run SMO on a precomputed kernel. Returns ``(alpha, bias, n_iter)``."""
    K = np.ascontiguousarray(K, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    alpha, rho, it, ok = _smo(K, y, float(C), float(eps), int(max_iter))
    if not ok:
        raise ConvergenceError(f"SMO did not reach KKT tolerance {eps} within {max_iter} iterations")
    return alpha, -rho, it


def kkt_residuals(K: np.ndarray, y: np.ndarray, alpha: np.ndarray, bias: float, C: float) -> np.ndarray:
    """Per-point violation of the soft-margin optimality conditions."""
    margin = y * ((alpha * y) @ K + bias)
    at_zero = alpha <= 0
    at_c = alpha >= C
    free = ~(at_zero | at_c)
    res = np.zeros_like(margin)
    res[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    res[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    res[free] = np.abs(margin[free] - 1.0)
    return res


@dataclass(frozen=True, eq=False)
class TrainedVerifier:
    channel: ChannelId | None
    user_id: str
    support_vectors: np.ndarray  # standardized space
    dual_coefs: np.ndarray
    bias: float
    sigma: float
    C: float
    scaler: Scaler
    cv_accuracy: float = float("nan")
    grid: HyperGrid = field(default_factory=HyperGrid)
    seed: int = 0
    # out-of-fold decision values for the training rows (genuine first)
    oof_scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim vectors, got {X.shape[1]}")
        Z = self.scaler.transform(X)
        return rbf(Z, self.support_vectors, self.sigma) @ self.dual_coefs + self.bias

    def to_json(self) -> dict[str, Any]:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "channel": None if self.channel is None else self.channel.value,
            "user_id": self.user_id,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
            "bias": self.bias,
            "sigma": self.sigma,
            "C": self.C,
            "scaler": {"shift": self.scaler.shift.tolist(), "scale": self.scaler.scale.tolist()},
            "cv_accuracy": self.cv_accuracy,
            "grid": self.grid.to_json(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "TrainedVerifier":
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format_version')!r}")
        return cls(
            channel=None if doc["channel"] is None else ChannelId.parse(doc["channel"]),
            user_id=doc["user_id"],
            support_vectors=np.array(doc["support_vectors"], dtype=float),
            dual_coefs=np.array(doc["dual_coefs"], dtype=float),
            bias=float(doc["bias"]),
            sigma=float(doc["sigma"]),
            C=float(doc["C"]),
            scaler=Scaler(np.array(doc["scaler"]["shift"]), np.array(doc["scaler"]["scale"])),
            cv_accuracy=float(doc["cv_accuracy"]),
            grid=HyperGrid.from_json(doc["grid"]),
            seed=int(doc["seed"]),
        )


def score_vector(model: TrainedVerifier, v: Sequence[float] | np.ndarray) -> float:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("score_vector expects a single vector")
    return float(model.decision(v[None, :])[0])


def session_channel_score(model: TrainedVerifier, samples: np.ndarray) -> float | None:
    """Mean decision value over a session's samples; None when there are none."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return None
    return float(np.mean(model.decision(samples)))


def stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row, classes dealt round-robin after a seeded shuffle."""
    fold = np.empty(len(y), dtype=int)
    for label in (1.0, -1.0):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


def balanced_accuracy(y: np.ndarray, decision: np.ndarray) -> float:
    pred = np.where(decision >= 0, 1.0, -1.0)
    accs = [np.mean(pred[y == c] == c) for c in (1.0, -1.0) if np.any(y == c)]
    return float(np.mean(accs))


def median_distance(Z: np.ndarray) -> float:
    d = np.sqrt(sq_dists(Z, Z)[np.triu_indices(len(Z), k=1)])
    med = float(np.median(d))
    if med > 0:
        return med
    nz = d[d > 0]
    if nz.size == 0:
        raise DegenerateDataError("all training vectors are identical; skip this channel")
    return float(nz.mean())


def train_verifier(
    genuine: np.ndarray,
    impostor: np.ndarray,
    grid: HyperGrid | None = None,
    seed: int = 0,
    channel: ChannelId | None = None,
    user_id: str = "",
) -> TrainedVerifier:
    """Grid-search (C, sigma) by stratified CV, then fit on everything.

    Selection maximises mean balanced fold accuracy; ties go to the smaller
    C, then the smaller sigma.
    """
    grid = grid or HyperGrid()
    G = np.asarray(genuine, dtype=float)
    I = np.asarray(impostor, dtype=float)
    if G.ndim != 2 or I.ndim != 2 or G.shape[1] != I.shape[1]:
        raise ValueError("genuine and impostor must be 2-D with equal widths")
    if len(G) < 2 or len(I) < 2:
        raise ValueError("need >= 2 genuine and >= 2 impostor vectors")
    # canonical row order makes the result independent of input order
    og = np.lexsort(G.T[::-1])
    oi = np.lexsort(I.T[::-1])
    X = np.vstack([G[og], I[oi]])
    y = np.concatenate([np.ones(len(G)), -np.ones(len(I))])
    order = np.concatenate([og, len(G) + oi])
    if np.all(X == X[0]):
        raise DegenerateDataError("all training vectors are identical; skip this channel")
    scaler = Scaler.fit(X)
    Z = scaler.transform(X)
    if grid.sigma_values is not None:
        sigmas = sorted(grid.sigma_values)
    else:
        base = median_distance(Z)
        sigmas = sorted(f * base for f in grid.sigma_factors)
    Cs = sorted(grid.C_values)

    rng = np.random.default_rng(seed)
    k = min(grid.folds, int(min(len(G), len(I))))
    folds = stratified_folds(y, k, rng)
    D2 = sq_dists(Z, Z)

    best = (-1.0, Cs[0], sigmas[0])
    best_oof = None
    scores: dict[tuple[float, float], tuple[float, np.ndarray]] = {}
    for sigma in sigmas:
        K = np.exp(-D2 / (2.0 * sigma * sigma))
        for C in Cs:
            oof = np.empty(len(y))
            accs = []
            for f in range(k):
                tr = np.flatnonzero(folds != f)
                te = np.flatnonzero(folds == f)
                alpha, b, _ = solve_dual(K[np.ix_(tr, tr)], y[tr], C)
                oof[te] = K[np.ix_(te, tr)] @ (alpha * y[tr]) + b
                accs.append(balanced_accuracy(y[te], oof[te]))
            scores[(C, sigma)] = (float(np.mean(accs)), oof)
    for C in Cs:
        for sigma in sigmas:
            acc, oof = scores[(C, sigma)]
            if acc > best[0]:
                best = (acc, C, sigma)
                best_oof = oof
    acc, C, sigma = best
    K = np.exp(-D2 / (2.0 * sigma * sigma))
    alpha, b, n_iter = solve_dual(K, y, C)
    sv = alpha > 0
    oof_input_order = np.empty(len(y))
    oof_input_order[order] = best_oof
    log.debug("user %s %s: C=%g sigma=%g cv=%.3f n_sv=%d iters=%d", user_id, channel, C, sigma, acc, sv.sum(), n_iter)
    return TrainedVerifier(
        channel=channel,
        user_id=user_id,
        support_vectors=Z[sv],
        dual_coefs=(alpha * y)[sv],
        bias=float(b),
        sigma=float(sigma),
        C=float(C),
        scaler=scaler,
        cv_accuracy=acc,
        grid=grid,
        seed=seed,
        oof_scores=oof_input_order,
    )


def cross_validated_accuracy(genuine, impostor, C: float, sigma: float, folds: int = 3, seed: int = 0) -> float:
    """Mean balanced fold accuracy for one fixed (C, sigma)."""
    grid = HyperGrid(C_values=(C,), sigma_values=(sigma,), folds=folds)
    return train_verifier(genuine, impostor, grid, seed=seed).cv_accuracy
