"""Tuning relaxation weights against the spectral surrogate loss.

The trainable object is a small vector theta of damping weights (four for
the 4-color sweep, one for Jacobi or SOR). The loss on one operator is
||T^alpha||_F^2 for the two-grid error propagator T built from theta; a
batch averages that over sampled coefficient fields. Optimization uses
finite-difference gradients: with so few parameters a handful of forward
evaluations beats any handwritten adjoint through the LU solves.

Exact dense evaluation is affordable through m = 16. Above that the
Frobenius norm is replaced by an unbiased probe estimate ||T^alpha Z||_F^2
/ s with a per-sample fixed Gaussian Z, so the training objective stays
deterministic and smooth while never materializing T.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import solve
from scipy.sparse.linalg import splu

from .problem import (
    GridGeometry,
    StencilOperator,
    assemble,
    constant_field,
    field_rng,
    sample_lognormal_field,
    sample_seeds,
)
from .smoothers import (
    FOUR_COLOR,
    GAUSS_SEIDEL,
    JACOBI,
    SmootherSpec,
    assign_colors,
)
from .transfer import BLACKBOX, galerkin_coarsen, make_prolongation

_PARAM_COUNT = {FOUR_COLOR: 4, JACOBI: 1, GAUSS_SEIDEL: 1}


def param_count(kind: str) -> int:
    try:
        return _PARAM_COUNT[kind]
    except KeyError:
        raise ValueError(f"smoother kind {kind!r} has no tunable weights") from None


def theta_to_spec(kind: str, theta) -> SmootherSpec:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size != param_count(kind):
        raise ValueError(
            f"{kind} needs {param_count(kind)} weight(s), got {theta.size}"
        )
    if kind == FOUR_COLOR:
        return SmootherSpec.four_color(*theta)
    return SmootherSpec(kind, (float(theta[0]),))


@dataclass(frozen=True)
class TrainConfig:
    """Problem, protocol and optimizer settings for one training run.

    pool_size selects the sampling mode: an integer draws that many fields
    up front and re-draws mini-batches from the training split every
    epoch; None draws a fresh batch of fields every regenerate_every
    epochs against a fixed validation batch.
    """

    m: int = 16
    smoother_kind: str = FOUR_COLOR
    alpha: int = 40
    delta: float = 1e-4
    nu: int = 1
    prolongation: str = BLACKBOX
    hx: float = 1.0
    hy: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    poisson: bool = False
    pool_size: int | None = 100
    val_fraction: float = 0.2
    batch_size: int = 20
    regenerate_every: int = 200
    max_epochs: int = 250
    optimizer: str = "adam"
    lr: float = 0.02
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    h_fd: float = 1e-4
    clip_lo: float = 0.05
    clip_hi: float = 2.5
    seed: int = 0
    estimator: str = "auto"  # dense | probes | auto
    probes: int = 32
    dense_limit: int = 16
    val_every: int = 10
    refine_steps: tuple = ()

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 8 or self.m % 2:
            raise ValueError(f"training grid side must be an even int >= 8, got {self.m!r}")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.estimator not in ("auto", "dense", "probes"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0 < self.clip_lo < self.clip_hi:
            raise ValueError(f"bad clip box [{self.clip_lo}, {self.clip_hi}]")
        if self.alpha < 1 or self.nu < 1:
            raise ValueError("alpha and nu must be >= 1")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.pool_size is not None and self.pool_size < self.batch_size:
            raise ValueError("pool_size must cover at least one batch")
        if self.regenerate_every < 1 or self.max_epochs < 0:
            raise ValueError("regenerate_every >= 1 and max_epochs >= 0 required")
        if self.probes < 1:
            raise ValueError(f"probes must be >= 1, got {self.probes}")

    @property
    def k(self) -> int:
        return param_count(self.smoother_kind)

    def clip(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.clip_lo, self.clip_hi)

    def use_dense(self) -> bool:
        if self.estimator == "auto":
            return self.m <= self.dense_limit
        return self.estimator == "dense"


def make_operator(config: TrainConfig, seed) -> StencilOperator:
    geo = GridGeometry(config.m, config.hx, config.hy)
    if config.poisson:
        fld = constant_field(geo)
    else:
        fld = sample_lognormal_field(geo, seed, config.mu, config.sigma)
    return assemble(fld, config.delta)


class _DenseEval:
    """Exact ||T^alpha||_F^2 via dense propagator assembly."""

    def __init__(self, A: StencilOperator, config: TrainConfig):
        self.config = config
        self.n = A.n
        self.dense = A.to_dense()
        self.K = self.dense / A.diagonal()[:, None]
        self.masks = assign_colors(A.m).masks() if config.smoother_kind == FOUR_COLOR else None
        P = make_prolongation(config.prolongation, A)
        Pd = P.to_dense()
        coarse = Pd.T @ self.dense @ Pd
        self.C = np.eye(self.n) - Pd @ solve(coarse, Pd.T @ self.dense, assume_a="sym")

    def loss(self, theta: np.ndarray) -> float:
        cfg = self.config
        if cfg.smoother_kind == FOUR_COLOR:
            S = np.eye(self.n)
            for omega, mask in zip(theta, self.masks):
                S[mask] -= omega * (self.K[mask] @ S)
        else:
            S = np.eye(self.n) - theta[0] * self.K
        if cfg.nu > 1:
            S = np.linalg.matrix_power(S, cfg.nu)
        T = self.C @ S
        with np.errstate(over="ignore", invalid="ignore"):
            M = np.linalg.matrix_power(T, cfg.alpha)
            value = float(np.einsum("ij,ij->", M, M))
        return value if np.isfinite(value) else float("inf")


class _ProbeEval:
    """Probe estimate of ||T^alpha||_F^2; applies T to a fixed block."""

    def __init__(self, A: StencilOperator, config: TrainConfig, probe_seed):
        self.config = config
        n = A.n
        self.A = A.to_csr()
        invd = 1.0 / A.diagonal()
        K = sparse.diags(invd) @ self.A
        if config.smoother_kind == FOUR_COLOR:
            idx = [np.flatnonzero(m) for m in assign_colors(A.m).masks()]
            self.phases = [(i, K[i].tocsr()) for i in idx]
        else:
            self.phases = None
            self.K = K.tocsr()
        P = make_prolongation(config.prolongation, A)
        self.P = P.matrix
        self.Pt = P.matrix.T.tocsr()
        # The Galerkin coarse matrix is 9-point sparse; a sparse LU keeps
        # the per-application coarse solve near the stencil cost instead
        # of the dense n_c^2 one.
        self.lu = splu(galerkin_coarsen(A, P).to_csr().tocsc())
        self.Z = field_rng(probe_seed).standard_normal((n, config.probes))

    def loss(self, theta: np.ndarray) -> float:
        cfg = self.config
        Y = self.Z.copy()
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(cfg.alpha):
                for _ in range(cfg.nu):
                    if self.phases is not None:
                        for omega, (idx, K) in zip(theta, self.phases):
                            Y[idx] -= omega * (K @ Y)
                    else:
                        Y -= theta[0] * (self.K @ Y)
                Y -= self.P @ self.lu.solve(self.Pt @ (self.A @ Y))
            value = float(np.einsum("ij,ij->", Y, Y)) / cfg.probes
        return value if np.isfinite(value) else float("inf")


class BatchObjective:
    """Mean raw loss over a fixed set of per-operator evaluators."""

    def __init__(self, config: TrainConfig, evaluators):
        self.config = config
        self.evals = list(evaluators)

    @classmethod
    def from_operators(cls, config: TrainConfig, operators, probe_tags=None):
        if config.use_dense():
            evals = [_DenseEval(A, config) for A in operators]
        else:
            if probe_tags is None:
                probe_tags = [(config.seed, 101, i) for i in range(len(operators))]
            evals = [
                _ProbeEval(A, config, tag)
                for A, tag in zip(operators, probe_tags)
            ]
        return cls(config, evals)

    def raw(self, theta: np.ndarray) -> float:
        return float(np.mean([e.loss(theta) for e in self.evals]))

    def normalized(self, theta: np.ndarray) -> float:
        """raw^(1/(2 alpha)): the contraction-rate scale the optimizer sees."""
        return self.raw(theta) ** (1.0 / (2.0 * self.config.alpha))


def batch_loss(theta, operators, config: TrainConfig) -> float:
    """Mean ||T^alpha||_F^2 over the given operators at weights theta."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return BatchObjective.from_operators(config, list(operators)).raw(theta)


def fd_gradient(fun, theta: np.ndarray, h: float) -> np.ndarray:
    """Central finite differences, falling back to one-sided at overflow."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    base = None
    for j in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        fu, fd = fun(up), fun(dn)
        if np.isfinite(fu) and np.isfinite(fd):
            grad[j] = (fu - fd) / (2.0 * h)
            continue
        if base is None:
            base = fun(theta)
        if np.isfinite(fd):
            grad[j] = (base - fd) / h
        elif np.isfinite(fu):
            grad[j] = (fu - base) / h
        else:
            grad[j] = 0.0
    return grad


def gradient(theta, operators, config: TrainConfig, objective=None) -> np.ndarray:
    """FD gradient of batch_loss (or of a supplied objective callable)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if objective is None:
        objective = BatchObjective.from_operators(config, list(operators)).raw
    return fd_gradient(objective, theta, config.h_fd)


@dataclass
class TrainTrace:
    """Per-epoch history; losses are on the rate scale raw^(1/(2 alpha))."""

    epochs: np.ndarray
    train_loss: np.ndarray
    val_loss: np.ndarray
    thetas: np.ndarray
    best_epoch: int = -1

    def to_csv(self, path) -> None:
        k = self.thetas.shape[1]
        header = "epoch,train_loss,val_loss," + ",".join(
            f"theta_{j + 1}" for j in range(k)
        )
        body = np.column_stack(
            [self.epochs, self.train_loss, self.val_loss, self.thetas]
        )
        np.savetxt(path, body, delimiter=",", header=header, comments="")


class _Sampler:
    """Epoch-indexed batch objectives with per-seed evaluator reuse."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self._cache: dict = {}
        if config.pool_size is not None:
            seeds = sample_seeds((config.seed, 1), config.pool_size)
            n_val = max(1, int(round(config.val_fraction * config.pool_size)))
            self.train_seeds = seeds[: config.pool_size - n_val]
            self.val_seeds = seeds[config.pool_size - n_val:]
        else:
            self.train_seeds = None
            self.val_seeds = sample_seeds((config.seed, 2), config.batch_size)

    def _objective(self, seeds) -> BatchObjective:
        for s in seeds:
            if int(s) not in self._cache:
                A = make_operator(self.config, s)
                self._cache[int(s)] = (
                    _DenseEval(A, self.config)
                    if self.config.use_dense()
                    else _ProbeEval(A, self.config, (int(s), 101))
                )
        return BatchObjective(self.config, (self._cache[int(s)] for s in seeds))

    def batch(self, epoch: int) -> BatchObjective:
        cfg = self.config
        if self.train_seeds is not None:
            if cfg.batch_size >= len(self.train_seeds):
                return self._objective(self.train_seeds)
            rng = field_rng((cfg.seed, 3, epoch))
            idx = rng.choice(len(self.train_seeds), cfg.batch_size, replace=False)
            return self._objective(self.train_seeds[np.sort(idx)])
        block = epoch // max(1, cfg.regenerate_every)
        seeds = sample_seeds((cfg.seed, 4, block), cfg.batch_size)
        return self._objective(seeds)

    def validation(self) -> BatchObjective:
        return self._objective(self.val_seeds)

    def refine_set(self) -> BatchObjective:
        """Train plus validation pool: the largest fixed set available."""
        seeds = list(self.val_seeds)
        if self.train_seeds is not None:
            seeds = list(self.train_seeds) + seeds
        return self._objective(np.asarray(seeds, dtype=np.uint64))


def coordinate_refine(objective, theta, steps, lo, hi) -> np.ndarray:
    """Deterministic coordinate descent polish at a decreasing step ladder."""
    theta = np.asarray(theta, dtype=float).copy()
    best = objective(theta)
    for step in steps:
        improved = True
        while improved:
            improved = False
            for j in range(theta.size):
                for direction in (+1.0, -1.0):
                    cand = theta.copy()
                    cand[j] = np.clip(cand[j] + direction * step, lo, hi)
                    if cand[j] == theta[j]:
                        continue
                    val = objective(cand)
                    if val < best:
                        theta, best = cand, val
                        improved = True
    return theta


def train(theta0, config: TrainConfig):
    """Minimize the batch loss from theta0; returns (theta, trace).

    The returned weights are those with the best validation loss seen,
    optionally polished by coordinate descent on a fixed train+validation
    subset when config.refine_steps is nonempty. Everything is seeded, so
    identical inputs reproduce identical traces.
    """
    cfg = config
    theta = cfg.clip(np.atleast_1d(np.asarray(theta0, dtype=float)).copy())
    if theta.size != cfg.k:
        raise ValueError(f"theta0 has {theta.size} entries, expected {cfg.k}")
    sampler = _Sampler(cfg)
    val_obj = sampler.validation()

    rows = []
    best = (float("inf"), theta.copy(), -1)
    adam_m = np.zeros_like(theta)
    adam_v = np.zeros_like(theta)
    for epoch in range(cfg.max_epochs):
        batch = sampler.batch(epoch)
        train_j = batch.normalized(theta)
        val_j = float("nan")
        if epoch % cfg.val_every == 0:
            val_j = val_obj.normalized(theta)
            if val_j < best[0]:
                best = (val_j, theta.copy(), epoch)
        rows.append((epoch, train_j, val_j, theta.copy()))

        grad = fd_gradient(batch.normalized, theta, cfg.h_fd)
        lr = cfg.lr * cfg.lr_decay**epoch
        if cfg.optimizer == "adam":
            adam_m = cfg.beta1 * adam_m + (1 - cfg.beta1) * grad
            adam_v = cfg.beta2 * adam_v + (1 - cfg.beta2) * grad**2
            m_hat = adam_m / (1 - cfg.beta1 ** (epoch + 1))
            v_hat = adam_v / (1 - cfg.beta2 ** (epoch + 1))
            theta = theta - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        else:
            theta = theta - lr * grad
        theta = cfg.clip(theta)

    if cfg.max_epochs > 0:
        val_j = val_obj.normalized(theta)
        if val_j < best[0]:
            best = (val_j, theta.copy(), cfg.max_epochs)
        rows.append((cfg.max_epochs, float("nan"), val_j, theta.copy()))

    theta_star = best[1]
    if cfg.refine_steps:
        refine_obj = sampler.refine_set()
        theta_star = coordinate_refine(
            refine_obj.normalized, theta_star, cfg.refine_steps,
            cfg.clip_lo, cfg.clip_hi,
        )

    if rows:
        epochs, train_l, val_l, thetas = zip(*rows)
        trace = TrainTrace(
            np.asarray(epochs, dtype=float),
            np.asarray(train_l),
            np.asarray(val_l),
            np.asarray(thetas),
            best_epoch=best[2],
        )
    else:
        trace = TrainTrace(
            np.zeros(0), np.zeros(0), np.zeros(0),
            np.zeros((0, cfg.k)), best_epoch=-1,
        )
    return theta_star, trace


def local_search(theta, step: float, rate_fn, max_moves: int = 25):
    """Steepest-descent walk on the +-step lattice around theta.

    Each move evaluates the full 3^k - 1 neighborhood of the current point
    under rate_fn (smaller is better) and takes the best strictly
    improving neighbor; stops at a lattice-local minimum. Returns
    (theta, rate).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    cache: dict = {}

    def ev(t):
        key = tuple(np.round(t, 12))
        if key not in cache:
            cache[key] = float(rate_fn(np.asarray(key)))
        return cache[key]

    best = ev(theta)
    for _ in range(max_moves):
        candidates = []
        for offsets in itertools.product((-step, 0.0, step), repeat=theta.size):
            if not any(offsets):
                continue
            cand = theta + np.asarray(offsets)
            candidates.append((ev(cand), cand))
        rate, cand = min(candidates, key=lambda rc: rc[0])
        if rate >= best:
            break
        theta, best = cand, rate
    return theta, best


def coordinate_grid_search(bounds, step: float, rate_fn, restarts: int = 3,
                           seed: int = 0, max_rounds: int = 10):
    """Cyclic coordinate descent on a regular lattice with random restarts.

    bounds is a (lo, hi) pair per coordinate; the lattice spans each
    interval at the given step. Exhaustive search over the product lattice
    is exponential in k, so each restart sweeps one coordinate at a time
    to a fixed point instead, which on these smooth rate surfaces lands in
    the same basin at a tiny fraction of the evaluations. Returns
    (theta, rate).
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    axes = [np.round(np.arange(lo, hi + step / 2, step), 12) for lo, hi in bounds]
    cache: dict = {}

    def ev(t):
        key = tuple(np.round(t, 12))
        if key not in cache:
            cache[key] = float(rate_fn(np.asarray(key)))
        return cache[key]

    rng = field_rng((seed, 5))
    best_theta, best_rate = None, float("inf")
    for restart in range(restarts):
        if restart == 0:
            theta = np.array([ax[len(ax) // 2] for ax in axes])
        else:
            theta = np.array([rng.choice(ax) for ax in axes])
        for _ in range(max_rounds):
            moved = False
            for j, ax in enumerate(axes):
                trials = []
                for v in ax:
                    cand = theta.copy()
                    cand[j] = v
                    trials.append((ev(cand), v))
                rate, v = min(trials, key=lambda rv: rv[0])
                if v != theta[j]:
                    theta[j] = v
                    moved = True
            if not moved:
                break
        rate = ev(theta)
        if rate < best_rate:
            best_theta, best_rate = theta.copy(), rate
    return best_theta, best_rate


@dataclass(frozen=True)
class OmegaSweepRow:
    omega: float
    rate: float
    diverged: bool


def omega_sweep(omegas, rate_fn) -> list:
    """Evaluate a damping-factor grid; non-finite or >= 1 rates are flagged
    as diverged rather than dropped."""
    rows = []
    for omega in omegas:
        rate = float(rate_fn(float(omega)))
        diverged = not np.isfinite(rate) or rate >= 1.0
        rows.append(OmegaSweepRow(float(omega), rate, diverged))
    return rows


def best_omega(rows) -> OmegaSweepRow:
    converged = [r for r in rows if not r.diverged]
    if not converged:
        raise ValueError("no converged sweep point")
    return min(converged, key=lambda r: r.rate)
