"""Dual block coordinate descent with a trust-region block solver.

The dual problem is

    min_{alpha in box}  1/2 alpha' K alpha + f(alpha)

with ``f`` the separable conjugate penalty from :mod:`dualkm.losses`.  Each
outer iteration draws one block of a fixed random partition, assembles
``K_BB`` and ``K_{B,:} alpha`` (exactly, or through random features with a
maintained ``theta = sum_i alpha_i psi(x_i)``) and improves the block with a
trust-region method whose steps come from a box-aware truncated
CG-Steihaug iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .kernels import KernelSpec, RffMap, exact_kernel_grad, kernel_block, kernel_matvec, rff_map
from .losses import Loss, make_loss

logger = logging.getLogger(__name__)

__all__ = [
    "DivergenceError",
    "TrustRegionConfig",
    "BlockPartition",
    "DualState",
    "BlockObjective",
    "TrustRegionResult",
    "partition_blocks",
    "select_block",
    "boundary_intersection",
    "tcg_steihaug",
    "trust_region_solve",
    "initial_state",
    "dbcd_train",
    "default_block_size",
]


class DivergenceError(FloatingPointError):
    """A non-finite objective or multiplier appeared during training."""


@dataclass(frozen=True)
class TrustRegionConfig:
    """Trust-region knobs.

    ``tol`` is both the slack used when deciding whether a step reached the
    radius and the threshold on the squared CG residual.  ``svr_delta_max``
    optionally overrides ``delta_max`` for the SVR loss only.
    ``literal_box_break`` stops CG *before* taking an iterate that leaves the
    box (instead of taking it and clamping).
    """

    delta_max: float = 1.0
    eta: float = 0.1
    tol: float = 1e-5
    max_tr_iter: int = 50
    max_cg_iter: int = 10
    literal_box_break: bool = False
    svr_delta_max: Optional[float] = None

    def __post_init__(self):
        if not self.delta_max > 0:
            raise ValueError("delta_max must be positive")
        if not 0 <= self.eta <= 0.25:
            raise ValueError("eta must lie in [0, 1/4]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_tr_iter < 1 or self.max_cg_iter < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.svr_delta_max is not None and not self.svr_delta_max > 0:
            raise ValueError("svr_delta_max must be positive")


@dataclass(frozen=True, eq=False)
class BlockPartition:
    blocks: tuple
    block_size: int

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, j):
        return self.blocks[j]

    @property
    def n(self):
        return sum(len(b) for b in self.blocks)


def default_block_size(loss) -> int:
    return 1024 if make_loss(loss).name == "logistic" else 512


def partition_blocks(n: int, block_size: int, seed: int = 0, shuffle: bool = True) -> BlockPartition:
    """Shuffle ``range(n)`` and chop it into consecutive blocks.

    >>> [len(b) for b in partition_blocks(5, 2).blocks]
    [2, 2, 1]
    """
    if block_size < 1:
        raise ValueError(f"block_size must be at least 1, got {block_size}")
    if n < 1:
        raise ValueError("cannot partition an empty index set")
    block_size = min(block_size, n)
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    blocks = tuple(order[i : i + block_size] for i in range(0, n, block_size))
    return BlockPartition(blocks, block_size)


@dataclass(eq=False)
class DualState:
    """Mutable training state owned by one :func:`dbcd_train` call.

    ``objective`` is the dual objective in minimization form, updated
    incrementally from the exact block decreases.
    """

    alpha: np.ndarray
    partition: BlockPartition
    rng: np.random.Generator
    theta: Optional[np.ndarray] = None
    iteration: int = 0
    objective: float = 0.0

    @property
    def dual_objective(self) -> float:
        """Maximization-form dual value (increases during training)."""
        return -self.objective


def select_block(state: DualState) -> int:
    m = len(state.partition)
    if m == 1:
        return 0
    return int(state.rng.integers(m))


def boundary_intersection(s, d, delta) -> float:
    """Positive ``w`` with ``||s + w d|| = delta`` for ``||s|| < delta``."""
    a = float(d @ d)
    if a == 0:
        raise ValueError("direction must be nonzero")
    b = float(s @ d)
    c = float(s @ s) - float(delta) ** 2
    root = np.sqrt(max(b * b - a * c, 0.0))
    # pick the cancellation-free form of the positive root
    if b > 0:
        return -c / (b + root)
    return (root - b) / a


def _model(Q, g, s):
    return float(g @ s + 0.5 * (s @ (Q @ s)))


def tcg_steihaug(Q, g, alpha_B, upper, lower, delta, tol=1e-5, max_iter=10, literal_box_break=False):
    """Truncated CG-Steihaug step for the box- and radius-constrained model.

    Minimizes ``mu(s) = g's + s'Qs/2`` approximately subject to
    ``||s|| <= delta`` and ``lower <= alpha_B + s <= upper``.  Coordinates
    sitting on a bound with the gradient pushing outward are held fixed; CG
    runs on the rest and stops when it crosses the radius, leaves the box,
    reaches ``||r||^2 <= tol`` or hits ``max_iter``.  The final iterate is
    clamped to the box; if clamping loses model decrease, the step along the
    last direction truncated at the box is returned instead.
    """
    Q = np.asarray(Q)
    g = np.asarray(g)
    n = g.shape[0]
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(g)) and np.isfinite(delta)):
        raise ValueError("non-finite input to tcg_steihaug")
    dtype = np.result_type(Q.dtype, g.dtype)
    lo = np.asarray(lower - alpha_B, dtype=dtype)
    hi = np.asarray(upper - alpha_B, dtype=dtype)
    out = np.zeros(n, dtype=dtype)

    blocked = ((lo >= 0) & (g > 0)) | ((hi <= 0) & (g < 0)) | (lo >= hi)
    free = np.flatnonzero(~blocked)
    if free.size == 0:
        return out
    if free.size < n:
        Qf = Q[np.ix_(free, free)]
        gf, lof, hif = g[free], lo[free], hi[free]
    else:
        Qf, gf, lof, hif = Q, g, lo, hi

    s = np.zeros(free.size, dtype=dtype)
    r = -gf
    d = r.copy()
    r2 = float(r @ r)
    if r2 == 0:
        return out
    cand = s
    for _ in range(max_iter):
        Qd = Qf @ d
        dQd = float(d @ Qd)
        if dQd <= 0:
            # no curvature along d: walk to the radius
            cand = s + boundary_intersection(s, d, delta) * d
            break
        w = r2 / dQd
        s_next = s + w * d
        if float(s_next @ s_next) > delta * delta:
            cand = s + boundary_intersection(s, d, delta) * d
            break
        if np.any(s_next > hif) or np.any(s_next < lof):
            cand = s if literal_box_break else s_next
            break
        s = s_next
        cand = s
        r = r - w * Qd
        r2_new = float(r @ r)
        if r2_new <= tol:
            break
        d = r + (r2_new / r2) * d
        r2 = r2_new

    best = np.clip(cand, lof, hif)
    best_val = _model(Qf, gf, best)
    if cand is not s:
        # segment s -> cand stays inside the ball; stop it at the box
        step = cand - s
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(step > 0, (hif - s) / step, np.inf)
            t_lo = np.where(step < 0, (lof - s) / step, np.inf)
        t = float(np.clip(min(t_hi.min(), t_lo.min(), 1.0), 0.0, 1.0))
        alt = np.clip(s + t * step, lof, hif)
        alt_val = _model(Qf, gf, alt)
        if alt_val < best_val:
            best, best_val = alt, alt_val
    if not best_val <= 0:
        return out
    out[free] = best
    return _snap_to_box(alpha_B, out, lower, upper)


def _snap_to_box(alpha_B, s, lower, upper):
    """Shrink ``s`` by ulps until ``alpha_B + s`` lies in the box in floating point."""
    alpha_B = np.asarray(alpha_B, dtype=s.dtype)
    for _ in range(8):
        x = alpha_B + s
        over = x > upper
        under = x < lower
        if not (over.any() or under.any()):
            return s
        s[over] = np.nextafter(s[over], -np.inf)
        s[under] = np.nextafter(s[under], np.inf)
    # alpha_B itself is feasible, so a zero component always fits
    x = alpha_B + s
    s[(x > upper) | (x < lower)] = 0
    return s


class BlockObjective:
    """Block penalty ``f`` restricted to one block, plus its solver box."""

    def __init__(self, loss: Loss, y_B, lam, dtype=np.float64):
        self.loss = loss
        self.y = np.asarray(y_B, dtype=dtype)
        self.lam = lam
        self.lower, self.upper = loss.solver_box(self.y, lam, dtype)

    def value(self, alpha_B) -> float:
        return float(self.loss.block(self.y, self.lam, alpha_B)[0])

    def model(self, alpha_B, kernel_grad):
        return self.loss.local_model(self.y, self.lam, alpha_B, kernel_grad, self.lower, self.upper)

    def delta_max(self, config: TrustRegionConfig) -> float:
        if self.loss.name == "svr" and config.svr_delta_max is not None:
            return config.svr_delta_max
        return config.delta_max


class TrustRegionResult(NamedTuple):
    alpha: np.ndarray
    gbar: np.ndarray
    change: float  # J(alpha_new) - J(alpha_old), <= 0
    rhos: list
    radii: list
    accepted: int


def trust_region_solve(alpha_B, K_BB, gbar, block: BlockObjective, config: TrustRegionConfig | None = None):
    """Minimize the block subproblem from ``alpha_B`` by a trust-region method.

    ``gbar`` must equal ``K_{B,:} alpha`` for the current global ``alpha``;
    the returned ``gbar`` stays consistent with the returned block.
    """
    config = config or TrustRegionConfig()
    alpha = np.array(alpha_B, copy=True)
    gbar = np.array(gbar, copy=True)
    dtype = alpha.dtype
    delta_max = block.delta_max(config)
    radius = delta_max / 4.0
    lower, upper = block.lower, block.upper
    guard = max(1e-14, 10.0 * float(np.finfo(dtype).eps))

    fval = block.value(alpha)
    J = float(alpha @ gbar - 0.5 * (alpha @ (K_BB @ alpha)) + fval)
    if not np.isfinite(J):
        raise DivergenceError(f"non-finite block objective at start ({J})")
    total = 0.0
    rhos, radii = [], []
    accepted = 0
    diag = np.arange(alpha.shape[0])
    for _ in range(config.max_tr_iter):
        g, hess, lo_k, hi_k = block.model(alpha, gbar)
        Q = K_BB.copy()
        Q[diag, diag] += hess
        s = tcg_steihaug(Q, g, alpha, hi_k, lo_k, radius, config.tol, config.max_cg_iter, config.literal_box_break)
        trial = np.clip(alpha + s, lower, upper).astype(dtype, copy=False)
        s = trial - alpha
        snorm = float(np.sqrt(s @ s))
        pred = -float(g @ s + 0.5 * (s @ (Q @ s)))
        if not pred > guard * (1.0 + abs(J)):
            # a smaller radius cannot buy a larger model decrease
            radii.append(radius / 4.0)
            break
        Ks = K_BB @ s
        f_new = block.value(trial)
        actual = -float(gbar @ s + 0.5 * (s @ Ks) + f_new - fval)
        if not np.isfinite(actual):
            raise DivergenceError(f"non-finite block objective (loss={block.loss.name})")
        rho = actual / pred
        rhos.append(rho)
        if rho < 0.5:
            radius = radius / 4.0
        elif rho > 0.75 and radius - snorm < config.tol:
            radius = min(2.0 * radius, delta_max)
        radii.append(radius)
        if rho > config.eta and actual > 0:
            alpha = trial
            gbar = gbar + Ks
            fval = f_new
            J -= actual
            total += actual
            accepted += 1
    return TrustRegionResult(alpha, gbar, -total, rhos, radii, accepted)


def _as_loss(loss):
    return loss if isinstance(loss, Loss) else make_loss(loss)


def initial_state(X, y, loss, lam, kernel, partition, seed=0, dtype=np.float64, chunk=2048, alpha0=None):
    """Feasible starting point, ``theta`` (inexact mode) and its dual value."""
    loss = _as_loss(loss)
    y = np.asarray(y, dtype=dtype)
    alpha = loss.init_alpha(y, lam, dtype) if alpha0 is None else np.array(alpha0, dtype=dtype)
    lower, upper = loss.solver_box(y, lam, dtype)
    alpha = np.clip(alpha, lower, upper).astype(dtype, copy=False)
    theta = None
    if isinstance(kernel, RffMap):
        theta = np.zeros(kernel.n_components, dtype=dtype)
        for start in range(0, alpha.shape[0], chunk):
            sl = slice(start, start + chunk)
            if np.any(alpha[sl]):
                theta += rff_map(kernel, X[sl]) @ alpha[sl]
        quad = float(theta @ theta)
    elif np.any(alpha):
        quad = float(alpha @ kernel_matvec(kernel, X, X, alpha, chunk=chunk))
    else:
        quad = 0.0
    fsum = float(loss.block(y, lam, alpha)[0])
    rng = np.random.default_rng([seed, 1])
    return DualState(alpha=alpha, partition=partition, rng=rng, theta=theta, objective=0.5 * quad + fsum)


def dbcd_train(
    X,
    y,
    loss,
    lam: float,
    kernel,
    partition: BlockPartition | None = None,
    config: TrustRegionConfig | None = None,
    n_iter: int = 100,
    *,
    block_size: int | None = None,
    seed: int = 0,
    dtype=np.float64,
    chunk: int = 2048,
    state: DualState | None = None,
    callback: Callable[[DualState], None] | None = None,
    callback_every: int = 1,
) -> DualState:
    """Run ``n_iter`` outer iterations of dual block coordinate descent.

    Parameters
    ----------
    X : array or sparse matrix of shape (n, d)
    y : array of shape (n,)
    loss : Loss or str
    lam : float
        Regularization; the primal objective is
        ``||theta||^2 / 2 + sum_i loss(y_i, <theta, phi(x_i)>) / lam``.
    kernel : KernelSpec or RffMap
        A :class:`KernelSpec` selects exact kernel evaluations; an
        :class:`RffMap` selects the random-feature surrogate and makes the
        solver maintain ``theta``.
    partition : BlockPartition, optional
        Defaults to ``partition_blocks(n, block_size, seed)``.
    state : DualState, optional
        Continue from an existing state instead of the default start.
    callback : callable, optional
        Called as ``callback(state)`` every ``callback_every`` iterations.
    """
    loss = _as_loss(loss)
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam!r}")
    if not isinstance(kernel, (KernelSpec, RffMap)):
        raise TypeError("kernel must be a KernelSpec or an RffMap")
    config = config or TrustRegionConfig()
    dtype = np.dtype(dtype)
    y = np.asarray(y, dtype=dtype)
    n = y.shape[0]
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows but y has {n} entries")
    if loss.classification and not np.all(np.abs(y) == 1):
        raise ValueError(f"{loss.name} loss expects labels in {{-1, +1}}")
    inexact = isinstance(kernel, RffMap)
    if partition is None:
        partition = partition_blocks(n, block_size or default_block_size(loss), seed)
    if state is None:
        state = initial_state(X, y, loss, lam, kernel, partition, seed, dtype, chunk)
    alpha = state.alpha
    objectives = [BlockObjective(loss, y[B], lam, dtype) for B in partition.blocks]

    for _ in range(n_iter):
        j = select_block(state)
        B = partition[j]
        if inexact:
            psi_B = rff_map(kernel, X[B])
            K_BB = psi_B.T @ psi_B
            gbar = psi_B.T @ state.theta
        else:
            K_BB = kernel_block(kernel, X[B], X[B], dtype=dtype)
            gbar = exact_kernel_grad(kernel, X, alpha, B, chunk=chunk).astype(dtype, copy=False)
        old = alpha[B]
        res = trust_region_solve(old, K_BB, gbar, objectives[j], config)
        if not np.all(np.isfinite(res.alpha)):
            raise DivergenceError(f"non-finite multipliers at iteration {state.iteration + 1}")
        if inexact:
            state.theta += psi_B @ (res.alpha - old)
        alpha[B] = res.alpha
        state.objective += res.change
        state.iteration += 1
        if callback is not None and state.iteration % callback_every == 0:
            callback(state)
    return state
