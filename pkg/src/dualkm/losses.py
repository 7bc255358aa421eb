"""Primal losses, their Fenchel conjugates and the dual feasible boxes.

Every loss ``l(y, u)`` enters the dual through its conjugate
``xi*_y(v) = sup_u v*u - l(y, u)`` evaluated at ``v = -lam * alpha``.  The
block penalty minimized by the solver is

    f(alpha_B) = sum_i xi*_{y_i}(-lam * alpha_i) / lam

which is separable, so only its value, gradient and diagonal Hessian are
needed.  All functions here are vectorized over samples and pure.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

__all__ = [
    "ConjugateDomainError",
    "DualBox",
    "Loss",
    "SquareLoss",
    "LpLoss",
    "AbsoluteLoss",
    "HuberLoss",
    "EpsilonInsensitiveLoss",
    "HingeLoss",
    "SquaredHingeLoss",
    "LogisticLoss",
    "make_loss",
    "primal_loss",
    "conjugate_eval",
    "dual_box",
    "f_block",
    "klr_epsilon",
    "klr_safeguarded_eval",
    "svr_linearized_gradient",
]


class ConjugateDomainError(ValueError):
    """Raised when a conjugate is evaluated outside its (closed) domain."""


class DualBox(NamedTuple):
    lower: np.ndarray
    upper: np.ndarray


def _sign0(x):
    # np.sign already maps 0 to 0; kept explicit because the solver relies on it
    return np.sign(x)


def klr_epsilon(lam, dtype=np.float64):
    """Gap between ``1/lam`` and the next smaller number at precision ``dtype``."""
    dtype = np.dtype(dtype).type
    inv = dtype(1) / dtype(lam)
    return inv - np.nextafter(inv, dtype(0))


class Loss:
    """Base class of a convex loss ``l(y, u)`` and its conjugate.

    Subclasses implement :meth:`primal`, :meth:`conjugate` and
    :meth:`domain`; the dual box and block penalty follow generically.
    """

    name: str = ""
    classification: bool = False
    piecewise_linear: bool = False

    def params(self) -> dict:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(sorted(self.params().items()))))

    # -- per-loss pieces -------------------------------------------------
    def primal(self, y, u):
        raise NotImplementedError

    def conjugate(self, y, v):
        """Return ``(value, grad, hess)`` of the conjugate at ``v``."""
        raise NotImplementedError

    def domain(self, y):
        """Closed interval ``(lo, hi)`` of ``dom xi*_y`` in v-space."""
        raise NotImplementedError

    # -- generic machinery ----------------------------------------------
    def check_domain(self, y, v):
        lo, hi = self.domain(y)
        v = np.asarray(v)
        bad = (v < lo) | (v > hi)
        if np.any(bad):
            idx = np.flatnonzero(np.atleast_1d(bad))[0]
            vv = np.atleast_1d(v)[idx]
            lo_i = np.broadcast_to(lo, np.shape(np.atleast_1d(v)))[idx]
            hi_i = np.broadcast_to(hi, np.shape(np.atleast_1d(v)))[idx]
            raise ConjugateDomainError(
                f"{self.name}: v={vv!r} outside conjugate domain [{lo_i!r}, {hi_i!r}]"
            )

    def dual_box(self, y, lam) -> DualBox:
        """Interval of ``alpha`` such that ``-lam * alpha`` lies in the domain."""
        if not lam > 0:
            raise ValueError(f"lam must be positive, got {lam!r}")
        lo, hi = self.domain(y)
        with np.errstate(invalid="ignore"):
            lower = -np.asarray(hi, dtype=float) / lam + 0.0
            upper = -np.asarray(lo, dtype=float) / lam + 0.0
        shape = np.shape(y)
        return DualBox(np.broadcast_to(lower, shape).copy(), np.broadcast_to(upper, shape).copy())

    def solver_box(self, y, lam, dtype=np.float64) -> DualBox:
        """Box actually enforced by the solver (safeguarded where needed)."""
        box = self.dual_box(y, lam)
        return DualBox(box.lower.astype(dtype), box.upper.astype(dtype))

    def block(self, y, lam, alpha):
        """Value, gradient and diagonal Hessian of the block dual penalty."""
        alpha = np.asarray(alpha)
        v = -lam * alpha
        value, grad, hess = self.conjugate(y, v)
        return np.sum(value) / lam, -grad, lam * hess

    def local_model(self, y, lam, alpha, kernel_grad, lower, upper):
        """Gradient, Hessian diagonal and step box of the trust-region model."""
        _, grad, hess = self.block(y, lam, alpha)
        return kernel_grad + grad, hess, lower, upper

    def init_alpha(self, y, lam, dtype=np.float64):
        return np.zeros(np.shape(y), dtype=dtype)


class SquareLoss(Loss):
    name = "square"

    def primal(self, y, u):
        return 0.5 * (np.asarray(y) - np.asarray(u)) ** 2

    def conjugate(self, y, v):
        v = np.asarray(v)
        return 0.5 * v * v + v * y, v + y, np.ones_like(v)

    def domain(self, y):
        return -np.inf, np.inf


class LpLoss(Loss):
    """``|y - u|^p / p`` for ``p > 1``; conjugate exponent ``q = p / (p - 1)``."""

    name = "lp"

    def __init__(self, p=3.0):
        p = float(p)
        if not p > 1:
            raise ValueError(f"Lp loss requires p > 1, got {p!r}")
        self.p = p
        self.q = p / (p - 1.0)

    def params(self):
        return {"p": self.p}

    def primal(self, y, u):
        return np.abs(np.asarray(y) - np.asarray(u)) ** self.p / self.p

    def conjugate(self, y, v):
        v = np.asarray(v)
        q = self.q
        av = np.abs(v)
        with np.errstate(divide="ignore"):
            hess = (q - 1.0) * av ** (q - 2.0)
        return av**q / q + v * y, np.sign(v) * av ** (q - 1.0) + y, hess

    def domain(self, y):
        return -np.inf, np.inf

    def block(self, y, lam, alpha):
        value, grad, hess = super().block(y, lam, alpha)
        if self.q < 2:
            # same clamp as the logistic safeguard; |v|^(q-2) blows up at 0
            cap = klr_epsilon(lam, np.asarray(alpha).dtype) ** -0.5
            hess = np.minimum(hess, cap)
        return value, grad, hess


class AbsoluteLoss(Loss):
    name = "l1"
    piecewise_linear = True

    def primal(self, y, u):
        return np.abs(np.asarray(y) - np.asarray(u))

    def conjugate(self, y, v):
        v = np.asarray(v)
        return v * y, np.broadcast_to(y, v.shape) + 0.0 * v, np.zeros_like(v)

    def domain(self, y):
        return -1.0, 1.0


class HuberLoss(Loss):
    name = "huber"

    def __init__(self, delta=1.0):
        delta = float(delta)
        if not delta > 0:
            raise ValueError(f"Huber loss requires delta > 0, got {delta!r}")
        self.delta = delta

    def params(self):
        return {"delta": self.delta}

    def primal(self, y, u):
        r = np.abs(np.asarray(y) - np.asarray(u))
        d = self.delta
        return np.where(r <= d, 0.5 * r * r, d * r - 0.5 * d * d)

    def conjugate(self, y, v):
        v = np.asarray(v)
        return 0.5 * v * v + v * y, v + y, np.ones_like(v)

    def domain(self, y):
        return -self.delta, self.delta


class EpsilonInsensitiveLoss(Loss):
    """SVR loss ``max(0, |y - u| - epsilon)``."""

    name = "svr"
    piecewise_linear = True

    def __init__(self, epsilon=0.25):
        epsilon = float(epsilon)
        if not epsilon >= 0:
            raise ValueError(f"SVR requires epsilon >= 0, got {epsilon!r}")
        self.epsilon = epsilon

    def params(self):
        return {"epsilon": self.epsilon}

    def primal(self, y, u):
        return np.maximum(0.0, np.abs(np.asarray(y) - np.asarray(u)) - self.epsilon)

    def conjugate(self, y, v):
        v = np.asarray(v)
        eps = self.epsilon
        return eps * np.abs(v) + v * y, eps * _sign0(v) + y, np.zeros_like(v)

    def domain(self, y):
        return -1.0, 1.0

    def local_model(self, y, lam, alpha, kernel_grad, lower, upper):
        # Linearize eps*|alpha| around the current sign and keep every
        # coordinate inside its current orthant, so the model is exact there.
        g = svr_linearized_gradient(alpha, kernel_grad, y, self.epsilon)
        zero = alpha == 0
        lower = lower.copy()
        upper = upper.copy()
        lower[alpha > 0] = np.maximum(lower[alpha > 0], 0)
        upper[alpha < 0] = np.minimum(upper[alpha < 0], 0)
        if np.any(zero):
            base = (kernel_grad - y)[zero]
            # minimum-norm subgradient: a zero multiplier moves only if the
            # smooth part beats the insensitivity penalty
            gz = np.sign(base) * np.maximum(np.abs(base) - self.epsilon, 0)
            g[zero] = gz
            lz, uz = lower[zero], upper[zero]
            uz = np.where(gz >= 0, 0, uz)
            lz = np.where(gz <= 0, 0, lz)
            lower[zero], upper[zero] = lz, uz
        return g, np.zeros_like(alpha), lower, upper


class HingeLoss(Loss):
    name = "hinge"
    classification = True
    piecewise_linear = True

    def primal(self, y, u):
        return np.maximum(0.0, 1.0 - np.asarray(y) * np.asarray(u))

    def conjugate(self, y, v):
        v = np.asarray(v)
        return v * y, np.broadcast_to(y, v.shape) + 0.0 * v, np.zeros_like(v)

    def domain(self, y):
        # -1 <= v*y <= 0 with y in {-1, +1}
        y = np.asarray(y, dtype=float)
        return np.minimum(-y, 0.0), np.maximum(-y, 0.0)


class SquaredHingeLoss(Loss):
    name = "squared_hinge"
    classification = True

    def primal(self, y, u):
        return 0.5 * np.maximum(0.0, 1.0 - np.asarray(y) * np.asarray(u)) ** 2

    def conjugate(self, y, v):
        v = np.asarray(v)
        return 0.5 * v * v + v * y, v + y, np.ones_like(v)

    def domain(self, y):
        # v*y <= 0
        y = np.asarray(y, dtype=float)
        return np.where(y > 0, -np.inf, 0.0), np.where(y > 0, 0.0, np.inf)


class LogisticLoss(Loss):
    """Logistic loss; its conjugate is the binary entropy of ``-v*y``."""

    name = "logistic"
    classification = True

    def primal(self, y, u):
        return np.logaddexp(0.0, -np.asarray(y) * np.asarray(u))

    def conjugate(self, y, v):
        v = np.asarray(v)
        a = -v * y
        b = 1.0 - a
        value = xlogy(a, a) + xlogy(b, b)
        with np.errstate(divide="ignore"):
            grad = -y * (np.log(a) - np.log(b))
            hess = 1.0 / (a * b)
        return value, grad, hess

    def domain(self, y):
        y = np.asarray(y, dtype=float)
        return np.minimum(-y, 0.0), np.maximum(-y, 0.0)

    def solver_box(self, y, lam, dtype=np.float64):
        return klr_safeguarded_eval(y, lam, np.zeros(np.shape(y), dtype=dtype))[3]

    def block(self, y, lam, alpha):
        value, grad, hess, _ = klr_safeguarded_eval(y, lam, alpha)
        return value, grad, hess

    def init_alpha(self, y, lam, dtype=np.float64):
        dtype = np.dtype(dtype).type
        start = min(dtype(1e-3) / dtype(lam), dtype(0.5) / dtype(lam))
        return (np.asarray(y, dtype=dtype) * start).astype(dtype)


_REGISTRY = {
    "square": SquareLoss,
    "krr": SquareLoss,
    "lp": LpLoss,
    "l1": AbsoluteLoss,
    "absolute": AbsoluteLoss,
    "huber": HuberLoss,
    "svr": EpsilonInsensitiveLoss,
    "hinge": HingeLoss,
    "l1svc": HingeLoss,
    "squared_hinge": SquaredHingeLoss,
    "l2svc": SquaredHingeLoss,
    "logistic": LogisticLoss,
    "klr": LogisticLoss,
}

LOSS_NAMES = ("square", "lp", "l1", "huber", "svr", "hinge", "squared_hinge", "logistic")


def make_loss(name, **params) -> Loss:
    """Build a loss by name; unknown hyperparameters for that loss are ignored.

    >>> make_loss("huber", delta=2.0)
    HuberLoss(delta=2.0)
    """
    if isinstance(name, Loss):
        return name
    try:
        cls = _REGISTRY[name.lower()]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {LOSS_NAMES}") from None
    wanted = {"lp": "p", "huber": "delta", "svr": "epsilon"}.get(cls.name)
    if wanted is not None and params.get(wanted) is not None:
        return cls(params[wanted])
    return cls()


# -- functional surface ---------------------------------------------------


def primal_loss(kind, y, u):
    return make_loss(kind).primal(y, u)


def conjugate_eval(kind, y, v):
    """Conjugate ``(value, grad, hess)``; raises outside the domain."""
    loss = make_loss(kind)
    loss.check_domain(y, v)
    return loss.conjugate(y, v)


def dual_box(kind, y, lam) -> DualBox:
    return make_loss(kind).dual_box(y, lam)


def f_block(kind, y_B, lam, alpha_B):
    return make_loss(kind).block(np.asarray(y_B, dtype=float), lam, np.asarray(alpha_B))


def klr_safeguarded_eval(y_B, lam, alpha_B):
    """Logistic block penalty with the boundary safeguards.

    Works in ``a = y * alpha``.  The box is shrunk to ``[eps, 1/lam - eps]``
    with ``eps`` the spacing just below ``1/lam`` at the working precision,
    and the Hessian diagonal is capped at ``eps**-0.5``.

    Returns
    -------
    value : float
    grad, hess : ndarray
    box : DualBox
        Safeguarded bounds in alpha-space.
    """
    alpha_B = np.asarray(alpha_B)
    dtype = alpha_B.dtype if alpha_B.dtype.kind == "f" else np.dtype(np.float64)
    ftype = dtype.type
    y = np.asarray(y_B).astype(dtype)
    lam_ = ftype(lam)
    inv = ftype(1) / lam_
    eps = klr_epsilon(lam, dtype)
    a = y * alpha_B
    rest = inv - a
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.sum(xlogy(a, lam_ * a) + xlogy(rest, lam_ * rest))
        grad = y * (np.log(a) - np.log(rest))
        hess = inv / (a * rest)
    hess = np.minimum(hess, eps ** ftype(-0.5))
    lo_a, hi_a = eps, inv - eps
    lower = np.where(y > 0, lo_a, -hi_a).astype(dtype)
    upper = np.where(y > 0, hi_a, -lo_a).astype(dtype)
    return float(value), grad.astype(dtype), hess.astype(dtype), DualBox(lower, upper)


def svr_linearized_gradient(alpha_B, kernel_grad, y_B, eps_ins):
    """``K_{B,:} alpha - y_B + eps * sign(alpha_B)`` with ``sign(0) = 0``."""
    alpha_B = np.asarray(alpha_B)
    return np.asarray(kernel_grad) - np.asarray(y_B) + eps_ins * _sign0(alpha_B)
