"""Trained predictors, primal/dual objectives and the model file format.

Objectives follow the scaled primal

    P(theta) = ||theta||^2 / 2 + sum_i loss(y_i, <theta, phi(x_i)>) / lam

and the dual ``D(alpha) = alpha'K alpha / 2 + sum_i xi*(-lam alpha_i) / lam``
(minimization form).  Logs and reports use the maximization form ``-D`` so
that weak duality reads ``P >= -D`` and the gap is ``P + D``.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .config import RunConfig
from .data import ZScoreStats, encode_binary_labels, zscore_apply, zscore_fit
from .kernels import KernelSpec, RffMap, kernel_matvec, median_heuristic, rff_map, rff_sample
from .losses import Loss, make_loss
from .solver import DualState, dbcd_train, partition_blocks

logger = logging.getLogger(__name__)

__all__ = [
    "ModelFormatError",
    "DualProblem",
    "TrainedModel",
    "OvrModel",
    "Prepared",
    "prepare",
    "predict_raw",
    "predict_label",
    "predict_proba",
    "train",
    "ovr_train",
    "ovr_predict",
    "save_model",
    "load_model",
    "read_model_header",
]


class ModelFormatError(ValueError):
    """Model file is truncated, corrupt or of an unsupported version."""


# -- objectives ----------------------------------------------------------------


class DualProblem:
    """Training data, loss and kernel access needed to score a dual point.

    ``kernel`` is a :class:`KernelSpec` (exact) or an :class:`RffMap`
    (inexact; objectives then use ``theta``).
    """

    def __init__(self, X, y, loss, lam, kernel, chunk=2048):
        self.X = X
        self.y = np.asarray(y)
        self.loss = make_loss(loss)
        self.lam = float(lam)
        self.kernel = kernel
        self.chunk = chunk

    @property
    def inexact(self) -> bool:
        return isinstance(self.kernel, RffMap)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def margins(self, alpha=None, theta=None, rows=None) -> np.ndarray:
        """``u_i = <theta, phi(x_i)>`` for the selected rows (all by default)."""
        XA = self.X if rows is None else self.X[rows]
        if self.inexact:
            out = np.empty(XA.shape[0], dtype=theta.dtype)
            for start in range(0, XA.shape[0], self.chunk):
                sl = slice(start, start + self.chunk)
                out[sl] = rff_map(self.kernel, XA[sl]).T @ theta
            return out
        return kernel_matvec(self.kernel, XA, self.X, alpha, chunk=self.chunk)

    def check_feasible(self, alpha):
        lower, upper = self.loss.dual_box(self.y, self.lam)
        alpha = np.asarray(alpha, dtype=np.float64)
        # bounds are compared with a few ulps of slack at the working precision
        ulp = 8 * np.finfo(np.asarray(alpha).dtype).eps
        slack_lo = ulp * np.maximum(1.0, np.abs(np.nan_to_num(lower, posinf=0.0, neginf=0.0)))
        slack_hi = ulp * np.maximum(1.0, np.abs(np.nan_to_num(upper, posinf=0.0, neginf=0.0)))
        bad = (alpha < lower - slack_lo) | (alpha > upper + slack_hi) | ~np.isfinite(alpha)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"infeasible alpha[{i}]={alpha[i]!r}, box [{lower[i]!r}, {upper[i]!r}]")

    def penalty(self, alpha, rows=None) -> float:
        """``sum_i xi*(-lam alpha_i) / lam`` over the selected rows."""
        if rows is None:
            return float(self.loss.block(self.y, self.lam, alpha)[0])
        return float(self.loss.block(self.y[rows], self.lam, alpha[rows])[0])

    def quadratic(self, alpha=None, theta=None) -> float:
        if self.inexact:
            theta = np.asarray(theta, dtype=np.float64)
            return 0.5 * float(theta @ theta)
        return 0.5 * float(np.asarray(alpha, dtype=np.float64) @ self.margins(alpha))

    def dual_objective(self, alpha, theta=None, maximize=False, check=True) -> float:
        if check:
            self.check_feasible(alpha)
        value = self.quadratic(alpha, theta) + self.penalty(alpha)
        return -value if maximize else value

    def primal_objective(self, alpha, theta=None) -> float:
        u = self.margins(alpha, theta)
        if self.inexact:
            quad = 0.5 * float(np.asarray(theta, dtype=np.float64) @ theta)
        else:
            quad = 0.5 * float(np.asarray(alpha, dtype=np.float64) @ u)
        return quad + float(np.sum(self.loss.primal(self.y, u))) / self.lam

    def gap_terms(self, alpha, theta=None, rows=None) -> float:
        """Sum over ``rows`` of the per-sample Fenchel-Young gaps, each >= 0.

        ``(loss(y_i, u_i) + xi*(-lam alpha_i) + lam alpha_i u_i) / lam``;
        summed over all rows this equals ``P + D`` exactly.
        """
        idx = np.arange(self.n) if rows is None else np.asarray(rows)
        u = self.margins(alpha, theta, rows=idx).astype(np.float64)
        a = np.asarray(alpha, dtype=np.float64)[idx]
        lossv = float(np.sum(self.loss.primal(self.y[idx], u))) / self.lam
        return lossv + self.penalty(alpha, idx) + float(a @ u)

    def evaluate(self, alpha, theta=None, policy="full", subsample=4096, seed=0, dual=None):
        """``(reported dual, primal, gap)`` under a primal evaluation policy.

        ``policy="full"`` evaluates everything exactly.  ``"subsample"``
        estimates the gap from a fixed uniform subsample of rows scaled by
        ``n / m``, which is unbiased and never negative, and reports
        ``primal = dual + gap``.  ``"off"`` returns ``None`` for both.
        ``dual`` may pass a tracked minimization-form value to skip the
        quadratic term.
        """
        if policy not in ("off", "subsample", "full"):
            raise ValueError(f"unknown primal evaluation policy {policy!r}")
        if policy == "full" or (policy == "subsample" and self.n <= subsample):
            u = self.margins(alpha, theta).astype(np.float64)
            quad = self.quadratic(alpha, theta) if self.inexact else 0.5 * float(np.asarray(alpha, np.float64) @ u)
            reported = -(quad + self.penalty(alpha))
            primal = quad + float(np.sum(self.loss.primal(self.y, u))) / self.lam
            return reported, primal, primal - reported
        if dual is None:
            dual = self.dual_objective(alpha, theta, check=False)
        reported = -float(dual)
        if policy == "off":
            return reported, None, None
        rows = np.sort(np.random.default_rng(seed).choice(self.n, size=subsample, replace=False))
        gap = max(self.gap_terms(alpha, theta, rows) * (self.n / subsample), 0.0)
        return reported, reported + gap, gap


# -- trained models --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A fitted binary classifier or regressor.

    Exact models keep ``coef = alpha`` with the normalized training inputs;
    inexact ones keep ``coef = theta`` with the sampled feature map.
    """

    loss: Loss
    lam: float
    kernel: KernelSpec
    coef: np.ndarray
    X_train: Optional[np.ndarray] = None
    y_train: Optional[np.ndarray] = None
    rff: Optional[RffMap] = None
    stats: Optional[ZScoreStats] = None
    classes: Optional[tuple] = None
    metadata: dict = field(default_factory=dict)
    chunk: int = 2048

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if (self.rff is None) == (self.X_train is None):
            raise ValueError("need exactly one of training inputs (exact) or a feature map (inexact)")

    @property
    def mode(self) -> str:
        return "exact" if self.rff is None else "inexact"

    @property
    def dtype(self):
        return self.coef.dtype

    @property
    def n_features(self) -> int:
        return self.rff.n_features if self.rff is not None else self.X_train.shape[1]

    def transform(self, X) -> np.ndarray:
        """Apply the stored normalization and cast to the working precision."""
        if not sp.issparse(X):
            X = np.asarray(X, dtype=np.float64)
            if X.ndim == 1:
                X = X.reshape(1, -1) if X.size else X.reshape(0, self.n_features)
        if X.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: model expects {self.n_features} features, got {X.shape[1]}")
        if self.stats is not None:
            return zscore_apply(self.stats, X, dtype=self.dtype)
        if sp.issparse(X):
            return sp.csr_matrix(X, dtype=self.dtype)
        return X.astype(self.dtype, copy=False)


def predict_raw(model: TrainedModel, X) -> np.ndarray:
    """Decision or regression values ``u(x)`` for each row of ``X``."""
    Xn = model.transform(X)
    if Xn.shape[0] == 0:
        return np.zeros(0, dtype=model.dtype)
    if model.rff is None:
        return kernel_matvec(model.kernel, Xn, model.X_train, model.coef, chunk=model.chunk, dtype=model.dtype)
    out = np.empty(Xn.shape[0], dtype=model.dtype)
    for start in range(0, Xn.shape[0], model.chunk):
        sl = slice(start, start + model.chunk)
        out[sl] = rff_map(model.rff, Xn[sl]).T @ model.coef
    return out


def _require_classifier(model):
    if not model.loss.classification:
        raise ValueError(f"{model.loss.name} is a regression loss; labels are undefined")


def predict_label(model, X) -> np.ndarray:
    """``sign(u)`` with ``sign(0) = +1``, mapped back to the original labels."""
    if isinstance(model, OvrModel):
        return ovr_predict(model, X)
    _require_classifier(model)
    pm = np.where(predict_raw(model, X) >= 0, 1.0, -1.0)
    if model.classes is None:
        return pm
    neg, pos = model.classes
    return np.where(pm > 0, pos, neg)


def predict_proba(model: TrainedModel, X) -> np.ndarray:
    """Probability of the positive class; logistic loss only."""
    if model.loss.name != "logistic":
        raise ValueError(f"probabilities need the logistic loss, model uses {model.loss.name}")
    return expit(predict_raw(model, X).astype(np.float64))


@dataclass(frozen=True, eq=False)
class OvrModel:
    """One-vs-rest composition; all members share normalization and kernel."""

    classes: tuple
    models: tuple

    def __post_init__(self):
        if len(self.classes) != len(self.models) or len(self.classes) < 2:
            raise ValueError("need one model per class and at least two classes")

    @property
    def loss(self):
        return self.models[0].loss

    @property
    def metadata(self):
        return self.models[0].metadata

    def decision_function(self, X) -> np.ndarray:
        return np.column_stack([predict_raw(m, X) for m in self.models])


def ovr_predict(model: OvrModel, X) -> np.ndarray:
    """Class with the largest raw score; ties go to the lowest class index."""
    scores = model.decision_function(X)
    return np.asarray(model.classes)[np.argmax(scores, axis=1)] if scores.shape[0] else np.zeros(0)


# -- training ------------------------------------------------------------------


class Prepared(NamedTuple):
    stats: Optional[ZScoreStats]
    X: object
    kernel: KernelSpec
    rff: Optional[RffMap]

    def transform(self, X, dtype):
        """Bring new rows into the same normalized space as the training data."""
        if self.stats is not None:
            return zscore_apply(self.stats, X, dtype=dtype)
        return sp.csr_matrix(X, dtype=dtype) if sp.issparse(X) else np.asarray(X, dtype=dtype)


def prepare(X, config: RunConfig) -> Prepared:
    """Normalize, resolve the bandwidth and sample the feature map."""
    if config.normalize:
        stats = zscore_fit(X)
        Xn = zscore_apply(stats, X, dtype=config.dtype)
    else:
        stats = None
        Xn = sp.csr_matrix(X, dtype=config.dtype) if sp.issparse(X) else np.asarray(X, dtype=config.dtype)
    if config.sigma == "median":
        sigma = median_heuristic(Xn, config.median_subsample, config.seed_median, config.kernel)
    else:
        sigma = float(config.sigma)
    spec = KernelSpec(config.kernel, sigma)
    rff = None
    if config.mode == "inexact":
        rff = rff_sample(spec, config.n_components, Xn.shape[1], config.seed_rff, config.dtype)
    return Prepared(stats, Xn, spec, rff)


def _metadata(config: RunConfig, spec: KernelSpec, state: DualState, gap, n_train, n_features):
    return {
        "config": asdict(config),
        "sigma": float(spec.sigma),
        "iterations": int(state.iteration),
        "duality_gap": None if gap is None else float(gap),
        "dual_objective": float(state.dual_objective),
        "n_train": int(n_train),
        "n_features": int(n_features),
    }


def _fit_one(Xn, y_pm, loss, config, spec, rff, callback, chunk):
    problem = DualProblem(Xn, y_pm.astype(config.dtype), loss, config.lam, rff or spec, chunk)
    partition = partition_blocks(problem.n, config.effective_block_size, config.seed_partition)
    cb = None if callback is None else (lambda st: callback(problem, st))
    state = dbcd_train(
        Xn,
        problem.y,
        loss,
        config.lam,
        rff or spec,
        partition,
        config.trust_region(),
        config.n_iter,
        seed=config.seed_partition,
        dtype=config.dtype,
        chunk=chunk,
        callback=cb,
        callback_every=config.log_every,
    )
    if callback is not None and state.iteration % config.log_every:
        callback(problem, state)
    _, _, gap = problem.evaluate(
        state.alpha,
        state.theta,
        config.primal_eval,
        config.primal_subsample,
        seed=config.seed_partition,
        dual=state.objective,
    )
    return problem, state, gap


def train(
    X, y, config: RunConfig | None = None, callback: Callable | None = None, prepared: Prepared | None = None
) -> TrainedModel:
    """Fit one binary classifier or regressor.

    ``callback(problem, state)`` runs every ``config.log_every`` outer
    iterations and once more after the last one.  Two-valued labels for a
    classification loss are mapped to ``{-1, +1}`` and restored at
    prediction time.  ``prepared`` reuses the output of :func:`prepare`
    computed on the same ``X``.
    """
    config = config or RunConfig()
    loss = config.make_loss()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValueError(f"labels must be a vector of length {X.shape[0]}")
    if y.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    classes = None
    if loss.classification:
        if np.unique(y).size > 2:
            raise ValueError("more than two classes: use ovr_train")
        y_pm, classes = encode_binary_labels(y)
    else:
        y_pm = y
    stats, Xn, spec, rff = prepared or prepare(X, config)
    problem, state, gap = _fit_one(Xn, y_pm, loss, config, spec, rff, callback, config.chunk)
    return TrainedModel(
        loss=loss,
        lam=config.lam,
        kernel=spec,
        coef=state.alpha if rff is None else state.theta,
        X_train=Xn if rff is None else None,
        y_train=problem.y if rff is None else None,
        rff=rff,
        stats=stats,
        classes=classes,
        metadata=_metadata(config, spec, state, gap, Xn.shape[0], Xn.shape[1]),
        chunk=config.chunk,
    )


def ovr_train(
    X,
    y,
    config: RunConfig | None = None,
    callback: Callable | None = None,
    classes=None,
    prepared: Prepared | None = None,
) -> OvrModel:
    """Train one ``class c vs rest`` model per class.

    ``callback(c, problem, state)`` receives the class index.  Class models
    share normalization, bandwidth and the feature map, and each uses the
    same partition seed, so results do not depend on the training order.
    """
    config = config or RunConfig()
    loss = config.make_loss()
    if not loss.classification:
        raise ValueError(f"one-vs-rest needs a classification loss, got {loss.name}")
    y = np.asarray(y, dtype=np.float64)
    classes = tuple(float(c) for c in (np.unique(y) if classes is None else classes))
    if len(classes) < 2:
        raise ValueError("one-vs-rest needs at least two classes")
    for c in classes:
        if not np.any(y == c):
            raise ValueError(f"class {c:g} has no training samples")
    stats, Xn, spec, rff = prepared or prepare(X, config)
    models = []
    for k, c in enumerate(classes):
        y_pm = np.where(y == c, 1.0, -1.0)
        cb = None if callback is None else (lambda p, st, k=k: callback(k, p, st))
        problem, state, gap = _fit_one(Xn, y_pm, loss, config, spec, rff, cb, config.chunk)
        meta = _metadata(config, spec, state, gap, Xn.shape[0], Xn.shape[1])
        models.append(
            TrainedModel(
                loss=loss,
                lam=config.lam,
                kernel=spec,
                coef=state.alpha if rff is None else state.theta,
                X_train=Xn if rff is None else None,
                y_train=problem.y if rff is None else None,
                rff=rff,
                stats=stats,
                classes=None,
                metadata=meta,
                chunk=config.chunk,
            )
        )
    return OvrModel(classes, tuple(models))


# -- model files -------------------------------------------------------------------
#
# magic | u32 version | u64 header length | JSON header | raw arrays | sha256
#
# The header lists every array as (name, dtype, shape, offset, nbytes) with
# offsets relative to the end of the header.  Arrays are little-endian and
# C-ordered; the trailing digest covers every preceding byte.  Keys are
# sorted and no timestamps are written, so identical models give identical
# files.

MAGIC = b"DKMODEL\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def _collect(model):
    members = model.models if isinstance(model, OvrModel) else (model,)
    first = members[0]
    meta = {
        "format": "dualkm-model",
        "kind": "ovr" if isinstance(model, OvrModel) else ("binary" if first.loss.classification else "regression"),
        "loss": first.loss.name,
        "loss_params": first.loss.params(),
        "lam": float(first.lam),
        "mode": first.mode,
        "kernel": first.kernel.family,
        "sigma": float(first.kernel.sigma),
        "n_components": first.rff.n_components if first.rff is not None else None,
        "seed_rff": first.rff.seed if first.rff is not None else None,
        "precision": "single" if first.dtype == np.float32 else "double",
        "n_features": int(first.n_features),
        "normalized": first.stats is not None,
        "chunk": int(first.chunk),
        "classes": list(model.classes) if isinstance(model, OvrModel) else (list(first.classes) if first.classes else None),
        "members": [m.metadata for m in members],
    }
    arrays = {"coef": np.stack([m.coef for m in members]) if isinstance(model, OvrModel) else first.coef}
    if first.rff is None:
        arrays["X_train"] = first.X_train.toarray() if sp.issparse(first.X_train) else first.X_train
        if all(m.y_train is not None for m in members):
            arrays["y_train"] = np.stack([m.y_train for m in members]) if isinstance(model, OvrModel) else first.y_train
    else:
        arrays["W"] = first.rff.W
        arrays["b"] = first.rff.b
    if first.stats is not None:
        arrays["mean"] = first.stats.mean
        arrays["std"] = first.stats.std
    return meta, arrays


def save_model(path, model) -> None:
    """Write a :class:`TrainedModel` or :class:`OvrModel` to ``path``."""
    meta, arrays = _collect(model)
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = _le(arrays[name])
        raw = a.tobytes(order="C")
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": table}, sort_keys=True, separators=(",", ":")).encode()
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)) + header + b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def _read_prefix(fh, size):
    head = fh.read(_PREFIX.size)
    if len(head) < _PREFIX.size:
        raise ModelFormatError("truncated model file (incomplete preamble)")
    magic, version, hlen = _PREFIX.unpack(head)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    raw = fh.read(hlen)
    if len(raw) < hlen:
        raise ModelFormatError("truncated model file (incomplete header)")
    try:
        header = json.loads(raw)
    except ValueError:
        raise ModelFormatError("corrupt model header") from None
    data_len = sum(entry["nbytes"] for entry in header["arrays"])
    expected = _PREFIX.size + hlen + data_len + _DIGEST
    if size != expected:
        raise ModelFormatError(f"model file size {size} does not match the {expected} bytes its header declares")
    return header, _PREFIX.size + hlen


def read_model_header(path) -> dict:
    """Metadata of a model file without reading its arrays."""
    with open(path, "rb") as fh:
        fh.seek(0, 2)
        size = fh.tell()
        fh.seek(0)
        header, _ = _read_prefix(fh, size)
    return header["meta"]


def load_model(path):
    """Read a model file, verifying its digest."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, start = _read_prefix(io.BytesIO(blob), len(blob))
    if hashlib.sha256(blob[:-_DIGEST]).digest() != blob[-_DIGEST:]:
        raise ModelFormatError("model file checksum mismatch (corrupt file)")
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        if dtype.kind not in "fiu":
            raise ModelFormatError(f"unsupported array type {entry['dtype']!r} for {entry['name']!r}")
        a = np.frombuffer(blob, dtype=dtype, count=entry["nbytes"] // dtype.itemsize, offset=start + entry["offset"])
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return _assemble(header["meta"], arrays)


def _assemble(meta, arrays):
    loss = make_loss(meta["loss"], **meta["loss_params"])
    spec = KernelSpec(meta["kernel"], meta["sigma"])
    stats = ZScoreStats(arrays["mean"], arrays["std"]) if meta["normalized"] else None
    rff = None
    if meta["mode"] == "inexact":
        rff = RffMap(arrays["W"], arrays["b"], meta["kernel"], meta["sigma"], meta["seed_rff"])

    def member(k, coef, y_train, classes):
        return TrainedModel(
            loss=loss,
            lam=meta["lam"],
            kernel=spec,
            coef=coef,
            X_train=arrays.get("X_train"),
            y_train=y_train,
            rff=rff,
            stats=stats,
            classes=classes,
            metadata=meta["members"][k],
            chunk=meta["chunk"],
        )

    if meta["kind"] == "ovr":
        ys = arrays.get("y_train")
        models = tuple(
            member(k, arrays["coef"][k], None if ys is None else ys[k], None) for k in range(len(meta["classes"]))
        )
        return OvrModel(tuple(meta["classes"]), models)
    classes = tuple(meta["classes"]) if meta["classes"] else None
    return member(0, arrays["coef"], arrays.get("y_train"), classes)
