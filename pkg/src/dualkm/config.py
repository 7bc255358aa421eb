"""Run configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .kernels import KERNEL_FAMILIES
from .losses import LOSS_NAMES, make_loss
from .solver import TrustRegionConfig, default_block_size

__all__ = ["RunConfig", "parse_config", "load_config", "dump_config", "LAMBDA_GRID", "PRECISIONS"]

LAMBDA_GRID = tuple(2.0**i for i in range(-7, 8))

PRECISIONS = {"double": np.float64, "single": np.float32}


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one training run.

    ``sigma`` is a positive float or the string ``"median"``.
    ``block_size=None`` means 512, or 1024 for the logistic loss.
    """

    loss: str = "square"
    delta: float = 1.0
    epsilon: float = 0.25
    p: float = 3.0
    lam: float = 1.0
    mode: str = "exact"
    kernel: str = "gaussian"
    sigma: Union[float, str] = "median"
    n_components: int = 4096
    block_size: Optional[int] = None
    n_iter: int = 1000
    delta_max: float = 1.0
    eta: float = 0.1
    tr_tol: float = 1e-5
    max_tr_iter: int = 50
    max_cg_iter: int = 10
    literal_box_break: bool = False
    svr_delta_max: Optional[float] = None
    seed_partition: int = 0
    seed_rff: int = 0
    seed_split: int = 0
    seed_median: int = 0
    precision: str = "double"
    normalize: bool = True
    median_subsample: int = 2000
    chunk: int = 2048
    log_every: int = 100
    primal_eval: str = "subsample"
    primal_subsample: int = 4096
    val_rows: int = 10000

    def __post_init__(self):
        if self.loss.lower() not in LOSS_NAMES and self.loss.lower() not in ("krr", "klr", "l1svc", "l2svc", "absolute"):
            raise ValueError(f"unknown loss {self.loss!r}")
        self.make_loss()  # validates delta / epsilon / p
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam!r}")
        if self.mode not in ("exact", "inexact"):
            raise ValueError(f"mode must be 'exact' or 'inexact', got {self.mode!r}")
        if self.kernel not in KERNEL_FAMILIES:
            raise ValueError(f"kernel must be one of {KERNEL_FAMILIES}, got {self.kernel!r}")
        if isinstance(self.sigma, str):
            if self.sigma != "median":
                raise ValueError(f"sigma must be positive or 'median', got {self.sigma!r}")
        elif not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if self.n_components < 1:
            raise ValueError("n_components must be at least 1")
        if self.block_size is not None and self.block_size < 1:
            raise ValueError("block_size must be at least 1")
        if self.n_iter < 0:
            raise ValueError("n_iter must be non-negative")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.primal_eval not in ("off", "subsample", "full"):
            raise ValueError("primal_eval must be off, subsample or full")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")
        self.trust_region()

    def make_loss(self):
        return make_loss(self.loss, delta=self.delta, epsilon=self.epsilon, p=self.p)

    def trust_region(self) -> TrustRegionConfig:
        return TrustRegionConfig(
            delta_max=self.delta_max,
            eta=self.eta,
            tol=self.tr_tol,
            max_tr_iter=self.max_tr_iter,
            max_cg_iter=self.max_cg_iter,
            literal_box_break=self.literal_box_break,
            svr_delta_max=self.svr_delta_max,
        )

    @property
    def dtype(self):
        return np.dtype(PRECISIONS[self.precision])

    @property
    def effective_block_size(self) -> int:
        return self.block_size or default_block_size(self.make_loss())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name, raw: str):
    ftypes = {f.name: f.type for f in fields(RunConfig)}
    if name not in ftypes:
        raise ValueError(f"unknown config key {name!r}")
    ftype = str(ftypes[name])
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        if "Optional" in ftype:
            return None
        raise ValueError(f"config key {name!r} needs a value")
    if "bool" in ftype:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {name!r}: not a boolean: {raw!r}")
    if name == "sigma":
        return raw if raw == "median" else float(raw)
    if "int" in ftype:
        return int(raw)
    if "float" in ftype:
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from None
    return out


def load_config(path, **overrides) -> RunConfig:
    values = parse_config(Path(path).read_text()) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def dump_config(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"
