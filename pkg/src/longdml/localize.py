"""Kernel localization weights for heterogeneous (local) parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, LocalConfig
from .errors import ConfigurationError, EmptyWindowError, SchemaError


def kernel_values(u: np.ndarray, kernel: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if kernel == "gaussian":
        return np.exp(-0.5 * u * u)
    if kernel == "epanechnikov":
        return 0.75 * np.clip(1.0 - u * u, 0.0, None)
    raise ConfigurationError(f"unknown localization kernel {kernel!r}")


@dataclass(frozen=True)
class Localizer:
    kernel: str
    h: float
    v: float
    omega_hat: float

    def weights(self, values) -> np.ndarray:
        u = (np.asarray(values, dtype=float) - self.v) / self.h
        return kernel_values(u, self.kernel) / self.omega_hat

    @classmethod
    def fit(cls, values, kernel: str, h: float, v: float) -> "Localizer":
        if not h > 0:
            raise ConfigurationError("bandwidth h must be positive")
        values = np.asarray(values, dtype=float)
        k = kernel_values((values - v) / h, kernel)
        omega = float(k.mean()) if k.size else 0.0
        if not omega > 0:
            raise EmptyWindowError(f"no observation of v falls inside the window around {v} (h={h})")
        return cls(kernel, float(h), float(v), omega)


def localizer_weights(data: Dataset, cfg: LocalConfig) -> np.ndarray:
    """Weights ``K((V - v)/h) / mean_i K((V_i - v)/h)``; their mean is one."""
    if not cfg.active:
        raise ConfigurationError("localization needs both h and v")
    if not data.has("v"):
        raise SchemaError("localization requires a 'v' column")
    vals = data.col("v")
    return Localizer.fit(vals, cfg.kernel, cfg.h, cfg.v).weights(vals)


def indicator_weights(mask) -> np.ndarray:
    """Discrete localization ``1{G=g} / P_n(G=g)``."""
    mask = np.asarray(mask, dtype=bool)
    share = mask.mean() if mask.size else 0.0
    if not share > 0:
        raise EmptyWindowError("the selected subpopulation is empty")
    return mask / share
