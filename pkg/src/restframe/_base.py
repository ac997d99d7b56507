"""Shared error types, validation helpers and a small estimator base class."""
from __future__ import annotations

import inspect
from typing import Any

import numpy as np


class RestFrameError(Exception):
    """Base class for all library errors."""


class ValidationError(RestFrameError, ValueError):
    """Invalid input or inconsistent configuration."""


class NumericError(RestFrameError, ArithmeticError):
    """A numerical procedure failed (non-convergence, lost precision, ...)."""


class ModelDomainError(NumericError):
    """An energy radicand left the physical domain."""


class BandwidthError(NumericError):
    """A kernel estimator found too few samples near the energy shell."""


class NotFittedError(RestFrameError, AttributeError):
    """An estimator was used before ``fit``."""


def as_vector3(x: Any, name: str = "vector") -> np.ndarray:
    """Return ``x`` as a finite float array of shape (3,)."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def as_particles(x: Any, name: str = "array", n: int | None = None) -> np.ndarray:
    """Return ``x`` as a finite float array of shape (N, 3)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (N, 3), got {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValidationError(f"{name} must hold {n} particles, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValidationError(f"{name} must be positive and finite, got {value}")
    return value


def frozen(arr: np.ndarray) -> np.ndarray:
    """Copy ``arr`` and mark the copy read-only."""
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


class BaseEstimator:
    """Parameter plumbing in the scikit-learn style.

    Subclasses declare every hyper-parameter as an explicit keyword of
    ``__init__`` and store it under the same attribute name.  Fitted
    state lives in attributes with a trailing underscore.
    """

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [
            p.name
            for p in sig.parameters.values()
            if p.name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep: bool = True) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params: Any) -> "BaseEstimator":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValidationError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def _check_is_fitted(self, attr: str) -> None:
        if not hasattr(self, attr):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"
