"""Input-validation helpers used by the estimator-style classes and the
functional API. Each helper raises the matching error from
:mod:`raypaint.errors` so callers never need their own message formatting.
"""

import numpy as np

from .errors import ConfigurationError, ContractViolation, NotFittedError


def check_positive(value, name):
    if not value > 0:
        raise ConfigurationError(f"{name} must be > 0, got {value!r}")
    return value


def check_nonnegative(value, name):
    if value < 0:
        raise ConfigurationError(f"{name} must be >= 0, got {value!r}")
    return value


def check_unit(d, tol=1e-6):
    """Validate unit-length direction vectors, shape (..., 3)."""
    d = np.asarray(d)
    norms = np.linalg.norm(d, axis=-1)
    err = np.max(np.abs(norms - 1.0)) if norms.size else 0.0
    if err > tol:
        raise ContractViolation(f"directions must be unit length (max |norm-1| = {err:.3g})")
    return d


def check_shape(arr, shape, name):
    arr = np.asarray(arr)
    if arr.ndim != len(shape) or any(s is not None and a != s for a, s in zip(arr.shape, shape)):
        raise ContractViolation(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def check_same_shape(a, b, name_a, name_b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolation(f"{name_a} shape {a.shape} != {name_b} shape {b.shape}")
    return a, b


def check_rect(rect, height, width):
    """Normalize an inclusive-exclusive (row0, col0, row1, col1) rectangle."""
    r0, c0, r1, c1 = (int(v) for v in rect)
    if not (0 <= r0 < r1 <= height and 0 <= c0 < c1 <= width):
        raise ContractViolation(
            f"rect {rect} empty or outside {height}x{width} image bounds"
        )
    return r0, c0, r1, c1


def check_fitted(estimator, attribute):
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() before using it"
        )
