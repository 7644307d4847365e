"""Input checks shared by the estimators and the functional API."""
import numpy as np
from sklearn.utils.validation import check_array


class InsufficientDataError(ValueError):
    """Raised when a sample is too short for the requested statistic."""


def check_adjacency(A, allow_empty=False):
    """Return ``A`` as a validated binary int8 matrix (securities x firms)."""
    A = check_array(A, dtype=None, ensure_2d=True, ensure_min_samples=0,
                    ensure_min_features=0)
    if A.size and not np.isin(A, (0, 1)).all():
        raise ValueError("adjacency must be binary (0/1 entries only)")
    if A.size == 0 and not allow_empty:
        raise ValueError("adjacency is empty")
    return A.astype(np.int8, copy=False)


def check_link_prob(P):
    P = check_array(P, dtype=np.float64, ensure_min_samples=0,
                    ensure_min_features=0)
    if P.size and ((P < 0).any() or (P > 1).any()):
        raise ValueError("link probabilities must lie in [0, 1]")
    return P


def check_series(x, min_length=1, name="series"):
    """1-D finite float array with at least ``min_length`` entries."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    if x.size < min_length:
        raise InsufficientDataError(
            f"{name} has {x.size} observations, need at least {min_length}")
    return x


def check_fraction(value, name, low=0.0, high=1.0, inclusive=False):
    ok = low <= value <= high if inclusive else low < value < high
    if not ok:
        bounds = "[]" if inclusive else "()"
        raise ValueError(
            f"{name}={value!r} outside {bounds[0]}{low}, {high}{bounds[1]}")
    return float(value)
