"""Bottom-layer inference for the normalized Poisson mixture.

Given a normalized observation y (sum_d y_d = A, y_d >= 1) and positive rate
rows W_c (sum_d W_cd = A), the cluster log joint is

    log p(c, y) = -log C + sum_d [ y_d log W_cd - W_cd - lgamma(y_d + 1) ]

Because the -sum_d W_cd and -sum_d lgamma(y_d + 1) terms are constant across
clusters, ranking clusters by log joint is the same as ranking them by the
linear activation I_c = sum_d log(W_cd) * y_d.  Truncated inference keeps the
C' largest activations and renormalizes the posterior on that support.

All functions here are pure and operate on the last axis, so a single call
handles one observation or a whole batch.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import BottomWeights, DataError, PROB_TOL


def _weights_array(W) -> np.ndarray:
    return W.W if isinstance(W, BottomWeights) else np.asarray(W, dtype=np.float64)


def normalize_input(raw, A: float) -> np.ndarray:
    """Rescale nonnegative raw intensities to a fixed mass A.

    y_d = (A - D) * raw_d / sum(raw) + 1, applied along the last axis.  The
    output sums to A and every component is >= 1, which keeps Poisson rates
    learned from such data strictly positive.
    """
    raw = np.asarray(raw, dtype=np.float64)
    D = raw.shape[-1]
    if A <= D:
        raise DataError("A must exceed D")
    if np.any(raw < 0.0):
        raise DataError("raw input has negative components")
    total = raw.sum(axis=-1, keepdims=True)
    bad = total <= 0.0
    if np.any(bad):
        if raw.ndim == 1:
            raise DataError("degenerate input: zero total mass")
        first = int(np.nonzero(bad.ravel())[0][0])
        raise DataError(f"degenerate input: zero total mass at index {first}")
    return (A - D) * raw / total + 1.0


def integrate(W, y) -> np.ndarray:
    """Log-domain input integration: I_c = sum_d log(W_cd) * y_d.

    ``y`` may be a single D-vector or an (N, D) batch; returns (C,) or (N, C).
    """
    Wm = _weights_array(W)
    with np.errstate(divide="ignore"):
        I = np.asarray(y, dtype=np.float64) @ np.log(Wm).T
    if not np.all(np.isfinite(I)):
        raise DataError("non-finite log activation (W must be positive, y finite)")
    return I


def select_truncation(I, c_prime: int) -> np.ndarray:
    """Indices of the ``c_prime`` largest entries along the last axis.

    Ties are broken toward the smaller index, so the result is a
    deterministic function of the input.  Uses a linear-time partial
    selection rather than a full sort; the returned indices are ascending.
    Output shape is I.shape[:-1] + (c_prime,).
    """
    I = np.asarray(I)
    C = I.shape[-1]
    if not 1 <= c_prime <= C:
        raise ValueError(f"c_prime must lie in [1, {C}], got {c_prime}")
    if c_prime == C:
        idx = np.arange(C)
        if I.ndim == 1:
            return idx
        return np.broadcast_to(idx, I.shape).copy()
    part = np.argpartition(-I, c_prime - 1, axis=-1)[..., :c_prime]
    # Threshold = value of the c_prime-th largest entry.  Everything strictly
    # above it is kept; remaining slots are filled with the smallest-index
    # entries equal to it.
    thresh = np.take_along_axis(I, part, axis=-1).min(axis=-1, keepdims=True)
    above = I > thresh
    at = I == thresh
    need = c_prime - above.sum(axis=-1, keepdims=True)
    keep = above | (at & (np.cumsum(at, axis=-1) <= need))
    idx = np.nonzero(keep)[-1]
    return idx.reshape(I.shape[:-1] + (c_prime,))


def _softmax_last(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=-1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=-1, keepdims=True)
    return p


@dataclass(frozen=True)
class TruncatedPosterior:
    """Sparse cluster posterior: probabilities on an explicit index support.

    Entries outside ``support`` are exactly zero.  ``probs`` sums to one;
    individual entries may underflow to 0.0 when activation gaps within the
    support exceed the float64 exponent range.
    """

    support: np.ndarray  # distinct cluster indices
    probs: np.ndarray    # aligned probabilities

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.intp)
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if support.ndim != 1 or probs.shape != support.shape:
            raise ValueError("support and probs must be aligned 1-D arrays")
        if len(np.unique(support)) != support.size:
            raise ValueError("support indices must be distinct")
        if np.any(probs < 0.0):
            raise ValueError("posterior probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"posterior sums to {probs.sum()!r}, expected 1")

    def dense(self, C: int) -> np.ndarray:
        out = np.zeros(C)
        out[self.support] = self.probs
        return out


def truncated_posterior(I, support) -> TruncatedPosterior:
    """Softmax of ``I`` restricted to ``support``, in the log domain."""
    I = np.asarray(I, dtype=np.float64)
    support = np.asarray(support, dtype=np.intp)
    if np.any(support < 0) or np.any(support >= I.shape[-1]):
        raise ValueError("support indices out of range")
    return TruncatedPosterior(support, _softmax_last(I[support]))


def full_posterior(I) -> np.ndarray:
    """Dense softmax over all clusters; the untruncated limit."""
    return _softmax_last(np.asarray(I, dtype=np.float64))


def log_joint(W_row, y, C: int) -> float:
    """log p(c, y) for one cluster row under a uniform 1/C cluster prior.

    Normalized inputs are real-valued, so the Poisson mass function is
    evaluated through its continuous extension: log(y!) -> lgamma(y + 1).
    """
    W_row = np.asarray(W_row, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(
        -np.log(C)
        + np.dot(y, np.log(W_row))
        - W_row.sum()
        - gammaln(y + 1.0).sum()
    )


def log_joint_matrix(W, Y, lgamma_sums=None) -> np.ndarray:
    """(N, C) matrix of log joints for a batch of observations.

    ``lgamma_sums`` may carry precomputed sum_d lgamma(y_d + 1) per row to
    avoid recomputing it on every call.
    """
    Wm = _weights_array(W)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if lgamma_sums is None:
        lgamma_sums = gammaln(Y + 1.0).sum(axis=1)
    I = integrate(Wm, Y)
    return I - Wm.sum(axis=1)[None, :] - np.asarray(lgamma_sums)[:, None] - np.log(Wm.shape[0])
