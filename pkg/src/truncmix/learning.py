"""Online Hebbian updates and batch truncated variational EM.

Two training regimes share the same inference path:

* ``online_epoch`` visits data points one at a time and nudges both weight
  layers with per-sample Hebbian steps.  Cheap, approximate, no monotonicity
  guarantee.
* ``run_tv_em`` alternates a truncation-set E-step with a closed-form M-step
  on the bottom layer.  Every E- and M-step provably increases the free
  energy

      F(sets, W) = sum_n log( sum_{c in set_n} p(c, y_n | W) ),

  which lower-bounds the data log-likelihood; the trace is machine-checked
  and a decrease beyond numerical slack raises MonotonicityError.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .classifier import bvsb, class_activation
from .core import BottomWeights, ModelConfig, MonotonicityError, TopWeights
from .data import Dataset, UNLABELED
from .inference import (
    TruncatedPosterior,
    integrate,
    log_joint_matrix,
    select_truncation,
    truncated_posterior,
)

MONOTONE_RSLACK = 1e-8


@dataclass
class FreeEnergyTrace:
    """Sequence of (iteration, free energy) pairs with increasing indices."""

    entries: list = field(default_factory=list)

    def append(self, iteration: int, value: float):
        if self.entries and iteration <= self.entries[-1][0]:
            raise ValueError("iteration indices must be strictly increasing")
        self.entries.append((int(iteration), float(value)))

    def iterations(self) -> np.ndarray:
        return np.array([i for i, _ in self.entries], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries], dtype=np.float64)

    def worst_relative_decrease(self) -> float:
        """Largest per-step drop, normalized by |previous value|; 0 if none."""
        v = self.values()
        if v.size < 2:
            return 0.0
        drops = (v[:-1] - v[1:]) / np.abs(v[:-1])
        return float(max(0.0, drops.max()))

    def assert_monotone(self, rel_slack: float = MONOTONE_RSLACK):
        v = self.values()
        for a, b, (it, _) in zip(v[:-1], v[1:], self.entries[1:]):
            if b < a - rel_slack * abs(a):
                raise MonotonicityError(
                    f"free energy fell from {a!r} to {b!r} at trace index {it}"
                )

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("iteration,free_energy\n")
            for it, v in self.entries:
                f.write(f"{it},{v!r}\n")


@dataclass
class SufficientStats:
    """Truncated-expectation accumulators for the bottom-layer M-step."""

    s_sum: np.ndarray   # (C,)  sum_n s_c
    sy_sum: np.ndarray  # (C, D) sum_n s_c * y_n

    @classmethod
    def accumulate(cls, Y, supports, probs, C: int) -> "SufficientStats":
        Y = np.asarray(Y, dtype=np.float64)
        S = np.zeros((Y.shape[0], C))
        np.put_along_axis(S, np.asarray(supports, dtype=np.intp), np.asarray(probs), axis=1)
        return cls(S.sum(axis=0), S.T @ Y)


def update_bottom(
    W: BottomWeights, s: TruncatedPosterior, y: np.ndarray, eps_W: float
) -> BottomWeights:
    """One Hebbian step on the bottom layer, in place.

    W_cd <- (1 - eps*s_c) W_cd + eps*s_c * y_d for the support rows only;
    rows outside the support are untouched.  Row sums are conserved because
    both y and every W row carry the same mass A.
    """
    probs = s.probs
    if eps_W * probs.max() > 1.0:
        raise ValueError("eps_W * max(s) must not exceed 1")
    w = W.W
    es = eps_W * probs
    rows = s.support
    if rows.size == w.shape[0] and np.array_equal(rows, np.arange(rows.size)):
        w *= (1.0 - es)[:, None]
        w += es[:, None] * y
    else:
        w[rows] *= (1.0 - es)[:, None]
        w[rows] += es[:, None] * y
    return W


def update_top(
    R: TopWeights, t: np.ndarray, s: TruncatedPosterior, eps_R: float
) -> TopWeights:
    """One Hebbian step on the top layer, in place.

    R_kc <- R_kc + eps*t_k*(s_c - R_kc).  The decay term is dense in c
    (zero s_c outside the support still shrinks R_kc); only the additive
    term is sparse.  Row sums are conserved since both s and R rows sum to 1.
    """
    t = np.asarray(t, dtype=np.float64)
    if eps_R * t.max() > 1.0:
        raise ValueError("eps_R * max(t) must not exceed 1")
    r = R.R
    et = eps_R * t
    r *= (1.0 - et)[:, None]
    rows = s.support
    bump = np.outer(et, s.probs)
    if rows.size == r.shape[1] and np.array_equal(rows, np.arange(rows.size)):
        r += bump
    else:
        r[:, rows] += bump
    return R


def free_energy(Y, W: BottomWeights, sets, lgamma_sums=None) -> float:
    """Truncated free energy: per point, log-sum-exp of the support joints."""
    sets = np.asarray(sets, dtype=np.intp)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if sets.ndim == 1:
        sets = sets[None, :]
    if sets.shape[0] != Y.shape[0]:
        raise ValueError("need one truncation set per data point")
    lj = log_joint_matrix(W, Y, lgamma_sums)
    picked = np.take_along_axis(lj, sets, axis=1)
    return float(logsumexp(picked, axis=1).sum())


def exact_log_likelihood(Y, W: BottomWeights, lgamma_sums=None) -> float:
    """Dense-marginalization log-likelihood; equals the free energy at full sets."""
    lj = log_joint_matrix(W, np.atleast_2d(Y), lgamma_sums)
    return float(logsumexp(lj, axis=1).sum())


def batch_e_step(Y, W: BottomWeights, c_prime: int) -> np.ndarray:
    """Per-point truncation sets holding the clusters of largest log joint.

    Returns an (N, c_prime) index matrix.  Among all equal-size supports this
    choice maximizes the free energy at fixed weights, because the log joint
    ranking equals the activation ranking for mass-normalized rows.
    """
    I = integrate(W, np.atleast_2d(np.asarray(Y, dtype=np.float64)))
    return select_truncation(I, c_prime)


def _as_posterior_matrices(posteriors) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(posteriors, tuple):
        supports, probs = posteriors
        return np.asarray(supports, dtype=np.intp), np.asarray(probs, dtype=np.float64)
    supports = np.stack([p.support for p in posteriors])
    probs = np.stack([p.probs for p in posteriors])
    return supports, probs


def batch_m_step(
    Y, posteriors, A: float, prev_W: BottomWeights
) -> tuple[BottomWeights, int]:
    """Closed-form bottom-layer M-step from truncated posteriors.

    W_cd = sum_n s_c y_d / sum_n s_c.  Rows that received zero total
    responsibility keep their previous values; their count is returned as a
    diagnostic.  ``posteriors`` is either a (supports, probs) matrix pair or
    a sequence of TruncatedPosterior.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    supports, probs = _as_posterior_matrices(posteriors)
    if not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
        raise ValueError("every posterior must sum to 1")
    stats = SufficientStats.accumulate(Y, supports, probs, prev_W.C)
    alive = stats.s_sum > 0.0
    W_new = prev_W.W.copy()
    W_new[alive] = stats.sy_sum[alive] / stats.s_sum[alive, None]
    return BottomWeights(W_new, A), int(np.sum(~alive))


def init_from_data(Y, n_clusters: int, A: float, rng: np.random.Generator) -> BottomWeights:
    """Greedy farthest-point initialization for batch EM.

    Picks one observation at random, then repeatedly adds the observation
    with the largest L1 distance to its nearest chosen row.  Rows are actual
    normalized observations, so they are positive and sum to A.  With
    well-separated data this covers every mixture component, which the
    near-symmetric noisy-mean init cannot guarantee.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if n_clusters > Y.shape[0]:
        raise ValueError("need at least one observation per cluster")
    chosen = [int(rng.integers(0, Y.shape[0]))]
    dist = np.abs(Y - Y[chosen[0]]).sum(axis=1)
    for _ in range(n_clusters - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.abs(Y - Y[nxt]).sum(axis=1))
    return BottomWeights(Y[chosen].copy(), A)


@dataclass(frozen=True)
class TvEmStep:
    """One E+M iteration: updated weights and the two free-energy readings."""

    weights: BottomWeights
    free_energy_after_e: float  # F(new sets, old weights)
    free_energy_after_m: float  # F(new sets, new weights)
    dead_clusters: int


def tv_em_iteration(
    Y, W: BottomWeights, c_prime: int, lgamma_sums=None
) -> TvEmStep:
    """One batch EM iteration: re-select sets, then refit the support rows."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if lgamma_sums is None:
        lgamma_sums = gammaln(Y + 1.0).sum(axis=1)
    I = integrate(W, Y)
    sets = select_truncation(I, c_prime)
    picked = np.take_along_axis(I, sets, axis=1)
    # Joints differ from activations only by terms constant across clusters
    # (row sums all equal A, lgamma term depends on the point alone).
    lj_picked = (
        picked
        - W.W.sum(axis=1)[sets]
        - np.asarray(lgamma_sums)[:, None]
        - np.log(W.C)
    )
    f_e = float(logsumexp(lj_picked, axis=1).sum())
    shifted = picked - picked.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    W_new, dead = batch_m_step(Y, (sets, probs), W.A, W)
    f_m = free_energy(Y, W_new, sets, lgamma_sums)
    return TvEmStep(W_new, f_e, f_m, dead)


def run_tv_em(
    Y,
    W: BottomWeights,
    c_prime: int,
    n_iter: int,
    lgamma_sums=None,
    rel_slack: float = MONOTONE_RSLACK,
    check_monotone: bool = True,
) -> tuple[BottomWeights, FreeEnergyTrace]:
    """Run batch EM for ``n_iter`` iterations with a machine-checked trace.

    The trace interleaves F(sets_t, W_{t-1}) and F(sets_t, W_t); both steps
    must increase F, so the whole sequence is checked for monotonicity and a
    violation raises MonotonicityError rather than passing silently.
    """
    trace = FreeEnergyTrace()
    for it in range(1, n_iter + 1):
        step = tv_em_iteration(Y, W, c_prime, lgamma_sums)
        W = step.weights
        trace.append(2 * it - 1, step.free_energy_after_e)
        trace.append(2 * it, step.free_energy_after_m)
        if check_monotone:
            trace.assert_monotone(rel_slack)
    return W, trace


@dataclass
class EpochStats:
    """Gate counts, write instrumentation, and phase timings for one epoch."""

    labeled_updates: int = 0
    unlabeled_passed: int = 0
    unlabeled_skipped: int = 0
    bottom_writes: int = 0      # matrix entries written by bottom updates
    t_integrate: float = 0.0    # seconds per phase over the whole epoch
    t_select: float = 0.0
    t_update: float = 0.0

    def gate_counts(self) -> dict:
        return {
            "labeled_updates": self.labeled_updates,
            "unlabeled_passed": self.unlabeled_passed,
            "unlabeled_skipped": self.unlabeled_skipped,
            "bottom_writes": self.bottom_writes,
        }

    def timings(self) -> dict:
        return {
            "integrate": self.t_integrate,
            "select": self.t_select,
            "update": self.t_update,
        }


def online_epoch(
    ds: Dataset,
    W: BottomWeights,
    R: TopWeights,
    cfg: ModelConfig,
    rng: np.random.Generator,
) -> EpochStats:
    """One pass of per-sample Hebbian learning over a seeded shuffle.

    Per point: integrate, select the truncation support, renormalize the
    posterior there, infer the class posterior, always update the bottom
    layer, and update the top layer only for labeled points or unlabeled
    points whose best-versus-second-best margin clears ``cfg.theta_bvsb``.
    Mutates W and R in place and reports gate statistics.
    """
    Y = ds.Y
    labels = ds.labels
    w = W.W
    logw = np.log(w)
    c_prime = cfg.C_prime
    stats = EpochStats()
    perf = time.perf_counter
    for i in rng.permutation(ds.N):
        y = Y[i]
        t0 = perf()
        I = logw @ y
        t1 = perf()
        support = select_truncation(I, c_prime)
        t2 = perf()
        s = truncated_posterior(I, support)
        label = int(labels[i])
        t = class_activation(s, R, None if label == UNLABELED else label)
        t3 = perf()
        update_bottom(W, s, y, cfg.eps_W)
        if support.size == w.shape[0]:
            np.log(w, out=logw)
        else:
            logw[support] = np.log(w[support])
        stats.bottom_writes += support.size * w.shape[1]
        if label != UNLABELED:
            update_top(R, t, s, cfg.eps_R)
            stats.labeled_updates += 1
        elif bvsb(t) > cfg.theta_bvsb:
            update_top(R, t, s, cfg.eps_R)
            stats.unlabeled_passed += 1
        else:
            stats.unlabeled_skipped += 1
        t4 = perf()
        stats.t_integrate += t1 - t0
        stats.t_select += t2 - t1
        stats.t_update += t4 - t3
    return stats
