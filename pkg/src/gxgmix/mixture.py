"""Dirichlet-process mixture for one (gene, status) pair.

The mixture has ``M`` slots with fixed weights ``1/M``.  Slot parameter
vectors are tied through a Polya urn, so the state is stored as a
configuration vector ``C`` (slot -> cluster label, labels in order of first
appearance) plus the matrix of distinct probability vectors ``p_star``.

All three Gibbs updates return a new :class:`MixtureState`; the input state
is never modified.
"""
from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

# Beta draws with tiny shape parameters can round to exactly 0 or 1.
P_FLOOR = 1e-12


@dataclass
class MixtureState:
    j: int
    k: int
    alpha: float
    z: np.ndarray  # (N_k,) slot index of each individual
    C: np.ndarray  # (M,) cluster label of each slot
    p_star: np.ndarray  # (tau, L_j)

    @property
    def M(self) -> int:
        return len(self.C)

    @property
    def tau(self) -> int:
        return self.p_star.shape[0]

    @property
    def n_loci(self) -> int:
        return self.p_star.shape[1]

    def slot_probs(self) -> np.ndarray:
        """Probability vectors expanded to all M slots, shape (M, L_j)."""
        return self.p_star[self.C]

    def copy(self) -> "MixtureState":
        return MixtureState(self.j, self.k, self.alpha, self.z.copy(), self.C.copy(),
                            self.p_star.copy())

    def check(self):
        labels = np.unique(self.C)
        assert labels.tolist() == list(range(self.tau)), "C must surject onto 0..tau-1"
        assert canonical_order(self.C).tolist() == self.C.tolist(), "C not canonical"
        assert np.all((self.p_star > 0) & (self.p_star < 1))
        assert len(np.unique(self.p_star, axis=0)) == self.tau


def expected_distinct(alpha: float, M: int) -> float:
    """Approximate prior mean number of distinct values among M Polya-urn draws."""
    if alpha <= 0 or M < 1:
        raise ValueError("need alpha > 0 and M >= 1")
    return alpha * np.log1p(M / alpha)


def expected_distinct_exact(alpha: float, M: int) -> float:
    """Exact prior mean number of distinct values: sum of new-draw probabilities."""
    if alpha <= 0 or M < 1:
        raise ValueError("need alpha > 0 and M >= 1")
    return float(np.sum(alpha / (alpha + np.arange(M))))


def draw_beta(a, b, rng) -> np.ndarray:
    return np.clip(rng.beta(a, b), P_FLOOR, 1.0 - P_FLOOR)


def canonical_order(C: np.ndarray) -> np.ndarray:
    """Relabel ``C`` so that clusters are numbered by first appearance."""
    _, first = np.unique(C, return_index=True)
    order = np.argsort(first)  # old labels sorted by first slot
    remap = np.empty(C.max() + 1, dtype=np.int64)
    remap[np.unique(C)[order]] = np.arange(len(order))
    return remap[C]


def canonicalize(C: np.ndarray, p_star: np.ndarray):
    """Canonical labels plus ``p_star`` rows permuted (and unused rows dropped) to match."""
    used, first = np.unique(C, return_index=True)
    old = used[np.argsort(first)]
    remap = np.empty(max(C.max() + 1, len(p_star)), dtype=np.int64)
    remap[old] = np.arange(len(old))
    return remap[C], p_star[old]


def slot_counts(w: np.ndarray, z: np.ndarray, M: int):
    """Minor (``n1``) and major (``n2``) allele counts per slot and locus, each (M, L)."""
    onehot = np.zeros((M, len(z)))
    onehot[z, np.arange(len(z))] = 1.0
    n1 = onehot @ w
    n2 = 2.0 * onehot.sum(axis=1)[:, None] - n1
    return n1, n2


def cluster_counts(C: np.ndarray, n1: np.ndarray, n2: np.ndarray, tau: int):
    """Aggregate slot counts into per-cluster counts ``n1*``, ``n2*``, each (tau, L)."""
    onehot = np.zeros((tau, len(C)))
    onehot[C, np.arange(len(C))] = 1.0
    return onehot @ n1, onehot @ n2


def _sample_rows(logw: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per row of unnormalised log weights."""
    shift = logw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise FloatingPointError("all mixture weights underflowed; p_star is corrupted")
    cum = np.cumsum(np.exp(logw - shift), axis=-1)
    target = u * cum[..., -1]
    return (cum <= target[..., None]).sum(axis=-1).clip(max=logw.shape[-1] - 1)


def _sample_one(lw: np.ndarray, u: float) -> int:
    """Scalar version of :func:`_sample_rows` for one weight vector."""
    shift = max(lw)
    if not math.isfinite(shift):
        raise FloatingPointError("all mixture weights underflowed; p_star is corrupted")
    cum = list(itertools.accumulate(math.exp(x - shift) for x in lw))
    return min(bisect.bisect_right(cum, u * cum[-1]), len(lw) - 1)


def allocation_log_weights(state: MixtureState, w: np.ndarray) -> np.ndarray:
    """Unnormalised log full-conditional of each ``z_i`` over the M slots, shape (N, M)."""
    with np.errstate(divide="ignore"):
        logp = np.log(state.p_star)
        log1mp = np.log1p(-state.p_star)
    ll = w @ logp.T + (2 - w) @ log1mp.T  # (N, tau)
    return ll[:, state.C]


def allocation_probs(state: MixtureState, w: np.ndarray) -> np.ndarray:
    lw = allocation_log_weights(state, w)
    lw -= lw.max(axis=1, keepdims=True)
    p = np.exp(lw)
    return p / p.sum(axis=1, keepdims=True)


def update_allocations(state: MixtureState, w: np.ndarray, rng) -> MixtureState:
    """Resample every allocation ``z_i`` given the slot probability vectors."""
    new = state.copy()
    if len(w):
        lw = allocation_log_weights(state, w.astype(float))
        new.z = _sample_rows(lw, rng.random(len(w)))
    return new


def new_cluster_log_weight(n1, n2, nu1, nu2, alpha):
    """log q0: ``alpha`` times the Beta-Bernoulli marginal likelihood of a slot's data.

    ``n1``/``n2`` may be (L,) or (M, L); the sum runs over the last axis.
    """
    return np.log(alpha) + np.sum(betaln(n1 + nu1, n2 + nu2) - betaln(nu1, nu2), axis=-1)


def existing_cluster_log_weights(sizes, p_star, n1m, n2m):
    """log q*_l = log M_l + sum_r n1 log p*_l + n2 log(1 - p*_l)."""
    return np.log(sizes) + np.log(p_star) @ n1m + np.log1p(-p_star) @ n2m


def update_configuration(state: MixtureState, w: np.ndarray, nu1, nu2, rng) -> MixtureState:
    """One Gibbs scan over the configuration vector.

    Each slot is removed in turn and reassigned to one of the remaining
    distinct vectors (weight: multiplicity times the slot's likelihood) or to
    a fresh vector (weight: ``alpha`` times the marginal likelihood).  A fresh
    vector is drawn from its conditional Beta posterior given the slot's data.
    """
    M = state.M
    n1, n2 = slot_counts(w, state.z, M)
    log_q0 = new_cluster_log_weight(n1, n2, nu1, nu2, state.alpha)
    u = rng.random(M)

    labels = state.C.copy()
    p_star = state.p_star.copy()
    sizes = np.bincount(labels, minlength=len(p_star)).astype(float)
    # slot-by-cluster log likelihood; columns track p_star rows
    ll = n1 @ np.log(p_star).T + n2 @ np.log1p(-p_star).T

    for m in range(M):
        c = labels[m]
        sizes[c] -= 1
        if sizes[c] == 0:
            p_star = np.delete(p_star, c, axis=0)
            sizes = np.delete(sizes, c)
            ll = np.delete(ll, c, axis=1)
            labels[labels > c] -= 1
        K = len(sizes)
        lw = (np.log(sizes) + ll[m]).tolist()
        lw.append(log_q0[m])
        choice = _sample_one(lw, u[m])
        if choice == K:
            fresh = draw_beta(n1[m] + nu1, n2[m] + nu2, rng)
            p_star = np.vstack([p_star, fresh])
            sizes = np.append(sizes, 1.0)
            ll = np.column_stack([ll, n1 @ np.log(fresh) + n2 @ np.log1p(-fresh)])
        else:
            sizes[choice] += 1
        labels[m] = choice

    new = state.copy()
    new.C, new.p_star = canonicalize(labels, p_star)
    return new


def update_distinct_probs(state: MixtureState, w: np.ndarray, nu1, nu2, rng) -> MixtureState:
    """Draw every distinct vector from Beta(n1* + nu1, n2* + nu2), coordinate-wise."""
    nu1 = np.asarray(nu1, dtype=float)
    nu2 = np.asarray(nu2, dtype=float)
    if not (np.all(np.isfinite(nu1)) and np.all(np.isfinite(nu2))):
        raise FloatingPointError("non-finite Beta parameters")
    n1, n2 = slot_counts(w, state.z, state.M)
    s1, s2 = cluster_counts(state.C, n1, n2, state.tau)
    new = state.copy()
    new.p_star = draw_beta(s1 + nu1, s2 + nu2, rng)
    return new


def sweep(state: MixtureState, w: np.ndarray, nu1, nu2, rng) -> MixtureState:
    """Allocations, then configuration, then distinct vectors."""
    state = update_allocations(state, w, rng)
    state = update_configuration(state, w, nu1, nu2, rng)
    return update_distinct_probs(state, w, nu1, nu2, rng)


def polya_urn_sample(alpha, nu1, nu2, M: int, rng):
    """Draw M slot vectors from the Polya urn with Beta(nu1, nu2) base measure.

    Slot ``m`` (0-based) is a fresh base draw with probability
    ``alpha / (alpha + m)``, otherwise a copy of a uniformly chosen earlier
    slot.  Returns ``(p_star, C)`` with ``C`` canonical.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    nu1 = np.atleast_1d(np.asarray(nu1, dtype=float))
    nu2 = np.atleast_1d(np.asarray(nu2, dtype=float))
    C = np.zeros(M, dtype=np.int64)
    rows = [draw_beta(nu1, nu2, rng)]
    for m in range(1, M):
        if rng.random() < alpha / (alpha + m):
            C[m] = len(rows)
            rows.append(draw_beta(nu1, nu2, rng))
        else:
            C[m] = C[rng.integers(m)]
    return np.array(rows), C


def init_state(j, k, alpha, M, n_individuals, n_loci, rng) -> MixtureState:
    """Uniform allocations and a Polya-urn draw at nu = (1, 1)."""
    ones = np.ones(n_loci)
    p_star, C = polya_urn_sample(alpha, ones, ones, M, rng)
    z = rng.integers(M, size=n_individuals)
    return MixtureState(j, k, float(alpha), z, C, p_star)
