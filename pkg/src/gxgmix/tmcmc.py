"""Transformation-based MCMC (TMCMC) kernels with block scheduling.

All kernels move a whole block of coordinates using one or two scalar
innovations:

* additive: ``x_i + b_i * phi_i * eps`` with ``eps ~ |N(0, 1)|`` and
  ``b_i = +-1`` with probability 1/2 each;
* multiplicative: ``x_i * eps``, ``x_i / eps`` or ``x_i`` (``b_i = +1, -1, 0``
  with probability 1/3 each) with ``eps ~ N(0, 1)`` truncated to
  ``0 < |eps| < 1``; the Jacobian is ``|eps| ** sum(b)``;
* additive-multiplicative: additive coordinates share one ``eps1``,
  multiplicative coordinates share one ``eps2``.

:func:`mixture_step` applies, block by block, an equal-weight mixture of the
additive and additive-multiplicative kernels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class BlockSpec:
    name: str
    index: np.ndarray  # positions in the flat state vector
    scales: np.ndarray  # additive scale factors phi_i
    multiplicative: np.ndarray  # bool; coordinates moved multiplicatively in the mixed kernel
    positive: np.ndarray  # bool; coordinates that must stay > 0
    subset_size: int | None = None  # update a random subset of this size per step

    def __post_init__(self):
        n = len(self.index)
        self.index = np.asarray(self.index, dtype=np.int64)
        self.scales = np.broadcast_to(np.asarray(self.scales, dtype=float), (n,)).copy()
        self.multiplicative = np.broadcast_to(np.asarray(self.multiplicative, bool), (n,)).copy()
        self.positive = np.broadcast_to(np.asarray(self.positive, bool), (n,)).copy()
        if np.any(self.scales < 0):
            raise ValueError("scale factors must be non-negative")
        if self.subset_size is not None and not 1 <= self.subset_size <= n:
            raise ValueError("subset size must lie in 1..block size")

    @classmethod
    def additive(cls, name, index, scale, positive=False, subset_size=None):
        return cls(name, index, scale, False, positive, subset_size)


def half_normal(rng) -> float:
    return abs(rng.standard_normal())


def truncated_unit_normal(rng) -> float:
    """N(0, 1) restricted to 0 < |eps| < 1."""
    while True:
        e = rng.standard_normal()
        if 0.0 < abs(e) < 1.0:
            return e


def additive_propose(x, scales, rng, b=None, eps=None):
    """Additive move; returns ``(x_new, log_jacobian)`` with a zero log Jacobian."""
    x = np.asarray(x, dtype=float)
    if b is None:
        b = np.where(rng.random(len(x)) < 0.5, 1.0, -1.0)
    if eps is None:
        eps = half_normal(rng)
    with np.errstate(over="ignore", invalid="ignore"):
        return x + np.asarray(b) * np.asarray(scales) * eps, 0.0


def _multiplicative_moves(rng, n):
    return rng.integers(-1, 2, size=n).astype(float)  # -1, 0, +1 equally likely


def multiplicative_jacobian(b, eps) -> float:
    """log |J(b, eps)| = sum(b) * log|eps|."""
    return float(np.sum(b)) * np.log(abs(eps))


def _apply_multiplicative(x, b, eps):
    with np.errstate(over="ignore"):
        return np.where(b > 0, x * eps, np.where(b < 0, x / eps, x))


def multiplicative_propose(x, rng, b=None, eps=None):
    """Multiplicative move; returns ``(x_new, log_jacobian)``."""
    x = np.asarray(x, dtype=float)
    if b is None:
        b = _multiplicative_moves(rng, len(x))
    if eps is None:
        eps = truncated_unit_normal(rng)
    b = np.asarray(b, dtype=float)
    return _apply_multiplicative(x, b, eps), multiplicative_jacobian(b, eps)


def additive_multiplicative_propose(x, multiplicative, scales, rng,
                                    b_add=None, eps1=None, b_mult=None, eps2=None):
    """Mixed move: additive on ``~multiplicative`` coordinates, multiplicative on the rest.

    Multiplicative coordinates with a zero scale factor are left in place.
    Only the multiplicative coordinates contribute to the Jacobian.
    """
    x = np.asarray(x, dtype=float)
    mult = np.asarray(multiplicative, bool)
    scales = np.broadcast_to(np.asarray(scales, float), x.shape)
    out = x.copy()
    log_jac = 0.0
    add = ~mult
    if add.any():
        out[add], _ = additive_propose(x[add], scales[add], rng, b_add, eps1)
    if mult.any():
        if b_mult is None:
            b_mult = _multiplicative_moves(rng, int(mult.sum()))
        b_mult = np.where(scales[mult] > 0, b_mult, 0.0)
        out[mult], log_jac = multiplicative_propose(x[mult], rng, b_mult, eps2)
    return out, log_jac


class AcceptanceCounter:
    """Per-block ``[accepted, proposed]`` tallies."""

    def __init__(self, counts=None):
        self.counts = {k: list(v) for k, v in (counts or {}).items()}

    def record(self, name, accepted):
        c = self.counts.setdefault(name, [0, 0])
        c[0] += int(accepted)
        c[1] += 1

    def rates(self) -> dict[str, float]:
        return {k: (a / n if n else float("nan")) for k, (a, n) in self.counts.items()}

    def as_dict(self):
        return {k: list(v) for k, v in self.counts.items()}


def block_step(log_target, block: BlockSpec, x, logp, rng, counter=None):
    """One mixture-TMCMC Metropolis-Hastings update of ``block``; returns ``(x, logp)``."""
    coords = block.index
    scales, mult, positive = block.scales, block.multiplicative, block.positive
    if block.subset_size is not None and block.subset_size < len(coords):
        pick = rng.choice(len(coords), size=block.subset_size, replace=False)
        coords, scales, mult, positive = coords[pick], scales[pick], mult[pick], positive[pick]

    if rng.random() < 0.5:
        proposal, log_jac = additive_propose(x[coords], scales, rng)
    else:
        proposal, log_jac = additive_multiplicative_propose(x[coords], mult, scales, rng)
    log_u = np.log(rng.random())

    accepted = False
    if np.all(np.isfinite(proposal)) and not np.any(proposal[positive] <= 0):
        x_new = x.copy()
        x_new[coords] = proposal
        logp_new = log_target(x_new)
        if np.isnan(logp_new):
            log.warning("target returned NaN in block %s; proposal rejected", block.name)
        elif logp_new > -np.inf and log_u < logp_new - logp + log_jac:
            x, logp, accepted = x_new, logp_new, True
    if counter is not None:
        counter.record(block.name, accepted)
    return x, logp


def mixture_step(log_target, schedule, x, rng, logp=None, counter=None):
    """Apply :func:`block_step` to every block of ``schedule`` in order.

    Returns ``(x, logp)``.  ``logp`` may be passed in to avoid re-evaluating
    the target at the current point.
    """
    x = np.asarray(x, dtype=float)
    if logp is None:
        logp = log_target(x)
    if not np.isfinite(logp):
        raise ValueError("current state has non-finite target density")
    for block in schedule:
        x, logp = block_step(log_target, block, x, logp, rng, counter)
    return x, logp
