"""Interaction layer: Beta base-measure parameters tied through a matrix-normal prior.

For gene ``j``, status ``k`` and locus ``r`` the base measure of the
(j, k) mixture is Beta(nu1, nu2) with::

    nu1 = exp(u[r] + Lambda[j, k]),   nu2 = exp(v[r] + Lambda[j, k])

``Lambda`` (J x 2) is matrix normal with row covariance ``A`` and column
covariance ``Sigma``; both get inverse-Wishart priors and are parameterised
by lower Cholesky factors ``C1`` and ``C2`` with positive diagonals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln

LOG_2PI = np.log(2 * np.pi)


@dataclass
class PriorConfig:
    A0: np.ndarray
    Sigma0: np.ndarray
    xi: float | None = None  # IW dof for A; None -> J + 2
    zeta: float = 4.0  # IW dof for Sigma
    # Include the change of variables A -> C1 (and Sigma -> C2) so that the
    # chain on Cholesky entries targets the inverse-Wishart law on A itself.
    cholesky_jacobian: bool = True

    def __post_init__(self):
        self.A0 = np.asarray(self.A0, dtype=float)
        self.Sigma0 = np.asarray(self.Sigma0, dtype=float)
        J = self.A0.shape[0]
        if self.xi is None:
            self.xi = J + 2.0
        if self.xi < J or self.zeta < 2:
            raise ValueError("need xi >= J and zeta >= 2")

    @property
    def n_genes(self) -> int:
        return self.A0.shape[0]


@dataclass
class InteractionState:
    Lambda: np.ndarray  # (J, 2)
    u: np.ndarray  # (L,)
    v: np.ndarray  # (L,)
    C1: np.ndarray  # (J, J) lower triangular, A = C1 C1'
    C2: np.ndarray  # (2, 2) lower triangular, Sigma = C2 C2'
    mu: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mu is None:
            self.mu = np.zeros_like(self.Lambda)

    @property
    def A(self) -> np.ndarray:
        return self.C1 @ self.C1.T

    @property
    def Sigma(self) -> np.ndarray:
        return self.C2 @ self.C2.T

    @property
    def n_genes(self) -> int:
        return self.Lambda.shape[0]

    @property
    def n_loci(self) -> int:
        return len(self.u)

    def copy(self) -> "InteractionState":
        return InteractionState(self.Lambda.copy(), self.u.copy(), self.v.copy(),
                                self.C1.copy(), self.C2.copy(), self.mu.copy())

    def valid(self) -> bool:
        return bool(np.all(np.diag(self.C1) > 0) and np.all(np.diag(self.C2) > 0))

    @classmethod
    def initial(cls, A0, Sigma0, n_loci):
        J = A0.shape[0]
        return cls(np.zeros((J, 2)), np.zeros(n_loci), np.zeros(n_loci),
                   np.linalg.cholesky(A0), np.linalg.cholesky(Sigma0))


def nu_params(state: InteractionState, j: int, k: int, r=None):
    """Beta parameters of the (j, k) base measure.

    ``r`` may be a locus index, a slice, or None for all loci.  Overflow
    produces ``inf``, which callers treat as zero density.
    """
    idx = slice(None) if r is None else r
    lam = state.Lambda[j, k]
    with np.errstate(over="ignore"):
        return np.exp(state.u[idx] + lam), np.exp(state.v[idx] + lam)


def _chol(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None


def _logdet_chol(c):
    return 2.0 * np.sum(np.log(np.diag(c)))


def _mn_from_chol(Lam, mu, C1, C2):
    J = Lam.shape[0]
    x = solve_triangular(C1, Lam - mu, lower=True, check_finite=False)  # C1^{-1}(Lam - mu)
    y = solve_triangular(C2, x.T, lower=True, check_finite=False)  # C2^{-1} x'
    quad = np.sum(y * y)
    return -0.5 * quad - J * LOG_2PI - 0.5 * 2 * _logdet_chol(C1) - 0.5 * J * _logdet_chol(C2)


def log_matrix_normal(Lam, mu, A, Sigma) -> float:
    """Log density of the J x 2 matrix normal MN(mu, A, Sigma)."""
    return float(_mn_from_chol(np.asarray(Lam, float), np.asarray(mu, float), _chol(A), _chol(Sigma)))


def _iw_from_chol(C, dof, scale):
    dim = C.shape[0]
    cinv_s = solve_triangular(C, scale, lower=True, check_finite=False)
    tr = np.trace(solve_triangular(C, cinv_s.T, lower=True, check_finite=False))  # tr(X^{-1} S)
    return -0.5 * (dof + dim + 1) * _logdet_chol(C) - 0.5 * tr


def log_inv_wishart(X, dof, scale) -> float:
    """Inverse-Wishart log kernel, without the normalising constant."""
    X = np.asarray(X, float)
    if dof < X.shape[0]:
        raise ValueError("dof must be at least the dimension")
    return float(_iw_from_chol(_chol(X), dof, np.asarray(scale, float)))


def log_cholesky_jacobian(C) -> float:
    """log |d(CC')/dC| for lower-triangular C with positive diagonal."""
    n = C.shape[0]
    return n * np.log(2.0) + float(np.sum((n - np.arange(n)) * np.log(np.diag(C))))


@dataclass(frozen=True)
class MixtureSummary:
    """What the interaction conditional needs from one (j, k) mixture."""

    j: int
    k: int
    tau: int
    sum_log_p: np.ndarray  # (L_j,) sum over distinct vectors of log p*
    sum_log_1mp: np.ndarray  # (L_j,)

    @classmethod
    def of(cls, state) -> "MixtureSummary":
        p = state.p_star
        return cls(state.j, state.k, p.shape[0], np.log(p).sum(axis=0), np.log1p(-p).sum(axis=0))

    @classmethod
    def empty(cls, j, k, n_loci) -> "MixtureSummary":
        z = np.zeros(n_loci)
        return cls(j, k, 0, z, z)


def log_prior(state: InteractionState, prior: PriorConfig) -> float:
    if not state.valid():
        return -np.inf
    lp = _mn_from_chol(state.Lambda, state.mu, state.C1, state.C2)
    lp += _iw_from_chol(state.C1, prior.xi, prior.A0)
    lp += _iw_from_chol(state.C2, prior.zeta, prior.Sigma0)
    if prior.cholesky_jacobian:
        lp += log_cholesky_jacobian(state.C1) + log_cholesky_jacobian(state.C2)
    lp += -0.5 * (np.dot(state.u, state.u) + np.dot(state.v, state.v)) - state.n_loci * LOG_2PI
    return float(lp)


def log_base_measure(state: InteractionState, summaries) -> float:
    """Sum of log Beta(p* | nu1, nu2) over all distinct vectors of all mixtures."""
    total = 0.0
    for s in summaries:
        if s.tau == 0:
            continue
        L = len(s.sum_log_p)
        nu1, nu2 = nu_params(state, s.j, s.k, slice(0, L))
        total += np.sum((nu1 - 1) * s.sum_log_p + (nu2 - 1) * s.sum_log_1mp - s.tau * betaln(nu1, nu2))
    return float(total)


def log_interaction_conditional(state: InteractionState, summaries, prior: PriorConfig) -> float:
    """Log full conditional of the interaction parameters, up to a constant.

    ``summaries`` is an iterable of :class:`MixtureSummary` (or of mixture
    states, which are summarised on the fly).  Any non-finite term makes the
    result ``-inf``.
    """
    summaries = [s if isinstance(s, MixtureSummary) else MixtureSummary.of(s) for s in summaries]
    with np.errstate(all="ignore"):
        lp = log_prior(state, prior)
        if not np.isfinite(lp):
            return -np.inf
        lp += log_base_measure(state, summaries)
    return lp if np.isfinite(lp) else -np.inf


# --- flat parameter vector ----------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Positions of each parameter group inside the flat vector used by TMCMC."""

    n_genes: int
    n_loci: int

    @cached_property
    def tril1(self):
        return np.tril_indices(self.n_genes)

    @cached_property
    def tril2(self):
        return np.tril_indices(2)

    @cached_property
    def _slices(self):
        J, L = self.n_genes, self.n_loci
        sizes = [("lambda_control", J), ("lambda_case", J), ("u", L), ("v", L),
                 ("sigma_chol", 3), ("a_chol", J * (J + 1) // 2)]
        out, start = {}, 0
        for name, n in sizes:
            out[name] = slice(start, start + n)
            start += n
        return out

    def slices(self) -> dict[str, slice]:
        return dict(self._slices)

    @property
    def size(self) -> int:
        return 2 * self.n_genes + 2 * self.n_loci + 3 + self.n_genes * (self.n_genes + 1) // 2

    def diagonal_mask(self, name: str) -> np.ndarray:
        """True where a Cholesky block entry sits on the diagonal."""
        rows, cols = self.tril2 if name == "sigma_chol" else self.tril1
        return rows == cols

    def flatten(self, s: InteractionState) -> np.ndarray:
        return np.concatenate([s.Lambda[:, 0], s.Lambda[:, 1], s.u, s.v,
                               s.C2[self.tril2], s.C1[self.tril1]])

    def unflatten(self, x: np.ndarray, mu=None) -> InteractionState:
        sl = self._slices
        J = self.n_genes
        C1 = np.zeros((J, J))
        C1[self.tril1] = x[sl["a_chol"]]
        C2 = np.zeros((2, 2))
        C2[self.tril2] = x[sl["sigma_chol"]]
        lam = np.column_stack([x[sl["lambda_control"]], x[sl["lambda_case"]]])
        return InteractionState(lam, x[sl["u"]].copy(), x[sl["v"]].copy(), C1, C2, mu)
