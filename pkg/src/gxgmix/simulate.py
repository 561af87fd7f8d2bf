"""Synthetic case-control genotypes drawn from the model itself.

Null regime: ``A = Sigma = I`` and each gene's case mixture is an exact copy
of its control mixture.  Alternative regime: user-supplied ``A`` and
``Sigma``, a case effect ``delta`` added to ``Lambda[j, 1]`` and independent
Polya-urn draws for the two arms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import GenotypeDataset, dataset_from_arms, write_dataset
from .mixture import polya_urn_sample

GENOTYPE_FILE = "genotypes.tsv"
GENE_MAP_FILE = "gene_map.tsv"
TRUTH_FILE = "truth.json"


@dataclass
class Simulation:
    dataset: GenotypeDataset
    truth: dict

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_dataset(self.dataset, out / GENOTYPE_FILE, out / GENE_MAP_FILE)
        with open(out / TRUTH_FILE, "w", encoding="utf-8") as fh:
            json.dump(self.truth, fh, indent=2)
            fh.write("\n")
        return out


def _cholesky_pd(a, name):
    a = np.asarray(a, dtype=float)
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
        raise ValueError(f"{name} must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None


def _draw_genotypes(p_slots, n, rng):
    """Counts for ``n`` individuals allocated uniformly over the slot vectors (M, L)."""
    z = rng.integers(len(p_slots), size=n)
    p = p_slots[z]
    x = rng.random((2,) + p.shape) < p  # two chromosomes
    return x.sum(axis=0).astype(np.int8), z


def simulate_alternative(J, L_js, N0, N1, alpha, M, A_spec, Sigma_spec, seed,
                         delta=0.0, shared=False) -> Simulation:
    """Draw a dataset with gene-gene structure ``A_spec`` and case effect ``delta``.

    ``delta`` is a scalar or one value per gene.  With ``shared=True`` the case
    mixture of each gene copies the control mixture (no genetic effect
    besides what ``delta`` would add, which is then ignored for the draw).
    """
    L_js = [int(L) for L in np.broadcast_to(L_js, (J,))]
    if J < 1 or min(L_js) < 1 or N0 < 1 or N1 < 1 or M < 1 or alpha <= 0:
        raise ValueError("sizes and alpha must be positive")
    C1 = _cholesky_pd(A_spec, "A_spec")
    C2 = _cholesky_pd(Sigma_spec, "Sigma_spec")
    if C1.shape[0] != J or C2.shape[0] != 2:
        raise ValueError("A_spec must be J x J and Sigma_spec 2 x 2")
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (J,)).copy()
    rng = np.random.default_rng(seed)

    L = max(L_js)
    u = rng.standard_normal(L)
    v = rng.standard_normal(L)
    Lam = C1 @ rng.standard_normal((J, 2)) @ C2.T
    Lam[:, 1] += delta

    arms, mixtures = [], []
    for j in range(J):
        draws = []
        for k in (0, 1):
            if k == 1 and shared:
                draws.append(draws[0])
                continue
            lam = Lam[j, k]
            nu1, nu2 = np.exp(u[:L_js[j]] + lam), np.exp(v[:L_js[j]] + lam)
            draws.append(polya_urn_sample(alpha, nu1, nu2, M, rng))
        mixtures.append(draws)
    for j in range(J):
        gene = []
        for k, n in ((0, N0), (1, N1)):
            p_star, C = mixtures[j][k]
            w, _ = _draw_genotypes(p_star[C], n, rng)
            gene.append(w)
        arms.append(gene)

    ds = dataset_from_arms(arms)
    truth = {
        "regime": "alternative",
        "seed": seed,
        "J": J, "L": L_js, "N0": N0, "N1": N1, "alpha": alpha, "M": M,
        "A": np.asarray(A_spec, float).tolist(),
        "Sigma": np.asarray(Sigma_spec, float).tolist(),
        "delta": delta.tolist(),
        "shared": bool(shared),
        "Lambda": Lam.tolist(), "u": u.tolist(), "v": v.tolist(),
        "tau": [[int(mixtures[j][k][0].shape[0]) for k in (0, 1)] for j in range(J)],
        "C": [[mixtures[j][k][1].tolist() for k in (0, 1)] for j in range(J)],
        "p_star": [[mixtures[j][k][0].tolist() for k in (0, 1)] for j in range(J)],
    }
    return Simulation(ds, truth)


def simulate_null(J, L_js, N0, N1, alpha, M, seed) -> Simulation:
    """Identity ``A`` and ``Sigma``; case and control share one mixture per gene."""
    sim = simulate_alternative(J, L_js, N0, N1, alpha, M, np.eye(J), np.eye(2), seed,
                               delta=0.0, shared=True)
    sim.truth["regime"] = "null"
    return sim
