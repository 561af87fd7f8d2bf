"""Case-control divergences, null-calibrated thresholds and 0-1-c decisions.

Statistics per posterior sample and gene ``j``:

* ``d_hat[j]``: clustering distance between the control and case
  configuration vectors; ``d_star = max_j d_hat[j]``;
* ``d_E[j]``: Euclidean distance between the slot-wise logit mean-probability
  vectors of controls and cases; ``d_star_E = max_j d_E[j]``;
* ``d_E_min[j]``: the same distance minimised over permutations of slots.

A null hypothesis ``H0: stat < eps`` is accepted under 0-1-c loss when
``P(stat < eps | data) >= 1 / (1 + c)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

# --- divergences ----------------------------------------------------------


def _as_labels(clustering) -> np.ndarray:
    """Accept a label vector or a partition given as an iterable of item sets (0-based)."""
    if isinstance(clustering, np.ndarray) or (
            len(clustering) and not isinstance(next(iter(clustering)), (set, frozenset, list, tuple))):
        return np.asarray(clustering, dtype=np.int64)
    blocks = [sorted(b) for b in clustering]
    n = sum(len(b) for b in blocks)
    labels = np.full(n, -1, dtype=np.int64)
    for lab, block in enumerate(blocks):
        labels[block] = lab
    if (labels < 0).any():
        raise ValueError("partition does not cover 0..n-1")
    return labels


def _directed_distance(table: np.ndarray) -> float:
    total = table.sum()
    return float((total - table.max(axis=1).sum()) / total)  # exact for integer counts


def clustering_distance(first, second) -> float:
    """Symmetrised confusion-matrix discrepancy between two partitions of the same items.

    ``d_bar(I, II) = 1 - sum_i max_j n_ij / n`` where ``n_ij`` counts items in
    cluster ``i`` of ``I`` and cluster ``j`` of ``II``; the result is
    ``max(d_bar(I, II), d_bar(II, I))``.
    """
    a, b = _as_labels(first), _as_labels(second)
    if a.shape != b.shape:
        raise ValueError("clusterings must cover the same items")
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    return max(_directed_distance(table), _directed_distance(table.T))


def logit_mean_vector(slot_probs: np.ndarray) -> np.ndarray:
    """logit of each slot's probability averaged over loci; ``slot_probs`` is (M, L)."""
    pbar = np.asarray(slot_probs, dtype=float).mean(axis=1)
    if np.any((pbar <= 0) | (pbar >= 1)):
        raise ValueError("mean probability at 0 or 1")
    return np.log(pbar) - np.log1p(-pbar)


def euclidean_distance(v1, v2) -> float:
    """Index-matched Euclidean distance, rounded exactly as :func:`d_E_min` rounds."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ValueError("vectors must have equal length")
    return _matched_distance(v1, v2, np.arange(len(v2)))


def euclidean_gene_distance(control, case) -> float:
    """Slot-matched Euclidean distance between logit mean vectors of two mixture states."""
    return euclidean_distance(logit_mean_vector(control.slot_probs()),
                              logit_mean_vector(case.slot_probs()))


def d_E_min(v1, v2) -> float:
    """Euclidean distance minimised over permutations of the entries of ``v2``.

    Scalar entries are matched by sorting, which is optimal for squared
    differences on the line; vector entries (shape (K, D)) are matched by
    solving the assignment problem.  The identity matching is always a
    candidate, so the result never exceeds :func:`euclidean_distance` even
    where rounding would otherwise separate equal optima.
    """
    identity = euclidean_distance(v1, v2)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.ndim == 1:
        match = np.empty(len(v2), dtype=np.int64)
        match[np.argsort(v1, kind="stable")] = np.argsort(v2, kind="stable")
    else:
        cost = ((v1[:, None, :] - v2[None, :, :]) ** 2).sum(axis=-1)
        _, match = linear_sum_assignment(cost)
    return min(identity, _matched_distance(v1, v2, match))


def d_E_min_assignment(v1, v2) -> float:
    """Assignment-solver route for scalar entries (kept to cross-check :func:`d_E_min`)."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape:
        raise ValueError("vectors must have equal length")
    _, cols = linear_sum_assignment((v1[:, None] - v2[None, :]) ** 2)
    return min(euclidean_distance(v1, v2), _matched_distance(v1, v2, cols))


def _matched_distance(v1, v2, match) -> float:
    """Euclidean distance between ``v1[i]`` and ``v2[match[i]]``, summed in index order."""
    d = v1 - v2[match]
    return float(np.sqrt(np.sum(d * d)))


MAX_ENUMERATION_LOCI = 12


def _count_log_pmf(p: np.ndarray) -> np.ndarray:
    """log P(count = c | p) for c = 0, 1, 2 under two independent Bernoulli(p) draws."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        lp, lq = np.log(p), np.log1p(-p)
    return np.stack([2 * lq, np.log(2.0) + lp + lq, 2 * lp], axis=-1)


def genotype_log_pmf(weights, probs) -> np.ndarray:
    """Log pmf of a product-Bernoulli-pair mixture over all count vectors in {0,1,2}^L.

    Rows of the result follow ``itertools.product(range(3), repeat=L)``.
    """
    weights = np.asarray(weights, dtype=float)
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    L = probs.shape[1]
    if L > MAX_ENUMERATION_LOCI:
        raise ValueError(f"L={L} too large to enumerate (max {MAX_ENUMERATION_LOCI})")
    table = _count_log_pmf(probs)  # (M, L, 3)
    support = np.array(list(itertools.product(range(3), repeat=L)), dtype=np.int64)
    per_comp = table[:, np.arange(L)[None, :], support].sum(axis=-1)  # (M, 3^L)
    with np.errstate(divide="ignore"):
        return logsumexp(per_comp + np.log(weights)[:, None], axis=0)


def bhattacharyya_distance(h0, h1) -> float:
    """Hellinger distance ``sqrt(1 - BC)`` between two genotype mixtures.

    Each of ``h0``/``h1`` is ``(weights, probs)`` with ``probs`` of shape
    (components, L).  The Bhattacharyya coefficient is summed over the whole
    support, so this is for small ``L`` only.
    """
    l0 = genotype_log_pmf(*h0)
    l1 = genotype_log_pmf(*h1)
    with np.errstate(invalid="ignore"):
        bc = np.exp(0.5 * (l0 + l1))
    bc = float(np.nansum(bc))
    return math.sqrt(max(0.0, 1.0 - min(bc, 1.0)))


# --- thresholds -----------------------------------------------------------


def decide(posterior_prob: float, c: float = 1.0) -> bool:
    """True (accept H0) iff ``posterior_prob >= 1 / (1 + c)``."""
    if not 0.0 <= posterior_prob <= 1.0:
        raise ValueError("posterior probability must lie in [0, 1]")
    if c <= 0:
        raise ValueError("c must be positive")
    return posterior_prob >= 1.0 / (1.0 + c)


def calibrated_epsilon(values, q: float) -> float:
    """Threshold ``eps`` with ``P(value < eps)`` equal to the empirical ``q``-quantile mass.

    ``v`` is the smallest sample with empirical CDF ``>= q``.  The threshold is
    placed halfway to the next larger distinct sample, so that the strict
    event ``value < eps`` includes any tie at ``v``.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    v = x[max(math.ceil(q * n - 1e-9), 1) - 1]  # guard 0.55 * 100 = 55.000...01
    above = x[x > v]
    if len(above):
        return float(0.5 * (v + above[0]))
    return float(v + max(abs(v), 1.0) * 1e-9)


@dataclass
class Thresholds:
    eps_cluster: float
    eps_euclid: float
    eps_interaction: float
    quantile: float = 0.55
    eps_cluster_gene: list[float] | None = None  # only with per-gene calibration
    eps_euclid_gene: list[float] | None = None
    n_records: int = 0
    n_genes: int = 0

    def cluster_eps(self, j):
        return self.eps_cluster if self.eps_cluster_gene is None else self.eps_cluster_gene[j]

    def euclid_eps(self, j):
        return self.eps_euclid if self.eps_euclid_gene is None else self.eps_euclid_gene[j]

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "Thresholds":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


class TraceTooShort(ValueError):
    pass


def calibrate_thresholds(null_trace, q: float = 0.55, per_gene: bool = False,
                         min_records: int = 100) -> Thresholds:
    """Thresholds from the posterior of each statistic family under a null fit."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    s = null_trace.statistics()
    if s["d_star"].size < min_records:
        raise TraceTooShort(f"{s['d_star'].size} retained records; need at least {min_records}")
    J = s["d_hat"].shape[1]
    iu = np.triu_indices(J, 1)
    offdiag = np.abs(s["A"][:, iu[0], iu[1]]).ravel() if J > 1 else np.zeros(1)
    t = Thresholds(
        eps_cluster=calibrated_epsilon(s["d_star"], q),
        eps_euclid=calibrated_epsilon(s["d_star_E"], q),
        eps_interaction=calibrated_epsilon(offdiag, q),
        quantile=q,
        n_records=int(s["d_star"].size),
        n_genes=J,
    )
    if per_gene:
        t.eps_cluster_gene = [calibrated_epsilon(s["d_hat"][:, j], q) for j in range(J)]
        t.eps_euclid_gene = [calibrated_epsilon(s["d_E"][:, j], q) for j in range(J)]
    return t


# --- test report ----------------------------------------------------------


@dataclass
class HypothesisResult:
    statistic: str
    posterior_prob: float
    epsilon: float
    c: float
    accept: bool

    @property
    def threshold_prob(self) -> float:
        return 1.0 / (1.0 + self.c)

    def as_dict(self):
        d = asdict(self)
        d["threshold_prob"] = self.threshold_prob
        d["decision"] = "accept" if self.accept else "reject"
        return d


def _test(name, samples, eps, c) -> HypothesisResult:
    prob = float(np.mean(np.asarray(samples) < eps))
    return HypothesisResult(name, prob, float(eps), float(c), decide(prob, c))


@dataclass
class GeneResult:
    gene_id: str
    clustering: HypothesisResult
    euclid: HypothesisResult | None = None
    euclid_min: HypothesisResult | None = None

    @property
    def significant(self) -> bool:
        return _significant(self.clustering, self.euclid, self.euclid_min)

    def as_dict(self):
        return {
            "gene_id": self.gene_id,
            "clustering": self.clustering.as_dict(),
            "euclid": self.euclid.as_dict() if self.euclid else None,
            "euclid_min": self.euclid_min.as_dict() if self.euclid_min else None,
            "significant": self.significant,
        }


def _significant(clustering, euclid, euclid_min) -> bool:
    if not clustering.accept:
        return True
    if euclid is None or euclid.accept:
        return False
    return euclid_min is None or not euclid_min.accept


@dataclass
class TestReport:
    overall: HypothesisResult
    overall_euclid: HypothesisResult | None
    overall_euclid_min: HypothesisResult | None
    genes: list[GeneResult]
    interactions: list[dict]
    c_cluster: float
    c_confirm: float
    notes: list[str] = field(default_factory=list)

    __test__ = False  # not a pytest class

    @property
    def genetic_effect(self) -> bool:
        """True if the overall null of no genetic effect is rejected."""
        return _significant(self.overall, self.overall_euclid, self.overall_euclid_min)

    @property
    def interaction_detected(self) -> bool:
        return any(not r["test"].accept for r in self.interactions)

    def as_dict(self):
        return {
            "overall": {
                "clustering": self.overall.as_dict(),
                "euclid": self.overall_euclid.as_dict() if self.overall_euclid else None,
                "euclid_min": self.overall_euclid_min.as_dict() if self.overall_euclid_min else None,
                "genetic_effect": self.genetic_effect,
            },
            "genes": [g.as_dict() for g in self.genes],
            "interactions": [
                {"gene_a": r["gene_a"], "gene_b": r["gene_b"], **r["test"].as_dict()}
                for r in self.interactions
            ],
            "c_cluster": self.c_cluster,
            "c_confirm": self.c_confirm,
            "confirm_threshold_prob": 1.0 / (1.0 + self.c_confirm),
            "notes": self.notes,
        }

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)
            fh.write("\n")

    def summary(self) -> str:
        def row(label, r):
            return (f"{label:<28} {r.statistic:<10} P={r.posterior_prob:6.3f}  eps={r.epsilon:9.4f}"
                    f"  c={r.c:g}  {'accept' if r.accept else 'reject'}")

        lines = [row("overall", self.overall)]
        if self.overall_euclid:
            lines.append(row("overall (Euclidean)", self.overall_euclid))
        if self.overall_euclid_min:
            lines.append(row("overall (permutation-min)", self.overall_euclid_min))
        lines.append(f"genetic effect: {'yes' if self.genetic_effect else 'no'}")
        for g in self.genes:
            lines.append(row(f"gene {g.gene_id}", g.clustering))
            if g.euclid:
                lines.append(row("  Euclidean", g.euclid))
            if g.euclid_min:
                lines.append(row("  permutation-min", g.euclid_min))
            lines.append(f"  significant: {'yes' if g.significant else 'no'}")
        for r in self.interactions:
            lines.append(row(f"|A[{r['gene_a']},{r['gene_b']}]|", r["test"]))
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def _confirm(name, name_min, values, values_min, eps, c):
    euclid = _test(name, values, eps, c)
    euclid_min = None if euclid.accept else _test(name_min, values_min, eps, c)
    return euclid, euclid_min


def run_tests(trace, thresholds: Thresholds, c_cluster: float = 1.0,
              c_confirm: float = 19.0) -> TestReport:
    """Overall, per-gene and pairwise-interaction tests over a posterior trace.

    A null accepted by the clustering test is re-checked with the Euclidean
    statistic at ``c_confirm``; a Euclidean rejection is re-tested with the
    permutation-minimised distance, reusing the Euclidean threshold.
    """
    s = trace.statistics()
    J = s["d_hat"].shape[1]
    if thresholds.n_genes and thresholds.n_genes != J:
        raise ValueError(f"thresholds calibrated for {thresholds.n_genes} genes, trace has {J}")
    gene_ids = trace.gene_ids or [str(j + 1) for j in range(J)]

    overall = _test("d_star", s["d_star"], thresholds.eps_cluster, c_cluster)
    o_e = o_emin = None
    if overall.accept:
        o_e, o_emin = _confirm("d_star_E", "d_star_E_min", s["d_star_E"], s["d_E_min"].max(axis=1),
                               thresholds.eps_euclid, c_confirm)

    genes = []
    for j in range(J):
        g = GeneResult(gene_ids[j], _test("d_hat", s["d_hat"][:, j], thresholds.cluster_eps(j), c_cluster))
        if g.clustering.accept:
            g.euclid, g.euclid_min = _confirm("d_E", "d_E_min", s["d_E"][:, j], s["d_E_min"][:, j],
                                              thresholds.euclid_eps(j), c_confirm)
        genes.append(g)

    interactions = []
    for a, b in zip(*np.triu_indices(J, 1)):
        interactions.append({
            "gene_a": gene_ids[a], "gene_b": gene_ids[b],
            "test": _test("|A_jj'|", np.abs(s["A"][:, a, b]), thresholds.eps_interaction, c_cluster),
        })

    notes = []
    if o_emin is not None or any(g.euclid_min is not None for g in genes):
        notes.append("permutation-minimised re-test uses the Euclidean threshold")
    return TestReport(overall, o_e, o_emin, genes, interactions, c_cluster, c_confirm, notes)
