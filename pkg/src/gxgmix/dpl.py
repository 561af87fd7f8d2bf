"""Per-locus case-control divergence scan for candidate disease-predisposing loci."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_tsv_rows


def _logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def per_locus_distance(control, case) -> np.ndarray:
    """Distance at every locus between control and case mixture states.

    For locus ``r`` this is the Euclidean distance between the length-M
    vectors of slot-wise ``logit p`` in the two arms, with distinct vectors
    expanded to all M slots through the configuration vectors.
    """
    diff = _logit(control.slot_probs()) - _logit(case.slot_probs())
    return np.sqrt(np.sum(diff * diff, axis=0))


@dataclass
class LocusScore:
    gene_id: str
    locus_index: int  # 0-based within the gene
    locus_id: str
    mean_distance: float
    rank: int  # 1 = largest distance in the gene
    cutoff: float
    flagged: bool


def top_cutoff(values, q: float) -> float:
    """The ``ceil(q * L)``-th largest value; loci at or above it are flagged."""
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    x = np.sort(np.asarray(values, dtype=float))[::-1]
    n_top = max(1, math.ceil(q * len(x) - 1e-9))
    return float(x[n_top - 1])


def gene_scores(gene_id, locus_ids, mean_distance, q: float) -> list[LocusScore]:
    d = np.asarray(mean_distance, dtype=float)
    cut = top_cutoff(d, q)
    order = np.argsort(-d, kind="stable")
    rank = np.empty(len(d), dtype=int)
    rank[order] = np.arange(1, len(d) + 1)
    return [LocusScore(gene_id, r, locus_ids[r], float(d[r]), int(rank[r]), cut, bool(d[r] >= cut))
            for r in range(len(d))]


def scan(trace, q: float = 0.02, min_records: int = 100) -> dict[str, list[LocusScore]]:
    """Average per-locus distances over retained records and flag the top fraction ``q`` per gene."""
    n = len(trace)
    if n < min_records:
        raise ValueError(f"{n} retained records; need at least {min_records}")
    means = trace.mean_locus_distance()
    out = {}
    for j, gene_id in enumerate(trace.gene_ids):
        out[gene_id] = gene_scores(gene_id, trace.locus_ids[j], means[j], q)
    return out


def write_scan(scores: dict[str, list[LocusScore]], out_dir) -> list[Path]:
    """One ``dpl_<gene_id>.tsv`` per gene; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for gene_id, rows in scores.items():
        path = out_dir / f"dpl_{gene_id}.tsv"
        write_tsv_rows(path, ["locus_index", "locus_id", "mean_distance", "cutoff", "flagged"],
                       [[s.locus_index, s.locus_id, repr(s.mean_distance), repr(s.cutoff), int(s.flagged)]
                        for s in rows])
        paths.append(path)
    return paths
