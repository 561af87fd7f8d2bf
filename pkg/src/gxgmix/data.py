"""Genotype data containers, TSV I/O and empirical inverse-Wishart scales.

Genotypes are stored as minor-allele counts ``w`` in {0, 1, 2}.  The
per-chromosome indicator pairs are recovered on demand: a count of 2 maps to
(1, 1), a count of 1 to (1, 0) and a count of 0 to (0, 0).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GENE_MAP_HEADER = ("locus_id", "gene_id")


class GenotypeFormatError(ValueError):
    """Raised for malformed genotype or gene-map files."""


@dataclass(frozen=True)
class Gene:
    gene_id: str
    locus_ids: tuple[str, ...]
    columns: tuple[int, ...]  # positions in the genotype file's locus columns

    @property
    def n_loci(self) -> int:
        return len(self.locus_ids)


@dataclass(frozen=True)
class GenotypeDataset:
    """Case-control genotype counts grouped by gene.

    Row and column order of the source file are kept so that the dataset can
    be written back unchanged.  Arm-level views (``counts(j, k)``) list the
    individuals of status ``k`` in file order.
    """

    ids: tuple[str, ...]
    status: np.ndarray  # (n_individuals,) int8 in {0, 1}
    locus_ids: tuple[str, ...]  # genotype file column order
    genotypes: np.ndarray  # (n_individuals, n_loci) int8 counts, file order
    genes: tuple[Gene, ...]
    _arm_rows: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        status = np.asarray(self.status, dtype=np.int8)
        geno = np.asarray(self.genotypes, dtype=np.int8)
        if geno.shape != (len(self.ids), len(self.locus_ids)):
            raise ValueError("genotype matrix shape does not match ids/loci")
        if not np.isin(status, (0, 1)).all():
            raise GenotypeFormatError("status outside {0,1}")
        if geno.size and (geno.min() < 0 or geno.max() > 2):
            raise GenotypeFormatError("invalid allele count")
        if not self.genes:
            raise ValueError("dataset needs at least one gene")
        status.setflags(write=False)
        geno.setflags(write=False)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "genotypes", geno)
        rows = tuple(np.flatnonzero(status == k) for k in (0, 1))
        object.__setattr__(self, "_arm_rows", rows)

    @property
    def n_controls(self) -> int:
        return len(self._arm_rows[0])

    @property
    def n_cases(self) -> int:
        return len(self._arm_rows[1])

    def n_arm(self, k: int) -> int:
        return len(self._arm_rows[k])

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    @property
    def loci_per_gene(self) -> list[int]:
        return [g.n_loci for g in self.genes]

    @property
    def max_loci(self) -> int:
        return max(self.loci_per_gene)

    def counts(self, j: int, k: int) -> np.ndarray:
        """Minor-allele counts ``w`` for gene ``j`` and status ``k``, shape (N_k, L_j)."""
        rows = self._arm_rows[k]
        cols = np.asarray(self.genes[j].columns)
        return self.genotypes[np.ix_(rows, cols)]

    def indicators(self, j: int, k: int) -> np.ndarray:
        """Indicator pairs ``x`` of shape (N_k, L_j, 2)."""
        w = self.counts(j, k)
        return np.stack([(w >= 1), (w == 2)], axis=-1).astype(np.int8)

    def require_both_arms(self):
        if self.n_controls == 0 or self.n_cases == 0:
            raise GenotypeFormatError(
                f"empty cohort: {self.n_controls} controls, {self.n_cases} cases")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\t".join(self.ids).encode())
        h.update("\t".join(self.locus_ids).encode())
        for g in self.genes:
            h.update(g.gene_id.encode() + b"\0" + "\t".join(g.locus_ids).encode())
        h.update(self.status.tobytes())
        h.update(self.genotypes.tobytes())
        return h.hexdigest()[:16]


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_gene_map(path) -> list[tuple[str, str]]:
    pairs = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 2:
            raise GenotypeFormatError(f"{path}:{lineno}: expected locus_id<TAB>gene_id")
        if not pairs and tuple(fields) == GENE_MAP_HEADER:
            continue
        pairs.append((fields[0], fields[1]))
    return pairs


def group_by_gene(locus_ids, gene_map) -> tuple[Gene, ...]:
    """Group genotype columns by gene, genes and loci in gene-map order."""
    col_of = {lid: c for c, lid in enumerate(locus_ids)}
    mapped = {lid for lid, _ in gene_map}
    unknown = [lid for lid in locus_ids if lid not in mapped]
    if unknown:
        raise GenotypeFormatError(f"unknown locus in genotype header: {unknown[0]}")
    order: dict[str, list[str]] = {}
    for lid, gid in gene_map:
        if lid in col_of:
            order.setdefault(gid, []).append(lid)
    return tuple(
        Gene(gid, tuple(lids), tuple(col_of[l] for l in lids))
        for gid, lids in order.items()
    )


def load_genotypes(genotype_path, gene_map_path) -> GenotypeDataset:
    """Read a genotype TSV and its locus-to-gene map.

    The genotype file has header ``id, status, <locus ids...>`` and one row per
    individual with counts in {0, 1, 2}.  Lines starting with ``#`` are
    ignored in both files.
    """
    lines = _data_lines(genotype_path)
    try:
        _, header = next(lines)
    except StopIteration:
        raise GenotypeFormatError(f"{genotype_path}: no header") from None
    if len(header) < 3 or header[:2] != ["id", "status"]:
        raise GenotypeFormatError(f"{genotype_path}: header must start with id<TAB>status")
    locus_ids = tuple(header[2:])
    if len(set(locus_ids)) != len(locus_ids):
        raise GenotypeFormatError(f"{genotype_path}: duplicate locus ids")

    ids, status, rows = [], [], []
    for lineno, fields in lines:
        if len(fields) != len(header):
            raise GenotypeFormatError(
                f"{genotype_path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        if fields[1] not in ("0", "1"):
            raise GenotypeFormatError(f"{genotype_path}:{lineno}: status outside {{0,1}}")
        try:
            row = [int(c) for c in fields[2:]]
        except ValueError:
            raise GenotypeFormatError(f"{genotype_path}:{lineno}: invalid allele count") from None
        if any(c not in (0, 1, 2) for c in row):
            raise GenotypeFormatError(f"{genotype_path}:{lineno}: invalid allele count")
        ids.append(fields[0])
        status.append(int(fields[1]))
        rows.append(row)
    if not rows:
        raise GenotypeFormatError(f"{genotype_path}: empty cohort")

    genes = group_by_gene(locus_ids, read_gene_map(gene_map_path))
    return GenotypeDataset(
        ids=tuple(ids),
        status=np.array(status, dtype=np.int8),
        locus_ids=locus_ids,
        genotypes=np.array(rows, dtype=np.int8).reshape(len(rows), len(locus_ids)),
        genes=genes,
    )


def write_dataset(ds: GenotypeDataset, genotype_path, gene_map_path=None):
    """Write ``ds`` in the format read by :func:`load_genotypes`."""
    with open(genotype_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(("id", "status") + ds.locus_ids) + "\n")
        for ident, k, row in zip(ds.ids, ds.status, ds.genotypes):
            fh.write("\t".join([ident, str(int(k))] + [str(int(c)) for c in row]) + "\n")
    if gene_map_path is not None:
        with open(gene_map_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(GENE_MAP_HEADER) + "\n")
            for g in ds.genes:
                for lid in g.locus_ids:
                    fh.write(f"{lid}\t{g.gene_id}\n")


def dataset_from_arms(arms, gene_ids=None, locus_ids=None) -> GenotypeDataset:
    """Build a dataset from per-gene arm count matrices.

    ``arms[j][k]`` is the (N_k, L_j) count matrix of gene ``j`` and status
    ``k``.  Controls are written before cases.
    """
    n_genes = len(arms)
    n0, n1 = arms[0][0].shape[0], arms[0][1].shape[0]
    gene_ids = gene_ids or [f"g{j + 1}" for j in range(n_genes)]
    loci = [arms[j][0].shape[1] for j in range(n_genes)]
    if locus_ids is None:
        locus_ids = [[f"{gene_ids[j]}_r{r + 1}" for r in range(loci[j])] for j in range(n_genes)]
    flat_ids = tuple(l for ls in locus_ids for l in ls)
    geno = np.concatenate(
        [np.concatenate([np.asarray(arms[j][k]) for j in range(n_genes)], axis=1) for k in (0, 1)],
        axis=0,
    )
    genes, start = [], 0
    for j in range(n_genes):
        genes.append(Gene(gene_ids[j], tuple(locus_ids[j]), tuple(range(start, start + loci[j]))))
        start += loci[j]
    ids = tuple(f"ind{i + 1}" for i in range(n0 + n1))
    status = np.r_[np.zeros(n0, np.int8), np.ones(n1, np.int8)]
    return GenotypeDataset(ids, status, flat_ids, geno, tuple(genes))


# --- empirical hyperparameters --------------------------------------------


@dataclass(frozen=True)
class EmpiricalHyperparams:
    A0: np.ndarray  # (J, J)
    Sigma0: np.ndarray  # (2, 2)
    ridge_A: float = 0.0  # magnitude added to A0's diagonal, 0 if none
    ridge_Sigma: float = 0.0

    @property
    def ridge_applied(self) -> bool:
        return self.ridge_A > 0 or self.ridge_Sigma > 0


def is_positive_definite(a: np.ndarray, rtol: float = 1e-12) -> bool:
    eig = np.linalg.eigvalsh(a)
    return bool(eig[0] > rtol * max(1.0, abs(eig[-1])))


def default_ridge(a: np.ndarray) -> float:
    return 1e-6 * max(1.0, float(np.trace(a)) / a.shape[0])


def _regularize(a, ridge):
    if is_positive_definite(a):
        return a, 0.0
    eps = default_ridge(a) if ridge is None else float(ridge)
    if eps <= 0:
        raise ValueError("matrix is not positive definite and ridge is zero")
    return a + eps * np.eye(a.shape[0]), eps


def mean_counts(ds: GenotypeDataset, k: int) -> np.ndarray:
    """Per-individual mean minor-allele count over each gene's loci, shape (N_k, J)."""
    return np.column_stack([ds.counts(j, k).mean(axis=1) for j in range(ds.n_genes)])


def empirical_hyperparams(ds: GenotypeDataset, ridge: float | None = None) -> EmpiricalHyperparams:
    """Data-driven scale matrices for the inverse-Wishart priors on A and Sigma.

    ``A0`` is the between-gene covariance of per-individual mean counts over
    the pooled cohort.  ``Sigma0`` is the between-arm covariance over genes,
    pairing the first ``N = min(N0, N1)`` individuals of each arm in file
    order; each arm's centre uses all of that arm's individuals.

    A matrix that is not positive definite gets ``ridge * I`` added
    (``ridge=None`` means ``1e-6 * max(1, trace/dim)``).
    """
    ds.require_both_arms()
    wbar = [mean_counts(ds, 0), mean_counts(ds, 1)]
    pooled = np.vstack(wbar)
    dev = pooled - pooled.mean(axis=0)
    A0 = dev.T @ dev / pooled.shape[0]

    n = min(ds.n_controls, ds.n_cases)
    J = ds.n_genes
    centres = [wbar[k].mean() for k in (0, 1)]
    paired = np.stack([wbar[k][:n] - centres[k] for k in (0, 1)], axis=-1)  # (n, J, 2)
    Sigma0 = np.einsum("ijk,ijl->kl", paired, paired) / (n * J)

    A0, ra = _regularize(A0, ridge)
    Sigma0, rs = _regularize(Sigma0, ridge)
    return EmpiricalHyperparams(A0=A0, Sigma0=Sigma0, ridge_A=ra, ridge_Sigma=rs)


def dataset_dims(ds: GenotypeDataset) -> dict:
    return {
        "genes": [g.gene_id for g in ds.genes],
        "loci": [list(g.locus_ids) for g in ds.genes],
        "n_controls": ds.n_controls,
        "n_cases": ds.n_cases,
    }


def write_tsv_rows(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")
