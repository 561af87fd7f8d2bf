"""Shared builders for tests."""
import numpy as np

from gxgmix.trace import FORMAT_VERSION, Trace


def synthetic_trace(d_hat, d_E, d_E_min=None, A=None, locus_distance=None, gene_ids=None):
    """A trace holding only the statistics the tests and scan read; arrays are (records, genes)."""
    d_hat = np.asarray(d_hat, float)
    if d_hat.ndim == 1:  # one gene
        d_hat = d_hat[:, None]
    d_E = np.asarray(d_E, float).reshape(d_hat.shape)
    d_E_min = d_E if d_E_min is None else np.asarray(d_E_min, float).reshape(d_hat.shape)
    R, J = d_hat.shape
    if A is None:
        A = np.tile(np.eye(J), (R, 1, 1))
    gene_ids = gene_ids or [f"g{j + 1}" for j in range(J)]
    if locus_distance is None:
        locus_distance = [np.zeros((R, 1)) for _ in range(J)]
    header = {"version": FORMAT_VERSION, "genes": gene_ids,
              "loci": [[f"{g}_r{r + 1}" for r in range(locus_distance[j].shape[1])]
                       for j, g in enumerate(gene_ids)]}
    trace = Trace(header)
    for t in range(R):
        trace.append({
            "iteration": t + 1,
            "tau": [[1, 1]] * J,
            "interaction": {"A": np.asarray(A[t]).tolist()},
            "stats": {"d_hat": d_hat[t].tolist(), "d_E": d_E[t].tolist(), "d_E_min": d_E_min[t].tolist(),
                      "locus_distance": [locus_distance[j][t].tolist() for j in range(J)]},
        })
    return trace
