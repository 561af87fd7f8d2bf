"""Posterior trace: newline-delimited JSON, one header line then one record per retained iteration.

Every record is self-contained: configuration vectors, cluster counts,
optionally the distinct probability vectors, the interaction parameters and
the derived test statistics of that iteration.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class TraceCorruptError(ValueError):
    """Raised when a trace or checkpoint file cannot be parsed."""


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


class Trace:
    """In-memory view of a posterior trace with array accessors for the statistics."""

    def __init__(self, header: dict, records=None):
        self.header = header
        self.records = list(records or [])
        self._stats = None

    def __len__(self):
        return len(self.records)

    @property
    def gene_ids(self) -> list[str]:
        return list(self.header["genes"])

    @property
    def locus_ids(self) -> list[list[str]]:
        return [list(ls) for ls in self.header["loci"]]

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r["iteration"] for r in self.records], dtype=np.int64)

    def append(self, record: dict):
        if self.records and record["iteration"] <= self.records[-1]["iteration"]:
            raise ValueError("trace records must be strictly increasing in iteration")
        self.records.append(record)
        self._stats = None

    def statistics(self) -> dict[str, np.ndarray]:
        """Arrays over records: d_hat, d_E, d_E_min (R, J); d_star, d_star_E (R,); A (R, J, J); tau (R, J, 2)."""
        if self._stats is None:
            st = [r["stats"] for r in self.records]
            J = len(self.gene_ids)
            out = {
                "d_hat": np.array([s["d_hat"] for s in st], dtype=float).reshape(-1, J),
                "d_E": np.array([s["d_E"] for s in st], dtype=float).reshape(-1, J),
                "d_E_min": np.array([s["d_E_min"] for s in st], dtype=float).reshape(-1, J),
                "A": np.array([r["interaction"]["A"] for r in self.records], dtype=float).reshape(-1, J, J),
                "tau": np.array([r["tau"] for r in self.records], dtype=np.int64).reshape(-1, J, 2),
            }
            out["d_star"] = out["d_hat"].max(axis=1) if len(st) else np.zeros(0)
            out["d_star_E"] = out["d_E"].max(axis=1) if len(st) else np.zeros(0)
            self._stats = out
        return self._stats

    def mean_locus_distance(self) -> list[np.ndarray]:
        J = len(self.gene_ids)
        return [np.mean([r["stats"]["locus_distance"][j] for r in self.records], axis=0)
                for j in range(J)]

    # --- persistence ------------------------------------------------------

    def header_line(self) -> str:
        return dumps({"type": "header", **self.header})

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.header_line() + "\n")
            for r in self.records:
                fh.write(dumps(r) + "\n")

    @classmethod
    def load(cls, path) -> "Trace":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        if text and not text.endswith("\n"):
            raise TraceCorruptError(f"{path}: truncated final line")
        lines = text.splitlines()
        if not lines:
            raise TraceCorruptError(f"{path}: empty trace")
        try:
            header = json.loads(lines[0])
            records = [json.loads(line) for line in lines[1:]]
        except json.JSONDecodeError as exc:
            raise TraceCorruptError(f"{path}: {exc}") from None
        if header.pop("type", None) != "header":
            raise TraceCorruptError(f"{path}: missing header line")
        if header.get("version") != FORMAT_VERSION:
            raise TraceCorruptError(f"{path}: unsupported trace version {header.get('version')}")
        trace = cls(header)
        for r in records:
            trace.append(r)
        return trace


def truncate_trace_file(path, n_records: int):
    """Keep the header and the first ``n_records`` records of a trace file."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if len(lines) < n_records + 1:
        raise TraceCorruptError(f"{path}: has {len(lines) - 1} records, checkpoint expects {n_records}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines[: n_records + 1])
