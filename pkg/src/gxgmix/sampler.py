"""Full MCMC driver: parallel mixture sweeps, then the interaction update, every iteration.

Each iteration

1. snapshots the interaction parameters;
2. sweeps all 2J (gene, status) mixtures against that snapshot, possibly in
   worker threads;
3. waits for every sweep (barrier);
4. updates the interaction parameters by mixture TMCMC given all mixtures.

Random streams are derived from the root seed with ``SeedSequence`` spawn
keys: ``(0,)`` for the interaction sampler and ``(1, j, k)`` for mixture
``(j, k)``.  The trace therefore depends only on (seed, config, data), not on
the number of workers.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import GenotypeDataset, empirical_hyperparams
from .dpl import per_locus_distance
from .inference import clustering_distance, d_E_min, euclidean_distance, logit_mean_vector
from .interaction import (InteractionState, Layout, MixtureSummary, PriorConfig,
                          log_interaction_conditional, nu_params)
from .mixture import MixtureState, init_state, sweep
from .tmcmc import AcceptanceCounter, BlockSpec, mixture_step
from .trace import FORMAT_VERSION, Trace, TraceCorruptError, dumps, truncate_trace_file

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

DEFAULT_SCALES = {
    "lambda_control": 0.01,
    "lambda_case": 0.01,
    "u": 0.01,
    "v": 0.01,
    "sigma_chol": 0.05,
    "a_chol": 0.05,
}


class ChainAborted(RuntimeError):
    """A sweep failed; the last consistent state was checkpointed."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class RunConfig:
    M: int = 30
    alpha: float = 10.0
    iterations: int = 30000
    burn_in: int = 10000
    thin: int = 1
    workers: int = 1
    seed: int = 0
    scales: dict = field(default_factory=dict)  # overrides of DEFAULT_SCALES
    a_chol_subset: int | None = None  # entries of C1 moved per a_chol step; None -> min(J, 32)
    xi: float | None = None  # IW dof for A; None -> J + 2
    zeta: float = 4.0
    ridge: float | None = None
    cholesky_jacobian: bool = True
    store_p_star: int = 1  # keep p* every this many records; 0 = never

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.workers < 1:
            raise ValueError("thin and workers must be at least 1")
        if self.store_p_star < 0:
            raise ValueError("store_p_star must be non-negative")
        unknown = set(self.scales) - set(DEFAULT_SCALES)
        if unknown:
            raise ValueError(f"unknown scale blocks: {sorted(unknown)}")

    @property
    def n_records(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def block_scales(self) -> dict:
        return {**DEFAULT_SCALES, **self.scales}

    def identity(self) -> dict:
        """Fields that determine the trace (worker count does not)."""
        d = asdict(self)
        d.pop("workers")
        d["scales"] = self.block_scales()
        return d

    def digest(self) -> str:
        return hashlib.sha256(dumps(self.identity()).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --- chain state ----------------------------------------------------------


@dataclass
class ChainState:
    iteration: int  # completed iterations
    mixtures: list  # MixtureState, order (j, k) row-major
    interaction: InteractionState
    logp: float
    rngs: dict  # "interaction" -> Generator, (j, k) -> Generator
    counter: AcceptanceCounter
    n_records: int = 0


def _stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def build_prior(ds: GenotypeDataset, cfg: RunConfig) -> PriorConfig:
    hyp = empirical_hyperparams(ds, cfg.ridge)
    return PriorConfig(hyp.A0, hyp.Sigma0, xi=cfg.xi, zeta=cfg.zeta,
                       cholesky_jacobian=cfg.cholesky_jacobian)


def build_schedule(layout: Layout, cfg: RunConfig) -> list[BlockSpec]:
    scales = cfg.block_scales()
    sl = layout.slices()
    blocks = []
    for name in ("lambda_control", "lambda_case", "u", "v"):
        idx = np.arange(sl[name].start, sl[name].stop)
        blocks.append(BlockSpec(name, idx, scales[name], False, False))
    for name in ("sigma_chol", "a_chol"):
        idx = np.arange(sl[name].start, sl[name].stop)
        diag = layout.diagonal_mask(name)
        subset = None
        if name == "a_chol":
            subset = min(cfg.a_chol_subset or min(layout.n_genes, 32), len(idx))
        # off-diagonals move multiplicatively in the mixed kernel; diagonals stay positive
        blocks.append(BlockSpec(name, idx, scales[name], ~diag, diag, subset))
    return blocks


def initial_state(ds: GenotypeDataset, cfg: RunConfig, prior: PriorConfig) -> ChainState:
    J = ds.n_genes
    rngs = {"interaction": _stream(cfg.seed, 0)}
    mixtures = []
    for j in range(J):
        for k in (0, 1):
            rng = _stream(cfg.seed, 1, j, k)
            rngs[(j, k)] = rng
            mixtures.append(init_state(j, k, cfg.alpha, cfg.M, ds.n_arm(k), ds.loci_per_gene[j], rng))
    inter = InteractionState.initial(prior.A0, prior.Sigma0, ds.max_loci)
    logp = log_interaction_conditional(inter, mixtures, prior)
    return ChainState(0, mixtures, inter, logp, rngs, AcceptanceCounter())


# --- one iteration --------------------------------------------------------


def _sweep_task(state: MixtureState, w, snapshot: InteractionState, rng):
    nu1, nu2 = nu_params(snapshot, state.j, state.k, slice(0, w.shape[1]))
    return sweep(state, w, nu1, nu2, rng)


def iterate(chain: ChainState, data, layout, schedule, prior, pool=None) -> ChainState:
    snapshot = chain.interaction.copy()
    jobs = [(m, data[(m.j, m.k)], snapshot, chain.rngs[(m.j, m.k)]) for m in chain.mixtures]
    if pool is None:
        mixtures = [_sweep_task(*job) for job in jobs]
    else:
        mixtures = list(pool.map(lambda job: _sweep_task(*job), jobs))
    summaries = [MixtureSummary.of(m) for m in mixtures]

    def target(x):
        return log_interaction_conditional(layout.unflatten(x, snapshot.mu), summaries, prior)

    logp = log_interaction_conditional(snapshot, summaries, prior)
    x, logp = mixture_step(target, schedule, layout.flatten(snapshot), chain.rngs["interaction"],
                           logp, chain.counter)
    return ChainState(chain.iteration + 1, mixtures, layout.unflatten(x, snapshot.mu), logp,
                      chain.rngs, chain.counter, chain.n_records)


def record_statistics(mixtures, J: int) -> dict:
    by = {(m.j, m.k): m for m in mixtures}
    d_hat, d_e, d_emin, loc = [], [], [], []
    for j in range(J):
        c, a = by[(j, 0)], by[(j, 1)]
        d_hat.append(clustering_distance(c.C, a.C))
        v0, v1 = logit_mean_vector(c.slot_probs()), logit_mean_vector(a.slot_probs())
        d_e.append(euclidean_distance(v0, v1))
        d_emin.append(d_E_min(v0, v1))
        loc.append(per_locus_distance(c, a).tolist())
    return {"d_hat": d_hat, "d_E": d_e, "d_E_min": d_emin, "locus_distance": loc}


def make_record(chain: ChainState, J: int, with_p_star: bool) -> dict:
    s = chain.interaction
    rec = {
        "iteration": chain.iteration,
        "C": [[m.C.tolist() for m in chain.mixtures[2 * j: 2 * j + 2]] for j in range(J)],
        "tau": [[m.tau for m in chain.mixtures[2 * j: 2 * j + 2]] for j in range(J)],
        "interaction": {
            "Lambda": s.Lambda.tolist(), "u": s.u.tolist(), "v": s.v.tolist(),
            "A": s.A.tolist(), "Sigma": s.Sigma.tolist(),
        },
        "stats": record_statistics(chain.mixtures, J),
        "acceptance": chain.counter.as_dict(),
    }
    if with_p_star:
        rec["p_star"] = [[m.p_star.tolist() for m in chain.mixtures[2 * j: 2 * j + 2]] for j in range(J)]
    return rec


# --- checkpoints ----------------------------------------------------------


def _rng_key(key):
    return "interaction" if key == "interaction" else f"{key[0]},{key[1]}"


def save_checkpoint(path, chain: ChainState, cfg: RunConfig, ds: GenotypeDataset, layout: Layout):
    payload = {
        "version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "config_hash": cfg.digest(),
        "dataset_hash": ds.fingerprint(),
        "iteration": chain.iteration,
        "n_records": chain.n_records,
        "logp": chain.logp,
        "interaction": layout.flatten(chain.interaction).tolist(),
        "mu": chain.interaction.mu.tolist(),
        "mixtures": [{"j": m.j, "k": m.k, "z": m.z.tolist(), "C": m.C.tolist(),
                      "p_star": m.p_star.tolist()} for m in chain.mixtures],
        "rng": {_rng_key(k): g.bit_generator.state for k, g in chain.rngs.items()},
        "acceptance": chain.counter.as_dict(),
    }
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps(payload) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path, cfg: RunConfig, ds: GenotypeDataset, layout: Layout) -> ChainState:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.loads(fh.read())
    except json.JSONDecodeError as exc:
        raise TraceCorruptError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise TraceCorruptError(f"checkpoint {path}: unsupported version")
    if payload["config_hash"] != cfg.digest():
        raise ValueError("checkpoint was written with a different configuration")
    if payload["dataset_hash"] != ds.fingerprint():
        raise ValueError("checkpoint was written for a different dataset")
    rngs = {}
    for key, state in payload["rng"].items():
        g = np.random.Generator(np.random.PCG64())
        g.bit_generator.state = state
        rngs["interaction" if key == "interaction" else tuple(int(t) for t in key.split(","))] = g
    mixtures = [MixtureState(m["j"], m["k"], cfg.alpha, np.array(m["z"], dtype=np.int64),
                             np.array(m["C"], dtype=np.int64), np.array(m["p_star"], dtype=float))
                for m in payload["mixtures"]]
    inter = layout.unflatten(np.array(payload["interaction"], dtype=float), np.array(payload["mu"], dtype=float))
    return ChainState(payload["iteration"], mixtures, inter, payload["logp"], rngs,
                      AcceptanceCounter(payload["acceptance"]), payload["n_records"])


# --- driver ---------------------------------------------------------------


def trace_header(ds: GenotypeDataset, cfg: RunConfig) -> dict:
    return {
        "version": FORMAT_VERSION,
        "package_version": __version__,
        "config_hash": cfg.digest(),
        "dataset_hash": ds.fingerprint(),
        "config": cfg.identity(),
        "genes": [g.gene_id for g in ds.genes],
        "loci": [list(g.locus_ids) for g in ds.genes],
    }


def run_chain(ds: GenotypeDataset, cfg: RunConfig, trace_path=None, checkpoint_path=None,
              resume=None, checkpoint_every: int | None = None, stop_after: int | None = None,
              progress=None) -> Trace:
    """Run (or resume) the sampler and return the retained trace.

    Parameters
    ----------
    trace_path : path, optional
        NDJSON trace written incrementally.
    checkpoint_path : path, optional
        Written every ``checkpoint_every`` iterations, at the end and on abort.
    resume : path, optional
        Checkpoint to continue from; ``trace_path`` is cut back to the
        records the checkpoint accounts for.
    stop_after : int, optional
        Stop after this many completed iterations (for interrupting runs).
    progress : callable, optional
        Called as ``progress(iteration, chain)`` after every iteration.
    """
    ds.require_both_arms()
    J = ds.n_genes
    prior = build_prior(ds, cfg)
    layout = Layout(J, ds.max_loci)
    schedule = build_schedule(layout, cfg)
    data = {(j, k): ds.counts(j, k).astype(float) for j in range(J) for k in (0, 1)}
    header = trace_header(ds, cfg)
    trace = Trace(header)

    if resume is not None:
        chain = load_checkpoint(resume, cfg, ds, layout)
        if trace_path is not None and Path(trace_path).exists():
            truncate_trace_file(trace_path, chain.n_records)
            previous = Trace.load(trace_path)
            if previous.header != header:
                raise ValueError("trace header does not match the resumed run")
            trace.records = previous.records
    else:
        chain = initial_state(ds, cfg, prior)
    if trace_path is not None and (resume is None or not Path(trace_path).exists()):
        Path(trace_path).write_text(trace.header_line() + "\n", encoding="utf-8")

    end = cfg.iterations if stop_after is None else min(cfg.iterations, stop_after)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    out = open(trace_path, "a", encoding="utf-8", newline="\n") if trace_path is not None else None
    try:
        while chain.iteration < end:
            rng_states = {key: g.bit_generator.state for key, g in chain.rngs.items()}
            counts = chain.counter.as_dict()
            try:
                nxt = iterate(chain, data, layout, schedule, prior, pool)
            except Exception as exc:
                # roll streams and counters back to the start of the failed iteration
                for key, state in rng_states.items():
                    chain.rngs[key].bit_generator.state = state
                chain.counter.counts = counts
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, chain, cfg, ds, layout)
                raise ChainAborted(f"iteration {chain.iteration + 1} failed: {exc}",
                                   checkpoint_path) from exc
            chain = nxt
            t = chain.iteration
            if t > cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
                keep_p = cfg.store_p_star > 0 and chain.n_records % cfg.store_p_star == 0
                rec = make_record(chain, J, keep_p)
                trace.append(rec)
                chain.n_records += 1
                if out is not None:
                    out.write(dumps(rec) + "\n")
            if checkpoint_path is not None and checkpoint_every and t % checkpoint_every == 0:
                if out is not None:
                    out.flush()
                save_checkpoint(checkpoint_path, chain, cfg, ds, layout)
            if progress is not None:
                progress(t, chain)
    finally:
        if out is not None:
            out.close()
        if pool is not None:
            pool.shutdown()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, chain, cfg, ds, layout)
    trace.final_state = chain
    return trace
