import json

import numpy as np
import pytest

from gxgmix import sampler
from gxgmix.sampler import ChainAborted, RunConfig, build_schedule, run_chain
from gxgmix.interaction import Layout
from gxgmix.simulate import simulate_null
from gxgmix.trace import Trace, TraceCorruptError


@pytest.fixture(scope="module")
def ds():
    return simulate_null(2, [5, 3], 15, 12, 1.5, 6, seed=1).dataset


def cfg(**kw):
    base = dict(M=6, alpha=1.5, iterations=30, burn_in=10, seed=7)
    base.update(kw)
    return RunConfig(**base)


def test_record_count_and_thin(ds, tmp_path):
    tr = run_chain(ds, cfg(thin=3), trace_path=tmp_path / "t.ndjson")
    assert len(tr) == 20 // 3
    assert len((tmp_path / "t.ndjson").read_text().splitlines()) == 1 + 20 // 3
    assert tr.iterations.tolist() == [13, 16, 19, 22, 25, 28]


def test_one_retained_iteration(ds):
    assert len(run_chain(ds, cfg(iterations=11, burn_in=10))) == 1


def test_single_slot_gives_single_cluster(ds):
    tr = run_chain(ds, cfg(M=1))
    assert all(t == [[1, 1], [1, 1]] for t in (r["tau"] for r in tr.records))


def test_record_contents(ds):
    rec = run_chain(ds, cfg(iterations=12)).records[0]
    assert set(rec) >= {"iteration", "C", "tau", "interaction", "stats", "acceptance", "p_star"}
    for j in range(2):
        for k in (0, 1):
            assert max(rec["C"][j][k]) + 1 == rec["tau"][j][k] == len(rec["p_star"][j][k])
    A = np.array(rec["interaction"]["A"])
    assert np.all(np.linalg.eigvalsh(A) > 0)
    assert all(0 <= d <= 1 for d in rec["stats"]["d_hat"])
    assert all(a >= b - 1e-12 for a, b in zip(rec["stats"]["d_E"], rec["stats"]["d_E_min"]))
    for name, (acc, prop) in rec["acceptance"].items():
        assert 0 <= acc <= prop <= 12


def test_store_p_star_interval(ds):
    tr = run_chain(ds, cfg(store_p_star=4))
    assert [("p_star" in r) for r in tr.records[:5]] == [True, False, False, False, True]
    assert all("p_star" not in r for r in run_chain(ds, cfg(store_p_star=0)).records)


def test_schedule_kinds():
    layout = Layout(3, 4)
    blocks = {b.name: b for b in build_schedule(layout, cfg())}
    assert blocks["a_chol"].subset_size == 3
    assert blocks["sigma_chol"].multiplicative is not None


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_does_not_change_trace(ds, tmp_path, workers):
    run_chain(ds, cfg(), trace_path=tmp_path / "a")
    run_chain(ds, cfg(workers=workers), trace_path=tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_resume_matches_uninterrupted(ds, tmp_path):
    run_chain(ds, cfg(), trace_path=tmp_path / "ref")
    ck = tmp_path / "ck"
    run_chain(ds, cfg(), trace_path=tmp_path / "t", checkpoint_path=ck, stop_after=17)
    run_chain(ds, cfg(), trace_path=tmp_path / "t", checkpoint_path=ck, resume=ck)
    assert (tmp_path / "t").read_bytes() == (tmp_path / "ref").read_bytes()


def test_resume_after_stale_trace_lines(ds, tmp_path):
    """Records written after the checkpoint are discarded and regenerated."""
    run_chain(ds, cfg(), trace_path=tmp_path / "ref")
    ck15 = tmp_path / "ck15"
    run_chain(ds, cfg(), checkpoint_path=ck15, stop_after=15)
    run_chain(ds, cfg(), trace_path=tmp_path / "t", stop_after=25)
    run_chain(ds, cfg(), trace_path=tmp_path / "t", resume=ck15)
    assert (tmp_path / "t").read_bytes() == (tmp_path / "ref").read_bytes()


def test_resume_from_start(ds, tmp_path):
    run_chain(ds, cfg(), trace_path=tmp_path / "ref")
    ck = tmp_path / "ck"
    run_chain(ds, cfg(), trace_path=tmp_path / "t", checkpoint_path=ck, stop_after=0)
    assert json.loads(ck.read_text())["iteration"] == 0
    run_chain(ds, cfg(), trace_path=tmp_path / "t", resume=ck)
    assert (tmp_path / "t").read_bytes() == (tmp_path / "ref").read_bytes()


def test_abort_writes_resumable_checkpoint(ds, tmp_path, monkeypatch):
    run_chain(ds, cfg(), trace_path=tmp_path / "ref")
    real = sampler._sweep_task
    calls = {"n": 0}

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] == 4 * 12 + 2:  # second mixture of iteration 13
            raise FloatingPointError("boom")
        return real(*args)

    monkeypatch.setattr(sampler, "_sweep_task", flaky)
    ck = tmp_path / "ck"
    with pytest.raises(ChainAborted) as err:
        run_chain(ds, cfg(), trace_path=tmp_path / "t", checkpoint_path=ck)
    assert err.value.checkpoint == ck
    assert json.loads(ck.read_text())["iteration"] == 12
    monkeypatch.setattr(sampler, "_sweep_task", real)
    run_chain(ds, cfg(), trace_path=tmp_path / "t", checkpoint_path=ck, resume=ck)
    assert (tmp_path / "t").read_bytes() == (tmp_path / "ref").read_bytes()


def test_corrupt_checkpoint(ds, tmp_path):
    ck = tmp_path / "ck"
    run_chain(ds, cfg(), checkpoint_path=ck, stop_after=5)
    ck.write_text(ck.read_text()[:100])
    with pytest.raises(TraceCorruptError):
        run_chain(ds, cfg(), resume=ck)


def test_checkpoint_mismatch(ds, tmp_path):
    ck = tmp_path / "ck"
    run_chain(ds, cfg(), checkpoint_path=ck, stop_after=5)
    with pytest.raises(ValueError, match="configuration"):
        run_chain(ds, cfg(seed=8), resume=ck)
    other = simulate_null(2, [5, 3], 15, 12, 1.5, 6, seed=2).dataset
    with pytest.raises(ValueError, match="dataset"):
        run_chain(other, cfg(), resume=ck)
    payload = json.loads(ck.read_text())
    payload["version"] = 99
    ck.write_text(json.dumps(payload))
    with pytest.raises(TraceCorruptError):
        run_chain(ds, cfg(), resume=ck)


def test_truncated_trace_detected(ds, tmp_path):
    path = tmp_path / "t"
    run_chain(ds, cfg(), trace_path=path)
    text = path.read_text()
    path.write_text(text[:-40])
    with pytest.raises(TraceCorruptError):
        Trace.load(path)


def test_trace_reload_equals_memory(ds, tmp_path):
    tr = run_chain(ds, cfg(), trace_path=tmp_path / "t")
    back = Trace.load(tmp_path / "t")
    assert back.header == tr.header
    for key, val in tr.statistics().items():
        np.testing.assert_array_equal(back.statistics()[key], val)


@pytest.mark.parametrize("bad", [dict(M=0), dict(alpha=0), dict(burn_in=30), dict(thin=0),
                                 dict(workers=0), dict(scales={"nope": 1.0})])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        cfg(**bad)


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.from_dict({"iterations": 10, "burn_in": 1, "foo": 1})


def test_config_digest_ignores_workers():
    assert cfg(workers=1).digest() == cfg(workers=8).digest()
    assert cfg(seed=1).digest() != cfg(seed=2).digest()


def test_requires_both_arms(tmp_path):
    from gxgmix.data import load_genotypes
    geno = tmp_path / "g.tsv"
    geno.write_text("id\tstatus\tg1_r1\nind1\t0\t1\nind2\t0\t2\n")
    gmap = tmp_path / "m.tsv"
    gmap.write_text("locus_id\tgene_id\ng1_r1\tg1\n")
    ds_one = load_genotypes(geno, gmap)
    with pytest.raises(ValueError):
        run_chain(ds_one, cfg())
