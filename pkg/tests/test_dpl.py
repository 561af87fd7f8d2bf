import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gxgmix.dpl import per_locus_distance, scan, top_cutoff, write_scan
from gxgmix.mixture import MixtureState

from .helpers import synthetic_trace


def _mix(C, p_star, k=0):
    return MixtureState(0, k, 1.0, np.zeros(0, dtype=int), np.asarray(C), np.asarray(p_star, float))


def test_identical_states_give_zero():
    m = _mix([0, 1, 0], [[0.2, 0.7], [0.4, 0.5]])
    np.testing.assert_array_equal(per_locus_distance(m, m), 0.0)


def test_single_slot_hand_value():
    p1 = math.e / (1 + math.e)  # logit 1
    d = per_locus_distance(_mix([0], [[0.5]]), _mix([0], [[p1]], k=1))
    assert d[0] == pytest.approx(1.0, abs=1e-12)


def test_invariant_to_cluster_relabeling():
    a = _mix([0, 1, 1], [[0.1, 0.3], [0.6, 0.9]])
    a_relabel = _mix([1, 0, 0], [[0.6, 0.9], [0.1, 0.3]])
    b = _mix([0, 0, 1], [[0.5, 0.5], [0.2, 0.8]], k=1)
    np.testing.assert_array_equal(per_locus_distance(a, b), per_locus_distance(a_relabel, b))


def test_q_one_flags_all():
    assert top_cutoff([3.0, 1.0, 2.0], 1.0) == 1.0
    with pytest.raises(ValueError):
        top_cutoff([1.0], 0.0)
    with pytest.raises(ValueError):
        top_cutoff([1.0], 1.5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=60, unique=True),
       st.floats(0.01, 1.0))
def test_flag_count_and_order_invariance(values, q):
    x = np.array(values)
    cut = top_cutoff(x, q)
    assert np.sum(x >= cut) == max(1, math.ceil(q * len(x) - 1e-9))
    assert top_cutoff(x[::-1], q) == cut


def _trace_with_loci(R, loci, planted=None):
    rng = np.random.default_rng(0)
    ld = [rng.random((R, L)) for L in loci]
    if planted is not None:
        ld[planted[0]][:, planted[1]] += 5
    return synthetic_trace(np.zeros((R, len(loci))), np.zeros((R, len(loci))), locus_distance=ld)


def test_scan_flags_planted_locus_and_writes_files(tmp_path):
    scores = scan(_trace_with_loci(100, [50, 1], planted=(0, 17)), q=0.02)
    flagged = [s.locus_index for s in scores["g1"] if s.flagged]
    assert flagged == [17]
    assert len(scores["g2"]) == 1 and scores["g2"][0].flagged
    paths = write_scan(scores, tmp_path)
    lines = paths[0].read_text().splitlines()
    assert lines[0].split("\t") == ["locus_index", "locus_id", "mean_distance", "cutoff", "flagged"]
    assert len(lines) == 51
    assert len(paths[1].read_text().splitlines()) == 2


def test_scan_ranks():
    scores = scan(_trace_with_loci(100, [10], planted=(0, 3)))["g1"]
    assert sorted(s.rank for s in scores) == list(range(1, 11))
    assert scores[3].rank == 1


def test_scan_needs_enough_records():
    with pytest.raises(ValueError, match="records"):
        scan(_trace_with_loci(99, [5]))
