import random

import pytest
from hypothesis import given, settings, strategies as st

from pushdown.acceptance import balance_solver, random_balance_instance
from pushdown.balance import (CORRECTED, PRINTED, DataNodeLoad, LoadSnapshot, comp_cpu, comp_net,
                              completion, data_cpu, data_net, snapshot_wire_bytes, solve_d,
                              solve_d_exact)

MIXED_S = LoadSnapshot(lc=3, nd=2, nc=4, ndr=1, nr_bar=10, r_bar=4, tc_c=0.5,
                       s_k=10, s_p=20, s_v=1000, s_cv=50, net_bw=100)
MIXED_J = DataNodeLoad(nd_j=5, ndr_j=2, nr_j=30, r_j=12, nr_ij=8, r_ij=3, tc_d=0.25, net_bw=200)


def test_comp_cpu_examples():
    s = LoadSnapshot(tc_c=2)
    assert comp_cpu(s, DataNodeLoad(tc_d=2), 5, 5) == 0
    assert comp_cpu(LoadSnapshot(lc=10, tc_c=2), DataNodeLoad(tc_d=2), 4, 4) == 20


def test_mixed_case_by_hand():
    # every term written out: see the module's load definitions
    assert comp_cpu(MIXED_S, MIXED_J, 16, 6) == pytest.approx(0.5 * (3 + 6 + 5 + 10))
    assert comp_cpu(MIXED_S, MIXED_J, 16, 6, PRINTED) == pytest.approx(0.5 * 3 + 0.25 * (6 + 5 + 10))
    assert comp_net(MIXED_S, MIXED_J, 16, 6) == pytest.approx(24790 / 100)
    assert data_cpu(MIXED_J, 6) == pytest.approx(4.5)
    assert data_net(MIXED_J, 16, 6, MIXED_S) == pytest.approx(36850 / 200)
    assert completion(MIXED_S, MIXED_J, 16, 6) == pytest.approx(247.9)


def test_comp_net_examples():
    s = LoadSnapshot(s_cv=100, s_v=500, net_bw=1000)
    assert comp_net(LoadSnapshot(), DataNodeLoad(), 0, 0) == 0
    assert comp_net(s, DataNodeLoad(), 10, 10) == pytest.approx(1.0)
    assert comp_net(s, DataNodeLoad(), 10, 6) < comp_net(s, DataNodeLoad(), 10, 5)


def test_data_examples():
    assert data_cpu(DataNodeLoad(), 0) == 0
    assert data_cpu(DataNodeLoad(nr_j=5, r_j=5, tc_d=0.1), 5) == pytest.approx(1.0)
    assert data_net(DataNodeLoad(net_bw=100), 4, 0, LoadSnapshot(s_v=50)) == pytest.approx(2.0)
    j, s = DataNodeLoad(net_bw=100), LoadSnapshot(s_v=50, s_cv=10)
    assert data_net(j, 4, 3, s) - data_net(j, 4, 2, s) == pytest.approx((10 - 50) / 100)


def test_symmetric_case_splits_evenly():
    s = LoadSnapshot(tc_c=1.0, s_v=10, s_cv=10, net_bw=1e9)
    j = DataNodeLoad(tc_d=1.0, net_bw=1e9)
    for b in (2, 8, 64):
        assert solve_d(s, j, b).d == b // 2
        assert solve_d_exact(s, j, b).d == b // 2


def test_saturated_data_node_keeps_nothing():
    s = LoadSnapshot(tc_c=1.0, s_v=10, s_cv=10, net_bw=1e9)
    j = DataNodeLoad(nr_j=10 ** 6, r_j=10 ** 6, tc_d=1.0, net_bw=1e9)
    assert solve_d(s, j, 10).d == 0


def test_all_zero_loads_tie_to_full_batch():
    assert solve_d_exact(LoadSnapshot(), DataNodeLoad(), 7).d == 7
    assert solve_d(LoadSnapshot(), DataNodeLoad(), 7).d == 7


def test_busier_compute_node_gets_larger_d():
    j = DataNodeLoad(nr_j=20, r_j=10, tc_d=0.1, net_bw=1e7)
    light = LoadSnapshot(lc=0, tc_c=0.1, s_v=100, s_cv=100, net_bw=1e7)
    heavy = LoadSnapshot(lc=200, tc_c=0.1, s_v=100, s_cv=100, net_bw=1e7)
    assert solve_d_exact(heavy, j, 32).d > solve_d_exact(light, j, 32).d
    assert solve_d(heavy, j, 32).d > solve_d(light, j, 32).d


def test_invalid_inputs():
    with pytest.raises(ValueError):
        LoadSnapshot(nr_bar=1, r_bar=2)
    with pytest.raises(ValueError):
        DataNodeLoad(nr_ij=1, r_ij=2)
    with pytest.raises(ValueError):
        solve_d(LoadSnapshot(), DataNodeLoad(), 0)


def test_wire_bytes():
    assert snapshot_wire_bytes() == 64 + 8 * 12


def test_solver_matches_exhaustive_search():
    ok, detail = balance_solver(instances=200, seed=99)
    assert ok, detail


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([CORRECTED, PRINTED]))
def test_solver_properties(seed, fidelity):
    rng = random.Random(seed)
    s, j, b = random_balance_instance(rng)
    gd = solve_d(s, j, b, random.Random(seed), fidelity)
    ex = solve_d_exact(s, j, b, fidelity)
    assert 0 <= gd.d <= b and 0 <= ex.d <= b
    assert gd.predicted_completion == pytest.approx(completion(s, j, b, gd.d, fidelity), rel=1e-12)
    # never worse than the scan by more than one integer step
    assert abs(gd.d - ex.d) <= 1 or gd.predicted_completion <= ex.predicted_completion * (1 + 1e-9)
    assert ex.predicted_completion == min(completion(s, j, b, d, fidelity) for d in range(b + 1))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_loads_are_affine(seed):
    s, j, b = random_balance_instance(random.Random(seed))
    for f in (lambda d: comp_cpu(s, j, b, d), lambda d: comp_net(s, j, b, d),
              lambda d: data_cpu(j, d), lambda d: data_net(j, b, d, s)):
        y0, y1, y2 = f(0), f(b / 2), f(b)
        assert y1 == pytest.approx((y0 + y2) / 2, rel=1e-9, abs=1e-12)
