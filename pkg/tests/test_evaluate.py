import math

import numpy as np
import pytest

from advzoom import algo, evaluate
from advzoom.env import MeanFunction, StochasticEnv
from advzoom.evaluate import (
    adversarial_gap,
    covering_count,
    dimension_fit,
    eps_ladder_times,
    eps_optimal_set,
    gaps_at,
    grid_points,
    inherited_diameter,
    loglog_slope,
    monitor,
    regret,
)
from advzoom.trace import NodeMeta, RoundRecord, Trace
from conftest import GOLD, tent_mean


def det_env(xs_ys):
    return StochasticEnv(
        MeanFunction("custom_table", {"xs": xs_ys[0], "ys": xs_ys[1]}),
        noise="none",
    )


def synthetic_trace(rewards, arms=None, T=None):
    T = T or len(rewards)
    tr = Trace(algorithm="adversarial_zooming", T=T, d=1, n_dbl=2, seed=0)
    tr.add_node(NodeMeta(0, None, 0, 1.0, 1, (0.5,), 0.0))
    for t, r in enumerate(rewards, start=1):
        arm = (arms[t - 1],) if arms else (0.5,)
        tr.append(RoundRecord(t=t, node_id=0, arm=arm, reward=float(r),
                              beta=0.5, beta_tilde=0.5, gamma=0.5, eta=0.5,
                              n_active=1))
    return tr


# -- regret -------------------------------------------------------------------


def test_regret_zero_when_playing_grid_best():
    env = det_env(([0, 0.5, 1], [0.2, 0.9, 0.2]))
    best = 0.5
    tr = synthetic_trace([env.reward(t, best) for t in range(1, 33)])
    rep = regret(tr, env, grid_eps=1 / 16)
    assert rep.regret == pytest.approx(0.0)
    assert rep.best_arm == (0.5,)
    assert rep.lipschitz_slack == pytest.approx(32 / 16)


def test_regret_T_when_playing_worst_arm():
    env = det_env(([0, 0.49, 0.51, 1], [1.0, 1.0, 0.0, 0.0]))
    tr = synthetic_trace([0.0] * 40)
    rep = regret(tr, env, grid=np.array([[0.25], [0.75]]))
    assert rep.regret == pytest.approx(40.0)
    assert rep.regret_curve.tolist() == pytest.approx(
        np.arange(1, 41, dtype=float).tolist()
    )


def test_regret_guard_on_grid_size():
    env = det_env(([0, 1], [0.5, 0.5]))
    tr = synthetic_trace([0.5] * 100)
    with pytest.raises(ValueError, match="grid too large"):
        regret(tr, env, grid_eps=1 / 1024, max_evals=10_000)


def test_regret_cross_checked_on_finer_grid(tent_env):
    # deterministic rewards: the Lipschitz slack genuinely bounds what a
    # finer grid can gain (realized-noise maxima would not be so bounded)
    env = tent_env(seed=3, noise="none")
    st = algo.init(1, 1024, algo.AlgoConfig(seed=3, record_state=False))
    tr = algo.run(st, env)
    coarse = regret(tr, env, grid_eps=1 / 256)
    fine = regret(tr, env, grid_eps=1 / 2560)
    assert coarse.regret > 0
    assert fine.regret >= coarse.regret - 1e-9  # finer grid finds a better arm
    assert abs(fine.regret - coarse.regret) <= coarse.lipschitz_slack


# -- adversarial gaps ---------------------------------------------------------


def test_gap_of_best_arm_is_zero():
    env = det_env(([0, 0.5, 1], [0.2, 0.9, 0.2]))
    grid = grid_points(1, 1 / 8)
    assert adversarial_gap(env, grid, 16, 0.5) == pytest.approx(0.0)


def test_gap_two_arm_deterministic():
    env = det_env(([0, 0.49, 0.51, 1], [1.0, 1.0, 0.0, 0.0]))
    grid = np.array([[0.25], [0.75]])
    for t in (1, 5, 40):
        assert adversarial_gap(env, grid, t, 0.75) == pytest.approx(1.0)
        assert adversarial_gap(env, grid, t, 0.25) == pytest.approx(0.0)
    gaps = gaps_at(env, grid, [4, 16])
    assert gaps[1].tolist() == pytest.approx([1.0, 1.0])


def test_gap_tracks_iid_gap_on_stochastic_instance(tent_env):
    env = tent_env(seed=12)
    grid = grid_points(1, 1 / 64)
    T = 1024
    mu = tent_mean()(grid[:, 0])
    gap_iid = mu.max() - mu
    for t in (T // 2, T):
        bound = 3 * math.sqrt(2 * math.log(T * len(grid)) / t)
        emp = gaps_at(env, grid, [t])[:, 0]
        frac = np.mean(np.abs(emp - gap_iid) <= bound)
        assert frac >= 0.99


# -- inclusively eps-optimal sets ----------------------------------------


def test_eps_ladder_strictly_past_threshold():
    # 0.75^-2/9 < 1 -> ladder starts at 1; integer threshold is bumped so
    # the end-time is strictly past eps^-2/9
    assert eps_ladder_times(0.75, 64) == [1, 2, 4, 8, 16, 32, 64]
    assert eps_ladder_times(1.0 / 3.0, 64) == [2, 4, 8, 16, 32, 64]
    assert eps_ladder_times(0.01, 100) == []  # starts past the horizon


def test_eps_optimal_set_threshold_above_one_takes_all():
    env = det_env(([0, 0.49, 0.51, 1], [1.0, 1.0, 0.0, 0.0]))
    grid = grid_points(1, 1 / 8)
    T, d, n_dbl = 64, 1, 2
    eps = 0.5  # threshold = 30 * 0.5 * ln 64 * sqrt(ln 128) > 1 >= any gap
    thr = 30 * eps * math.log(T) * math.sqrt(d * math.log(n_dbl * T))
    assert thr >= 1.0
    assert eps_optimal_set(env, grid, eps, d, n_dbl, T).all()


def test_eps_optimal_set_two_arm():
    # feasible thresholds sit above 10 ln(T) sqrt(ln 2T) / sqrt(T), so a
    # sub-gap threshold needs a long horizon; the computation itself is
    # cheap because only two arms are replayed
    env = det_env(([0, 0.49, 0.51, 1], [1.0, 1.0, 0.4, 0.4]))  # gap 0.6
    grid = np.array([[0.25], [0.75]])
    T, d, n_dbl = 2**20, 1, 2
    eps = 3.4e-4
    thr = 30 * eps * math.log(T) * math.sqrt(d * math.log(n_dbl * T))
    assert thr < 0.6
    assert eps_ladder_times(eps, T)  # the ladder reaches into [1, T]
    mask = eps_optimal_set(env, grid, eps, d, n_dbl, T)
    assert mask.tolist() == [True, False]


def test_eps_optimal_set_combined_concentrates_near_peaks():
    from advzoom.env import make_combined

    m1 = MeanFunction("baseline_bump",
                      {"peak": 1.0, "baseline": 0.0, "support": (0.05, 0.45)})
    m2 = MeanFunction("baseline_bump",
                      {"peak": 1.0, "baseline": 0.0, "support": (0.55, 0.95)})
    T = 2**21
    env = make_combined([m1, m2], [(0, T // 2), (1, T // 2)],
                        [(0.05, 0.45), (0.55, 0.95)], [0.0, 0.0],
                        T=T, noise="none", seed=4)
    grid = grid_points(1, 1 / 8)
    d, n_dbl = 1, 2
    eps = 2.42e-4
    thr = 30 * eps * math.log(T) * math.sqrt(d * math.log(n_dbl * T))
    assert 0.35 < thr < 0.5  # between the near-peak and the baseline gaps
    mask = eps_optimal_set(env, grid, eps, d, n_dbl, T)
    members = set(grid[mask][:, 0].tolist())
    # mixture gaps: 0 at the peaks, 0.3125 one grid step away, 0.5 at the
    # baseline arms; the set is exactly the two peak neighborhoods
    assert members == {0.125, 0.25, 0.375, 0.625, 0.75, 0.875}


# -- covering counts and dimension fits ---------------------------------------


def test_covering_single_point():
    assert covering_count(np.array([[0.3]]), 0.25) == 1
    ladder = [1 / 4, 1 / 8, 1 / 16]
    rep = dimension_fit(ladder, [1, 1, 1])
    assert rep.z_hat == pytest.approx(0.0, abs=1e-12)


def test_dimension_fit_recovers_exact_ladders():
    for z in (0.0, 0.5, 1.0, 1.7):
        ladder = [2.0 ** -k for k in range(2, 9)]
        counts = [3.0 * e ** -z for e in ladder]
        rep = dimension_fit(ladder, counts)
        assert abs(rep.z_hat - z) <= 1e-6
        assert rep.multiplier == pytest.approx(3.0, rel=1e-6)
    with pytest.raises(ValueError):
        dimension_fit([0.5, 0.25], [1, 2])


def test_dimension_fit_full_grid_and_two_points():
    grid = grid_points(1, 1 / 1024)
    ladder = [2.0 ** -k for k in range(2, 8)]
    counts = [covering_count(grid, e) for e in ladder]
    rep = dimension_fit(ladder, counts)
    # exact-count oracle: ceil(1/eps) intervals of length eps cover [0,1]
    oracle = dimension_fit(ladder, [math.ceil(1.0 / e) for e in ladder])
    assert abs(rep.z_hat - 1.0) <= 0.15
    assert abs(oracle.z_hat - 1.0) <= 0.15
    two = np.array([[0.2], [0.8]])
    rep2 = dimension_fit(ladder, [covering_count(two, e) for e in ladder])
    assert rep2.z_hat <= 0.3


def test_loglog_slope_edges():
    assert loglog_slope([1, 2, 4], [7, 7, 7])[0] == pytest.approx(0.0, abs=1e-12)
    assert loglog_slope([1, 2, 4], [1, 2, 4])[0] == pytest.approx(1.0)


# -- invariant monitor ---------------------------------------------------


def test_monitor_clean_on_real_run(tent_env):
    env = tent_env(seed=6)
    st = algo.init(1, 512, algo.AlgoConfig(seed=6))
    tr = algo.run(st, env)
    assert len(tr.zoom_events()) > 0
    assert monitor(tr) == []


def test_monitor_requires_snapshots(tent_env):
    env = tent_env(seed=6)
    st = algo.init(1, 16, algo.AlgoConfig(seed=6, record_state=False))
    tr = algo.run(st, env)
    with pytest.raises(ValueError, match="snapshots"):
        monitor(tr)


def _two_round_trace(pi2, zoom_child=True):
    """Root zooms at t=1; child 1 zooms at t=2 with probability pi2."""
    tr = Trace(algorithm="adversarial_zooming", T=4, d=1, n_dbl=2, seed=0)
    tr.add_node(NodeMeta(0, None, 0, 1.0, 1, (0.5,), 0.0, tau1=1, n_children=2))
    tr.add_node(NodeMeta(1, 0, 1, 0.5, 2, (0.25,), math.log(2),
                         tau1=2 if zoom_child else None, n_children=2))
    tr.add_node(NodeMeta(2, 0, 1, 0.5, 2, (0.75,), math.log(2)))
    tr.append(RoundRecord(t=1, node_id=0, arm=(0.5,), reward=1.0,
                          beta=0.5, beta_tilde=0.5, gamma=0.5, eta=0.5,
                          n_active=1, zoomed=(0,), active_ids=(0,),
                          pi=np.array([1.0])))
    tr.append(RoundRecord(t=2, node_id=1, arm=(0.25,), reward=1.0,
                          beta=0.5, beta_tilde=0.5, gamma=0.2, eta=0.5,
                          n_active=2, zoomed=(1,) if zoom_child else (),
                          active_ids=(1, 2),
                          pi=np.array([pi2, 1.0 - pi2])))
    return tr


def test_monitor_flags_fabricated_premature_zoom():
    # child zoomed with mass 0.4 < 1/(9 L^2) = 4/9; every other check passes
    bad = _two_round_trace(pi2=0.4)
    violations = monitor(bad)
    assert len(violations) == 1
    assert violations[0].check == "zoom_mass" and violations[0].node_id == 1
    clean = _two_round_trace(pi2=0.4, zoom_child=False)
    assert monitor(clean) == []


def test_monitor_zoom_probability_floor():
    # mass ok requires pi >= 4/9; use pi = 0.45 but beta/e^L needs 0.303:
    # passing; now drop pi below the floor and watch both checks fire
    bad = _two_round_trace(pi2=0.25)
    checks = {v.check for v in monitor(bad)}
    assert "zoom_mass" in checks and "zoom_probability" in checks


def test_monitor_node_count_arithmetic():
    # d=1, t=9: the bound is (81)^(1/3) = 4.32..., so 4 passes and 5 fails
    def counted(n_active):
        tr = Trace(algorithm="adversarial_zooming", T=16, d=1, n_dbl=2, seed=0)
        for k in range(n_active):
            tr.add_node(NodeMeta(k, None, 0, 1.0, 1, (0.5,), 0.0))
        pi = np.full(n_active, 1.0 / n_active)
        tr.append(RoundRecord(t=9, node_id=0, arm=(0.5,), reward=0.0,
                              beta=0.5, beta_tilde=0.5, gamma=0.5, eta=0.5,
                              n_active=n_active,
                              active_ids=tuple(range(n_active)), pi=pi))
        return [v for v in monitor(tr) if v.check == "node_count"]

    assert counted(4) == []
    bad = counted(5)
    assert len(bad) == 1 and "(9t)^(d/(d+2))" in bad[0].detail


def test_monitor_distribution_checks():
    tr = _two_round_trace(pi2=0.4)
    tr.rounds[1].pi = np.array([0.4, 0.7])  # sums to 1.1
    checks = {v.check for v in monitor(tr)}
    assert "pi_sum" in checks
    tr2 = _two_round_trace(pi2=0.05)  # below gamma/n = 0.1
    checks2 = {v.check for v in monitor(tr2)}
    assert "pi_floor" in checks2


# -- inherited diameter -------------------------------------------------------


def test_inherited_diameter_root_and_child():
    tr = _two_round_trace(pi2=0.5)
    assert inherited_diameter(tr, 0, 1) == pytest.approx(1.0)
    # child: one root round (L=1) plus its own round (L=0.5)
    assert inherited_diameter(tr, 1, 2) == pytest.approx(1.0 + 0.5)
    tau0 = 2
    for t in (2,):
        expected = (tau0 - 1) * 1.0 + (t - tau0 + 1) * 0.5
        assert inherited_diameter(tr, 2, t) == pytest.approx(expected)


def test_inherited_diameter_bound_on_real_run(tent_env):
    env = tent_env(seed=10)
    st = algo.init(1, 512, algo.AlgoConfig(seed=10))
    tr = algo.run(st, env)
    log2T = math.log2(512)
    for rec in tr.rounds[:: 37]:
        for nid in rec.active_ids:
            total = inherited_diameter(tr, nid, rec.t)
            bound = 4 * rec.t * log2T * tr.node_table[nid].scale
            assert total <= bound + 1e-9
