import io

import numpy as np
import pytest

from fogaccess.amp import AmpConfig, block_row_mean, em_update_sparsity, refine_sparsity_common, run_mmv_amp
from fogaccess.cloud import cloud_detect, concatenate, fronthaul_scalars
from fogaccess.fog import AssociationMap, associate_faps, joint_refine, local_refine, run_fog
from fogaccess.harness import run_baseline
from fogaccess.scenario import (Observation, ScenarioConfig, UserPopulation, build_scenario,
                                generate_layout, place_users)

SMALL = ScenarioConfig(users_per_cell=12, pilot_length=20, antennas=2, activity_fraction=0.1)


@pytest.fixture(scope="module")
def scn():
    return build_scenario(SMALL, 3)


def test_concatenate():
    r1, r2 = np.ones((3, 1)), 2 * np.ones((3, 1))
    p = concatenate(Observation([r1], 0.0), np.ones((3, 4)))
    assert np.array_equal(p.Y, r1)
    p = concatenate(Observation([r1, r2], 0.0), np.ones((3, 4)))
    assert p.Y.shape == (3, 2) and np.all(p.Y[:, 0] == 1) and np.all(p.Y[:, 1] == 2)
    assert fronthaul_scalars(p) == 6
    with pytest.raises(ValueError):
        concatenate(Observation([r1, np.ones((4, 1))], 0.0), np.ones((3, 4)))


def test_association_examples():
    lay = generate_layout(7, 1.0)
    pop = place_users(lay, 30, 1)
    a1 = associate_faps(pop, lay, 1)
    assert np.array_equal(a1.sets[:, 0], pop.home_cell)
    a7 = associate_faps(pop, lay, 7)
    assert np.all(a7.sets == np.arange(7))
    # near the corner shared by the center cell and its neighbors at 30 and 90 degrees
    edge = UserPopulation(np.array([[0.49, 0.85]]), np.array([0]), 1)
    assert associate_faps(edge, lay, 3).sets.tolist() == [[0, 1, 2]]
    with pytest.raises(ValueError):
        associate_faps(pop, lay, 8)


def test_association_ties_go_to_lower_index():
    lay = generate_layout(2, 1.0, positions=[(1, 0), (-1, 0)])
    pop = UserPopulation(np.array([[0.0, 0.3]]), np.array([0]), 1)
    assert associate_faps(pop, lay, 1).sets.tolist() == [[0]]


def test_local_and_joint_refine():
    assert np.all(local_refine(np.ones((3, 4))) == 1)
    assert local_refine(np.array([[1.0, 0.0]]))[0] == 0.5
    col = np.array([[0.3], [0.6]])
    assert np.array_equal(local_refine(col), col[:, 0])
    pt = np.full((2, 3), 0.4)
    amap = AssociationMap(np.array([[0, 2], [1, 2]]), 3)
    assert np.allclose(joint_refine(pt, amap), 0.4)
    pt = np.random.default_rng(0).uniform(size=(5, 3))
    single = AssociationMap(np.array([[0], [1], [2], [0], [1]]), 3)
    assert np.array_equal(joint_refine(pt, single), pt[np.arange(5), [0, 1, 2, 0, 1]])


@pytest.mark.parametrize("seed", range(5))
def test_refinement_identity_full_cooperation(seed):
    rng = np.random.default_rng(seed)
    B, M_c, K = 7, int(rng.integers(1, 12)), 40
    pi = rng.uniform(size=(K, B * M_c))
    pt = np.column_stack([local_refine(pi[:, b * M_c:(b + 1) * M_c]) for b in range(B)])
    fog = em_update_sparsity(joint_refine(pt, AssociationMap(np.tile(np.arange(B), (K, 1)), B)))
    cloud = refine_sparsity_common(pi, "row", n_blocks=B)
    assert np.array_equal(np.repeat(fog[:, None], B * M_c, axis=1), cloud)
    assert np.array_equal(block_row_mean(pi, B), pt)


def test_single_ap_equivalence():
    cfg = ScenarioConfig(n_cells=1, users_per_cell=40, pilot_length=20, antennas=4, activity_fraction=0.1)
    s = build_scenario(cfg, 1)
    amp = AmpConfig()
    c = cloud_detect(concatenate(s.observation, s.S), s.population.home_cell, amp)
    f = run_fog(s.observation, s.S, associate_faps(s.population, s.layout, 1), s.population.home_cell, amp)
    b = run_baseline(s.observation, s.S, s.population.home_cell, amp)
    assert c.same_as(f) and c.same_as(b)


def test_fog_partition_matches_standalone(scn):
    """Each F-AP's trajectory equals a standalone run fed the same gamma schedule."""
    amp = AmpConfig(t_max=12, epsilon=1e-300)
    assoc = associate_faps(scn.population, scn.layout, 2)
    glog = []
    out = run_fog(scn.observation, scn.S, assoc, scn.population.home_cell, amp, stop="tmax", gamma_log=glog)
    B, M_c = scn.observation.n_aps, SMALL.antennas
    for b in range(B):
        sched = [g for (bb, g) in glog if bb == b]
        res = run_mmv_amp(scn.observation.per_ap[b], scn.S, amp, refine=lambda st: sched[st.iter - 1])
        assert res.iters == out.iters == 12
        assert res.pi.tobytes() == out.extra["pi"][:, b * M_c:(b + 1) * M_c].tobytes()
        rows = out.alpha_hat == 1
        assert np.array_equal(out.X_hat[rows, b * M_c:(b + 1) * M_c], res.x_hat[rows])


def test_fog_message_accounting(scn):
    amp = AmpConfig(t_max=5, epsilon=1e-300)
    for n_co in (1, 3):
        assoc = associate_faps(scn.population, scn.layout, n_co)
        log = io.StringIO()
        out = run_fog(scn.observation, scn.S, assoc, scn.population.home_cell, amp, stop="tmax", message_log=log)
        st = out.extra["fog_stats"]
        K = scn.population.n_users
        assert st.rounds == 5
        assert st.uploads == st.downloads == 5 * K * n_co
        assert out.extra["fronthaul_scalars"] == 10 * K * n_co
        assert len(log.getvalue().splitlines()) == 1 + 5 * K * n_co


def test_fog_threaded_faps_identical(scn):
    assoc = associate_faps(scn.population, scn.layout, 2)
    a = run_fog(scn.observation, scn.S, assoc, scn.population.home_cell)
    b = run_fog(scn.observation, scn.S, assoc, scn.population.home_cell, fap_workers=4)
    assert a.same_as(b)


def test_fog_tmax_rule(scn):
    assoc = associate_faps(scn.population, scn.layout, 1)
    out = run_fog(scn.observation, scn.S, assoc, scn.population.home_cell, AmpConfig(t_max=7), stop="tmax")
    assert out.iters == 7
    with pytest.raises(ValueError):
        run_fog(scn.observation, scn.S, assoc, scn.population.home_cell, stop="never")


def test_cloud_problem_split(scn):
    p = concatenate(scn.observation, scn.S)
    assert p.n_antennas == SMALL.antennas
    assert all(np.array_equal(a, b) for a, b in zip(p.split(), scn.observation.per_ap))


def test_interference_free_baseline_matches_cloud_restriction():
    """Two far-apart cells: the baseline per-cell solve matches the joint solve on each cell."""
    cfg = ScenarioConfig(n_cells=2, users_per_cell=30, pilot_length=24, antennas=2, activity_fraction=0.1,
                         ap_positions=((0.0, 0.0), (1000.0, 0.0)))
    s = build_scenario(cfg, 4)
    # zero the cross-cell gains exactly and rebuild the observation without noise
    X = s.X.copy()
    home = s.population.home_cell
    for b in range(2):
        X[home != b, b * 2:(b + 1) * 2] = 0
    Y = s.S @ X
    obs = Observation([Y[:, :2].copy(), Y[:, 2:].copy()], 0.0)
    base = run_baseline(obs, s.S, home)
    for b in range(2):
        users = np.flatnonzero(home == b)
        est = base.X_hat[users, b * 2:(b + 1) * 2]
        assert np.linalg.norm(est - X[users, b * 2:(b + 1) * 2]) <= 1e-2 * np.linalg.norm(X[users, b * 2:(b + 1) * 2])
    cloud = cloud_detect(concatenate(obs, s.S), home)
    assert np.array_equal(cloud.alpha_hat, base.alpha_hat)
