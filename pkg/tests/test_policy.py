import numpy as np
import pytest

from sere_bandits.envs import Round
from sere_bandits.nets import Network, NetworkShape, forward, init_kaiming
from sere_bandits.policy import (ClusterLearner, CnbPolicy, PolicyConfig,
                                 PolicyError, UserLearner, select_arm)


def fixed_round(t, user, arms, rewards, means=None):
    arms = np.asarray(arms, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    means = rewards.copy() if means is None else np.asarray(means, dtype=float)
    return Round(t=t, user=user, arms=arms, true_means=means,
                 realized_rewards=rewards)


def config(**kw):
    args = dict(hidden=(8, 8), lr=0.05, beta_user=0.5, beta_cluster=0.5,
                maturity=50)
    args.update(kw)
    return PolicyConfig(**args)


# -- select_arm -----------------------------------------------------------------

def test_select_arm_tie_break():
    assert select_arm(np.array([0.2, 0.9, 0.9])) == 1


def test_select_arm_single():
    assert select_arm(np.array([0.4])) == 0


def test_select_arm_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(100):
        scores = rng.uniform(size=rng.integers(1, 12))
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        assert select_arm(scores) == best


def test_select_arm_empty():
    with pytest.raises(PolicyError):
        select_arm(np.array([]))


# -- scoring ---------------------------------------------------------------------

def unit_feature_net():
    """1-2-1 net whose last-hidden features for x=[1] are the unit vector [1, 0]."""
    shape = NetworkShape((1, 2, 1))
    return Network(shape, [np.array([[1.0, -1.0]]), np.array([[0.0], [0.0]])],
                   [np.zeros(2), np.zeros(1)])


def test_zero_betas_greedy():
    pol = CnbPolicy(config(beta_user=0.0, beta_cluster=0.0, hidden=(6,)), d=3, seed=1)
    learner = pol.learner(0)
    arms = np.random.default_rng(2).standard_normal((4, 3))
    cluster, _ = pol._club_cluster_for(0)
    r_hat, upper, _ = pol.ucb_scores(learner, cluster, arms)
    assert np.array_equal(upper, r_hat)


def test_unit_feature_confidence_is_one():
    pol = CnbPolicy(config(hidden=(2,), beta_user=1.0, beta_cluster=0.0,
                           ridge=1.0), d=1, seed=0)
    learner = pol.learner(0)
    learner.net = unit_feature_net()
    cluster = ClusterLearner([0], pol.learners, ridge=1.0)
    arms = np.array([[1.0]])
    r_hat, upper, _ = pol.ucb_scores(learner, cluster, arms)
    # prediction 0 (zero output weights), phi = [1, 0], A = I -> conf exactly 1
    assert r_hat[0] == 0.0
    assert upper[0] == pytest.approx(1.0, abs=1e-12)


def test_confidence_scale_invariance_of_argmax():
    # with zero predictions, scaling both betas rescales scores but not argmax
    rng = np.random.default_rng(5)
    pol = CnbPolicy(config(hidden=(6,), beta_user=1.0, beta_cluster=1.0), d=4, seed=3)
    learner = pol.learner(0)
    learner.net.weights[-1][:] = 0.0       # predictions identically 0
    cluster, _ = pol._club_cluster_for(0)
    arms = rng.standard_normal((6, 4))
    _, upper1, _ = pol.ucb_scores(learner, cluster, arms)
    pol.config.beta_user = pol.config.beta_cluster = 7.0
    _, upper7, _ = pol.ucb_scores(learner, cluster, arms)
    assert np.argmax(upper1) == np.argmax(upper7)
    assert np.allclose(upper7, 7 * upper1, atol=1e-12)


def test_predictions_clamped():
    pol = CnbPolicy(config(hidden=(6,), beta_user=0.0, beta_cluster=0.0), d=3, seed=7)
    learner = pol.learner(0)
    learner.net.weights[-1][:] *= 50.0     # force out-of-range raw predictions
    cluster, _ = pol._club_cluster_for(0)
    arms = np.random.default_rng(1).standard_normal((8, 3))
    r_hat, _, _ = pol.ucb_scores(learner, cluster, arms)
    assert np.all((0.0 <= r_hat) & (r_hat <= 1.0))


def test_confidence_shrinks_with_observations():
    pol = CnbPolicy(config(hidden=(6,), beta_user=1.0, beta_cluster=0.0), d=3, seed=9)
    learner = pol.learner(0)
    phi = np.abs(np.random.default_rng(3).standard_normal(6)) + 0.1
    arms = np.random.default_rng(4).standard_normal((3, 3))
    cluster, _ = pol._club_cluster_for(0)
    _, before, _ = pol.ucb_scores(learner, cluster, arms)
    for _ in range(10):
        learner.rank1_update(phi)
    cluster, _ = pol._club_cluster_for(0)
    _, after, _ = pol.ucb_scores(learner, cluster, arms)
    assert np.all(after <= before + 1e-12)


# -- Sherman-Morrison ---------------------------------------------------------------

def test_sherman_morrison_matches_dense_inversion():
    rng = np.random.default_rng(6)
    net = init_kaiming((3, 8, 1), seed=0)
    learner = UserLearner(0, net, None, ridge=1.0, reinvert_every=0)
    for _ in range(5):
        phi = rng.standard_normal(8)
        learner.rank1_update(phi)
    assert np.max(np.abs(learner.A_inv - np.linalg.inv(learner.A))) < 1e-8
    assert learner.inverse_drift() < 1e-8


def test_periodic_reinversion_counts_plays():
    net = init_kaiming((3, 4, 1), seed=0)
    learner = UserLearner(0, net, None, ridge=1.0, reinvert_every=3)
    rng = np.random.default_rng(7)
    for k in range(7):
        learner.rank1_update(rng.standard_normal(4))
    assert learner.plays == 7
    assert learner.inverse_drift() < 1e-10


# -- the round loop -------------------------------------------------------------------

def drive(pol, rounds):
    records = []
    for rnd in rounds:
        records.append(pol.play_round(rnd))
    return records


def two_arm_rounds(T, flip=False):
    """Deterministic 1-user 2-arm fixture; arm 0 pays 1, arm 1 pays 0."""
    a0, a1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    arms = np.stack([a1, a0]) if flip else np.stack([a0, a1])
    rewards = np.array([0.0, 1.0]) if flip else np.array([1.0, 0.0])
    return [fixed_round(t, 0, arms, rewards) for t in range(1, T + 1)]


def test_greedy_policy_learns_two_arm_fixture():
    pol = CnbPolicy(config(beta_user=0.0, beta_cluster=0.0, lr=0.2,
                           hidden=(8,), sere_enabled=False), d=2, seed=11)
    records = drive(pol, two_arm_rounds(300))
    tail = [r.chosen for r in records[200:]]
    assert np.mean(np.array(tail) == 0) > 0.95


def test_round_regret_bounded():
    pol = CnbPolicy(config(hidden=(6,)), d=2, seed=2)
    for rec in drive(pol, two_arm_rounds(50)):
        assert 0.0 <= rec.regret <= 1.0


def test_pha_uses_preupdate_prediction():
    pol = CnbPolicy(config(hidden=(8,), beta_user=0.0, beta_cluster=0.0,
                           sere_enabled=False), d=2, seed=4)
    rounds = two_arm_rounds(5)
    rec1 = pol.play_round(rounds[0])
    # replay round 2 by hand: prediction of the chosen arm before the update
    net_before = pol.learner(0).net.copy()
    rec2 = pol.play_round(rounds[1])
    expected_r_hat = float(np.clip(forward(net_before, rounds[1].arms[rec2.chosen])
                                   .prediction, 0.0, 1.0))
    assert rec2.r_hat == pytest.approx(expected_r_hat, abs=1e-12)
    # the detector consumed |reward - pre-update prediction| minus the offset
    gain = abs(rec2.reward - expected_r_hat) - pol.detector.offset
    assert rec2.pha == pytest.approx(rec1.pha + gain, abs=1e-12)


def test_sere_disabled_logs_zero_rho():
    pol = CnbPolicy(config(sere_enabled=False, hidden=(6,)), d=2, seed=5)
    for rec in drive(pol, two_arm_rounds(10)):
        assert rec.rho == 0.0
        assert rec.reset_events == []


def test_lazy_learner_instantiation():
    pol = CnbPolicy(config(hidden=(6,)), d=2, seed=6)
    rounds = [fixed_round(1, 3, [[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0]),
              fixed_round(2, 7, [[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0])]
    drive(pol, rounds)
    assert set(pol.learners) == {3, 7}
    assert pol.learners[3].plays == 1


def test_reveals_only_played_arm():
    pol = CnbPolicy(config(hidden=(6,)), d=2, seed=8)
    for rnd in two_arm_rounds(20):
        rec = pol.play_round(rnd)
        assert rnd.revealed == {rec.chosen}


def test_mcnb_mode_round_runs_and_groups():
    pol = CnbPolicy(config(clustering="mcnb", hidden=(6,), reward_tolerance=10.0),
                    d=2, seed=9)
    rounds = [fixed_round(t, t % 3, [[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
              for t in range(1, 21)]
    records = drive(pol, rounds)
    # with a huge tolerance every arm groups all users together
    assert records[-1].q_clusters == 1.0


def test_mcnb_singleton_groups_with_zero_tolerance():
    pol = CnbPolicy(config(clustering="mcnb", hidden=(6,), reward_tolerance=0.0),
                    d=2, seed=10)
    rounds = [fixed_round(t, t % 3, [[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
              for t in range(1, 10)]
    records = drive(pol, rounds)
    assert records[-1].q_clusters == 3.0   # three users, all predictions distinct


def test_club_cluster_learner_pools_members():
    pol = CnbPolicy(config(hidden=(6,), epsilon1=1e9), d=2, seed=12)
    rounds = [fixed_round(t, t % 2, [[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
              for t in range(1, 9)]
    drive(pol, rounds)
    cluster, q = pol._club_cluster_for(0)
    assert q == 1
    assert cluster.members == [0, 1]
    # pooled design matrix counts both users' observations
    pooled = cluster.A - np.eye(6)
    separate = sum(pol.learners[u].A - np.eye(6) for u in (0, 1))
    assert np.allclose(pooled, separate)


def test_identical_seeds_identical_trajectories():
    def run():
        pol = CnbPolicy(config(hidden=(8,), maturity=1), d=2, seed=13)
        return [r.chosen for r in drive(pol, two_arm_rounds(60))] + \
               [float(pol.learner(0).net.weights[0].sum())]

    assert run() == run()
