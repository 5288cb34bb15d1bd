"""The round loop: cluster, score with user + cluster UCB, play, update.

Each user owns a reward network, a utility state for selective resets, and
a ridge design matrix over the last-hidden-layer features of its played
arms (inverse maintained by Sherman-Morrison with periodic full
re-inversion). Cluster learners are derived every round: parameters are
the element-wise mean of the member networks, and the cluster design
matrix aggregates the members' observations.

Round sequencing, in order: cluster users, build the relevant cluster
learner(s), score every arm with predicted reward plus user- and
cluster-level confidence, play the argmax, observe the reward, take one
SGD step on the played (arm, reward) pair, feed |reward - prediction| to
the drift detector, map its state to a replacement rate, and run the
selective-reinitialization step on the updated network. The prediction
error fed to the detector uses the pre-update prediction of the played
arm.
"""

from dataclasses import dataclass, field
import time

import numpy as np

from . import nets
from .clustering import UserEmbedding, club_clusters, mcnb_clusters, mean_parameters
from .drift import PhaDetector
from .plasticity import UtilityState


class PolicyError(RuntimeError):
    pass


@dataclass
class PolicyConfig:
    hidden: tuple = (64, 64)
    lr: float = 0.05
    beta_user: float = 0.5
    beta_cluster: float = 0.5
    ridge: float = 1.0
    clustering: str = "club"             # "club" or "mcnb"
    epsilon1: float = 1.0                # graph-clustering distance threshold
    reward_tolerance: float = 1e-2       # reward-identity grouping tolerance
    sere_enabled: bool = True
    decay: float = 0.9                   # utility decay rate
    maturity: int = 100
    single_reset_per_step: bool = False
    sere_on_clusters: bool = False
    pha_offset: float = 0.1
    pha_threshold: float = 0.5
    pha_scale: float = 0.01
    rho_min: float = 0.01
    rho_max: float = 0.1
    rearm_on_detection: bool = True
    reinvert_every: int = 500

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.lr <= 0 or self.ridge <= 0:
            raise ValueError("lr and ridge must be > 0")
        if self.beta_user < 0 or self.beta_cluster < 0:
            raise ValueError("exploration coefficients must be >= 0")
        if self.clustering not in ("club", "mcnb"):
            raise ValueError(f"unknown clustering mode {self.clustering!r}")

    def detector(self):
        return PhaDetector(offset=self.pha_offset, threshold=self.pha_threshold,
                           scale=self.pha_scale, rho_min=self.rho_min,
                           rho_max=self.rho_max,
                           rearm_on_detection=self.rearm_on_detection)


class UserLearner:
    def __init__(self, user, net, sere, ridge, reinvert_every=500):
        self.user = user
        self.net = net
        self.sere = sere
        n_l = net.shape.hidden[-1]
        self.ridge = ridge
        self.A = ridge * np.eye(n_l)
        self.A_inv = np.eye(n_l) / ridge
        self.plays = 0
        self.reinvert_every = reinvert_every

    def rank1_update(self, phi):
        """Sherman-Morrison update of A and its inverse with phi phi^T."""
        self.A += np.outer(phi, phi)
        v = self.A_inv @ phi
        self.A_inv -= np.outer(v, v) / (1.0 + float(phi @ v))
        self.plays += 1
        if self.reinvert_every and self.plays % self.reinvert_every == 0:
            self.A_inv = np.linalg.inv(self.A)

    def inverse_drift(self):
        return float(np.max(np.abs(self.A @ self.A_inv - np.eye(len(self.A)))))


class ClusterLearner:
    """Derived per round: mean parameters and pooled design matrix of members."""

    def __init__(self, members, learners, ridge):
        if not members:
            raise PolicyError("cluster must have members")
        self.members = list(members)
        nets_ = [learners[u].net for u in self.members]
        self.net = mean_parameters(nets_)
        n_l = nets_[0].shape.hidden[-1]
        self.A = ridge * np.eye(n_l)
        for u in self.members:
            self.A += learners[u].A - learners[u].ridge * np.eye(n_l)
        self.A_inv = np.linalg.inv(self.A)


def select_arm(upper_bounds):
    """Index of the maximal score; ties break to the lowest index."""
    if len(upper_bounds) == 0:
        raise PolicyError("no scores")
    return int(np.argmax(upper_bounds))


@dataclass
class RoundRecord:
    t: int
    user: int
    chosen: int
    r_hat: float
    reward: float
    regret: float
    pha: float
    pha_min: float
    deviation: float
    rho: float
    drift: bool
    q_clusters: float
    reset_events: list = field(default_factory=list)
    sere_seconds: float = 0.0
    round_seconds: float = 0.0


class CnbPolicy:
    def __init__(self, config, d, seed=0):
        self.config = config
        self.d = int(d)
        self._seed_seq = np.random.SeedSequence(seed)
        self.learners = {}
        self.detector = config.detector()
        self.t = 0

    # -- learner management -------------------------------------------------

    def learner(self, user):
        if user not in self.learners:
            net_seed, sere_seed = self._seed_seq.spawn(2)
            shape = nets.NetworkShape((self.d, *self.config.hidden, 1))
            net = nets.init_kaiming(shape, net_seed)
            sere = UtilityState(net, decay=self.config.decay,
                                maturity=self.config.maturity, seed=sere_seed,
                                single_reset_per_step=self.config.single_reset_per_step)
            self.learners[user] = UserLearner(user, net, sere, self.config.ridge,
                                              self.config.reinvert_every)
        return self.learners[user]

    # -- clustering ---------------------------------------------------------

    def _club_cluster_for(self, user):
        embeddings = [UserEmbedding(u, l.net.weights[-1].ravel())
                      for u, l in self.learners.items()]
        assignment = club_clusters(embeddings, self.config.epsilon1)
        members = assignment.cluster_of(user)
        return ClusterLearner(members, self.learners, self.config.ridge), \
            len(assignment.clusters)

    def _mcnb_clusters_for(self, user, arms):
        """Per-arm reward-identity clusters; returns one ClusterLearner per arm."""
        users = list(self.learners)
        preds = {}
        for u in users:
            p, _ = nets.forward_batch(self.learners[u].net, arms)
            preds[u] = np.clip(p, 0.0, 1.0)
        cluster_learners, cache, q_total = [], {}, 0
        for i in range(arms.shape[0]):
            assignment = mcnb_clusters({u: float(preds[u][i]) for u in users},
                                       self.config.reward_tolerance, arm=i)
            q_total += len(assignment.clusters)
            members = tuple(assignment.cluster_of(user))
            if members not in cache:
                cache[members] = ClusterLearner(members, self.learners,
                                                self.config.ridge)
            cluster_learners.append(cache[members])
        return cluster_learners, q_total / arms.shape[0]

    # -- scoring ------------------------------------------------------------

    def ucb_scores(self, learner, cluster_learners, arms):
        """Per arm: (clamped prediction, upper bound); also returns the
        user-side last-hidden features so the played arm's feature can be
        reused for the design-matrix update."""
        preds, phi_u = nets.forward_batch(learner.net, arms)
        r_hat = np.clip(preds, 0.0, 1.0)
        conf_user = self.config.beta_user * np.sqrt(
            np.maximum(np.einsum("ij,jk,ik->i", phi_u, learner.A_inv, phi_u), 0.0))
        conf_cluster = np.empty(len(r_hat))
        if isinstance(cluster_learners, ClusterLearner):
            _, phi_c = nets.forward_batch(cluster_learners.net, arms)
            conf_cluster = self.config.beta_cluster * np.sqrt(
                np.maximum(np.einsum("ij,jk,ik->i", phi_c, cluster_learners.A_inv,
                                     phi_c), 0.0))
        else:
            for i, cl in enumerate(cluster_learners):
                phi_c = nets.last_hidden_features(cl.net, arms[i])
                q = float(phi_c @ cl.A_inv @ phi_c)
                conf_cluster[i] = self.config.beta_cluster * np.sqrt(max(q, 0.0))
        upper = r_hat + conf_user + conf_cluster
        if not np.all(np.isfinite(upper)):
            raise PolicyError("non-finite score")
        return r_hat, upper, phi_u

    # -- the round ----------------------------------------------------------

    def play_round(self, env_round):
        t_start = time.perf_counter()
        self.t += 1
        cfg = self.config
        user = env_round.user
        arms = np.asarray(env_round.arms, dtype=float)
        learner = self.learner(user)

        if cfg.clustering == "club":
            cluster_for_score, q = self._club_cluster_for(user)
        else:
            cluster_for_score, q = self._mcnb_clusters_for(user, arms)

        r_hat, upper, phi_u = self.ucb_scores(learner, cluster_for_score, arms)
        chosen = select_arm(upper)
        reward = env_round.play(chosen)

        trace = nets.sgd_step(learner.net, arms[chosen], reward, cfg.lr)
        learner.net.assert_finite()
        learner.rank1_update(phi_u[chosen])

        self.detector.observe(abs(reward - float(r_hat[chosen])))
        pha, pha_min = self.detector.pha, self.detector.pha_min
        deviation = self.detector.deviation
        rho, drift = self.detector.current_rho()

        # sere_on_clusters is inert here: cluster learners are derived from
        # member parameters each round, so they carry no persistent utility
        # state to act on. The flag is reserved for persistent cluster nets.
        events = []
        sere_seconds = 0.0
        if cfg.sere_enabled:
            t_sere = time.perf_counter()
            events = learner.sere.sere_step(learner.net, trace, rho)
            sere_seconds = time.perf_counter() - t_sere
        else:
            rho = 0.0   # effective replacement rate: nothing is recycled

        return RoundRecord(
            t=env_round.t, user=user, chosen=chosen, r_hat=float(r_hat[chosen]),
            reward=reward, regret=env_round.oracle_regret(chosen),
            pha=pha, pha_min=pha_min, deviation=deviation, rho=rho, drift=drift,
            q_clusters=q, reset_events=events, sere_seconds=sere_seconds,
            round_seconds=time.perf_counter() - t_start)
