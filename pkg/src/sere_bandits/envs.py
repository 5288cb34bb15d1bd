"""Synthetic bandit environments.

Two generators:

* piecewise-stationary: each user's hidden preference vector is redrawn at
  every change point, so the reward function jumps abruptly between pieces
  and is frozen inside them;
* perturbed: preference vectors are the (unit-normalized) user feature
  vectors, and every `period` rounds Gaussian noise is injected into all of
  them, gradually drifting the ground truth.

Rewards are a nonlinear function of the arm/preference inner product,
clamped to [0, 1] after observation noise. The environment pre-draws the
realized reward of every candidate arm, but a Round only reveals the
played arm's reward; the full vector stays available to the regret oracle.
"""

from dataclasses import dataclass, field

import numpy as np


class EnvError(ValueError):
    pass


def _cosine_family(z):
    return 0.5 * (1.0 + np.cos(3.0 * z))


def _quadratic_family(z):
    return z ** 2


REWARD_FAMILIES = {
    "cosine": _cosine_family,
    "quadratic": _quadratic_family,
}


@dataclass
class Round:
    """One interaction: a user, K candidate arms, and hidden reward data."""

    t: int
    user: int
    arms: np.ndarray                 # (K, d)
    true_means: np.ndarray           # (K,)
    realized_rewards: np.ndarray     # (K,)
    revealed: set = field(default_factory=set)

    @property
    def n_arms(self):
        return self.arms.shape[0]

    def play(self, i):
        """Reveal and return the realized reward of arm i (bandit feedback)."""
        self.revealed.add(int(i))
        return float(self.realized_rewards[i])

    def oracle_regret(self, i):
        """Gap between the best in-set true mean and the chosen arm's true mean."""
        return float(self.true_means.max() - self.true_means[i])


def _unit_rows(m, eps=1e-12):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, eps)


@dataclass
class SyntheticEnvSpec:
    n_users: int = 6
    d: int = 20
    K: int = 10
    T: int = 10000
    change_points: tuple = ()        # strictly increasing, inside (1, T+1)
    noise_sigma: float = 0.05
    reward_family: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.d < 1 or self.T < 1:
            raise EnvError("n_users, d and T must be >= 1")
        if self.K < 2:
            raise EnvError(f"need K >= 2 arms, got {self.K}")
        if self.noise_sigma < 0:
            raise EnvError("noise_sigma must be >= 0")
        if self.reward_family not in REWARD_FAMILIES:
            raise EnvError(f"unknown reward family {self.reward_family!r}")
        pts = tuple(int(p) for p in self.change_points)
        if list(pts) != sorted(set(pts)):
            raise EnvError(f"change points must be strictly increasing, got {pts}")
        if pts and (pts[0] <= 1 or pts[-1] > self.T):
            raise EnvError(f"change points must lie in (1, T], got {pts}")
        self.change_points = pts


class PiecewiseEnv:
    """Reward functions frozen within pieces, redrawn at each change point."""

    def __init__(self, spec):
        self.spec = spec
        self.family = REWARD_FAMILIES[spec.reward_family]
        rng = np.random.default_rng(spec.seed)
        n_pieces = len(spec.change_points) + 1
        # theta[piece][user]: unit preference vector, constant inside the piece
        self.thetas = _unit_rows(
            rng.standard_normal((n_pieces, spec.n_users, spec.d))
        ).reshape(n_pieces, spec.n_users, spec.d)
        self._rng = rng
        self._boundaries = np.asarray(spec.change_points, dtype=int)

    def piece_of(self, t):
        return int(np.searchsorted(self._boundaries, t, side="right"))

    def true_mean(self, t, user, arm):
        theta = self.thetas[self.piece_of(t), user]
        return float(np.clip(self.family(float(arm @ theta)), 0.0, 1.0))

    def rounds(self):
        spec = self.spec
        rng = self._rng
        for t in range(1, spec.T + 1):
            user = int(rng.integers(spec.n_users))
            arms = _unit_rows(rng.standard_normal((spec.K, spec.d)))
            theta = self.thetas[self.piece_of(t), user]
            means = np.clip(self.family(arms @ theta), 0.0, 1.0)
            noise = rng.normal(0.0, spec.noise_sigma, spec.K) if spec.noise_sigma > 0 \
                else np.zeros(spec.K)
            rewards = np.clip(means + noise, 0.0, 1.0)
            yield Round(t=t, user=user, arms=arms, true_means=means,
                        realized_rewards=rewards)


def make_user_features(n_users, d, n_groups=1, jitter=0.1, seed=0):
    """Unit-norm user features drawn around n_groups shared prototypes."""
    rng = np.random.default_rng(seed)
    protos = _unit_rows(rng.standard_normal((n_groups, d)))
    feats = np.empty((n_users, d))
    for u in range(n_users):
        feats[u] = protos[u % n_groups] + jitter * rng.standard_normal(d)
    return _unit_rows(feats)


class PerturbedEnv:
    """Stationary pieces of `period` rounds; at the start of every round
    divisible by `period`, Gaussian noise is added to all user feature
    vectors (then re-normalized), shifting the ground truth."""

    def __init__(self, base_features, period=200, sigma=0.1, seed=0,
                 K=10, T=10000, noise_sigma=0.05, reward_family="cosine",
                 user_weights=None):
        base_features = np.asarray(base_features, dtype=float)
        if base_features.ndim != 2:
            raise EnvError("base_features must be (n_users, d)")
        if period < 1:
            raise EnvError(f"period must be >= 1, got {period}")
        if sigma < 0 or noise_sigma < 0:
            raise EnvError("sigma values must be >= 0")
        if K < 2:
            raise EnvError(f"need K >= 2 arms, got {K}")
        self.period = int(period)
        self.sigma = float(sigma)
        self.K = int(K)
        self.T = int(T)
        self.noise_sigma = float(noise_sigma)
        self.family = REWARD_FAMILIES[reward_family]
        self.features = _unit_rows(base_features.copy())
        self.n_users, self.d = self.features.shape
        if user_weights is None:
            self._weights = np.full(self.n_users, 1.0 / self.n_users)
        else:
            w = np.asarray(user_weights, dtype=float)
            if w.shape != (self.n_users,) or (w < 0).any() or w.sum() <= 0:
                raise EnvError("user_weights must be non-negative, one per user")
            self._weights = w / w.sum()
        self._rng = np.random.default_rng(seed)

    def perturb(self):
        """Inject one dose of feature noise; returns the raw draw (None if sigma=0).

        sigma == 0 draws nothing, so the stream matches a never-perturbed env.
        """
        if self.sigma == 0:
            return None
        noise = self._rng.normal(0.0, self.sigma, self.features.shape)
        self.features = _unit_rows(self.features + noise)
        return noise

    def true_mean(self, user, arm):
        return float(np.clip(self.family(float(arm @ self.features[user])), 0.0, 1.0))

    def rounds(self):
        rng = self._rng
        for t in range(1, self.T + 1):
            if t > 1 and t % self.period == 0:
                self.perturb()
            user = int(rng.choice(self.n_users, p=self._weights))
            arms = _unit_rows(rng.standard_normal((self.K, self.d)))
            means = np.clip(self.family(arms @ self.features[user]), 0.0, 1.0)
            noise = rng.normal(0.0, self.noise_sigma, self.K) if self.noise_sigma > 0 \
                else np.zeros(self.K)
            rewards = np.clip(means + noise, 0.0, 1.0)
            yield Round(t=t, user=user, arms=arms, true_means=means,
                        realized_rewards=rewards)
