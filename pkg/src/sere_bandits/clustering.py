"""User clustering strategies.

Two ways to group users:

* graph clustering: connect users whose embedding vectors (here, the
  flattened final weight layer of their networks) are within epsilon1 of
  each other and take connected components — item-independent, one global
  partition;
* reward-identity clustering: per arm, group users whose predicted rewards
  for that arm coincide up to a tolerance (transitive closure, so groups
  are chains of near-equal predictions).

`validate_assignment` brute-force checks the cluster conditions (bounded
intra-cluster diameter, maximality, inter-cluster separation) and is kept
independent of the clustering code paths so it can serve as their oracle.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class UserEmbedding:
    user: int
    vector: np.ndarray


@dataclass
class ClusterAssignment:
    mode: str                       # "global" or "per_arm"
    clusters: list                  # list of sorted user-id lists
    epsilon1: float = 0.0
    epsilon2: float | None = None
    arm: int | None = None          # set for per_arm assignments

    def cluster_of(self, user):
        for c in self.clusters:
            if user in c:
                return c
        raise KeyError(f"user {user} not in assignment")

    @property
    def sizes(self):
        return [len(c) for c in self.clusters]


def _canonical(groups):
    groups = [sorted(g) for g in groups if g]
    groups.sort(key=lambda g: g[0])
    return groups


def club_clusters(embeddings, epsilon1):
    """Connected components of the epsilon1-neighbourhood graph over user vectors."""
    if epsilon1 <= 0:
        raise ValueError(f"epsilon1 must be > 0, got {epsilon1}")
    if len(embeddings) == 0:
        raise ValueError("empty user set")
    users = [e.user for e in embeddings]
    vecs = np.asarray([np.asarray(e.vector, dtype=float) for e in embeddings])
    diff = vecs[:, None, :] - vecs[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    adj = csr_matrix(dist <= epsilon1)
    n_comp, labels = connected_components(adj, directed=False)
    groups = [[] for _ in range(n_comp)]
    for u, lab in zip(users, labels):
        groups[lab].append(u)
    return ClusterAssignment(mode="global", clusters=_canonical(groups),
                             epsilon1=float(epsilon1))


def mcnb_clusters(predicted_rewards, tolerance, arm=None):
    """Group users whose predicted rewards for one arm chain within tolerance.

    predicted_rewards maps user id -> scalar prediction. The grouping is the
    transitive closure of |r_u - r_v| <= tolerance, i.e. contiguous runs after
    sorting by value, which makes it independent of input order.
    """
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    items = sorted(predicted_rewards.items(), key=lambda kv: (kv[1], kv[0]))
    groups = []
    current = []
    prev = None
    for user, r in items:
        if current and r - prev > tolerance:
            groups.append(current)
            current = []
        current.append(user)
        prev = r
    if current:
        groups.append(current)
    return ClusterAssignment(mode="per_arm", clusters=_canonical(groups),
                             epsilon1=float(tolerance), arm=arm)


def validate_assignment(assignment, embeddings, epsilon1, epsilon2=None):
    """Brute-force check of the cluster conditions; returns (ok, violations).

    (1) every intra-cluster pairwise distance <= epsilon1;
    (2) maximality: no cluster can absorb an outside user and still satisfy (1);
    (3) if epsilon2 is given, every cross-cluster pairwise distance >= epsilon2.
    """
    vec = {e.user: np.asarray(e.vector, dtype=float) for e in embeddings}
    violations = []
    for ci, cluster in enumerate(assignment.clusters):
        for a in cluster:
            for b in cluster:
                if a < b and np.linalg.norm(vec[a] - vec[b]) > epsilon1:
                    violations.append(
                        f"cluster {ci}: users {a},{b} further apart than epsilon1")
    assigned = {u for c in assignment.clusters for u in c}
    for ci, cluster in enumerate(assignment.clusters):
        for out in assigned - set(cluster):
            if all(np.linalg.norm(vec[out] - vec[m]) <= epsilon1 for m in cluster):
                violations.append(
                    f"cluster {ci}: not maximal, user {out} fits inside epsilon1")
                break
    if epsilon2 is not None:
        for ci, ca in enumerate(assignment.clusters):
            for cj, cb in enumerate(assignment.clusters):
                if ci < cj:
                    for a in ca:
                        for b in cb:
                            if np.linalg.norm(vec[a] - vec[b]) < epsilon2:
                                violations.append(
                                    f"clusters {ci},{cj}: users {a},{b} closer "
                                    f"than epsilon2")
    return len(violations) == 0, violations


def mean_parameters(nets):
    """Element-wise mean of several networks' parameters (same shape required)."""
    first = nets[0]
    if len(nets) == 1:
        return first.copy()
    out = first.copy()
    for l in range(len(out.weights)):
        acc_w = out.weights[l]
        acc_b = out.biases[l]
        for other in nets[1:]:
            acc_w += other.weights[l]
            acc_b += other.biases[l]
        acc_w /= len(nets)
        acc_b /= len(nets)
    return out
