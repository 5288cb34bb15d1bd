"""Offline ratings pipeline: SVD features, binarization, user grouping.

Input is a delimited text file with a header row and columns
``user_id,item_id,rating`` (comma or tab separated). Processing:

1. keep the top-N users and items by rating count;
2. factorize the rating matrix with truncated SVD, rank = d/2 per side,
   and l2-normalize the factor rows;
3. binarize: rating > 4 is a positive, anything else a negative;
4. partition users into k groups with a seeded Lloyd's k-means
   (k-means++ start, lowest-index tie-break, at most 100 iterations).

Users without a positive item are dropped (and logged). The processed
dataset can be cached to an .npz container and re-loaded without redoing
the SVD. `sample_round` turns the dataset into bandit rounds: one positive
and nine negative items per draw, arm vector = user factor ++ item factor.
"""

from dataclasses import dataclass
import csv
import logging

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import svds

from .envs import Round

log = logging.getLogger(__name__)


class RatingsError(ValueError):
    pass


@dataclass
class RatingsDataset:
    user_ids: np.ndarray         # original ids, index-aligned with user_factors
    item_ids: np.ndarray
    user_factors: np.ndarray     # (n_users, rank), rows unit-norm
    item_factors: np.ndarray     # (n_items, rank), rows unit-norm
    groups: np.ndarray           # (n_users,) k-means group per user
    n_groups: int
    positives: list              # per user, np.ndarray of item indices
    negatives: list

    @property
    def arm_dim(self):
        return self.user_factors.shape[1] + self.item_factors.shape[1]

    def eligible(self, u, n_negatives=9):
        return len(self.positives[u]) >= 1 and len(self.negatives[u]) >= n_negatives

    def save(self, path):
        """Cache container: factor matrices, groups and CSR-packed pos/neg indices."""
        pos_idx = np.concatenate([p for p in self.positives]) if self.positives else np.array([], dtype=int)
        pos_ptr = np.cumsum([0] + [len(p) for p in self.positives])
        neg_idx = np.concatenate([n for n in self.negatives]) if self.negatives else np.array([], dtype=int)
        neg_ptr = np.cumsum([0] + [len(n) for n in self.negatives])
        np.savez(path,
                 user_ids=self.user_ids, item_ids=self.item_ids,
                 user_factors=self.user_factors, item_factors=self.item_factors,
                 groups=self.groups, n_groups=np.array([self.n_groups]),
                 pos_idx=pos_idx, pos_ptr=pos_ptr,
                 neg_idx=neg_idx, neg_ptr=neg_ptr)

    @classmethod
    def load(cls, path):
        z = np.load(path)
        pos_ptr, neg_ptr = z["pos_ptr"], z["neg_ptr"]
        positives = [z["pos_idx"][pos_ptr[i]:pos_ptr[i + 1]] for i in range(len(pos_ptr) - 1)]
        negatives = [z["neg_idx"][neg_ptr[i]:neg_ptr[i + 1]] for i in range(len(neg_ptr) - 1)]
        return cls(user_ids=z["user_ids"], item_ids=z["item_ids"],
                   user_factors=z["user_factors"], item_factors=z["item_factors"],
                   groups=z["groups"], n_groups=int(z["n_groups"][0]),
                   positives=positives, negatives=negatives)


def read_triples(path, delimiter=None):
    """(user, item, rating) triples from a delimited text file with a header."""
    with open(path, newline="") as f:
        sample = f.read(4096)
        f.seek(0)
        if delimiter is None:
            delimiter = "\t" if sample.count("\t") > sample.count(",") else ","
        reader = csv.reader(f, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise RatingsError(f"{path}: empty ratings file")
        triples = []
        for row in reader:
            if not row:
                continue
            try:
                triples.append((row[0], row[1], float(row[2])))
            except (IndexError, ValueError) as exc:
                raise RatingsError(f"{path}: malformed row {row!r}") from exc
    if not triples:
        raise RatingsError(f"{path}: no rating records")
    return triples


def _top_by_count(values, cap):
    ids, counts = np.unique(values, return_counts=True)
    order = np.lexsort((ids, -counts))   # count desc, then id asc
    return ids[order[:cap]]


def kmeans(points, k, seed=0, max_iter=100):
    """Seeded Lloyd's k-means with k-means++ initialization.

    Ties on equidistant centroids break toward the lowest centroid index.
    Empty clusters keep their previous centroid.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    rng = np.random.default_rng(seed)
    k = min(k, n)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    labels = np.zeros(n, dtype=int)
    for it in range(max_iter):
        dists = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dists, axis=1)      # argmin takes the lowest index on ties
        if it > 0 and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return labels, centroids


def _svd_factors(matrix, rank, seed=0):
    rank = min(rank, min(matrix.shape) - 1)
    if rank < 1:
        raise RatingsError("rating matrix too small for SVD")
    v0 = np.random.default_rng(seed).standard_normal(min(matrix.shape))
    u, s, vt = svds(matrix, k=rank, v0=v0)
    order = np.argsort(-s)
    u, s, vt = u[:, order], s[order], vt[order]
    # fix the sign ambiguity: largest-|.| entry of each left vector positive
    for j in range(rank):
        pivot = np.argmax(np.abs(u[:, j]))
        if u[pivot, j] < 0:
            u[:, j] = -u[:, j]
            vt[j] = -vt[j]
    root_s = np.sqrt(s)
    return u * root_s, vt.T * root_s


def _unit_rows(m, eps=1e-12):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, eps)


def ingest_ratings(path, rank=10, n_groups=50, max_users=10000, max_items=10000,
                   positive_above=4.0, seed=0, delimiter=None):
    """Build a RatingsDataset from a delimited ratings file. Arm dimension
    is 2*rank (user factor concatenated with item factor)."""
    triples = read_triples(path, delimiter=delimiter)
    raw_users = np.array([t[0] for t in triples])
    raw_items = np.array([t[1] for t in triples])
    ratings = np.array([t[2] for t in triples])

    keep_users = _top_by_count(raw_users, max_users)
    keep_items = _top_by_count(raw_items, max_items)
    u_index = {u: i for i, u in enumerate(keep_users)}
    i_index = {it: i for i, it in enumerate(keep_items)}
    mask = np.array([u in u_index and it in i_index
                     for u, it in zip(raw_users, raw_items)])
    rows = np.array([u_index[u] for u in raw_users[mask]])
    cols = np.array([i_index[it] for it in raw_items[mask]])
    vals = ratings[mask]

    n_u, n_i = len(keep_users), len(keep_items)
    # duplicate (user, item) entries: the last record wins
    cell = {}
    for r, c, v in zip(rows, cols, vals):
        cell[(r, c)] = v
    rcv = np.array([(r, c, v) for (r, c), v in sorted(cell.items())])
    matrix = csr_matrix((rcv[:, 2], (rcv[:, 0].astype(int), rcv[:, 1].astype(int))),
                        shape=(n_u, n_i))

    user_factors, item_factors = _svd_factors(matrix, rank, seed=seed)
    user_factors = _unit_rows(user_factors)
    item_factors = _unit_rows(item_factors)

    positives, negatives, dropped = [], [], []
    m = matrix.tocsr()
    for u in range(n_u):
        start, end = m.indptr[u], m.indptr[u + 1]
        items = m.indices[start:end]
        vals_u = m.data[start:end]
        pos = items[vals_u > positive_above]
        neg = items[vals_u <= positive_above]
        if len(pos) == 0:
            dropped.append(u)
        positives.append(np.sort(pos))
        negatives.append(np.sort(neg))
    if dropped:
        log.info("ratings ingest: %d users have no positive item and will never be sampled",
                 len(dropped))

    labels, _ = kmeans(user_factors, n_groups, seed=seed)
    return RatingsDataset(user_ids=keep_users, item_ids=keep_items,
                          user_factors=user_factors, item_factors=item_factors,
                          groups=labels, n_groups=int(labels.max()) + 1,
                          positives=positives, negatives=negatives)


class RatingsEnv:
    """Bandit rounds over a RatingsDataset: uniform group, uniform user in
    the group, arms = 1 positive + n_negatives negative items, shuffled."""

    def __init__(self, dataset, T=10000, seed=0, n_negatives=9, max_resample=1000):
        self.dataset = dataset
        self.T = int(T)
        self.n_negatives = int(n_negatives)
        self.max_resample = int(max_resample)
        self._rng = np.random.default_rng(seed)
        self._group_members = [np.flatnonzero(dataset.groups == g)
                               for g in range(dataset.n_groups)]
        if not any(dataset.eligible(u, self.n_negatives)
                   for u in range(len(dataset.user_ids))):
            raise RatingsError("no user has >=1 positive and enough negatives")

    def sample_round(self, t):
        ds = self.dataset
        rng = self._rng
        for _ in range(self.max_resample):
            g = int(rng.integers(ds.n_groups))
            members = self._group_members[g]
            if len(members) == 0:
                continue
            user = int(members[rng.integers(len(members))])
            if not ds.eligible(user, self.n_negatives):
                continue
            pos = ds.positives[user][rng.integers(len(ds.positives[user]))]
            negs = rng.choice(ds.negatives[user], size=self.n_negatives, replace=False)
            items = np.concatenate([[pos], negs])
            rewards = np.zeros(len(items))
            rewards[0] = 1.0
            perm = rng.permutation(len(items))
            items, rewards = items[perm], rewards[perm]
            arms = np.hstack([np.tile(ds.user_factors[user], (len(items), 1)),
                              ds.item_factors[items]])
            return Round(t=t, user=user, arms=arms, true_means=rewards.copy(),
                         realized_rewards=rewards)
        raise RatingsError("could not sample an eligible user")

    def rounds(self):
        for t in range(1, self.T + 1):
            yield self.sample_round(t)
