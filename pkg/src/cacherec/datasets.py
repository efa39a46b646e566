"""Input builders: rating-based, triplet-based and synthetic similarity.

The rating pipeline fills a sparse ratings table by item-to-item
collaborative filtering, computes item-centered cosine similarities,
thresholds them to a binary relatedness matrix and prunes contents with
too few relations so every quality floor stays attainable. Synthetic
generators cover the dataset-free experiments.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .model import PopularityVector, SimilarityMatrix

__all__ = [
    "RatingsTable",
    "SyntheticSimilaritySpec",
    "cf_fill",
    "cosine_similarity",
    "binarize",
    "symmetrize_max",
    "prune",
    "prune_with_stats",
    "synthetic_similarity",
    "anchored_similarity",
    "zipf_popularity",
    "load_movielens_csv",
    "load_lastfm_triplets",
    "prepare_movielens",
    "prepare_lastfm",
]


@dataclass(frozen=True)
class RatingsTable:
    """User-item-rating triples on a declared rating scale."""

    user_ids: np.ndarray
    item_ids: np.ndarray
    ratings: np.ndarray
    scale: tuple = (0.5, 5.0)

    def __post_init__(self):
        users = np.asarray(self.user_ids)
        items = np.asarray(self.item_ids)
        ratings = np.asarray(self.ratings, dtype=float)
        if not (users.size == items.size == ratings.size):
            raise ValueError("user, item and rating columns must align")
        if users.size == 0:
            raise ValueError("ratings table is empty")
        lo, hi = self.scale
        if ratings.min() < lo or ratings.max() > hi:
            raise ValueError(f"ratings must lie in [{lo}, {hi}]")
        pairs = np.stack([users, items], axis=1)
        if np.unique(pairs, axis=0).shape[0] != pairs.shape[0]:
            raise ValueError("duplicate (user, item) pairs")
        object.__setattr__(self, "user_ids", users)
        object.__setattr__(self, "item_ids", items)
        object.__setattr__(self, "ratings", ratings)

    @property
    def users(self) -> np.ndarray:
        """Distinct user ids, ascending."""
        return np.unique(self.user_ids)

    @property
    def items(self) -> np.ndarray:
        """Distinct item ids, ascending."""
        return np.unique(self.item_ids)


@dataclass(frozen=True)
class SyntheticSimilaritySpec:
    """Random relatedness graph: size, mean relations per content, seed."""

    size: int
    mean_related: float
    seed: int = 0

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("size must be >= 2")
        if not (0.0 < self.mean_related < self.size):
            raise ValueError("mean_related must lie in (0, size)")


def _item_item_similarity(r: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Cosine over co-rated, item-mean-centered rating vectors.

    For every item pair the dot product and both norms run over the
    users who rated both items; entries centered by each item's overall
    mean rating. Pairs with no co-rater or a zero norm score 0.
    """
    counts = observed.sum(axis=1)
    means = np.where(counts > 0, (r * observed).sum(axis=1) / np.maximum(counts, 1), 0.0)
    centered = (r - means[:, None]) * observed
    dot = centered @ centered.T
    sq = centered * centered
    # norm of item i restricted to the users that also rated item j
    norm2 = sq @ observed.T
    denom = np.sqrt(norm2 * norm2.T)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(sim, 0.0)
    return sim


def cf_fill(table: RatingsTable, k: int = 10) -> np.ndarray:
    """Complete the item-by-user rating matrix by item-based filtering.

    Missing entries become the similarity-weighted average of the user's
    ratings on the `k` most similar items (cosine over co-rated,
    mean-centered vectors); existing ratings are untouched. When no
    neighbor carries weight the item's mean rating is used.

    Returns the dense item-by-user matrix, rows aligned with
    ``table.items`` and columns with ``table.users``.
    """
    items = table.items
    users = table.users
    if items.size < 2:
        raise ValueError("need at least two items to fill by item similarity")
    item_pos = {v: i for i, v in enumerate(items)}
    user_pos = {v: i for i, v in enumerate(users)}
    r = np.zeros((items.size, users.size))
    observed = np.zeros_like(r, dtype=bool)
    for u, it, val in zip(table.user_ids, table.item_ids, table.ratings):
        r[item_pos[it], user_pos[u]] = val
        observed[item_pos[it], user_pos[u]] = True

    sim = _item_item_similarity(r, observed)
    counts = observed.sum(axis=1)
    item_mean = (r * observed).sum(axis=1) / np.maximum(counts, 1)

    out = r.copy()
    for uj in range(users.size):
        rated = np.flatnonzero(observed[:, uj])
        missing = np.flatnonzero(~observed[:, uj])
        if missing.size == 0 or rated.size == 0:
            out[missing, uj] = item_mean[missing]
            continue
        s = sim[np.ix_(missing, rated)]
        # k most similar rated items per target, deterministic on ties
        order = np.lexsort((np.broadcast_to(rated, s.shape), -s), axis=1)[:, :k]
        rows = np.arange(missing.size)[:, None]
        w = s[rows, order]
        vals = r[rated[order], uj]
        denom = np.abs(w).sum(axis=1)
        num = (w * vals).sum(axis=1)
        pred = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), item_mean[missing])
        out[missing, uj] = pred
    return out


def cosine_similarity(m: np.ndarray) -> np.ndarray:
    """Item-centered cosine similarity of a complete rating matrix.

    Each row is centered by its own mean; rows with zero centered norm
    get similarity 0 to everything. Values lie in [-1, 1] with a zero
    diagonal (a raw score matrix, not yet a relatedness matrix).
    """
    r = np.asarray(m, dtype=float)
    centered = r - r.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    sim = (centered @ centered.T) / np.outer(safe, safe)
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    np.fill_diagonal(sim, 0.0)
    return np.clip(sim, -1.0, 1.0)


def symmetrize_max(s: np.ndarray) -> np.ndarray:
    """Element-wise max with the transpose; relatedness is pairwise."""
    s = np.asarray(s, dtype=float)
    return np.maximum(s, s.T)


def binarize(s: np.ndarray, theta: float = 0.6) -> SimilarityMatrix:
    """Threshold raw scores to a binary relatedness matrix.

    An entry becomes 1 iff it exceeds `theta` strictly; the diagonal is
    forced to 0.
    """
    sv = np.asarray(s, dtype=float)
    u = (sv > theta).astype(float)
    np.fill_diagonal(u, 0.0)
    return SimilarityMatrix(u)


def prune_with_stats(u: SimilarityMatrix, n: int):
    """Remove contents with row sum <= n until none remain below.

    Removing a content lowers other rows' sums, so the rule iterates to
    a fixpoint. Returns the compacted matrix, the old-to-new id mapping
    and the number of sweeps performed.
    """
    uv = np.asarray(u, dtype=float)
    k = uv.shape[0]
    keep = np.ones(k, dtype=bool)
    sweeps = 0
    while True:
        sums = (uv * np.outer(keep, keep)).sum(axis=1)
        drop = keep & (sums <= n)
        if not drop.any():
            break
        keep &= ~drop
        sweeps += 1
        if not keep.any():
            raise ValueError(f"pruning at N={n} removed the whole catalog")
    kept = np.flatnonzero(keep)
    mapping = {int(old): new for new, old in enumerate(kept)}
    return SimilarityMatrix(uv[np.ix_(kept, kept)]), mapping, sweeps


def prune(u: SimilarityMatrix, n: int):
    """`prune_with_stats` without the sweep count."""
    u2, mapping, _ = prune_with_stats(u, n)
    return u2, mapping


def synthetic_similarity(spec: SyntheticSimilaritySpec, min_row_sum: int = 0) -> SimilarityMatrix:
    """Random symmetric binary relatedness with a target mean degree.

    Each unordered pair relates independently with probability
    ``mean_related / (size - 1)``. The draw is repeated on fresh child
    seed streams until every row sums above `min_row_sum`, up to 100
    attempts. Deterministic for a fixed spec.
    """
    k = spec.size
    p = min(1.0, spec.mean_related / (k - 1))
    streams = np.random.SeedSequence(spec.seed).spawn(100)
    iu = np.triu_indices(k, 1)
    for child in streams:
        rng = np.random.default_rng(child)
        upper = rng.random(iu[0].size) < p
        u = np.zeros((k, k))
        u[iu] = upper
        u += u.T
        if u.sum(axis=1).min() > min_row_sum:
            return SimilarityMatrix(u)
    raise RuntimeError(
        f"no draw with min row sum > {min_row_sum} in 100 attempts "
        f"(size={k}, mean_related={spec.mean_related})"
    )


def anchored_similarity(k: int, mean_related: float, min_related: int, seed: int = 0) -> SimilarityMatrix:
    """Random binary relatedness with a guaranteed per-content floor.

    A random cycle provides degree 2, random matchings lift every content
    to `min_related` relations, and random extra pairs raise the mean to
    `mean_related`. Use this when independent pair sampling cannot reach
    the floor (sparse graphs at small sizes).
    """
    if not (0 <= min_related < k):
        raise ValueError("min_related must lie in [0, size)")
    if mean_related < min_related or mean_related >= k:
        raise ValueError("mean_related must lie in [min_related, size)")
    rng = np.random.default_rng(seed)
    adj = np.zeros((k, k), dtype=bool)

    perm = rng.permutation(k)
    adj[perm, np.roll(perm, -1)] = True
    adj |= adj.T
    np.fill_diagonal(adj, False)

    guard = 0
    while adj.sum(axis=1).min() < min_related:
        order = rng.permutation(k)
        for a, b in zip(order[0::2], order[1::2]):
            if a != b and not adj[a, b] and (
                adj[a].sum() < min_related or adj[b].sum() < min_related
            ):
                adj[a, b] = adj[b, a] = True
        guard += 1
        if guard > 50 * max(1, min_related):
            raise RuntimeError("could not reach the relation floor")

    target_pairs = int(round(mean_related * k / 2.0))
    iu = np.triu_indices(k, 1)
    absent = np.flatnonzero(~adj[iu])
    deficit = target_pairs - int(adj[iu].sum())
    if deficit > 0 and absent.size:
        extra = rng.choice(absent, size=min(deficit, absent.size), replace=False)
        adj[iu[0][extra], iu[1][extra]] = True
        adj |= adj.T
    return SimilarityMatrix(adj.astype(float))


def zipf_popularity(k: int, s: float) -> PopularityVector:
    """Power-law popularity: rank-r mass proportional to ``r**(-s)``.

    Ranks follow the content index order, so entry 0 is the most popular.
    """
    if s < 0:
        raise ValueError("exponent must be >= 0")
    w = np.arange(1, k + 1, dtype=float) ** (-s)
    return PopularityVector(w / w.sum())


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------

def load_movielens_csv(path) -> RatingsTable:
    """Read a `userId,movieId,rating,timestamp` CSV with a header row."""
    users, items, ratings = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"userId", "movieId", "rating"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(
                f"expected columns userId,movieId,rating[,timestamp], got {reader.fieldnames}"
            )
        for row in reader:
            users.append(int(row["userId"]))
            items.append(int(row["movieId"]))
            ratings.append(float(row["rating"]))
    return RatingsTable(np.asarray(users), np.asarray(items), np.asarray(ratings))


def load_lastfm_triplets(path):
    """Read `idA<TAB>idB<TAB>score` lines into a symmetric score matrix.

    Returns the matrix and the sorted id list defining its indices.
    Conflicting directed scores resolve by element-wise max.
    """
    pairs = []
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected idA<TAB>idB<TAB>score")
            a, b, score = parts[0], parts[1], float(parts[2])
            pairs.append((a, b, score))
            ids.add(a)
            ids.add(b)
    if not pairs:
        raise ValueError("similarity file is empty")
    id_list = sorted(ids)
    pos = {v: i for i, v in enumerate(id_list)}
    s = np.zeros((len(id_list), len(id_list)))
    for a, b, score in pairs:
        i, j = pos[a], pos[b]
        if i != j:
            s[i, j] = max(s[i, j], score)
    return symmetrize_max(s), id_list


def prepare_movielens(path, theta: float = 0.6, list_size: int = 4):
    """Full rating pipeline: fill, cosine, threshold, prune.

    Returns the pruned relatedness matrix, the surviving item ids and a
    provenance dictionary describing every stage.
    """
    table = load_movielens_csv(path)
    filled = cf_fill(table, k=10)
    raw = symmetrize_max(cosine_similarity(filled))
    u = binarize(raw, theta)
    pruned, mapping, sweeps = prune_with_stats(u, list_size)
    items = table.items
    kept_ids = [int(items[old]) for old in sorted(mapping, key=mapping.get)]
    provenance = {
        "source": str(path),
        "kind": "movielens",
        "ratings": int(table.ratings.size),
        "theta": theta,
        "list_size": list_size,
        "prune_sweeps": sweeps,
        "catalog_size": pruned.size,
    }
    return pruned, kept_ids, provenance


def prepare_lastfm(path, list_size: int = 4):
    """Triplet pipeline: load, positive-threshold, prune."""
    s, ids = load_lastfm_triplets(path)
    u = binarize(s, 0.0)
    pruned, mapping, sweeps = prune_with_stats(u, list_size)
    kept_ids = [ids[old] for old in sorted(mapping, key=mapping.get)]
    provenance = {
        "source": str(path),
        "kind": "lastfm",
        "theta": 0.0,
        "list_size": list_size,
        "prune_sweeps": sweeps,
        "catalog_size": pruned.size,
    }
    return pruned, kept_ids, provenance
