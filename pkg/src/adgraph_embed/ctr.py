"""Synthetic click data, CTR metrics and a logistic probe for embedding tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from ._fileio import atomic_write, fmt
from .encoder import EmbeddingTable
from .items import AdRecord, load_items, save_items

SCOPES = ("all", "cold_only")
PROB_CLIP = 1e-7


# --------------------------------------------------------------------------
# metrics

def cross_entropy(y_hat, y) -> float:
    """Mean binary cross-entropy with predictions clipped to [1e-7, 1 - 1e-7]."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    p = np.clip(y_hat, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    n_items: int = 2000
    n_users: int = 500
    n_pages: int = 6
    n_clusters: int = 4
    n_impressions: int = 100_000
    cold_fraction: float = 0.1
    seed: int = 0
    k: int = 16
    user_dim: int = 8
    semantic_noise: float = 3.0
    page_affinity: float = 0.7
    test_fraction: float = 0.2

    def __post_init__(self) -> None:
        for name in ("n_items", "n_users", "n_pages", "n_clusters", "n_impressions", "k", "user_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.cold_fraction < 1.0:
            raise ValueError("cold_fraction must lie in [0, 1)")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        if not 0.0 <= self.page_affinity <= 1.0:
            raise ValueError("page_affinity must lie in [0, 1]")
        if self.semantic_noise < 0:
            raise ValueError("semantic_noise must be non-negative")


@dataclass(frozen=True, eq=False)
class Impressions:
    user_idx: np.ndarray
    ad_idx: np.ndarray
    click: np.ndarray
    prob: np.ndarray  # ground-truth click probability; NaN when unknown

    def __len__(self) -> int:
        return self.click.size

    def subset(self, mask: np.ndarray) -> "Impressions":
        return Impressions(self.user_idx[mask], self.ad_idx[mask], self.click[mask], self.prob[mask])


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    items: tuple[AdRecord, ...]
    item_clusters: np.ndarray
    users: np.ndarray
    user_clusters: np.ndarray
    train: Impressions
    test: Impressions
    heldout: tuple[str, ...]
    affinity: np.ndarray | None = None
    is_cold: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        held = set(self.heldout)
        object.__setattr__(self, "is_cold", np.array([r.ad_id in held for r in self.items], dtype=bool))

    @property
    def ad_ids(self) -> tuple[str, ...]:
        return tuple(r.ad_id for r in self.items)


def _pages_with_history(is_new: np.ndarray, pages: np.ndarray) -> np.ndarray:
    """Un-mark cold items on pages that would otherwise have no historical ad."""
    is_new = is_new.copy()
    for page in np.unique(pages):
        members = np.flatnonzero(pages == page)
        if is_new[members].all():
            is_new[members[0]] = False
    return is_new


def gen_synthetic(config: SyntheticConfig = SyntheticConfig()) -> SyntheticDataset:
    """Planted-cluster ads, users and impressions.

    Semantic vectors are a unit cluster centroid plus isotropic noise
    (re-normalized). Each cluster prefers a home page. Click logits are
    ``base + user_effect[uc] + item_effect[ic] + interaction[uc, ic]``;
    historical UV/PV/CTR stats of old ads are noisy draws around the ad's
    population click rate.
    """
    c = config
    rng = np.random.default_rng(c.seed)
    centroids = rng.standard_normal((c.n_clusters, c.k))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = rng.integers(c.n_clusters, size=c.n_items)
    semantic = centroids[labels] + c.semantic_noise * rng.standard_normal((c.n_items, c.k)) / np.sqrt(c.k)
    semantic /= np.linalg.norm(semantic, axis=1, keepdims=True)

    home = labels % c.n_pages
    stray = rng.random(c.n_items) >= c.page_affinity
    pages = np.where(stray, rng.integers(c.n_pages, size=c.n_items), home)

    n_cold = int(round(c.cold_fraction * c.n_items))
    is_new = np.zeros(c.n_items, dtype=bool)
    is_new[rng.choice(c.n_items, size=n_cold, replace=False)] = True
    is_new = _pages_with_history(is_new, pages)

    item_effect = rng.permutation(np.linspace(-1.5, 1.5, c.n_clusters))
    user_effect = rng.normal(0.0, 0.5, size=c.n_clusters)
    interaction = rng.normal(0.0, 0.5, size=(c.n_clusters, c.n_clusters))
    affinity = -1.0 + user_effect[:, None] + item_effect[None, :] + interaction

    user_clusters = rng.integers(c.n_clusters, size=c.n_users)
    user_centroids = rng.standard_normal((c.n_clusters, c.user_dim))
    users = user_centroids[user_clusters] + 0.5 * rng.standard_normal((c.n_users, c.user_dim))

    population_ctr = expit(affinity[user_clusters]).mean(axis=0)[labels]
    traffic = 200.0 * rng.lognormal(0.0, 0.5, size=c.n_pages)
    items = []
    for i in range(c.n_items):
        vec = tuple(float(v) for v in semantic[i])
        page_id = f"page{pages[i]}"
        if is_new[i]:
            items.append(AdRecord(f"ad{i}", vec, page_id, is_new=True))
            continue
        pv = 1 + int(rng.poisson(traffic[pages[i]]))
        uv = max(1, int(rng.binomial(pv, 0.7)))
        p = population_ctr[i]
        pvctr = rng.binomial(pv, p) / pv
        uvctr = rng.binomial(uv, min(1.0, 1.1 * p)) / uv
        items.append(AdRecord(f"ad{i}", vec, page_id, uv, pv, float(uvctr), float(pvctr)))

    user_idx = rng.integers(c.n_users, size=c.n_impressions)
    ad_idx = rng.integers(c.n_items, size=c.n_impressions)
    prob = expit(affinity[user_clusters[user_idx], labels[ad_idx]])
    click = (rng.random(c.n_impressions) < prob).astype(np.int8)
    to_test = rng.random(c.n_impressions) < c.test_fraction
    imps = Impressions(user_idx, ad_idx, click, prob)
    cold_imp = is_new[ad_idx]
    return SyntheticDataset(
        items=tuple(items),
        item_clusters=labels,
        users=users,
        user_clusters=user_clusters,
        train=imps.subset(~cold_imp & ~to_test),
        test=imps.subset(cold_imp | to_test),
        heldout=tuple(f"ad{i}" for i in np.flatnonzero(is_new)),
        affinity=affinity,
    )


def planted_items(
    n_items: int = 50, n_clusters: int = 2, seed: int = 0, k: int = 8,
    noise: float = 0.5, page_affinity: float = 0.9,
) -> tuple[list[AdRecord], np.ndarray]:
    """Small corpus whose graph has block structure: one centroid and one home page per cluster.

    Returns the items and their cluster labels.
    """
    if n_items < 2 or n_clusters < 1:
        raise ValueError("need n_items >= 2 and n_clusters >= 1")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((n_clusters, k))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = np.arange(n_items) % n_clusters
    semantic = centroids[labels] + noise * rng.standard_normal((n_items, k)) / np.sqrt(k)
    stray = rng.random(n_items) >= page_affinity
    stray[:n_clusters] = False  # every home page keeps at least one ad
    pages = np.where(stray, rng.integers(n_clusters, size=n_items), labels)
    items = []
    for i in range(n_items):
        pv = int(rng.integers(10, 1000))
        uv = int(rng.integers(1, pv + 1))
        items.append(AdRecord(f"ad{i}", tuple(semantic[i].tolist()), f"page{pages[i]}", uv, pv,
                              float(rng.random()), float(rng.random())))
    return items, labels


def _write_impressions(path: Path, imps: Impressions) -> None:
    with atomic_write(path) as fh:
        for u, a, y in zip(imps.user_idx.tolist(), imps.ad_idx.tolist(), imps.click.tolist()):
            fh.write(f"{u} {a} {y}\n")


def _read_impressions(path: Path) -> Impressions:
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    if data.size == 0:
        data = data.reshape(0, 3)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 'user_idx ad_idx click' rows")
    return Impressions(data[:, 0], data[:, 1], data[:, 2].astype(np.int8), np.full(len(data), np.nan))


def save_dataset(directory: str | Path, ds: SyntheticDataset) -> None:
    """Write ``items.tsv``, ``users.tsv`` and train/test impression files."""
    d = Path(directory)
    save_items(d / "items.tsv", ds.items)
    with atomic_write(d / "users.tsv") as fh:
        for u, row in enumerate(ds.users.tolist()):
            fh.write(f"{u} " + " ".join(fmt(v) for v in row) + "\n")
    _write_impressions(d / "train_impressions.tsv", ds.train)
    _write_impressions(d / "test_impressions.tsv", ds.test)


def infer_k(items_path: str | Path) -> int:
    with open(items_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                return len(line.rstrip("\r\n").split("\t")[-1].split(","))
    raise ValueError(f"{items_path}: no records")


def load_dataset(directory: str | Path) -> SyntheticDataset:
    d = Path(directory)
    items = load_items(d / "items.tsv", infer_k(d / "items.tsv"))
    users_raw = np.loadtxt(d / "users.tsv", ndmin=2)
    order = np.argsort(users_raw[:, 0], kind="stable")
    users = users_raw[order, 1:]
    train = _read_impressions(d / "train_impressions.tsv")
    test = _read_impressions(d / "test_impressions.tsv")
    for imps in (train, test):
        if len(imps) and (imps.user_idx.max() >= len(users) or imps.ad_idx.max() >= len(items)):
            raise ValueError(f"{d}: impression index out of range")
    return SyntheticDataset(
        items=tuple(items),
        item_clusters=np.full(len(items), -1),
        users=users,
        user_clusters=np.full(len(users), -1),
        train=train,
        test=test,
        heldout=tuple(r.ad_id for r in items if r.is_new),
    )


# --------------------------------------------------------------------------
# logistic CTR probe

@dataclass(frozen=True)
class HeadConfig:
    epochs: int = 300
    lr: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")


@dataclass(frozen=True, eq=False)
class CtrHead:
    """Logistic regression over standardized ``concat(user_vec, item_embedding)``."""

    weight: np.ndarray
    bias: float
    center: np.ndarray
    scale: np.ndarray

    def logits(self, features: np.ndarray) -> np.ndarray:
        return ((features - self.center) / self.scale) @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return expit(self.logits(features))


def _features(ds: SyntheticDataset, table: EmbeddingTable, imps: Impressions) -> np.ndarray:
    ids = ds.ad_ids
    item_vecs = table.lookup(ids)
    return np.hstack([ds.users[imps.user_idx], item_vecs[imps.ad_idx]])


def fit_logistic(features: np.ndarray, y: np.ndarray, config: HeadConfig = HeadConfig()) -> CtrHead:
    """Full-batch gradient descent on mean cross-entropy from a zero start."""
    center = features.mean(axis=0) if len(features) else np.zeros(features.shape[1])
    scale = features.std(axis=0) if len(features) else np.ones(features.shape[1])
    scale = np.where(scale > 1e-12, scale, 1.0)
    Xs = (features - center) / scale
    y = np.asarray(y, dtype=np.float64)
    w = np.zeros(features.shape[1])
    b = 0.0
    for _ in range(config.epochs):
        r = expit(Xs @ w + b) - y
        w = w - config.lr * (Xs.T @ r) / len(y)
        b = b - config.lr * float(r.mean())
    return CtrHead(w, b, center, scale)


def train_ctr_head(ds: SyntheticDataset, embeddings: EmbeddingTable, config: HeadConfig = HeadConfig()) -> CtrHead:
    train_ids = {ds.items[a].ad_id for a in np.unique(ds.train.ad_idx)}
    missing = train_ids - set(embeddings.ordering)
    if missing:
        raise KeyError(f"no embedding for training item {sorted(missing)[0]!r}")
    return fit_logistic(_features(ds, embeddings, ds.train), ds.train.click, config)


def scoped_impressions(ds: SyntheticDataset, scope: str) -> Impressions:
    if scope == "all":
        return ds.test
    if scope == "cold_only":
        return ds.test.subset(ds.is_cold[ds.test.ad_idx])
    raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")


def evaluate(
    ds: SyntheticDataset,
    embeddings: EmbeddingTable,
    head: CtrHead,
    scope: str = "all",
    impressions: Impressions | None = None,
) -> dict[str, float]:
    """AUC and cross-entropy of ``head`` over the scoped test impressions.

    Passing ``impressions`` evaluates on that set instead of a named scope.
    """
    imps = impressions if impressions is not None else scoped_impressions(ds, scope)
    p = head.predict(_features(ds, embeddings, imps))
    return {"auc": auc(p, imps.click), "loss": cross_entropy(p, imps.click)}


def metrics_rows(
    ds: SyntheticDataset,
    tables: Sequence[tuple[str, EmbeddingTable]],
    config: HeadConfig = HeadConfig(),
    seed: int = 0,
) -> list[dict]:
    rows = []
    for name, table in tables:
        head = train_ctr_head(ds, table, config)
        for scope in SCOPES:
            m = evaluate(ds, table, head, scope)
            rows.append({"embed_model": name, "scope": scope, "auc": m["auc"], "loss": m["loss"], "seed": seed})
    return rows


def save_metrics(path: str | Path, rows: Sequence[dict]) -> None:
    with atomic_write(path) as fh:
        fh.write("embed_model,scope,auc,loss,seed\n")
        for r in rows:
            fh.write(f"{r['embed_model']},{r['scope']},{fmt(r['auc'])},{fmt(r['loss'])},{r['seed']}\n")
