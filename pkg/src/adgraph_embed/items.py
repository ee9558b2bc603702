"""Item knowledge base: ad records, page profiles and node feature assembly."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._fileio import atomic_write, fmt

PAGE_DIM = 5
INTERACTION_DIM = 4
INTERACTION_FIELDS = ("uv", "pv", "uvctr", "pvctr")


class ItemFormatError(ValueError):
    """Raised for malformed or invalid item records.

    ``line`` is the 1-based line number in the source file when known.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class AdRecord:
    ad_id: str
    semantic_vec: tuple[float, ...]
    page_id: str
    uv: int = 0
    pv: int = 0
    uvctr: float = 0.0
    pvctr: float = 0.0
    is_new: bool = False

    def validate(self) -> None:
        if not self.ad_id:
            raise ItemFormatError("empty ad_id", field="ad_id")
        if not all(math.isfinite(v) for v in self.semantic_vec):
            raise ItemFormatError(f"{self.ad_id}: non-finite semantic_vec", field="semantic_vec")
        if self.uv < 0 or self.pv < 0:
            raise ItemFormatError(f"{self.ad_id}: negative uv/pv", field="uv" if self.uv < 0 else "pv")
        for name in ("uvctr", "pvctr"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ItemFormatError(f"{self.ad_id}: {name}={v} outside [0, 1]", field=name)
        if self.uv > self.pv:
            raise ItemFormatError(f"{self.ad_id}: uv={self.uv} exceeds pv={self.pv}", field="uv")
        if self.is_new and (self.uv or self.pv or self.uvctr or self.pvctr):
            raise ItemFormatError(f"{self.ad_id}: new item carries interaction stats", field="is_new")

    @property
    def interactions(self) -> np.ndarray:
        return np.array([self.uv, self.pv, self.uvctr, self.pvctr], dtype=np.float64)


@dataclass(frozen=True)
class PageProfile:
    page_id: str
    ad_count: int
    mean_uv: float
    mean_pv: float
    mean_uvctr: float
    mean_pvctr: float
    page_vec: tuple[float, ...]

    @property
    def raw(self) -> np.ndarray:
        return np.array(
            [self.ad_count, self.mean_uv, self.mean_pv, self.mean_uvctr, self.mean_pvctr],
            dtype=np.float64,
        )


@dataclass(frozen=True, eq=False)
class NodeFeatures:
    """Row i of ``X`` is ``[semantic | page | scaled interactions]`` for ``ordering[i]``.

    ``interaction_min``/``interaction_max`` are the corpus column ranges used for
    min-max scaling; they are ``None`` when the features were read back from a
    graph file.
    """

    ordering: tuple[str, ...]
    X: np.ndarray
    k: int
    interaction_min: np.ndarray | None = None
    interaction_max: np.ndarray | None = None
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != len(self.ordering):
            raise ValueError(f"feature matrix shape {X.shape} does not match {len(self.ordering)} ids")
        if X.shape[1] != self.k + PAGE_DIM + INTERACTION_DIM:
            raise ValueError(f"feature width {X.shape[1]} != k + {PAGE_DIM + INTERACTION_DIM}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite node features")
        index = {ad_id: i for i, ad_id in enumerate(self.ordering)}
        if len(index) != len(self.ordering):
            raise ValueError("duplicate ad_id in node ordering")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "index", index)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def F(self) -> int:
        return self.X.shape[1]

    @property
    def semantic(self) -> np.ndarray:
        return self.X[:, : self.k]

    @property
    def pages(self) -> np.ndarray:
        return self.X[:, self.k : self.k + PAGE_DIM]

    @property
    def interactions(self) -> np.ndarray:
        return self.X[:, self.k + PAGE_DIM :]


# --------------------------------------------------------------------------
# items file

def _parse_line(line: str, lineno: int, k: int) -> AdRecord:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 8:
        raise ItemFormatError(f"expected 8 tab-separated fields, got {len(parts)}", lineno)
    ad_id, page_id, is_new, uv, pv, uvctr, pvctr, vec = parts
    if is_new not in ("0", "1"):
        raise ItemFormatError(f"is_new must be 0 or 1, got {is_new!r}", lineno, "is_new")
    values = {}
    for name, text, cast in (("uv", uv, int), ("pv", pv, int), ("uvctr", uvctr, float), ("pvctr", pvctr, float)):
        try:
            values[name] = cast(text)
        except ValueError:
            raise ItemFormatError(f"cannot parse {name}={text!r}", lineno, name) from None
    try:
        semantic = tuple(float(v) for v in vec.split(","))
    except ValueError:
        raise ItemFormatError(f"cannot parse semantic_vec {vec!r}", lineno, "semantic_vec") from None
    if len(semantic) != k:
        raise ItemFormatError(
            f"semantic_vec has {len(semantic)} entries, expected k={k}", lineno, "semantic_vec"
        )
    rec = AdRecord(ad_id, semantic, page_id, is_new=is_new == "1", **values)
    try:
        rec.validate()
    except ItemFormatError as err:
        raise ItemFormatError(str(err), lineno, err.field) from None
    return rec


def load_items(path: str | Path, k: int) -> list[AdRecord]:
    """Read an items file, validating every record. Input order is preserved."""
    records: list[AdRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            rec = _parse_line(line, lineno, k)
            if rec.ad_id in seen:
                raise ItemFormatError(f"duplicate ad_id {rec.ad_id!r}", lineno, "ad_id")
            seen.add(rec.ad_id)
            records.append(rec)
    return records


def format_item(rec: AdRecord) -> str:
    vec = ",".join(fmt(v) for v in rec.semantic_vec)
    return "\t".join(
        [rec.ad_id, rec.page_id, "1" if rec.is_new else "0", str(rec.uv), str(rec.pv),
         fmt(rec.uvctr), fmt(rec.pvctr), vec]
    )


def save_items(path: str | Path, items: Iterable[AdRecord]) -> None:
    with atomic_write(path) as fh:
        fh.write("# ad_id\tpage_id\tis_new\tuv\tpv\tuvctr\tpvctr\tsemantic_vec\n")
        for rec in items:
            fh.write(format_item(rec) + "\n")


# --------------------------------------------------------------------------
# page profiles and features

def _standardize_columns(M: np.ndarray) -> np.ndarray:
    mean = M.mean(axis=0)
    std = M.std(axis=0)
    out = np.zeros_like(M)
    ok = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    out[:, ok] = (M[:, ok] - mean[ok]) / std[ok]
    return out


def build_page_profiles(items: Sequence[AdRecord]) -> dict[str, PageProfile]:
    """Aggregate per-page ad counts and mean interaction stats of historical ads.

    ``ad_count`` counts every ad on the page; the means use non-new ads only.
    The five raw statistics are then standardized across pages.
    """
    by_page: dict[str, list[AdRecord]] = {}
    for rec in items:
        by_page.setdefault(rec.page_id, []).append(rec)
    page_ids = sorted(by_page)
    raw = np.zeros((len(page_ids), PAGE_DIM))
    for row, page_id in enumerate(page_ids):
        old = [r.interactions for r in by_page[page_id] if not r.is_new]
        if not old:
            raise ValueError(f"page {page_id!r} has only new items; nothing to aggregate")
        raw[row, 0] = len(by_page[page_id])
        raw[row, 1:] = np.mean(old, axis=0)
    std = _standardize_columns(raw) if len(page_ids) else raw
    return {
        page_id: PageProfile(page_id, int(raw[row, 0]), *map(float, raw[row, 1:]),
                             page_vec=tuple(map(float, std[row])))
        for row, page_id in enumerate(page_ids)
    }


def _scale_interactions(rec: AdRecord, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    if rec.is_new:
        return np.zeros(INTERACTION_DIM)
    span = hi - lo
    out = np.zeros(INTERACTION_DIM)
    ok = span > 0
    out[ok] = (rec.interactions[ok] - lo[ok]) / span[ok]
    return np.clip(out, 0.0, 1.0)


def feature_row(
    rec: AdRecord, profiles: Mapping[str, PageProfile], lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    try:
        page = profiles[rec.page_id]
    except KeyError:
        raise KeyError(f"no page profile for page {rec.page_id!r} (item {rec.ad_id!r})") from None
    return np.concatenate([rec.semantic_vec, page.page_vec, _scale_interactions(rec, lo, hi)])


def assemble_node_features(items: Sequence[AdRecord], profiles: Mapping[str, PageProfile]) -> NodeFeatures:
    if not items:
        raise ValueError("no items")
    k = len(items[0].semantic_vec)
    if any(len(r.semantic_vec) != k for r in items):
        raise ValueError("inconsistent semantic dimension across items")
    stats = np.array([r.interactions for r in items])
    lo, hi = stats.min(axis=0), stats.max(axis=0)
    X = np.array([feature_row(r, profiles, lo, hi) for r in items])
    return NodeFeatures(tuple(r.ad_id for r in items), X, k, lo, hi)


def stub_text_encoder(text: str, k: int) -> np.ndarray:
    """Deterministic hash-seeded unit vector standing in for a sentence encoder."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seed = int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")
    v = np.random.default_rng(seed).standard_normal(k)
    return v / np.linalg.norm(v)
