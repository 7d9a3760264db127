"""Interaction/portrait ingestion, preprocessing, user feature encoding and
synthetic dataset generation."""
from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyDatasetError, InvalidArgumentError, SchemaError
from .numeric import make_rng

log = logging.getLogger(__name__)

INTERACTION_COLUMNS = ("user_id", "item_id", "timestamp", "session_id")
MIN_ITEM_COUNT = 5
MIN_SESSION_LENGTH = 2
VALIDATION_FRACTION = 0.2


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int
    session_id: str


@dataclass(frozen=True)
class Session:
    user_id: str
    items: tuple[int, ...]

    def __len__(self):
        return len(self.items)


class ItemVocabulary:
    """Bijection between raw item ids and dense indices, ordered by item id."""

    def __init__(self, item_ids: Iterable[str]):
        self.items: list[str] = sorted(set(item_ids))
        self.id_to_index: dict[str, int] = {item: i for i, item in enumerate(self.items)}

    def __len__(self):
        return len(self.items)

    def __contains__(self, item_id):
        return item_id in self.id_to_index

    def __eq__(self, other):
        return isinstance(other, ItemVocabulary) and self.items == other.items

    @property
    def m(self) -> int:
        return len(self.items)

    def index(self, item_id: str) -> int:
        return self.id_to_index[item_id]

    def item_id(self, index: int) -> str:
        return self.items[index]


# ---------------------------------------------------------------------------
# ingestion

def _parse_row(row: Mapping[str, object]) -> InteractionRecord | None:
    values = {}
    for col in INTERACTION_COLUMNS:
        v = row.get(col)
        if v is None or str(v).strip() == "":
            return None
        values[col] = str(v).strip()
    try:
        ts = int(values["timestamp"])
    except ValueError:
        return None
    if ts < 0:
        return None
    return InteractionRecord(values["user_id"], values["item_id"], ts, values["session_id"])


def load_interactions(path, format: str | None = None) -> tuple[list[InteractionRecord], int]:
    """Read an interactions file.

    Returns ``(records, n_rejected)`` with records sorted by
    ``(session_id, timestamp)``. ``format`` is ``"csv"`` or ``"jsonl"`` and is
    inferred from the suffix when omitted.
    """
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv")
    if fmt not in ("csv", "jsonl"):
        raise InvalidArgumentError(f"unknown interactions format {fmt!r}")
    records: list[InteractionRecord] = []
    rejected = 0
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in INTERACTION_COLUMNS:
                if col not in header:
                    raise SchemaError(f"interactions file {path} is missing column {col!r}")
            rows: Iterable[Mapping] = reader
        else:
            rows = _jsonl_rows(fh, path)
        for row in rows:
            rec = _parse_row(row) if row is not None else None
            if rec is None:
                rejected += 1
            else:
                records.append(rec)
    if rejected:
        log.warning("%s: rejected %d malformed rows", path, rejected)
    records.sort(key=lambda r: (r.session_id, r.timestamp))
    return records, rejected


def _jsonl_rows(fh, path):
    first = True
    for line in fh:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            yield None
            continue
        if not isinstance(obj, dict):
            yield None
            continue
        if first:
            first = False
            for col in INTERACTION_COLUMNS:
                if col not in obj:
                    raise SchemaError(f"interactions file {path} is missing column {col!r}")
        yield obj


def filter_dataset(records: Sequence[InteractionRecord],
                   min_item_count: int = MIN_ITEM_COUNT,
                   min_session_length: int = MIN_SESSION_LENGTH
                   ) -> tuple[ItemVocabulary, list[Session]]:
    """Drop rare items, then short sessions, and index the surviving items.

    The two rules are reapplied until nothing changes so the result is a fixed
    point (dropping a session can push an item back under the threshold).
    """
    if not records:
        raise InvalidArgumentError("no interaction records to filter")
    grouped: dict[str, list[InteractionRecord]] = defaultdict(list)
    for rec in sorted(records, key=lambda r: (r.session_id, r.timestamp)):
        grouped[rec.session_id].append(rec)
    sessions = {sid: (recs[0].user_id, [r.item_id for r in recs]) for sid, recs in grouped.items()}

    while True:
        counts = Counter(item for _, items in sessions.values() for item in items)
        rare = {item for item, c in counts.items() if c < min_item_count}
        survived = {}
        for sid, (user, items) in sessions.items():
            kept = [i for i in items if i not in rare]
            if len(kept) >= min_session_length:
                survived[sid] = (user, kept)
        if not rare and len(survived) == len(sessions):
            break
        sessions = survived

    if not sessions:
        raise EmptyDatasetError("empty dataset after filtering")
    vocab = ItemVocabulary(item for _, items in sessions.values() for item in items)
    out = [Session(user, tuple(vocab.index(i) for i in items))
           for sid, (user, items) in sorted(sessions.items())]
    return vocab, out


def prefix_expand(session: Session) -> list[tuple[Session, int]]:
    n = len(session.items)
    if n < 2:
        raise InvalidArgumentError(f"session of length {n} cannot be expanded")
    return [(Session(session.user_id, session.items[:k]), session.items[k]) for k in range(1, n)]


def expand_all(sessions: Iterable[Session]) -> list[tuple[Session, int]]:
    return [pair for s in sessions for pair in prefix_expand(s)]


# ---------------------------------------------------------------------------
# user features

@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str  # "categorical" | "continuous"
    values: tuple = ()
    edges: tuple = ()

    @property
    def n_known(self) -> int:
        return len(self.values) if self.kind == "categorical" else len(self.edges) + 1

    @property
    def width(self) -> int:
        # one reserved slot at the end for unknown / missing values
        return self.n_known + 1

    def slot(self, raw) -> int:
        unknown = self.n_known
        if raw is None or (isinstance(raw, str) and raw.strip() == ""):
            return unknown
        if self.kind == "categorical":
            try:
                return self.values.index(str(raw))
            except ValueError:
                return unknown
        try:
            x = float(raw)
        except (TypeError, ValueError):
            return unknown
        if not math.isfinite(x):
            return unknown
        return bisect.bisect_right(self.edges, x)


@dataclass
class UserFeatureSchema:
    fields: list[FieldSpec] = field(default_factory=list)

    def __post_init__(self):
        names = set()
        for f in self.fields:
            if f.name in names:
                raise SchemaError(f"duplicate field {f.name!r}")
            names.add(f.name)
            if f.kind == "categorical":
                if not f.values or len(set(f.values)) != len(f.values):
                    raise SchemaError(f"field {f.name!r}: categories must be non-empty and unique")
            elif f.kind == "continuous":
                if any(b <= a for a, b in zip(f.edges, f.edges[1:])):
                    raise SchemaError(f"field {f.name!r}: bin edges must be strictly increasing")
            else:
                raise SchemaError(f"field {f.name!r}: unknown type {f.kind!r}")

    @property
    def categorical_fields(self) -> list[tuple[str, list]]:
        return [(f.name, list(f.values)) for f in self.fields if f.kind == "categorical"]

    @property
    def continuous_fields(self) -> list[tuple[str, list]]:
        return [(f.name, list(f.edges)) for f in self.fields if f.kind == "continuous"]

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    @property
    def width(self) -> int:
        return sum(f.width for f in self.fields)

    def to_json(self) -> list[dict]:
        out = []
        for f in self.fields:
            if f.kind == "categorical":
                out.append({"name": f.name, "type": "categorical", "values": list(f.values)})
            else:
                out.append({"name": f.name, "type": "continuous", "edges": list(f.edges)})
        return out

    @classmethod
    def from_json(cls, obj) -> "UserFeatureSchema":
        if isinstance(obj, dict):
            obj = obj.get("fields", [])
        fields = []
        for entry in obj:
            try:
                name, kind = entry["name"], entry["type"]
            except (KeyError, TypeError):
                raise SchemaError(f"schema entry needs 'name' and 'type': {entry!r}") from None
            if kind == "categorical":
                fields.append(FieldSpec(name, kind, values=tuple(str(v) for v in entry.get("values", []))))
            elif kind == "continuous":
                fields.append(FieldSpec(name, kind, edges=tuple(float(e) for e in entry.get("edges", []))))
            else:
                raise SchemaError(f"field {name!r}: unknown type {kind!r}")
        return cls(fields)


def load_schema(path) -> UserFeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return UserFeatureSchema.from_json(json.load(fh))


def load_portraits(path) -> dict[str, dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "user_id" not in reader.fieldnames:
            raise SchemaError(f"portraits file {path} is missing column 'user_id'")
        return {row["user_id"]: {k: v for k, v in row.items() if k != "user_id"} for row in reader}


def encode_user(raw: Mapping[str, object] | None, schema: UserFeatureSchema) -> np.ndarray:
    """Concatenated one-hot segments, one per schema field (length ``schema.width``)."""
    raw = raw or {}
    x = np.zeros(schema.width)
    offset = 0
    for f in schema.fields:
        x[offset + f.slot(raw.get(f.name))] = 1.0
        offset += f.width
    return x


def encode_users(user_ids: Sequence[str], portraits: Mapping[str, Mapping],
                 schema: UserFeatureSchema) -> np.ndarray:
    if not user_ids:
        return np.zeros((0, schema.width))
    return np.stack([encode_user(portraits.get(u), schema) for u in user_ids])


# ---------------------------------------------------------------------------
# splitting

def split_train_test(sessions: Sequence[Session], ratio: float, seed: int
                     ) -> tuple[list[Session], list[Session]]:
    if not 0.0 < ratio < 1.0:
        raise InvalidArgumentError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(sessions)
    n_first = int(round(ratio * n))
    if n_first < 1 or n_first >= n:
        raise InvalidArgumentError(f"cannot split {n} sessions with ratio {ratio}")
    perm = make_rng(seed).permutation(n)
    first = sorted(perm[:n_first])
    second = sorted(perm[n_first:])
    return [sessions[i] for i in first], [sessions[i] for i in second]


@dataclass
class DatasetSplit:
    train: list[Session]
    validation: list[Session]
    test: list[Session]


def split_dataset(sessions: Sequence[Session], ratio: float, seed: int) -> DatasetSplit:
    """Train/test split followed by a 20% validation carve-out from train."""
    train, test = split_train_test(sessions, ratio, seed)
    train, val = split_train_test(train, 1.0 - VALIDATION_FRACTION, seed + 1)
    return DatasetSplit(train, val, test)


# ---------------------------------------------------------------------------
# synthetic data

@dataclass
class SyntheticConfig:
    n_items: int = 500
    n_users: int = 200
    n_clusters: int = 5
    sessions_per_user: int = 10
    session_len_range: tuple[int, int] = (3, 10)
    n_cat_fields: int = 4
    n_cont_fields: int = 2
    successors: int = 3
    noise: float = 0.1
    portrait_noise: float = 0.2

    def validate(self) -> None:
        lo, hi = self.session_len_range
        if lo < 2 or hi < lo:
            raise InvalidArgumentError(f"infeasible session_len_range {self.session_len_range}")
        if not self.n_items >= self.n_clusters >= 1:
            raise InvalidArgumentError("need n_items >= n_clusters >= 1")
        if self.n_users < 1 or self.sessions_per_user < 1:
            raise InvalidArgumentError("need at least one user and one session per user")
        if self.successors < 1 or not 0.0 <= self.noise <= 1.0 or not 0.0 <= self.portrait_noise <= 1.0:
            raise InvalidArgumentError("invalid successors/noise settings")


@dataclass
class SyntheticWorld:
    """Generated data together with the latent truth that produced it."""

    config: SyntheticConfig
    item_ids: list[str]
    user_ids: list[str]
    user_cluster: np.ndarray          # (n_users,)
    cluster_items: list[np.ndarray]   # preferred item subset per cluster
    start_probs: np.ndarray           # (n_clusters, n_items)
    transitions: np.ndarray           # (n_clusters, n_items, n_items), noise included
    records: list[InteractionRecord]
    portraits: dict[str, dict[str, str]]
    schema: UserFeatureSchema


def sample_synthetic(config: SyntheticConfig | None = None, seed: int = 1) -> SyntheticWorld:
    """Cluster-conditioned Markov chains over preferred item subsets, plus
    user portraits whose fields are noisy functions of the cluster."""
    cfg = config or SyntheticConfig()
    cfg.validate()
    rng = make_rng(seed)
    n_items, n_clusters = cfg.n_items, cfg.n_clusters
    width = len(str(n_items - 1))
    item_ids = [f"i{i:0{width}d}" for i in range(n_items)]
    uwidth = len(str(cfg.n_users - 1))
    user_ids = [f"u{u:0{uwidth}d}" for u in range(cfg.n_users)]

    perm = rng.permutation(n_items)
    cluster_items = [np.sort(perm[c::n_clusters]) for c in range(n_clusters)]

    start = np.zeros((n_clusters, n_items))
    trans = np.zeros((n_clusters, n_items, n_items))
    uniform = np.full(n_items, 1.0 / n_items)
    for c, subset in enumerate(cluster_items):
        # Zipf-like popularity inside the cluster's preferred subset
        pop = 1.0 / np.arange(1, len(subset) + 1)
        start[c, rng.permutation(subset)] = pop / pop.sum()
        k = min(cfg.successors, len(subset))
        members = set(subset.tolist())
        for i in range(n_items):
            if i in members:
                succ = rng.choice(subset, size=k, replace=False)
                row = np.zeros(n_items)
                row[succ] = rng.dirichlet(np.ones(k))
            else:
                row = start[c]
            trans[c, i] = (1.0 - cfg.noise) * row + cfg.noise * uniform

    user_cluster = rng.integers(0, n_clusters, size=cfg.n_users)
    lo, hi = cfg.session_len_range
    records = []
    swidth = len(str(cfg.sessions_per_user - 1))
    for u, uid in enumerate(user_ids):
        c = user_cluster[u]
        ts = 1_500_000_000 + u * 1_000_000
        for s in range(cfg.sessions_per_user):
            length = int(rng.integers(lo, hi + 1))
            p0 = (1.0 - cfg.noise) * start[c] + cfg.noise * uniform
            item = int(rng.choice(n_items, p=p0))
            sid = f"{uid}_s{s:0{swidth}d}"
            for _ in range(length):
                records.append(InteractionRecord(uid, item_ids[item], ts, sid))
                ts += 60
                item = int(rng.choice(n_items, p=trans[c, item]))
            ts += 10_000

    fields: list[FieldSpec] = []
    n_cat_values = n_clusters + 2
    for j in range(cfg.n_cat_fields):
        fields.append(FieldSpec(f"cat{j}", "categorical",
                                values=tuple(f"v{k}" for k in range(n_cat_values))))
    for j in range(cfg.n_cont_fields):
        edges = tuple(float(e) for e in np.arange(1, n_clusters) * 10.0 - 5.0 + j)
        fields.append(FieldSpec(f"num{j}", "continuous", edges=edges))
    schema = UserFeatureSchema(fields)

    portraits = {}
    for u, uid in enumerate(user_ids):
        c = int(user_cluster[u])
        row = {}
        for j in range(cfg.n_cat_fields):
            if rng.random() < cfg.portrait_noise:
                k = int(rng.integers(0, n_cat_values))
            else:
                k = (c + j) % n_cat_values
            row[f"cat{j}"] = f"v{k}"
        for j in range(cfg.n_cont_fields):
            row[f"num{j}"] = f"{c * 10.0 + j + rng.normal(0.0, 2.0):.4f}"
        portraits[uid] = row

    return SyntheticWorld(cfg, item_ids, user_ids, user_cluster, cluster_items,
                          start, trans, records, portraits, schema)


def write_interactions(records: Iterable[InteractionRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERACTION_COLUMNS)
        for r in records:
            w.writerow((r.user_id, r.item_id, r.timestamp, r.session_id))


def write_portraits(portraits: Mapping[str, Mapping[str, str]], schema: UserFeatureSchema, path) -> None:
    names = [f.name for f in schema.fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", *names])
        for uid in sorted(portraits):
            w.writerow([uid, *(portraits[uid].get(n, "") for n in names)])


def write_schema(schema: UserFeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


@dataclass
class SyntheticFiles:
    interactions: Path
    portraits: Path
    schema: Path


def gen_synthetic(config: SyntheticConfig | None, seed: int, out_dir) -> tuple[SyntheticFiles, SyntheticWorld]:
    world = sample_synthetic(config, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = SyntheticFiles(out / "interactions.csv", out / "portraits.csv", out / "schema.json")
    write_interactions(world.records, files.interactions)
    write_portraits(world.portraits, world.schema, files.portraits)
    write_schema(world.schema, files.schema)
    return files, world
