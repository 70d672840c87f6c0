"""Event-pair records, per-document temporal graphs and the pair-file format."""

from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAIR_KEYS = frozenset({"doc_id", "pair_id", "tokens", "mask_u", "mask_v",
                       "event_u_vec", "event_v_vec", "label", "knowledge_bin"})
EVENT_SEP = "|"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class TempRelLabel(Enum):
    BEFORE = "BEFORE"
    AFTER = "AFTER"
    EQUAL = "EQUAL"
    VAGUE = "VAGUE"

    @property
    def index(self) -> int:
        return _LABEL_INDEX[self]

    @classmethod
    def from_index(cls, i: int) -> TempRelLabel:
        return LABELS[i]

    @property
    def short(self) -> str:
        return self.value.capitalize()


LABELS: tuple[TempRelLabel, ...] = tuple(TempRelLabel)
_LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


@dataclass
class EventPairExample:
    doc_id: str
    pair_id: str
    tokens: np.ndarray
    mask_u: np.ndarray
    mask_v: np.ndarray
    event_u_vec: np.ndarray
    event_v_vec: np.ndarray
    label: TempRelLabel
    knowledge_bin: int | None = None

    @property
    def pos_u(self) -> int:
        return int(np.flatnonzero(self.mask_u)[0])

    @property
    def pos_v(self) -> int:
        return int(np.flatnonzero(self.mask_v)[0])

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def event_ids(self) -> tuple[str, str]:
        """Event identifiers encoded in ``pair_id`` as ``"<u>|<v>"``.

        Pair ids without the separator yield pair-private events.
        """
        if EVENT_SEP in self.pair_id:
            u, v = self.pair_id.split(EVENT_SEP, 1)
            return u, v
        return f"{self.pair_id}/u", f"{self.pair_id}/v"

    def validate(self) -> None:
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1 or self.tokens.shape[1] < 1:
            raise DataError("tokens: expected a nonempty l x d matrix")
        l, d = self.tokens.shape
        for name in ("mask_u", "mask_v"):
            m = getattr(self, name)
            if m.shape != (l,):
                raise DataError(f"{name}: length {m.shape[0] if m.ndim else 0} != sentence length {l}")
            if not np.all((m == 0) | (m == 1)):
                raise DataError(f"{name}: entries must be 0 or 1")
            if not m.any():
                raise DataError(f"{name}: selects no position")
        for name, mask in (("event_u_vec", self.mask_u), ("event_v_vec", self.mask_v)):
            vec = getattr(self, name)
            if vec.shape != (d,):
                raise DataError(f"{name}: expected {d} numbers")
            if not np.array_equal(vec, self.tokens[int(np.flatnonzero(mask)[0])]):
                raise DataError(f"{name}: does not equal the token row at the first masked position")
        if not np.all(np.isfinite(self.tokens)):
            raise DataError("tokens: non-finite value")
        if self.knowledge_bin is not None and self.knowledge_bin < 0:
            raise DataError("knowledge_bin: must be nonnegative")

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "pair_id": self.pair_id,
            "tokens": self.tokens.tolist(),
            "mask_u": [int(v) for v in self.mask_u],
            "mask_v": [int(v) for v in self.mask_v],
            "event_u_vec": self.event_u_vec.tolist(),
            "event_v_vec": self.event_v_vec.tolist(),
            "label": self.label.value,
            "knowledge_bin": self.knowledge_bin,
        }

    @classmethod
    def from_json(cls, obj: dict) -> EventPairExample:
        if not isinstance(obj, dict):
            raise DataError("record: expected a JSON object")
        keys = set(obj)
        if keys != PAIR_KEYS:
            missing = sorted(PAIR_KEYS - keys)
            extra = sorted(keys - PAIR_KEYS)
            field_ = (missing or extra)[0]
            raise DataError(f"{field_}: {'missing' if missing else 'unexpected'} key")
        for name in ("doc_id", "pair_id"):
            if not isinstance(obj[name], str):
                raise DataError(f"{name}: expected a string")
        try:
            label = TempRelLabel(obj["label"])
        except ValueError:
            raise DataError(f"label: unknown value {obj['label']!r}") from None
        kb = obj["knowledge_bin"]
        if kb is not None and (isinstance(kb, bool) or not isinstance(kb, int)):
            raise DataError("knowledge_bin: expected an integer or null")
        arrays = {}
        for name in ("tokens", "mask_u", "mask_v", "event_u_vec", "event_v_vec"):
            try:
                arrays[name] = np.array(obj[name], dtype=np.float64)
            except (TypeError, ValueError):
                raise DataError(f"{name}: expected numeric arrays") from None
        if arrays["tokens"].ndim != 2:
            raise DataError("tokens: expected a nonempty l x d matrix")
        ex = cls(obj["doc_id"], obj["pair_id"], arrays["tokens"],
                 arrays["mask_u"].astype(np.int8) if _is_binary(arrays["mask_u"]) else arrays["mask_u"],
                 arrays["mask_v"].astype(np.int8) if _is_binary(arrays["mask_v"]) else arrays["mask_v"],
                 arrays["event_u_vec"], arrays["event_v_vec"], label, kb)
        ex.validate()
        return ex


def _is_binary(a: np.ndarray) -> bool:
    return a.ndim == 1 and bool(np.all((a == 0) | (a == 1)))


def iter_pairs(path: str | Path):
    """Yield ``(line_number, example)``; errors name the 1-based line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
            try:
                yield lineno, EventPairExample.from_json(obj)
            except DataError as e:
                raise DataError(f"line {lineno}: {e}") from None


def load_pairs(path: str | Path) -> list[EventPairExample]:
    pairs: list[EventPairExample] = []
    dim = None
    for lineno, ex in iter_pairs(path):
        if dim is None:
            dim = ex.dim
        elif ex.dim != dim:
            raise DataError(f"line {lineno}: embedding dimension {ex.dim} differs from {dim}")
        pairs.append(ex)
    return pairs


def save_pairs(pairs: Iterable[EventPairExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in pairs:
            fh.write(json.dumps(ex.to_json(), separators=(",", ":")))
            fh.write("\n")


def label_counts(pairs: Iterable[EventPairExample]) -> dict[TempRelLabel, int]:
    counts = {lab: 0 for lab in LABELS}
    for ex in pairs:
        counts[ex.label] += 1
    return counts


# --- temporal graphs --------------------------------------------------------


@dataclass
class TemporalGraph:
    doc_id: str
    events: set[str] = field(default_factory=set)
    edges: set[tuple[str, str, TempRelLabel]] = field(default_factory=set)

    def add_edge(self, u: str, v: str, label: TempRelLabel) -> None:
        if u == v:
            raise DataError(f"self-edge on event {u!r} in {self.doc_id!r}")
        if label is TempRelLabel.VAGUE:
            raise DataError("vague pairs carry no edge")
        self.events.update((u, v))
        self.edges.add((u, v, label))

    def adjacency(self) -> dict[str, set[str]]:
        """Successor sets with After flipped to Before and Equal in both directions."""
        succ: dict[str, set[str]] = {e: set() for e in self.events}
        for u, v, lab in self.edges:
            if lab is TempRelLabel.BEFORE:
                succ[u].add(v)
            elif lab is TempRelLabel.AFTER:
                succ[v].add(u)
            else:
                succ[u].add(v)
                succ[v].add(u)
        return succ

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "events": sorted(self.events),
                "edges": [[u, v, lab.value] for u, v, lab in sorted(self.edges, key=_edge_key)]}


def _edge_key(e):
    return e[0], e[1], e[2].value


def build_graph(pairs: Iterable[EventPairExample]) -> dict[str, TemporalGraph]:
    graphs: dict[str, TemporalGraph] = {}
    for ex in pairs:
        g = graphs.setdefault(ex.doc_id, TemporalGraph(ex.doc_id))
        u, v = ex.event_ids
        g.events.update((u, v))
        if ex.label is not TempRelLabel.VAGUE:
            g.add_edge(u, v, ex.label)
    return graphs


def _reach(succ: dict[str, set[str]], start: str) -> set[str]:
    seen = {start}
    queue = deque([start])
    while queue:
        n = queue.popleft()
        for m in succ[n]:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return seen


def negative_set(g: TemporalGraph, u: str, _succ=None, _pred=None) -> set[str]:
    """Events of the document neither reachable from ``u`` nor reaching it."""
    if u not in g.events:
        raise KeyError(f"event {u!r} not in document {g.doc_id!r}")
    succ = _succ if _succ is not None else g.adjacency()
    if _pred is None:
        _pred = {e: set() for e in succ}
        for a, bs in succ.items():
            for b in bs:
                _pred[b].add(a)
    related = _reach(succ, u) | _reach(_pred, u)
    return g.events - related


def negative_sets(g: TemporalGraph) -> dict[str, set[str]]:
    succ = g.adjacency()
    pred: dict[str, set[str]] = {e: set() for e in succ}
    for a, bs in succ.items():
        for b in bs:
            pred[b].add(a)
    return {u: negative_set(g, u, succ, pred) for u in g.events}


def event_vectors(pairs: Iterable[EventPairExample]) -> dict[tuple[str, str], np.ndarray]:
    """First-seen trigger embedding for every (doc_id, event_id)."""
    table: dict[tuple[str, str], np.ndarray] = {}
    for ex in pairs:
        u, v = ex.event_ids
        table.setdefault((ex.doc_id, u), ex.event_u_vec)
        table.setdefault((ex.doc_id, v), ex.event_v_vec)
    return table


# --- splits -------------------------------------------------------------------


def make_split(doc_ids: Sequence[str], seed: int, dev_fraction: float = 0.2,
               test_ids: Sequence[str] = ()) -> dict[str, list[str]]:
    """Deterministic train/dev split of ``doc_ids``; ``test_ids`` pass through."""
    docs = sorted(set(doc_ids) - set(test_ids))
    random.Random(seed).shuffle(docs)
    n_dev = int(math.floor(len(docs) * dev_fraction + 0.5)) if docs else 0
    if len(docs) > 1:
        n_dev = min(max(n_dev, 1), len(docs) - 1)
    return {"train": sorted(docs[n_dev:]), "dev": sorted(docs[:n_dev]), "test": sorted(test_ids)}


def load_split(path: str | Path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or not {"train", "dev", "test"} <= set(obj):
        raise DataError("split manifest needs train, dev and test lists")
    return {k: list(obj[k]) for k in ("train", "dev", "test")}


def select_docs(pairs: Sequence[EventPairExample], doc_ids: Iterable[str]) -> list[EventPairExample]:
    keep = set(doc_ids)
    return [ex for ex in pairs if ex.doc_id in keep]
