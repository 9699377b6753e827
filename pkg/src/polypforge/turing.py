"""Blinded visual review sessions.

A session interleaves real and synthetic tiles in a seeded random order and
serves them one at a time under opaque item ids. Ground truth stays server
side until every item is labelled; the report then reveals it together with
a null-hypothesis test against chance accuracy.
"""

from __future__ import annotations

import json
import math
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateNullError,
    DuplicateLabelError,
    IncompleteSessionError,
    SessionOrderError,
    UnknownItemError,
    UnknownSessionError,
)
from .manifest import ImageTile

LABEL_REAL = "real"
LABEL_SYNTHETIC = "synthetic"
VALID_LABELS = (LABEL_REAL, LABEL_SYNTHETIC)

# Client-visible payloads must never carry these keys, at any nesting depth.
BLINDED_KEYS = ("truth", "provenance", "generator_ref", "source_ref", "tile_id")


@dataclass(frozen=True)
class SessionItem:
    item_id: str
    truth: str
    tile: ImageTile | None = None
    tile_id: str = ""


@dataclass(frozen=True)
class LabelRecord:
    item_id: str
    label: str
    latency_ms: float | None
    recorded_at: float


@dataclass
class ReviewSession:
    session_id: str
    items: list[SessionItem]
    created_at: float
    labels: dict[str, LabelRecord] = field(default_factory=dict)

    def __post_init__(self):
        self._position_by_id = {item.item_id: i for i, item in enumerate(self.items)}

    @property
    def total(self) -> int:
        return len(self.items)

    @property
    def position(self) -> int:
        return len(self.labels)

    @property
    def complete(self) -> bool:
        return self.position >= self.total


def build_session(real_tiles, synthetic_tiles, n_each: int, seed: int,
                  session_id: str | None = None) -> ReviewSession:
    """Draw ``n_each`` tiles from each pool and shuffle them into one order.

    Sampling is without replacement; the presentation order is a seeded
    permutation of the combined draw, so real and synthetic items interleave
    unpredictably but reproducibly.
    """
    if n_each < 1:
        raise ConfigError("n_each", f"must be a positive integer, got {n_each}")
    if len(real_tiles) < n_each:
        raise ConfigError("n_each", f"real pool has {len(real_tiles)} tiles, need {n_each}")
    if len(synthetic_tiles) < n_each:
        raise ConfigError(
            "n_each", f"synthetic pool has {len(synthetic_tiles)} tiles, need {n_each}")
    rng = np.random.default_rng(seed)
    picked_real = [real_tiles[i] for i in rng.choice(len(real_tiles), n_each, replace=False)]
    picked_syn = [synthetic_tiles[i]
                  for i in rng.choice(len(synthetic_tiles), n_each, replace=False)]
    truths = [LABEL_REAL] * n_each + [LABEL_SYNTHETIC] * n_each
    tiles = picked_real + picked_syn
    order = rng.permutation(2 * n_each)
    sid = session_id if session_id is not None else uuid.uuid4().hex[:12]
    items = [
        SessionItem(item_id=f"{sid}-{pos:04d}", truth=truths[j], tile=tiles[j],
                    tile_id=tiles[j].tile_id)
        for pos, j in enumerate(order)
    ]
    return ReviewSession(session_id=sid, items=items, created_at=time.time())


def next_item(session: ReviewSession) -> SessionItem | None:
    """The item awaiting a label, or None when the session is complete.

    Repeated calls without an intervening label return the same item.
    """
    if session.complete:
        return None
    return session.items[session.position]


def record_label(session: ReviewSession, item_id: str, label: str,
                 latency_ms: float | None = None,
                 recorded_at: float | None = None) -> LabelRecord:
    if label not in VALID_LABELS:
        raise ValueError(f"label must be one of {VALID_LABELS}, got {label!r}")
    if item_id not in session._position_by_id:
        raise UnknownItemError(f"unknown item id {item_id!r}")
    if item_id in session.labels:
        raise DuplicateLabelError(f"item {item_id!r} already labelled")
    expected = session.items[session.position].item_id
    if item_id != expected:
        raise SessionOrderError(
            f"items must be labelled in order; expected {expected!r}, got {item_id!r}")
    record = LabelRecord(
        item_id=item_id, label=label,
        latency_ms=None if latency_ms is None else float(latency_ms),
        recorded_at=time.time() if recorded_at is None else float(recorded_at))
    session.labels[item_id] = record
    return record


def z_score(observed: float, null_rate: float, n: int) -> float:
    """Standardized deviation of an observed rate from a binomial null."""
    if n < 1:
        raise DegenerateNullError(f"need at least one trial, got n={n}")
    variance = null_rate * (1.0 - null_rate)
    if variance <= 0.0:
        raise DegenerateNullError(
            f"null rate {null_rate} has zero variance, z is undefined")
    return (observed - null_rate) / math.sqrt(variance / n)


def two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / math.sqrt(2.0))


def one_sided_p(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


@dataclass
class SessionReport:
    session_id: str
    n_items: int
    n_correct: int
    accuracy: float
    z: float
    p_two_sided: float
    confusion: dict[str, dict[str, int]]
    rows: list[dict]

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "n_items": self.n_items,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "z": self.z,
            "p_two_sided": self.p_two_sided,
            "confusion": self.confusion,
            "rows": self.rows,
        }

    def to_csv_bytes(self) -> bytes:
        lines = ["item_id,truth,label,latency_ms"]
        for row in self.rows:
            latency = "" if row["latency_ms"] is None else f"{row['latency_ms']:.1f}"
            lines.append(f"{row['item_id']},{row['truth']},{row['label']},{latency}")
        return ("\n".join(lines) + "\n").encode("utf-8")


def session_report(session: ReviewSession) -> SessionReport:
    """Reveal truths and test labelling accuracy against the coin-flip null."""
    if not session.complete:
        raise IncompleteSessionError(
            f"session {session.session_id} has {session.position}/{session.total} labels")
    rows = []
    confusion = {t: {p: 0 for p in VALID_LABELS} for t in VALID_LABELS}
    correct = 0
    for item in session.items:
        record = session.labels[item.item_id]
        confusion[item.truth][record.label] += 1
        if record.label == item.truth:
            correct += 1
        rows.append({"item_id": item.item_id, "truth": item.truth,
                     "label": record.label, "latency_ms": record.latency_ms})
    n = session.total
    accuracy = correct / n
    z = z_score(accuracy, 0.5, n)
    return SessionReport(session_id=session.session_id, n_items=n, n_correct=correct,
                         accuracy=accuracy, z=z, p_two_sided=two_sided_p(z),
                         confusion=confusion, rows=rows)


def session_public_json(session: ReviewSession) -> dict:
    """Client-facing session state; carries no ground truth."""
    return {
        "session_id": session.session_id,
        "total": session.total,
        "position": session.position,
        "complete": session.complete,
    }


def item_public_json(session: ReviewSession, item: SessionItem) -> dict:
    """Client-facing view of one item: an opaque id and where to fetch pixels."""
    return {
        "item_id": item.item_id,
        "position": session._position_by_id[item.item_id],
        "total": session.total,
        "image_url": f"/items/{item.item_id}/image",
    }


def scan_for_blinding(payload) -> list[str]:
    """Forbidden keys found anywhere in a nested payload (empty means blind)."""
    found = []

    def walk(node, path):
        if isinstance(node, dict):
            for key, value in node.items():
                if key in BLINDED_KEYS:
                    found.append(f"{path}/{key}")
                walk(value, f"{path}/{key}")
        elif isinstance(node, (list, tuple)):
            for i, value in enumerate(node):
                walk(value, f"{path}[{i}]")

    walk(payload, "")
    return found


class SessionStore:
    """In-memory sessions backed by an append-only JSONL event log.

    Every mutation is appended before it is applied, so replaying the log
    reconstructs identical session state and report statistics.
    """

    def __init__(self, log_path=None):
        self.log_path = None if log_path is None else Path(log_path)
        self.sessions: dict[str, ReviewSession] = {}

    def _append(self, event: dict) -> None:
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def create(self, real_tiles, synthetic_tiles, n_each: int, seed: int,
               session_id: str | None = None) -> ReviewSession:
        session = build_session(real_tiles, synthetic_tiles, n_each, seed, session_id)
        self._append({
            "event": "create",
            "session_id": session.session_id,
            "created_at": session.created_at,
            "items": [
                {"item_id": it.item_id, "truth": it.truth, "tile_id": it.tile_id}
                for it in session.items
            ],
        })
        self.sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> ReviewSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"unknown session id {session_id!r}") from None

    def record(self, session_id: str, item_id: str, label: str,
               latency_ms: float | None = None) -> LabelRecord:
        session = self.get(session_id)
        record = record_label(session, item_id, label, latency_ms)
        self._append({
            "event": "label",
            "session_id": session_id,
            "item_id": record.item_id,
            "label": record.label,
            "latency_ms": record.latency_ms,
            "recorded_at": record.recorded_at,
        })
        return record

    @classmethod
    def replay(cls, log_path) -> "SessionStore":
        """Rebuild store state from the event log without re-logging."""
        store = cls(log_path=None)
        with open(log_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["event"] == "create":
                    items = [
                        SessionItem(item_id=it["item_id"], truth=it["truth"],
                                    tile=None, tile_id=it.get("tile_id", ""))
                        for it in event["items"]
                    ]
                    session = ReviewSession(session_id=event["session_id"], items=items,
                                            created_at=event["created_at"])
                    store.sessions[session.session_id] = session
                elif event["event"] == "label":
                    session = store.get(event["session_id"])
                    record = LabelRecord(
                        item_id=event["item_id"], label=event["label"],
                        latency_ms=event["latency_ms"],
                        recorded_at=event["recorded_at"])
                    session.labels[record.item_id] = record
                else:
                    raise ValueError(f"unknown event type {event['event']!r}")
        store.log_path = Path(log_path)
        return store
