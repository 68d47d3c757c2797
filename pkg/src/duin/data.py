"""Behavior logs -> trigger-conditioned interaction samples -> chronological splits.

Event log: UTF-8 TSV with header ``user_id, item_id, attribute_id, timestamp,
event_type`` (tab separated), one event per line.

Sample file: UTF-8 TSV with header (see ``SAMPLE_COLUMNS``).  List-valued
fields use ``,`` inside an entry and ``;`` between entries, so tokens must not
contain tabs, commas or semicolons.
"""

from __future__ import annotations

import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EVENT_COLUMNS = ("user_id", "item_id", "attribute_id", "timestamp", "event_type")
EVENT_TYPES = ("impression", "click", "purchase")
BEHAVIOR_TYPES = ("click", "purchase")
SAMPLE_COLUMNS = ("sample_id", "timestamp", "user_id", "profile", "context", "trigger_item",
                  "trigger_attr", "trigger_ts", "target_item", "target_attr", "label", "behaviors")
N_POSITION_BUCKETS = 10


class DataError(ValueError):
    """Input data is missing, malformed beyond recovery, or too small."""


@dataclass(frozen=True)
class BehaviorEvent:
    user_id: str
    item_id: str
    attribute_id: str
    timestamp: int
    event_type: str


@dataclass
class InteractionSample:
    sample_id: str
    timestamp: int
    user_id: str
    profile: tuple[str, ...]
    context: tuple[str, ...]
    trigger: tuple[str, str, int]          # item, attribute, click time
    target: tuple[str, str]                # item, attribute
    label: int
    behaviors: tuple[tuple[str, str, int], ...] = ()   # oldest first


@dataclass
class IngestReport:
    rows: int = 0
    malformed: int = 0
    dropped_no_trigger: int = 0
    samples: int = 0
    problems: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return (f"rows={self.rows} malformed={self.malformed} "
                f"dropped_no_trigger={self.dropped_no_trigger} samples={self.samples}")


# -- event log ------------------------------------------------------------------

def read_events(path, report: IngestReport | None = None) -> list[BehaviorEvent]:
    report = report if report is not None else IngestReport()
    p = Path(path)
    if not p.exists():
        raise DataError(f"event log not found: {path}")
    events = []
    with open(p, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != EVENT_COLUMNS:
            raise DataError(f"{path}: header must be {list(EVENT_COLUMNS)}, got {header}")
        for n, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            report.rows += 1
            ev = _parse_event(line)
            if ev is None:
                report.malformed += 1
                if len(report.problems) < 20:
                    report.problems.append(f"line {n}: {line[:80]!r}")
                continue
            events.append(ev)
    return events


def _parse_event(line: str) -> BehaviorEvent | None:
    cols = line.split("\t")
    if len(cols) != 5:
        return None
    user, item, attr, ts, kind = (c.strip() for c in cols)
    if not (user and item and attr) or kind not in EVENT_TYPES:
        return None
    try:
        t = int(ts)
    except ValueError:
        return None
    if t <= 0:
        return None
    return BehaviorEvent(user, item, attr, t, kind)


def write_events(path, events: Iterable[BehaviorEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(EVENT_COLUMNS) + "\n")
        for e in events:
            fh.write(f"{e.user_id}\t{e.item_id}\t{e.attribute_id}\t{e.timestamp}\t{e.event_type}\n")


def read_profiles(path) -> dict[str, tuple[str, ...]]:
    """Optional ``user_id <TAB> field...`` sidecar with a header line."""
    out = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        if line:
            cols = line.split("\t")
            out[cols[0]] = tuple(cols[1:])
    return out


def group_by_user(events: Iterable[BehaviorEvent]) -> dict[str, list[BehaviorEvent]]:
    users: dict[str, list[BehaviorEvent]] = defaultdict(list)
    for e in events:
        users[e.user_id].append(e)
    for evs in users.values():
        evs.sort(key=lambda e: e.timestamp)
    return dict(users)


# -- triggers and samples ----------------------------------------------------------

def derive_trigger(events: Sequence[BehaviorEvent], sample_time: int,
                   window_hours: float) -> BehaviorEvent | None:
    """Latest click in (sample_time - window, sample_time], or None."""
    lo = sample_time - window_hours * 3600
    best = None
    for e in events:
        if e.event_type == "click" and lo < e.timestamp <= sample_time:
            if best is None or e.timestamp >= best.timestamp:
                best = e
    return best


def context_tokens(ts: int, position: int) -> tuple[str, str]:
    hour = (ts // 3600) % 24
    return f"h{hour}", f"p{min(position, N_POSITION_BUCKETS - 1)}"


class _UserIndex:
    """Per-user sorted views used to assemble samples in O(log n) per lookup."""

    def __init__(self, evs: list[BehaviorEvent], label_event: str):
        self.beh = [e for e in evs if e.event_type in BEHAVIOR_TYPES]
        self.beh_ts = [e.timestamp for e in self.beh]
        self.clicks = [e for e in evs if e.event_type == "click"]
        self.click_ts = [e.timestamp for e in self.clicks]
        self.label_ts: dict[str, list[int]] = defaultdict(list)
        for e in evs:
            if e.event_type == label_event:
                self.label_ts[e.item_id].append(e.timestamp)

    def behaviors_before(self, t: int, limit: int) -> tuple[tuple[str, str, int], ...]:
        k = bisect.bisect_left(self.beh_ts, t)
        return tuple((e.item_id, e.attribute_id, e.timestamp) for e in self.beh[max(0, k - limit):k])

    def trigger_at(self, t: int, window_s: float) -> BehaviorEvent | None:
        k = bisect.bisect_right(self.click_ts, t)
        if k == 0:
            return None
        e = self.clicks[k - 1]
        return e if e.timestamp > t - window_s else None

    def labelled(self, item: str, t: int, horizon: int) -> bool:
        ts = self.label_ts.get(item)
        if not ts:
            return False
        k = bisect.bisect_left(ts, t)
        return k < len(ts) and ts[k] <= t + horizon


def assemble_samples(events: Sequence[BehaviorEvent], cfg, profiles: dict | None = None,
                     report: IngestReport | None = None, rng: np.random.Generator | None = None
                     ) -> list[InteractionSample]:
    """One sample per impression: label 1 if the user engaged with the item
    (``cfg.label_event``) within ``cfg.label_horizon`` seconds, else 0.

    With ``cfg.negatives == "random"`` only engaged impressions are kept, each
    followed by ``cfg.random_negatives`` catalog items as label-0 samples.
    """
    report = report if report is not None else IngestReport()
    profiles = profiles or {}
    window_s = cfg.trigger_window_hours * 3600
    catalog = sorted({(e.item_id, e.attribute_id) for e in events})
    if cfg.negatives == "random" and rng is None:
        rng = np.random.default_rng(cfg.seed)
    out: list[InteractionSample] = []
    for user, evs in sorted(group_by_user(events).items()):
        idx = _UserIndex(evs, cfg.label_event)
        prof = (f"u:{user}",) + tuple(profiles.get(user, ()))
        position: dict[int, int] = defaultdict(int)
        for e in evs:
            if e.event_type != "impression":
                continue
            t = e.timestamp
            pos = position[t]
            position[t] += 1
            trig = idx.trigger_at(t, window_s)
            if trig is None:
                report.dropped_no_trigger += 1
                continue
            label = int(idx.labelled(e.item_id, t, cfg.label_horizon))
            if cfg.negatives == "random" and not label:
                continue
            common = dict(timestamp=t, user_id=user, profile=prof, context=context_tokens(t, pos),
                          trigger=(trig.item_id, trig.attribute_id, trig.timestamp),
                          behaviors=idx.behaviors_before(t, cfg.seq_len))
            sid = f"{user}:{t}:{pos}"
            out.append(InteractionSample(sample_id=sid, target=(e.item_id, e.attribute_id),
                                         label=label, **common))
            if cfg.negatives == "random":
                for k in range(cfg.random_negatives):
                    item, attr = catalog[int(rng.integers(len(catalog)))]
                    out.append(InteractionSample(sample_id=f"{sid}:n{k}", target=(item, attr),
                                                 label=0, **common))
    report.samples += len(out)
    return out


def split(samples: Sequence[InteractionSample], fractions=(0.8, 0.1)):
    """Chronological 80/10/10 split; ties broken by user id then target item."""
    n = len(samples)
    if n < 10:
        raise DataError(f"need at least 10 samples to split, got {n}")
    order = sorted(samples, key=lambda s: (s.timestamp, s.user_id, s.target[0]))
    a = int(np.floor(fractions[0] * n + 1e-9))
    b = int(np.floor((fractions[0] + fractions[1]) * n + 1e-9))
    return order[:a], order[a:b], order[b:]


def train_sequences(events: Iterable[BehaviorEvent], cutoff: int | None):
    """Per-user (item, attr) behavior sequences strictly before ``cutoff``."""
    for _, evs in sorted(group_by_user(events).items()):
        seq = [(e.item_id, e.attribute_id) for e in evs
               if e.event_type in BEHAVIOR_TYPES and (cutoff is None or e.timestamp < cutoff)]
        if seq:
            yield seq


def behavior_log(events: Iterable[BehaviorEvent], cutoff: int | None):
    """(user, item, attr, ts) behavior rows strictly before ``cutoff``, grouped like
    ``train_sequences`` so a replayed timeline ends with the same counts."""
    return [(u, e.item_id, e.attribute_id, e.timestamp)
            for u, evs in sorted(group_by_user(events).items()) for e in evs
            if e.event_type in BEHAVIOR_TYPES and (cutoff is None or e.timestamp < cutoff)]


# -- sample files ---------------------------------------------------------------------

def _fmt_sample(s: InteractionSample) -> str:
    beh = ";".join(f"{i},{a},{t}" for i, a, t in s.behaviors)
    return "\t".join([s.sample_id, str(s.timestamp), s.user_id, ",".join(s.profile),
                      ",".join(s.context), s.trigger[0], s.trigger[1], str(s.trigger[2]),
                      s.target[0], s.target[1], str(s.label), beh])


def write_samples(path, samples: Iterable[InteractionSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(SAMPLE_COLUMNS) + "\n")
        for s in samples:
            fh.write(_fmt_sample(s) + "\n")


def read_samples(path) -> list[InteractionSample]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"sample file not found: {path}")
    out = []
    with open(p, encoding="utf-8") as fh:
        header = tuple(fh.readline().rstrip("\n").split("\t"))
        if header != SAMPLE_COLUMNS:
            raise DataError(f"{path}: unexpected sample header {header}")
        for n, line in enumerate(fh, 2):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != len(SAMPLE_COLUMNS):
                raise DataError(f"{path}:{n}: expected {len(SAMPLE_COLUMNS)} columns")
            try:
                beh = tuple((i, a, int(t)) for i, a, t in
                            (x.split(",") for x in cols[11].split(";") if x))
                out.append(InteractionSample(
                    sample_id=cols[0], timestamp=int(cols[1]), user_id=cols[2],
                    profile=tuple(x for x in cols[3].split(",") if x),
                    context=tuple(x for x in cols[4].split(",") if x),
                    trigger=(cols[5], cols[6], int(cols[7])), target=(cols[8], cols[9]),
                    label=int(cols[10]), behaviors=beh))
            except ValueError as exc:
                raise DataError(f"{path}:{n}: {exc}") from None
    return out
