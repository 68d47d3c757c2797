"""Synthetic trigger-induced sessions with planted intents.

The catalog has attribute clusters, a Zipf popularity ranking whose head is
the "trending" pool, and a fixed attribute pairing for complementary items.
Each session: the user clicks a trigger, is shown ``impressions`` items one
minute later, and clicks the one that matches the session's intent:

* similar        another item with the trigger's attribute
* trending       an item from the trending pool
* complementary  an item whose attribute is paired with the trigger's

Users belong to segments whose intent mixtures are tilted towards one intent;
segment quotas are chosen so that the population mixture equals
``SyntheticSpec.mixture`` exactly in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigError, coerce
from .data import BehaviorEvent, write_events

INTENTS = ("similar", "trending", "complementary")
T0 = 1_700_000_000


@dataclass
class SyntheticSpec:
    n_users: int = 600
    n_items: int = 2000
    n_attributes: int = 50
    sessions: int = 3000
    mixture: tuple[float, ...] = (0.469, 0.308, 0.223)
    noise: float = 0.05
    seed: int = 0
    impressions: int = 4
    distractor_rate: float = 0.5
    segment_tilt: float = 0.6
    trending_fraction: float = 0.02
    zipf: float = 0.8
    favorite_attrs: int = 5
    favorite_rate: float = 0.3
    browse_max: int = 4
    span_days: float = 3.0

    def __post_init__(self):
        self.mixture = tuple(float(x) for x in self.mixture)
        m = np.asarray(self.mixture)
        if m.shape != (3,) or np.any(m < 0) or abs(m.sum() - 1) > 1e-9:
            raise ConfigError(f"mixture must be 3 non-negative weights summing to 1, got {self.mixture}")
        if self.n_attributes < 2 or self.n_items < 2 * self.n_attributes:
            raise ConfigError("need at least 2 attributes and 2 items per attribute")
        if self.impressions < 2:
            raise ConfigError("impressions must be >= 2")

    @classmethod
    def from_pairs(cls, pairs: dict) -> "SyntheticSpec":
        return cls(**{k: coerce(cls, k, v) for k, v in pairs.items()})

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(out) + "\n"


@dataclass
class Catalog:
    item_attr: np.ndarray        # [n_items]
    popularity: np.ndarray       # [n_items], sums to 1
    trending: np.ndarray         # item ids of the popularity head
    complement: np.ndarray       # [n_attributes] -> paired attribute
    by_attr: list[np.ndarray]


def build_catalog(spec: SyntheticSpec, rng: np.random.Generator) -> Catalog:
    n, k = spec.n_items, spec.n_attributes
    item_attr = rng.permutation(np.arange(n) % k)
    rank = rng.permutation(n)
    pop = 1.0 / (rank + 1.0) ** spec.zipf
    pop /= pop.sum()
    n_trend = max(2, int(round(spec.trending_fraction * n)))
    trending = np.sort(np.argsort(rank)[:n_trend])
    cycle = rng.permutation(k)
    complement = np.empty(k, dtype=np.int64)
    complement[cycle] = np.roll(cycle, -1)
    by_attr = [np.flatnonzero(item_attr == a) for a in range(k)]
    return Catalog(item_attr, pop, trending, complement, by_attr)


def segment_mixtures(spec: SyntheticSpec) -> np.ndarray:
    """Row s = tilt * onehot(s) + (1 - tilt) * mixture; rows weighted by the
    mixture average back to the mixture."""
    w = np.asarray(spec.mixture)
    return spec.segment_tilt * np.eye(3) + (1 - spec.segment_tilt) * w[None, :]


def _pick(rng, pool: np.ndarray, pop: np.ndarray, exclude: int | None = None) -> int:
    if exclude is not None and pool.size > 1:
        pool = pool[pool != exclude]
    p = pop[pool]
    return int(pool[rng.choice(pool.size, p=p / p.sum())])


def _intent_item(rng, cat: Catalog, intent: int, trig: int) -> int:
    if intent == 0:
        return _pick(rng, cat.by_attr[cat.item_attr[trig]], cat.popularity, trig)
    if intent == 1:
        pool = cat.trending[cat.trending != trig]
        return int(pool[rng.integers(pool.size)])
    return _pick(rng, cat.by_attr[cat.complement[cat.item_attr[trig]]], cat.popularity)


def _matches(cat: Catalog, intent: int, trig: int, item: int) -> bool:
    if intent == 0:
        return cat.item_attr[item] == cat.item_attr[trig]
    if intent == 1:
        return bool(np.isin(item, cat.trending))
    return cat.item_attr[item] == cat.complement[cat.item_attr[trig]]


def generate(spec: SyntheticSpec):
    """Returns (events, profiles {user: (segment,)}, intents [(session_id, intent)])."""
    rng = np.random.default_rng(spec.seed)
    cat = build_catalog(spec, rng)
    mix = np.asarray(spec.mixture)
    quotas = np.floor(mix * spec.n_users).astype(int)
    for s in np.argsort(-(mix * spec.n_users - quotas), kind="stable")[:spec.n_users - quotas.sum()]:
        quotas[s] += 1
    segment = rng.permutation(np.repeat(np.arange(3), quotas))
    seg_mix = segment_mixtures(spec)
    favorites = np.stack([rng.choice(spec.n_attributes, spec.favorite_attrs, replace=False)
                          for _ in range(spec.n_users)])

    span = int(spec.span_days * 86400)
    owner = rng.integers(spec.n_users, size=spec.sessions)
    start = rng.integers(0, span, size=spec.sessions)
    order = np.lexsort((start, owner))
    # keep each user's sessions at least 15 minutes apart
    for prev, cur in zip(order[:-1], order[1:]):
        if owner[prev] == owner[cur] and start[cur] < start[prev] + 900:
            start[cur] = start[prev] + 900

    events: list[BehaviorEvent] = []
    intents: list[tuple[str, str]] = []
    all_items = np.arange(spec.n_items)
    for sid in range(spec.sessions):
        u = int(owner[sid])
        user = f"u{u}"
        t = T0 + int(start[sid])
        intent = int(rng.choice(3, p=seg_mix[segment[u]]))
        intents.append((f"s{sid}", INTENTS[intent]))

        def ev(item, ts, kind):
            events.append(BehaviorEvent(user, f"i{item}", f"a{cat.item_attr[item]}", ts, kind))

        for k in range(int(rng.integers(0, spec.browse_max + 1)), 0, -1):
            ev(_pick(rng, cat.by_attr[rng.choice(favorites[u])], cat.popularity), t - 120 * k, "click")
        if rng.random() < spec.favorite_rate:
            trig = _pick(rng, cat.by_attr[rng.choice(favorites[u])], cat.popularity)
        else:
            trig = _pick(rng, all_items, cat.popularity)
        ev(trig, t, "click")

        if rng.random() < spec.noise:
            positive = _pick(rng, all_items, cat.popularity, trig)
        else:
            positive = _intent_item(rng, cat, intent, trig)
        shown = [positive]
        others = [i for i in range(3) if i != intent]
        while len(shown) < spec.impressions:
            if rng.random() < spec.distractor_rate:
                cand = _intent_item(rng, cat, int(rng.choice(others)), trig)
            else:
                cand = int(rng.integers(spec.n_items))
            if cand == trig or cand in shown or _matches(cat, intent, trig, cand):
                continue
            shown.append(cand)
        for item in rng.permutation(shown):
            ev(int(item), t + 60, "impression")
        ev(positive, t + 90, "click")

    events.sort(key=lambda e: (e.timestamp, e.user_id))
    profiles = {f"u{u}": (f"seg{segment[u]}",) for u in range(spec.n_users)}
    return events, profiles, intents


def write_dataset(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    events, profiles, intents = generate(spec)
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"events": d / "events.tsv", "profiles": d / "profiles.tsv",
             "intents": d / "intents.tsv", "spec": d / "synthetic_spec.txt"}
    write_events(paths["events"], events)
    with open(paths["profiles"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id\tsegment\n")
        for u in sorted(profiles, key=lambda x: int(x[1:])):
            fh.write(f"{u}\t{profiles[u][0]}\n")
    with open(paths["intents"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("session_id\tintent\n")
        for sid, intent in intents:
            fh.write(f"{sid}\t{intent}\n")
    paths["spec"].write_text(spec.to_text(), encoding="utf-8")
    return paths
