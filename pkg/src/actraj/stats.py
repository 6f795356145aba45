"""Action distribution and per-action speed / acceleration / distance profiles over tracklets."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .vocab import ActionClass, Tracklet

GLOBAL = "ALL"
CSV_COLUMNS = ("action", "n", "speed_mean", "speed_std", "accel_mean", "accel_std", "dist_mean",
               "dist_std")


@dataclass
class Moments:
    """Count / mean / sum of squared deviations, mergeable in any order (Chan et al. update)."""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values) -> "Moments":
        v = np.asarray(values, float).reshape(-1)
        if v.size == 0:
            return cls()
        mu = float(v.mean())
        return cls(int(v.size), mu, float(((v - mu) ** 2).sum()))

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return Moments(self.n, self.mean, self.m2)
        if self.n == 0:
            return Moments(other.n, other.mean, other.m2)
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Moments(n, mean, m2)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.m2 / self.n)) if self.n else 0.0


@dataclass
class ActionKinematics:
    action: str
    n: int
    speed_mean: float
    speed_std: float
    accel_mean: float
    accel_std: float
    dist_mean: float
    dist_std: float

    def row(self) -> list:
        return [self.action, self.n, self.speed_mean, self.speed_std, self.accel_mean,
                self.accel_std, self.dist_mean, self.dist_std]


def action_distribution(tracklets: Iterable[Tracklet],
                        actions: Sequence[ActionClass] = tuple(ActionClass)) -> dict[ActionClass, int]:
    """Per-timestep label counts over all 20 states of every tracklet."""
    counts = Counter({a: 0 for a in actions})
    for tr in tracklets:
        counts.update(tr.actions())
    return dict(counts)


def sorted_distribution(counts: dict[ActionClass, int]) -> list[tuple[str, int]]:
    return sorted(((a.value, n) for a, n in counts.items()), key=lambda kv: (-kv[1], kv[0]))


def _segment_kinematics(tr: Tracklet) -> tuple[np.ndarray, np.ndarray, np.ndarray, list]:
    t = np.array([s.t for s in tr.states])
    speed = np.linalg.norm(tr.velocities(), axis=1)
    accel = np.gradient(speed, t) if len(t) > 1 else np.zeros_like(speed)
    steps = np.linalg.norm(np.diff(tr.positions(), axis=0), axis=1)
    return speed, accel, steps, tr.actions()


def _dominant(actions: list[ActionClass]) -> ActionClass:
    counts = Counter(actions)
    return min(counts, key=lambda a: (-counts[a], a.index))


def _accumulate(tracklets: Iterable[Tracklet], distance_mode: str):
    per: dict[ActionClass, list[Moments]] = {}
    pooled = [Moments(), Moments(), Moments()]
    for tr in tracklets:
        speed, accel, steps, actions = _segment_kinematics(tr)
        labels = np.array([a.value for a in actions])
        pooled[0] = pooled[0].merge(Moments.of(speed))
        pooled[1] = pooled[1].merge(Moments.of(accel))
        pooled[2] = pooled[2].merge(Moments.of([steps.sum()]))
        for a in dict.fromkeys(actions):
            mask = labels == a.value
            slot = per.setdefault(a, [Moments(), Moments(), Moments()])
            slot[0] = slot[0].merge(Moments.of(speed[mask]))
            slot[1] = slot[1].merge(Moments.of(accel[mask]))
            if distance_mode == "per_action":
                # step i -> i+1 belongs to the action at its start
                slot[2] = slot[2].merge(Moments.of([steps[mask[:-1]].sum()]))
        if distance_mode == "per_segment":
            a = _dominant(actions)
            per[a][2] = per[a][2].merge(Moments.of([steps.sum()]))
        elif distance_mode != "per_action":
            raise ValueError(f"unknown distance mode {distance_mode!r}")
    return per, pooled


def _row(name: str, m: list[Moments]) -> ActionKinematics:
    return ActionKinematics(name, m[0].n, m[0].mean, m[0].std, m[1].mean, m[1].std,
                            m[2].mean, m[2].std)


def per_action_kinematics(tracklets: Iterable[Tracklet],
                          distance_mode: str = "per_action") -> list[ActionKinematics]:
    """Speed and signed d(speed)/dt per labelled step, and distance per segment, for each action.

    ``distance_mode="per_action"`` sums only the steps that start with the action;
    ``"per_segment"`` credits the whole segment length to its most frequent action.
    """
    per, _ = _accumulate(tracklets, distance_mode)
    return [_row(a.value, per[a]) for a in ActionClass if a in per]


def global_kinematics(tracklets: Iterable[Tracklet]) -> ActionKinematics:
    _, pooled = _accumulate(tracklets, "per_action")
    return _row(GLOBAL, pooled)


def write_report_csv(rows: Sequence[ActionKinematics], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.action, r.n] + [f"{v:.9g}" for v in r.row()[2:]])


def distribution_json(counts: dict[ActionClass, int]) -> str:
    items = sorted_distribution(counts)
    return json.dumps({"order": "descending",
                       "counts": [{"action": a, "count": n} for a, n in items],
                       "total": int(sum(n for _, n in items))}, indent=2)
