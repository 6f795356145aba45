"""CSV parsing, resampling, velocity derivation, tracklet segmentation and fold assignment."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

from .vocab import (
    DT,
    DT_TOL,
    OBS_LEN,
    SEQ_LEN,
    State,
    Tracklet,
    Trajectory,
    VocabularyError,
    parse_action,
    parse_agent_class,
)

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("time_s", "agent_id", "agent_class", "x_m", "y_m", "action")
OPTIONAL_COLUMNS = ("vx_ms", "vy_ms")


class SchemaError(ValueError):
    pass


class TooShortError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class FoldCountError(ValueError):
    pass


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_dropped: int = 0
    unknown_labels: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    folds: dict[str, int]

    def fold_of(self, tracklet: Tracklet) -> int:
        return self.folds[tracklet.source_trajectory_id]

    def split(self, tracklets: Iterable[Tracklet], fold: int) -> tuple[list[Tracklet], list[Tracklet]]:
        train, val = [], []
        for tr in tracklets:
            (val if self.fold_of(tr) == fold else train).append(tr)
        return train, val

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.folds.values():
            counts[f] += 1
        return counts


def parse_csv(stream: TextIO, column_map: Mapping[str, str] | None = None,
              unit_scale: float = 1.0, report: ParseReport | None = None) -> list[Trajectory]:
    """Read the ``time_s,agent_id,agent_class,x_m,y_m,action[,vx_ms,vy_ms]`` schema.

    ``column_map`` renames source columns onto the schema (source name -> schema name),
    and ``unit_scale`` multiplies positions and velocities (0.001 for millimetres).
    Rows with non-finite coordinates or unknown labels are dropped and counted.
    """
    report = report if report is not None else ParseReport()
    reader = csv.reader(stream)
    first = next(reader, None)
    if first is None:
        log.warning("empty input file")
        return []
    rename = dict(column_map or {})
    header = [rename.get(h.strip(), h.strip()) for h in first]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    has_vel = all(c in header for c in OPTIONAL_COLUMNS)

    by_agent: dict[str, list[tuple[float, int, State]]] = {}
    classes: dict[str, object] = {}
    for row_no, raw in enumerate(reader):
        if not raw or all(not c.strip() for c in raw):
            continue
        report.rows_read += 1
        row = dict(zip(header, raw))
        try:
            t = float(row["time_s"])
            x = float(row["x_m"]) * unit_scale
            y = float(row["y_m"]) * unit_scale
            vx = float(row["vx_ms"]) * unit_scale if has_vel and row.get("vx_ms") else 0.0
            vy = float(row["vy_ms"]) * unit_scale if has_vel and row.get("vy_ms") else 0.0
        except (KeyError, ValueError):
            report.rows_dropped += 1
            continue
        if not all(math.isfinite(v) for v in (t, x, y)):
            report.rows_dropped += 1
            continue
        try:
            action = parse_action(row["action"])
            agent_class = parse_agent_class(row["agent_class"])
        except VocabularyError as err:
            label = str(err)
            report.unknown_labels[label] = report.unknown_labels.get(label, 0) + 1
            report.rows_dropped += 1
            continue
        agent = row["agent_id"].strip()
        classes.setdefault(agent, agent_class)
        if classes[agent] != agent_class:
            raise SchemaError(f"agent {agent} changes agent class mid-recording")
        by_agent.setdefault(agent, []).append((t, row_no, State(t, x, y, vx, vy, action)))

    if report.unknown_labels:
        log.warning("unknown labels: %s", report.unknown_labels)
    if report.rows_dropped:
        log.warning("dropped %d of %d rows", report.rows_dropped, report.rows_read)
    if not by_agent:
        log.warning("no usable rows")

    out = []
    for agent in sorted(by_agent):
        rows = sorted(by_agent[agent], key=lambda r: (r[0], r[1]))
        states, last_t = [], None
        for t, _, s in rows:
            if last_t is not None and t == last_t:
                report.rows_dropped += 1
                continue
            states.append(s)
            last_t = t
        out.append(Trajectory(agent, classes[agent], tuple(states)))
    return out


def read_csv(path: str | Path, **kwargs) -> list[Trajectory]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_csv(fh, **kwargs)


def _num(v: float) -> str:
    return repr(float(v))  # shortest round-trip form


def write_csv(trajectories: Iterable[Trajectory], stream: TextIO, velocities: bool = True) -> None:
    cols = list(REQUIRED_COLUMNS) + (list(OPTIONAL_COLUMNS) if velocities else [])
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(cols)
    for traj in trajectories:
        for s in traj.states:
            row = [_num(s.t), traj.agent_id, traj.agent_class.value, _num(s.x), _num(s.y),
                   s.action.value]
            if velocities:
                row += [_num(s.vx), _num(s.vy)]
            w.writerow(row)


def _nearest_action(src_t: np.ndarray, actions: list, t: float):
    j = int(np.searchsorted(src_t, t))
    if j == 0:
        return actions[0]
    if j >= len(src_t):
        return actions[-1]
    # ties (within float noise) go to the earlier sample
    return actions[j - 1] if (t - src_t[j - 1]) <= (src_t[j] - t) + 1e-9 else actions[j]


def resample_segments(traj: Trajectory, dt: float = DT) -> list[Trajectory]:
    """Resample onto a uniform grid, splitting wherever the source has a gap > 2*dt."""
    if len(traj) < 2:
        raise TooShortError(f"trajectory {traj.agent_id} has a single state")
    t = np.array([s.t for s in traj.states])
    cuts = np.nonzero(np.diff(t) > 2 * dt)[0] + 1
    bounds = [0, *cuts.tolist(), len(t)]
    out = []
    for lo, hi in zip(bounds, bounds[1:]):
        chunk = traj.states[lo:hi]
        if len(chunk) < 2:
            continue
        seg = _resample_chunk(chunk, dt)
        tag = traj.scenario_tag
        if len(bounds) > 2:
            tag = f"{tag}~{len(out)}" if tag else f"~{len(out)}"
        out.append(Trajectory(traj.agent_id, traj.agent_class, seg, tag))
    return out


def resample(traj: Trajectory, dt: float = DT) -> Trajectory:
    """Single-segment resample; use :func:`resample_segments` when gaps may occur."""
    segs = resample_segments(traj, dt)
    if not segs:
        raise TooShortError(f"trajectory {traj.agent_id} has no resamplable segment")
    if len(segs) > 1:
        raise PreconditionError(
            f"trajectory {traj.agent_id} has {len(segs)} segments; use resample_segments")
    return segs[0]


def _resample_chunk(states, dt: float) -> tuple[State, ...]:
    t = np.array([s.t for s in states])
    x = np.array([s.x for s in states])
    y = np.array([s.y for s in states])
    vx = np.array([s.vx for s in states])
    vy = np.array([s.vy for s in states])
    actions = [s.action for s in states]
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n)
    # Positions at source timestamps that already sit on the grid are copied bit-for-bit.
    xi, yi = np.interp(grid, t, x), np.interp(grid, t, y)
    vxi, vyi = np.interp(grid, t, vx), np.interp(grid, t, vy)
    src = np.searchsorted(t, grid)
    exact = (src < len(t)) & (np.abs(t[np.minimum(src, len(t) - 1)] - grid) <= 1e-9)
    xi[exact], yi[exact] = x[src[exact]], y[src[exact]]
    vxi[exact], vyi[exact] = vx[src[exact]], vy[src[exact]]
    grid[exact] = t[src[exact]]
    return tuple(
        State(float(grid[i]), float(xi[i]), float(yi[i]), float(vxi[i]), float(vyi[i]),
              _nearest_action(t, actions, grid[i]))
        for i in range(n)
    )


def derive_velocities(traj: Trajectory) -> Trajectory:
    """Central differences inside, one-sided at the ends; overwrites any source velocities."""
    if len(traj) < 2:
        raise PreconditionError("need at least two states to derive velocities")
    t = np.array([s.t for s in traj.states])
    steps = np.diff(t)
    dt = steps[0]
    if np.any(np.abs(steps - dt) > DT_TOL):
        raise PreconditionError(f"non-uniform timestamps in {traj.agent_id}")
    pos = np.array([(s.x, s.y) for s in traj.states])
    vel = np.empty_like(pos)
    vel[1:-1] = (pos[2:] - pos[:-2]) / (2 * dt)
    vel[0] = (pos[1] - pos[0]) / dt
    vel[-1] = (pos[-1] - pos[-2]) / dt
    states = tuple(replace(s, vx=float(v[0]), vy=float(v[1])) for s, v in zip(traj.states, vel))
    return replace(traj, states=states)


def segment_tracklets(traj: Trajectory, obs_len: int = OBS_LEN,
                      seq_len: int = SEQ_LEN) -> list[Tracklet]:
    """Cut consecutive non-overlapping windows; the trailing remainder is dropped."""
    out = []
    for k in range(len(traj) // seq_len):
        win = traj.states[k * seq_len:(k + 1) * seq_len]
        out.append(Tracklet(traj.agent_id, traj.agent_class, win[:obs_len], win[obs_len:],
                            traj.trajectory_id, k))
    return out


def assign_folds(tracklets: Iterable[Tracklet] | Iterable[str], k: int = 5,
                 seed: int = 0) -> FoldAssignment:
    """Group by source trajectory, shuffle ids with a seeded RNG, deal round-robin."""
    if k < 2:
        raise FoldCountError("k must be at least 2")
    ids = set()
    for item in tracklets:
        ids.add(item if isinstance(item, str) else item.source_trajectory_id)
    if not ids:
        raise FoldCountError("no tracklets to assign")
    if len(ids) < k:
        raise FoldCountError(f"{len(ids)} trajectory ids cannot fill {k} folds")
    order = sorted(ids)
    random.Random(seed).shuffle(order)
    return FoldAssignment(k, {tid: i % k for i, tid in enumerate(order)})


def build_tracklets(trajectories: Iterable[Trajectory], dt: float = DT) -> list[Tracklet]:
    """resample -> derive_velocities -> segment for every trajectory, in id order."""
    out = []
    for traj in sorted(trajectories, key=lambda tr: tr.trajectory_id):
        if len(traj) < 2:
            continue
        for seg in resample_segments(traj, dt):
            if len(seg) < 2:
                continue
            out.extend(segment_tracklets(derive_velocities(seg)))
    return out


def write_archive(tracklets: Iterable[Tracklet], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for tr in tracklets:
            fh.write(json.dumps(tr.to_record()) + "\n")
            n += 1
    return n


def read_archive(path: str | Path) -> list[Tracklet]:
    with open(path, encoding="utf-8") as fh:
        return [Tracklet.from_record(json.loads(line)) for line in fh if line.strip()]


def parse_csv_text(text: str, **kwargs) -> list[Trajectory]:
    return parse_csv(io.StringIO(text), **kwargs)
