"""Trajectory ingestion, interaction episodes, and situation pairs.

Vehicle logs (CSV or synthesized) are grouped into per-vehicle series; the
leader of each vehicle is the closest same-lane vehicle ahead, with the gap
measured bumper to bumper.  Leader-follower interaction episodes are
segmented with a hysteresis rule (begin on small THW or gap, end only once
both are comfortably large or the pair stops being closest), and each
episode yields situation pairs: the state [v_lead, a_lead, v_ego, ln gap]
at an anchor time plus the leader speeds over the following horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .simulation import IdmPlusParams


class TrajectoryFormatError(ValueError):
    pass


@dataclass
class ColumnMapping:
    """Names of the CSV columns; optional ones may be absent from the file."""

    time: str = "time_s"
    vehicle_id: str = "vehicle_id"
    lane_id: str = "lane_id"
    position: str = "position_m"
    speed: str = "speed_mps"
    accel: str = "accel_mps2"
    leader_id: str = "leader_id"
    gap: str = "gap_m"
    length: str = "length_m"
    default_length: float = 4.0  # used when no length column is present

    def required(self) -> tuple[str, ...]:
        return (self.time, self.vehicle_id, self.lane_id, self.position, self.speed)


@dataclass
class VehicleTrack:
    """Samples of one vehicle, sorted by time at a fixed period."""

    vehicle_id: int
    time: np.ndarray
    lane: np.ndarray
    position: np.ndarray  # front bumper, increasing in travel direction
    speed: np.ndarray
    accel: np.ndarray
    length: float
    leader_id: np.ndarray | None = None  # -1 where no leader
    gap: np.ndarray | None = None        # nan where no leader

    def __len__(self) -> int:
        return len(self.time)


@dataclass
class LoadResult:
    tracks: dict[int, VehicleTrack]
    rejected: dict[str, int] = field(default_factory=dict)

    @property
    def total_rejected(self) -> int:
        return sum(self.rejected.values())


@dataclass
class InteractionEpisode:
    follower_id: int
    leader_id: int
    start_time: float
    end_time: float
    period: float
    v_lead: np.ndarray
    a_lead: np.ndarray
    v_ego: np.ndarray
    gap: np.ndarray

    def __len__(self) -> int:
        return len(self.v_lead)

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class SituationPair:
    """Initial-situation vector x and future leader speeds y."""

    x: np.ndarray  # [v_lead, a_lead, v_ego, ln_gap]
    y: np.ndarray  # leader speeds at anchor + dt ... anchor + n*dt


def load_trajectories(source, mapping: ColumnMapping | None = None) -> LoadResult:
    """Read a trajectory CSV into per-vehicle series.

    Rows with negative speeds or repeated timestamps are dropped and counted;
    the gap toward the leader is computed from positions when the file does
    not provide it.
    """
    mapping = mapping or ColumnMapping()
    df = pd.read_csv(source, comment="#")
    if df.empty:
        raise TrajectoryFormatError("trajectory file contains no data rows")
    for col in mapping.required():
        if col not in df.columns:
            raise TrajectoryFormatError(f"missing required column: {col}")

    rejected: dict[str, int] = {}

    def drop(mask: np.ndarray, reason: str):
        nonlocal df
        n = int(mask.sum())
        if n:
            rejected[reason] = rejected.get(reason, 0) + n
            df = df[~mask]

    values = df[list(mapping.required())]
    drop(values.isna().any(axis=1).to_numpy(), "invalid_value")
    drop((df[mapping.speed] < 0).to_numpy(), "negative_speed")

    has_accel = mapping.accel in df.columns
    has_leader = mapping.leader_id in df.columns
    has_gap = mapping.gap in df.columns
    has_length = mapping.length in df.columns

    tracks: dict[int, VehicleTrack] = {}
    for vid, group in df.groupby(mapping.vehicle_id):
        group = group.sort_values(mapping.time, kind="stable")
        t = group[mapping.time].to_numpy(dtype=float)
        dup = np.zeros(len(t), dtype=bool)
        dup[1:] = np.diff(t) <= 0
        if dup.any():
            rejected["non_monotone_time"] = rejected.get("non_monotone_time", 0) + int(dup.sum())
            group = group[~dup]
            t = group[mapping.time].to_numpy(dtype=float)
        if len(t) == 0:
            continue
        speed = group[mapping.speed].to_numpy(dtype=float)
        if has_accel:
            accel = group[mapping.accel].to_numpy(dtype=float)
        else:
            accel = _finite_diff(speed, t)
        length = float(group[mapping.length].iloc[0]) if has_length else mapping.default_length
        leader = group[mapping.leader_id].fillna(-1).to_numpy(dtype=int) if has_leader else None
        gap = group[mapping.gap].to_numpy(dtype=float) if has_gap else None
        tracks[int(vid)] = VehicleTrack(
            vehicle_id=int(vid),
            time=t,
            lane=group[mapping.lane_id].to_numpy(dtype=int),
            position=group[mapping.position].to_numpy(dtype=float),
            speed=speed,
            accel=accel,
            length=length,
            leader_id=leader,
            gap=gap,
        )
    result = LoadResult(tracks=tracks, rejected=rejected)
    assign_leaders(result.tracks)
    return result


def _finite_diff(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    if len(values) >= 2:
        out[:-1] = np.diff(values) / np.diff(t)
        out[-1] = out[-2]
    return out


def infer_period(tracks: dict[int, VehicleTrack]) -> float:
    diffs = [np.diff(tr.time) for tr in tracks.values() if len(tr) >= 2]
    if not diffs:
        raise TrajectoryFormatError("tracks too short to infer a sampling period")
    period = float(np.median(np.concatenate(diffs)))
    for tr in tracks.values():
        if len(tr) >= 2:
            steps = np.diff(tr.time) / period
            if not np.allclose(steps, np.round(steps), atol=1e-6):
                raise TrajectoryFormatError(
                    f"vehicle {tr.vehicle_id} is not sampled at a fixed period")
    return period


def assign_leaders(tracks: dict[int, VehicleTrack]) -> None:
    """Fill the leader and gap arrays from positions where not provided.

    The leader is the closest same-lane vehicle ahead; ties go to the smaller
    gap, then the smaller vehicle id.  Gaps are bumper to bumper (the leader
    length is subtracted).
    """
    need = [tr for tr in tracks.values() if tr.leader_id is None or tr.gap is None]
    if not need:
        return
    frames: dict[float, list[tuple[int, int]]] = {}
    for tr in tracks.values():
        for i, t in enumerate(tr.time):
            frames.setdefault(round(float(t), 9), []).append((tr.vehicle_id, i))
    for tr in need:
        tr.leader_id = np.full(len(tr), -1, dtype=int)
        tr.gap = np.full(len(tr), np.nan)
    need_ids = {tr.vehicle_id for tr in need}
    for t, members in frames.items():
        if not any(vid in need_ids for vid, _ in members):
            continue
        by_lane: dict[int, list[tuple[float, int, int]]] = {}
        for vid, i in members:
            tr = tracks[vid]
            by_lane.setdefault(int(tr.lane[i]), []).append((float(tr.position[i]), vid, i))
        for entries in by_lane.values():
            for pos, vid, i in entries:
                if vid not in need_ids:
                    continue
                best = None
                for pos_l, vid_l, _ in entries:
                    if vid_l == vid or pos_l <= pos:
                        continue
                    g = pos_l - tracks[vid_l].length - pos
                    key = (g, vid_l)
                    if best is None or key < best:
                        best = key
                if best is not None:
                    tr = tracks[vid]
                    tr.gap[i] = best[0]
                    tr.leader_id[i] = best[1]


def extract_interactions(tracks: dict[int, VehicleTrack],
                         begin_thw: float = 2.0, begin_gap: float = 20.0,
                         end_thw: float = 4.0, end_gap: float = 40.0,
                         period: float | None = None) -> list[InteractionEpisode]:
    """Segment leader-follower interactions with the hysteresis rule.

    An episode begins at the first sample where THW <= begin_thw or
    gap <= begin_gap; it ends at the last sample before (THW > end_thw and
    gap > end_gap), or when the pair stops being the closest same-lane pair.
    """
    assign_leaders(tracks)
    if period is None:
        period = infer_period(tracks)
    index_of = {vid: {round(float(t), 9): i for i, t in enumerate(tr.time)}
                for vid, tr in tracks.items()}

    episodes: list[InteractionEpisode] = []
    for vid in sorted(tracks):
        tr = tracks[vid]
        open_leader = -1
        start = -1
        prev = -1

        def close(upto: int):
            nonlocal open_leader, start
            if open_leader >= 0 and upto >= start:
                episodes.append(_build_episode(tracks, index_of, vid, open_leader,
                                               start, upto, period))
            open_leader = -1
            start = -1

        for i in range(len(tr)):
            leader = int(tr.leader_id[i]) if tr.leader_id is not None else -1
            gap = float(tr.gap[i]) if tr.gap is not None else math.nan
            valid = leader >= 0 and math.isfinite(gap) and gap > 0
            aligned = valid and round(float(tr.time[i]), 9) in index_of.get(leader, {})
            contiguous = prev == i - 1
            if open_leader >= 0 and (not aligned or leader != open_leader or not contiguous):
                close(i - 1)
            if aligned:
                v_e = float(tr.speed[i])
                thw_i = gap / v_e if v_e > 0 else math.inf
                if open_leader >= 0:
                    if thw_i > end_thw and gap > end_gap:
                        close(i - 1)
                if open_leader < 0 and (thw_i <= begin_thw or gap <= begin_gap):
                    open_leader = leader
                    start = i
                prev = i
            else:
                prev = -1
        close(len(tr) - 1)
    return episodes


def _build_episode(tracks, index_of, follower_id, leader_id, start, end, period):
    tr = tracks[follower_id]
    lead = tracks[leader_id]
    idx_f = np.arange(start, end + 1)
    idx_l = np.asarray([index_of[leader_id][round(float(tr.time[i]), 9)] for i in idx_f])
    return InteractionEpisode(
        follower_id=follower_id,
        leader_id=leader_id,
        start_time=float(tr.time[start]),
        end_time=float(tr.time[end]),
        period=period,
        v_lead=lead.speed[idx_l].copy(),
        a_lead=lead.accel[idx_l].copy(),
        v_ego=tr.speed[idx_f].copy(),
        gap=tr.gap[idx_f].copy(),
    )


def build_situation_pairs(episode: InteractionEpisode, stride: float = 1.0,
                          horizon: int = 50, horizon_dt: float = 0.1) -> list[SituationPair]:
    """One pair per stride step whose full horizon lies inside the episode."""
    p = episode.period
    stride_steps = stride / p
    dt_steps = horizon_dt / p
    if abs(stride_steps - round(stride_steps)) > 1e-6 or abs(dt_steps - round(dt_steps)) > 1e-6:
        raise ValueError("episode period must divide both stride and horizon_dt")
    stride_steps = int(round(stride_steps))
    dt_steps = int(round(dt_steps))
    span = horizon * dt_steps
    pairs: list[SituationPair] = []
    last_anchor = len(episode) - 1 - span
    anchor = 0
    while anchor <= last_anchor:
        g = episode.gap[anchor]
        x = np.asarray([episode.v_lead[anchor], episode.a_lead[anchor],
                        episode.v_ego[anchor], math.log(g)])
        y = episode.v_lead[anchor + dt_steps: anchor + span + 1: dt_steps].astype(float)
        pairs.append(SituationPair(x=x, y=y))
        anchor += stride_steps
    return pairs


def pairs_to_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise ValueError("no situation pairs")
    x = np.stack([p.x for p in pairs])
    y = np.stack([p.y for p in pairs])
    return x, y


@dataclass(frozen=True)
class SyntheticFleetConfig:
    """Single-lane platoon generator standing in for field data."""

    vehicle_count: int = 10
    duration: float = 300.0
    speed_regimes: tuple = ((12.0, 2.0), (20.0, 2.5), (27.0, 2.0))
    idm: IdmPlusParams = field(default_factory=IdmPlusParams)
    seed: int = 0
    period: float = 0.1
    vehicle_length: float = 4.0
    regime_dwell: float = 25.0  # mean seconds between regime switches

    def __post_init__(self):
        if self.vehicle_count < 2:
            raise ValueError("need at least two vehicles")
        if self.duration <= 5.0:
            raise ValueError("duration must exceed the 5 s pair horizon")
        if not self.speed_regimes:
            raise ValueError("need at least one speed regime")


def synthesize_fleet(config: SyntheticFleetConfig) -> dict[int, VehicleTrack]:
    """Deterministic platoon: a lead vehicle wandering between speed regimes
    (smooth mean-reverting acceleration) with IDM+ followers behind it."""
    rng = np.random.default_rng(config.seed)
    dt = config.period
    steps = int(round(config.duration / dt)) + 1
    t = dt * np.arange(steps)
    k = config.vehicle_count

    speeds = np.zeros((k, steps))
    positions = np.zeros((k, steps))

    # Lead vehicle: regime-switching target speed, smooth noisy acceleration.
    regimes = list(config.speed_regimes)
    reg = 0
    mu, sd = regimes[reg]
    next_switch = rng.exponential(config.regime_dwell)
    v = mu
    a = 0.0
    sigma_a = 0.0
    speeds[0, 0] = v
    for i in range(1, steps):
        now = t[i - 1]
        if now >= next_switch and len(regimes) > 1:
            reg = int(rng.integers(0, len(regimes)))
            mu, sd = regimes[reg]
            next_switch = now + rng.exponential(config.regime_dwell)
        sigma_a = 1.1 * sd * math.sqrt(2 * 0.15)
        a_cmd = np.clip(0.15 * (mu - v), -3.0, 2.0)
        a += 0.8 * (a_cmd - a) * dt + sigma_a * math.sqrt(dt) * rng.standard_normal()
        a = float(np.clip(a, -4.0, 3.0))
        v = max(v + a * dt, 0.0)
        speeds[0, i] = v
    positions[0, 0] = 1000.0
    positions[0, 1:] = positions[0, 0] + np.cumsum(speeds[0, :-1]) * dt

    # Followers: IDM+ chain starting at the equilibrium gap s0 + v T.
    idm = config.idm
    sqrt_ab2 = 2.0 * math.sqrt(idm.a * idm.b)
    v0_init = speeds[0, 0]
    gap0 = idm.s0 + v0_init * idm.headway
    for j in range(1, k):
        speeds[j, 0] = v0_init
        positions[j, 0] = positions[j - 1, 0] - config.vehicle_length - gap0
        for i in range(1, steps):
            v_e = speeds[j, i - 1]
            v_l = speeds[j - 1, i - 1]
            g = positions[j - 1, i - 1] - config.vehicle_length - positions[j, i - 1]
            g = max(g, 0.1)
            s_star = idm.s0 + v_e * idm.headway + v_e * (v_e - v_l) / sqrt_ab2
            acc = idm.a * min(1.0 - (v_e / idm.v0) ** idm.delta_exp, 1.0 - (s_star / g) ** 2)
            acc = float(np.clip(acc, -8.0, 3.0))
            positions[j, i] = positions[j, i - 1] + v_e * dt
            speeds[j, i] = max(v_e + acc * dt, 0.0)

    tracks: dict[int, VehicleTrack] = {}
    for j in range(k):
        tracks[j] = VehicleTrack(
            vehicle_id=j,
            time=t.copy(),
            lane=np.zeros(steps, dtype=int),
            position=positions[j].copy(),
            speed=speeds[j].copy(),
            accel=_finite_diff(speeds[j], t),
            length=config.vehicle_length,
        )
    assign_leaders(tracks)
    return tracks


def tracks_to_csv(tracks: dict[int, VehicleTrack], path,
                  mapping: ColumnMapping | None = None, header_lines=()) -> None:
    mapping = mapping or ColumnMapping()
    rows = []
    for vid in sorted(tracks):
        tr = tracks[vid]
        frame = pd.DataFrame({
            mapping.time: tr.time,
            mapping.vehicle_id: tr.vehicle_id,
            mapping.lane_id: tr.lane,
            mapping.position: tr.position,
            mapping.speed: tr.speed,
            mapping.accel: tr.accel,
            mapping.leader_id: tr.leader_id if tr.leader_id is not None else -1,
            mapping.gap: tr.gap if tr.gap is not None else np.nan,
            mapping.length: tr.length,
        })
        rows.append(frame)
    out = pd.concat(rows, ignore_index=True)
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        out.to_csv(fh, index=False)
