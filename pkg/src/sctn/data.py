"""Trajectory ingestion and segment construction.

Reads headered CSV track logs (vehicle_id, frame_id, local_x, local_y, 10 Hz,
feet or metres), subsamples to 5 Hz, slices sliding 8-second windows
(15 observation + 25 prediction frames), ranks neighbours by distance to the
target at its last observed frame, and normalizes each window so that point
sits at the origin. A deterministic synthetic generator provides desk-scale
datasets without any real logs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .model import Scene

FOOT_IN_METRES = 0.3048
T_OBS = 15
T_PRED = 25
WINDOW = T_OBS + T_PRED
REQUIRED_COLUMNS = ("vehicle_id", "frame_id", "local_x", "local_y")


@dataclass
class TrackRecord:
    vehicle_id: int
    frame_id: int
    x: float
    y: float


@dataclass
class SegmentSample:
    """One 8-second window, normalized, with provenance for traceability."""
    scene: Scene
    source_file: str = ""
    vehicle_id: int = 0
    start_frame: int = 0


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0

    def all_samples(self):
        return self.train + self.validation + self.test


def parse_trajectory_csv(path, units="meters"):
    """Parse a track log into records sorted by (vehicle_id, frame_id)."""
    if units not in ("feet", "meters"):
        raise DataError(f"unknown units flag {units!r}")
    factor = FOOT_IN_METRES if units == "feet" else 1.0
    records = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip().lower() for h in header]
        cols = {}
        for name in REQUIRED_COLUMNS:
            if name not in header:
                raise DataError(f"{path}: missing required column {name!r}")
            cols[name] = header.index(name)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = int(row[cols["vehicle_id"]])
                fid = int(row[cols["frame_id"]])
                x = float(row[cols["local_x"]]) * factor
                y = float(row[cols["local_y"]]) * factor
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: unparseable row: {exc}") from None
            if not (np.isfinite(x) and np.isfinite(y)):
                raise DataError(f"{path}:{lineno}: non-finite coordinate")
            if (vid, fid) in seen:
                raise DataError(f"{path}:{lineno}: duplicate (vehicle {vid}, frame {fid})")
            seen.add((vid, fid))
            records.append(TrackRecord(vid, fid, x, y))
    records.sort(key=lambda r: (r.vehicle_id, r.frame_id))
    return records


def resample(records, factor=2):
    """Keep every factor-th frame per vehicle, anchored at its first frame."""
    if factor == 1:
        return list(records)
    out = []
    first_frame = {}
    for r in records:
        base = first_frame.setdefault(r.vehicle_id, r.frame_id)
        if (r.frame_id - base) % factor == 0:
            out.append(r)
    return out


def _tracks_by_vehicle(records):
    tracks = {}
    for r in records:
        tracks.setdefault(r.vehicle_id, []).append(r)
    return tracks


def segment_windows(records, stride=5, source_file=""):
    """Sliding 40-frame windows per target vehicle (5 Hz records).

    Windows where the target misses any frame are dropped. Returns raw
    window descriptors; neighbour assignment happens in select_neighbors.
    """
    tracks = _tracks_by_vehicle(records)
    windows = []
    for vid in sorted(tracks):
        track = tracks[vid]
        frames = [r.frame_id for r in track]
        step = frames[1] - frames[0] if len(frames) > 1 else 1
        for start in range(0, len(track) - WINDOW + 1, stride):
            chunk = track[start:start + WINDOW]
            # contiguity check: frame ids must advance uniformly
            ids = [r.frame_id for r in chunk]
            if any(b - a != step for a, b in zip(ids, ids[1:])):
                continue
            windows.append(dict(vehicle_id=vid, start_frame=chunk[0].frame_id,
                                frames=ids, source_file=source_file))
    return windows


def select_neighbors(window, records, n_channels):
    """Build the N-channel scene for one window.

    Channel 0 is the target. Neighbours are the vehicles present at the
    target's last observed frame, nearest first (ties broken by lower
    vehicle id); missing window frames are held at the neighbour's last
    known position. Unfilled channels are zero and masked out.
    """
    tracks = _tracks_by_vehicle(records)
    vid = window["vehicle_id"]
    frames = window["frames"]
    anchor_frame = frames[T_OBS - 1]
    by_frame = {v: {r.frame_id: (r.x, r.y) for r in tr} for v, tr in tracks.items()}
    tx, ty = by_frame[vid][anchor_frame]

    candidates = []
    for other, posmap in by_frame.items():
        if other == vid or anchor_frame not in posmap:
            continue
        ox, oy = posmap[anchor_frame]
        dist = float(np.hypot(ox - tx, oy - ty))
        candidates.append((dist, other))
    candidates.sort()
    chosen = [other for _, other in candidates[:n_channels - 1]]

    positions = np.zeros((n_channels, WINDOW, 2))
    mask = np.zeros(n_channels, dtype=bool)
    for channel, v in enumerate([vid] + chosen):
        posmap = by_frame[v]
        last = None
        filled = np.zeros((WINDOW, 2))
        for i, f in enumerate(frames):
            if f in posmap:
                last = posmap[f]
            if last is None:
                # frames before the neighbour appears: backfill later
                filled[i] = np.nan
            else:
                filled[i] = last
        # backfill leading gaps with the first known position
        if np.isnan(filled).any():
            first_known = filled[~np.isnan(filled[:, 0])][0]
            filled[np.isnan(filled[:, 0])] = first_known
        positions[channel] = filled
        mask[channel] = True
    return Scene(positions=positions, channel_mask=mask, target_index=0)


def normalize(scene, t_obs=T_OBS):
    """Translate so the target's last observed point is the origin."""
    offset = scene.positions[scene.target_index, t_obs - 1].copy()
    positions = scene.positions - offset
    positions[~scene.channel_mask] = 0.0
    return Scene(positions=positions, channel_mask=scene.channel_mask.copy(),
                 target_index=scene.target_index, origin=offset)


def denormalize_points(points, origin):
    return np.asarray(points) + np.asarray(origin)


def build_segments(records, n_channels, stride=5, source_file=""):
    """parse -> resample output to normalized SegmentSamples."""
    samples = []
    for window in segment_windows(records, stride=stride, source_file=source_file):
        scene = normalize(select_neighbors(window, records, n_channels))
        samples.append(SegmentSample(scene=scene, source_file=source_file,
                                     vehicle_id=window["vehicle_id"],
                                     start_frame=window["start_frame"]))
    samples.sort(key=lambda s: (s.source_file, s.vehicle_id, s.start_frame))
    return samples


def split_dataset(samples, seed=0, fractions=(0.7, 0.1, 0.2)):
    """Deterministic per-segment split into train/validation/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(fractions[0] * len(samples)))
    n_val = int(round(fractions[1] * len(samples)))
    shuffled = [samples[i] for i in order]
    return DatasetSplit(train=shuffled[:n_train],
                        validation=shuffled[n_train:n_train + n_val],
                        test=shuffled[n_train + n_val:],
                        seed=seed)


def retarget_neighbors(sample, n_channels):
    """Re-rank an existing sample's channels into an n_channels-wide scene.

    Used by the ablation grid to sweep neighbour counts without re-reading
    raw logs: keeps the target, takes the nearest real channels at the last
    observed frame, pads the rest.
    """
    if n_channels < 1:
        raise DataError(f"channel count must be >= 1, got {n_channels}")
    scene = sample.scene
    anchor = scene.positions[:, T_OBS - 1, :]
    target = scene.target_index
    dists = np.hypot(*(anchor - anchor[target]).T)
    order = [i for i in np.argsort(dists, kind="stable")
             if i != target and scene.channel_mask[i]]
    chosen = [target] + order[:n_channels - 1]
    positions = np.zeros((n_channels, scene.positions.shape[1], 2))
    mask = np.zeros(n_channels, dtype=bool)
    for c, src in enumerate(chosen):
        positions[c] = scene.positions[src]
        mask[c] = True
    new_scene = Scene(positions=positions, channel_mask=mask, target_index=0,
                      origin=scene.origin.copy())
    return SegmentSample(scene=new_scene, source_file=sample.source_file,
                         vehicle_id=sample.vehicle_id,
                         start_frame=sample.start_frame)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

def synthesize_scenes(count, kind="linear", seed=0, n_agents=3, noise=0.0):
    """Deterministic parametric windows for desk-scale testing.

    kinds: linear (constant velocity), turn (constant-curvature arc with a
    heading change well past 30 degrees), interaction (two agents converge
    then veer apart, remaining agents linear).
    """
    if kind not in ("linear", "turn", "interaction"):
        raise DataError(f"unknown synthetic kind {kind!r}")
    rng = np.random.default_rng(seed)
    dt = 0.2  # 5 Hz
    t = np.arange(WINDOW) * dt
    samples = []
    for idx in range(count):
        positions = np.zeros((n_agents, WINDOW, 2))
        for a in range(n_agents):
            start = rng.uniform(-5, 5, size=2)
            speed = rng.uniform(1.5, 3.0)
            heading = rng.uniform(0, 2 * np.pi)
            if kind == "linear" or (kind == "interaction" and a >= 2):
                vel = speed * np.array([np.cos(heading), np.sin(heading)])
                track = start + np.outer(t, vel)
            elif kind == "turn":
                total_turn = np.deg2rad(rng.uniform(45, 90)) * np.sign(rng.uniform(-1, 1) or 1)
                omega = total_turn / t[-1]
                angles = heading + omega * t
                radius = speed / abs(omega)
                centre = start - radius * np.sign(omega) * np.array(
                    [-np.sin(heading), np.cos(heading)])
                track = centre + radius * np.sign(omega) * np.stack(
                    [-np.sin(angles), np.cos(angles)], axis=1)
            else:  # interaction, agents 0 and 1 converge then avoid
                meet = np.array([0.0, 0.0])
                side = 1.0 if a == 0 else -1.0
                approach = start + (meet - start) * np.minimum(t / (t[-1] * 0.5), 1.0)[:, None]
                veer = side * np.stack([np.zeros_like(t),
                                        np.maximum(t - t[-1] * 0.5, 0.0) * speed], axis=1)
                track = approach + veer
            if noise > 0:
                track = track + rng.normal(0.0, noise, size=track.shape)
            positions[a] = track
        scene = normalize(Scene(positions=positions,
                                channel_mask=np.ones(n_agents, dtype=bool),
                                target_index=0))
        samples.append(SegmentSample(scene=scene, source_file=f"synth:{kind}",
                                     vehicle_id=idx, start_frame=0))
    return samples
