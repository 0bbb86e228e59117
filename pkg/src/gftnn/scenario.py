"""Scenario extraction and synthesis for highway trajectory prediction.

A scenario is a fixed-size snapshot around one target vehicle: K=4 feature
channels (x_rel, y_rel, vx_rel, vy_rel) over T_obs observed steps and up to
N_V - 1 neighbours, plus the target's future displacement for the next
T_pred steps. Positions are taken relative to the target so the model is
translation invariant; velocities are kept as recorded (already
translation invariant). Lateral y grows to the left in driving direction,
so a positive lateral displacement is a left lane change.
"""
from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

MANEUVERS = ("keep_lane", "lane_change_left", "lane_change_right")
CHANNELS = ("x_rel", "y_rel", "vx_rel", "vy_rel")
LANE_WIDTH = 3.5
ARCHIVE_VERSION = 1

# column mapping: canonical name -> file column per input schema
SCHEMAS = {
    "normalized": {
        "frame": "frame", "vehicle_id": "vehicle_id", "x": "x", "y": "y",
        "vx": "vx", "vy": "vy", "lane_id": "lane_id",
    },
    "highd_like": {
        "frame": "frame", "vehicle_id": "id", "x": "x", "y": "y",
        "vx": "xVelocity", "vy": "yVelocity", "lane_id": "laneId",
    },
}


class SchemaError(ValueError):
    """Input file does not have the promised columns."""


class ParseError(ValueError):
    """A row could not be converted to track samples."""


class BalanceError(ValueError):
    """Class balancing is impossible (some maneuver class is empty)."""


class SplitError(ValueError):
    """Dataset too small to split."""


def _frozen(values, dtype=np.float64):
    arr = np.ascontiguousarray(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RawTrack:
    """One vehicle's recorded samples, ordered by frame."""

    vehicle_id: int
    frame: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    lane_id: np.ndarray

    def __post_init__(self):
        frame = np.ascontiguousarray(self.frame, dtype=np.int64)
        if frame.ndim != 1 or frame.size == 0:
            raise ValueError("track must contain at least one sample")
        if np.any(np.diff(frame) <= 0):
            raise ValueError(
                f"vehicle {self.vehicle_id}: frames must be strictly increasing"
            )
        frame.flags.writeable = False
        object.__setattr__(self, "frame", frame)
        lane = np.ascontiguousarray(self.lane_id, dtype=np.int64)
        if lane.shape != frame.shape:
            raise ValueError(f"vehicle {self.vehicle_id}: column length mismatch")
        lane.flags.writeable = False
        object.__setattr__(self, "lane_id", lane)
        for name in ("x", "y", "vx", "vy"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != frame.shape:
                raise ValueError(f"vehicle {self.vehicle_id}: column length mismatch")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"vehicle {self.vehicle_id}: non-finite {name}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.frame.size


@dataclass(frozen=True)
class Scenario:
    """Model-ready sample: observed features plus the target's future."""

    scenario_id: str
    features: np.ndarray        # (4, T_obs, N_V)
    future: np.ndarray          # (T_pred, 2) displacement from the last observed position
    v0: float                   # target longitudinal speed at the last observed step
    fps: float
    maneuver: str

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 3 or f.shape[0] != len(CHANNELS):
            raise ValueError(f"features must be (4, T_obs, N_V), got {f.shape}")
        fut = np.asarray(self.future, dtype=np.float64)
        if fut.ndim != 2 or fut.shape[1] != 2 or fut.shape[0] < 1:
            raise ValueError(f"future must be (T_pred, 2), got {fut.shape}")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(fut))):
            raise ValueError(f"scenario {self.scenario_id}: non-finite data")
        if f[0, 0, 0] != 0.0 or f[1, 0, 0] != 0.0:
            raise ValueError(
                f"scenario {self.scenario_id}: target must start at the origin"
            )
        if self.maneuver not in MANEUVERS:
            raise ValueError(f"unknown maneuver {self.maneuver!r}")
        if not (np.isfinite(self.v0) and self.fps > 0):
            raise ValueError(f"scenario {self.scenario_id}: bad v0/fps")
        object.__setattr__(self, "features", _frozen(f))
        object.__setattr__(self, "future", _frozen(fut))

    @property
    def t_obs(self) -> int:
        return self.features.shape[1]

    @property
    def t_pred(self) -> int:
        return self.future.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    test: list
    seed: int


def ingest_tracks(path, schema: str = "normalized") -> list[RawTrack]:
    """Read per-frame vehicle samples from CSV and group them into tracks."""
    if schema not in SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}, expected one of {sorted(SCHEMAS)}")
    mapping = SCHEMAS[schema]
    columns = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file")
        for canonical, col in mapping.items():
            if col not in reader.fieldnames:
                raise SchemaError(f"{path}: missing column '{col}'")
        for row_no, row in enumerate(reader, start=2):
            try:
                vid = int(row[mapping["vehicle_id"]])
                sample = (
                    int(row[mapping["frame"]]),
                    float(row[mapping["x"]]),
                    float(row[mapping["y"]]),
                    float(row[mapping["vx"]]),
                    float(row[mapping["vy"]]),
                    int(row[mapping["lane_id"]]),
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: row {row_no}: {exc}") from None
            columns[vid].append(sample)
    tracks = []
    for vid in sorted(columns):
        rows = sorted(columns[vid])
        frames = [r[0] for r in rows]
        if len(set(frames)) != len(frames):
            raise ParseError(f"{path}: vehicle {vid} has duplicate frames")
        arr = np.asarray(rows, dtype=np.float64)
        tracks.append(RawTrack(
            vehicle_id=vid, frame=arr[:, 0], x=arr[:, 1], y=arr[:, 2],
            vx=arr[:, 3], vy=arr[:, 4], lane_id=arr[:, 5],
        ))
    return tracks


def label_maneuver(lane_ids, lateral, t0_index: int) -> str:
    """Label from the lane sequence at and after the last observed step.

    A change of lane id inside the prediction window marks a lane change;
    the direction comes from the lateral displacement at the first frame
    whose lane differs (falling back to the end of the window if that
    displacement is exactly zero). y grows to the left.
    """
    lane_ids = np.asarray(lane_ids)
    lateral = np.asarray(lateral, dtype=np.float64)
    if lane_ids.shape != lateral.shape or lane_ids.ndim != 1:
        raise ValueError("lane_ids and lateral must be 1-d and equally long")
    if not 0 <= t0_index < lane_ids.size:
        raise ValueError(f"t0_index {t0_index} out of range")
    lane0 = lane_ids[t0_index]
    for j in range(t0_index + 1, lane_ids.size):
        if lane_ids[j] != lane0:
            dy = lateral[j] - lateral[t0_index]
            if dy == 0.0:
                dy = lateral[-1] - lateral[t0_index]
            if dy > 0.0:
                return "lane_change_left"
            if dy < 0.0:
                return "lane_change_right"
            return "keep_lane"
    return "keep_lane"


def _window_rows(track: RawTrack, first_frame: int, n_frames: int):
    """Row indices covering [first_frame, first_frame + n_frames), or None."""
    needed = np.arange(first_frame, first_frame + n_frames)
    pos = np.searchsorted(track.frame, needed)
    if np.any(pos >= track.frame.size) or np.any(track.frame[pos] != needed):
        return None
    return pos


def extract_scenarios(tracks, fps, t_obs: float = 3.0, t_pred: float = 5.0,
                      n_vehicles: int = 9, stride: int | None = None,
                      target_ids=None) -> list[Scenario]:
    """Slide fixed windows over every track and cut model-ready scenarios.

    Windows advance by ``stride`` frames (default: the prediction length,
    so consecutive futures of one target do not overlap). A window needs
    the target fully covered over observation and prediction; neighbours
    only need the observation part and are ranked by distance to the
    target at the last observed step. Free slots are filled with ghost
    copies of the target.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    t_obs_steps = round(fps * t_obs)
    t_pred_steps = round(fps * t_pred)
    if t_obs_steps < 2 or t_pred_steps < 1:
        raise ValueError(f"window too short at fps={fps}")
    if n_vehicles < 2:
        raise ValueError(f"need at least 2 vehicle slots, got {n_vehicles}")
    if stride is None:
        stride = t_pred_steps
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    window = t_obs_steps + t_pred_steps
    scenarios = []
    skipped = 0
    for target in sorted(tracks, key=lambda tr: tr.vehicle_id):
        if target_ids is not None and target.vehicle_id not in target_ids:
            continue
        start = int(target.frame[0])
        last = int(target.frame[-1])
        while start + window - 1 <= last:
            rows = _window_rows(target, start, window)
            if rows is None:
                skipped += 1
                start += stride
                continue
            obs = rows[:t_obs_steps]
            pred = rows[t_obs_steps:]
            i0 = obs[-1]
            origin_x = target.x[obs[0]]
            origin_y = target.y[obs[0]]
            feats = np.empty((len(CHANNELS), t_obs_steps, n_vehicles))
            feats[0, :, 0] = target.x[obs] - origin_x
            feats[1, :, 0] = target.y[obs] - origin_y
            feats[2, :, 0] = target.vx[obs]
            feats[3, :, 0] = target.vy[obs]
            neighbours = []
            for other in tracks:
                if other.vehicle_id == target.vehicle_id:
                    continue
                orows = _window_rows(other, start, t_obs_steps)
                if orows is None:
                    continue
                o0 = orows[-1]
                d = float(np.hypot(other.x[o0] - target.x[i0],
                                   other.y[o0] - target.y[i0]))
                neighbours.append((d, other.vehicle_id, other, orows))
            neighbours.sort(key=lambda item: (item[0], item[1]))
            for slot, (_, _, other, orows) in enumerate(
                    neighbours[:n_vehicles - 1], start=1):
                feats[0, :, slot] = other.x[orows] - origin_x
                feats[1, :, slot] = other.y[orows] - origin_y
                feats[2, :, slot] = other.vx[orows]
                feats[3, :, slot] = other.vy[orows]
            for slot in range(1 + len(neighbours[:n_vehicles - 1]), n_vehicles):
                feats[:, :, slot] = feats[:, :, 0]
            future = np.stack([
                target.x[pred] - target.x[i0],
                target.y[pred] - target.y[i0],
            ], axis=1)
            maneuver = label_maneuver(target.lane_id[rows], target.y[rows],
                                      t_obs_steps - 1)
            scenarios.append(Scenario(
                scenario_id=f"v{target.vehicle_id}-f{start}",
                features=feats,
                future=future,
                v0=float(target.vx[i0]),
                fps=float(fps),
                maneuver=maneuver,
            ))
            start += stride
    if skipped:
        log.info("extract_scenarios: skipped %d windows with coverage gaps", skipped)
    return scenarios


def balance(scenarios, seed: int) -> list[Scenario]:
    """Down-sample the majority classes to the size of the smallest one."""
    groups = {m: [] for m in MANEUVERS}
    for i, s in enumerate(scenarios):
        groups[s.maneuver].append(i)
    for m in MANEUVERS:
        if not groups[m]:
            raise BalanceError(f"no scenarios with maneuver '{m}'")
    n_min = min(len(g) for g in groups.values())
    rng = np.random.default_rng(seed)
    keep = []
    for m in MANEUVERS:
        idx = groups[m]
        if len(idx) > n_min:
            chosen = rng.choice(len(idx), size=n_min, replace=False)
            idx = [idx[i] for i in np.sort(chosen)]
        keep.extend(idx)
    return [scenarios[i] for i in sorted(keep)]


def split(scenarios, ratio: float, seed: int) -> DatasetSplit:
    """Deterministic stratified train/test split.

    Per-class quotas use largest-remainder rounding so the overall train
    fraction matches ``ratio`` as closely as an integer count allows.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(scenarios)
    if n < 2:
        raise SplitError(f"need at least 2 scenarios to split, got {n}")
    target_train = min(max(int(round(ratio * n)), 1), n - 1)
    rng = np.random.default_rng(seed)
    groups = defaultdict(list)
    for i, s in enumerate(scenarios):
        groups[s.maneuver].append(i)
    class_order = [m for m in MANEUVERS if groups[m]]
    class_order += sorted(set(groups) - set(MANEUVERS))
    quota = {}
    remainders = []
    assigned = 0
    for m in class_order:
        exact = ratio * len(groups[m])
        quota[m] = int(exact)
        remainders.append((-(exact - quota[m]), m))
        assigned += quota[m]
    remainders.sort()
    for _, m in remainders:
        if assigned >= target_train:
            break
        if quota[m] < len(groups[m]):
            quota[m] += 1
            assigned += 1
    train_idx, test_idx = [], []
    for m in class_order:
        idx = np.asarray(groups[m])
        perm = rng.permutation(idx.size)
        take = quota[m]
        train_idx.extend(idx[perm[:take]])
        test_idx.extend(idx[perm[take:]])
    train_idx = [int(i) for i in rng.permutation(train_idx)]
    test_idx = [int(i) for i in rng.permutation(test_idx)]
    if not train_idx or not test_idx:
        raise SplitError("split produced an empty side; adjust ratio or data")
    return DatasetSplit(
        train=[scenarios[i] for i in train_idx],
        test=[scenarios[i] for i in test_idx],
        seed=seed,
    )


def _synthetic_tracks(rng, fps, maneuver, n_frames, t0_index, t_pred_s,
                      n_vehicles, noise_std, speed_range, accel_range,
                      rate_range):
    """One scene: a target with the requested maneuver plus random cruisers.

    Longitudinal motion is uniformly accelerated; lane changes follow a
    logistic lateral profile of one lane width, centred halfway into the
    prediction window, which keeps the lane id at the last observed step
    unchanged and flips it inside the window. Lane ids come from the
    noise-free lateral position so labels stay exact under sensor noise.
    """
    times = np.arange(n_frames) / fps
    v0 = rng.uniform(*speed_range)
    accel = rng.uniform(*accel_range)
    x0 = rng.uniform(0.0, 200.0)
    lane0 = int(rng.integers(1, 5))
    y0 = (lane0 + 0.5) * LANE_WIDTH
    rate = rng.uniform(*rate_range)
    amplitude = {"keep_lane": 0.0,
                 "lane_change_left": LANE_WIDTH,
                 "lane_change_right": -LANE_WIDTH}[maneuver]
    mid = times[t0_index] + 0.5 * t_pred_s
    x = x0 + v0 * times + 0.5 * accel * times ** 2
    vx = v0 + accel * times
    g = expit(rate * (times - mid))
    y = y0 + amplitude * g
    vy = amplitude * rate * g * (1.0 - g)
    lane = np.floor(y / LANE_WIDTH).astype(np.int64)
    frames = np.arange(n_frames)
    if noise_std > 0.0:
        x = x + rng.normal(0.0, noise_std, n_frames)
        y = y + rng.normal(0.0, noise_std, n_frames)
    tracks = [RawTrack(1, frames, x, y, vx, vy, lane)]
    n_neighbours = int(rng.integers(0, min(8, n_vehicles - 1) + 1))
    for j in range(n_neighbours):
        vn = rng.uniform(*speed_range)
        dx0 = rng.uniform(-80.0, 80.0)
        lane_n = int(rng.integers(1, 5))
        yn0 = (lane_n + 0.5) * LANE_WIDTH
        xn = x0 + dx0 + vn * times
        yn = np.full(n_frames, yn0)
        if noise_std > 0.0:
            xn = xn + rng.normal(0.0, noise_std, n_frames)
            yn = yn + rng.normal(0.0, noise_std, n_frames)
        tracks.append(RawTrack(
            2 + j, frames, xn, yn,
            np.full(n_frames, vn), np.zeros(n_frames),
            np.full(n_frames, lane_n, dtype=np.int64),
        ))
    return tracks


def synthesize(n: int, fps, seed: int, noise_std: float = 0.0,
               t_obs: float = 3.0, t_pred: float = 5.0, n_vehicles: int = 9,
               speed_range=(20.0, 35.0), accel_range=(-2.0, 2.0),
               rate_range=(1.0, 2.5)) -> list[Scenario]:
    """Generate labelled scenarios from a parametric motion family.

    Classes cycle keep/left/right so counts differ by at most one. The
    scenarios go through the same extraction path as recorded data, and
    the constructed maneuver must survive labelling, which pins the label
    conventions to the generator.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if noise_std < 0.0:
        raise ValueError(f"noise_std must be non-negative, got {noise_std}")
    rng = np.random.default_rng(seed)
    t_obs_steps = round(fps * t_obs)
    t_pred_steps = round(fps * t_pred)
    n_frames = t_obs_steps + t_pred_steps
    out = []
    for i in range(n):
        maneuver = MANEUVERS[i % 3]
        tracks = _synthetic_tracks(
            rng, fps, maneuver, n_frames, t_obs_steps - 1,
            t_pred_steps / fps, n_vehicles, noise_std,
            speed_range, accel_range, rate_range)
        scen = extract_scenarios(tracks, fps, t_obs, t_pred, n_vehicles,
                                 target_ids={1})
        if len(scen) != 1 or scen[0].maneuver != maneuver:
            raise RuntimeError(
                f"synthetic scene {i} produced {len(scen)} scenarios "
                f"with labels {[s.maneuver for s in scen]}, wanted {maneuver}"
            )
        out.append(replace(scen[0], scenario_id=f"synth-{i:05d}"))
    return out


def save_archive(path, scenarios, fps):
    """Write scenarios to a JSON archive (features flattened row-major)."""
    fps = float(fps)
    for s in scenarios:
        if s.fps != fps:
            raise ValueError(
                f"scenario {s.scenario_id} has fps {s.fps}, archive wants {fps}"
            )
    doc = {
        "version": ARCHIVE_VERSION,
        "fps": fps,
        "feature_order": "(channel, time, vehicle) row-major",
        "channels": list(CHANNELS),
        "scenarios": [
            {
                "id": s.scenario_id,
                "maneuver": s.maneuver,
                "v0": s.v0,
                "t_obs": s.t_obs,
                "t_pred": s.t_pred,
                "n_vehicles": s.n_vehicles,
                "features": s.features.ravel().tolist(),
                "future": s.future.ravel().tolist(),
            }
            for s in scenarios
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_archive(path):
    """Read a scenario archive; returns (scenarios, fps)."""
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if version != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {version!r}")
    fps = float(doc["fps"])
    scenarios = []
    for item in doc["scenarios"]:
        t_obs = item["t_obs"]
        n_veh = item["n_vehicles"]
        feats = np.asarray(item["features"], dtype=np.float64)
        feats = feats.reshape(len(CHANNELS), t_obs, n_veh)
        future = np.asarray(item["future"], dtype=np.float64)
        future = future.reshape(item["t_pred"], 2)
        scenarios.append(Scenario(
            scenario_id=item["id"], features=feats, future=future,
            v0=float(item["v0"]), fps=fps, maneuver=item["maneuver"],
        ))
    return scenarios, fps
