"""On-disk formats: binary trajectory files, JSONL match logs, dataset
directories, and world-state reconstruction from logged ticks.

Trajectory file (little endian, version 1)::

    magic   8s   b"TACTRAJ1"
    u16     version (1), tick_rate (16)
    u16 x7  sensor dims 15 15 10 8 6 27 11
    u8  x4  player_id, team (0=attacker), role (0=controller), outcome
    u32 x3  match_id, round_id, round_ticks
    u16 x4  kills, deaths, assists, reserved
    u32     frame_count
    frames: frame_count x (2336 float32 obs | u16 aim | u16 key bits)

Observations are stored flat in the documented order (visual C-order,
audio, scalar, spatial); key bits use bit 0 = W ... bit 10 = LeftClick.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .actions import N_KEYS
from .geometry import Vec3
from .policy import Dataset, Trajectory
from .sensors import (
    AUDIO_SECTORS,
    GRID,
    N_AUDIO,
    N_LAYERS,
    N_SCALAR,
    N_SOUND_TYPES,
    N_SPATIAL,
    OBSERVATION_SIZE,
)
from .world import (
    AreaEffect,
    BombPhase,
    BombState,
    EffectKind,
    EventKind,
    GameEvent,
    PlayerState,
    Role,
    Team,
    WorldState,
)
from .worldmap import MapGeometry

MAGIC = b"TACTRAJ1"
FORMAT_VERSION = 1
TICK_RATE = 16
_DIMS = (GRID, GRID, N_LAYERS, AUDIO_SECTORS, N_SOUND_TYPES,
         N_SCALAR, N_SPATIAL)
_HEADER = struct.Struct("<8sHH7H4B3I4HI")
_TEAMS = ("attacker", "defender")
_ROLES = ("controller", "initiator")
_OUTCOMES = ("ongoing", "attackers_win", "defenders_win")


class TrajectoryFormatError(ValueError):
    """Unreadable or inconsistent trajectory file."""


def write_trajectory(path, traj: Trajectory) -> None:
    frames = traj.length
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, TICK_RATE, *_DIMS,
        traj.player_id, _TEAMS.index(traj.team), _ROLES.index(traj.role),
        _OUTCOMES.index(traj.outcome),
        traj.match_id, traj.round_id, traj.round_ticks,
        traj.kills, traj.deaths, traj.assists, 0,
        frames)
    obs = np.concatenate([
        traj.visual.reshape(frames, -1),
        traj.audio.reshape(frames, -1),
        traj.scalar, traj.spatial], axis=1).astype(np.float32)
    keybits = np.zeros(frames, dtype=np.uint16)
    for i in range(N_KEYS):
        keybits |= (traj.keys[:, i] > 0.5).astype(np.uint16) << i
    body = np.zeros(
        frames,
        dtype=np.dtype([("obs", "<f4", (OBSERVATION_SIZE,)),
                        ("aim", "<u2"), ("keys", "<u2")]))
    body["obs"] = obs
    body["aim"] = traj.aim.astype(np.uint16)
    body["keys"] = keybits
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_trajectory(path) -> Trajectory:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TrajectoryFormatError(f"{path}: truncated header")
    fields = _HEADER.unpack_from(raw)
    magic, version, tick_rate = fields[0], fields[1], fields[2]
    dims = fields[3:10]
    if magic != MAGIC:
        raise TrajectoryFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TrajectoryFormatError(f"{path}: unsupported version {version}")
    if tick_rate != TICK_RATE or tuple(dims) != _DIMS:
        raise TrajectoryFormatError(
            f"{path}: header dims {dims} / rate {tick_rate} do not match")
    (player_id, team_i, role_i, outcome_i, match_id, round_id, round_ticks,
     kills, deaths, assists, _pad, frames) = fields[10:]
    body_dtype = np.dtype([("obs", "<f4", (OBSERVATION_SIZE,)),
                           ("aim", "<u2"), ("keys", "<u2")])
    expected = _HEADER.size + frames * body_dtype.itemsize
    if len(raw) != expected:
        raise TrajectoryFormatError(
            f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype=body_dtype, offset=_HEADER.size,
                         count=frames)
    obs = body["obs"]
    nv = GRID * GRID * N_LAYERS
    keys = np.zeros((frames, N_KEYS), dtype=np.float32)
    for i in range(N_KEYS):
        keys[:, i] = (body["keys"] >> i) & 1
    return Trajectory(
        player_id=int(player_id),
        team=_TEAMS[team_i],
        role=_ROLES[role_i],
        match_id=int(match_id),
        round_id=int(round_id),
        visual=obs[:, :nv].reshape(frames, GRID, GRID, N_LAYERS).copy(),
        audio=obs[:, nv:nv + N_AUDIO].copy(),
        scalar=obs[:, nv + N_AUDIO:nv + N_AUDIO + N_SCALAR].copy(),
        spatial=obs[:, nv + N_AUDIO + N_SCALAR:].copy(),
        aim=body["aim"].astype(np.int64),
        keys=keys,
        kills=int(kills), deaths=int(deaths), assists=int(assists),
        outcome=_OUTCOMES[outcome_i],
        round_ticks=int(round_ticks),
    )


# ---------------- match logs ----------------

def write_match_log(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def read_match_log(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# ---------------- dataset directories ----------------

def traj_filename(traj: Trajectory) -> str:
    return (f"m{traj.match_id:04d}_r{traj.round_id:03d}"
            f"_p{traj.player_id}.traj")


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Lay a dataset out on disk: manifest.json, logs/, trajectories/."""
    out = Path(out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    manifest = dict(dataset.manifest)
    entries = []
    for traj, entry in zip(dataset.trajectories, manifest["trajectories"]):
        name = traj_filename(traj)
        write_trajectory(out / "trajectories" / name, traj)
        entries.append({**entry, "file": f"trajectories/{name}"})
    manifest["trajectories"] = entries
    for i, records in enumerate(dataset.match_logs):
        write_match_log(out / "logs" / f"match_{i:04d}.jsonl", records)
    manifest["logs"] = [f"logs/match_{i:04d}.jsonl"
                        for i in range(len(dataset.match_logs))]
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def read_dataset(path, load_logs: bool = False) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    trajectories = [read_trajectory(root / entry["file"])
                    for entry in manifest["trajectories"]]
    logs = []
    if load_logs:
        logs = [read_match_log(root / rel) for rel in manifest.get("logs", [])]
    return Dataset(trajectories=trajectories, manifest=manifest,
                   match_logs=logs)


def iter_dataset_logs(path):
    """Yield every record of every match log under a dataset directory."""
    root = Path(path)
    with open(root / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for rel in manifest.get("logs", []):
        yield from read_match_log(root / rel)


# ---------------- replay ----------------

def world_from_log(geometry: MapGeometry, round_start: dict,
                   tick_record: dict) -> WorldState:
    """Rebuild the WorldState snapshot a tick record was taken from.

    Observations computed on the result are bit-identical to the ones
    captured live (the log stores every field the sensors read).
    """
    if round_start.get("type") != "round_start":
        raise ValueError("need the round_start record")
    if tick_record.get("type") != "tick":
        raise ValueError("need a tick record")
    attackers = set(round_start["attackers"])
    players = []
    for entry in tick_record["players"]:
        pid = entry["id"]
        players.append(PlayerState(
            id=pid,
            team=Team.ATTACKER if pid in attackers else Team.DEFENDER,
            role=Role(round_start["roles"][str(pid)]),
            position=Vec3(entry["x"], entry["y"], entry["z"]),
            yaw=entry["yaw"], pitch=entry["pitch"],
            health=entry["health"],
            magazine=entry["mag"], reserve=entry["res"],
            main_cooldown=entry["cd_q"], secondary_cooldown=entry["cd_e"],
            is_jumping=entry["jumping"], is_falling=entry["falling"],
            is_crouching=entry["crouch"],
            is_shooting=entry["shooting"], is_being_shot=entry["being_shot"],
            has_bomb=entry["has_bomb"], is_planting=entry["planting"],
            is_defusing=entry["defusing"], is_dropping=entry["dropping"],
            plant_progress=entry["plant_p"], defuse_progress=entry["defuse_p"],
            alive=entry["alive"],
            jump_elapsed=entry["jump"],
        ))
    b = tick_record["bomb"]
    bomb = BombState(
        phase=BombPhase(b["phase"]),
        position=Vec3(b["x"], b["y"], b["z"]),
        fuse_remaining=b["fuse"],
        carrier_id=b["carrier"],
        planted_tick=b["planted_tick"],
        planter_id=b["planter"],
        pickup_locked_until=b.get("lock", 0),
    )
    effects = [AreaEffect(
        kind=EffectKind(e["kind"]),
        center=Vec3(e["x"], e["y"], e["z"]),
        radius=e["r"], remaining=e["left"],
        owner_team=Team(e["team"]), owner_id=e["owner"],
    ) for e in tick_record["effects"]]
    events = [GameEvent(
        kind=EventKind(ev["kind"]),
        source_position=Vec3(ev["x"], ev["y"], ev["z"]),
        emitter_id=ev["emitter"], tick=ev["tick"],
    ) for ev in tick_record["events"]]
    return WorldState(
        map=geometry, players=players, bomb=bomb, effects=effects,
        tick=tick_record["tick"], round_time_left=tick_record["time_left"],
        events_this_tick=events, rng_seed=round_start.get("seed", 0))
