import json

import numpy as np
import pytest

from tacbot.policy import ExpertController, ExpertProfile, generate_dataset, play_round
from tacbot.sensors import observe
from tacbot.trajio import (
    TrajectoryFormatError,
    iter_dataset_logs,
    read_dataset,
    read_match_log,
    read_trajectory,
    traj_filename,
    world_from_log,
    write_dataset,
    write_match_log,
    write_trajectory,
)
from tacbot.worldmap import builtin_map


@pytest.fixture(scope="module")
def geometry():
    return builtin_map()


@pytest.fixture(scope="module")
def round_result(geometry):
    roster = [ExpertProfile(style="match", seed=i) for i in range(4)]
    controllers = [ExpertController(p) for p in roster]
    return play_round(geometry, controllers, seed=13, record_obs=True)


def test_trajectory_round_trip_is_bit_exact(tmp_path, round_result):
    for traj in round_result.trajectories:
        path = tmp_path / traj_filename(traj)
        write_trajectory(path, traj)
        back = read_trajectory(path)
        assert back.player_id == traj.player_id
        assert back.team == traj.team
        assert back.role == traj.role
        assert back.outcome == traj.outcome
        assert back.round_ticks == traj.round_ticks
        assert (back.kills, back.deaths, back.assists) == \
            (traj.kills, traj.deaths, traj.assists)
        for field in ("visual", "audio", "scalar", "spatial", "keys"):
            assert np.array_equal(getattr(back, field), getattr(traj, field))
            assert getattr(back, field).dtype == np.float32
        assert np.array_equal(back.aim, traj.aim)
        # writing the reread trajectory reproduces identical bytes
        path2 = tmp_path / ("again_" + traj_filename(traj))
        write_trajectory(path2, back)
        assert path.read_bytes() == path2.read_bytes()


def test_corrupt_trajectory_files_raise(tmp_path, round_result):
    traj = round_result.trajectories[0]
    path = tmp_path / "victim.traj"
    write_trajectory(path, traj)
    raw = bytearray(path.read_bytes())

    bad_magic = tmp_path / "magic.traj"
    bad_magic.write_bytes(b"NOTTRAJ!" + bytes(raw[8:]))
    with pytest.raises(TrajectoryFormatError, match="magic"):
        read_trajectory(bad_magic)

    truncated = tmp_path / "short.traj"
    truncated.write_bytes(bytes(raw[: len(raw) // 2]))
    with pytest.raises(TrajectoryFormatError, match="bytes"):
        read_trajectory(truncated)

    tiny = tmp_path / "tiny.traj"
    tiny.write_bytes(b"xy")
    with pytest.raises(TrajectoryFormatError, match="truncated"):
        read_trajectory(tiny)


def test_match_log_round_trip(tmp_path, round_result):
    path = tmp_path / "round.jsonl"
    write_match_log(path, round_result.log_records)
    back = read_match_log(path)
    assert back == json.loads(json.dumps(round_result.log_records))


def test_dataset_directory_round_trip(tmp_path, geometry):
    roster = [ExpertProfile(style="match", seed=i + 20) for i in range(4)]
    dataset = generate_dataset(geometry, roster, n_matches=1,
                               rounds_per_match=2, seed=77)
    out = write_dataset(dataset, tmp_path / "ds")
    assert (out / "manifest.json").exists()
    back = read_dataset(out)
    assert back.manifest["total_timesteps"] == \
        dataset.manifest["total_timesteps"]
    assert len(back.trajectories) == len(dataset.trajectories)
    for ta, tb in zip(dataset.trajectories, back.trajectories):
        assert np.array_equal(ta.visual, tb.visual)
        assert np.array_equal(ta.aim, tb.aim)
    records = list(iter_dataset_logs(out))
    assert records[0]["type"] == "round_start"
    assert sum(1 for r in records if r["type"] == "round_end") == 2


def test_missing_manifest_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nothing")


def test_observations_regenerate_bit_identically_from_log(geometry,
                                                          round_result):
    """Rebuild the world from logged ticks and rerun the sensors: the
    float32 values stored in trajectories come back bit-for-bit."""
    records = round_result.log_records
    round_start = records[0]
    ticks = [r for r in records if r["type"] == "tick"]
    by_player = {t.player_id: t for t in round_result.trajectories}

    checked = 0
    for frame_no in (0, 1, 5, 20):
        if frame_no >= len(ticks) - 1:
            break
        world = world_from_log(geometry, round_start, ticks[frame_no])
        for pid, traj in by_player.items():
            if frame_no >= traj.length:
                continue
            if not world.players[pid].alive:
                continue
            regenerated = observe(world, pid)
            assert np.array_equal(
                regenerated.visual.astype(np.float32), traj.visual[frame_no])
            assert np.array_equal(
                regenerated.audio.reshape(-1).astype(np.float32),
                traj.audio[frame_no])
            assert np.array_equal(
                regenerated.scalar.astype(np.float32), traj.scalar[frame_no])
            assert np.array_equal(
                regenerated.spatial.astype(np.float32), traj.spatial[frame_no])
            checked += 1
    assert checked >= 4


def test_world_from_log_validates_record_types(geometry, round_result):
    records = round_result.log_records
    with pytest.raises(ValueError):
        world_from_log(geometry, records[1], records[1])
    with pytest.raises(ValueError):
        world_from_log(geometry, records[0], records[0])
