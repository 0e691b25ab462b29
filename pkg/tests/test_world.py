import copy
import math

import numpy as np
import pytest

from tacbot.actions import Action, KeyAction, angles_to_aim_index
from tacbot.geometry import Vec3
from tacbot.world import (
    MAX_ROUND_TICKS,
    BombPhase,
    EffectKind,
    EventKind,
    Outcome,
    SimulationError,
    Team,
    check_round_end,
    new_round,
    step,
)
from tacbot.worldmap import builtin_map, load_map

OPEN_ARENA = """
name: arena
bounds: 0 0 60 60
attacker_spawn: 10 30
defender_spawn: 50 30
bombsite: 25 25 35 35
wall: 0 0 60 0
wall: 60 0 60 60
wall: 60 60 0 60
wall: 0 60 0 0
waypoint: a 10 30
waypoint: m 30 30
waypoint: d 50 30
edge: a m
edge: m d
"""

NOOP = [Action() for _ in range(4)]


@pytest.fixture
def arena():
    return load_map(OPEN_ARENA)


@pytest.fixture
def world(arena):
    return new_round(arena, seed=3)


def keys(**kw):
    return Action(keys=KeyAction(**kw))


def test_noop_tick_only_advances_clock(world):
    before = [(p.position.x, p.position.y) for p in world.players]
    _, events = step(world, NOOP)
    assert events == []
    assert [(p.position.x, p.position.y) for p in world.players] == before
    assert world.round_time_left == pytest.approx(120.0 - 1.0 / 16.0)
    assert world.tick == 1


def test_running_moves_at_6_mps_and_emits_footsteps(world):
    player = world.players[0]
    start = player.position
    actions = [keys(w=True)] + NOOP[1:]
    _, events = step(world, actions)
    moved = math.hypot(player.position.x - start.x, player.position.y - start.y)
    assert moved == pytest.approx(6.0 / 16.0)
    assert any(e.kind == EventKind.FOOTSTEP and e.emitter_id == 0
               for e in events)


def test_yaw_wraps_and_pitch_clamps(world):
    player = world.players[0]
    player.yaw = 350.0
    player.pitch = 85.0
    aim = angles_to_aim_index(10.0, 20.0)
    step(world, [Action(aim)] + NOOP[1:])
    assert player.yaw == pytest.approx(10.0)
    assert player.pitch == 90.0


def test_jump_parabola_reaches_apex_and_lands(world):
    player = world.players[0]
    step(world, [keys(space=True)] + NOOP[1:])
    heights = [player.position.z]
    for _ in range(9):
        step(world, NOOP)
        heights.append(player.position.z)
    assert max(heights) == pytest.approx(0.9, abs=0.01)
    assert player.position.z == 0.0
    assert player.jump_elapsed is None


def test_walls_block_movement(arena):
    world = new_round(arena, seed=1)
    player = world.players[0]
    player.position = Vec3(0.5, 30.0, 0.0)
    player.yaw = 180.0   # walk west into the boundary
    for _ in range(16):
        step(world, [keys(w=True)] + NOOP[1:])
    assert player.position.x >= 0.4


def test_plant_takes_64_held_ticks(world):
    player = world.players[0]
    assert player.has_bomb
    player.position = Vec3(30.0, 30.0, 0.0)
    for i in range(63):
        step(world, [keys(key4=True)] + NOOP[1:])
        assert world.bomb.phase == BombPhase.CARRIED, i
        assert player.is_planting
    step(world, [keys(key4=True)] + NOOP[1:])
    assert world.bomb.phase == BombPhase.PLANTED
    assert world.bomb.planter_id == 0
    assert not player.has_bomb
    assert world.bomb.fuse_remaining <= 45.0


def test_plant_progress_resets_on_release(world):
    player = world.players[0]
    player.position = Vec3(30.0, 30.0, 0.0)
    for _ in range(63):
        step(world, [keys(key4=True)] + NOOP[1:])
    assert player.plant_progress == pytest.approx(63 / 16.0)
    step(world, NOOP)    # released
    assert player.plant_progress == 0.0
    assert world.bomb.phase == BombPhase.CARRIED


def test_plant_requires_standing_in_site(world):
    player = world.players[0]
    player.position = Vec3(5.0, 5.0, 0.0)   # outside bombsite
    for _ in range(70):
        step(world, [keys(key4=True)] + NOOP[1:])
    assert world.bomb.phase == BombPhase.CARRIED
    assert player.plant_progress == 0.0


def test_defuse_takes_112_held_ticks(world):
    world.bomb.phase = BombPhase.PLANTED
    world.bomb.position = Vec3(30.0, 30.0, 0.0)
    world.bomb.planted_tick = 0
    defender = world.players[2]
    defender.position = Vec3(30.5, 30.0, 0.0)
    acts = NOOP[:2] + [keys(key4=True)] + NOOP[3:]
    for i in range(111):
        step(world, acts)
        assert world.bomb.phase == BombPhase.PLANTED, i
        assert defender.is_defusing
    step(world, acts)
    assert world.bomb.phase == BombPhase.DEFUSED
    assert check_round_end(world) == Outcome.DEFENDERS_WIN


def test_empty_magazine_cannot_fire(world):
    shooter = world.players[0]
    shooter.magazine = 0
    _, events = step(world, [keys(left_click=True)] + NOOP[1:])
    assert not any(e.kind == EventKind.SHOT for e in events)
    assert shooter.magazine == 0


def test_shot_hits_enemy_dead_ahead(arena):
    world = new_round(arena, seed=1)
    shooter, victim = world.players[0], world.players[2]
    shooter.position = Vec3(10.0, 30.0, 0.0)
    shooter.yaw = 0.0
    shooter.pitch = 0.0
    victim.position = Vec3(20.0, 30.0, 0.0)
    world.players[1].position = Vec3(10.0, 50.0, 0.0)   # clear the lane
    world.players[3].position = Vec3(50.0, 50.0, 0.0)
    _, events = step(world, [keys(left_click=True)] + NOOP[1:])
    assert any(e.kind == EventKind.SHOT and e.emitter_id == 0 for e in events)
    assert victim.health == 70.0
    assert victim.is_being_shot
    assert shooter.magazine == 11


def test_fire_rate_is_capped_at_3_ticks(arena):
    world = new_round(arena, seed=1)
    shooter = world.players[0]
    fire = [keys(left_click=True)] + NOOP[1:]
    shots = 0
    for _ in range(16):
        _, events = step(world, fire)
        shots += sum(1 for e in events if e.kind == EventKind.SHOT)
    assert shots == 6   # ceil(16/3)
    assert shooter.magazine == 12 - shots


def test_shot_events_match_magazine_decrements(arena):
    world = new_round(arena, seed=9)
    rng = np.random.default_rng(0)
    total_shots = 0
    start_ammo = [(p.magazine, p.reserve) for p in world.players]
    for _ in range(200):
        if check_round_end(world) != Outcome.ONGOING:
            break
        actions = [Action(int(rng.integers(165)),
                          KeyAction.from_bits(int(rng.integers(2048))))
                   for _ in range(4)]
        _, events = step(world, actions)
        total_shots += sum(1 for e in events if e.kind == EventKind.SHOT)
    spent = sum(
        (sm + sr) - (p.magazine + p.reserve)
        for (sm, sr), p in zip(start_ammo, world.players))
    assert spent == total_shots


def test_reload_transfers_min_of_deficit_and_reserve(world):
    player = world.players[0]
    player.magazine = 3
    player.reserve = 5
    step(world, [keys(r=True)] + NOOP[1:])
    assert (player.magazine, player.reserve) == (8, 0)
    player.magazine = 2
    player.reserve = 48
    step(world, [keys(r=True)] + NOOP[1:])
    assert (player.magazine, player.reserve) == (12, 38)


def test_bomb_drop_and_pickup(world):
    carrier = world.players[0]
    _, events = step(world, [keys(g=True)] + NOOP[1:])
    assert world.bomb.phase == BombPhase.DROPPED
    assert not carrier.has_bomb
    assert carrier.is_dropping
    assert any(e.kind == EventKind.BOMB_DROP for e in events)
    # dropper steps clear; teammate stands on it and picks it up once the
    # half-second pickup lock expires
    carrier.position = Vec3(carrier.position.x, carrier.position.y + 3.0, 0.0)
    mate = world.players[1]
    mate.position = Vec3(world.bomb.position.x + 0.5, world.bomb.position.y, 0.0)
    for _ in range(7):
        step(world, NOOP)
        assert world.bomb.phase == BombPhase.DROPPED
    step(world, NOOP)
    assert world.bomb.phase == BombPhase.CARRIED
    assert mate.has_bomb


def test_defenders_cannot_pick_up_bomb(world):
    step(world, [keys(g=True)] + NOOP[1:])
    defender = world.players[2]
    defender.position = world.bomb.position
    world.players[0].position = Vec3(55.0, 5.0, 0.0)
    world.players[1].position = Vec3(55.0, 55.0, 0.0)
    for _ in range(12):   # well past the pickup lock
        step(world, NOOP)
    assert world.bomb.phase == BombPhase.DROPPED
    assert not defender.has_bomb


def test_death_drops_bomb(world):
    carrier = world.players[0]
    carrier.health = 10.0
    shooter = world.players[2]
    shooter.position = Vec3(40.0, 30.0, 0.0)
    shooter.yaw = 180.0
    carrier.position = Vec3(30.0, 30.0, 0.0)
    acts = NOOP[:2] + [keys(left_click=True)] + NOOP[3:]
    _, events = step(world, acts)
    assert not carrier.alive
    assert world.bomb.phase == BombPhase.DROPPED
    assert shooter.kills == 1
    assert carrier.deaths == 1
    assert any(e.kind == EventKind.BOMB_DROP for e in events)


def test_mutual_kills_in_same_tick(arena):
    world = new_round(arena, seed=1)
    a, d = world.players[0], world.players[2]
    a.position, d.position = Vec3(20.0, 30.0, 0.0), Vec3(25.0, 30.0, 0.0)
    a.yaw, d.yaw = 0.0, 180.0
    a.pitch = d.pitch = 0.0
    a.health = d.health = 30.0
    world.players[1].position = Vec3(10.0, 50.0, 0.0)
    world.players[3].position = Vec3(50.0, 50.0, 0.0)
    acts = [keys(left_click=True), Action(), keys(left_click=True), Action()]
    step(world, acts)
    assert not a.alive and not d.alive
    assert a.kills == 1 and d.kills == 1


def test_bomb_beep_once_per_second(world):
    world.bomb.phase = BombPhase.PLANTED
    world.bomb.position = Vec3(30.0, 30.0, 0.0)
    world.bomb.planted_tick = world.tick
    beeps = 0
    for _ in range(32):
        _, events = step(world, NOOP)
        beeps += sum(1 for e in events if e.kind == EventKind.BOMB_BEEP)
    assert beeps == 2


def test_fuse_expiry_explodes_and_attackers_win(world):
    world.bomb.phase = BombPhase.PLANTED
    world.bomb.position = Vec3(30.0, 30.0, 0.0)
    world.bomb.planted_tick = world.tick
    for _ in range(45 * 16):
        if world.bomb.phase == BombPhase.EXPLODED:
            break
        step(world, NOOP)
    assert world.bomb.phase == BombPhase.EXPLODED
    assert check_round_end(world) == Outcome.ATTACKERS_WIN


def test_timer_expiry_without_plant_is_defender_win(world):
    world.round_time_left = 3.0 / 16.0
    for _ in range(3):
        step(world, NOOP)
    assert world.round_time_left == 0.0
    assert check_round_end(world) == Outcome.DEFENDERS_WIN


def test_all_attackers_dead_post_plant_is_ongoing(world):
    world.bomb.phase = BombPhase.PLANTED
    world.bomb.position = Vec3(30.0, 30.0, 0.0)
    world.bomb.planted_tick = 0
    for pid in (0, 1):
        world.players[pid].alive = False
        world.players[pid].health = 0.0
    assert check_round_end(world) == Outcome.ONGOING


def test_all_defenders_dead_is_attacker_win(world):
    for pid in (2, 3):
        world.players[pid].alive = False
    assert check_round_end(world) == Outcome.ATTACKERS_WIN


def test_stepping_terminal_world_raises(world):
    for pid in (2, 3):
        world.players[pid].alive = False
    with pytest.raises(SimulationError):
        step(world, NOOP)


def test_smoke_ability_spawns_effect_and_cooldown(world):
    controller = world.players[0]
    assert controller.role.value == "controller"
    _, events = step(world, [keys(q=True)] + NOOP[1:])
    smokes = [e for e in world.effects if e.kind == EffectKind.SMOKE]
    assert len(smokes) == 1
    assert smokes[0].radius == 4.0
    assert controller.main_cooldown == pytest.approx(60.0 - 1 / 16.0)
    assert any(e.kind == EventKind.GRENADE_EXPLOSION for e in events)
    # still on cooldown: no second cast
    step(world, [keys(q=True)] + NOOP[1:])
    assert len([e for e in world.effects
                if e.kind == EffectKind.SMOKE]) == 1


def test_fire_ability_damages_players_inside(world):
    controller = world.players[0]
    victim = world.players[2]
    victim.position = Vec3(controller.position.x + 3.0,
                           controller.position.y, 0.0)
    controller.yaw = 0.0
    step(world, [keys(e=True)] + NOOP[1:])
    fires = [e for e in world.effects if e.kind == EffectKind.FIRE]
    assert len(fires) == 1
    h0 = victim.health
    step(world, NOOP)
    if math.hypot(victim.position.x - fires[0].center.x,
                  victim.position.y - fires[0].center.y) <= fires[0].radius:
        assert victim.health == pytest.approx(h0 - 10.0 / 16.0)


def test_ability_block_prevents_enemy_casts(world):
    initiator = world.players[3]   # defender initiator blocks attackers
    attacker = world.players[0]
    world.effects.append(
        __import__("tacbot.world", fromlist=["AreaEffect"]).AreaEffect(
            kind=EffectKind.ABILITY_BLOCK,
            center=attacker.position, radius=4.0, remaining=6.0,
            owner_team=Team.DEFENDER, owner_id=initiator.id))
    step(world, [keys(q=True)] + NOOP[1:])
    assert not any(e.kind == EffectKind.SMOKE for e in world.effects)
    assert attacker.main_cooldown == 0.0


def test_effects_expire(world):
    step(world, [keys(q=True)] + NOOP[1:])
    for _ in range(int(10.0 * 16)):
        step(world, NOOP)
    assert world.effects == []


def test_health_stays_in_bounds_under_fuzz(arena):
    rng = np.random.default_rng(5)
    world = new_round(arena, seed=12)
    for _ in range(400):
        if check_round_end(world) != Outcome.ONGOING:
            break
        actions = [Action(int(rng.integers(165)),
                          KeyAction.from_bits(int(rng.integers(2048))))
                   for _ in range(4)]
        step(world, actions)
        for p in world.players:
            assert 0.0 <= p.health <= 100.0
            assert 0 <= p.magazine <= 12
            assert 0 <= p.reserve <= 48
            assert -90.0 <= p.pitch <= 90.0
            assert 0.0 <= p.yaw < 360.0
        assert 0.0 <= world.round_time_left <= 120.0
        assert 0.0 <= world.bomb.fuse_remaining <= 45.0


def test_deterministic_traces_are_bit_identical():
    geometry = builtin_map()

    def trace(seed):
        rng = np.random.default_rng(seed)
        world = new_round(geometry, seed=seed)
        snapshots = []
        for _ in range(300):
            if check_round_end(world) != Outcome.ONGOING:
                break
            actions = [Action(int(rng.integers(165)),
                              KeyAction.from_bits(int(rng.integers(2048))))
                       for _ in range(4)]
            step(world, actions)
            snapshots.append(tuple(
                (p.position.x, p.position.y, p.position.z, p.yaw, p.pitch,
                 p.health, p.magazine, p.reserve, p.alive)
                for p in world.players))
        return snapshots

    assert trace(77) == trace(77)


def test_round_terminates_within_hard_cap(arena):
    world = new_round(arena, seed=2)
    ticks = 0
    while check_round_end(world) == Outcome.ONGOING:
        step(world, NOOP)
        ticks += 1
        assert ticks <= MAX_ROUND_TICKS
    assert ticks == 120 * 16   # idle round: timer runs out
