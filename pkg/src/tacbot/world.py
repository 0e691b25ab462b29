"""Deterministic 16 Hz 2v2 bomb plant/defuse simulator.

2.5D: walls are extruded 2D segments over a flat floor (z=0) under a flat
ceiling (z=3 m). Players are vertical cylinders. One round of
``step(world, actions)`` applies the four players' discrete actions,
advances all clocks by one tick (1/16 s), resolves shots and damage, and
emits the tick's audible events.

Within a tick the phases run in a fixed order so that identical inputs
give bit-identical traces: rotation/movement for all players (id order),
then reload/ability/bomb keys, then shooting (players alive at tick start
all fire before damage lands, so mutual kills are possible), then damage
and deaths, then bomb fuse/pickup, then effect and clock decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .actions import Action
from .geometry import (
    MAX_RAY_DIST,
    HitKind,
    RayScene,
    Vec3,
    direction_from_angles,
    point_segment_distance,
    raycast,
)
from .worldmap import PLAYER_RADIUS, MapGeometry

TICK_RATE = 16
TICK_SECONDS = 1.0 / TICK_RATE

RUN_SPEED = 6.0
CROUCH_SPEED = 2.5
JUMP_APEX = 0.9
JUMP_TIME = 0.6
EYE_STANDING = 1.6
EYE_CROUCHED = 1.0
HEIGHT_STANDING = 1.8
HEIGHT_CROUCHED = 1.2

MAGAZINE_SIZE = 12
RESERVE_MAX = 48
SHOT_DAMAGE = 30.0
SHOT_INTERVAL_TICKS = 3      # 16/3 = 5.33 shots/s, under the 6/s cap

ROUND_TIME = 120.0
FUSE_TIME = 45.0
PLANT_TIME = 4.0
DEFUSE_TIME = 7.0
DEFUSE_RANGE = 1.5
BOMB_PICKUP_RADIUS = 1.0
BOMB_PROP_RADIUS = 0.2

ABILITY_COOLDOWN = 60.0
THROW_RANGE = 20.0
BOMB_PICKUP_LOCK_TICKS = 8    # half a second
MAX_ROUND_TICKS = int(ROUND_TIME * TICK_RATE) + int(FUSE_TIME * TICK_RATE)


class Team(Enum):
    ATTACKER = "attacker"
    DEFENDER = "defender"


class Role(Enum):
    CONTROLLER = "controller"
    INITIATOR = "initiator"


class BombPhase(Enum):
    CARRIED = "carried"
    DROPPED = "dropped"
    PLANTED = "planted"
    DEFUSED = "defused"
    EXPLODED = "exploded"


class EventKind(Enum):
    FOOTSTEP = "footstep"
    JUMP = "jump"
    SHOT = "shot"
    BOMB_BEEP = "bomb_beep"
    GRENADE_EXPLOSION = "grenade_explosion"
    BOMB_DROP = "bomb_drop"


class EffectKind(Enum):
    SMOKE = "smoke"
    FIRE = "fire"
    FLASH = "flash"
    ABILITY_BLOCK = "ability_block"


class Outcome(Enum):
    ONGOING = "ongoing"
    ATTACKERS_WIN = "attackers_win"
    DEFENDERS_WIN = "defenders_win"


# (kind, radius m, duration s, center z) per role and key.
ABILITY_TABLE = {
    (Role.CONTROLLER, "q"): (EffectKind.SMOKE, 4.0, 10.0, 1.5),
    (Role.CONTROLLER, "e"): (EffectKind.FIRE, 3.0, 6.0, 0.0),
    (Role.INITIATOR, "q"): (EffectKind.ABILITY_BLOCK, 4.0, 6.0, 1.5),
    (Role.INITIATOR, "e"): (EffectKind.FLASH, 5.0, 2.0, 1.5),
}
FIRE_DPS = 10.0


class SimulationError(RuntimeError):
    """Contract violation, e.g. stepping a terminal world."""


@dataclass
class GameEvent:
    kind: EventKind
    source_position: Vec3
    emitter_id: int | None
    tick: int


@dataclass
class AreaEffect:
    kind: EffectKind
    center: Vec3
    radius: float
    remaining: float
    owner_team: Team
    owner_id: int


@dataclass
class PlayerState:
    id: int
    team: Team
    role: Role
    position: Vec3
    yaw: float = 0.0
    pitch: float = 0.0
    health: float = 100.0
    magazine: int = MAGAZINE_SIZE
    reserve: int = RESERVE_MAX
    main_cooldown: float = 0.0
    secondary_cooldown: float = 0.0
    is_jumping: bool = False
    is_falling: bool = False
    is_crouching: bool = False
    is_shooting: bool = False
    is_being_shot: bool = False
    has_bomb: bool = False
    is_planting: bool = False
    is_defusing: bool = False
    is_dropping: bool = False
    plant_progress: float = 0.0
    defuse_progress: float = 0.0
    alive: bool = True
    # bookkeeping (not part of the observable Appendix state)
    jump_elapsed: float | None = None
    ticks_since_shot: int = SHOT_INTERVAL_TICKS
    kills: int = 0
    deaths: int = 0
    assists: int = 0

    @property
    def height(self) -> float:
        return HEIGHT_CROUCHED if self.is_crouching else HEIGHT_STANDING

    @property
    def eye_height(self) -> float:
        return EYE_CROUCHED if self.is_crouching else EYE_STANDING

    def eye_position(self) -> np.ndarray:
        return np.array(
            [self.position.x, self.position.y, self.position.z + self.eye_height])

    def facing(self) -> np.ndarray:
        return direction_from_angles(self.yaw, self.pitch)


@dataclass
class BombState:
    phase: BombPhase = BombPhase.CARRIED
    position: Vec3 = Vec3(0.0, 0.0, 0.0)
    fuse_remaining: float = FUSE_TIME   # held at full until planted
    carrier_id: int | None = None
    planted_tick: int | None = None
    planter_id: int | None = None
    defuser_id: int | None = None
    # dropped bombs stay on the ground briefly so a drop is not undone
    # by the same-tick pickup sweep
    pickup_locked_until: int = 0


@dataclass
class WorldState:
    map: MapGeometry
    players: list[PlayerState]
    bomb: BombState
    effects: list[AreaEffect] = field(default_factory=list)
    tick: int = 0
    round_time_left: float = ROUND_TIME
    events_this_tick: list[GameEvent] = field(default_factory=list)
    rng_seed: int = 0
    # damage credit for assists: victim id -> set of enemy ids that hurt them
    damage_credit: dict[int, set[int]] = field(default_factory=dict)

    def teammates(self, player_id: int) -> list[PlayerState]:
        me = self.players[player_id]
        return [p for p in self.players
                if p.id != player_id and p.team == me.team]

    def enemies(self, player_id: int) -> list[PlayerState]:
        me = self.players[player_id]
        return [p for p in self.players if p.team != me.team]

    def alive_ids(self, team: Team | None = None) -> list[int]:
        return [p.id for p in self.players
                if p.alive and (team is None or p.team == team)]


def new_round(
    geometry: MapGeometry,
    attacker_ids: tuple[int, int] = (0, 1),
    seed: int = 0,
) -> WorldState:
    """Fresh round: four players at their spawns, bomb carried by the
    first attacker, both teams facing each other's spawn."""
    attacker_ids = tuple(attacker_ids)
    if sorted(attacker_ids) not in ([0, 1], [2, 3]):
        raise SimulationError(
            f"attacker_ids must be a team pair (0,1) or (2,3), got {attacker_ids}")
    players = []
    slots = {Team.ATTACKER: 0, Team.DEFENDER: 0}
    for pid in range(4):
        team = Team.ATTACKER if pid in attacker_ids else Team.DEFENDER
        role = Role.CONTROLLER if pid % 2 == 0 else Role.INITIATOR
        spawn = (geometry.attacker_spawn if team == Team.ATTACKER
                 else geometry.defender_spawn)
        other = (geometry.defender_spawn if team == Team.ATTACKER
                 else geometry.attacker_spawn)
        offset = -1.2 if slots[team] == 0 else 1.2
        slots[team] += 1
        pos = Vec3(spawn.x + offset, spawn.y, 0.0)
        yaw = math.degrees(math.atan2(-(other.y - pos.y), other.x - pos.x)) % 360.0
        players.append(PlayerState(
            id=pid, team=team, role=role, position=pos, yaw=yaw))
    carrier = attacker_ids[0]
    players[carrier].has_bomb = True
    bomb = BombState(phase=BombPhase.CARRIED,
                     position=players[carrier].position, carrier_id=carrier)
    return WorldState(map=geometry, players=players, bomb=bomb, rng_seed=seed)


def build_scene(world: WorldState, exclude_player: int | None = None) -> RayScene:
    """RayScene for sensing: walls/floor/ceiling/bombsite plus dynamic
    occluders (alive player cylinders, dropped/planted bomb, smoke and
    fire spheres)."""
    geometry = world.map
    cylinders = []
    cyl_ids = []
    for p in world.players:
        if not p.alive or p.id == exclude_player:
            continue
        cylinders.append((p.position.x, p.position.y,
                          p.position.z, p.position.z + p.height, PLAYER_RADIUS))
        cyl_ids.append(p.id)
    spheres = []
    sph_kinds = []
    sph_ids = []
    if world.bomb.phase == BombPhase.DROPPED:
        b = world.bomb.position
        spheres.append((b.x, b.y, b.z + BOMB_PROP_RADIUS, BOMB_PROP_RADIUS))
        sph_kinds.append(int(HitKind.BOMB_DROPPED))
        sph_ids.append(-1)
    elif world.bomb.phase == BombPhase.PLANTED:
        b = world.bomb.position
        spheres.append((b.x, b.y, b.z + BOMB_PROP_RADIUS, BOMB_PROP_RADIUS))
        sph_kinds.append(int(HitKind.BOMB_PLANTED))
        sph_ids.append(-1)
    for i, eff in enumerate(world.effects):
        if eff.kind == EffectKind.SMOKE:
            kind = int(HitKind.SMOKE)
        elif eff.kind == EffectKind.FIRE:
            kind = int(HitKind.FIRE)
        else:
            continue    # flash/block volumes do not occlude rays
        spheres.append((eff.center.x, eff.center.y, eff.center.z, eff.radius))
        sph_kinds.append(kind)
        sph_ids.append(i)
    return RayScene(
        segments=geometry.segments_array,
        bombsite=np.array(geometry.bombsite, dtype=np.float64),
        cylinders=np.array(cylinders, dtype=np.float64).reshape(-1, 5),
        cylinder_ids=np.array(cyl_ids, dtype=np.int64),
        spheres=np.array(spheres, dtype=np.float64).reshape(-1, 4),
        sphere_kinds=np.array(sph_kinds, dtype=np.int64),
        sphere_ids=np.array(sph_ids, dtype=np.int64),
    )


def _bullet_scene(world: WorldState, shooter_id: int) -> RayScene:
    """Bullets are stopped by walls/floor/ceiling and players only."""
    cylinders = []
    cyl_ids = []
    for p in world.players:
        if not p.alive or p.id == shooter_id:
            continue
        cylinders.append((p.position.x, p.position.y,
                          p.position.z, p.position.z + p.height, PLAYER_RADIUS))
        cyl_ids.append(p.id)
    return RayScene(
        segments=world.map.segments_array,
        bombsite=None,
        cylinders=np.array(cylinders, dtype=np.float64).reshape(-1, 5),
        cylinder_ids=np.array(cyl_ids, dtype=np.int64),
    )


def _jump_height(t: float) -> float:
    # parabola through (0,0), (JUMP_TIME/2, JUMP_APEX), (JUMP_TIME, 0)
    u = t / JUMP_TIME
    return 4.0 * JUMP_APEX * u * (1.0 - u)


def _collides(geometry: MapGeometry, x: float, y: float) -> bool:
    if not geometry.in_bounds(x, y, margin=PLAYER_RADIUS):
        return True
    return any(point_segment_distance(x, y, seg) < PLAYER_RADIUS
               for seg in geometry.wall_segments)


def _move_player(world: WorldState, player: PlayerState, action: Action,
                 events: list[GameEvent]) -> None:
    keys = action.keys
    fwd = keys.w - keys.s
    strafe = keys.d - keys.a
    moved = False
    if fwd or strafe:
        yaw = math.radians(player.yaw)
        fx, fy = math.cos(yaw), -math.sin(yaw)
        rx, ry = -math.sin(yaw), -math.cos(yaw)   # facing rotated 90 deg right
        vx = fwd * fx + strafe * rx
        vy = fwd * fy + strafe * ry
        norm = math.hypot(vx, vy)
        if norm > 0.0:
            speed = CROUCH_SPEED if player.is_crouching else RUN_SPEED
            step_len = speed * TICK_SECONDS / norm
            nx = player.position.x + vx * step_len
            ny = player.position.y + vy * step_len
            if _collides(world.map, nx, ny):
                if not _collides(world.map, nx, player.position.y):
                    ny = player.position.y
                elif not _collides(world.map, player.position.x, ny):
                    nx = player.position.x
                else:
                    nx, ny = player.position.x, player.position.y
            moved = (nx != player.position.x) or (ny != player.position.y)
            player.position = Vec3(nx, ny, player.position.z)

    grounded = player.jump_elapsed is None
    if keys.space and grounded:
        player.jump_elapsed = 0.0
        grounded = False
        events.append(GameEvent(EventKind.JUMP, player.position,
                                player.id, world.tick))
    if player.jump_elapsed is not None:
        player.jump_elapsed += TICK_SECONDS
        if player.jump_elapsed >= JUMP_TIME:
            player.jump_elapsed = None
            player.position = Vec3(player.position.x, player.position.y, 0.0)
            player.is_jumping = player.is_falling = False
        else:
            z = _jump_height(player.jump_elapsed)
            player.position = Vec3(player.position.x, player.position.y, z)
            rising = player.jump_elapsed < JUMP_TIME / 2.0
            player.is_jumping = rising
            player.is_falling = not rising
    if moved and player.jump_elapsed is None and not player.is_crouching:
        events.append(GameEvent(EventKind.FOOTSTEP, player.position,
                                player.id, world.tick))


def _in_effect(world: WorldState, player: PlayerState,
               kind: EffectKind, hostile_only: bool = False) -> bool:
    for eff in world.effects:
        if eff.kind != kind:
            continue
        if hostile_only and eff.owner_team == player.team:
            continue
        if math.hypot(player.position.x - eff.center.x,
                      player.position.y - eff.center.y) <= eff.radius:
            return True
    return False


def is_flashed(world: WorldState, player_id: int) -> bool:
    """Flash volumes blind everyone inside the radius, both teams."""
    return _in_effect(world, world.players[player_id], EffectKind.FLASH)


def _cast_ability(world: WorldState, player: PlayerState, key: str,
                  events: list[GameEvent]) -> None:
    kind, radius, duration, center_z = ABILITY_TABLE[(player.role, key)]
    scene = RayScene(segments=world.map.segments_array, bombsite=None)
    hit = raycast(scene, player.eye_position(), player.facing(),
                  max_dist=THROW_RANGE)
    dist = min(hit.distance, THROW_RANGE)
    eye = player.eye_position()
    d = player.facing()
    land = eye + d * max(dist - 0.1, 0.0)
    center = Vec3(float(land[0]), float(land[1]), center_z)
    world.effects.append(AreaEffect(kind=kind, center=center, radius=radius,
                                    remaining=duration,
                                    owner_team=player.team, owner_id=player.id))
    events.append(GameEvent(EventKind.GRENADE_EXPLOSION, center,
                            player.id, world.tick))


def _handle_keys(world: WorldState, player: PlayerState, action: Action,
                 events: list[GameEvent]) -> None:
    keys = action.keys
    bomb = world.bomb

    if keys.r and player.magazine < MAGAZINE_SIZE and player.reserve > 0:
        transfer = min(MAGAZINE_SIZE - player.magazine, player.reserve)
        player.magazine += transfer
        player.reserve -= transfer

    blocked = _in_effect(world, player, EffectKind.ABILITY_BLOCK,
                         hostile_only=True)
    if keys.q and player.main_cooldown <= 0.0 and not blocked:
        _cast_ability(world, player, "q", events)
        player.main_cooldown = ABILITY_COOLDOWN
    if keys.e and player.secondary_cooldown <= 0.0 and not blocked:
        _cast_ability(world, player, "e", events)
        player.secondary_cooldown = ABILITY_COOLDOWN

    if keys.g and player.has_bomb:
        player.has_bomb = False
        player.is_dropping = True
        bomb.phase = BombPhase.DROPPED
        bomb.position = player.position
        bomb.carrier_id = None
        bomb.pickup_locked_until = world.tick + BOMB_PICKUP_LOCK_TICKS
        events.append(GameEvent(EventKind.BOMB_DROP, player.position,
                                player.id, world.tick))

    if keys.key4:
        grounded = player.jump_elapsed is None
        if (player.team == Team.ATTACKER and player.has_bomb and grounded
                and world.map.in_bombsite(player.position.x, player.position.y)):
            player.is_planting = True
            player.plant_progress += TICK_SECONDS
            if player.plant_progress >= PLANT_TIME - 1e-9:
                player.has_bomb = False
                player.plant_progress = 0.0
                bomb.phase = BombPhase.PLANTED
                bomb.position = player.position
                bomb.carrier_id = None
                bomb.fuse_remaining = FUSE_TIME
                bomb.planted_tick = world.tick
                bomb.planter_id = player.id
        elif (player.team == Team.DEFENDER and bomb.phase == BombPhase.PLANTED
                and grounded
                and math.hypot(player.position.x - bomb.position.x,
                               player.position.y - bomb.position.y)
                <= DEFUSE_RANGE):
            player.is_defusing = True
            player.defuse_progress += TICK_SECONDS
            if player.defuse_progress >= DEFUSE_TIME - 1e-9:
                player.defuse_progress = 0.0
                bomb.phase = BombPhase.DEFUSED
                bomb.defuser_id = player.id
    else:
        # progress resets only on key release
        player.plant_progress = 0.0
        player.defuse_progress = 0.0


def _resolve_shot(world: WorldState, player: PlayerState, damage_events: list,
                  events: list[GameEvent]) -> None:
    player.magazine -= 1
    player.ticks_since_shot = 0
    player.is_shooting = True
    events.append(GameEvent(EventKind.SHOT, player.position,
                            player.id, world.tick))
    hit = raycast(_bullet_scene(world, player.id), player.eye_position(),
                  player.facing(), max_dist=MAX_RAY_DIST)
    if hit.kind == HitKind.PLAYER:
        world.players[hit.entity_id].is_being_shot = True
        damage_events.append((player.id, hit.entity_id, SHOT_DAMAGE))


def _apply_deaths(world: WorldState, damage_events: list,
                  events: list[GameEvent]) -> None:
    totals: dict[int, float] = {}
    last_source: dict[int, int] = {}
    for source, victim, amount in damage_events:
        victim_p = world.players[victim]
        if not victim_p.alive:
            continue
        totals[victim] = totals.get(victim, 0.0) + amount
        if source >= 0 and world.players[source].team != victim_p.team:
            world.damage_credit.setdefault(victim, set()).add(source)
            if victim_p.health - totals[victim] <= 0.0 and victim not in last_source:
                last_source[victim] = source
    for victim, amount in sorted(totals.items()):
        p = world.players[victim]
        p.health -= amount
        if p.health <= 0.0 and p.alive:
            p.health = 0.0
            p.alive = False
            p.deaths += 1
            p.plant_progress = 0.0
            p.defuse_progress = 0.0
            p.is_planting = p.is_defusing = False
            killer = last_source.get(victim)
            if killer is not None:
                world.players[killer].kills += 1
            for helper in world.damage_credit.get(victim, ()):
                if helper != killer:
                    world.players[helper].assists += 1
            if p.has_bomb:
                p.has_bomb = False
                world.bomb.phase = BombPhase.DROPPED
                world.bomb.position = p.position
                world.bomb.carrier_id = None
                world.bomb.pickup_locked_until = \
                    world.tick + BOMB_PICKUP_LOCK_TICKS
                events.append(GameEvent(EventKind.BOMB_DROP, p.position,
                                        p.id, world.tick))


def step(world: WorldState,
         actions: list[Action]) -> tuple[WorldState, list[GameEvent]]:
    """Advance one tick in place; returns (world, events emitted this tick).

    Raises SimulationError when called on a terminal world.
    """
    if check_round_end(world) != Outcome.ONGOING:
        raise SimulationError("step() called on a terminal world")
    if len(actions) != len(world.players):
        raise SimulationError(
            f"need {len(world.players)} actions, got {len(actions)}")

    events: list[GameEvent] = []
    alive_at_start = [p.alive for p in world.players]
    for p in world.players:
        p.is_shooting = False
        p.is_being_shot = False
        p.is_dropping = False
        p.is_planting = False
        p.is_defusing = False
        p.ticks_since_shot += 1

    # rotation + movement
    for p, action in zip(world.players, actions):
        if not p.alive:
            continue
        pitch_d, yaw_d = action.aim_angles()
        p.yaw = (p.yaw + yaw_d) % 360.0
        p.pitch = max(-90.0, min(90.0, p.pitch + pitch_d))
        _move_player(world, p, action, events)

    # reload, abilities, bomb keys
    for p, action in zip(world.players, actions):
        if p.alive:
            _handle_keys(world, p, action, events)

    # shooting: everyone alive at tick start fires before damage applies
    damage_events: list[tuple[int, int, float]] = []
    for p, action, was_alive in zip(world.players, actions, alive_at_start):
        if not was_alive or not p.alive:
            continue
        if (action.keys.left_click and p.magazine > 0
                and p.ticks_since_shot >= SHOT_INTERVAL_TICKS):
            _resolve_shot(world, p, damage_events, events)

    # fire volumes burn (owner gets kill credit)
    for eff in world.effects:
        if eff.kind != EffectKind.FIRE:
            continue
        for p in world.players:
            if not p.alive:
                continue
            if math.hypot(p.position.x - eff.center.x,
                          p.position.y - eff.center.y) <= eff.radius:
                damage_events.append((eff.owner_id, p.id,
                                      FIRE_DPS * TICK_SECONDS))

    _apply_deaths(world, damage_events, events)

    # bomb fuse, beep, pickup
    bomb = world.bomb
    if bomb.phase == BombPhase.PLANTED:
        ticks_since_plant = world.tick - bomb.planted_tick
        if ticks_since_plant % TICK_RATE == 0:
            events.append(GameEvent(EventKind.BOMB_BEEP, bomb.position,
                                    None, world.tick))
        bomb.fuse_remaining = max(0.0, bomb.fuse_remaining - TICK_SECONDS)
        if bomb.fuse_remaining <= 0.0:
            bomb.phase = BombPhase.EXPLODED
    elif bomb.phase == BombPhase.DROPPED and world.tick >= bomb.pickup_locked_until:
        for p in world.players:
            if (p.alive and p.team == Team.ATTACKER
                    and math.hypot(p.position.x - bomb.position.x,
                                   p.position.y - bomb.position.y)
                    <= BOMB_PICKUP_RADIUS):
                bomb.phase = BombPhase.CARRIED
                bomb.carrier_id = p.id
                p.has_bomb = True
                break
    if bomb.phase == BombPhase.CARRIED and bomb.carrier_id is not None:
        bomb.position = world.players[bomb.carrier_id].position

    # decay
    for eff in world.effects:
        eff.remaining -= TICK_SECONDS
    world.effects = [e for e in world.effects if e.remaining > 1e-9]
    for p in world.players:
        p.main_cooldown = max(0.0, p.main_cooldown - TICK_SECONDS)
        p.secondary_cooldown = max(0.0, p.secondary_cooldown - TICK_SECONDS)
    world.round_time_left = max(0.0, world.round_time_left - TICK_SECONDS)
    world.tick += 1
    world.events_this_tick = events
    return world, events


def check_round_end(world: WorldState) -> Outcome:
    """Attacker conditions are evaluated first, so a mutual team wipe with
    the bomb unplanted is an attacker win."""
    bomb = world.bomb
    defenders_alive = world.alive_ids(Team.DEFENDER)
    attackers_alive = world.alive_ids(Team.ATTACKER)
    if bomb.phase == BombPhase.EXPLODED or not defenders_alive:
        return Outcome.ATTACKERS_WIN
    if bomb.phase == BombPhase.DEFUSED:
        return Outcome.DEFENDERS_WIN
    pre_plant = bomb.phase in (BombPhase.CARRIED, BombPhase.DROPPED)
    if pre_plant and not attackers_alive:
        return Outcome.DEFENDERS_WIN
    if pre_plant and world.round_time_left <= 0.0:
        return Outcome.DEFENDERS_WIN
    return Outcome.ONGOING
