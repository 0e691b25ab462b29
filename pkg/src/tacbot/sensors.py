"""Per-player observation construction: the 15x15x10 ray-cast visual
tensor, the 8x6 directional audio matrix, 27 normalized game-state
scalars, and 11 spatial distance/direction features.

Visual convention: rows index the pitch offsets (row 0 = +45 deg, looking
up), columns index the yaw offsets (col 0 = +70 deg, the viewer's far
right), so the crosshair is cell (7, 7). A cell/layer with no detection
holds 1.0; hits store distance/100. Audio is inverted: 1 at distance 0,
0 at 100 m or silence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    MAX_RAY_DIST,
    HitKind,
    direction_from_angles,
    raycast,
    raycast_batch,
    wrap_angle,
    yaw_of_direction,
)
from .world import (
    BombPhase,
    EffectKind,
    EventKind,
    PlayerState,
    Team,
    WorldState,
    build_scene,
    is_flashed,
)

SENSOR_YAW = (70.0, 45.0, 20.0, 10.0, 6.0, 3.0, 1.0, 0.0,
              -1.0, -3.0, -6.0, -10.0, -20.0, -45.0, -70.0)
SENSOR_PITCH = (45.0, 30.0, 20.0, 10.0, 6.0, 3.0, 1.0, 0.0,
                -1.0, -3.0, -6.0, -10.0, -20.0, -30.0, -45.0)
GRID = len(SENSOR_PITCH)            # 15
N_GRID_RAYS = GRID * GRID           # 225
FOV_HALF_DEG = 45.0                 # 90 degree horizontal field of view

N_LAYERS = 10
L_ENEMY = 0
L_TEAMMATE = 1
L_ENEMY_GRENADE = 2
L_TEAM_GRENADE = 3
L_SMOKE = 4
L_FIRE = 5
L_BOMB_DROPPED = 6
L_BOMB_PLANTED = 7
L_BOMBSITE = 8
L_OTHER = 9

AUDIO_SECTORS = 8
SOUND_TYPES = (EventKind.FOOTSTEP, EventKind.JUMP, EventKind.SHOT,
               EventKind.BOMB_BEEP, EventKind.GRENADE_EXPLOSION,
               EventKind.BOMB_DROP)
N_SOUND_TYPES = len(SOUND_TYPES)
N_AUDIO = AUDIO_SECTORS * N_SOUND_TYPES
_SOUND_INDEX = {kind: i for i, kind in enumerate(SOUND_TYPES)}

N_SCALAR = 27
N_SPATIAL = 11
OBSERVATION_SIZE = N_GRID_RAYS * N_LAYERS + AUDIO_SECTORS * N_SOUND_TYPES \
    + N_SCALAR + N_SPATIAL    # 2336

# grenade layers carry flash / ability-block effects; smoke and fire have
# dedicated layers of their own
_GRENADE_KINDS = (EffectKind.FLASH, EffectKind.ABILITY_BLOCK)


@dataclass
class Observation:
    visual: np.ndarray      # (15, 15, 10)
    audio: np.ndarray       # (8, 6)
    scalar: np.ndarray      # (27,)
    spatial: np.ndarray     # (11,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.visual.reshape(-1), self.audio.reshape(-1),
            self.scalar, self.spatial])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "Observation":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (OBSERVATION_SIZE,):
            raise ValueError(f"expected ({OBSERVATION_SIZE},), got {flat.shape}")
        nv = N_GRID_RAYS * N_LAYERS
        na = AUDIO_SECTORS * N_SOUND_TYPES
        return cls(
            visual=flat[:nv].reshape(GRID, GRID, N_LAYERS).copy(),
            audio=flat[nv:nv + na].reshape(AUDIO_SECTORS, N_SOUND_TYPES).copy(),
            scalar=flat[nv + na:nv + na + N_SCALAR].copy(),
            spatial=flat[nv + na + N_SCALAR:].copy(),
        )


_GRID_PITCH = np.repeat(np.array(SENSOR_PITCH), GRID)   # (225,) row-major
_GRID_YAW = np.tile(np.array(SENSOR_YAW), GRID)


def _grid_directions(yaw: float, pitch: float) -> np.ndarray:
    ray_yaw = np.radians(yaw + _GRID_YAW)
    ray_pitch = np.radians(pitch + _GRID_PITCH)
    cp = np.cos(ray_pitch)
    return np.stack(
        [cp * np.cos(ray_yaw), -cp * np.sin(ray_yaw), np.sin(ray_pitch)],
        axis=1)


def _nearest_index(value: float, table: tuple[float, ...]) -> int:
    # exact ties break toward the smaller absolute angle (the center)
    return min(range(len(table)),
               key=lambda i: (abs(table[i] - value), abs(table[i])))


_KIND_TO_LAYER = np.full(8, -1, dtype=np.int64)
_KIND_TO_LAYER[int(HitKind.OTHER)] = L_OTHER
_KIND_TO_LAYER[int(HitKind.BOMBSITE)] = L_BOMBSITE
_KIND_TO_LAYER[int(HitKind.SMOKE)] = L_SMOKE
_KIND_TO_LAYER[int(HitKind.FIRE)] = L_FIRE
_KIND_TO_LAYER[int(HitKind.BOMB_DROPPED)] = L_BOMB_DROPPED
_KIND_TO_LAYER[int(HitKind.BOMB_PLANTED)] = L_BOMB_PLANTED


def _hit_layers(kinds: np.ndarray, ids: np.ndarray, me: PlayerState,
                world: WorldState) -> np.ndarray:
    """Vectorized hit-kind -> tensor-layer mapping; -1 where no layer."""
    layers = _KIND_TO_LAYER[kinds]
    player_mask = kinds == int(HitKind.PLAYER)
    if player_mask.any():
        enemy_of_me = np.array([p.team != me.team for p in world.players])
        layers[player_mask] = np.where(
            enemy_of_me[ids[player_mask]], L_ENEMY, L_TEAMMATE)
    return layers


def _augment_targets(world: WorldState, me: PlayerState):
    """Important objects for target-ray augmentation: players, grenade
    effects, fire, the dropped/planted bomb, and the bombsite center.

    Yields (aim_point xyz, layer, match) where match identifies the
    object in raycast results as (kind, entity_id), or None for objects
    rays cannot hit (grenade volumes).
    """
    for p in world.players:
        if p.alive and p.id != me.id:
            layer = L_TEAMMATE if p.team == me.team else L_ENEMY
            point = np.array([p.position.x, p.position.y,
                              p.position.z + p.height / 2.0])
            yield point, layer, (int(HitKind.PLAYER), p.id)
    for i, eff in enumerate(world.effects):
        center = np.array([eff.center.x, eff.center.y, eff.center.z])
        if eff.kind in _GRENADE_KINDS:
            layer = (L_TEAM_GRENADE if eff.owner_team == me.team
                     else L_ENEMY_GRENADE)
            yield center, layer, None
        elif eff.kind == EffectKind.FIRE:
            yield center, L_FIRE, (int(HitKind.FIRE), i)
    if world.bomb.phase == BombPhase.DROPPED:
        b = world.bomb.position
        yield (np.array([b.x, b.y, b.z + 0.2]), L_BOMB_DROPPED,
               (int(HitKind.BOMB_DROPPED), -1))
    elif world.bomb.phase == BombPhase.PLANTED:
        b = world.bomb.position
        yield (np.array([b.x, b.y, b.z + 0.2]), L_BOMB_PLANTED,
               (int(HitKind.BOMB_PLANTED), -1))
    cx, cy = world.map.bombsite_center()
    yield np.array([cx, cy, 0.0]), L_BOMBSITE, (int(HitKind.BOMBSITE), -1)


def sense_visual_with_ray_count(
        world: WorldState, player_id: int) -> tuple[np.ndarray, int, int]:
    """Visual tensor plus (grid_rays, target_rays) cast. A flashed player
    is blind: the tensor saturates to 1.0 and no rays are cast."""
    me = world.players[player_id]
    if not me.alive:
        raise ValueError(f"player {player_id} is dead")
    tensor = np.ones((GRID, GRID, N_LAYERS), dtype=np.float64)
    if is_flashed(world, player_id):
        return tensor, 0, 0

    scene = build_scene(world, exclude_player=player_id)
    eye = me.eye_position()
    dirs = _grid_directions(me.yaw, me.pitch)
    kinds, dists, ids = raycast_batch(scene, eye, dirs, MAX_RAY_DIST)
    layers = _hit_layers(kinds, ids, me, world)
    flat = np.nonzero(layers >= 0)[0]
    tensor[flat // GRID, flat % GRID, layers[flat]] = dists[flat] / MAX_RAY_DIST

    target_rays = 0
    for point, layer, match in _augment_targets(world, me):
        v = point - eye
        dist = float(np.linalg.norm(v))
        if dist < 1e-9 or dist > MAX_RAY_DIST:
            continue
        d_yaw = wrap_angle(yaw_of_direction(v[0], v[1]) - me.yaw)
        if abs(d_yaw) > FOV_HALF_DEG:
            continue
        d_pitch = math.degrees(math.atan2(v[2], math.hypot(v[0], v[1]))) \
            - me.pitch
        hit = raycast(scene, eye, v / dist, MAX_RAY_DIST)
        target_rays += 1
        if match is not None:
            if (int(hit.kind), hit.entity_id) != match:
                continue
            seen = hit.distance
        else:
            # not a hittable volume: visible when nothing occludes it
            if hit.distance < dist - 1e-6:
                continue
            seen = dist
        row = _nearest_index(d_pitch, SENSOR_PITCH)
        col = _nearest_index(d_yaw, SENSOR_YAW)
        value = seen / MAX_RAY_DIST
        tensor[row, col, layer] = min(tensor[row, col, layer], value)

    return tensor, N_GRID_RAYS, target_rays


def sense_visual(world: WorldState, player_id: int) -> np.ndarray:
    tensor, _, _ = sense_visual_with_ray_count(world, player_id)
    return tensor


def sense_audio(world: WorldState, player_id: int) -> np.ndarray:
    """8 sectors x 6 sound types; sector 0 is centered on the facing
    direction, advancing clockwise in 45 degree steps. The loudest
    (nearest) event wins per cell; own events are inaudible."""
    me = world.players[player_id]
    if not me.alive:
        raise ValueError(f"player {player_id} is dead")
    matrix = np.zeros((AUDIO_SECTORS, N_SOUND_TYPES), dtype=np.float64)
    px, py, pz = me.position.x, me.position.y, me.position.z
    for ev in world.events_this_tick:
        if ev.emitter_id == player_id:
            continue
        dx = ev.source_position.x - px
        dy = ev.source_position.y - py
        dz = ev.source_position.z - pz
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)
        if dist > MAX_RAY_DIST:
            continue
        if dx == 0.0 and dy == 0.0:
            bearing = 0.0
        else:
            bearing = wrap_angle(yaw_of_direction(dx, dy) - me.yaw)
        sector = int(((bearing + 22.5) % 360.0) // 45.0)
        col = _SOUND_INDEX[ev.kind]
        matrix[sector, col] = max(matrix[sector, col], 1.0 - dist / MAX_RAY_DIST)
    return matrix


def sense_scalar(world: WorldState, player_id: int) -> np.ndarray:
    """27 features, each min-max normalized by its documented range.

    Order: 6 player flags, 4 ability-identity flags, 2 cooldowns, health,
    pitch, yaw, reserve, magazine, 6 bomb flags, plant/defuse/fuse timers,
    and time left.
    """
    me = world.players[player_id]
    if not me.alive:
        raise ValueError(f"player {player_id} is dead")
    bomb = world.bomb
    teammate_has_bomb = any(p.has_bomb for p in world.teammates(player_id))
    out = np.array([
        me.team == Team.ATTACKER,
        me.is_jumping,
        me.is_falling,
        me.is_shooting,
        me.is_being_shot,
        me.is_crouching,
        me.role.value == "initiator",      # main ability Zero
        me.role.value == "controller",     # main ability SkySmoke
        me.role.value == "controller",     # secondary Incendiary
        me.role.value == "initiator",      # secondary Flash
        me.main_cooldown / 60.0,
        me.secondary_cooldown / 60.0,
        me.health / 100.0,
        (me.pitch + 180.0) / 360.0,
        (me.yaw % 360.0) / 360.0,
        me.reserve / 48.0,
        me.magazine / 12.0,
        me.has_bomb,
        teammate_has_bomb,
        me.is_dropping,
        me.is_planting,
        me.is_defusing,
        bomb.phase == BombPhase.PLANTED,
        me.plant_progress / 4.0,
        me.defuse_progress / 7.0,
        bomb.fuse_remaining / 45.0,
        world.round_time_left / 120.0,
    ], dtype=np.float64)
    assert out.shape == (N_SCALAR,)
    return out


def _planar_feature(src: PlayerState, tx: float, ty: float) -> tuple[float, float, float]:
    dx, dy = tx - src.position.x, ty - src.position.y
    dist = math.hypot(dx, dy)
    if dist < 1e-12:
        return 0.0, 0.0, 0.0
    return min(dist, MAX_RAY_DIST) / MAX_RAY_DIST, dx / dist, dy / dist


def sense_spatial(world: WorldState, player_id: int) -> np.ndarray:
    """Distances (clamped to 100 m, normalized) and planar unit directions
    in the world frame. Missing targets read distance 1.0, direction (0,0).
    """
    me = world.players[player_id]
    if not me.alive:
        raise ValueError(f"player {player_id} is dead")

    teammate = next((p for p in world.teammates(player_id) if p.alive), None)
    if teammate is None:
        tm = (1.0, 0.0, 0.0)
    else:
        tm = _planar_feature(me, teammate.position.x, teammate.position.y)

    cx, cy = world.map.bombsite_center()
    site = _planar_feature(me, cx, cy)

    bomb = world.bomb
    if bomb.phase == BombPhase.CARRIED and bomb.carrier_id == player_id:
        bm = (0.0, 0.0, 0.0)
    else:
        bm = _planar_feature(me, bomb.position.x, bomb.position.y)

    enemy_d = 1.0
    for p in world.enemies(player_id):
        if p.alive:
            d = math.hypot(p.position.x - me.position.x,
                           p.position.y - me.position.y)
            enemy_d = min(enemy_d, min(d, MAX_RAY_DIST) / MAX_RAY_DIST)

    grenade_d = 1.0
    for eff in world.effects:
        if eff.owner_team != me.team:
            d = math.hypot(eff.center.x - me.position.x,
                           eff.center.y - me.position.y)
            grenade_d = min(grenade_d, min(d, MAX_RAY_DIST) / MAX_RAY_DIST)

    return np.array([
        tm[0], tm[1], tm[2],
        site[0], site[1], site[2],
        bm[0], bm[1], bm[2],
        enemy_d, grenade_d,
    ], dtype=np.float64)


def observe(world: WorldState, player_id: int) -> Observation:
    """All four sensor blocks for one alive player (2336 values total)."""
    return Observation(
        visual=sense_visual(world, player_id),
        audio=sense_audio(world, player_id),
        scalar=sense_scalar(world, player_id),
        spatial=sense_spatial(world, player_id),
    )
