"""Scripted expert policies, the match engine, dataset generation, model
rollouts, and the KDR/AKDR skill ratios.

Experts read privileged world state (they are data generators, not
learners); the observations logged next to their actions keep the labels
valid for cloning. Two styles exist: "match" plays the full objective
game (navigate, plant/defuse, abilities, combat), "tracker" wanders the
waypoint graph and turns toward / fires at the nearest visible enemy,
which gives a cleanly learnable sensor-to-aim mapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .actions import Action, KeyAction, N_AIM, angles_to_aim_index
from .geometry import HitKind, raycast, wrap_angle, yaw_of_direction
from .net import Network, sigmoid, softmax
from .sensors import Observation, observe
from .world import (
    MAX_ROUND_TICKS,
    BombPhase,
    Outcome,
    PlayerState,
    SimulationError,
    Team,
    WorldState,
    build_scene,
    check_round_end,
    new_round,
    step,
)
from .worldmap import MapGeometry, nearest_waypoint, shortest_path, walkable_line

ENGAGE_FIRE_CONE_DEG = 2.0
WAYPOINT_REACHED = 0.9
SITE_APPROACH_DIST = 12.0
DEFUSE_STAND_OFF = 1.2


def kdr(kills: int, deaths: int) -> float:
    """Kill/death ratio; zero deaths counts as one (documented convention)."""
    if kills < 0 or deaths < 0:
        raise ValueError("counts must be non-negative")
    return kills / max(deaths, 1)


def akdr(kills: int, assists: int, deaths: int) -> float:
    """(kills+assists) / (kills+assists+deaths); 0 when all three are 0.
    A never-killed team reads 1.0."""
    if min(kills, assists, deaths) < 0:
        raise ValueError("counts must be non-negative")
    total = kills + assists + deaths
    if total == 0:
        return 0.0
    return (kills + assists) / total


@dataclass(frozen=True)
class ExpertProfile:
    style: str = "match"               # "match" | "tracker"
    aim_noise_sigma: float = 2.0       # degrees
    reaction_delay: int = 4            # ticks between first sight and reaction
    aggression: float = 0.5            # P(push while engaging)
    camp_bias: float = 0.5             # P(defender holds instead of patrols)
    ability_policy: str = "default"    # "default" | "none"
    seed: int = 0

    def __post_init__(self):
        if self.style not in ("match", "tracker"):
            raise ValueError(f"unknown expert style {self.style!r}")
        if self.ability_policy not in ("default", "none"):
            raise ValueError(f"unknown ability policy {self.ability_policy!r}")
        for name in ("aggression", "camp_bias"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.aim_noise_sigma < 0 or self.reaction_delay < 0:
            raise ValueError("noise/delay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _bearing_to(me: PlayerState, tx: float, ty: float, tz: float):
    eye = me.eye_position()
    dx, dy, dz = tx - eye[0], ty - eye[1], tz - eye[2]
    d_yaw = wrap_angle(yaw_of_direction(dx, dy) - me.yaw)
    d_pitch = math.degrees(math.atan2(dz, math.hypot(dx, dy))) - me.pitch
    return d_yaw, d_pitch


_WASD_COMBOS = (
    (0.0, KeyAction(w=True)),
    (45.0, KeyAction(w=True, d=True)),
    (90.0, KeyAction(d=True)),
    (135.0, KeyAction(s=True, d=True)),
    (180.0, KeyAction(s=True)),
    (-135.0, KeyAction(s=True, a=True)),
    (-90.0, KeyAction(a=True)),
    (-45.0, KeyAction(w=True, a=True)),
)


def _keys_toward(me: PlayerState, tx: float, ty: float) -> KeyAction:
    """WASD combo whose movement direction best matches the target bearing."""
    desired = wrap_angle(
        yaw_of_direction(tx - me.position.x, ty - me.position.y) - me.yaw)
    best = min(_WASD_COMBOS,
               key=lambda c: abs(wrap_angle(desired - c[0])))
    return best[1]


class ExpertController:
    """One scripted player. Deterministic given (profile, round seed)."""

    def __init__(self, profile: ExpertProfile):
        self.profile = profile

    def reset(self, world: WorldState, player_id: int) -> None:
        self.player_id = player_id
        self.rng = np.random.default_rng(
            [self.profile.seed, world.rng_seed & 0x7FFFFFFF, player_id])
        self.first_seen: dict[int, int] = {}
        self.path: list[tuple[float, float]] = []
        self.path_goal: tuple[float, float] | None = None
        self.wander_goal: str | None = None
        self.camping = bool(self.rng.random() < self.profile.camp_bias)
        self.push_roll = float(self.rng.random())
        self.used_site_ability = False
        self.used_sight_ability = False

    # -- perception -------------------------------------------------

    def _visible_enemies(self, world: WorldState):
        me = world.players[self.player_id]
        scene = build_scene(world, exclude_player=self.player_id)
        eye = me.eye_position()
        out = []
        for enemy in world.enemies(self.player_id):
            if not enemy.alive:
                continue
            aim = np.array([enemy.position.x, enemy.position.y,
                            enemy.position.z + enemy.height / 2.0])
            v = aim - eye
            dist = float(np.linalg.norm(v))
            if dist < 1e-9 or dist > 100.0:
                continue
            hit = raycast(scene, eye, v / dist)
            if hit.kind == HitKind.PLAYER and hit.entity_id == enemy.id:
                out.append((dist, enemy))
        return out

    def _engagement(self, world: WorldState):
        """Nearest visible enemy whose sighting outlasted reaction_delay."""
        visible = self._visible_enemies(world)
        now = world.tick
        seen_ids = set()
        for _, enemy in visible:
            seen_ids.add(enemy.id)
            self.first_seen.setdefault(enemy.id, now)
        for eid in list(self.first_seen):
            if eid not in seen_ids:
                del self.first_seen[eid]
        ready = [(d, e) for d, e in visible
                 if now - self.first_seen[e.id] >= self.profile.reaction_delay]
        return min(ready, default=None, key=lambda de: de[0])

    # -- navigation -------------------------------------------------

    def _steer_to(self, world: WorldState, goal: tuple[float, float]):
        """(keys, aim_index) walking toward goal via the waypoint graph."""
        me = world.players[self.player_id]
        pos = (me.position.x, me.position.y)
        if self.path_goal is None or math.dist(self.path_goal, goal) > 2.0:
            self.path_goal = goal
            if walkable_line(world.map, pos, goal):
                self.path = [goal]
            else:
                start = nearest_waypoint(world.map, *pos)
                end = nearest_waypoint(world.map, *goal)
                names = shortest_path(world.map, start, end)
                self.path = [world.map.waypoints[n] for n in names] + [goal]
        while self.path and math.dist(pos, self.path[0]) < WAYPOINT_REACHED:
            self.path.pop(0)
        if not self.path:
            return KeyAction(), angles_to_aim_index(-me.pitch, 0.0)
        tx, ty = self.path[0]
        keys = _keys_toward(me, tx, ty)
        d_yaw, _ = _bearing_to(me, tx, ty, me.position.z + me.eye_height)
        return keys, angles_to_aim_index(-me.pitch, d_yaw)

    # -- behaviors --------------------------------------------------

    def _combat(self, world: WorldState, dist: float, enemy: PlayerState):
        me = world.players[self.player_id]
        aim_z = enemy.position.z + enemy.height / 2.0
        d_yaw, d_pitch = _bearing_to(me, enemy.position.x, enemy.position.y,
                                     aim_z)
        sigma = self.profile.aim_noise_sigma
        noisy_yaw = d_yaw + (self.rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        noisy_pitch = d_pitch + (self.rng.normal(0.0, sigma) if sigma > 0
                                 else 0.0)
        aim = angles_to_aim_index(noisy_pitch, noisy_yaw)
        aligned = (abs(d_yaw) < ENGAGE_FIRE_CONE_DEG
                   and abs(d_pitch) < ENGAGE_FIRE_CONE_DEG)
        if world.tick % 8 == 0:
            self.push_roll = float(self.rng.random())
        push = self.push_roll < self.profile.aggression
        keys = (_keys_toward(me, enemy.position.x, enemy.position.y)
                if push else KeyAction())
        fire = aligned and me.magazine > 0
        reload_now = me.magazine == 0 and me.reserve > 0
        use_e = (self.profile.ability_policy == "default"
                 and self.profile.style == "match"
                 and not self.used_sight_ability
                 and me.secondary_cooldown <= 0.0)
        if use_e:
            self.used_sight_ability = True
        return Action(aim, KeyAction(
            w=keys.w, a=keys.a, s=keys.s, d=keys.d,
            r=reload_now, e=use_e, left_click=fire))

    def _objective_goal(self, world: WorldState):
        """(goal_xy, hold_key4) for the match style."""
        me = world.players[self.player_id]
        geometry = world.map
        bomb = world.bomb
        site = geometry.bombsite_center()
        if me.team == Team.ATTACKER:
            if me.has_bomb:
                if geometry.in_bombsite(me.position.x, me.position.y):
                    return None, True
                return site, False
            if bomb.phase == BombPhase.DROPPED:
                return (bomb.position.x, bomb.position.y), False
            return site, False
        if bomb.phase == BombPhase.PLANTED:
            d = math.hypot(me.position.x - bomb.position.x,
                           me.position.y - bomb.position.y)
            if d <= DEFUSE_STAND_OFF:
                return None, True
            return (bomb.position.x, bomb.position.y), False
        if self.camping:
            return site, False
        # patrol between site-adjacent waypoints
        if self.wander_goal is None or math.dist(
                world.map.waypoints[self.wander_goal],
                (me.position.x, me.position.y)) < WAYPOINT_REACHED:
            site_wp = nearest_waypoint(geometry, *site)
            near = sorted(
                geometry.waypoints,
                key=lambda n: math.dist(geometry.waypoints[n],
                                        geometry.waypoints[site_wp]))[:4]
            self.wander_goal = near[int(self.rng.integers(len(near)))]
        return geometry.waypoints[self.wander_goal], False

    def act(self, world: WorldState, player_id: int,
            observation: Observation | None = None) -> Action:
        me = world.players[player_id]
        engagement = self._engagement(world)
        if engagement is not None:
            return self._combat(world, *engagement)

        if self.profile.style == "tracker":
            if self.wander_goal is None or math.dist(
                    world.map.waypoints[self.wander_goal],
                    (me.position.x, me.position.y)) < WAYPOINT_REACHED:
                names = sorted(world.map.waypoints)
                self.wander_goal = names[int(self.rng.integers(len(names)))]
            keys, aim = self._steer_to(world,
                                       world.map.waypoints[self.wander_goal])
            reload_now = me.magazine == 0 and me.reserve > 0
            return Action(aim, KeyAction(
                w=keys.w, a=keys.a, s=keys.s, d=keys.d, r=reload_now))

        goal, hold4 = self._objective_goal(world)
        use_q = False
        if (self.profile.ability_policy == "default"
                and not self.used_site_ability and me.main_cooldown <= 0.0):
            site = world.map.bombsite_center()
            if math.hypot(me.position.x - site[0],
                          me.position.y - site[1]) < SITE_APPROACH_DIST:
                use_q = True
                self.used_site_ability = True
        if goal is None:
            aim = angles_to_aim_index(-me.pitch, 0.0)
            return Action(aim, KeyAction(key4=hold4, q=use_q))
        keys, aim = self._steer_to(world, goal)
        reload_now = me.magazine < 4 and me.reserve > 0
        return Action(aim, KeyAction(
            w=keys.w, a=keys.a, s=keys.s, d=keys.d,
            r=reload_now, q=use_q))


class ModelController:
    """Drives one player from a trained network; hidden state persists
    across the round and resets between rounds."""

    def __init__(self, network: Network, temperature: float = 1.0,
                 seed: int = 0):
        self.network = network.astype(np.float32)
        self.temperature = float(temperature)
        self.seed = seed

    def reset(self, world: WorldState, player_id: int) -> None:
        self.player_id = player_id
        self.rng = np.random.default_rng(
            [self.seed, world.rng_seed & 0x7FFFFFFF, player_id])
        widths = self.network.config.lstm_widths
        self.hidden = [(np.zeros((1, w), dtype=np.float32),
                        np.zeros((1, w), dtype=np.float32)) for w in widths]

    def act(self, world: WorldState, player_id: int,
            observation: Observation | None = None) -> Action:
        if observation is None:
            observation = observe(world, player_id)
        flat = observation.flatten().astype(np.float32)
        aim_logits, key_logits, self.hidden = self.network.step(
            flat, self.hidden)
        aim64 = aim_logits[0].astype(np.float64)
        key64 = key_logits[0].astype(np.float64)
        if self.temperature <= 0.0:
            aim = int(aim64.argmax())
            keys = KeyAction.from_bits(
                int(sum(1 << i for i, v in enumerate(key64) if v > 0.0)))
        else:
            probs = softmax(aim64 / self.temperature)
            aim = int(self.rng.choice(N_AIM, p=probs))
            kp = sigmoid(key64 / self.temperature)
            draws = self.rng.random(kp.shape) < kp
            keys = KeyAction.from_bits(
                int(sum(1 << i for i, v in enumerate(draws) if v)))
        return Action(aim, keys)


class RandomController:
    """Uniform policy: aim uniform over 165, each key Bernoulli(1/2)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reset(self, world: WorldState, player_id: int) -> None:
        self.rng = np.random.default_rng(
            [self.seed, world.rng_seed & 0x7FFFFFFF, player_id])

    def act(self, world: WorldState, player_id: int,
            observation: Observation | None = None) -> Action:
        aim = int(self.rng.integers(N_AIM))
        keys = KeyAction.from_bits(int(self.rng.integers(1 << 11)))
        return Action(aim, keys)


# ---------------- round engine ----------------

@dataclass
class Trajectory:
    player_id: int
    team: str
    role: str
    match_id: int
    round_id: int
    visual: np.ndarray    # (T,15,15,10) float32
    audio: np.ndarray     # (T,48) float32
    scalar: np.ndarray    # (T,27) float32
    spatial: np.ndarray   # (T,11) float32
    aim: np.ndarray       # (T,) int64
    keys: np.ndarray      # (T,11) float32
    kills: int
    deaths: int
    assists: int
    outcome: str
    round_ticks: int

    @property
    def length(self) -> int:
        return int(self.aim.shape[0])


@dataclass
class RoundRecord:
    outcome: Outcome
    ticks: int
    stats: dict[int, dict[str, int]]
    trajectories: list[Trajectory]
    log_records: list[dict]


def _tick_record(world: WorldState) -> dict:
    bomb = world.bomb
    return {
        "type": "tick",
        "tick": world.tick,
        "time_left": world.round_time_left,
        "bomb": {
            "phase": bomb.phase.value,
            "x": bomb.position.x, "y": bomb.position.y, "z": bomb.position.z,
            "fuse": bomb.fuse_remaining,
            "carrier": bomb.carrier_id,
            "planter": bomb.planter_id,
            "planted_tick": bomb.planted_tick,
            "lock": bomb.pickup_locked_until,
        },
        "players": [{
            "id": p.id,
            "x": p.position.x, "y": p.position.y, "z": p.position.z,
            "yaw": p.yaw, "pitch": p.pitch,
            "health": p.health, "alive": p.alive,
            "crouch": p.is_crouching,
            "mag": p.magazine, "res": p.reserve,
            "cd_q": p.main_cooldown, "cd_e": p.secondary_cooldown,
            "jump": p.jump_elapsed,
            "jumping": p.is_jumping, "falling": p.is_falling,
            "shooting": p.is_shooting, "being_shot": p.is_being_shot,
            "has_bomb": p.has_bomb, "planting": p.is_planting,
            "defusing": p.is_defusing, "dropping": p.is_dropping,
            "plant_p": p.plant_progress, "defuse_p": p.defuse_progress,
        } for p in world.players],
        "effects": [{
            "kind": e.kind.value,
            "x": e.center.x, "y": e.center.y, "z": e.center.z,
            "r": e.radius, "left": e.remaining,
            "team": e.owner_team.value, "owner": e.owner_id,
        } for e in world.effects],
        "events": [{
            "kind": ev.kind.value,
            "x": ev.source_position.x, "y": ev.source_position.y,
            "z": ev.source_position.z,
            "emitter": ev.emitter_id, "tick": ev.tick,
        } for ev in world.events_this_tick],
    }


def play_round(
    geometry: MapGeometry,
    controllers,
    attacker_ids: tuple[int, int] = (0, 1),
    match_id: int = 0,
    round_id: int = 0,
    seed: int = 0,
    record_obs: bool = True,
    log: bool = True,
    tick_cap: int = MAX_ROUND_TICKS,
) -> RoundRecord:
    """One full round driven by four controllers.

    Observations and per-tick log records are snapshots of the pre-step
    state, so logged observations regenerate bit-identically from the
    log. Trajectory frames cover the ticks each player was alive.
    """
    world = new_round(geometry, attacker_ids=attacker_ids, seed=seed)
    for pid, controller in enumerate(controllers):
        controller.reset(world, pid)

    frames: dict[int, list] = {pid: [] for pid in range(4)}
    records: list[dict] = []
    if log:
        records.append({
            "type": "round_start",
            "match": match_id, "round": round_id,
            "map": geometry.name, "seed": seed,
            "bounds": list(geometry.bounds),
            "attackers": sorted(attacker_ids),
            "defenders": sorted(set(range(4)) - set(attacker_ids)),
            "roles": {str(p.id): p.role.value for p in world.players},
        })

    while check_round_end(world) == Outcome.ONGOING:
        if world.tick >= tick_cap:
            raise SimulationError(
                f"round exceeded the {tick_cap}-tick cap without ending")
        if log:
            records.append(_tick_record(world))
        observations: dict[int, Observation] = {}
        if record_obs:
            for pid in world.alive_ids():
                observations[pid] = observe(world, pid)
        actions = []
        for pid, controller in enumerate(controllers):
            if world.players[pid].alive:
                actions.append(controller.act(world, pid,
                                              observations.get(pid)))
            else:
                actions.append(Action())
        if record_obs:
            for pid, obs in observations.items():
                frames[pid].append((obs, actions[pid]))
        step(world, actions)

    outcome = check_round_end(world)
    if log:
        records.append(_tick_record(world))
        records.append({
            "type": "round_end",
            "outcome": outcome.value,
            "ticks": world.tick,
            "stats": {str(p.id): {"kills": p.kills, "deaths": p.deaths,
                                  "assists": p.assists}
                      for p in world.players},
        })

    trajectories = []
    if record_obs:
        for pid in range(4):
            if not frames[pid]:
                continue
            obs_list = [f[0] for f in frames[pid]]
            act_list = [f[1] for f in frames[pid]]
            p = world.players[pid]
            trajectories.append(Trajectory(
                player_id=pid,
                team=p.team.value,
                role=p.role.value,
                match_id=match_id,
                round_id=round_id,
                visual=np.stack([o.visual for o in obs_list]).astype(np.float32),
                audio=np.stack([o.audio.reshape(-1) for o in obs_list])
                .astype(np.float32),
                scalar=np.stack([o.scalar for o in obs_list]).astype(np.float32),
                spatial=np.stack([o.spatial for o in obs_list])
                .astype(np.float32),
                aim=np.array([a.aim_index for a in act_list], dtype=np.int64),
                keys=np.array([a.keys.as_tuple() for a in act_list],
                              dtype=np.float32),
                kills=p.kills, deaths=p.deaths, assists=p.assists,
                outcome=outcome.value,
                round_ticks=world.tick,
            ))
    stats = {p.id: {"kills": p.kills, "deaths": p.deaths,
                    "assists": p.assists} for p in world.players}
    return RoundRecord(outcome=outcome, ticks=world.tick, stats=stats,
                       trajectories=trajectories, log_records=records)


def _round_seed(seed: int, match: int, round_no: int) -> int:
    return int(np.random.SeedSequence([seed, match, round_no])
               .generate_state(1)[0])


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    manifest: dict
    match_logs: list[list[dict]]    # one record list per match


def generate_dataset(
    geometry: MapGeometry,
    roster: list[ExpertProfile],
    n_matches: int,
    rounds_per_match: int = 8,
    seed: int = 0,
    min_total_seconds: float | None = None,
    record_obs: bool = True,
    log=None,
) -> Dataset:
    """Play full expert matches (sides swap every round) and collect
    trajectories plus per-tick match logs.

    With ``min_total_seconds`` set, whole matches are appended beyond
    ``n_matches`` until the summed round time reaches the target.
    """
    if n_matches < 1:
        raise ValueError("n_matches must be >= 1")
    if len(roster) != 4:
        raise ValueError("roster must hold exactly 4 profiles")

    trajectories: list[Trajectory] = []
    match_logs: list[list[dict]] = []
    total_ticks = 0
    total_rounds = 0
    match = 0
    while match < n_matches or (
            min_total_seconds is not None
            and total_ticks / 16.0 < min_total_seconds):
        controllers = [ExpertController(p) for p in roster]
        records: list[dict] = []
        for round_no in range(rounds_per_match):
            attacker_ids = (0, 1) if round_no % 2 == 0 else (2, 3)
            result = play_round(
                geometry, controllers, attacker_ids=attacker_ids,
                match_id=match, round_id=round_no,
                seed=_round_seed(seed, match, round_no),
                record_obs=record_obs)
            trajectories.extend(result.trajectories)
            records.extend(result.log_records)
            total_ticks += result.ticks
            total_rounds += 1
        match_logs.append(records)
        match += 1
        if log:
            log(f"match {match}: {total_rounds} rounds, "
                f"{total_ticks / 16.0:.0f} s simulated")

    manifest = {
        "version": 1,
        "map": geometry.name,
        "seed": seed,
        "n_matches": match,
        "rounds_per_match": rounds_per_match,
        "roster": [p.to_dict() for p in roster],
        "total_rounds": total_rounds,
        "total_sim_seconds": total_ticks / 16.0,
        "total_timesteps": int(sum(t.length for t in trajectories)),
        "trajectories": [{
            "match": t.match_id, "round": t.round_id, "player": t.player_id,
            "team": t.team, "role": t.role, "frames": t.length,
            "kills": t.kills, "deaths": t.deaths, "assists": t.assists,
            "outcome": t.outcome,
        } for t in trajectories],
    }
    return Dataset(trajectories=trajectories, manifest=manifest,
                   match_logs=match_logs)


def model_rollout(
    network: Network,
    geometry: MapGeometry,
    n_rounds: int,
    temperature: float = 1.0,
    seed: int = 0,
    record_obs: bool = False,
    controller_factory=None,
) -> tuple[list[list[dict]], list[Trajectory], list[RoundRecord]]:
    """Self-play rollout: one model (or any controller factory) drives
    all four players for ``n_rounds``, sides swapping every round.

    Returns (match_logs as one record list per round, trajectories,
    round records).
    """
    if controller_factory is None:
        def controller_factory(pid: int):
            return ModelController(network, temperature=temperature,
                                   seed=seed + pid)
    logs: list[list[dict]] = []
    trajectories: list[Trajectory] = []
    results: list[RoundRecord] = []
    controllers = [controller_factory(pid) for pid in range(4)]
    for round_no in range(n_rounds):
        attacker_ids = (0, 1) if round_no % 2 == 0 else (2, 3)
        result = play_round(
            geometry, controllers, attacker_ids=attacker_ids,
            match_id=0, round_id=round_no,
            seed=_round_seed(seed, 0, round_no),
            record_obs=record_obs)
        logs.append(result.log_records)
        trajectories.extend(result.trajectories)
        results.append(result)
    return logs, trajectories, results
