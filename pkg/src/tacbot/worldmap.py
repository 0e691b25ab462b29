"""Map definition, the text map format, and waypoint navigation.

A map is an axis-aligned bounds rectangle, a set of 2D wall segments
extruded from floor to ceiling, two spawn points, one bombsite rectangle,
and a named waypoint graph used by scripted experts.

Map text format (UTF-8, line oriented, ``#`` comments)::

    name: ascent_mini
    bounds: 0 0 40 40
    attacker_spawn: 20 4
    defender_spawn: 20 36
    bombsite: 26 24 34 32
    wall: 0 0 40 0
    waypoint: aspawn 20 4
    edge: aspawn mid_south
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import RayScene, Vec3, point_segment_distance, segments_cross

PLAYER_RADIUS = 0.4


class MapError(ValueError):
    """Raised for unparseable map text or invariant violations."""


@dataclass
class MapGeometry:
    name: str
    bounds: tuple[float, float, float, float]       # xmin, ymin, xmax, ymax
    wall_segments: list[tuple[float, float, float, float]]
    attacker_spawn: Vec3
    defender_spawn: Vec3
    bombsite: tuple[float, float, float, float]
    waypoints: dict[str, tuple[float, float]] = field(default_factory=dict)
    edges: list[tuple[str, str]] = field(default_factory=list)

    _segments_array: np.ndarray | None = field(
        default=None, repr=False, compare=False)
    _adjacency: dict[str, list[tuple[str, float]]] | None = field(
        default=None, repr=False, compare=False)

    @property
    def segments_array(self) -> np.ndarray:
        if self._segments_array is None:
            self._segments_array = np.array(
                self.wall_segments, dtype=np.float64).reshape(-1, 4)
        return self._segments_array

    @property
    def adjacency(self) -> dict[str, list[tuple[str, float]]]:
        if self._adjacency is None:
            adj: dict[str, list[tuple[str, float]]] = {
                k: [] for k in self.waypoints}
            for a, b in self.edges:
                d = math.dist(self.waypoints[a], self.waypoints[b])
                adj[a].append((b, d))
                adj[b].append((a, d))
            self._adjacency = adj
        return self._adjacency

    def static_scene(self) -> RayScene:
        """Walls, floor/ceiling, and bombsite only (no dynamic occluders)."""
        return RayScene(
            segments=self.segments_array,
            bombsite=np.array(self.bombsite, dtype=np.float64),
        )

    def bombsite_center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bombsite
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0

    def in_bombsite(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bombsite
        return x0 <= x <= x1 and y0 <= y <= y1

    def in_bounds(self, x: float, y: float, margin: float = 0.0) -> bool:
        x0, y0, x1, y1 = self.bounds
        return (x0 + margin <= x <= x1 - margin
                and y0 + margin <= y <= y1 - margin)


def _parse_floats(value: str, n: int, key: str, lineno: int) -> list[float]:
    parts = value.split()
    if len(parts) != n:
        raise MapError(
            f"line {lineno}: '{key}' expects {n} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise MapError(f"line {lineno}: bad number in '{key}': {exc}") from exc


def load_map(text: str) -> MapGeometry:
    """Parse and validate map text; raises MapError naming the offender."""
    name = "unnamed"
    bounds = None
    attacker_spawn = defender_spawn = None
    bombsite = None
    walls: list[tuple[float, float, float, float]] = []
    waypoints: dict[str, tuple[float, float]] = {}
    edges: list[tuple[str, str]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise MapError(f"line {lineno}: expected 'key: value', got {line!r}")
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "name":
            name = value
        elif key == "bounds":
            bounds = tuple(_parse_floats(value, 4, key, lineno))
        elif key in ("attacker_spawn", "defender_spawn"):
            parts = value.split()
            if len(parts) not in (2, 3):
                raise MapError(f"line {lineno}: '{key}' expects x y [z]")
            vals = _parse_floats(value, len(parts), key, lineno)
            z = vals[2] if len(vals) == 3 else 0.0
            spawn = Vec3(vals[0], vals[1], z)
            if key == "attacker_spawn":
                attacker_spawn = spawn
            else:
                defender_spawn = spawn
        elif key == "bombsite":
            bombsite = tuple(_parse_floats(value, 4, key, lineno))
        elif key == "wall":
            walls.append(tuple(_parse_floats(value, 4, key, lineno)))
        elif key == "waypoint":
            parts = value.split()
            if len(parts) != 3:
                raise MapError(f"line {lineno}: 'waypoint' expects name x y")
            wp_name = parts[0]
            coords = _parse_floats(" ".join(parts[1:]), 2, key, lineno)
            if wp_name in waypoints:
                raise MapError(f"line {lineno}: duplicate waypoint {wp_name!r}")
            waypoints[wp_name] = (coords[0], coords[1])
        elif key == "edge":
            parts = value.split()
            if len(parts) != 2:
                raise MapError(f"line {lineno}: 'edge' expects two names")
            edges.append((parts[0], parts[1]))
        else:
            raise MapError(f"line {lineno}: unknown key {key!r}")

    for req, val in (("bounds", bounds), ("attacker_spawn", attacker_spawn),
                     ("defender_spawn", defender_spawn), ("bombsite", bombsite)):
        if val is None:
            raise MapError(f"missing required key '{req}'")

    geometry = MapGeometry(
        name=name, bounds=bounds, wall_segments=walls,
        attacker_spawn=attacker_spawn, defender_spawn=defender_spawn,
        bombsite=bombsite, waypoints=waypoints, edges=edges)
    validate_map(geometry)
    return geometry


def load_map_file(path) -> MapGeometry:
    with open(path, "r", encoding="utf-8") as fh:
        return load_map(fh.read())


def validate_map(geometry: MapGeometry) -> None:
    x0, y0, x1, y1 = geometry.bounds
    if not (x1 > x0 and y1 > y0):
        raise MapError(f"bounds {geometry.bounds} have non-positive area")

    for label, spawn in (("attacker_spawn", geometry.attacker_spawn),
                         ("defender_spawn", geometry.defender_spawn)):
        if not geometry.in_bounds(spawn.x, spawn.y, margin=PLAYER_RADIUS):
            raise MapError(f"{label} at ({spawn.x}, {spawn.y}) outside bounds")
        for seg in geometry.wall_segments:
            if point_segment_distance(spawn.x, spawn.y, seg) < PLAYER_RADIUS:
                raise MapError(
                    f"{label} at ({spawn.x}, {spawn.y}) inside wall {seg}")

    bx0, by0, bx1, by1 = geometry.bombsite
    if not (bx1 > bx0 and by1 > by0):
        raise MapError(f"bombsite {geometry.bombsite} has non-positive area")
    if not (geometry.in_bounds(bx0, by0) and geometry.in_bounds(bx1, by1)):
        raise MapError(f"bombsite {geometry.bombsite} outside bounds")

    for a, b in geometry.edges:
        for end in (a, b):
            if end not in geometry.waypoints:
                raise MapError(f"edge ({a}, {b}) references unknown waypoint {end!r}")

    if geometry.waypoints:
        cx, cy = geometry.bombsite_center()
        anchors = {
            "attacker_spawn": nearest_waypoint(
                geometry, geometry.attacker_spawn.x, geometry.attacker_spawn.y),
            "defender_spawn": nearest_waypoint(
                geometry, geometry.defender_spawn.x, geometry.defender_spawn.y),
            "bombsite": nearest_waypoint(geometry, cx, cy),
        }
        component = _reachable_from(geometry, anchors["attacker_spawn"])
        for label, wp in anchors.items():
            if wp not in component:
                raise MapError(
                    f"nav graph does not connect attacker_spawn to {label} "
                    f"(waypoint {wp!r})")


def _reachable_from(geometry: MapGeometry, start: str) -> set[str]:
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nxt, _ in geometry.adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def nearest_waypoint(geometry: MapGeometry, x: float, y: float) -> str:
    if not geometry.waypoints:
        raise MapError("map has no waypoints")
    return min(geometry.waypoints,
               key=lambda k: math.dist(geometry.waypoints[k], (x, y)))


def shortest_path(geometry: MapGeometry, start: str, goal: str) -> list[str]:
    """Dijkstra over the waypoint graph; returns [start, ..., goal].

    Raises MapError when no path exists.
    """
    if start == goal:
        return [start]
    dist = {start: 0.0}
    prev: dict[str, str] = {}
    heap = [(0.0, start)]
    done: set[str] = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        if node == goal:
            path = [node]
            while node != start:
                node = prev[node]
                path.append(node)
            return path[::-1]
        done.add(node)
        for nxt, w in geometry.adjacency[node]:
            nd = d + w
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                prev[nxt] = node
                heapq.heappush(heap, (nd, nxt))
    raise MapError(f"no path from {start!r} to {goal!r}")


def walkable_line(geometry: MapGeometry, a: tuple[float, float],
                  b: tuple[float, float]) -> bool:
    """True if the straight line a->b crosses no wall segment."""
    line = (a[0], a[1], b[0], b[1])
    return not any(segments_cross(line, seg) for seg in geometry.wall_segments)


ASCENT_MINI = """\
# Built-in 40 x 40 m map: one bombsite, two spawns, a mid chokepoint at
# y=12 and two gates at y=24 (left flank and the site entrance).
name: ascent_mini
bounds: 0 0 40 40
attacker_spawn: 20 4
defender_spawn: 20 36
bombsite: 26 24 34 32

# boundary
wall: 0 0 40 0
wall: 40 0 40 40
wall: 40 40 0 40
wall: 0 40 0 0

# lower band, mid gap x in [16, 24]
wall: 0 12 16 12
wall: 24 12 40 12

# upper band, left gap x in [8, 16] and right gap x in [26, 40]
wall: 0 24 8 24
wall: 16 24 26 24

waypoint: aspawn 20 4
waypoint: mid_south 20 10
waypoint: mid_gate 20 13
waypoint: center 20 18
waypoint: left_gate 12 24
waypoint: left_north 12 30
waypoint: right_gate 32 23
waypoint: site 30 28
waypoint: site_north 30 33
waypoint: dspawn 20 36

edge: aspawn mid_south
edge: mid_south mid_gate
edge: mid_gate center
edge: center left_gate
edge: center right_gate
edge: left_gate left_north
edge: left_north dspawn
edge: right_gate site
edge: site site_north
edge: site_north dspawn
"""

MAP_TEMPLATE = """\
# Map template: edit coordinates (meters), keep every key below.
name: my_map
bounds: 0 0 40 40
attacker_spawn: 20 4
defender_spawn: 20 36
bombsite: 26 24 34 32

# boundary walls (extend with interior 'wall:' lines)
wall: 0 0 40 0
wall: 40 0 40 40
wall: 40 40 0 40
wall: 0 40 0 0

# waypoint graph: must connect both spawns and the bombsite
waypoint: aspawn 20 4
waypoint: mid 20 20
waypoint: site 30 28
waypoint: dspawn 20 36
edge: aspawn mid
edge: mid site
edge: mid dspawn
"""

_BUILTIN_MAPS = {"ascent_mini": ASCENT_MINI}


def builtin_map(name: str = "ascent_mini") -> MapGeometry:
    if name not in _BUILTIN_MAPS:
        raise MapError(f"unknown built-in map {name!r}; "
                       f"available: {sorted(_BUILTIN_MAPS)}")
    return load_map(_BUILTIN_MAPS[name])
