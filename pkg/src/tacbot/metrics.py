"""Behavioral feature extraction and the quantitative comparison suite:
histograms, KL/JS divergence, position heatmaps, 1D/2D earth mover's
distance, absolute summed difference, and the CPU inference benchmark.

KL and JS use natural log. EMD-2D solves the transportation problem
exactly with a transportation-simplex (network simplex specialised to
bipartite supply/demand), with Euclidean ground distance between cell
indices, so moving all mass from cell (0,0) to (4,0) costs exactly 4.
"""

from __future__ import annotations

import math
import platform
import time
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .net import Network, NetworkConfig, count_params
from .sensors import OBSERVATION_SIZE


# ---------------- behavioral features ----------------

@dataclass
class BehaviorFeatures:
    """Per (player, round) behavioral record extracted from match logs."""
    player_id: int
    side: str                 # "attack" | "defence"
    match_id: int
    round_id: int
    duration_ticks: int       # round length in ticks
    alive_ticks: int
    mean_speed: float         # m/s, xy displacement over alive time
    shots: int
    kills: int
    shots_per_kill: float
    plant_attempts: int
    plant_successes: int
    defuse_attempts: int
    defuse_successes: int
    ability_uses: int

    def value(self, feature: str) -> float:
        if feature == "duration_s":
            return self.duration_ticks / 16.0
        return float(getattr(self, feature))


FEATURES_BOTH = ("duration_s", "mean_speed", "shots", "shots_per_kill",
                 "kills", "ability_uses")
FEATURES_ATTACK = FEATURES_BOTH + ("plant_attempts", "plant_successes")
FEATURES_DEFENCE = FEATURES_BOTH + ("defuse_attempts", "defuse_successes")


class LogFormatError(ValueError):
    pass


def extract_features(records) -> list[BehaviorFeatures]:
    """One BehaviorFeatures per (player, round) from match-log records.

    Attempts count key-press onsets (planting/defusing flag rising
    edges); successes count completions credited to the acting player.
    alive_ticks counts tick records (pre-step snapshots plus the terminal
    one) where the player is alive; mean speed divides xy displacement by
    the number of alive movement intervals, so the terminal sample does
    not dilute it.
    """
    out: list[BehaviorFeatures] = []
    state = None
    for record in records:
        kind = record.get("type")
        if kind == "round_start":
            state = {
                "match": record["match"],
                "round": record["round"],
                "attackers": set(record["attackers"]),
                "prev": None,
                "alive_ticks": [0] * 4,
                "pairs": [0] * 4,
                "dist": [0.0] * 4,
                "shots": [0] * 4,
                "abilities": [0] * 4,
                "plant_att": [0] * 4,
                "plant_ok": [0] * 4,
                "defuse_att": [0] * 4,
                "defuse_ok": [0] * 4,
                "planting": [False] * 4,
                "defusing": [False] * 4,
                "bomb_phase": "carried",
            }
        elif kind == "tick":
            if state is None:
                raise LogFormatError("tick record before round_start")
            for ev in record["events"]:
                emitter = ev.get("emitter")
                if emitter is None:
                    continue
                if ev["kind"] == "shot":
                    state["shots"][emitter] += 1
                elif ev["kind"] == "grenade_explosion":
                    state["abilities"][emitter] += 1
            for entry in record["players"]:
                pid = entry["id"]
                if entry["alive"]:
                    state["alive_ticks"][pid] += 1
                    prev = state["prev"]
                    if prev is not None and prev[pid]["alive"]:
                        state["pairs"][pid] += 1
                        state["dist"][pid] += math.hypot(
                            entry["x"] - prev[pid]["x"],
                            entry["y"] - prev[pid]["y"])
                if entry["planting"] and not state["planting"][pid]:
                    state["plant_att"][pid] += 1
                if entry["defusing"] and not state["defusing"][pid]:
                    state["defuse_att"][pid] += 1
                state["planting"][pid] = entry["planting"]
                state["defusing"][pid] = entry["defusing"]
            phase = record["bomb"]["phase"]
            if phase == "planted" and state["bomb_phase"] != "planted":
                planter = record["bomb"]["planter"]
                if planter is not None:
                    state["plant_ok"][planter] += 1
            if phase == "defused" and state["bomb_phase"] != "defused":
                for entry in record["players"]:
                    if entry["defusing"]:
                        state["defuse_ok"][entry["id"]] += 1
            state["bomb_phase"] = phase
            state["prev"] = {e["id"]: e for e in record["players"]}
        elif kind == "round_end":
            if state is None:
                raise LogFormatError("round_end record before round_start")
            ticks = record["ticks"]
            for pid in range(4):
                stats = record["stats"][str(pid)]
                kills = stats["kills"]
                shots = state["shots"][pid]
                alive = state["alive_ticks"][pid]
                out.append(BehaviorFeatures(
                    player_id=pid,
                    side=("attack" if pid in state["attackers"]
                          else "defence"),
                    match_id=state["match"],
                    round_id=state["round"],
                    duration_ticks=ticks,
                    alive_ticks=alive,
                    mean_speed=(state["dist"][pid]
                                / (state["pairs"][pid] / 16.0)
                                if state["pairs"][pid] else 0.0),
                    shots=shots,
                    kills=kills,
                    shots_per_kill=shots / max(kills, 1),
                    plant_attempts=state["plant_att"][pid],
                    plant_successes=state["plant_ok"][pid],
                    defuse_attempts=state["defuse_att"][pid],
                    defuse_successes=state["defuse_ok"][pid],
                    ability_uses=state["abilities"][pid],
                ))
            state = None
    return out


# ---------------- histograms and divergences ----------------

@dataclass
class Histogram:
    bucket_edges: np.ndarray     # (K+1,), sorted
    probabilities: np.ndarray    # (K,), sums to 1
    sample_count: int

    def __post_init__(self):
        self.bucket_edges = np.asarray(self.bucket_edges, dtype=np.float64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.bucket_edges.ndim != 1 or self.probabilities.ndim != 1:
            raise ValueError("edges and probabilities must be 1D")
        if self.bucket_edges.shape[0] != self.probabilities.shape[0] + 1:
            raise ValueError("edge count must be bucket count + 1")
        if np.any(np.diff(self.bucket_edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if np.any(self.probabilities < 0):
            raise ValueError("negative probability")
        if abs(self.probabilities.sum() - 1.0) > 1e-9:
            raise ValueError(
                f"probabilities sum to {self.probabilities.sum()}, not 1")


# (bucket width, origin) per feature; counts use unit buckets centered on
# integers, durations 1 s bins, speeds 0.25 m/s bins.
FEATURE_BUCKETS = {
    "duration_s": (1.0, 0.0),
    "mean_speed": (0.25, 0.0),
}
_DEFAULT_COUNT_BUCKET = (1.0, -0.5)


def bucket_spec(feature: str) -> tuple[float, float]:
    return FEATURE_BUCKETS.get(feature, _DEFAULT_COUNT_BUCKET)


def _aligned_edges(lo: float, hi: float, width: float,
                   origin: float) -> np.ndarray:
    first = origin + math.floor((lo - origin) / width) * width
    count = max(1, int(math.ceil((hi - first) / width - 1e-12)))
    return first + width * np.arange(count + 1)


def histogram(values, width: float = 1.0, origin: float = 0.0) -> Histogram:
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot histogram an empty sample")
    edges = _aligned_edges(values.min(), values.max() + 1e-12, width, origin)
    counts, _ = np.histogram(values, bins=edges)
    return Histogram(edges, counts / values.size, int(values.size))


def histogram_pair(a, b, width: float = 1.0,
                   origin: float = 0.0) -> tuple[Histogram, Histogram]:
    """Two histograms over shared edges spanning the union support."""
    a = np.asarray(list(a), dtype=np.float64)
    b = np.asarray(list(b), dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("cannot histogram an empty sample")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max()) + 1e-12
    edges = _aligned_edges(lo, hi, width, origin)
    ca, _ = np.histogram(a, bins=edges)
    cb, _ = np.histogram(b, bins=edges)
    return (Histogram(edges, ca / a.size, int(a.size)),
            Histogram(edges, cb / b.size, int(b.size)))


def _check_edges(p: Histogram, q: Histogram) -> None:
    if not np.array_equal(p.bucket_edges, q.bucket_edges):
        raise ValueError("histograms have mismatched bucket edges")


def kl(p: Histogram, q: Histogram) -> float:
    """KL(P||Q) in nats; +inf when Q lacks mass somewhere P has it."""
    _check_edges(p, q)
    pv, qv = p.probabilities, q.probabilities
    support = pv > 0
    if np.any(qv[support] == 0):
        return math.inf
    return float(np.sum(pv[support] * np.log(pv[support] / qv[support])))


def js(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in nats; finite, within [0, ln 2]."""
    _check_edges(p, q)
    pv, qv = p.probabilities, q.probabilities
    m = 0.5 * (pv + qv)
    total = 0.0
    for dist in (pv, qv):
        support = dist > 0
        total += 0.5 * float(
            np.sum(dist[support] * np.log(dist[support] / m[support])))
    return min(total, math.log(2.0))


# ---------------- heatmaps ----------------

@dataclass
class Heatmap:
    grid: np.ndarray              # (ny, nx), non-negative, sums to 1
    cell_size: float
    origin: tuple[float, float]   # map-frame (xmin, ymin)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError("heatmap grid must be 2D")
        if np.any(self.grid < 0):
            raise ValueError("negative heatmap mass")


DEFAULT_HEATMAP_CELLS = 32


def build_heatmap(records, side: str, bounds=None,
                  cell_size: float | None = None) -> Heatmap:
    """Time-in-cell distribution over alive player-ticks for one side.

    ``bounds`` defaults to the bounds logged in the first round_start
    record. The default cell size puts 32 cells across the longer map
    axis. Positions outside bounds are clamped with a warning.
    """
    if side not in ("attack", "defence"):
        raise ValueError(f"side must be 'attack' or 'defence', got {side!r}")
    records = list(records)
    if bounds is None:
        for record in records:
            if record.get("type") == "round_start":
                bounds = record["bounds"]
                break
        if bounds is None:
            raise LogFormatError("no round_start record carries map bounds")
    x0, y0, x1, y1 = bounds
    if cell_size is None:
        cell_size = max(x1 - x0, y1 - y0) / DEFAULT_HEATMAP_CELLS
    nx = max(1, int(math.ceil((x1 - x0) / cell_size - 1e-12)))
    ny = max(1, int(math.ceil((y1 - y0) / cell_size - 1e-12)))
    grid = np.zeros((ny, nx), dtype=np.float64)
    tracked: set[int] = set()
    clamped = 0
    for record in records:
        kind = record.get("type")
        if kind == "round_start":
            ids = (record["attackers"] if side == "attack"
                   else record["defenders"])
            tracked = set(ids)
        elif kind == "tick":
            for entry in record["players"]:
                if entry["id"] not in tracked or not entry["alive"]:
                    continue
                ix = int((entry["x"] - x0) / cell_size)
                iy = int((entry["y"] - y0) / cell_size)
                if not (0 <= ix < nx and 0 <= iy < ny):
                    clamped += 1
                    ix = min(max(ix, 0), nx - 1)
                    iy = min(max(iy, 0), ny - 1)
                grid[iy, ix] += 1.0
    if clamped:
        warnings.warn(f"{clamped} positions outside bounds were clamped",
                      stacklevel=2)
    total = grid.sum()
    if total > 0:
        grid /= total
    return Heatmap(grid=grid, cell_size=cell_size, origin=(x0, y0))


def asd(p: Heatmap | np.ndarray, q: Heatmap | np.ndarray) -> float:
    """Absolute summed difference over corresponding cells."""
    pg = p.grid if isinstance(p, Heatmap) else np.asarray(p, dtype=np.float64)
    qg = q.grid if isinstance(q, Heatmap) else np.asarray(q, dtype=np.float64)
    if pg.shape != qg.shape:
        raise ValueError(f"shape mismatch: {pg.shape} vs {qg.shape}")
    return float(np.abs(pg - qg).sum())


def emd_1d_no_location(p: Heatmap | np.ndarray, q: Heatmap | np.ndarray,
                       n_buckets: int = 10) -> float:
    """EMD between the two heatmaps' cell-value distributions, ignoring
    locations: cell values are histogrammed (one count per cell) into
    equal-width buckets over the joint range; the distance unit is one
    bucket index."""
    pg = p.grid if isinstance(p, Heatmap) else np.asarray(p, dtype=np.float64)
    qg = q.grid if isinstance(q, Heatmap) else np.asarray(q, dtype=np.float64)
    if pg.shape != qg.shape:
        raise ValueError(f"shape mismatch: {pg.shape} vs {qg.shape}")
    pv, qv = pg.ravel(), qg.ravel()
    lo = min(pv.min(), qv.min())
    hi = max(pv.max(), qv.max())
    if hi - lo <= 0:
        return 0.0
    edges = np.linspace(lo, hi, n_buckets + 1)
    edges[-1] = np.nextafter(edges[-1], np.inf)
    cp, _ = np.histogram(pv, bins=edges)
    cq, _ = np.histogram(qv, bins=edges)
    fp = cp / pv.size
    fq = cq / qv.size
    return float(np.abs(np.cumsum(fp - fq)).sum())


# ---------------- exact 2D EMD ----------------

class TransportError(RuntimeError):
    pass


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    n, m = supply.size, demand.size
    flows: dict[tuple[int, int], float] = {}
    i = j = 0
    si, dj = supply[0], demand[0]
    while True:
        x = min(si, dj)
        flows[(i, j)] = x
        si -= x
        dj -= x
        if i == n - 1 and j == m - 1:
            break
        if si <= dj:
            if i < n - 1:
                i += 1
                si = supply[i]
            else:
                j += 1
                dj = demand[j]
        else:
            if j < m - 1:
                j += 1
                dj = demand[j]
            else:
                i += 1
                si = supply[i]
    return flows


def _tree_flows(cells, supply: np.ndarray, demand: np.ndarray) -> dict:
    """Unique arc flows induced on a spanning-tree basis by leaf peeling.

    Tiny negative flows (degeneracy noise) clip to zero.
    """
    res_s = supply.astype(np.float64).copy()
    res_d = demand.astype(np.float64).copy()
    row_cells: dict[int, set] = {}
    col_cells: dict[int, set] = {}
    for cell in cells:
        row_cells.setdefault(cell[0], set()).add(cell)
        col_cells.setdefault(cell[1], set()).add(cell)
    flows: dict[tuple[int, int], float] = {}
    leaves = [("r", i) for i, cs in row_cells.items() if len(cs) == 1]
    leaves += [("c", j) for j, cs in col_cells.items() if len(cs) == 1]
    remaining = set(cells)
    while leaves:
        side, k = leaves.pop()
        incident = row_cells[k] if side == "r" else col_cells[k]
        live = incident & remaining
        if not live:
            continue
        cell = next(iter(live))
        i, j = cell
        amount = res_s[i] if side == "r" else res_d[j]
        flows[cell] = max(amount, 0.0)
        res_s[i] -= amount
        res_d[j] -= amount
        remaining.discard(cell)
        other = ("c", j) if side == "r" else ("r", i)
        incident_other = row_cells[other[1]] if other[0] == "r" \
            else col_cells[other[1]]
        if len(incident_other & remaining) == 1:
            leaves.append(other)
    for cell in remaining:
        flows[cell] = 0.0
    return flows


def _transport_simplex(supply: np.ndarray, demand: np.ndarray,
                       cost: np.ndarray, max_iter: int | None = None) -> float:
    """Exact balanced transportation problem; returns the optimal cost.

    Supplies get tiny strictly-increasing perturbations (classic
    anti-degeneracy trick) during pivoting; once the basis is optimal
    (dual feasibility is independent of the supply vector), flows are
    re-derived on the basis tree from the unperturbed supplies, so
    clean instances price exactly.
    """
    n, m = cost.shape
    total = supply.sum()
    delta = total * 1e-13
    s = supply + delta * (np.arange(n) + 1)
    d = demand * (s.sum() / demand.sum())
    flows = _northwest_corner(s, d)
    if max_iter is None:
        max_iter = 200 * (n + m) + 2000
    tol = max(cost.max(), 1.0) * 1e-12

    for _ in range(max_iter):
        # duals from the basis tree
        u = np.full(n, np.nan)
        v = np.full(m, np.nan)
        row_adj: list[list[int]] = [[] for _ in range(n)]
        col_adj: list[list[int]] = [[] for _ in range(m)]
        for (i, j) in flows:
            row_adj[i].append(j)
            col_adj[j].append(i)
        u[0] = 0.0
        stack = [("r", 0)]
        while stack:
            side, k = stack.pop()
            if side == "r":
                for j in row_adj[k]:
                    if np.isnan(v[j]):
                        v[j] = cost[k, j] - u[k]
                        stack.append(("c", j))
            else:
                for i in col_adj[k]:
                    if np.isnan(u[i]):
                        u[i] = cost[i, k] - v[k]
                        stack.append(("r", i))
        if np.isnan(u).any() or np.isnan(v).any():
            raise TransportError("basis is not a spanning tree")

        reduced = cost - u[:, None] - v[None, :]
        enter = np.unravel_index(np.argmin(reduced), reduced.shape)
        if reduced[enter] >= -tol:
            break

        # cycle: unique basis-tree path from the entering row to column
        ei, ej = int(enter[0]), int(enter[1])
        parent: dict[tuple[str, int], tuple[str, int]] = {}
        start, goal = ("r", ei), ("c", ej)
        stack = [start]
        seen = {start}
        while stack:
            node = stack.pop()
            if node == goal:
                break
            side, k = node
            neighbors = (row_adj[k] if side == "r" else col_adj[k])
            for nb in neighbors:
                nxt = ("c", nb) if side == "r" else ("r", nb)
                if nxt not in seen:
                    seen.add(nxt)
                    parent[nxt] = node
                    stack.append(nxt)
        if goal not in parent and goal != start:
            raise TransportError("no cycle found for entering cell")
        path = [goal]
        while path[-1] != start:
            path.append(parent[path[-1]])
        path.reverse()    # r(ei) ... c(ej)

        # cells along the path alternate -theta, +theta ...
        cells = []
        for a, b in zip(path, path[1:]):
            (sa, ka), (sb, kb) = a, b
            cell = (ka, kb) if sa == "r" else (kb, ka)
            cells.append(cell)
        minus = cells[0::2]
        theta_cell = min(minus, key=lambda c: flows[c])
        theta = flows[theta_cell]
        for idx, cell in enumerate(cells):
            if idx % 2 == 0:
                flows[cell] -= theta
            else:
                flows[cell] += theta
        flows[(ei, ej)] = flows.get((ei, ej), 0.0) + theta
        del flows[theta_cell]
    else:
        raise TransportError(f"no convergence within {max_iter} pivots")

    exact = _tree_flows(list(flows.keys()), supply,
                        demand * (total / demand.sum()))
    return float(sum(f * cost[c] for c, f in exact.items()))


def emd_2d(p: Heatmap | np.ndarray, q: Heatmap | np.ndarray) -> float:
    """Exact 2D earth mover's distance between two normalized heatmaps,
    Euclidean ground metric between cell indices (cell units)."""
    pg = p.grid if isinstance(p, Heatmap) else np.asarray(p, dtype=np.float64)
    qg = q.grid if isinstance(q, Heatmap) else np.asarray(q, dtype=np.float64)
    if pg.shape != qg.shape:
        raise ValueError(f"shape mismatch: {pg.shape} vs {qg.shape}")
    for name, g in (("first", pg), ("second", qg)):
        if abs(g.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} heatmap is not normalized "
                             f"(sums to {g.sum()})")
    if np.array_equal(pg, qg):
        return 0.0
    py, px = np.nonzero(pg)
    qy, qx = np.nonzero(qg)
    supply = pg[py, px]
    demand = qg[qy, qx]
    dy = py[:, None] - qy[None, :]
    dx = px[:, None] - qx[None, :]
    cost = np.sqrt(dx * dx + dy * dy).astype(np.float64)
    return _transport_simplex(supply.copy(), demand.copy(), cost)


# ---------------- latency benchmark ----------------

def bench_inference(config: NetworkConfig, n_warmup: int = 50,
                    n_iters: int = 300, seed: int = 0) -> dict:
    """Single-thread float32 per-decision latency of Network.step.

    Returns mean/std milliseconds plus a machine descriptor.
    """
    if n_iters < 100:
        raise ValueError("n_iters must be >= 100")
    from threadpoolctl import threadpool_limits

    network = Network.initialize(config, seed=seed).astype(np.float32)
    rng = np.random.default_rng(seed)
    obs = rng.random((n_warmup + n_iters, OBSERVATION_SIZE),
                     dtype=np.float32)
    hidden = [(np.zeros((1, w), dtype=np.float32),
               np.zeros((1, w), dtype=np.float32))
              for w in config.lstm_widths]
    times = np.zeros(n_iters)
    with threadpool_limits(limits=1):
        for k in range(n_warmup):
            _, _, hidden = network.step(obs[k], hidden)
        for k in range(n_iters):
            t0 = time.perf_counter()
            _, _, hidden = network.step(obs[n_warmup + k], hidden)
            times[k] = time.perf_counter() - t0
    return {
        "params": count_params(config),
        "mean_ms": float(times.mean() * 1e3),
        "std_ms": float(times.std(ddof=1) * 1e3),
        "n_iters": n_iters,
        "n_warmup": n_warmup,
        "machine": f"{platform.machine()} {platform.processor()}".strip(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


# ---------------- heatmap rendering ----------------

# blue -> green -> yellow -> red, linearly interpolated per channel and
# rounded with rint; input is cell value / max cell value.
HEAT_RAMP_STOPS = ((0.0, (0, 0, 255)), (1.0 / 3.0, (0, 255, 0)),
                   (2.0 / 3.0, (255, 255, 0)), (1.0, (255, 0, 0)))


def ramp_rgb(t: np.ndarray) -> np.ndarray:
    """(..., ) in [0,1] -> (..., 3) uint8 via the documented ramp."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    xs = np.array([s[0] for s in HEAT_RAMP_STOPS])
    out = np.empty(t.shape + (3,), dtype=np.uint8)
    for ch in range(3):
        ys = np.array([s[1][ch] for s in HEAT_RAMP_STOPS], dtype=np.float64)
        out[..., ch] = np.rint(np.interp(t, xs, ys)).astype(np.uint8)
    return out


def render_heatmap(heatmap: Heatmap, path, scale: int = 16) -> None:
    """Write the heatmap as a lossless PNG; row 0 of the image is the
    map's top (max y), each cell drawn as a scale x scale block."""
    from PIL import Image

    grid = heatmap.grid
    peak = grid.max()
    t = grid / peak if peak > 0 else np.zeros_like(grid)
    rgb = ramp_rgb(t)
    rgb = rgb[::-1, :, :]   # y axis points up; images index down
    if scale > 1:
        rgb = np.kron(rgb, np.ones((scale, scale, 1), dtype=np.uint8))
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
