"""Grid-world navigation simulator.

An agent explores an initially unknown occupancy map while trying to reach a
transmitter.  Goal selection is pluggable: an oracle baseline that always
heads to the TX, wireless policies that follow the strongest estimated AoA
when the link state and SNR gates pass, a visual baseline that explores until
the target enters its field of view, and frontier exploration as the common
fallback.  Episodes are deterministic given (environment, tx, start, policy,
seeds).
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from .geometry import FREE, UNKNOWN, WALL, Environment, OccupancyMap, segments_intersect
from .raytrace import LinkState


class NoFrontier(Exception):
    """Map fully explored (no known-free cell borders unknown space)."""


class InvalidStart(Exception):
    pass


class Policy(Enum):
    BASELINE = "baseline"
    AOA_BY_SNR = "aoa_by_snr"
    AOA_WHEN_LOS = "aoa_when_los"
    AOA_WHEN_LOS_OR_FIRST_NLOS = "aoa_when_los_or_first_nlos"
    VISUAL_LOS = "visual_los"


_ADMISSIBLE_STATES = {
    Policy.AOA_BY_SNR: {LinkState.LOS, LinkState.FIRST_ORDER_NLOS,
                        LinkState.HIGHER_ORDER_NLOS, LinkState.OUTAGE},
    Policy.AOA_WHEN_LOS: {LinkState.LOS},
    Policy.AOA_WHEN_LOS_OR_FIRST_NLOS: {LinkState.LOS, LinkState.FIRST_ORDER_NLOS},
}


@dataclass
class NavConfig:
    step_m: float = 0.25
    replan_every: int = 15
    lookahead_m: float = 3.75       # wireless goal distance (15 steps)
    sense_radius_m: float = 3.0
    arrive_m: float = 0.3
    max_steps: int = 1000
    snr_gate_db: float = 10.0
    fov_deg: float = 79.0
    visual_range_m: float = 5.0
    occupancy_res: float = 0.25


@dataclass
class AgentState:
    position: np.ndarray
    heading_deg: float
    known_map: OccupancyMap
    steps_taken: int = 0


@dataclass
class EpisodeResult:
    policy: str
    env_id: int
    tx_id: int
    start: tuple
    success: bool
    steps: int
    baseline_steps: int = 0
    relative_time: float = float("nan")
    difficulty: str = ""
    trajectory: list = field(default_factory=list)  # (x, y, goal_source)

    def to_json(self) -> str:
        return json.dumps({
            "env_id": self.env_id, "tx_id": self.tx_id,
            "start": [self.start[0], self.start[1]],
            "policy": self.policy, "success": self.success,
            "steps": self.steps, "baseline_steps": self.baseline_steps,
            "relative_time": self.relative_time, "difficulty": self.difficulty,
            "trajectory": [{"x": p[0], "y": p[1], "goal_source": p[2]}
                           for p in self.trajectory],
        })


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

_NEIGH = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_SQRT2 = math.sqrt(2.0)


def _traversable(occ: OccupancyMap, unknown_ok: bool) -> np.ndarray:
    if unknown_ok:
        return occ.cells != WALL
    return occ.cells == FREE


def _as_cell(occ: OccupancyMap, loc) -> tuple:
    """Either an integer (ix, iy) cell or a metric point."""
    if isinstance(loc, tuple) and len(loc) == 2 \
            and all(isinstance(v, (int, np.integer)) for v in loc):
        return loc
    return occ.cell_of(loc)


def plan_shortest(occ: OccupancyMap, start, goal, unknown_ok: bool = False):
    """8-connected A* path of (ix, iy) cells; empty list if unreachable.

    Diagonal moves cost sqrt(2); the octile heuristic keeps it optimal.
    """
    free = _traversable(occ, unknown_ok)
    s = _as_cell(occ, start)
    g = _as_cell(occ, goal)
    if not (free[s] and free[g]):
        return []
    if s == g:
        return [s]
    nx, ny = occ.nx, occ.ny

    def h(c):
        dx = abs(c[0] - g[0])
        dy = abs(c[1] - g[1])
        return (dx + dy) + (_SQRT2 - 2.0) * min(dx, dy)

    dist = {s: 0.0}
    came = {}
    seq = 0
    heap = [(h(s), 0.0, seq, s)]
    closed = set()
    while heap:
        f, d, _, cur = heapq.heappop(heap)
        if cur == g:
            path = [cur]
            while cur in came:
                cur = came[cur]
                path.append(cur)
            return path[::-1]
        if cur in closed:
            continue
        closed.add(cur)
        for dx, dy in _NEIGH:
            n = (cur[0] + dx, cur[1] + dy)
            if not (0 <= n[0] < nx and 0 <= n[1] < ny) or not free[n]:
                continue
            nd = d + (_SQRT2 if dx and dy else 1.0)
            if nd < dist.get(n, math.inf) - 1e-12:
                dist[n] = nd
                came[n] = cur
                seq += 1
                heapq.heappush(heap, (nd + h(n), nd, seq, n))
    return []


def _distance_map(occ: OccupancyMap, start, unknown_ok: bool = False):
    """Dijkstra flood over traversable cells; inf where unreachable."""
    free = _traversable(occ, unknown_ok)
    out = np.full(occ.cells.shape, np.inf)
    s = _as_cell(occ, start)
    if not free[s]:
        return out
    out[s] = 0.0
    heap = [(0.0, s)]
    nx, ny = occ.nx, occ.ny
    while heap:
        d, cur = heapq.heappop(heap)
        if d > out[cur]:
            continue
        for dx, dy in _NEIGH:
            n = (cur[0] + dx, cur[1] + dy)
            if not (0 <= n[0] < nx and 0 <= n[1] < ny) or not free[n]:
                continue
            nd = d + (_SQRT2 if dx and dy else 1.0)
            if nd < out[n] - 1e-12:
                out[n] = nd
                heapq.heappush(heap, (nd, n))
    return out


def frontier_cells(known: OccupancyMap) -> np.ndarray:
    """Known-free cells 4-adjacent to unknown cells; boolean grid."""
    freec = known.cells == FREE
    unk = known.cells == UNKNOWN
    near_unres = np.zeros_like(unk)
    near_unres[1:, :] |= unk[:-1, :]
    near_unres[:-1, :] |= unk[1:, :]
    near_unres[:, 1:] |= unk[:, :-1]
    near_unres[:, :-1] |= unk[:, 1:]
    return freec & near_unres


def frontier_goal(known: OccupancyMap, pos) -> np.ndarray:
    """Centroid of the nearest frontier cluster, snapped onto the cluster.

    Clusters are 8-connected components of frontier cells; nearest means the
    smallest traversable-path distance from pos to any cluster cell.  Ties
    break to the cluster containing the lowest flat cell index.
    """
    fc = frontier_cells(known)
    if not fc.any():
        raise NoFrontier("no frontier cells remain")
    labels, n = ndimage.label(fc, structure=np.ones((3, 3), dtype=int))
    dmap = _distance_map(known, pos, unknown_ok=False)
    best = None
    for lab in range(1, n + 1):
        cells = np.argwhere(labels == lab)
        d = dmap[cells[:, 0], cells[:, 1]].min()
        if not np.isfinite(d):
            continue
        lowest = int((cells[:, 0] * known.ny + cells[:, 1]).min())
        key = (d, lowest)
        if best is None or key < best[0]:
            centroid = cells.mean(axis=0)
            off = cells - centroid
            snap = cells[int(np.argmin((off ** 2).sum(axis=1)))]
            best = (key, snap)
    if best is None:
        raise NoFrontier("no reachable frontier cluster")
    return known.center_of(int(best[1][0]), int(best[1][1]))


def wireless_goal(pos, estimates, state_pred: LinkState, policy: Policy,
                  cfg: NavConfig, side_m: float):
    """Point lookahead_m along the strongest path's AoA, or None if the
    policy's SNR/state gate fails."""
    if policy not in _ADMISSIBLE_STATES or not estimates:
        return None
    strongest = max(estimates, key=lambda e: e.snr_db)
    if strongest.snr_db < cfg.snr_gate_db:
        return None
    if state_pred not in _ADMISSIBLE_STATES[policy]:
        return None
    ang = math.radians(strongest.aoa_deg)
    goal = np.asarray(pos) + cfg.lookahead_m * np.array([math.cos(ang), math.sin(ang)])
    return np.clip(goal, 0.1, side_m - 0.1)


def visual_detect(env: Environment, pos, heading_deg: float, tx,
                  fov_deg: float = 79.0, range_m: float = 5.0) -> bool:
    """Target visible: within range, inside the field of view, and LOS."""
    pos = np.asarray(pos, float)
    tx = np.asarray(tx, float)
    d = np.linalg.norm(tx - pos)
    if d > range_m or d < 1e-9:
        return d < 1e-9
    bearing = math.degrees(math.atan2(tx[1] - pos[1], tx[0] - pos[0]))
    off = (bearing - heading_deg + 180.0) % 360.0 - 180.0
    if abs(off) > fov_deg / 2.0:
        return False
    hit = segments_intersect(pos[None, :], tx[None, :], env.walls)
    return not bool(hit.any())


# ---------------------------------------------------------------------------
# episode
# ---------------------------------------------------------------------------

class NavWorld:
    """True map plus sensing for one environment; shared across episodes."""

    def __init__(self, env: Environment, cfg: NavConfig = NavConfig()):
        self.env = env
        self.cfg = cfg
        self.true_map = OccupancyMap.from_environment(env, cfg.occupancy_res)
        r = int(math.ceil(cfg.sense_radius_m / cfg.occupancy_res))
        ij = np.mgrid[-r:r + 1, -r:r + 1].reshape(2, -1).T
        keep = (ij ** 2).sum(axis=1) * cfg.occupancy_res ** 2 <= cfg.sense_radius_m ** 2
        self._disc = ij[keep]

    def reveal(self, known: OccupancyMap, pos) -> int:
        """Mark true cell states within the sensing disc, LOS-gated.

        Returns the number of newly revealed cells (0 when standing in
        fully sensed surroundings).
        """
        c = known.cell_of(pos)
        cand = self._disc + np.array(c)
        ok = ((cand[:, 0] >= 0) & (cand[:, 0] < known.nx)
              & (cand[:, 1] >= 0) & (cand[:, 1] < known.ny))
        cand = cand[ok]
        unknown = known.cells[cand[:, 0], cand[:, 1]] == UNKNOWN
        cand = cand[unknown]
        if not len(cand):
            return 0
        centers = np.stack([known.origin[0] + (cand[:, 0] + 0.5) * known.resolution,
                            known.origin[1] + (cand[:, 1] + 0.5) * known.resolution], axis=1)
        p = np.broadcast_to(np.asarray(pos, float), centers.shape)
        blocked = segments_intersect(p, centers, self.env.walls).any(axis=1)
        vis = cand[~blocked]
        known.cells[vis[:, 0], vis[:, 1]] = self.true_map.cells[vis[:, 0], vis[:, 1]]
        revealed = len(vis)
        # a wall cell occludes its own center; sense its near face instead
        occluded = cand[blocked]
        if len(occluded):
            tw = self.true_map.cells[occluded[:, 0], occluded[:, 1]] == WALL
            wc = occluded[tw]
            if len(wc):
                centers_w = np.stack(
                    [known.origin[0] + (wc[:, 0] + 0.5) * known.resolution,
                     known.origin[1] + (wc[:, 1] + 0.5) * known.resolution], axis=1)
                ppos = np.asarray(pos, float)
                d = centers_w - ppos
                norm = np.linalg.norm(d, axis=1, keepdims=True)
                norm[norm == 0] = 1.0
                face = centers_w - d / norm * (0.75 * known.resolution)
                pface = np.broadcast_to(ppos, face.shape)
                seen = ~segments_intersect(pface, face, self.env.walls).any(axis=1)
                hit = wc[seen]
                known.cells[hit[:, 0], hit[:, 1]] = WALL
                revealed += len(hit)
        return revealed


def run_episode(world: NavWorld, tx_id: int, start, policy: Policy,
                estimates_provider=None, baseline_steps: int = 0) -> EpisodeResult:
    """One navigation episode; returns steps, success and the trajectory.

    estimates_provider maps an agent position to (estimates, predicted state)
    and is required for the wireless policies.
    """
    cfg = world.cfg
    env = world.env
    tx = env.tx[tx_id]
    pos = np.asarray(start, dtype=np.float64).copy()
    if world.true_map.cells[world.true_map.cell_of(pos)] != FREE:
        raise InvalidStart(f"start {start} not in free space")
    known = OccupancyMap.unknown_like(world.true_map)
    agent = AgentState(position=pos, heading_deg=0.0, known_map=known)
    world.reveal(known, pos)

    goal = None
    goal_source = "none"
    plan: list = []
    target_found = False
    traj = [(float(pos[0]), float(pos[1]), "start")]

    def choose_goal():
        nonlocal goal, goal_source, target_found
        if policy is Policy.BASELINE:
            goal, goal_source = tx.copy(), "oracle"
            return
        if policy is Policy.VISUAL_LOS:
            if target_found:
                goal, goal_source = tx.copy(), "visual"
                return
        elif estimates_provider is not None:
            ests, state_pred = estimates_provider(agent.position)
            wg = wireless_goal(agent.position, ests, state_pred, policy, cfg, env.side_m)
            if wg is not None:
                goal, goal_source = wg, "wireless"
                return
        try:
            goal, goal_source = frontier_goal(known, agent.position), "frontier"
        except NoFrontier:
            goal, goal_source = None, "none"

    map_version = 1
    failed_plan_memo = set()

    def replan():
        nonlocal plan
        if goal is None:
            plan = []
            return
        gcell = known.cell_of(goal)
        if known.cells[gcell] == WALL:
            gcell = _nearest_traversable(known, gcell)
            if gcell is None:
                plan = []
                return
        here = known.cell_of(agent.position)
        memo = (here, gcell, map_version)
        if memo in failed_plan_memo:
            plan = []
            return
        path = plan_shortest(known, here, gcell, unknown_ok=True)
        plan = path[1:] if len(path) > 1 else []
        if not plan and here != gcell:
            failed_plan_memo.add(memo)

    if policy is Policy.VISUAL_LOS and visual_detect(
            env, pos, agent.heading_deg, tx, cfg.fov_deg, cfg.visual_range_m):
        target_found = True
    success = np.linalg.norm(pos - tx) <= cfg.arrive_m
    steps = 0
    while not success and steps < cfg.max_steps:
        if steps % cfg.replan_every == 0:
            choose_goal()
            replan()
        if not plan:
            choose_goal()
            replan()
        if plan:
            nxt = plan.pop(0)
            if world.true_map.cells[nxt] == WALL:
                known.cells[nxt] = WALL
                map_version = map_version + 1
                plan = []
                continue  # replan without consuming a step
            new_pos = world.true_map.center_of(*nxt)
            agent.heading_deg = math.degrees(math.atan2(new_pos[1] - agent.position[1],
                                                        new_pos[0] - agent.position[0]))
            agent.position = new_pos
        # standing still still burns a step (fully explored, no goal)
        steps += 1
        agent.steps_taken = steps
        if world.reveal(known, agent.position):
            map_version += 1
        traj.append((float(agent.position[0]), float(agent.position[1]), goal_source))
        if policy is Policy.VISUAL_LOS and not target_found:
            if visual_detect(env, agent.position, agent.heading_deg, tx,
                             cfg.fov_deg, cfg.visual_range_m):
                target_found = True
                choose_goal()
                replan()
        success = np.linalg.norm(agent.position - tx) <= cfg.arrive_m

    res = EpisodeResult(policy=policy.value, env_id=env.seed, tx_id=tx_id,
                        start=(float(start[0]), float(start[1])),
                        success=bool(success), steps=steps, trajectory=traj)
    if baseline_steps:
        res.baseline_steps = baseline_steps
        res.relative_time = steps / baseline_steps
    return res


def _nearest_traversable(occ: OccupancyMap, cell):
    """Closest non-wall cell by squared distance; lowest flat index ties."""
    cand = np.argwhere(occ.cells != WALL)
    if not len(cand):
        return None
    d2 = ((cand - np.array(cell)) ** 2).sum(axis=1)
    flat = cand[:, 0] * occ.ny + cand[:, 1]
    order = np.lexsort((flat, d2))
    return tuple(cand[order[0]])


def classify_difficulty(baseline_steps) -> list:
    """Tercile labels over the episode set; ties fall to the easier tier."""
    arr = np.asarray(baseline_steps)
    if arr.size == 0:
        raise ValueError("empty episode set")
    srt = np.sort(arr)
    n = arr.size
    t1 = srt[int(math.ceil(n / 3)) - 1]
    t2 = srt[int(math.ceil(2 * n / 3)) - 1]
    out = []
    for v in arr:
        if v <= t1:
            out.append("easy")
        elif v <= t2:
            out.append("moderate")
        else:
            out.append("hard")
    return out
