"""2D indoor environments: floor-plan generation, visibility and occupancy queries.

Environments are rectilinear: an axis-aligned square outer boundary partitioned
into rooms by axis-aligned interior walls with door openings.  Walls are
zero-thickness segments tagged with a material id.  All randomness flows from
explicit seeds; environments are immutable once built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

# Point-on-segment / intersection tolerance in meters.  Endpoints touching
# count as an intersection.
EPS = 1e-9


class GenerationFailed(Exception):
    """Floor-plan constraints could not be satisfied (over-constrained config)."""


class PlacementFailed(Exception):
    """Transmitter placement constraints could not be satisfied."""


@dataclass(frozen=True)
class Material:
    """Dielectric wall material at a fixed carrier frequency."""

    permittivity_rel: float
    conductivity: float  # S/m
    frequency_hz: float

    def __post_init__(self):
        if self.permittivity_rel < 1.0:
            raise ValueError("relative permittivity must be >= 1")
        if self.conductivity < 0.0:
            raise ValueError("conductivity must be >= 0")

    @property
    def complex_permittivity(self) -> complex:
        eps0 = 8.8541878128e-12
        return self.permittivity_rel - 1j * self.conductivity / (
            2.0 * np.pi * self.frequency_hz * eps0
        )


# ITU layered drywall at 28 GHz.  Every wall reflects as drywall; material id
# 1 marks thick structural walls that block transmission entirely, id 0 light
# partitions that a signal can penetrate once with fixed loss.
DRYWALL_28GHZ = Material(permittivity_rel=2.94, conductivity=0.1226, frequency_hz=28e9)
MAT_PARTITION = 0
MAT_STRUCTURAL = 1
DEFAULT_MATERIALS = {MAT_PARTITION: DRYWALL_28GHZ, MAT_STRUCTURAL: DRYWALL_28GHZ}


@dataclass(frozen=True)
class Environment:
    """Square floor plan with walls, materials and transmitter locations.

    walls is an (W, 4) float array of segment endpoints (x1, y1, x2, y2) in
    meters, wall_materials an (W,) int array of material ids, tx an (T, 2)
    float array of transmitter positions.
    """

    side_m: float
    walls: np.ndarray
    wall_materials: np.ndarray
    tx: np.ndarray
    seed: int
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))

    def __post_init__(self):
        object.__setattr__(self, "walls", np.asarray(self.walls, dtype=np.float64).reshape(-1, 4))
        object.__setattr__(self, "wall_materials", np.asarray(self.wall_materials, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "tx", np.asarray(self.tx, dtype=np.float64).reshape(-1, 2))
        self.walls.setflags(write=False)
        self.wall_materials.setflags(write=False)
        self.tx.setflags(write=False)
        validate_environment(self)

    @property
    def n_walls(self) -> int:
        return self.walls.shape[0]

    def material_of(self, wall_idx: int) -> Material:
        return self.materials[int(self.wall_materials[wall_idx])]

    def to_json(self) -> str:
        rec = {
            "side_m": self.side_m,
            "walls": [
                {"x1": w[0], "y1": w[1], "x2": w[2], "y2": w[3], "material": int(m)}
                for w, m in zip(self.walls.tolist(), self.wall_materials.tolist())
            ],
            "tx": [{"x": p[0], "y": p[1]} for p in self.tx.tolist()],
            "seed": int(self.seed),
        }
        return json.dumps(rec)

    @staticmethod
    def from_json(text: str) -> "Environment":
        rec = json.loads(text)
        walls = np.array([[w["x1"], w["y1"], w["x2"], w["y2"]] for w in rec["walls"]], dtype=np.float64)
        mats = np.array([w.get("material", 0) for w in rec["walls"]], dtype=np.int64)
        tx = np.array([[p["x"], p["y"]] for p in rec["tx"]], dtype=np.float64).reshape(-1, 2)
        return Environment(side_m=float(rec["side_m"]), walls=walls, wall_materials=mats,
                           tx=tx, seed=int(rec["seed"]))


def validate_environment(env: Environment) -> None:
    s = env.side_m
    w = env.walls
    if w.size:
        if np.any(w[:, [0, 2]] < -EPS) or np.any(w[:, [0, 2]] > s + EPS) \
                or np.any(w[:, [1, 3]] < -EPS) or np.any(w[:, [1, 3]] > s + EPS):
            raise ValueError("wall endpoint outside bounds")
    if env.tx.size:
        if np.any(env.tx < -EPS) or np.any(env.tx > s + EPS):
            raise ValueError("tx location outside bounds")
        d = point_segment_distance(env.tx, w)
        if d.size and np.any(d.min(axis=1) < 0.1 - EPS):
            raise ValueError("tx location too close to a wall (min clearance 0.1 m)")
    _check_boundary_covered(env)


def _check_boundary_covered(env: Environment) -> None:
    """Every edge of the bounding square must be covered by wall segments."""
    s = env.side_m
    w = env.walls
    for axis, fixed in ((1, 0.0), (1, s), (0, 0.0), (0, s)):
        # walls lying fully on this boundary line
        on = (np.abs(w[:, axis] - fixed) < EPS) & (np.abs(w[:, axis + 2] - fixed) < EPS)
        free_ax = 1 - axis
        iv = np.sort(np.stack([w[on][:, free_ax], w[on][:, free_ax + 2]], axis=1), axis=1)
        iv = iv[np.argsort(iv[:, 0])] if iv.size else iv
        cover = 0.0
        for a, b in iv:
            if a > cover + EPS:
                raise ValueError("outer boundary not fully covered by walls")
            cover = max(cover, b)
        if cover < s - EPS:
            raise ValueError("outer boundary not fully covered by walls")


# ---------------------------------------------------------------------------
# segment predicates (vectorized cores shared with the ray tracer)
# ---------------------------------------------------------------------------

def point_segment_distance(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distances from points (P,2) to segments (W,4); returns (P, W)."""
    points = np.atleast_2d(points)
    if segs.size == 0:
        return np.full((points.shape[0], 0), np.inf)
    a = segs[None, :, 0:2]
    b = segs[None, :, 2:4]
    ab = b - a
    ap = points[:, None, :] - a
    denom = np.einsum("pwk,pwk->pw", ab, ab)
    denom = np.where(denom < EPS * EPS, 1.0, denom)
    t = np.clip(np.einsum("pwk,pwk->pw", ap, ab) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def segments_intersect(p1: np.ndarray, p2: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Closed-segment intersection of query segments against wall segments.

    p1, p2: (P, 2) query segment endpoints; walls: (W, 4).
    Returns boolean (P, W).  Touching within EPS counts as intersection,
    including collinear overlap.
    """
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    if walls.size == 0:
        return np.zeros((p1.shape[0], 0), dtype=bool)
    a = walls[None, :, 0:2]
    b = walls[None, :, 2:4]
    q1 = p1[:, None, :]
    q2 = p2[:, None, :]
    r = q2 - q1
    s = b - a
    qa = a - q1
    rxs = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qaxr = qa[..., 0] * r[..., 1] - qa[..., 1] * r[..., 0]
    qaxs = qa[..., 0] * s[..., 1] - qa[..., 1] * s[..., 0]
    rlen = np.linalg.norm(r, axis=-1)
    slen = np.linalg.norm(s, axis=-1)
    scale = np.maximum(rlen * slen, EPS)
    parallel = np.abs(rxs) <= EPS * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        t = qaxs / rxs   # along query
        u = qaxr / rxs   # along wall
    tol_t = EPS / np.maximum(rlen, EPS)
    tol_u = EPS / np.maximum(slen, EPS)
    proper = (~parallel) & (t >= -tol_t) & (t <= 1 + tol_t) & (u >= -tol_u) & (u <= 1 + tol_u)
    # collinear overlap: parallel, wall start within EPS of the query line,
    # and overlapping spans
    nondeg = rlen >= EPS
    collinear = parallel & nondeg & (np.abs(qaxr) <= EPS * np.maximum(rlen, EPS))
    if np.any(collinear):
        rr = np.einsum("pwk,pwk->pw", r, r)
        rr = np.where(rr < EPS * EPS, 1.0, rr)
        t0 = np.einsum("pwk,pwk->pw", qa, r) / rr
        t1 = t0 + np.einsum("pwk,pwk->pw", s, r) / rr
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        overlap = (hi >= -tol_t) & (lo <= 1 + tol_t)
        collinear &= overlap
    out = (proper & nondeg) | collinear
    # degenerate (point) queries hit only walls they touch
    deg_rows = np.nonzero(rlen[:, 0] < EPS)[0]
    if len(deg_rows):
        d = point_segment_distance(p1[deg_rows], walls)
        out[deg_rows] = d <= EPS
    return out


def line_of_sight(env: Environment, a, b) -> bool:
    """True iff the open segment a-b is not blocked by any wall."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.linalg.norm(b - a) < EPS:
        return True
    hit = segments_intersect(a[None, :], b[None, :], env.walls)
    return not bool(hit.any())


def line_of_sight_mask(env: Environment, origin, points: np.ndarray) -> np.ndarray:
    """Vectorized LOS from one origin to many points; returns boolean (P,)."""
    origin = np.asarray(origin, dtype=np.float64)
    points = np.atleast_2d(points)
    o = np.broadcast_to(origin, points.shape)
    hit = segments_intersect(o, points, env.walls)
    return ~hit.any(axis=1)


# ---------------------------------------------------------------------------
# floor-plan generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenConfig:
    side_m: float = 24.0
    rooms_min: int = 4
    rooms_max: int = 10
    min_room_m: float = 1.5
    door_m: float = 0.8
    door_max_m: float = 2.2
    open_wall_prob: float = 0.3   # chance a split wall keeps only one stub
    structural_prob: float = 0.5  # chance an interior wall is thick/opaque
    max_attempts: int = 40

    def __post_init__(self):
        if self.rooms_min < 1 or self.rooms_max < self.rooms_min:
            raise ValueError("invalid room count range")
        if self.min_room_m < 1.5 - EPS:
            raise ValueError("min room dimension must be >= 1.5 m")
        if self.door_m < 0.8 - EPS:
            raise ValueError("door width must be >= 0.8 m")


def generate_environment(seed: int, config: GenConfig = GenConfig()) -> Environment:
    """Generate a rectilinear floor plan by recursive axis-aligned splitting.

    Each split wall carries one door opening, which keeps the free space
    connected by construction.  Deterministic for fixed (seed, config).
    """
    rng = np.random.default_rng(seed)
    for _ in range(config.max_attempts):
        result = _try_generate(rng, config)
        if result is not None:
            walls, mats = result
            s = config.side_m
            boundary = np.array([
                [0.0, 0.0, s, 0.0],
                [s, 0.0, s, s],
                [s, s, 0.0, s],
                [0.0, s, 0.0, 0.0],
            ])
            all_walls = np.vstack([boundary] + walls) if walls else boundary
            all_mats = np.concatenate([np.full(4, MAT_STRUCTURAL, dtype=np.int64),
                                       np.asarray(mats, dtype=np.int64)])
            return Environment(side_m=s, walls=all_walls, wall_materials=all_mats,
                               tx=np.zeros((0, 2)), seed=int(seed))
    raise GenerationFailed(
        f"could not generate a floor plan for seed={seed} with {config}")


def _try_generate(rng: np.random.Generator, cfg: GenConfig):
    s = cfg.side_m
    n_rooms = int(rng.integers(cfg.rooms_min, cfg.rooms_max + 1))
    rooms = [(0.0, 0.0, s, s)]  # (x0, y0, x1, y1)
    walls: list[np.ndarray] = []
    mats: list[int] = []
    guard = 0
    while len(rooms) < n_rooms:
        guard += 1
        if guard > 200:
            return None
        # rooms wide enough to split into two >= min_room halves
        splittable = [i for i, r in enumerate(rooms)
                      if max(r[2] - r[0], r[3] - r[1]) >= 2 * cfg.min_room_m]
        if not splittable:
            return None
        idx = splittable[int(rng.integers(len(splittable)))]
        x0, y0, x1, y1 = rooms[idx]
        w_, h_ = x1 - x0, y1 - y0
        if w_ >= 2 * cfg.min_room_m and h_ >= 2 * cfg.min_room_m:
            vertical = bool(rng.random() < (w_ / (w_ + h_)))
        else:
            vertical = w_ >= 2 * cfg.min_room_m
        if vertical:
            cut = float(rng.uniform(x0 + cfg.min_room_m, x1 - cfg.min_room_m))
            segs = _wall_with_door(rng, cfg, cut, y0, y1, axis="x")
            rooms[idx] = (x0, y0, cut, y1)
            rooms.append((cut, y0, x1, y1))
        else:
            cut = float(rng.uniform(y0 + cfg.min_room_m, y1 - cfg.min_room_m))
            segs = _wall_with_door(rng, cfg, cut, x0, x1, axis="y")
            rooms[idx] = (x0, y0, x1, cut)
            rooms.append((x0, cut, x1, y1))
        mat = MAT_STRUCTURAL if rng.random() < cfg.structural_prob else MAT_PARTITION
        walls.extend(segs)
        mats.extend([mat] * len(segs))
    return walls, mats


def _wall_with_door(rng, cfg: GenConfig, cut: float, lo: float, hi: float, axis: str):
    """Split wall at coordinate `cut` spanning [lo, hi], minus one opening.

    Openings range from door width up to door_max_m; with open_wall_prob the
    wall keeps a single stub (open-plan partial wall).
    """
    span = hi - lo
    if rng.random() < cfg.open_wall_prob:
        # partial wall: one stub on a random side, opening covers the rest
        stub = float(rng.uniform(0.4, max(0.5, span - cfg.door_m - 0.2)))
        side_lo = bool(rng.random() < 0.5)
        pieces = [(lo, lo + stub)] if side_lo else [(hi - stub, hi)]
    else:
        width = float(rng.uniform(cfg.door_m, max(cfg.door_m + 0.01,
                                                  min(cfg.door_max_m, span - 0.4))))
        start = float(rng.uniform(lo + 0.1, hi - 0.1 - width))
        pieces = [(lo, start), (start + width, hi)]
    segs = []
    for a, b in pieces:
        if b - a > EPS:
            if axis == "x":
                segs.append(np.array([cut, a, cut, b]))
            else:
                segs.append(np.array([a, cut, b, cut]))
    return segs


def place_transmitters(env: Environment, n: int, seed: int,
                       min_pairwise_m: float = 1.0,
                       wall_clearance_m: float = 0.1) -> Environment:
    """Sample n TX points uniformly over free space with clearance constraints."""
    if n < 1:
        raise PlacementFailed("need at least one transmitter")
    rng = np.random.default_rng(seed)
    placed = np.empty((0, 2))
    rejections = 0
    while len(placed) < n:
        p = rng.uniform(0.0, env.side_m, size=2)
        if (point_segment_distance(p[None, :], env.walls).min() < wall_clearance_m
                or (len(placed) and np.linalg.norm(placed - p, axis=1).min() < min_pairwise_m)):
            rejections += 1
            if rejections > 5000 + 200 * n:
                raise PlacementFailed(f"could not place {n} transmitters")
            continue
        placed = np.vstack([placed, p])
    return replace(env, tx=placed)


# ---------------------------------------------------------------------------
# receiver grid and occupancy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RxGrid:
    """Regular receiver grid; valid marks cells whose square avoids all walls."""

    origin: tuple
    nx: int
    ny: int
    spacing: float
    valid: np.ndarray  # (nx, ny) bool

    def __post_init__(self):
        self.valid.setflags(write=False)

    def cell_center(self, ix, iy) -> np.ndarray:
        return np.array([self.origin[0] + (np.asarray(ix) + 0.5) * self.spacing,
                         self.origin[1] + (np.asarray(iy) + 0.5) * self.spacing]).T

    def valid_cells(self) -> np.ndarray:
        """Indices (N, 2) of valid cells in row-major (ix, iy) order."""
        ix, iy = np.nonzero(self.valid)
        return np.stack([ix, iy], axis=1)

    def mask_csv(self) -> str:
        """Row-major 0/1 CSV of the valid mask (rows = ix)."""
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.valid) + "\n"


def build_rx_grid(env: Environment, nx: int = 160, ny: int = 160,
                  spacing: float = 0.15, origin=(0.0, 0.0)) -> RxGrid:
    if nx * spacing > env.side_m + EPS or ny * spacing > env.side_m + EPS:
        raise ValueError("grid extent exceeds environment bounds")
    blocked = _cells_touching_walls(env.walls, origin, nx, ny, spacing)
    return RxGrid(origin=tuple(origin), nx=nx, ny=ny, spacing=spacing, valid=~blocked)


def _cells_touching_walls(walls: np.ndarray, origin, nx: int, ny: int, res: float) -> np.ndarray:
    """Boolean (nx, ny): cell square [closed] intersects some wall segment."""
    out = np.zeros((nx, ny), dtype=bool)
    ox, oy = origin
    for x1, y1, x2, y2 in walls:
        # conservative AABB rasterization, exact for axis-aligned walls
        ix0 = max(0, int(np.floor((min(x1, x2) - ox - EPS) / res)))
        ix1 = min(nx - 1, int(np.floor((max(x1, x2) - ox + EPS) / res)))
        iy0 = max(0, int(np.floor((min(y1, y2) - oy - EPS) / res)))
        iy1 = min(ny - 1, int(np.floor((max(y1, y2) - oy + EPS) / res)))
        if ix1 < ix0 or iy1 < iy0:
            continue
        if abs(x1 - x2) < EPS or abs(y1 - y2) < EPS:
            out[ix0:ix1 + 1, iy0:iy1 + 1] = True
            continue
        # generic segment: test candidate cells exactly via midpoint clipping
        for ix in range(ix0, ix1 + 1):
            for iy in range(iy0, iy1 + 1):
                if _segment_hits_box(x1, y1, x2, y2,
                                     ox + ix * res, oy + iy * res,
                                     ox + (ix + 1) * res, oy + (iy + 1) * res):
                    out[ix, iy] = True
    return out


def _segment_hits_box(x1, y1, x2, y2, bx0, by0, bx1, by1) -> bool:
    t0, t1 = 0.0, 1.0
    dx, dy = x2 - x1, y2 - y1
    for p, q in ((-dx, x1 - bx0), (dx, bx1 - x1), (-dy, y1 - by0), (dy, by1 - y1)):
        if abs(p) < EPS:
            if q < -EPS:
                return False
        else:
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
            if t0 > t1 + EPS:
                return False
    return True


FREE, WALL, UNKNOWN = 0, 1, 2


@dataclass
class OccupancyMap:
    """Tri-state occupancy grid (free / wall / unknown) over the square bounds."""

    resolution: float
    cells: np.ndarray  # (nx, ny) int8
    origin: tuple = (0.0, 0.0)

    @property
    def nx(self) -> int:
        return self.cells.shape[0]

    @property
    def ny(self) -> int:
        return self.cells.shape[1]

    def cell_of(self, p) -> tuple:
        ix = int(np.clip((p[0] - self.origin[0]) / self.resolution, 0, self.nx - 1))
        iy = int(np.clip((p[1] - self.origin[1]) / self.resolution, 0, self.ny - 1))
        return ix, iy

    def center_of(self, ix: int, iy: int) -> np.ndarray:
        return np.array([self.origin[0] + (ix + 0.5) * self.resolution,
                         self.origin[1] + (iy + 0.5) * self.resolution])

    def copy(self) -> "OccupancyMap":
        return OccupancyMap(self.resolution, self.cells.copy(), self.origin)

    @staticmethod
    def from_environment(env: Environment, resolution: float = 0.25) -> "OccupancyMap":
        n = int(round(env.side_m / resolution))
        blocked = _cells_touching_walls(env.walls, (0.0, 0.0), n, n, resolution)
        cells = np.where(blocked, WALL, FREE).astype(np.int8)
        return OccupancyMap(resolution=resolution, cells=cells)

    @staticmethod
    def unknown_like(other: "OccupancyMap") -> "OccupancyMap":
        return OccupancyMap(other.resolution,
                            np.full_like(other.cells, UNKNOWN), other.origin)


def free_component_count(occ: OccupancyMap) -> int:
    """Number of 4-connected free-space components (1 for a valid plan)."""
    labels, n = ndimage.label(occ.cells == FREE,
                              structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    return int(n)
