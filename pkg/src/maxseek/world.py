"""Simulated environments: ground-truth fields, obstacles, primitives, sensing.

A world is owned by exactly one trial.  Ground-truth fields are immutable
after generation; only the obstacle map's revealed set mutates, and it only
grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gp import _chol_or_jitter, JITTER_SCALE

COLLISION_STEP = 0.05   # arc-length resolution of path feasibility checks

# prior-draw covariance factors are reused across trials sharing a kernel/grid
_chol_cache = {}


class EnvironmentFileError(ValueError):
    """Malformed grid or obstacle file."""


@dataclass(frozen=True, eq=False)
class GroundTruthField:
    """Gridded scalar field with bilinear interpolation between nodes.

    Dynamic fields hold one grid per stored time and look the query time up
    by nearest stored time.  ``xstar`` is the unique grid argmax (of the last
    time slice for dynamic fields).
    """

    xs: np.ndarray            # (nx,) node x coordinates
    ys: np.ndarray            # (ny,) node y coordinates
    values: np.ndarray        # (ny, nx) or (nt, ny, nx)
    times: np.ndarray = None  # (nt,) for dynamic fields
    source: str = "gp-prior-draw"

    def __post_init__(self):
        vals = self.values
        if self.times is None:
            if vals.shape != (self.ys.size, self.xs.size):
                raise ValueError("grid shape disagrees with axes")
        else:
            if vals.shape != (self.times.size, self.ys.size, self.xs.size):
                raise ValueError("grid shape disagrees with axes")

    @property
    def dynamic(self):
        return self.times is not None

    def _slice(self, time):
        if not self.dynamic:
            return self.values
        if time is None:
            time = self.times[-1]
        k = int(np.argmin(np.abs(self.times - time)))
        return self.values[k]

    def value_at(self, points, time=None):
        """Bilinear interpolation; grid-node queries return stored values."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        grid = self._slice(time)
        ix = np.clip(np.searchsorted(self.xs, P[:, 0], side="right") - 1, 0, self.xs.size - 2)
        iy = np.clip(np.searchsorted(self.ys, P[:, 1], side="right") - 1, 0, self.ys.size - 2)
        x0, x1 = self.xs[ix], self.xs[ix + 1]
        y0, y1 = self.ys[iy], self.ys[iy + 1]
        tx = np.clip((P[:, 0] - x0) / (x1 - x0), 0.0, 1.0)
        ty = np.clip((P[:, 1] - y0) / (y1 - y0), 0.0, 1.0)
        v00 = grid[iy, ix]
        v10 = grid[iy, ix + 1]
        v01 = grid[iy + 1, ix]
        v11 = grid[iy + 1, ix + 1]
        return (
            v00 * (1 - tx) * (1 - ty)
            + v10 * tx * (1 - ty)
            + v01 * (1 - tx) * ty
            + v11 * tx * ty
        )

    def grid_points(self):
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def grid_values(self, time=None):
        return self._slice(time).ravel()

    def argmax_at(self, time=None):
        grid = self._slice(time)
        iy, ix = np.unravel_index(int(np.argmax(grid)), grid.shape)
        return np.array([self.xs[ix], self.ys[iy]]), float(grid[iy, ix])

    @property
    def xstar(self):
        return self.argmax_at()[0]

    @property
    def fstar(self):
        return self.argmax_at()[1]


def _grid_axes(geofence, resolution):
    x0, y0, x1, y1 = geofence
    if isinstance(resolution, int):
        nx = ny = resolution
    else:
        nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    return np.linspace(x0, x1, nx), np.linspace(y0, y1, ny)


def _cached_chol(key, build, jitter):
    L = _chol_cache.get(key)
    if L is None:
        L = _chol_or_jitter(build(), jitter)
        _chol_cache[key] = L
    return L


def generate_environment(kernel, geofence, resolution, rng, times=None):
    """Draw one ground-truth field from the zero-mean GP prior on a grid.

    ``times`` switches to the dynamic variant: the kernel must then be the
    spatiotemporal product, and one grid per time is drawn jointly via the
    separable (Kronecker) structure.  Regenerates on the measure-zero event
    of a tied grid argmax so the maximum is unique.
    """
    xs, ys = _grid_axes(geofence, resolution)
    gx, gy = np.meshgrid(xs, ys)
    P = np.column_stack([gx.ravel(), gy.ravel()])

    if times is None:
        key = (repr(kernel), tuple(geofence), xs.size, ys.size)
        L = _cached_chol(key, lambda: kernel(P), JITTER_SCALE * kernel.variance)
        for _ in range(5):
            draw = L @ rng.standard_normal(P.shape[0])
            grid = draw.reshape(ys.size, xs.size)
            if np.count_nonzero(grid == grid.max()) == 1:
                return GroundTruthField(xs, ys, grid)
        raise RuntimeError("could not draw a field with a unique maximum")

    times = np.asarray(times, dtype=float)
    spatial = kernel.spatial_part()
    temporal = kernel.temporal_part()
    skey = ("space", repr(spatial), tuple(geofence), xs.size, ys.size)
    tkey = ("time", repr(temporal), tuple(np.round(times, 9)))
    Ls = _cached_chol(skey, lambda: spatial(P), JITTER_SCALE * spatial.variance)
    Lt = _cached_chol(tkey, lambda: temporal(times[:, None]), JITTER_SCALE)
    for _ in range(5):
        draw = Ls @ rng.standard_normal((P.shape[0], times.size)) @ Lt.T
        grids = np.moveaxis(draw.reshape(ys.size, xs.size, times.size), 2, 0)
        final = grids[-1]
        if np.count_nonzero(final == final.max()) == 1:
            return GroundTruthField(xs, ys, np.ascontiguousarray(grids), times)
    raise RuntimeError("could not draw a field with a unique maximum")


def load_environment(path):
    """Read a gridded field from a delimited text file.

    Format: header ``nx,ny[,nt],cell_size`` followed by one ``x,y[,t],value``
    row per node.  Values are mean-centered on load.  Raises
    :class:`EnvironmentFileError` naming the offending row on ragged rows,
    non-numeric cells, or duplicate coordinates.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    if not lines:
        raise EnvironmentFileError(f"{path}: empty file")

    lineno, header = lines[0]
    head = [tok.strip() for tok in header.split(",")]
    if len(head) not in (3, 4):
        raise EnvironmentFileError(f"{path}:{lineno}: header must be nx,ny[,nt],cell_size")
    try:
        dims = [int(tok) for tok in head[:-1]]
        cell = float(head[-1])
    except ValueError:
        raise EnvironmentFileError(f"{path}:{lineno}: non-numeric header") from None
    dynamic = len(dims) == 3
    nx, ny = dims[0], dims[1]
    nt = dims[2] if dynamic else 1
    want_fields = 4 if dynamic else 3

    rows = []
    for lineno, ln in lines[1:]:
        toks = ln.split(",")
        if len(toks) != want_fields:
            raise EnvironmentFileError(
                f"{path}:{lineno}: expected {want_fields} fields, got {len(toks)}"
            )
        try:
            rows.append([float(tok) for tok in toks])
        except ValueError:
            raise EnvironmentFileError(f"{path}:{lineno}: non-numeric cell") from None
    if len(rows) != nx * ny * nt:
        raise EnvironmentFileError(
            f"{path}: header promises {nx * ny * nt} rows, file has {len(rows)}"
        )

    data = np.asarray(rows)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    ts = np.unique(data[:, 2]) if dynamic else None
    if xs.size != nx or ys.size != ny or (dynamic and ts.size != nt):
        raise EnvironmentFileError(f"{path}: coordinates do not form a {nx}x{ny}"
                                   + (f"x{nt}" if dynamic else "") + " lattice")
    for axis in (xs, ys):
        if axis.size > 1 and np.max(np.abs(np.diff(axis) - cell)) > 1e-6 * max(cell, 1.0):
            raise EnvironmentFileError(f"{path}: node spacing disagrees with cell size {cell}")

    shape = (nt, ny, nx) if dynamic else (ny, nx)
    grid = np.full(shape, np.nan)
    ix = np.searchsorted(xs, data[:, 0])
    iy = np.searchsorted(ys, data[:, 1])
    if dynamic:
        it = np.searchsorted(ts, data[:, 2])
        for n, (i, j, k) in enumerate(zip(it, iy, ix)):
            if not np.isnan(grid[i, j, k]):
                raise EnvironmentFileError(
                    f"{path}:{lines[1 + n][0]}: duplicate coordinates"
                )
            grid[i, j, k] = data[n, 3]
    else:
        for n, (j, k) in enumerate(zip(iy, ix)):
            if not np.isnan(grid[j, k]):
                raise EnvironmentFileError(
                    f"{path}:{lines[1 + n][0]}: duplicate coordinates"
                )
            grid[j, k] = data[n, 2]

    grid = grid - grid.mean()
    return GroundTruthField(xs, ys, grid, ts, source="grid-file")


def load_obstacles(path):
    """Read axis-aligned obstacle rectangles, one ``xmin,ymin,xmax,ymax`` row each."""
    rects = []
    with open(path) as fh:
        for lineno, ln in enumerate(fh, start=1):
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            toks = ln.split(",")
            if len(toks) != 4:
                raise EnvironmentFileError(f"{path}:{lineno}: expected 4 fields")
            try:
                x0, y0, x1, y1 = (float(t) for t in toks)
            except ValueError:
                raise EnvironmentFileError(f"{path}:{lineno}: non-numeric cell") from None
            if x1 < x0 or y1 < y0:
                raise EnvironmentFileError(f"{path}:{lineno}: inverted rectangle")
            rects.append((x0, y0, x1, y1))
    return tuple(rects)


@dataclass
class ObstacleMap:
    """Axis-aligned rectangular obstacles inside a rectangular geofence.

    In ``known`` mode every obstacle is visible to the planner from the
    start; in ``revealed`` mode obstacles enter the known set once the
    vehicle passes within ``sensing_radius`` of their boundary, and the set
    only grows.
    """

    geofence: tuple
    obstacles: tuple = ()
    padding: float = 0.1
    mode: str = "known"
    sensing_radius: float = 3.0
    revealed: set = field(default_factory=set)

    def __post_init__(self):
        x0, y0, x1, y1 = self.geofence
        for r in self.obstacles:
            if not (x0 <= r[0] <= r[2] <= x1 and y0 <= r[1] <= r[3] <= y1):
                raise ValueError(f"obstacle {r} leaves the geofence")
        if self.mode not in ("known", "revealed"):
            raise ValueError("mode must be 'known' or 'revealed'")

    def known_obstacles(self):
        if self.mode == "known":
            return list(self.obstacles)
        return [self.obstacles[i] for i in sorted(self.revealed)]

    def known_padded(self):
        p = self.padding
        return [(r[0] - p, r[1] - p, r[2] + p, r[3] + p) for r in self.known_obstacles()]


def rect_distance(point, rect):
    """Euclidean distance from a point to a rectangle's boundary or interior."""
    px, py = point[0], point[1]
    dx = max(rect[0] - px, 0.0, px - rect[2])
    dy = max(rect[1] - py, 0.0, py - rect[3])
    return math.hypot(dx, dy)


def reveal_obstacles(obstacle_map, pose):
    """Mark every obstacle within sensing range of the pose as known.

    Monotone and idempotent; returns the updated known index set.
    """
    if obstacle_map.mode == "known":
        return obstacle_map.revealed
    for i, r in enumerate(obstacle_map.obstacles):
        if i in obstacle_map.revealed:
            continue
        if rect_distance(pose, r) <= obstacle_map.sensing_radius:
            obstacle_map.revealed.add(i)
    return obstacle_map.revealed


def random_obstacles(rng, geofence, count, size, keep_clear=()):
    """Uniformly placed square blocks, resampled away from keep-clear discs.

    ``keep_clear`` holds ``(point, radius)`` pairs (start pose, true maximum)
    that no block may cover, so the seek-and-sample task stays well posed.
    """
    x0, y0, x1, y1 = geofence
    rects = []
    for _ in range(count):
        for _ in range(1000):
            cx = rng.uniform(x0, x1 - size)
            cy = rng.uniform(y0, y1 - size)
            rect = (cx, cy, cx + size, cy + size)
            if all(rect_distance(p, rect) > rad for p, rad in keep_clear):
                rects.append(rect)
                break
        else:
            raise RuntimeError("could not place obstacles away from keep-clear zones")
    return tuple(rects)


@dataclass(frozen=True, eq=False)
class ActionPrimitive:
    """A finite path with observation points every sample-spacing along it."""

    kind: str                 # straight | dubins | reverse | stay
    index: int
    path: np.ndarray          # (P, 2) positions at collision resolution
    samples: np.ndarray       # (k, 2) observation points
    terminal_pose: tuple      # (x, y, heading)
    length: float


def _arc_points(arc_lengths, curvature):
    """Positions along a unit-heading arc starting at the origin."""
    s = np.asarray(arc_lengths)
    if curvature == 0.0:
        return np.column_stack([s, np.zeros_like(s)])
    return np.column_stack(
        [np.sin(curvature * s) / curvature, (1.0 - np.cos(curvature * s)) / curvature]
    )


def _sample_offsets(length, spacing):
    k = int(math.floor(length / spacing + 1e-9))
    offs = [spacing * (i + 1) for i in range(k)]
    if not offs or offs[-1] < length - 1e-9:
        offs.append(length)
    return np.asarray(offs)


def _collision_offsets(length):
    n = max(int(math.ceil(length / COLLISION_STEP)), 1)
    return np.linspace(0.0, length, n + 1)


def _rotate(points, heading):
    c, s = math.cos(heading), math.sin(heading)
    R = np.array([[c, -s], [s, c]])
    return points @ R.T


def stay_primitive(pose, index=0):
    """Zero-length action sampling once at the current pose."""
    p = np.array([[pose[0], pose[1]]])
    return ActionPrimitive("stay", index, p, p.copy(), tuple(pose), 0.0)


def dubins_primitives(pose, curvatures, length, sample_spacing, first_index=0):
    """Constant-curvature arcs of fixed length projected ahead of the pose.

    Curvature zero is the straight segment; every arc has exactly the given
    arc length, and the terminal heading turns by ``curvature * length``.
    """
    x, y, heading = pose
    out = []
    origin = np.array([x, y])
    for i, kappa in enumerate(curvatures):
        coll = _rotate(_arc_points(_collision_offsets(length), kappa), heading) + origin
        samp = _rotate(_arc_points(_sample_offsets(length, sample_spacing), kappa), heading) + origin
        term = (coll[-1][0], coll[-1][1], heading + kappa * length)
        kind = "straight" if kappa == 0.0 else "dubins"
        out.append(ActionPrimitive(kind, first_index + i, coll, samp, term, length))
    return out


class HolonomicPrimitives:
    """Straight rays at even angular spacing around the pose; heading free.

    Primitive sets are memoized by position (heading is irrelevant for a
    holonomic vehicle), so tree searches revisiting a pose share the same
    action objects.
    """

    def __init__(self, count=10, length=1.5, sample_spacing=0.5, include_stay=False):
        self.count = count
        self.length = length
        self.include_stay = include_stay
        angles = 2.0 * np.pi * np.arange(count) / count
        self._collision = [
            np.outer(_collision_offsets(length), [np.cos(a), np.sin(a)]) for a in angles
        ]
        self._samples = [
            np.outer(_sample_offsets(length, sample_spacing), [np.cos(a), np.sin(a)])
            for a in angles
        ]
        self._angles = angles
        self._cache = {}

    def at(self, pose):
        key = (float(pose[0]), float(pose[1]))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        origin = np.array(key)
        out = [
            ActionPrimitive(
                "straight",
                i,
                self._collision[i] + origin,
                self._samples[i] + origin,
                (*(self._collision[i][-1] + origin), self._angles[i]),
                self.length,
            )
            for i in range(self.count)
        ]
        if self.include_stay:
            out.append(stay_primitive(pose, index=self.count))
        self._cache[key] = out
        return out


class DubinsPrimitiveSet:
    """Arcs fanned ahead of a nonholonomic vehicle, plus reverse and stay."""

    def __init__(
        self,
        curvature_count=11,
        curvature_max=2.0,
        length=1.5,
        sample_spacing=0.5,
        include_reverse=True,
        include_stay=True,
    ):
        self.curvatures = np.linspace(-curvature_max, curvature_max, curvature_count)
        self.length = length
        self.sample_spacing = sample_spacing
        self.include_reverse = include_reverse
        self.include_stay = include_stay
        self._cache = {}

    def at(self, pose):
        key = (float(pose[0]), float(pose[1]), float(pose[2]))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        out = self._build(pose)
        self._cache[key] = out
        return out

    def _build(self, pose):
        out = dubins_primitives(pose, self.curvatures, self.length, self.sample_spacing)
        i = len(out)
        if self.include_reverse:
            x, y, heading = pose
            back = heading + np.pi
            direction = np.array([np.cos(back), np.sin(back)])
            coll = np.outer(_collision_offsets(self.length), direction) + [x, y]
            samp = np.outer(_sample_offsets(self.length, self.sample_spacing), direction) + [x, y]
            out.append(
                ActionPrimitive(
                    "reverse", i, coll, samp, (*coll[-1], heading), self.length
                )
            )
            i += 1
        if self.include_stay:
            out.append(stay_primitive(pose, index=i))
        return out


def feasible_actions(pose, obstacle_map, primitives):
    """Primitives whose whole path stays in the geofence and off known,
    padded obstacles; ``stay`` is always feasible."""
    x0, y0, x1, y1 = obstacle_map.geofence
    rects = obstacle_map.known_padded()
    out = []
    for prim in primitives:
        if prim.kind == "stay":
            out.append(prim)
            continue
        pts = prim.path
        if (
            pts[:, 0].min() < x0
            or pts[:, 0].max() > x1
            or pts[:, 1].min() < y0
            or pts[:, 1].max() > y1
        ):
            continue
        hit = False
        for r in rects:
            inside = (
                (pts[:, 0] > r[0])
                & (pts[:, 0] < r[2])
                & (pts[:, 1] > r[1])
                & (pts[:, 1] < r[3])
            )
            if inside.any():
                hit = True
                break
        if not hit:
            out.append(prim)
    return out


@dataclass(frozen=True, eq=False)
class ObservationBatch:
    """Noisy field values gathered at a set of locations and one time."""

    locations: np.ndarray
    times: np.ndarray
    values: np.ndarray


def observe(field, locations, time, noise_variance, rng):
    """Interpolated truth plus i.i.d. Gaussian sensor noise."""
    P = np.atleast_2d(np.asarray(locations, dtype=float))
    truth = field.value_at(P, time)
    if noise_variance > 0.0:
        truth = truth + math.sqrt(noise_variance) * rng.standard_normal(P.shape[0])
    t = 0.0 if time is None else float(time)
    return ObservationBatch(P, np.full(P.shape[0], t), truth)
