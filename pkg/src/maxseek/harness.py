"""Experiment driver: configuration, the mission loop, batching, persistence.

A trial is the unit of concurrency; everything inside one mission is
sequential.  Trial ``i`` always runs with seed ``base_seed + i`` regardless
of execution order or worker count, so batches are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .acquisition import (
    UCBSchedule,
    action_reward,
    mvi_reward_fn,
    refresh_max_values,
    ucb_reward_fn,
)
from .gp import GPBelief, SearchDomain
from .kernels import SpatiotemporalKernel, SquaredExponential
from .metrics import MetricReport, StepEntry, TrialRecord, mann_whitney_u, mss_reward
from .planner import (
    SearchConfig,
    TrappedVehicleError,
    plan_boustrophedon,
    plan_mcts,
    plan_mcts_ml,
    plan_myopic,
)
from .world import (
    DubinsPrimitiveSet,
    HolonomicPrimitives,
    ObstacleMap,
    feasible_actions,
    generate_environment,
    load_environment,
    load_obstacles,
    observe,
    random_obstacles,
    reveal_obstacles,
    stay_primitive,
)

SCENARIOS = ("convex", "non-convex-known", "non-convex-revealed", "spatiotemporal", "grid-file")
PLANNERS = ("plumes", "ucb-mcts", "ucb-myopic", "boustro")
OUT_DIR_ENV = "MAXSEEK_OUT"


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; see README for the file format."""

    scenario: str = "convex"
    planner: str = "plumes"
    baselines: tuple = ()            # extra planners run on the same environments
    # field and belief kernel
    lengthscale: float = 1.0
    time_lengthscale: float = 100.0
    signal_variance: float = 100.0
    noise_variance: float = 1.0
    geofence: tuple = (0.0, 0.0, 10.0, 10.0)
    grid_resolution: int = 50
    environment_file: str = None
    obstacles_file: str = None
    # vehicle
    action_count: int = 10
    action_length: float = 1.5
    sample_spacing: float = 0.5
    curvature_max: float = 2.0
    start_pose: tuple = None         # defaults to the geofence center
    # obstacles
    obstacle_count: int = 12
    obstacle_size: float = 1.0
    safety_padding: float = 0.1
    sensing_radius: float = 3.0
    # mission
    budget: float = 200.0
    epsilon: float = 1.5
    trials: int = 50
    base_seed: int = 0
    # tree search
    horizon: int = 5
    rollouts: int = 250
    discount: float = 0.9
    # acquisition
    mvi_samples: int = 3
    spectral_features: int = 1000
    argmax_restarts: int = 10
    ucb_grid: int = 10000
    ucb_delta: float = 0.01
    # boustrophedon
    row_spacing: float = 0.5
    # execution
    workers: int = 1

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        for p in (self.planner, *self.baselines):
            if p not in PLANNERS:
                raise ValueError(f"unknown planner {p!r}")
        for name in (
            "lengthscale", "time_lengthscale", "signal_variance", "noise_variance",
            "action_length", "sample_spacing", "budget", "epsilon", "row_spacing",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        x0, y0, x1, y1 = self.geofence
        if x1 <= x0 or y1 <= y0:
            raise ValueError("geofence must have positive extent")
        if self.trials < 1 or self.workers < 1:
            raise ValueError("trials and workers must be >= 1")
        if self.scenario == "grid-file" and not self.environment_file:
            raise ValueError("grid-file scenario needs environment_file")
        # the search must be able to visit every root action at least once
        if self.rollouts < self.primitive_count():
            raise ValueError("rollouts must be at least the primitive count")
        SearchConfig(self.horizon, self.rollouts, self.discount)
        return self

    def primitive_count(self):
        if self.dubins_vehicle():
            return self.action_count + 2       # arcs + reverse + stay
        return self.action_count

    def dubins_vehicle(self):
        return self.scenario == "non-convex-revealed"

    def dynamic_belief(self):
        return self.scenario == "spatiotemporal" or (
            self.scenario == "grid-file" and self.environment_file is not None
            and _file_is_dynamic(self.environment_file)
        )

    def iterations_bound(self):
        return int(math.ceil(self.budget / self.action_length))

    def to_json(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        for k in ("baselines", "geofence", "start_pose"):
            if k in data and data[k] is not None:
                data[k] = tuple(data[k])
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]


def _file_is_dynamic(path):
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if ln and not ln.startswith("#"):
                return len(ln.split(",")) == 4
    return False


class PlanningView:
    """Read-only world window handed to a planner for one search.

    Supplies the feasible-action oracle at any pose and the mapping from an
    action's sample points to belief-space coordinates (appending the
    simulated time when the belief is spatiotemporal).  Feasibility results
    are memoized per pose against the current known obstacle set.
    """

    def __init__(self, obstacle_map, primitive_set, iteration=0, dynamic=False,
                 feasible_cache=None):
        self._map = obstacle_map
        self._primitives = primitive_set
        self._iteration = iteration
        self._dynamic = dynamic
        self._cache = feasible_cache if feasible_cache is not None else {}
        self._coord_cache = {}

    def feasible_actions(self, pose):
        key = (float(pose[0]), float(pose[1]), float(pose[2]),
               len(self._map.known_obstacles()))
        hit = self._cache.get(key)
        if hit is None:
            hit = feasible_actions(pose, self._map, self._primitives.at(pose))
            self._cache[key] = hit
        return hit

    def belief_coords(self, action, depth):
        if not self._dynamic:
            return action.samples
        key = (id(action), depth)
        hit = self._coord_cache.get(key)
        if hit is None:
            t = float(self._iteration + depth)
            hit = np.hstack(
                [action.samples, np.full((action.samples.shape[0], 1), t)]
            )
            self._coord_cache[key] = hit
        return hit


def _belief_kernel(config, dynamic):
    if dynamic:
        return SpatiotemporalKernel(
            config.lengthscale, config.time_lengthscale, config.signal_variance
        )
    return SquaredExponential(config.lengthscale, config.signal_variance)


def _start_pose(config):
    if config.start_pose is not None:
        p = tuple(config.start_pose)
        return p if len(p) == 3 else (p[0], p[1], 0.0)
    x0, y0, x1, y1 = config.geofence
    return ((x0 + x1) / 2.0, (y0 + y1) / 2.0, 0.0)


def _build_world(config, rng):
    """Field, obstacle map, and primitive set for one trial (seed-determined)."""
    dynamic = config.dynamic_belief()
    start = _start_pose(config)

    if config.scenario == "grid-file":
        field_ = load_environment(config.environment_file)
    elif config.scenario == "spatiotemporal":
        times = np.arange(float(config.iterations_bound() + 1))
        field_ = generate_environment(
            _belief_kernel(config, True), config.geofence, config.grid_resolution,
            rng, times=times,
        )
    else:
        field_ = generate_environment(
            SquaredExponential(config.lengthscale, config.signal_variance),
            config.geofence, config.grid_resolution, rng,
        )

    obstacles = ()
    mode = "known"
    if config.scenario in ("non-convex-known", "non-convex-revealed"):
        keep_clear = [
            ((start[0], start[1]), config.safety_padding + 0.3),
            (tuple(field_.xstar), config.epsilon / 2.0),
        ]
        obstacles = random_obstacles(
            rng, config.geofence, config.obstacle_count, config.obstacle_size,
            keep_clear,
        )
        mode = "revealed" if config.scenario == "non-convex-revealed" else "known"
    elif config.obstacles_file:
        obstacles = load_obstacles(config.obstacles_file)

    obstacle_map = ObstacleMap(
        config.geofence, obstacles, config.safety_padding, mode, config.sensing_radius
    )
    if config.dubins_vehicle():
        primitives = DubinsPrimitiveSet(
            config.action_count, config.curvature_max,
            config.action_length, config.sample_spacing,
        )
    else:
        primitives = HolonomicPrimitives(
            config.action_count, config.action_length, config.sample_spacing
        )
    return field_, obstacle_map, primitives, start, dynamic


def _search_domain(config, obstacle_map, t_now):
    x0, y0, x1, y1 = config.geofence
    blocked = tuple(
        ((r[0], r[1]), (r[2], r[3])) for r in obstacle_map.known_padded()
    )
    tail = () if t_now is None else (float(t_now),)
    return SearchDomain((x0, y0), (x1, y1), blocked, tail)


def run_trial(config, trial_index, planner=None):
    """Execute one mission and return its full record.

    The loop per planning iteration: refresh max-value samples (MVI planners),
    plan, execute the chosen primitive while observing every sample-spacing,
    condition the belief, and reveal obstacles in revealed scenarios.  The
    boustrophedon planner skips planning and walks its waypoint list.  A
    trapped vehicle ends the mission with status ``trapped`` rather than an
    error.
    """
    planner = planner or config.planner
    config.validate()
    seed = config.base_seed + trial_index
    rng = np.random.default_rng(seed)
    field_, obstacle_map, primitives, pose, dynamic = _build_world(config, rng)
    kernel = _belief_kernel(config, dynamic)
    belief = GPBelief(kernel, config.noise_variance)
    schedule = UCBSchedule(config.ucb_grid, config.ucb_delta)
    record = TrialRecord(planner=planner, seed=seed, config_hash=config.hash())
    record.notes = {
        "scenario": config.scenario,
        "dynamic": dynamic,
        "lengthscale": config.lengthscale,
        "time_lengthscale": config.time_lengthscale,
        "signal_variance": config.signal_variance,
        "noise_variance": config.noise_variance,
        "evaluation_grid": "generation grid",
        "xstar_tie_rule": "closest tied grid point to the true maximum",
    }
    t0 = time.perf_counter()

    def log(pose_, action_id, obs, reward, length, maxvals=None):
        record.entries.append(
            StepEntry(
                pose=tuple(map(float, pose_)),
                action_id=action_id,
                locations=obs.locations,
                times=obs.times,
                values=obs.values,
                heuristic_reward=float(reward),
                cumulative_length=float(length),
                wall_time=time.perf_counter() - t0,
                max_values=maxvals,
            )
        )

    def coords_for(points, t_now):
        if not dynamic:
            return points
        return np.hstack([points, np.full((points.shape[0], 1), float(t_now))])

    if planner == "boustro":
        iteration, belief = _run_boustrophedon(
            config, field_, rng, record, log, belief, dynamic, coords_for
        )
    else:
        iteration, belief = _run_adaptive(
            config, planner, field_, obstacle_map, primitives, pose, dynamic,
            rng, record, log, belief, schedule, coords_for,
        )

    t_final = float(iteration) if dynamic else None
    pts = field_.grid_points()
    mean, var = belief.posterior(coords_for(pts, iteration))
    ny, nx = field_.ys.size, field_.xs.size
    record.posterior_mean = mean.reshape(ny, nx)
    record.posterior_var = var.reshape(ny, nx)
    record.truth = field_._slice(t_final).copy()
    record.grid_xs = field_.xs.copy()
    record.grid_ys = field_.ys.copy()
    record.xstar, record.fstar = field_.argmax_at(t_final)
    record.final_time = 0.0 if t_final is None else t_final
    return record


def _run_adaptive(
    config, planner, field_, obstacle_map, primitives, pose, dynamic,
    rng, record, log, belief, schedule, coords_for,
):
    budget_spent = 0.0
    traveled = 0.0
    iteration = 0
    feasible_cache = {}

    if obstacle_map.mode == "revealed":
        reveal_obstacles(obstacle_map, pose)
    first = stay_primitive(pose)
    obs = observe(field_, first.samples, 0.0 if dynamic else None,
                  config.noise_variance, rng)
    belief = belief.condition(coords_for(first.samples, 0), obs.values)
    log(pose, -1, obs, 0.0, traveled)

    while budget_spent + config.action_length <= config.budget + 1e-9:
        iteration += 1
        view = PlanningView(obstacle_map, primitives, iteration, dynamic,
                            feasible_cache)
        t_now = float(iteration) if dynamic else None
        maxvals = None
        try:
            if planner == "plumes":
                domain = _search_domain(config, obstacle_map, t_now)
                maxvals = refresh_max_values(
                    belief, config.mvi_samples, config.spectral_features,
                    domain, config.argmax_restarts, rng, iteration,
                )
                fn = mvi_reward_fn(maxvals)
                sc = SearchConfig(config.horizon, config.rollouts, config.discount,
                                  seed=int(rng.integers(2**31)))
                decision = plan_mcts(belief, pose, view, fn, sc, max_values=maxvals)
            elif planner == "ucb-mcts":
                fn = ucb_reward_fn(schedule, iteration)
                sc = SearchConfig(config.horizon, config.rollouts, config.discount,
                                  seed=int(rng.integers(2**31)))
                decision = plan_mcts_ml(belief, pose, view, fn, sc)
            elif planner == "ucb-myopic":
                fn = ucb_reward_fn(schedule, iteration)
                decision = plan_myopic(belief, pose, view, fn)
            else:
                raise ValueError(f"unknown planner {planner!r}")
        except TrappedVehicleError:
            record.status = "trapped"
            break

        action = decision.action
        coords = view.belief_coords(action, 0)
        reward = action_reward(belief, action, fn, samples=coords)
        obs = observe(field_, action.samples, t_now, config.noise_variance, rng)
        belief = belief.condition(coords, obs.values).compacted()
        pose = action.terminal_pose
        traveled += action.length
        # a zero-length stay still spends one primitive of budget, so
        # missions with stay actions terminate
        budget_spent += max(action.length, config.action_length)
        if obstacle_map.mode == "revealed":
            reveal_obstacles(obstacle_map, pose)
        mv = None
        if maxvals is not None:
            mv = (maxvals.values.copy(), maxvals.locations.copy())
        log(pose, action.index, obs, reward, traveled, mv)

    return iteration, belief


def _run_boustrophedon(config, field_, rng, record, log, belief, dynamic, coords_for):
    waypoints = plan_boustrophedon(config.geofence, config.row_spacing,
                                   config.sample_spacing)
    pose = (waypoints[0][0], waypoints[0][1], 0.0)
    first = stay_primitive(pose)
    obs = observe(field_, first.samples, 0.0 if dynamic else None,
                  config.noise_variance, rng)
    belief = belief.condition(coords_for(first.samples, 0), obs.values)
    log(pose, -1, obs, 0.0, 0.0)

    traveled = 0.0
    iteration = 0
    i = 1
    while i < len(waypoints):
        # walk roughly one primitive length per logged step
        chunk = []
        chunk_len = 0.0
        while i < len(waypoints) and chunk_len < config.action_length - 1e-9:
            seg = float(np.linalg.norm(waypoints[i] - waypoints[i - 1]))
            if traveled + chunk_len + seg > config.budget + 1e-9:
                i = len(waypoints)
                break
            chunk.append(waypoints[i])
            chunk_len += seg
            i += 1
        if not chunk:
            break
        iteration += 1
        traveled += chunk_len
        pts = np.asarray(chunk)
        t_now = float(iteration) if dynamic else None
        obs = observe(field_, pts, t_now, config.noise_variance, rng)
        belief = belief.condition(coords_for(pts, iteration), obs.values).compacted()
        pose = (pts[-1][0], pts[-1][1], pose[2])
        log(pose, -1, obs, 0.0, traveled)

    return iteration, belief


def score_trial(record, epsilon):
    """MetricReport from a record's stored grids and sample log.

    Identical to scoring the final belief directly: the snapshot is the
    posterior evaluated on the evaluation grid.
    """
    mss = mss_reward(record, record.xstar, epsilon)
    err = record.posterior_mean - record.truth
    rmse_val = float(np.sqrt(np.mean(err**2)))
    mean = record.posterior_mean.ravel()
    pts = record.grid_points()
    tied = pts[mean == mean.max()]
    xerr = float(np.min(np.linalg.norm(tied - record.xstar, axis=1)))
    return MetricReport(float(mss), rmse_val, xerr)


@dataclass
class TrialResult:
    planner: str
    trial: int
    seed: int
    status: str
    metrics: MetricReport
    log_file: str = None


@dataclass
class BatchResults:
    """Per-trial results plus the aggregate block of the results file."""

    config_hash: str
    trials: list
    aggregate: dict
    records: dict = field(default_factory=dict)   # (planner, trial) -> TrialRecord

    def rewards(self, planner):
        return [t.metrics.mss_reward for t in self.trials if t.planner == planner]


def _trial_job(args):
    config, planner, index = args
    record = run_trial(config, index, planner)
    return planner, index, record


def _quartiles(values):
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])   # linear interpolation
    return float(med), float(q3 - q1)


def run_batch(config, out_dir=None, keep_records=False):
    """Run every (planner, trial) pair and aggregate the study's tables.

    Baseline planners run on the same per-trial environments (seeds pair
    trials across planners).  Returns :class:`BatchResults`; when ``out_dir``
    is given, also writes per-trial logs, ``results.jsonl``, and a
    human-readable summary.
    """
    config.validate()
    planners = [config.planner] + [b for b in config.baselines if b != config.planner]
    jobs = [(config, p, i) for p in planners for i in range(config.trials)]

    outputs = []
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(_trial_job, jobs, chunksize=1))
    else:
        outputs = [_trial_job(j) for j in jobs]
    outputs.sort(key=lambda o: (planners.index(o[0]), o[1]))

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    trials = []
    records = {}
    for planner, index, record in outputs:
        report = score_trial(record, config.epsilon)
        log_file = None
        if out_dir:
            log_file = f"trial_{planner}_{index:03d}.json"
            save_record(record, os.path.join(out_dir, log_file))
        trials.append(
            TrialResult(planner, index, record.seed, record.status, report, log_file)
        )
        if keep_records:
            records[(planner, index)] = record

    aggregate = {"quartile_method": "linear", "planners": {}}
    primary = planners[0]
    for p in planners:
        rows = [t for t in trials if t.planner == p]
        med_mss, iqr_mss = _quartiles([t.metrics.mss_reward for t in rows])
        med_rmse, iqr_rmse = _quartiles([t.metrics.rmse for t in rows])
        med_xerr, iqr_xerr = _quartiles([t.metrics.xstar_error for t in rows])
        entry = {
            "trials": len(rows),
            "mss_reward": [med_mss, iqr_mss],
            "rmse": [med_rmse, iqr_rmse],
            "xstar_error": [med_xerr, iqr_xerr],
        }
        if p != primary:
            u, pval = mann_whitney_u(
                [t.metrics.mss_reward for t in trials if t.planner == primary],
                [t.metrics.mss_reward for t in rows],
            )
            entry["mwu_vs_primary"] = [u, pval]
        aggregate["planners"][p] = entry

    batch = BatchResults(config.hash(), trials, aggregate, records)
    if out_dir:
        save_results(batch, os.path.join(out_dir, "results.jsonl"))
        with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
            fh.write(format_summary(batch))
    return batch


def format_summary(batch):
    lines = [f"config {batch.config_hash}", ""]
    lines.append(f"{'planner':<12} {'mss_reward':>18} {'rmse':>16} {'xstar_error':>16} {'p vs primary':>14}")
    for p, e in batch.aggregate["planners"].items():
        m, i = e["mss_reward"]
        r, ri = e["rmse"]
        x, xi = e["xstar_error"]
        pv = e.get("mwu_vs_primary")
        ptxt = f"{pv[1]:.4g}" if pv else "-"
        lines.append(
            f"{p:<12} {m:>10.1f} ({i:.1f}) {r:>9.2f} ({ri:.2f}) {x:>9.2f} ({xi:.2f}) {ptxt:>14}"
        )
    lines.append("")
    lines.append("median (interquartile range); linear-interpolation quartiles")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# persistence

def _to_jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def record_to_dict(record):
    return {
        "planner": record.planner,
        "seed": record.seed,
        "config_hash": record.config_hash,
        "status": record.status,
        "final_time": record.final_time,
        "xstar": _to_jsonable(record.xstar),
        "fstar": record.fstar,
        "grid_xs": _to_jsonable(record.grid_xs),
        "grid_ys": _to_jsonable(record.grid_ys),
        "truth": _to_jsonable(record.truth),
        "posterior_mean": _to_jsonable(record.posterior_mean),
        "posterior_var": _to_jsonable(record.posterior_var),
        "notes": _to_jsonable(record.notes),
        "entries": [
            {
                "pose": list(e.pose),
                "action_id": e.action_id,
                "locations": _to_jsonable(e.locations),
                "times": _to_jsonable(e.times),
                "values": _to_jsonable(e.values),
                "heuristic_reward": e.heuristic_reward,
                "cumulative_length": e.cumulative_length,
                "wall_time": e.wall_time,
                "max_values": _to_jsonable(e.max_values),
            }
            for e in record.entries
        ],
    }


def record_from_dict(d):
    record = TrialRecord(
        planner=d["planner"],
        seed=d["seed"],
        config_hash=d["config_hash"],
        status=d["status"],
        xstar=np.asarray(d["xstar"]),
        fstar=d["fstar"],
        grid_xs=np.asarray(d["grid_xs"]),
        grid_ys=np.asarray(d["grid_ys"]),
        truth=np.asarray(d["truth"]),
        final_time=d["final_time"],
        posterior_mean=np.asarray(d["posterior_mean"]),
        posterior_var=np.asarray(d["posterior_var"]),
        notes=d["notes"],
    )
    for e in d["entries"]:
        mv = e["max_values"]
        record.entries.append(
            StepEntry(
                pose=tuple(e["pose"]),
                action_id=e["action_id"],
                locations=np.asarray(e["locations"]),
                times=np.asarray(e["times"]),
                values=np.asarray(e["values"]),
                heuristic_reward=e["heuristic_reward"],
                cumulative_length=e["cumulative_length"],
                wall_time=e["wall_time"],
                max_values=None if mv is None else (np.asarray(mv[0]), np.asarray(mv[1])),
            )
        )
    return record


def save_record(record, path):
    with open(path, "w") as fh:
        json.dump(record_to_dict(record), fh, sort_keys=True)
        fh.write("\n")


def load_record(path):
    with open(path) as fh:
        return record_from_dict(json.load(fh))


def save_results(batch, path):
    """One trial per line, then the aggregate block; stable byte-for-byte."""
    with open(path, "w") as fh:
        for t in batch.trials:
            fh.write(json.dumps(
                {
                    "planner": t.planner,
                    "trial": t.trial,
                    "seed": t.seed,
                    "status": t.status,
                    "config": batch.config_hash,
                    "mss_reward": t.metrics.mss_reward,
                    "rmse": t.metrics.rmse,
                    "xstar_error": t.metrics.xstar_error,
                    "log": t.log_file,
                },
                sort_keys=True,
            ) + "\n")
        fh.write(json.dumps(
            {"aggregate": _to_jsonable(batch.aggregate), "config": batch.config_hash},
            sort_keys=True,
        ) + "\n")


def load_results(path):
    trials = []
    aggregate = None
    config_hash = None
    with open(path) as fh:
        for ln in fh:
            d = json.loads(ln)
            if "aggregate" in d:
                aggregate = d["aggregate"]
                config_hash = d["config"]
            else:
                trials.append(
                    TrialResult(
                        d["planner"], d["trial"], d["seed"], d["status"],
                        MetricReport(d["mss_reward"], d["rmse"], d["xstar_error"]),
                        d["log"],
                    )
                )
                config_hash = config_hash or d["config"]
    return BatchResults(config_hash, trials, aggregate)


# ---------------------------------------------------------------------------
# plot-data export

def replay_belief(record, upto=None):
    """Rebuild the belief from the logged observations of a record.

    ``upto`` limits the replay to the first ``upto + 1`` entries (the setup
    observation is entry 0), which gives the belief as it stood right after
    that step.
    """
    notes = record.notes
    if notes.get("dynamic"):
        kernel = SpatiotemporalKernel(
            notes["lengthscale"], notes["time_lengthscale"], notes["signal_variance"]
        )
    else:
        kernel = SquaredExponential(notes["lengthscale"], notes["signal_variance"])
    belief = GPBelief(kernel, notes["noise_variance"])
    entries = record.entries if upto is None else record.entries[: upto + 1]
    for e in entries:
        pts = e.locations
        if notes.get("dynamic"):
            pts = np.hstack([pts, e.times[:, None]])
        belief = belief.condition(pts, e.values).compacted()
    return belief


def _grid_of(record):
    gx, gy = np.meshgrid(record.grid_xs, record.grid_ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")


def export_plot_data(source, what, out_dir, step=None):
    """Emit delimited text files for the standard plots.

    ``belief-heatmap`` and ``reward-heatmap`` take a trial record (optionally
    at a specific logged step); ``trajectory`` takes a record;
    ``reward-density`` takes batch results and writes a Gaussian KDE
    (Silverman bandwidth) of accumulated reward per planner.
    Returns the list of written file paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    if what == "belief-heatmap":
        record = source
        if step is None:
            mean = record.posterior_mean.ravel()
        else:
            belief = replay_belief(record, upto=step)
            pts = _grid_of(record)
            if record.notes.get("dynamic"):
                t = record.entries[min(step, len(record.entries) - 1)].times[-1]
                pts = np.hstack([pts, np.full((pts.shape[0], 1), t)])
            mean, _ = belief.posterior(pts)
        grid = _grid_of(record)
        path = os.path.join(out_dir, "belief_heatmap.csv")
        _write_rows(path, "x,y,value", np.column_stack([grid, mean]))
        written.append(path)

    elif what == "reward-heatmap":
        record = source
        path = os.path.join(out_dir, "reward_heatmap.csv")
        grid = _grid_of(record)
        values = _reward_heatmap_values(record, step)
        _write_rows(path, "x,y,value", np.column_stack([grid, values]))
        written.append(path)

    elif what == "trajectory":
        record = source
        path = os.path.join(out_dir, "trajectory.csv")
        rows = [(i, e.pose[0], e.pose[1]) for i, e in enumerate(record.entries)]
        _write_rows(path, "step,x,y", rows)
        written.append(path)

    elif what == "reward-density":
        batch = source
        planners = sorted({t.planner for t in batch.trials})
        for planner in planners:
            rewards = np.asarray(batch.rewards(planner), dtype=float)
            xs, dens = gaussian_kde(rewards)
            path = os.path.join(out_dir, f"reward_density_{planner}.csv")
            _write_rows(path, "reward,density", np.column_stack([xs, dens]))
            written.append(path)

    else:
        raise ValueError(f"unknown export kind {what!r}")
    return written


def _reward_heatmap_values(record, step=None):
    """Active heuristic reward over the evaluation grid at a logged step."""
    from .acquisition import MaxValueSet, mvi_reward, ucb_reward

    step = len(record.entries) - 1 if step is None else step
    belief = replay_belief(record, upto=step)
    pts = _grid_of(record)
    q = pts
    if record.notes.get("dynamic"):
        t = record.entries[min(step, len(record.entries) - 1)].times[-1]
        q = np.hstack([pts, np.full((pts.shape[0], 1), t)])

    if record.planner == "plumes":
        entry = record.entries[min(step, len(record.entries) - 1)]
        if entry.max_values is None:
            raise ValueError("record carries no max-value samples at this step")
        mv = MaxValueSet(np.asarray(entry.max_values[0]),
                         np.asarray(entry.max_values[1]))
        return mvi_reward(belief, q, mv)
    if record.planner in ("ucb-mcts", "ucb-myopic"):
        return ucb_reward(belief, q, UCBSchedule(), max(step, 1))
    raise ValueError(f"planner {record.planner!r} has no heuristic reward")


def gaussian_kde(samples, points=512):
    """Gaussian kernel density with Silverman's bandwidth rule.

    Degenerate (all-equal) samples fall back to a hair-width bandwidth so the
    density is a single narrow peak integrating to one.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        raise ValueError("need at least one sample")
    sd = samples.std(ddof=1) if n > 1 else 0.0
    iqr = float(np.subtract(*np.percentile(samples, [75, 25])))
    scale = min(sd, iqr / 1.34) if min(sd, iqr / 1.34) > 0 else max(sd, iqr / 1.34)
    h = 0.9 * scale * n ** (-0.2)
    if h <= 0.0:
        h = max(1e-6, 1e-6 * abs(float(samples[0])))
    lo = samples.min() - 4 * h
    hi = samples.max() + 4 * h
    xs = np.linspace(lo, hi, points)
    dens = np.exp(-0.5 * ((xs[:, None] - samples[None, :]) / h) ** 2)
    dens = dens.sum(axis=1) / (n * h * math.sqrt(2 * math.pi))
    return xs, dens
