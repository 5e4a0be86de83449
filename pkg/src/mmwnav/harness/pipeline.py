"""Pipeline stages: environments -> path maps -> estimates -> dataset ->
classifier -> navigation -> report.

Every stage reads and writes the documented file formats under one run
directory, writes atomically (temp + rename), and is deterministic under a
fixed ExperimentConfig.  The sound+estimate stage fuses the two steps in
memory per link; persisted correlation tensors are only produced by the
`sound` CLI utility since a full map of them would be hundreds of GB.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from multiprocessing import get_context

import numpy as np

from .. import classifier as C
from .. import estimator as E
from .. import navsim as N
from .. import raytrace as R
from .. import sounding as S
from ..arrays import TxRxArrays, ideal_path_snr_db
from ..geometry import FREE, Environment, OccupancyMap, build_rx_grid, generate_environment, place_transmitters
from .config import ExperimentConfig


def atomic_write(path, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _env_path(out, env_id):
    return os.path.join(out, "envs", f"env_{env_id:03d}.json")


def _pathmap_path(out, env_id, tx_id):
    return os.path.join(out, "pathmaps", f"env_{env_id:03d}_tx_{tx_id}.ndjson")


def _estimates_path(out, env_id, tx_id):
    return os.path.join(out, "estimates", f"env_{env_id:03d}_tx_{tx_id}.ndjson")


def make_arrays(cfg: ExperimentConfig) -> TxRxArrays:
    return TxRxArrays.default(n_dir_tx=cfg.n_dir_tx, n_dir_rx=cfg.n_dir_rx,
                              fine_step_deg=cfg.fine_step_deg)


def make_tracer(env: Environment, cfg: ExperimentConfig) -> R.ImageTracer:
    return R.ImageTracer(
        env, max_reflections=cfg.max_reflections,
        enable_diffraction=cfg.enable_diffraction,
        diffraction_loss_db=cfg.diffraction_loss_db,
        diffraction_slope_db_per_deg=cfg.diffraction_slope_db_per_deg,
        enable_transmission=cfg.enable_transmission,
        transmission_loss_db=cfg.transmission_loss_db,
        max_transmissions=cfg.max_transmissions,
        carrier_hz=cfg.carrier_hz, max_range_m=cfg.max_range_m)


def make_sounder(cfg: ExperimentConfig, arrays: TxRxArrays) -> S.LinkSounder:
    dtype = np.complex64 if cfg.tensor_dtype == "complex64" else np.complex128
    return S.LinkSounder(cfg.sounding, arrays, dtype=dtype)


def link_noise_seed(cfg: ExperimentConfig, env_id: int, tx_id: int, cell) -> np.random.SeedSequence:
    return np.random.SeedSequence((cfg.seeds.noise, env_id, tx_id,
                                   int(cell[0]), int(cell[1])))


def snr_fn_for(cfg: ExperimentConfig, arrays: TxRxArrays):
    floor = S.noise_floor_dbm(cfg.sounding)
    ptx = cfg.sounding.tx_power_dbm

    def snr_fn(paths):
        return ideal_path_snr_db(paths, arrays.tx_cfg, arrays.rx_cfg, ptx, floor)
    return snr_fn


# ---------------------------------------------------------------------------
# stage 1: environments
# ---------------------------------------------------------------------------

def stage_gen_envs(cfg: ExperimentConfig, out: str):
    paths = []
    for env_id in range(cfg.n_envs):
        env = generate_environment(cfg.seeds.env + env_id, cfg.gen)
        env = place_transmitters(env, cfg.tx_per_env, seed=cfg.seeds.env + 50000 + env_id)
        p = _env_path(out, env_id)
        atomic_write(p, env.to_json() + "\n")
        paths.append(p)
    return paths


def load_env(out, env_id) -> Environment:
    with open(_env_path(out, env_id)) as f:
        return Environment.from_json(f.read())


def sampled_cells(cfg: ExperimentConfig, env: Environment, env_id: int, tx_id: int):
    """Deterministic subsample of valid grid cells for one (env, tx) map."""
    grid = build_rx_grid(env, cfg.grid_nx, cfg.grid_ny, cfg.grid_spacing_m)
    cells = grid.valid_cells()
    if cfg.cells_per_map and len(cells) > cfg.cells_per_map:
        rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seeds.env, 7, env_id, tx_id)))
        keep = rng.choice(len(cells), size=cfg.cells_per_map, replace=False)
        cells = cells[np.sort(keep)]
    return grid, cells


# ---------------------------------------------------------------------------
# stage 2: ray tracing (path maps)
# ---------------------------------------------------------------------------

def _trace_task(args):
    cfg_json, out, env_id, tx_id = args
    cfg = ExperimentConfig.from_json(cfg_json)
    env = load_env(out, env_id)
    arrays = make_arrays(cfg)
    tracer = make_tracer(env, cfg)
    grid, cells = sampled_cells(cfg, env, env_id, tx_id)
    recs = R.trace_map(env, tx_id, grid, snr_fn_for(cfg, arrays),
                       threshold_db=cfg.label_threshold_db,
                       cells=cells, tracer=tracer)
    atomic_write(_pathmap_path(out, env_id, tx_id),
                 "\n".join(R.record_to_json(r) for r in recs) + "\n")
    return env_id, tx_id, len(recs)


def stage_raytrace(cfg: ExperimentConfig, out: str, env_ids=None):
    tasks = [(cfg.to_json(), out, e, t)
             for e in (env_ids if env_ids is not None else range(cfg.n_envs))
             for t in range(cfg.tx_per_env)]
    return _run_tasks(_trace_task, tasks, cfg.workers)


# ---------------------------------------------------------------------------
# stage 3: sounding + estimation (fused per link)
# ---------------------------------------------------------------------------

def _estimate_task(args):
    cfg_json, out, env_id, tx_id = args
    cfg = ExperimentConfig.from_json(cfg_json)
    arrays = make_arrays(cfg)
    sounder = make_sounder(cfg, arrays)
    lines = []
    with open(_pathmap_path(out, env_id, tx_id)) as f:
        for line in f:
            rec = R.record_from_json(line)
            seed = link_noise_seed(cfg, env_id, tx_id, rec.rx_cell)
            tensor = sounder.sound_link(rec.paths, noise_seed=seed)
            ests = E.estimate_link(tensor, arrays, k_paths=cfg.k_paths)
            lines.append(E.estimates_to_json(tx_id, rec.rx_cell, ests))
    atomic_write(_estimates_path(out, env_id, tx_id), "\n".join(lines) + "\n")
    return env_id, tx_id, len(lines)


def stage_estimate(cfg: ExperimentConfig, out: str, env_ids=None):
    tasks = [(cfg.to_json(), out, e, t)
             for e in (env_ids if env_ids is not None else range(cfg.n_envs))
             for t in range(cfg.tx_per_env)]
    return _run_tasks(_estimate_task, tasks, cfg.workers)


def _limit_blas_threads():
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def _run_tasks(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    try:
        ctx = get_context("fork")
    except ValueError:
        ctx = get_context("spawn")
    with ctx.Pool(processes=workers, initializer=_limit_blas_threads) as pool:
        return pool.map(fn, tasks)


# ---------------------------------------------------------------------------
# stage 4: dataset assembly
# ---------------------------------------------------------------------------

class KeyMismatch(Exception):
    pass


def build_dataset(pathmap_files, estimate_files, env_ids, tx_ids) -> list:
    """Join estimates with ray-trace ground truth into LinkSamples."""
    samples = []
    for pm, ef, env_id, tx_id in zip(pathmap_files, estimate_files, env_ids, tx_ids):
        truth = {}
        with open(pm) as f:
            for line in f:
                rec = R.record_from_json(line)
                truth[rec.rx_cell] = rec
        seen = set()
        with open(ef) as f:
            for line in f:
                _, cell, ests = E.estimates_from_json(line)
                if cell not in truth:
                    raise KeyMismatch(f"estimates for uncovered link {cell} in {ef}")
                seen.add(cell)
                rec = truth[cell]
                feats = C.assemble_features(ests, C.MODE_AOA_AOD)
                aoa_err = float("nan")
                est_snr = float("nan")
                if ests and rec.paths:
                    err = abs(ests[0].aoa_deg - rec.paths[0].aoa_deg)
                    aoa_err = min(err % 360.0, 360.0 - err % 360.0)
                    est_snr = ests[0].snr_db
                samples.append(C.LinkSample(
                    features=feats, label=int(rec.true_state), env_id=env_id,
                    tx_id=tx_id, cell=cell, aoa_err_deg=aoa_err, est_snr_db=est_snr))
        if seen != set(truth):
            raise KeyMismatch(f"{len(set(truth)) - len(seen)} links missing estimates in {ef}")
    return samples


def stage_build_dataset(cfg: ExperimentConfig, out: str):
    pms, efs, eids, tids = [], [], [], []
    for e in range(cfg.n_envs):
        for t in range(cfg.tx_per_env):
            pms.append(_pathmap_path(out, e, t))
            efs.append(_estimates_path(out, e, t))
            eids.append(e)
            tids.append(t)
    samples = build_dataset(pms, efs, eids, tids)
    atomic_write(os.path.join(out, "dataset", "samples.ndjson"),
                 "\n".join(s.to_json() for s in samples) + "\n")
    counts = {}
    for s in samples:
        counts[R.LinkState(s.label).name] = counts.get(R.LinkState(s.label).name, 0) + 1
    atomic_write(os.path.join(out, "dataset", "class_balance.json"),
                 json.dumps({"total": len(samples), "counts": counts},
                            sort_keys=True, indent=2) + "\n")
    return samples


def load_dataset(out: str) -> list:
    samples = []
    with open(os.path.join(out, "dataset", "samples.ndjson")) as f:
        for line in f:
            if line.strip():
                samples.append(C.LinkSample.from_json(line))
    return samples


def project_aoa_only(features20: np.ndarray) -> np.ndarray:
    """Drop the AoD slot of each per-path block: 20 features -> 15."""
    blocks = features20.reshape(C.K_PATHS, 4)
    return blocks[:, [0, 1, 3]].reshape(-1)


# ---------------------------------------------------------------------------
# stage 5/6: classifier training and evaluation
# ---------------------------------------------------------------------------

def split_dataset(cfg: ExperimentConfig, samples):
    train = [s for s in samples if s.env_id in set(cfg.train_env_ids)]
    val = [s for s in samples if s.env_id in set(cfg.eval_env_ids)]
    return train, val


def _with_mode(samples, mode):
    if mode == C.MODE_AOA_AOD:
        return samples
    out = []
    for s in samples:
        out.append(C.LinkSample(features=project_aoa_only(s.features),
                                label=s.label, env_id=s.env_id, tx_id=s.tx_id,
                                cell=s.cell))
    return out


def stage_train(cfg: ExperimentConfig, out: str, samples=None):
    if samples is None:
        samples = load_dataset(out)
    train, val = split_dataset(cfg, samples)
    tc = C.TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                       batch_size=cfg.batch_size, seed=cfg.seeds.train)
    results = {}
    for mode in (C.MODE_AOA_AOD, C.MODE_AOA_ONLY):
        tr = C.train(_with_mode(train, mode), tc, mode=mode,
                     val_dataset=_with_mode(val, mode))
        atomic_write(os.path.join(out, "models", f"model_{mode}.json"),
                     tr.model.to_json() + "\n")
        rows = ["epoch,train_loss,val_loss,train_acc,val_acc"]
        h = tr.history
        for i in range(len(h["epoch"])):
            rows.append(f'{h["epoch"][i]},{h["train_loss"][i]:.6g},'
                        f'{h["val_loss"][i]:.6g},{h["train_acc"][i]:.6g},'
                        f'{h["val_acc"][i]:.6g}')
        atomic_write(os.path.join(out, "models", f"metrics_{mode}.csv"),
                     "\n".join(rows) + "\n")
        results[mode] = tr
    return results


def load_model(out: str, mode: str) -> C.MlpModel:
    with open(os.path.join(out, "models", f"model_{mode}.json")) as f:
        return C.MlpModel.from_json(f.read())


def stage_eval_classifier(cfg: ExperimentConfig, out: str, samples=None):
    if samples is None:
        samples = load_dataset(out)
    _, val = split_dataset(cfg, samples)
    report = {}
    for mode in (C.MODE_AOA_AOD, C.MODE_AOA_ONLY):
        model = load_model(out, mode)
        ev = C.evaluate(model, _with_mode(val, mode))
        report[mode] = {"accuracy": ev["accuracy"], "recall": ev["recall"],
                        "confusion": ev["confusion"].tolist()}
    atomic_write(os.path.join(out, "reports", "classifier_eval.json"),
                 json.dumps(report, sort_keys=True, indent=2) + "\n")
    return report


# ---------------------------------------------------------------------------
# stage 7: navigation
# ---------------------------------------------------------------------------

class EstimateProvider:
    """Per-(env, tx) cache of estimates and the classifier prediction."""

    def __init__(self, cfg: ExperimentConfig, env: Environment, env_id: int,
                 tx_id: int, arrays: TxRxArrays, sounder: S.LinkSounder,
                 tracer: R.ImageTracer, model: C.MlpModel):
        self.cfg = cfg
        self.env = env
        self.env_id = env_id
        self.tx_id = tx_id
        self.arrays = arrays
        self.sounder = sounder
        self.tracer = tracer
        self.model = model
        self.spacing = cfg.grid_spacing_m
        self._cache = {}

    def __call__(self, pos):
        ix = int(np.clip(pos[0] / self.spacing, 0, self.cfg.grid_nx - 1))
        iy = int(np.clip(pos[1] / self.spacing, 0, self.cfg.grid_ny - 1))
        key = (ix, iy)
        if key not in self._cache:
            center = np.array([(ix + 0.5) * self.spacing, (iy + 0.5) * self.spacing])
            paths = self.tracer.trace_points(self.env.tx[self.tx_id], center[None, :])[0]
            paths = sorted(paths, key=lambda p: -abs(p.gain))[:R.LinkRecord.L_MAX]
            seed = link_noise_seed(self.cfg, self.env_id, self.tx_id, key)
            tensor = self.sounder.sound_link(paths, noise_seed=seed)
            ests = E.estimate_link(tensor, self.arrays, k_paths=self.cfg.k_paths)
            feats = C.assemble_features(ests, self.model.mode)
            state = R.LinkState(int(C.predict(self.model, feats)[0]))
            self._cache[key] = (ests, state)
        return self._cache[key]


def sample_starts(cfg: ExperimentConfig, world: N.NavWorld, tx, n: int, seed):
    """Free, TX-reachable start cells at least min_start_dist_m from the TX."""
    occ = world.true_map
    dmap = N._distance_map(occ, occ.cell_of(tx), unknown_ok=False)
    rng = np.random.default_rng(seed)
    free = np.argwhere((occ.cells == FREE) & np.isfinite(dmap))
    d = np.linalg.norm((free + 0.5) * occ.resolution - np.asarray(tx), axis=1)
    cand = free[d >= cfg.min_start_dist_m]
    if len(cand) < n:
        cand = free
    pick = rng.choice(len(cand), size=min(n, len(cand)), replace=False)
    return [occ.center_of(int(c[0]), int(c[1])) for c in cand[np.sort(pick)]]


def _nav_task(args):
    cfg_json, out, env_id = args
    cfg = ExperimentConfig.from_json(cfg_json)
    env = load_env(out, env_id)
    arrays = make_arrays(cfg)
    sounder = make_sounder(cfg, arrays)
    model = load_model(out, C.MODE_AOA_AOD)
    world = N.NavWorld(env, cfg.nav)
    tracer = make_tracer(env, cfg)
    results = []
    for tx_id in range(cfg.tx_per_env):
        provider = EstimateProvider(cfg, env, env_id, tx_id, arrays, sounder,
                                    tracer, model)
        starts = sample_starts(cfg, world, env.tx[tx_id], cfg.starts_per_tx,
                               np.random.SeedSequence((cfg.seeds.nav, env_id, tx_id)))
        for start in starts:
            base = N.run_episode(world, tx_id, start, N.Policy.BASELINE)
            base.baseline_steps = base.steps
            base.relative_time = 1.0
            results.append(base)
            for pol in (N.Policy.AOA_BY_SNR, N.Policy.AOA_WHEN_LOS,
                        N.Policy.AOA_WHEN_LOS_OR_FIRST_NLOS, N.Policy.VISUAL_LOS):
                res = N.run_episode(world, tx_id, start, pol,
                                    estimates_provider=provider,
                                    baseline_steps=base.steps)
                results.append(res)
    return env_id, [r.to_json() for r in results]


def stage_navigate(cfg: ExperimentConfig, out: str, env_ids=None):
    ids = list(env_ids if env_ids is not None else cfg.eval_env_ids)
    tasks = [(cfg.to_json(), out, e) for e in ids]
    parts = _run_tasks(_nav_task, tasks, cfg.workers)
    parts.sort(key=lambda p: p[0])
    lines = [line for _, ls in parts for line in ls]
    atomic_write(os.path.join(out, "nav", "episodes.ndjson"),
                 "\n".join(lines) + "\n")
    return lines


def load_episodes(out: str) -> list:
    eps = []
    with open(os.path.join(out, "nav", "episodes.ndjson")) as f:
        for line in f:
            if line.strip():
                eps.append(json.loads(line))
    return eps


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def run_pipeline(cfg: ExperimentConfig, out: str, navigate: bool = True,
                 log=print):
    from .report import stage_report
    os.makedirs(out, exist_ok=True)
    atomic_write(os.path.join(out, "config.json"), cfg.to_json() + "\n")
    log("[1/7] generating environments")
    stage_gen_envs(cfg, out)
    log("[2/7] ray tracing path maps")
    stage_raytrace(cfg, out)
    log("[3/7] sounding and estimating")
    stage_estimate(cfg, out)
    log("[4/7] building dataset")
    samples = stage_build_dataset(cfg, out)
    log("[5/7] training classifiers")
    stage_train(cfg, out, samples)
    log("[6/7] evaluating classifiers")
    stage_eval_classifier(cfg, out, samples)
    if navigate:
        log("[7/7] navigation episodes")
        stage_navigate(cfg, out)
    stage_report(cfg, out)
    log("pipeline complete")
