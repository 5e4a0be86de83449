"""Acceptance criteria, one test per criterion, one printed verdict line each.

Run with `pytest tests/test_acceptance.py -v -s`.  The desk-scale pipeline
artifacts are built once (cached under .cache/acceptance); criteria then
assert against them at the tolerances fixed below.
"""

import time

import numpy as np
import pytest

from mmwnav import arrays as A
from mmwnav import classifier as C
from mmwnav import estimator as E
from mmwnav import geometry as G
from mmwnav import navsim as N
from mmwnav import raytrace as R
from mmwnav import sounding as S
from mmwnav.harness import pipeline as P
from mmwnav.harness.config import ExperimentConfig
from mmwnav.harness.report import nav_tables

from test_raytrace import brute_force_reflections, reflection_key_set

pytestmark = pytest.mark.acceptance


def verdict(num, ok, text):
    line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}: {text}"
    print(f"\n{line}", flush=True)
    assert ok, line


# -------------------------------------------------------------------------
# 1. ray-tracer oracle equivalence
# -------------------------------------------------------------------------

def test_criterion_1_raytracer_oracle():
    t0 = time.time()
    rng = np.random.default_rng(202)
    n_envs = 0
    n_links = 0
    seed = 0
    while n_envs < 20:
        seed += 1
        env = G.generate_environment(seed, G.GenConfig(rooms_min=2, rooms_max=3))
        if env.n_walls > 12:
            continue
        n_envs += 1
        tracer = R.ImageTracer(env, max_reflections=2, enable_diffraction=False)
        links = 0
        while links < 3:
            tx = rng.uniform(1, 23, 2)
            rx = rng.uniform(1, 23, 2)
            if (G.point_segment_distance(tx[None], env.walls).min() < 0.2
                    or G.point_segment_distance(rx[None], env.walls).min() < 0.2
                    or np.linalg.norm(tx - rx) < 1.0):
                continue
            links += 1
            n_links += 1
            got = reflection_key_set(tracer.trace_points(tx, rx[None, :])[0])
            want = brute_force_reflections(env, tx, rx, max_order=2)
            assert set(got) == set(want), f"path sets differ on env seed {seed}"
            for k in got:
                assert abs(got[k] - want[k]) <= 1e-9
    dt = time.time() - t0
    verdict(1, dt < 60.0,
            f"image method matches exhaustive mirror-sequence oracle on "
            f"{n_envs} environments / {n_links} links (lengths within 1e-9 m) "
            f"in {dt:.1f}s (< 60s)")


# -------------------------------------------------------------------------
# 2. estimator oracle
# -------------------------------------------------------------------------

def test_criterion_2_estimator_oracle():
    t0 = time.time()
    arrays = A.TxRxArrays.default()
    cfg = S.SoundingConfig()
    sounder = S.LinkSounder(cfg, arrays)
    floor = S.noise_floor_dbm(cfg)

    def make(rho, aoa, aod, delay):
        dtx = 10 * np.log10(A.best_directivity(arrays.tx_cfg, aod))
        drx = 10 * np.log10(A.best_directivity(arrays.rx_cfg, aoa))
        g = 10 ** ((rho - cfg.tx_power_dbm - dtx - drx + floor) / 20)
        return R.PathComponent(gain=g, aoa_deg=float(aoa), aod_deg=float(aod),
                               delay_ns=float(delay))

    # single on-grid noiseless path: exact indices, refined AoA within 0.5 deg
    aoa = float(arrays.rx_cb.azimuths_deg[5])
    aod = float(arrays.tx_cb.azimuths_deg[20])
    p = make(25.0, aoa, aod, 10 * cfg.sample_ns)
    t = sounder.sound_link([p], noise_seed=0, noiseless=True)
    f = E.decompose(t, 5)[0]
    ok = (int(np.argmax(np.abs(f.a))) == 10 and int(np.argmax(np.abs(f.b))) == 5
          and int(np.argmax(np.abs(f.c))) == 20)
    ests = E.extract_peaks(E.decompose(t, 5), t, arrays)
    ok &= ests[0].rel_delay_ns == 0.0 and abs(ests[0].aoa_deg - aoa) <= 0.5

    # two-path orthogonal case: both recovered
    p2 = make(20.0, float(arrays.rx_cb.azimuths_deg[18]),
              float(arrays.tx_cb.azimuths_deg[40]), 60 * cfg.sample_ns)
    t2 = sounder.sound_link([p, p2], noise_seed=0, noiseless=True)
    ests2 = E.estimate_link(t2, arrays)
    ok &= len(ests2) >= 2
    for true_aoa in (aoa, p2.aoa_deg):
        ok &= min(abs(e.aoa_deg - true_aoa) for e in ests2) <= 0.5
    dt = time.time() - t0
    verdict(2, bool(ok), f"single on-grid path recovered exactly and the "
                         f"two-path orthogonal case recovers both ({dt:.1f}s)")


# -------------------------------------------------------------------------
# 3. AoA error stratification on the eval environments
# -------------------------------------------------------------------------

def test_criterion_3_aoa_stratification(desk_run):
    cfg, out, durations = desk_run
    samples = P.load_dataset(out)
    _, val = P.split_dataset(cfg, samples)
    errs = {}
    for st in (R.LinkState.LOS, R.LinkState.FIRST_ORDER_NLOS,
               R.LinkState.HIGHER_ORDER_NLOS):
        errs[st] = np.array([s.aoa_err_deg for s in val
                             if s.label == int(st) and np.isfinite(s.aoa_err_deg)])
    n_links = sum(len(v) for v in errs.values())
    los5 = float(np.mean(errs[R.LinkState.LOS] < 5.0))
    fir5 = float(np.mean(errs[R.LinkState.FIRST_ORDER_NLOS] < 5.0))
    med_los = float(np.median(errs[R.LinkState.LOS]))
    med_hig = float(np.median(errs[R.LinkState.HIGHER_ORDER_NLOS]))
    build = durations["estimate"] + durations["raytrace"]
    ok = (n_links >= 5000 and los5 >= 0.90 and fir5 >= 0.75
          and med_hig > med_los and build < 1800.0)
    verdict(3, ok,
            f"eval links={n_links} (>=5000); LOS <5deg: {los5:.3f} (>=0.90); "
            f"first-order <5deg: {fir5:.3f} (>=0.75); higher-order median "
            f"{med_hig:.3f} > LOS median {med_los:.3f}; "
            f"build {build:.0f}s (< 1800s)")


# -------------------------------------------------------------------------
# 4. classifier accuracy on held-out environments
# -------------------------------------------------------------------------

def test_criterion_4_classifier_accuracy(desk_run):
    cfg, out, durations = desk_run
    samples = P.load_dataset(out)
    train, val = P.split_dataset(cfg, samples)
    model = P.load_model(out, C.MODE_AOA_AOD)
    ev = C.evaluate(model, val)
    # determinism: a shortened retrain is bit-identical per seed
    tc = C.TrainConfig(epochs=3, batch_size=cfg.batch_size, seed=cfg.seeds.train)
    m1 = C.train(train, tc, mode=C.MODE_AOA_AOD).model
    m2 = C.train(train, tc, mode=C.MODE_AOA_AOD).model
    det = all(np.array_equal(a, b) for a, b in zip(m1.weights, m2.weights))
    ok = (len(samples) >= 50000 and ev["accuracy"] >= 0.80 and det
          and durations["train"] < 1200.0)
    verdict(4, ok,
            f"dataset {len(samples)} samples (>=50000); held-out accuracy "
            f"{ev['accuracy']:.3f} (>=0.80) with the 20-input model; "
            f"training deterministic per seed: {det}; "
            f"train stage {durations['train']:.0f}s (< 1200s)")


# -------------------------------------------------------------------------
# 5. ablation ordering: AoA+AoD vs AoA-only LOS recall
# -------------------------------------------------------------------------

def test_criterion_5_ablation_ordering(desk_run):
    cfg, out, _ = desk_run
    samples = P.load_dataset(out)
    _, val = P.split_dataset(cfg, samples)
    rec = {}
    for mode in (C.MODE_AOA_AOD, C.MODE_AOA_ONLY):
        model = P.load_model(out, mode)
        ds = val if mode == C.MODE_AOA_AOD else [
            C.LinkSample(features=P.project_aoa_only(s.features), label=s.label,
                         env_id=s.env_id, tx_id=s.tx_id, cell=s.cell) for s in val]
        rec[mode] = C.evaluate(model, ds)["recall"]["LOS"]
    ok = rec[C.MODE_AOA_AOD] > rec[C.MODE_AOA_ONLY]
    verdict(5, ok,
            f"LOS recall with AoA+AoD {rec[C.MODE_AOA_AOD]:.3f} > "
            f"AoA-only {rec[C.MODE_AOA_ONLY]:.3f} on the same held-out split")


# -------------------------------------------------------------------------
# 6. MLP gradient check
# -------------------------------------------------------------------------

def test_criterion_6_gradient_check():
    t0 = time.time()
    rng = np.random.default_rng(99)
    worst = 0.0
    for trial in range(100):
        m = C.init_model(20, seed=1000 + trial)
        x = rng.uniform(-1, 1, (4, 20))
        y = rng.integers(0, 4, 4)
        _, gws, gbs = C.loss_and_grads(m, x, y)
        li = trial % 3
        w = m.weights[li]
        i = int(rng.integers(w.shape[0]))
        j = int(rng.integers(w.shape[1]))
        h = 1e-5
        w[i, j] += h
        up = C.cross_entropy(m, x, y)
        w[i, j] -= 2 * h
        dn = C.cross_entropy(m, x, y)
        w[i, j] += h
        fd = (up - dn) / (2 * h)
        rel = abs(gws[li][i, j] - fd) / max(abs(gws[li][i, j]), abs(fd), 1e-8)
        worst = max(worst, rel)
    dt = time.time() - t0
    verdict(6, worst <= 1e-4,
            f"analytic vs central-difference gradients: max relative error "
            f"{worst:.2e} (<= 1e-4) over 100 random model/input pairs ({dt:.1f}s)")


# -------------------------------------------------------------------------
# 7. navigation policy ordering
# -------------------------------------------------------------------------

def test_criterion_7_policy_ordering(desk_run):
    cfg, out, durations = desk_run
    episodes = P.load_episodes(out)
    arrival, _, labels = nav_tables(episodes)
    n_triples = len(labels)
    rates = {}
    for row in arrival[1:]:
        pol, diff, rate = row.split(",")
        rates[(pol, diff)] = float(rate)

    combined = "aoa_when_los_or_first_nlos"
    ok = n_triples >= 150
    msgs = [f"triples={n_triples} (>=150)"]
    for diff in ("moderate", "hard"):
        for rival in ("aoa_by_snr", "aoa_when_los"):
            lhs = rates[(combined, diff)]
            rhs = rates[(rival, diff)]
            ok &= lhs >= rhs
            msgs.append(f"{diff}: {combined.split('_')[-2]}+LOS "
                        f"{lhs:.2f} >= {rival} {rhs:.2f}")
    lhs_all = rates[(combined, "all")]
    vis_all = rates[("visual_los", "all")]
    ok &= lhs_all >= vis_all
    msgs.append(f"overall {lhs_all:.2f} >= visual {vis_all:.2f}")
    ok &= durations["navigate"] < 3600.0
    msgs.append(f"nav stage {durations['navigate']:.0f}s (< 3600s)")
    verdict(7, bool(ok), "; ".join(msgs))


# -------------------------------------------------------------------------
# 8. step-cap and relative-time contracts
# -------------------------------------------------------------------------

def test_criterion_8_step_cap_and_relative_time(desk_run):
    _, out, _ = desk_run
    episodes = P.load_episodes(out)
    cap_ok = all((ep["success"] and ep["steps"] <= 1000)
                 or (not ep["success"] and ep["steps"] == 1000)
                 for ep in episodes)
    base = [ep["relative_time"] for ep in episodes if ep["policy"] == "baseline"]
    base_ok = len(base) > 0 and float(np.mean(base)) == 1.0
    verdict(8, cap_ok and base_ok,
            f"success iff within 1000 steps across {len(episodes)} episodes; "
            f"baseline mean relative_time = {np.mean(base):.10f} (exactly 1.0)")


# -------------------------------------------------------------------------
# 9. feature-scaling unit suite
# -------------------------------------------------------------------------

def test_criterion_9_feature_scaling():
    checks = [
        C.scale_snr(5.0) == 0.0,
        C.scale_snr(50.0) == 1.0,
        C.scale_snr(27.5) == 0.5,
        C.scale_snr(-10.0) == 0.0,
        C.scale_angle(0.0) == 0.0,
        C.scale_angle(-180.0) == -1.0,
        C.scale_angle(90.0) == 0.5,
        C.scale_delay(0.0) == 0.0,
        C.scale_delay(100.0) == 1.0,
        C.scale_delay(150.0) == 1.5,
        C.GAMMA_MIN_DB == 5.0,
        C.GAMMA_MAX_DB == 50.0,
        C.DELAY_SCALE_NS == 100.0,
    ]
    verdict(9, all(checks),
            f"all {len(checks)} scaling identities exact "
            f"(gamma range [5, 50] dB, 100 ns delay scale)")


# -------------------------------------------------------------------------
# 10. determinism: pipeline twice -> byte-identical reports
# -------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    """Runs the complete pipeline twice at a reduced footprint (the stages
    and code paths are exactly the desk-scale ones) and compares reports
    byte for byte."""
    import filecmp
    import os
    cfg = ExperimentConfig(n_envs=2, train_envs=1, eval_envs=1, tx_per_env=1,
                           cells_per_map=60, epochs=10, batch_size=64,
                           workers=2, starts_per_tx=1,
                           nav=N.NavConfig(max_steps=250))
    outs = []
    for tag in ("a", "b"):
        out = str(tmp_path / tag)
        P.run_pipeline(cfg, out, navigate=True, log=lambda *a: None)
        outs.append(out)
    names = sorted(os.listdir(os.path.join(outs[0], "reports")))
    same = True
    for name in names:
        f0 = os.path.join(outs[0], "reports", name)
        f1 = os.path.join(outs[1], "reports", name)
        if not filecmp.cmp(f0, f1, shallow=False):
            same = False
    # the persisted dataset and episodes must match too
    for rel in (("dataset", "samples.ndjson"), ("nav", "episodes.ndjson")):
        if not filecmp.cmp(os.path.join(outs[0], *rel),
                           os.path.join(outs[1], *rel), shallow=False):
            same = False
    verdict(10, same,
            f"two pipeline runs under one config produced byte-identical "
            f"reports ({', '.join(names)}), dataset and episode logs")
