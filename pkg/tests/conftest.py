"""Shared fixtures: the cached desk-scale pipeline run used by acceptance.

The desk run (8 environments x 3 TX x 2200 cells, classifier training, and
held-out navigation episodes) takes tens of minutes to build, so each stage
is cached under .cache/acceptance keyed by the experiment config; re-runs
only rebuild when the config or code-relevant seeds change.
"""

import hashlib
import json
import os
import time

import pytest

from mmwnav.harness import pipeline as P
from mmwnav.harness.config import ExperimentConfig
from mmwnav.harness.report import stage_report

CACHE_ROOT = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                          ".cache", "acceptance")


def _stamp(out, name):
    return os.path.join(out, f".{name}.stamp")


def _ensure(out, name, build):
    """Run `build` once per (config, stage); returns the stage duration."""
    path = _stamp(out, name)
    if os.path.exists(path):
        with open(path) as f:
            return json.load(f)["seconds"]
    t0 = time.time()
    build()
    dt = time.time() - t0
    P.atomic_write(path, json.dumps({"seconds": dt}))
    return dt


@pytest.fixture(scope="session")
def desk_run():
    """Desk-scale artifacts: (config, run dir, per-stage durations)."""
    cfg = ExperimentConfig()
    key = hashlib.sha256(cfg.to_json().encode()).hexdigest()[:12]
    out = os.path.join(CACHE_ROOT, f"desk-{key}")
    os.makedirs(out, exist_ok=True)
    P.atomic_write(os.path.join(out, "config.json"), cfg.to_json() + "\n")
    durations = {
        "envs": _ensure(out, "envs", lambda: P.stage_gen_envs(cfg, out)),
        "raytrace": _ensure(out, "raytrace", lambda: P.stage_raytrace(cfg, out)),
        "estimate": _ensure(out, "estimate", lambda: P.stage_estimate(cfg, out)),
        "dataset": _ensure(out, "dataset", lambda: P.stage_build_dataset(cfg, out)),
        "train": _ensure(out, "train", lambda: P.stage_train(cfg, out)),
        "eval": _ensure(out, "eval", lambda: P.stage_eval_classifier(cfg, out)),
        "navigate": _ensure(out, "navigate", lambda: P.stage_navigate(cfg, out)),
        "report": _ensure(out, "report", lambda: stage_report(cfg, out)),
    }
    return cfg, out, durations


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: spec acceptance criteria (desk-scale, slow)")
