"""Report export: CSV summaries of estimation, classification and navigation.

All rows are written in sorted, fixed-format order so a repeated run under
the same config produces byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .. import classifier as C
from ..navsim import classify_difficulty
from ..raytrace import LinkState
from .config import ExperimentConfig
from .pipeline import atomic_write, load_dataset, load_episodes, split_dataset

POLICIES = ["baseline", "aoa_by_snr", "aoa_when_los",
            "aoa_when_los_or_first_nlos", "visual_los"]


def _cdf_points(values, max_points: int = 200):
    v = np.sort(np.asarray(values))
    n = len(v)
    if n == 0:
        return []
    idx = np.unique(np.linspace(0, n - 1, min(max_points, n)).astype(int))
    return [(float(v[i]), float((i + 1) / n)) for i in idx]


def aoa_cdf_rows(samples):
    rows = ["state,err_deg,cdf"]
    by_state = {}
    for s in samples:
        if np.isfinite(s.aoa_err_deg):
            by_state.setdefault(LinkState(s.label).name, []).append(s.aoa_err_deg)
    for state in sorted(by_state):
        for err, cdf in _cdf_points(by_state[state]):
            rows.append(f"{state},{err:.6g},{cdf:.6g}")
    return rows


def confusion_rows(classifier_eval: dict):
    rows = ["mode,true,pred,count"]
    for mode in sorted(classifier_eval):
        conf = classifier_eval[mode]["confusion"]
        for t in range(len(conf)):
            for p in range(len(conf[t])):
                rows.append(f"{mode},{LinkState(t).name},{LinkState(p).name},{conf[t][p]}")
    return rows


def nav_tables(episodes):
    """Arrival-rate and relative-time tables with tercile difficulty labels.

    Difficulty is assigned per (env, tx, start) triple from the baseline
    episode's step count and shared by every policy's episode on that triple.
    """
    triples = {}
    for ep in episodes:
        key = (ep["env_id"], ep["tx_id"], tuple(ep["start"]))
        triples.setdefault(key, {})[ep["policy"]] = ep
    keys = sorted(triples)
    base_steps = [triples[k]["baseline"]["steps"] for k in keys]
    labels = classify_difficulty(base_steps)
    for k, lab in zip(keys, labels):
        for ep in triples[k].values():
            ep["difficulty"] = lab

    arrival = ["policy,difficulty,rate"]
    speed = ["policy,difficulty,rel_time,cdf"]
    for policy in POLICIES:
        eps = [ep for k in keys for p, ep in triples[k].items() if p == policy]
        for diff in ("easy", "moderate", "hard", "all"):
            sel = [e for e in eps if diff == "all" or e["difficulty"] == diff]
            if not sel:
                continue
            rate = float(np.mean([e["success"] for e in sel]))
            arrival.append(f"{policy},{diff},{rate:.6g}")
            # failures enter as their capped relative time (large values)
            rel = [e["relative_time"] for e in sel if np.isfinite(e["relative_time"])]
            for rt, cdf in _cdf_points(rel):
                speed.append(f"{policy},{diff},{rt:.6g},{cdf:.6g}")
    return arrival, speed, labels


def stage_report(cfg: ExperimentConfig, out: str):
    samples = load_dataset(out)
    _, val = split_dataset(cfg, samples)
    atomic_write(os.path.join(out, "reports", "aoa_cdf.csv"),
                 "\n".join(aoa_cdf_rows(val)) + "\n")

    with open(os.path.join(out, "reports", "classifier_eval.json")) as f:
        ce = json.load(f)
    atomic_write(os.path.join(out, "reports", "confusion.csv"),
                 "\n".join(confusion_rows(ce)) + "\n")

    nav_file = os.path.join(out, "nav", "episodes.ndjson")
    if os.path.exists(nav_file):
        episodes = load_episodes(out)
        arrival, speed, _ = nav_tables(episodes)
        atomic_write(os.path.join(out, "reports", "arrivals.csv"),
                     "\n".join(arrival) + "\n")
        atomic_write(os.path.join(out, "reports", "speed_cdf.csv"),
                     "\n".join(speed) + "\n")
    return True
