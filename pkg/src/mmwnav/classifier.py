"""Link-state feature pipeline and neural classifier.

Per-path features are the scaled SNR, AoA, AoD and relative delay of the K
strongest estimated paths; missing paths are zero blocks.  The classifier is
a two-hidden-layer fully connected network with a four-way softmax, trained
with mini-batch Adam.  Everything is plain numpy and deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .raytrace import LinkState

K_PATHS = 5
GAMMA_MIN_DB = 5.0
GAMMA_MAX_DB = 50.0
DELAY_SCALE_NS = 100.0

MODE_AOA_AOD = "aoa_aod"
MODE_AOA_ONLY = "aoa_only"


class EmptyDataset(Exception):
    pass


class DimensionMismatch(Exception):
    pass


def scale_snr(gamma_db: float) -> float:
    """SNR in dB to the unit interval between gamma_min and gamma_max."""
    z = (gamma_db - GAMMA_MIN_DB) / (GAMMA_MAX_DB - GAMMA_MIN_DB)
    return float(min(1.0, max(0.0, z)))


def scale_angle(deg: float) -> float:
    """Azimuth in [-180, 180) to [-1, 1)."""
    d = (deg + 180.0) % 360.0 - 180.0
    return float(d / 180.0)


def scale_delay(rel_ns: float) -> float:
    """Relative delay scaled by 100 ns (30 m of propagation)."""
    if rel_ns < 0:
        raise ValueError("relative delay must be >= 0")
    return float(rel_ns / DELAY_SCALE_NS)


def feature_length(mode: str) -> int:
    return K_PATHS * (4 if mode == MODE_AOA_AOD else 3)


def assemble_features(estimates, mode: str = MODE_AOA_AOD) -> np.ndarray:
    """Feature vector from SNR-sorted path estimates.

    Layout per path: [scaled SNR, scaled AoA, scaled AoD, scaled rel delay],
    the AoD slot omitted in AoA-only mode; zero blocks mark missing paths.
    """
    if mode not in (MODE_AOA_AOD, MODE_AOA_ONLY):
        raise ValueError(f"unknown mode {mode!r}")
    block = 4 if mode == MODE_AOA_AOD else 3
    top = sorted(estimates, key=lambda e: -e.snr_db)[:K_PATHS]
    out = np.zeros(K_PATHS * block)
    for i, e in enumerate(top):
        vals = [scale_snr(e.snr_db), scale_angle(e.aoa_deg)]
        if mode == MODE_AOA_AOD:
            vals.append(scale_angle(e.aod_deg))
        vals.append(scale_delay(e.rel_delay_ns))
        out[i * block:(i + 1) * block] = vals
    return out


@dataclass
class LinkSample:
    features: np.ndarray
    label: int
    env_id: int
    tx_id: int
    cell: tuple
    # diagnostics carried for reporting (not classifier inputs)
    aoa_err_deg: float = float("nan")
    est_snr_db: float = float("nan")

    def to_json(self) -> str:
        d = {
            "features": [float(v) for v in self.features],
            "label": int(self.label),
            "env_id": self.env_id, "tx_id": self.tx_id,
            "cell": [int(self.cell[0]), int(self.cell[1])],
        }
        if np.isfinite(self.aoa_err_deg):
            d["aoa_err_deg"] = self.aoa_err_deg
        if np.isfinite(self.est_snr_db):
            d["est_snr_db"] = self.est_snr_db
        return json.dumps(d)

    @staticmethod
    def from_json(line: str) -> "LinkSample":
        d = json.loads(line)
        return LinkSample(features=np.array(d["features"]), label=int(d["label"]),
                          env_id=d["env_id"], tx_id=d["tx_id"], cell=tuple(d["cell"]),
                          aoa_err_deg=d.get("aoa_err_deg", float("nan")),
                          est_snr_db=d.get("est_snr_db", float("nan")))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

N_CLASSES = 4
HIDDEN_UNITS = (8, 6)


@dataclass
class MlpModel:
    weights: list
    biases: list
    mode: str = MODE_AOA_AOD

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "layers": [{"rows": w.shape[0], "cols": w.shape[1],
                        "w": w.ravel().tolist(), "b": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        })

    @staticmethod
    def from_json(text: str) -> "MlpModel":
        d = json.loads(text)
        ws, bs = [], []
        for layer in d["layers"]:
            ws.append(np.array(layer["w"]).reshape(layer["rows"], layer["cols"]))
            bs.append(np.array(layer["b"]))
        return MlpModel(weights=ws, biases=bs, mode=d["mode"])


def init_model(n_inputs: int, seed: int, mode: str = MODE_AOA_AOD,
               hidden=HIDDEN_UNITS) -> MlpModel:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [n_inputs, *hidden, N_CLASSES]
    ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fi + fo))
        ws.append(rng.uniform(-lim, lim, size=(fi, fo)))
        bs.append(np.zeros(fo))
    return MlpModel(weights=ws, biases=bs, mode=mode)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities; x is (n_in,) or (batch, n_in)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.weights[0].shape[0]:
        raise DimensionMismatch(
            f"input width {x.shape[1]} != model {model.weights[0].shape[0]}")
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return _softmax(h @ model.weights[-1] + model.biases[-1])


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    return forward(model, x).argmax(axis=-1)


def cross_entropy(model: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    p = forward(model, x)
    idx = np.arange(len(p))
    return float(-np.mean(np.log(p[idx, y] + 1e-300)))


def loss_and_grads(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and gradients by backprop."""
    x = np.atleast_2d(x)
    n = len(x)
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    p = _softmax(h @ model.weights[-1] + model.biases[-1])
    idx = np.arange(n)
    loss = float(-np.mean(np.log(p[idx, y] + 1e-300)))
    delta = p.copy()
    delta[idx, y] -= 1.0
    delta /= n
    gws, gbs = [], []
    for li in range(len(model.weights) - 1, -1, -1):
        gws.append(acts[li].T @ delta)
        gbs.append(delta.sum(axis=0))
        if li > 0:
            delta = (delta @ model.weights[li].T) * (acts[li] > 0)
    return loss, gws[::-1], gbs[::-1]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 300
    batch_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")


@dataclass
class TrainResult:
    model: MlpModel
    history: dict = field(default_factory=dict)  # per-epoch metric traces


def _as_xy(dataset, mode):
    x = np.stack([s.features for s in dataset])
    y = np.array([s.label for s in dataset], dtype=np.int64)
    n_in = feature_length(mode)
    if x.shape[1] != n_in:
        raise DimensionMismatch(f"features width {x.shape[1]}, expected {n_in}")
    return x, y


def train(dataset, cfg: TrainConfig = TrainConfig(), mode: str = MODE_AOA_AOD,
          val_dataset=None) -> TrainResult:
    """Mini-batch Adam training with per-epoch metric traces."""
    if not dataset:
        raise EmptyDataset("no training samples")
    if len({s.label for s in dataset}) < 2:
        raise EmptyDataset("need at least two classes to train")
    x, y = _as_xy(dataset, mode)
    val = _as_xy(val_dataset, mode) if val_dataset else None
    model = init_model(x.shape[1], seed=cfg.seed, mode=mode)
    rng = np.random.default_rng(cfg.seed + 1)

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    hist = {"epoch": [], "train_loss": [], "train_acc": [],
            "val_loss": [], "val_acc": []}

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        for lo in range(0, len(x), cfg.batch_size):
            bidx = order[lo:lo + cfg.batch_size]
            _, gws, gbs = loss_and_grads(model, x[bidx], y[bidx])
            step += 1
            b1c = 1.0 - cfg.beta1 ** step
            b2c = 1.0 - cfg.beta2 ** step
            for li in range(len(model.weights)):
                m_w[li] = cfg.beta1 * m_w[li] + (1 - cfg.beta1) * gws[li]
                v_w[li] = cfg.beta2 * v_w[li] + (1 - cfg.beta2) * gws[li] ** 2
                model.weights[li] -= cfg.learning_rate * (m_w[li] / b1c) / (
                    np.sqrt(v_w[li] / b2c) + cfg.eps)
                m_b[li] = cfg.beta1 * m_b[li] + (1 - cfg.beta1) * gbs[li]
                v_b[li] = cfg.beta2 * v_b[li] + (1 - cfg.beta2) * gbs[li] ** 2
                model.biases[li] -= cfg.learning_rate * (m_b[li] / b1c) / (
                    np.sqrt(v_b[li] / b2c) + cfg.eps)
        hist["epoch"].append(epoch)
        hist["train_loss"].append(cross_entropy(model, x, y))
        hist["train_acc"].append(float(np.mean(predict(model, x) == y)))
        if val is not None:
            hist["val_loss"].append(cross_entropy(model, *val))
            hist["val_acc"].append(float(np.mean(predict(model, val[0]) == val[1])))
        else:
            hist["val_loss"].append(float("nan"))
            hist["val_acc"].append(float("nan"))
    return TrainResult(model=model, history=hist)


def evaluate(model: MlpModel, dataset) -> dict:
    """Accuracy, 4x4 confusion (rows = true), and per-class recall."""
    if not dataset:
        raise EmptyDataset("no evaluation samples")
    x, y = _as_xy(dataset, model.mode)
    pred = predict(model, x)
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    recall = {}
    for c in range(N_CLASSES):
        n = conf[c].sum()
        recall[LinkState(c).name] = float(conf[c, c] / n) if n else float("nan")
    return {
        "accuracy": float(np.trace(conf) / conf.sum()),
        "confusion": conf,
        "recall": recall,
    }
