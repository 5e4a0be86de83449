"""Multi-sector phased-array model.

Each terminal carries several uniform linear arrays ("sectors") at different
boresights for 360-degree azimuth coverage.  Signatures include the element
pattern and are normalized so that the squared norm of a sector signature is
that sector's directivity (linear).  Codebook weights live on a single sector
only; there is no phase coherence across sectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayConfig:
    n_arrays: int = 3
    n_ant: int = 8
    sector_azimuths_deg: tuple = (0.0, 120.0, -120.0)
    element_spacing_wl: float = 0.5
    carrier_hz: float = 28e9
    element_gain_dbi: float = 5.0
    element_back_floor_db: float = 25.0   # floor below peak for the back lobe
    panel_gain_db: float = 0.0            # folded elevation aperture gain

    def __post_init__(self):
        if len(self.sector_azimuths_deg) != self.n_arrays:
            raise ValueError("one boresight azimuth per array required")
        if self.element_spacing_wl <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def n_composite(self) -> int:
        return self.n_arrays * self.n_ant


def rx_array_config() -> ArrayConfig:
    """Receiver terminal: three 8-element ULAs."""
    return ArrayConfig(n_ant=8)


def tx_array_config() -> ArrayConfig:
    """Transmitter: three 16-element panels modeled as 4-element azimuth ULAs
    with the 4-row elevation aperture folded into a fixed 6 dB panel gain."""
    return ArrayConfig(n_ant=4, panel_gain_db=6.0)


def wrap_deg(a):
    return (np.asarray(a, dtype=np.float64) + 180.0) % 360.0 - 180.0


def element_gain_db(theta_off_boresight_deg, g_max_dbi: float = 5.0,
                    back_floor_db: float = 25.0):
    """Microstrip-patch surrogate: cosine front lobe with a back-lobe floor."""
    th = np.abs(wrap_deg(theta_off_boresight_deg))
    floor_amp = 10.0 ** (-back_floor_db / 20.0)
    amp = np.where(th <= 90.0, np.maximum(np.cos(np.deg2rad(th)), floor_amp), floor_amp)
    return g_max_dbi + 20.0 * np.log10(amp)


def _element_amp(cfg: ArrayConfig, off_deg):
    """Linear element amplitude such that amp^2 is the element directivity."""
    th = np.abs(wrap_deg(off_deg))
    floor_amp = 10.0 ** (-cfg.element_back_floor_db / 20.0)
    pat = np.where(th <= 90.0, np.maximum(np.cos(np.deg2rad(th)), floor_amp), floor_amp)
    return 10.0 ** (cfg.element_gain_dbi / 20.0) * pat


def sector_signature(cfg: ArrayConfig, sector: int, az_deg):
    """Complex signature(s) of one sector; az_deg scalar or (A,) array.

    Returns (n_ant,) or (A, n_ant).  norm^2 equals the sector directivity at
    each azimuth (element pattern x array size x panel gain).
    """
    az = np.asarray(az_deg, dtype=np.float64)
    off = wrap_deg(az - cfg.sector_azimuths_deg[sector])
    m = np.arange(cfg.n_ant)
    phase = np.exp(-2j * np.pi * cfg.element_spacing_wl
                   * np.sin(np.deg2rad(off))[..., None] * m)
    amp = _element_amp(cfg, off) * 10.0 ** (cfg.panel_gain_db / 20.0)
    return amp[..., None] * phase


def composite_signature(cfg: ArrayConfig, az_deg):
    """Concatenated signature across all sectors; (n_composite,) or (A, ...)."""
    parts = [sector_signature(cfg, j, az_deg) for j in range(cfg.n_arrays)]
    return np.concatenate(parts, axis=-1)


def sector_directivity(cfg: ArrayConfig, az_deg):
    """Per-sector directivity (linear) at az; shape (..., n_arrays)."""
    az = np.asarray(az_deg, dtype=np.float64)
    out = np.empty(az.shape + (cfg.n_arrays,))
    for j in range(cfg.n_arrays):
        off = wrap_deg(az - cfg.sector_azimuths_deg[j])
        amp = _element_amp(cfg, off) * 10.0 ** (cfg.panel_gain_db / 20.0)
        out[..., j] = cfg.n_ant * amp ** 2
    return out


def best_sector(cfg: ArrayConfig, az_deg):
    """Sector with the highest directivity; ties break to the lowest index."""
    d = sector_directivity(cfg, az_deg)
    return np.argmax(d, axis=-1)


def best_directivity(cfg: ArrayConfig, az_deg):
    return sector_directivity(cfg, az_deg).max(axis=-1)


def steered_signature(cfg: ArrayConfig, az_deg: float):
    """Composite signature zeroed outside the best sector for az."""
    j = int(best_sector(cfg, az_deg))
    out = np.zeros(cfg.n_composite, dtype=np.complex128)
    out[j * cfg.n_ant:(j + 1) * cfg.n_ant] = sector_signature(cfg, j, az_deg)
    return out


@dataclass(frozen=True)
class Codebook:
    """Beam-sweep codebook: unit-norm single-sector steering weights."""

    azimuths_deg: np.ndarray   # (K,)
    sectors: np.ndarray        # (K,) sector index per beam
    weights: np.ndarray        # (K, n_composite) unit-norm, zero off-sector
    cfg: ArrayConfig

    @property
    def n_dir(self) -> int:
        return len(self.azimuths_deg)

    def to_json(self) -> str:
        return json.dumps([
            {"k": int(k), "azimuth_deg": float(a), "sector": int(s)}
            for k, (a, s) in enumerate(zip(self.azimuths_deg, self.sectors))
        ])


def build_codebook(cfg: ArrayConfig, n_dir: int) -> Codebook:
    """Beams on n_dir angles uniformly spaced over [-180, 180)."""
    if n_dir < cfg.n_arrays:
        raise ValueError("need at least one beam per sector")
    az = -180.0 + np.arange(n_dir) * 360.0 / n_dir
    sectors = np.array([int(best_sector(cfg, a)) for a in az])
    weights = np.zeros((n_dir, cfg.n_composite), dtype=np.complex128)
    for k, a in enumerate(az):
        u = steered_signature(cfg, a)
        weights[k] = u / np.linalg.norm(u)
    weights.setflags(write=False)
    return Codebook(azimuths_deg=az, sectors=sectors, weights=weights, cfg=cfg)


def beam_responses(cb: Codebook, az_deg):
    """Response of every codebook beam to plane waves from az_deg.

    Computed as w_k^H u(az); shape (A, K) for an (A,) azimuth array.
    Single-sector weights ensure no cross-sector phase is exploited.
    """
    az = np.atleast_1d(np.asarray(az_deg, dtype=np.float64))
    u = composite_signature(cb.cfg, az)          # (A, n_composite)
    return u @ cb.weights.conj().T               # (A, K)


def beamformed_amplitude(path, tx_cb: Codebook, tx_beam: int,
                         rx_cb: Codebook, rx_beam: int) -> complex:
    """Complex amplitude of one path through a TX codeword and RX combiner."""
    rt = beam_responses(tx_cb, path.aod_deg)[0, tx_beam]
    rr = beam_responses(rx_cb, path.aoa_deg)[0, rx_beam]
    return complex(path.gain * rt * rr)


def ideal_path_snr_db(paths, tx_cfg: ArrayConfig, rx_cfg: ArrayConfig,
                      tx_power_dbm: float, noise_floor_dbm: float):
    """Best-beamformed per-path RX SNR with ideal steering at both ends."""
    if not paths:
        return []
    aod = np.array([p.aod_deg for p in paths])
    aoa = np.array([p.aoa_deg for p in paths])
    g_db = np.array([20.0 * np.log10(abs(p.gain)) for p in paths])
    dtx = 10.0 * np.log10(best_directivity(tx_cfg, aod))
    drx = 10.0 * np.log10(best_directivity(rx_cfg, aoa))
    return list(tx_power_dbm + g_db + dtx + drx - noise_floor_dbm)


@dataclass(frozen=True)
class TxRxArrays:
    """Bundle of both terminals' arrays and sweep codebooks plus the
    fine signature-matching grids used for AoA refinement."""

    tx_cfg: ArrayConfig
    rx_cfg: ArrayConfig
    tx_cb: Codebook
    rx_cb: Codebook
    fine_step_deg: float = 1.0

    @staticmethod
    def default(n_dir_tx: int = 48, n_dir_rx: int = 24,
                fine_step_deg: float = 1.0) -> "TxRxArrays":
        txc = tx_array_config()
        rxc = rx_array_config()
        return TxRxArrays(tx_cfg=txc, rx_cfg=rxc,
                          tx_cb=build_codebook(txc, n_dir_tx),
                          rx_cb=build_codebook(rxc, n_dir_rx),
                          fine_step_deg=fine_step_deg)

    def fine_grid(self, sector: int):
        """(angles, beam-space templates, beam indices) for one RX sector.

        Templates are the per-angle-normalized responses of the sector's
        sweep beams over the sector's coverage arc only.  The restricted arc
        stays inside the front hemisphere, so the array's mirror-image
        ambiguity (which lives in the back hemisphere) can never win, and
        normalization keeps the refinement free of boresight bias.
        """
        key = "_fine_cache"
        cache = getattr(self, key, None)
        if cache is None:
            cache = {}
            object.__setattr__(self, key, cache)
        if sector not in cache:
            beams = np.nonzero(self.rx_cb.sectors == sector)[0]
            spacing = 360.0 / self.rx_cb.n_dir
            half_arc = 180.0 / self.rx_cfg.n_arrays + spacing
            bore = self.rx_cfg.sector_azimuths_deg[sector]
            n = int(round(2 * half_arc / self.fine_step_deg)) + 1
            angles = bore - half_arc + np.arange(n) * self.fine_step_deg
            resp = beam_responses(self.rx_cb, angles)[:, beams]  # (A, B)
            norm = np.linalg.norm(resp, axis=1, keepdims=True)
            norm[norm == 0] = 1.0
            cache[sector] = (wrap_deg(angles), resp / norm, beams)
        return cache[sector]
