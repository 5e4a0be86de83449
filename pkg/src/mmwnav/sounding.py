"""Beam-swept channel sounding.

Synthesizes the received signal for every (TX beam, RX scan beam) pair and
matched-filters it against the known waveform, producing the complex
correlation tensor over delay x RX beam x TX beam.  The matched filter is a
circular correlation via FFT; fractional path delays use band-limited
interpolation.  AWGN enters at the physical per-sample level, so the tensor
noise carries the exact waveform-autocorrelation coloring (generated from its
Cholesky factor rather than by filtering full waveforms, which is equivalent
by linearity).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .arrays import TxRxArrays, beam_responses

BOLTZMANN_DBM = -174.0  # thermal noise density at 290 K, dBm/Hz


@dataclass(frozen=True)
class SoundingConfig:
    tx_power_dbm: float = 23.0
    bandwidth_hz: float = 4e8
    waveform_len: int = 2048
    noise_figure_db: float = 6.0
    n_dly: int = 256
    delay_window_ns: float = 640.0
    t_sync_s: float = 10e-6   # bookkeeping only
    t_sweep_s: float = 20e-6  # bookkeeping only
    waveform_seed: int = 2023

    def __post_init__(self):
        if self.waveform_len < self.n_dly:
            raise ValueError("waveform must cover the delay hypotheses")
        if self.n_dly / self.bandwidth_hz * 1e9 < self.delay_window_ns - 1e-9:
            raise ValueError("delay grid does not span the delay window")

    @property
    def sample_ns(self) -> float:
        return 1e9 / self.bandwidth_hz

    def delay_grid_ns(self) -> np.ndarray:
        return np.arange(self.n_dly) * self.sample_ns


def noise_floor_dbm(cfg: SoundingConfig) -> float:
    """Thermal noise power over the sounding bandwidth plus noise figure."""
    return BOLTZMANN_DBM + 10.0 * np.log10(cfg.bandwidth_hz) + cfg.noise_figure_db


def synthesize_waveform(seed: int, length: int) -> np.ndarray:
    """Unit-average-power pseudo-random QPSK sequence."""
    if length < 16:
        raise ValueError("waveform too short")
    rng = np.random.default_rng(seed)
    sym = rng.integers(0, 4, size=length)
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * sym))


@dataclass
class CorrelationTensor:
    """Matched-filter outputs S[i, j, k]: delay tap x RX beam x TX beam."""

    s: np.ndarray
    delay_grid_ns: np.ndarray
    rx_angles_deg: np.ndarray
    tx_angles_deg: np.ndarray

    @property
    def shape(self):
        return self.s.shape


class LinkSounder:
    """Sounds links under one (waveform, arrays, power) configuration.

    Precomputes the waveform spectrum and the Cholesky factor of the
    matched-filter noise covariance so per-link work is two matmuls.
    """

    def __init__(self, cfg: SoundingConfig, arrays: TxRxArrays,
                 dtype=np.complex128):
        self.cfg = cfg
        self.arrays = arrays
        self.dtype = dtype
        self.x = synthesize_waveform(cfg.waveform_seed, cfg.waveform_len)
        self.spec2 = np.abs(np.fft.fft(self.x)) ** 2        # |X[f]|^2
        n = cfg.waveform_len
        # circular autocorrelation r[m] = sum_n x[n] x*[(n-m) mod N]
        r = np.fft.ifft(self.spec2)
        idx = np.arange(cfg.n_dly)
        cov = r[(idx[:, None] - idx[None, :]) % n]
        cov = 0.5 * (cov + cov.conj().T)
        # small jitter guards rank loss from the exact Toeplitz structure
        self._chol = np.linalg.cholesky(cov + 1e-9 * n * np.eye(cfg.n_dly)).astype(dtype)
        self.noise_power_mw = 10.0 ** (noise_floor_dbm(cfg) / 10.0)
        self.tx_amp = 10.0 ** (cfg.tx_power_dbm / 20.0)  # sqrt(mW)
        self._freqs = np.fft.fftfreq(n) * n

    def _delay_responses(self, delays_ns: np.ndarray) -> np.ndarray:
        """Matched-filter response of unit paths at the delay taps (L, n_dly).

        Band-limited: IFFT of |X|^2 shifted by the fractional delay.
        """
        d_samp = np.asarray(delays_ns) * self.cfg.bandwidth_hz * 1e-9
        n = self.cfg.waveform_len
        shift = np.exp(-2j * np.pi * self._freqs[None, :] * d_samp[:, None] / n)
        resp = np.fft.ifft((self.spec2[None, :] * shift).astype(self.dtype), axis=1)
        return resp[:, :self.cfg.n_dly]

    def sound_link(self, paths, noise_seed, noiseless: bool = False) -> CorrelationTensor:
        """Correlation tensor for one link's path list.

        Deterministic per noise_seed.  Per-sector LO phases at both ends are
        drawn per sweep; they never affect magnitude-based estimates because
        codewords live on single sectors.
        """
        cfg = self.cfg
        arr = self.arrays
        n_rx = arr.rx_cb.n_dir
        n_tx = arr.tx_cb.n_dir
        rng = np.random.default_rng(noise_seed)
        ph_rx = np.exp(2j * np.pi * rng.random(arr.rx_cfg.n_arrays))
        ph_tx = np.exp(2j * np.pi * rng.random(arr.tx_cfg.n_arrays))

        shape = (cfg.n_dly, n_rx, n_tx)
        if paths:
            aoa = np.array([p.aoa_deg for p in paths])
            aod = np.array([p.aod_deg for p in paths])
            gains = (np.array([p.gain for p in paths]) * self.tx_amp).astype(self.dtype)
            delays = np.array([p.delay_ns for p in paths])
            resp_rx = (beam_responses(arr.rx_cb, aoa)
                       * ph_rx[arr.rx_cb.sectors][None, :]).astype(self.dtype)
            resp_tx = (beam_responses(arr.tx_cb, aod)
                       * ph_tx[arr.tx_cb.sectors][None, :]).astype(self.dtype)
            amps = gains[:, None, None] * resp_rx[:, :, None] * resp_tx[:, None, :]
            dresp = self._delay_responses(delays)        # (L, n_dly)
            sig = dresp.T @ amps.reshape(len(paths), -1)
            s = sig.reshape(shape)
        else:
            s = np.zeros(shape, dtype=self.dtype)

        if not noiseless:
            fdt = np.float32 if self.dtype == np.complex64 else np.float64
            z = rng.standard_normal((2, cfg.n_dly, n_rx * n_tx), dtype=fdt)
            zc = (z[0] + 1j * z[1]).astype(self.dtype)
            scale = self.dtype(np.sqrt(self.noise_power_mw / 2.0))
            w = scale * (self._chol @ zc)
            s = s + w.reshape(shape)

        return CorrelationTensor(
            s=s,
            delay_grid_ns=cfg.delay_grid_ns(),
            rx_angles_deg=arr.rx_cb.azimuths_deg.copy(),
            tx_angles_deg=arr.tx_cb.azimuths_deg.copy(),
        )


# ---------------------------------------------------------------------------
# binary tensor container
# ---------------------------------------------------------------------------
#
# Byte layout (little-endian):
#   magic   4 bytes  b"CTEN"
#   version uint32   1
#   dims    3 x int64            n_dly, n_rx, n_tx
#   grids   float64[n_dly]       delay grid, ns
#           float64[n_rx]        RX beam azimuths, deg
#           float64[n_tx]        TX beam azimuths, deg
#   data    float32[n_dly*n_rx*n_tx*2]  interleaved re/im, row-major [i][j][k]

_MAGIC = b"CTEN"


def write_tensor(path, tensor: CorrelationTensor) -> None:
    n_dly, n_rx, n_tx = tensor.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<3q", n_dly, n_rx, n_tx))
        f.write(np.asarray(tensor.delay_grid_ns, "<f8").tobytes())
        f.write(np.asarray(tensor.rx_angles_deg, "<f8").tobytes())
        f.write(np.asarray(tensor.tx_angles_deg, "<f8").tobytes())
        inter = np.empty(tensor.s.size * 2, dtype="<f4")
        inter[0::2] = tensor.s.real.ravel()
        inter[1::2] = tensor.s.imag.ravel()
        f.write(inter.tobytes())


def read_tensor(path) -> CorrelationTensor:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError("not a correlation tensor container")
        (version,) = struct.unpack("<I", f.read(4))
        if version != 1:
            raise ValueError(f"unsupported container version {version}")
        n_dly, n_rx, n_tx = struct.unpack("<3q", f.read(24))
        delay = np.frombuffer(f.read(8 * n_dly), dtype="<f8").copy()
        rx = np.frombuffer(f.read(8 * n_rx), dtype="<f8").copy()
        tx = np.frombuffer(f.read(8 * n_tx), dtype="<f8").copy()
        raw = np.frombuffer(f.read(n_dly * n_rx * n_tx * 8), dtype="<f4")
        s = (raw[0::2] + 1j * raw[1::2]).astype(np.complex64).reshape(n_dly, n_rx, n_tx)
    return CorrelationTensor(s=s, delay_grid_ns=delay, rx_angles_deg=rx, tx_angles_deg=tx)
