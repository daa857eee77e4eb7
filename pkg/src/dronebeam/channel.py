"""Narrowband OFDM channel model and DFT beam codebook for a skyward ULA.

The array is a uniform linear array with its axis horizontal; element m sits at
m * spacing wavelengths from the reference element.  A plane wave arriving from
(azimuth, elevation) produces the response

    a_m = exp(j * 2*pi * spacing * m * cos(azimuth) * cos(elevation))

with azimuth measured from the array axis and elevation from the horizon.  The
frequency response on subcarrier k of a K-subcarrier OFDM link with D-tap
cyclic prefix is

    h_k = sum_d sum_l  gain_l * exp(-j*2*pi*k*d/K) * p(d*Ts - tau_l) * a(az_l, el_l)

where p is the pulse shape, here the normalized sinc p(x) = sinc(x / Ts).
Received power for beam f is |h_k^T f|^2 averaged over subcarriers (plain
transpose, not conjugate).
"""

from dataclasses import dataclass, field

import numpy as np


class CyclicPrefixError(ValueError):
    """Path delay falls at or beyond the cyclic prefix window."""


def array_response(azimuth, elevation, num_antennas, spacing=0.5):
    """Complex ULA response vector of length num_antennas."""
    if not (np.isfinite(azimuth) and np.isfinite(elevation)):
        raise ValueError("angles must be finite")
    if num_antennas < 1:
        raise ValueError("num_antennas must be positive")
    phase = 2.0 * np.pi * spacing * np.cos(azimuth) * np.cos(elevation)
    return np.exp(1j * phase * np.arange(num_antennas))


@dataclass(frozen=True)
class PathComponent:
    """One propagation path: complex gain (path loss and phase), delay, arrival angles."""

    gain: complex
    delay: float
    azimuth: float
    elevation: float

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("path gain must be finite")
        if not np.isfinite(self.delay) or self.delay < 0:
            raise ValueError("path delay must be finite and non-negative")
        if not (np.isfinite(self.azimuth) and np.isfinite(self.elevation)):
            raise ValueError("path angles must be finite")


@dataclass(frozen=True)
class OfdmConfig:
    num_subcarriers: int = 64
    cyclic_prefix_len: int = 16
    sample_time: float = 2e-8
    noise_variance: float = 0.0
    symbol_power: float = 1.0
    snr_scale: float = 1.0

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be positive")
        if self.cyclic_prefix_len < 1:
            raise ValueError("cyclic_prefix_len must be positive")
        if self.sample_time <= 0:
            raise ValueError("sample_time must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        if self.symbol_power <= 0 or self.snr_scale <= 0:
            raise ValueError("symbol_power and snr_scale must be positive")


@dataclass(frozen=True)
class ChannelState:
    """Frequency response per subcarrier, shape (K, num_antennas), read-only."""

    per_subcarrier: np.ndarray
    timestamp_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.per_subcarrier, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError("per_subcarrier must be a (K, M) array")
        arr.flags.writeable = False
        object.__setattr__(self, "per_subcarrier", arr)

    @property
    def num_antennas(self):
        return self.per_subcarrier.shape[1]


def pulse_shape(x, sample_time):
    """Band-limited pulse p(x) = sinc(x / Ts); exact zeros at nonzero integer samples."""
    return np.sinc(np.asarray(x, dtype=float) / sample_time)


def build_channel(paths, cfg: OfdmConfig, num_antennas, timestamp_index=0):
    """Assemble the per-subcarrier response from a list of PathComponent.

    An empty path list yields the zero channel.  Any delay at or beyond
    cyclic_prefix_len * sample_time is rejected.
    """
    K = cfg.num_subcarriers
    D = cfg.cyclic_prefix_len
    taps = np.zeros((D, num_antennas), dtype=np.complex128)
    for p in paths:
        if p.delay >= D * cfg.sample_time:
            raise CyclicPrefixError(
                f"path delay {p.delay:.3e}s exceeds cyclic prefix window "
                f"{D * cfg.sample_time:.3e}s"
            )
        a = array_response(p.azimuth, p.elevation, num_antennas)
        gains = p.gain * pulse_shape(np.arange(D) * cfg.sample_time - p.delay, cfg.sample_time)
        taps += gains[:, None] * a[None, :]
    # K-point DFT of the tap sequence along the delay axis
    dft = np.exp(-2j * np.pi * np.outer(np.arange(K), np.arange(D)) / K)
    return ChannelState(per_subcarrier=dft @ taps, timestamp_index=timestamp_index)


@dataclass(frozen=True)
class BeamCodebook:
    """Rows are unit-norm beamforming vectors, shape (Q, num_antennas)."""

    beams: np.ndarray
    num_antennas: int = field(default=0)

    def __post_init__(self):
        arr = np.asarray(self.beams, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError("beams must be a (Q, M) array")
        arr.flags.writeable = False
        object.__setattr__(self, "beams", arr)
        object.__setattr__(self, "num_antennas", arr.shape[1])

    @property
    def num_beams(self):
        return self.beams.shape[0]


def make_codebook(num_antennas, num_beams, spacing=0.5):
    """Oversampled DFT codebook on a uniform cos-azimuth grid over [-1, 1).

    Beam q is the conjugated, unit-norm steering vector at grid point
    u_q = -1 + 2q / num_beams, so a channel aligned with u_q is matched by
    beam q.  num_beams == num_antennas recovers the DFT matrix columns.
    """
    if num_beams < num_antennas:
        raise ValueError("num_beams must be at least num_antennas")
    grid = -1.0 + 2.0 * np.arange(num_beams) / num_beams
    m = np.arange(num_antennas)
    steering = np.exp(1j * 2.0 * np.pi * spacing * np.outer(grid, m))
    beams = np.conj(steering) / np.sqrt(num_antennas)
    return BeamCodebook(beams=beams)


@dataclass(frozen=True)
class PowerVector:
    """Per-beam received powers and the argmax index (lowest index wins ties)."""

    powers: np.ndarray
    best_index: int

    def __post_init__(self):
        arr = np.asarray(self.powers, dtype=float)
        if arr.ndim != 1:
            raise ValueError("powers must be a vector")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("powers must be finite and non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "powers", arr)
        if self.best_index != int(np.argmax(arr)):
            raise ValueError("best_index must be the argmax of powers")

    @classmethod
    def from_powers(cls, powers):
        powers = np.asarray(powers, dtype=float)
        return cls(powers=powers, best_index=int(np.argmax(powers)))


def beam_sweep(channel: ChannelState, codebook: BeamCodebook, cfg: OfdmConfig):
    """Receive power per beam: snr_scale * mean_k |h_k^T f_q|^2."""
    if channel.num_antennas != codebook.num_antennas:
        raise ValueError(
            f"antenna count mismatch: channel has {channel.num_antennas}, "
            f"codebook has {codebook.num_antennas}"
        )
    amp = channel.per_subcarrier @ codebook.beams.T
    powers = cfg.snr_scale * np.mean(np.abs(amp) ** 2, axis=0)
    return PowerVector.from_powers(powers)


def downsample_power(power: PowerVector):
    """Keep alternate beams of a 64-entry sweep, giving the 32-beam power vector."""
    if power.powers.shape[0] != 64:
        raise ValueError("downsample expects a 64-beam power vector")
    return PowerVector.from_powers(power.powers[::2])


def optimal_beam(power: PowerVector):
    """Index of the strongest beam; ties resolve to the lowest index."""
    return int(np.argmax(power.powers))
