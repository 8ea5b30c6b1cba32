"""Asymmetric Fabry-Perot cavity used to reshape heralded photons.

The herald photon of a time-ordered pair reflects off a single-port
cavity (in-coupling mirror + high reflector treated as loss) before
detection.  Conditioning the probe photon on a herald detection at t = 0
then reshapes the conditional probe envelope: with the cavity resonant
with the herald the probe becomes exponentially *rising*, far off
resonance it stays the original decaying exponential (the cavity acts as
a plain mirror with a small dispersive phase).

Model: two-photon amplitude psi(t_h, t_p) ~ Theta(t_p - t_h)
exp(-(t_p - t_h)/(2 tau_p)); the herald time argument is convolved with
the cavity impulse response (prompt reflection + round-trip echo train),
and the conditional probe amplitude at herald time 0 is renormalized.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .envelopes import (EnvelopeShape, PhotonEnvelope, analytic_amplitude,
                        default_grid, make_tabulated)

SPEED_OF_LIGHT_MM_NS = 299.792458

# echoes are followed until the stored amplitude has decayed to this level
_ECHO_CUTOFF = 1e-14


@dataclass(frozen=True)
class CavityParams:
    """Fabry-Perot cavity: geometry, finesse, and mirror intensity reflectances.

    ``r_in`` and ``r_back`` are intensity reflectances (amplitude is the
    square root).  ``detuning_mhz`` is the offset of the cavity resonance
    from the herald carrier; 0 means resonant.
    """

    length_mm: float
    finesse: float
    r_in: float = 0.943
    r_back: float = 0.9995
    detuning_mhz: float = 0.0

    def __post_init__(self):
        if self.length_mm <= 0:
            raise ValueError(f"length must be positive, got {self.length_mm}")
        if self.finesse <= 0:
            raise ValueError(f"finesse must be positive, got {self.finesse}")
        for name, r in (("r_in", self.r_in), ("r_back", self.r_back)):
            if not 0.0 < r <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {r}")

    @property
    def fsr_ghz(self) -> float:
        """Free spectral range c / 2L in GHz."""
        return SPEED_OF_LIGHT_MM_NS / (2.0 * self.length_mm)

    @property
    def linewidth_ghz(self) -> float:
        """FWHM cavity linewidth FSR / finesse."""
        return self.fsr_ghz / self.finesse

    @property
    def round_trip_ns(self) -> float:
        return 1.0 / self.fsr_ghz


def cavity_decay_time(cav: CavityParams) -> float:
    """Field energy decay time tau_c = 1 / (2 pi linewidth) = finesse / (2 pi FSR), ns."""
    return cav.finesse / (2.0 * np.pi * cav.fsr_ghz)


def reflection_response(cav: CavityParams, freq_ghz: np.ndarray) -> np.ndarray:
    """Complex amplitude reflection coefficient vs detuning from resonance.

    Single-port two-mirror response with round-trip phase
    phi = 2 pi nu / FSR:

        r(nu) = (r1 - r2 e^{i phi}) / (1 - r1 r2 e^{i phi})

    with amplitude reflectances r1 = sqrt(r_in), r2 = sqrt(r_back); the
    back mirror's transmission acts as loss.  |r| <= 1 everywhere, with
    the minimum (dip) at resonance; far from resonance r -> +1 with zero
    phase.  For a perfect back mirror (r_back = 1) the response is
    all-pass: |r| = 1 at every frequency.

    The frequency grid must span at least 20 cavity linewidths.
    """
    freq = np.atleast_1d(np.asarray(freq_ghz, dtype=float))
    if freq.size > 1:
        span = freq.max() - freq.min()
        if span < 20.0 * cav.linewidth_ghz:
            raise ValueError(
                f"frequency grid spans {span:.4g} GHz, needs >= 20 linewidths "
                f"({20 * cav.linewidth_ghz:.4g} GHz)")
    r1 = np.sqrt(cav.r_in)
    r2 = np.sqrt(cav.r_back)
    phase = np.exp(2j * np.pi * freq / cav.fsr_ghz)
    return (r1 - r2 * phase) / (1.0 - r1 * r2 * phase)


def herald_impulse_response(cav: CavityParams, dt: float) -> np.ndarray:
    """Causal impulse response of the reflected herald, discretized on the grid.

    The prompt reflection is a single-bin impulse of area sqrt(r_in); each
    cavity round trip adds a delayed echo of area
    -(1 - r_in) / sqrt(r_in) * (r1 r2)^m, rotated by the detuning phase
    accumulated over m round trips.  Echo positions are split linearly
    over the two neighbouring bins, preserving area and first moment.
    Returned as a density (area / dt per bin).
    """
    r1 = np.sqrt(cav.r_in)
    r2 = np.sqrt(cav.r_back)
    t_rt = cav.round_trip_ns
    m_max = int(np.ceil(np.log(_ECHO_CUTOFF) / np.log(r1 * r2)))
    n_bins = int(np.ceil(m_max * t_rt / dt)) + 2
    h = np.zeros(n_bins, dtype=complex)
    h[0] = r1 / dt
    m = np.arange(1, m_max + 1)
    detuning_ghz = cav.detuning_mhz * 1e-3
    areas = (-(1.0 - cav.r_in) / r1 * (r1 * r2) ** m
             * np.exp(2j * np.pi * detuning_ghz * m * t_rt))
    pos = m * t_rt / dt
    idx = np.floor(pos).astype(int)
    frac = pos - idx
    np.add.at(h, idx, areas * (1.0 - frac) / dt)
    np.add.at(h, idx + 1, areas * frac / dt)
    return h


def _conditional_probe(pair_amp: np.ndarray, kernel: np.ndarray, dt: float,
                       method: str) -> np.ndarray:
    """eta(t_k) = sum_m h[m] g(t_k + m dt) dt for a causal kernel h."""
    n = pair_amp.size
    if method == "direct":
        padded = np.concatenate([pair_amp, np.zeros(kernel.size, dtype=complex)])
        # correlate(a, v)[j] = sum_m a[j + m] conj(v[m]) for full mode at lag j - (len(v)-1)
        full = np.correlate(padded, np.conj(kernel), mode="full") * dt
        return full[kernel.size - 1: kernel.size - 1 + n]
    if method == "fft":
        size = 1 << int(np.ceil(np.log2(n + kernel.size + 1)))
        g_f = np.fft.fft(pair_amp, size)
        # DFT of h evaluated at -f: conj(fft(conj(h)))
        h_mf = np.conj(np.fft.fft(np.conj(kernel), size))
        return np.fft.ifft(g_f * h_mf)[:n] * dt
    raise ValueError(f"unknown method {method!r}")


def shape_conditional_probe(cav: CavityParams, tau_p: float,
                            grid: np.ndarray | None = None,
                            method: str = "fft") -> PhotonEnvelope:
    """Conditional probe envelope after filtering the herald arm.

    On resonance with matched bandwidth (tau_c ~ tau_p) the output is
    dominantly exponential-rising with tail exp(+t / 2 tau_c) for t < 0;
    far off resonance it reproduces the decaying input.  The norm of the
    filtered amplitude before renormalization (a passivity check, <= 1)
    is stored as ``pre_norm``.

    ``method`` selects the time-domain correlation ("direct") or the
    transform-domain product ("fft"); both evaluate the same kernel.
    """
    if tau_p <= 0:
        raise ValueError(f"tau_p must be positive, got {tau_p}")
    tau_c = cavity_decay_time(cav)
    ratio = tau_c / tau_p
    if ratio > 5.0 or ratio < 0.2:
        warnings.warn(
            f"cavity decay time {tau_c:.2f} ns and photon coherence time "
            f"{tau_p:.2f} ns are mismatched by more than a factor 5; "
            "shaping will be poor", stacklevel=2)
    if grid is None:
        grid = default_grid(tau_p)
    grid = np.asarray(grid, dtype=float)
    dt = float(grid[1] - grid[0])
    pair = analytic_amplitude(EnvelopeShape.EXP_DECAYING, tau_p, grid)
    kernel = herald_impulse_response(cav, dt)
    out = _conditional_probe(pair, kernel, dt, method)
    env = make_tabulated(out, grid, tau_p=tau_p, shape=EnvelopeShape.CAVITY_SHAPED)
    pair_norm = float(np.sum(np.abs(pair) ** 2) * dt)
    object.__setattr__(env, "pre_norm", env.pre_norm / pair_norm)
    return env


def envelope_overlap(a: PhotonEnvelope, b: PhotonEnvelope,
                     align: bool = False) -> float:
    """Squared overlap |<a|b>|^2 of two unit-norm envelopes on one grid.

    With ``align=True`` the overlap is maximized over a relative time
    shift (in grid steps), removing trivial group delays.
    """
    if a.grid.shape != b.grid.shape or not np.allclose(a.grid, b.grid, atol=1e-9):
        raise ValueError("envelopes are on different grids")
    dt = a.dt
    if not align:
        return float(np.abs(np.sum(np.conj(a.amplitude) * b.amplitude) * dt) ** 2)
    size = 1 << int(np.ceil(np.log2(2 * a.grid.size)))
    xc = np.fft.ifft(np.conj(np.fft.fft(a.amplitude, size)) * np.fft.fft(b.amplitude, size))
    return float(np.max(np.abs(xc) * dt) ** 2)


# ---------------------------------------------------------------------------
# JSON interface: {length_mm, finesse, r_in, r_back, detuning_mhz}
# ---------------------------------------------------------------------------

def cavity_to_json(cav: CavityParams) -> dict:
    return {"length_mm": cav.length_mm, "finesse": cav.finesse,
            "r_in": cav.r_in, "r_back": cav.r_back,
            "detuning_mhz": cav.detuning_mhz}


def cavity_from_json(obj: dict) -> CavityParams:
    return CavityParams(length_mm=float(obj["length_mm"]),
                        finesse=float(obj["finesse"]),
                        r_in=float(obj.get("r_in", 0.943)),
                        r_back=float(obj.get("r_back", 0.9995)),
                        detuning_mhz=float(obj.get("detuning_mhz", 0.0)))


def load_cavity(path) -> CavityParams:
    with open(path) as fh:
        return cavity_from_json(json.load(fh))
