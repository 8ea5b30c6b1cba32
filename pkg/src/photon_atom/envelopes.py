"""Single-photon temporal envelopes and their power spectra.

A photon wavepacket is represented by its complex probability amplitude
xi(t) on a uniform time grid (time in ns, amplitude in ns^-1/2), stored
with unit norm:  sum |xi(t_k)|^2 dt = 1.

The two analytic workhorse shapes, parameterized by the coherence time
tau_p, are

    decaying:  xi(t) = tau_p^-1/2 exp(-t / (2 tau_p))   for t >= 0
    rising:    xi(t) = tau_p^-1/2 exp(+t / (2 tau_p))    for t <= 0

i.e. mirror images of each other.  Both have the same Lorentzian power
spectrum with full width at half maximum 1/(2 pi tau_p) in ordinary
frequency (GHz for ns grids).  Arbitrary tabulated amplitudes (cavity
shaped, measured, ...) use the same container and are renormalized on
construction.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

#: default grid step in ns
DEFAULT_STEP = 0.05
#: default grid half-span in units of tau_p
DEFAULT_SPAN = 8.0

# minimum fraction of the continuum norm a grid must capture
_MIN_NORM_COVERAGE = 0.999


class EnvelopeShape(str, enum.Enum):
    EXP_DECAYING = "exp_decaying"
    EXP_RISING = "exp_rising"
    TABULATED = "tabulated"
    CAVITY_SHAPED = "cavity_shaped"


@dataclass(frozen=True)
class PhotonEnvelope:
    """Normalized complex temporal amplitude of a single photon.

    Immutable after construction; the sample array is marked read-only so
    instances can be shared freely between threads.
    """

    shape: EnvelopeShape
    tau_p: float                 # coherence time, ns (shape metadata)
    grid: np.ndarray             # uniform time samples, ns
    amplitude: np.ndarray        # complex amplitude, ns^-1/2, unit norm
    pre_norm: float = field(default=1.0, compare=False)  # norm^2 before renormalization

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        amp = np.asarray(self.amplitude, dtype=complex)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be a 1-d array with at least two samples")
        if amp.shape != grid.shape:
            raise ValueError("amplitude and grid must have the same length")
        steps = np.diff(grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("grid must be uniformly spaced")
        if self.tau_p <= 0:
            raise ValueError(f"tau_p must be positive, got {self.tau_p}")
        grid.flags.writeable = False
        amp.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "amplitude", amp)

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def gamma_p(self) -> float:
        """Spectral FWHM 1/tau_p in angular-frequency units (rad/ns)."""
        return 1.0 / self.tau_p

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.dt)


def default_grid(tau_p: float, step: float = DEFAULT_STEP,
                 span: float = DEFAULT_SPAN) -> np.ndarray:
    """Symmetric uniform grid [-span*tau_p, +span*tau_p] containing t = 0.

    Built as integer multiples of the step so that 0 is an exact sample,
    which keeps time reversal an exact sample permutation.
    """
    if tau_p <= 0:
        raise ValueError(f"tau_p must be positive, got {tau_p}")
    n = int(round(span * tau_p / step))
    return step * np.arange(-n, n + 1)


def _normalized(samples: np.ndarray, dt: float) -> tuple[np.ndarray, float]:
    norm2 = float(np.sum(np.abs(samples) ** 2) * dt)
    if norm2 <= 0.0:
        raise ValueError("envelope has zero norm")
    return samples / np.sqrt(norm2), norm2


def analytic_amplitude(shape: EnvelopeShape, tau_p: float, t: np.ndarray) -> np.ndarray:
    """Continuum-normalized amplitude of the two exponential shapes.

    Support is t >= 0 (decaying) or t <= 0 (rising); the boundary sample
    at t = 0 is included in both, so the two shapes are exact time
    reverses of each other on a symmetric grid.
    """
    t = np.asarray(t, dtype=float)
    a = np.zeros_like(t)
    if shape is EnvelopeShape.EXP_DECAYING:
        m = t >= 0.0
        a[m] = np.exp(-t[m] / (2.0 * tau_p)) / np.sqrt(tau_p)
    elif shape is EnvelopeShape.EXP_RISING:
        m = t <= 0.0
        a[m] = np.exp(t[m] / (2.0 * tau_p)) / np.sqrt(tau_p)
    else:
        raise ValueError(f"no closed form for shape {shape}")
    return a.astype(complex)


def _check_coverage(shape: EnvelopeShape, tau_p: float, grid: np.ndarray) -> None:
    t0, t1 = float(grid[0]), float(grid[-1])
    tol = 1e-9
    if shape is EnvelopeShape.EXP_DECAYING:
        if t0 > -tau_p + tol:
            raise ValueError(
                f"grid must start at or before -tau_p = {-tau_p:.3f} ns, starts at {t0:.3f}")
        captured = 1.0 - np.exp(-max(t1, 0.0) / tau_p)
    else:
        if t1 < tau_p - tol:
            raise ValueError(
                f"grid must end at or after +tau_p = {tau_p:.3f} ns, ends at {t1:.3f}")
        captured = 1.0 - np.exp(min(t0, 0.0) / tau_p)
    if captured < _MIN_NORM_COVERAGE:
        raise ValueError(
            f"grid captures only {captured:.4%} of the envelope norm "
            f"(needs >= {_MIN_NORM_COVERAGE:.1%}); extend the grid")


def make_decaying(tau_p: float, grid: np.ndarray | None = None) -> PhotonEnvelope:
    """Exponentially decaying envelope, xi(t) = tau_p^-1/2 e^{-t/2tau_p} Theta(t).

    Parameters
    ----------
    tau_p : coherence time in ns (> 0).
    grid : optional uniform time grid; defaults to
        ``default_grid(tau_p)``.  Must reach back to at least -tau_p and
        capture >= 99.9% of the norm on the positive side.
    """
    if tau_p <= 0:
        raise ValueError(f"tau_p must be positive, got {tau_p}")
    if grid is None:
        grid = default_grid(tau_p)
    grid = np.asarray(grid, dtype=float)
    _check_coverage(EnvelopeShape.EXP_DECAYING, tau_p, grid)
    dt = float(grid[1] - grid[0])
    amp, norm2 = _normalized(analytic_amplitude(EnvelopeShape.EXP_DECAYING, tau_p, grid), dt)
    return PhotonEnvelope(EnvelopeShape.EXP_DECAYING, tau_p, grid, amp, norm2)


def make_rising(tau_p: float, grid: np.ndarray | None = None) -> PhotonEnvelope:
    """Exponentially rising envelope, the time reverse of ``make_decaying``."""
    if tau_p <= 0:
        raise ValueError(f"tau_p must be positive, got {tau_p}")
    if grid is None:
        grid = default_grid(tau_p)
    grid = np.asarray(grid, dtype=float)
    _check_coverage(EnvelopeShape.EXP_RISING, tau_p, grid)
    dt = float(grid[1] - grid[0])
    amp, norm2 = _normalized(analytic_amplitude(EnvelopeShape.EXP_RISING, tau_p, grid), dt)
    return PhotonEnvelope(EnvelopeShape.EXP_RISING, tau_p, grid, amp, norm2)


def make_tabulated(samples: np.ndarray, grid: np.ndarray, tau_p: float | None = None,
                   shape: EnvelopeShape = EnvelopeShape.TABULATED) -> PhotonEnvelope:
    """Envelope from arbitrary complex samples; renormalized to unit norm.

    ``tau_p`` is optional metadata (defaults to the rms duration of the
    samples); it does not affect the stored amplitude.
    """
    samples = np.asarray(samples, dtype=complex)
    grid = np.asarray(grid, dtype=float)
    if not (np.all(np.isfinite(samples.real)) and np.all(np.isfinite(samples.imag))):
        raise ValueError("envelope samples contain NaN or Inf")
    dt = float(grid[1] - grid[0])
    amp, norm2 = _normalized(samples, dt)
    if tau_p is None:
        w = np.abs(amp) ** 2
        mean_t = float(np.sum(w * grid) * dt)
        tau_p = float(np.sqrt(np.sum(w * (grid - mean_t) ** 2) * dt))
        tau_p = max(tau_p, dt)
    return PhotonEnvelope(shape, tau_p, grid, amp, norm2)


def time_reverse(env: PhotonEnvelope) -> PhotonEnvelope:
    """Sample-wise time reverse on the mirrored grid."""
    flip = {EnvelopeShape.EXP_DECAYING: EnvelopeShape.EXP_RISING,
            EnvelopeShape.EXP_RISING: EnvelopeShape.EXP_DECAYING}
    shape = flip.get(env.shape, env.shape)
    return PhotonEnvelope(shape, env.tau_p, -env.grid[::-1],
                          np.conj(env.amplitude[::-1]), env.pre_norm)


def power_spectrum(env: PhotonEnvelope, pad_factor: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Discrete power spectrum |FT xi|^2, normalized to unit integral.

    Returns
    -------
    freq : ordinary frequencies in GHz (cycles/ns), ascending.
    density : spectral density in 1/GHz, sum(density) * df = 1.

    ``pad_factor`` zero-pads the transform to refine the frequency
    sampling (the underlying spectrum is unchanged).
    """
    n = env.grid.size * max(int(pad_factor), 1)
    ft = np.fft.fft(env.amplitude, n) * env.dt
    freq = np.fft.fftfreq(n, d=env.dt)
    density = np.abs(ft) ** 2
    order = np.argsort(freq)
    freq = freq[order]
    density = density[order]
    df = freq[1] - freq[0]
    density /= np.sum(density) * df
    return freq, density


def envelope_bin_integrals(tau_p: float, shape: EnvelopeShape,
                           edges: np.ndarray) -> np.ndarray:
    """Exact integral of |xi(t)|^2 over each bin, for the exponential shapes.

    Used as the model for histogram fits; ``edges`` are bin boundaries in ns.
    """
    edges = np.asarray(edges, dtype=float)
    if shape is EnvelopeShape.EXP_DECAYING:
        x = np.clip(edges, 0.0, None)
        cdf = 1.0 - np.exp(-x / tau_p)
    elif shape is EnvelopeShape.EXP_RISING:
        x = np.clip(edges, None, 0.0)
        cdf = np.exp(x / tau_p)
    else:
        raise ValueError(f"no closed form for shape {shape}")
    return np.diff(cdf)


# ---------------------------------------------------------------------------
# CSV interface: columns t_ns, re_amplitude, im_amplitude
# ---------------------------------------------------------------------------

def write_envelope_csv(path, env: PhotonEnvelope, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"# shape={env.shape.value} tau_p_ns={env.tau_p:.6g}\n")
        writer = csv.writer(fh)
        writer.writerow(["t_ns", "re_amplitude", "im_amplitude"])
        for t, a in zip(env.grid, env.amplitude):
            writer.writerow([f"{t:.10g}", f"{a.real:.12g}", f"{a.imag:.12g}"])


def read_envelope_csv(path) -> PhotonEnvelope:
    shape = EnvelopeShape.TABULATED
    tau_p = None
    rows = []
    with open(path, newline="") as fh:
        header_seen = False
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("shape="):
                        try:
                            shape = EnvelopeShape(tok.split("=", 1)[1])
                        except ValueError:
                            pass
                    elif tok.startswith("tau_p_ns="):
                        tau_p = float(tok.split("=", 1)[1])
                continue
            cells = [c.strip() for c in line.split(",")]
            if not header_seen:
                if cells[:3] != ["t_ns", "re_amplitude", "im_amplitude"]:
                    raise DataFormatError(
                        f"{path}: expected header 't_ns, re_amplitude, im_amplitude', got {cells}")
                header_seen = True
                continue
            rows.append([float(c) for c in cells[:3]])
    if not header_seen:
        raise DataFormatError(f"{path}: missing required header line")
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need at least two samples")
    data = np.asarray(rows, dtype=float)
    return make_tabulated(data[:, 1] + 1j * data[:, 2], data[:, 0],
                          tau_p=tau_p, shape=shape)
