"""Invert coincidence histograms into rates, populations, and extinction.

The analysis chain mirrors the measurement: counts are converted to
detection probabilities per unit time, the with/without-atom difference
delta(t_i) drives the rate equation

    dP_e/dt = delta(t) - (1 - overlap) P_e / tau0

integrated bin by bin with the exact decay propagator, and the backward
channel provides an independent direct estimate
P_e = G_b / (eta_f_tilde eta_q eta_b Gamma0 dt).  Poisson uncertainties
are propagated throughout; reconstructed populations are deliberately
not clipped at zero so downstream statistics stay unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import AtomParams, ExcitationTrace, Provenance
from .errors import DataFormatError
from .events import Channel, CoincidenceHistogram, EfficiencyChain

# default out-of-window margin requirement for the accidental floor, ns
_MIN_FLOOR_MARGIN = 20.0

# default signal window (covers the support of ~8 tau_p envelopes)
_DEFAULT_SIGNAL_WINDOW = (-114.0, 114.0)


@dataclass(frozen=True)
class RateSeries:
    """Binned rate estimate with per-bin 1-sigma uncertainties."""

    bin_start: np.ndarray
    bin_width: float
    value: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bin_start", np.asarray(self.bin_start, dtype=float))
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))


@dataclass(frozen=True)
class FloorEstimate:
    """Accidental floor per bin, estimated from out-of-window bins."""

    counts_per_bin: float
    sigma: float
    n_bins_used: int


def _same_binning(a, b) -> bool:
    return (a.bin_start.shape == b.bin_start.shape
            and np.allclose(a.bin_start, b.bin_start, atol=1e-9)
            and np.isclose(a.bin_width, b.bin_width, atol=1e-12))


def counts_to_rate(hist: CoincidenceHistogram, chain: EfficiencyChain | None = None,
                   eta_f: float | None = None) -> RateSeries:
    """Forward rate R(t_i) = G(t_i) / (eta_f dt), G = counts / n_heralds.

    Zero-count bins get rate 0 with sigma 0 (no information, flagged by
    the zero uncertainty).  ``eta_f`` overrides the chain value.
    """
    if hist.n_heralds <= 0:
        raise ValueError("histogram has no heralds")
    if eta_f is None:
        if chain is None:
            raise ValueError("need an efficiency chain or an explicit eta_f")
        eta_f = chain.eta_f
    if eta_f <= 0:
        raise ValueError(f"eta_f must be positive, got {eta_f}")
    scale = 1.0 / (hist.n_heralds * eta_f * hist.bin_width)
    counts = np.asarray(hist.counts, dtype=float)
    value = counts * scale
    sigma = np.sqrt(np.clip(counts, 0.0, None)) * scale
    return RateSeries(hist.bin_start, hist.bin_width, value, sigma)


def subtract_accidentals(hist: CoincidenceHistogram,
                         signal_window: tuple[float, float] | None = None
                         ) -> tuple[CoincidenceHistogram, FloorEstimate]:
    """Estimate a flat accidental floor from out-of-window bins and subtract it.

    The floor is the mean count of bins lying entirely outside
    ``signal_window`` (default (-114, 114) ns); at least 20 ns of margin
    bins are required on each side.  Corrected counts are fractional.
    """
    lo, hi = signal_window if signal_window is not None else _DEFAULT_SIGNAL_WINDOW
    starts = hist.bin_start
    ends = starts + hist.bin_width
    outside_left = ends <= lo + 1e-9
    outside_right = starts >= hi - 1e-9
    span_left = hist.bin_width * np.count_nonzero(outside_left)
    span_right = hist.bin_width * np.count_nonzero(outside_right)
    if span_left < _MIN_FLOOR_MARGIN or span_right < _MIN_FLOOR_MARGIN:
        raise DataFormatError(
            f"need >= {_MIN_FLOOR_MARGIN} ns of out-of-window bins on each side "
            f"(have {span_left:.0f} / {span_right:.0f} ns)")
    outside = outside_left | outside_right
    n_out = int(np.count_nonzero(outside))
    total_out = float(np.sum(hist.counts[outside]))
    floor = total_out / n_out
    sigma = np.sqrt(total_out) / n_out if total_out > 0 else 0.0
    corrected = CoincidenceHistogram(
        hist.bin_start, hist.bin_width,
        np.asarray(hist.counts, dtype=float) - floor,
        hist.n_heralds, hist.channel, corrected=True, seed=hist.seed)
    return corrected, FloorEstimate(floor, sigma, n_out)


def delta_series(r_f0: RateSeries, r_f: RateSeries) -> RateSeries:
    """delta(t_i) = R_f0 - R_f with uncertainties added in quadrature."""
    if not _same_binning(r_f0, r_f):
        raise DataFormatError("rate series are on different bin grids")
    return RateSeries(r_f0.bin_start, r_f0.bin_width,
                      r_f0.value - r_f.value,
                      np.hypot(r_f0.sigma, r_f.sigma))


def reconstruct_forward(r_f0: RateSeries, r_f: RateSeries,
                        atom: AtomParams) -> ExcitationTrace:
    """Integrate the rate equation over the binned delta(t_i).

    Exact per-bin decay propagator with the bin's rate change applied as
    a midpoint impulse:

        P_{i+1} = P_i exp(-(1-L) dt / tau0) + delta_i dt exp(-(1-L) dt / 2 tau0)

    starting from P = 0 at the first bin edge.  The returned trace is
    sampled at the bin starts with propagated per-bin uncertainties.
    """
    if not _same_binning(r_f0, r_f):
        raise DataFormatError("rate series are on different bin grids")
    dt = r_f0.bin_width
    delta = r_f0.value - r_f.value
    var_delta = r_f0.sigma ** 2 + r_f.sigma ** 2
    decay = np.exp(-(1.0 - atom.overlap) * dt / atom.tau0)
    half = np.sqrt(decay)
    n = delta.size
    p = np.zeros(n)
    var = np.zeros(n)
    for i in range(n - 1):
        p[i + 1] = p[i] * decay + delta[i] * dt * half
        var[i + 1] = var[i] * decay**2 + (dt * half) ** 2 * var_delta[i]
    return ExcitationTrace(r_f0.bin_start, p, Provenance.RECON_FORWARD,
                           sigma=np.sqrt(var))


def reconstruct_backward(hist: CoincidenceHistogram, chain: EfficiencyChain,
                         atom: AtomParams) -> ExcitationTrace:
    """Direct conversion P_e(t_i) = G_b(t_i) / (eta_f_tilde eta_q eta_b Gamma0 dt)."""
    if hist.channel is not Channel.BACKWARD:
        raise ValueError(f"expected a backward histogram, got {hist.channel.value}")
    if hist.n_heralds <= 0:
        raise ValueError("histogram has no heralds")
    denom = (chain.eta_f_tilde * chain.eta_q * chain.eta_b
             * atom.gamma0 * hist.bin_width * hist.n_heralds)
    if denom <= 0:
        raise ValueError("efficiency chain contains a zero efficiency")
    counts = np.asarray(hist.counts, dtype=float)
    p = counts / denom
    sigma = np.sqrt(np.clip(counts, 0.0, None)) / denom
    return ExcitationTrace(hist.bin_start, p, Provenance.RECON_BACKWARD, sigma=sigma)


def extinction_from_data(r_f0: RateSeries, r_f: RateSeries,
                         window: tuple[float, float]) -> tuple[float, float]:
    """Windowed extinction dt * sum(delta) with propagated uncertainty."""
    if not _same_binning(r_f0, r_f):
        raise DataFormatError("rate series are on different bin grids")
    t = r_f0.bin_start
    m = (t >= window[0] - 1e-9) & (t <= window[1] + 1e-9)
    dt = r_f0.bin_width
    eps = dt * float(np.sum(r_f0.value[m] - r_f.value[m]))
    sigma = dt * float(np.sqrt(np.sum(r_f0.sigma[m] ** 2 + r_f.sigma[m] ** 2)))
    return eps, sigma
