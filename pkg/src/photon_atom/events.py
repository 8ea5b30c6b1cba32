"""Monte Carlo synthesis of heralded coincidence histograms.

Mimics the detection chain of the experiment: for every herald, at most
one true coincidence per channel (forward without atom, forward with
atom, backward fluorescence), with per-bin probabilities given by the
physical rates scaled by the efficiency chain, plus an optional uniform
accidental background.  Sampling the whole herald ensemble at once with
a multinomial draw per channel is statistically identical to per-herald
Bernoulli trials and fast enough for 1e9-herald synthetic runs.

Heralds are split into fixed-size blocks with RNG streams spawned
deterministically from the master seed, so results are reproducible and
independent of how blocks are scheduled across worker threads.
"""

from __future__ import annotations

import csv
import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import AtomParams, forward_rate, solve_amplitude_ode
from .envelopes import PhotonEnvelope
from .errors import DataFormatError

#: heralds per RNG block; fixed so thread count cannot change the stream layout
BLOCK_SIZE = 1_000_000

DEFAULT_FORWARD_EDGES = np.arange(-114.0, 116.0, 2.0)
DEFAULT_BACKWARD_EDGES = np.arange(-115.0, 120.0, 5.0)


class Channel(str, enum.Enum):
    FORWARD_NO_ATOM = "forward_no_atom"
    FORWARD_WITH_ATOM = "forward_with_atom"
    BACKWARD = "backward"


@dataclass(frozen=True)
class EfficiencyChain:
    """Detection efficiencies converting physical rates to count probabilities.

    eta_f : total forward coincidence probability per herald (no atom)
    eta_f_tilde : heralding efficiency in the forward path, corrected for
        collection and detection losses
    eta_b : backward collection efficiency
    eta_q : backward detector quantum efficiency
    accidental_rate : uniform background, counts per herald per ns
    """

    eta_f: float
    eta_f_tilde: float
    eta_b: float
    eta_q: float
    accidental_rate: float = 0.0

    def __post_init__(self):
        for name in ("eta_f", "eta_f_tilde", "eta_b", "eta_q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.accidental_rate < 0:
            raise ValueError(f"accidental_rate must be >= 0, got {self.accidental_rate}")


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Counts vs herald delay in uniform bins.

    Raw histograms carry non-negative integer counts; after accidental
    subtraction counts may be fractional (``corrected=True``).
    """

    bin_start: np.ndarray
    bin_width: float
    counts: np.ndarray
    n_heralds: int
    channel: Channel
    corrected: bool = field(default=False, compare=False)
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        start = np.asarray(self.bin_start, dtype=float)
        counts = np.asarray(self.counts)
        if counts.shape != start.shape:
            raise ValueError("counts and bin_start must have the same length")
        steps = np.diff(start)
        if start.size > 1 and not np.allclose(steps, self.bin_width, rtol=1e-9, atol=1e-9):
            raise ValueError("bins must be uniform with the declared width")
        if self.n_heralds < 0:
            raise ValueError("n_heralds must be non-negative")
        if not self.corrected:
            counts = np.asarray(counts, dtype=np.int64)
            if np.any(counts < 0):
                raise ValueError("raw counts must be non-negative")
        else:
            counts = np.asarray(counts, dtype=float)
        object.__setattr__(self, "bin_start", start)
        object.__setattr__(self, "counts", counts)

    @property
    def bin_edges(self) -> np.ndarray:
        return np.concatenate([self.bin_start, [self.bin_start[-1] + self.bin_width]])

    @property
    def bin_centers(self) -> np.ndarray:
        return self.bin_start + 0.5 * self.bin_width

    def total(self) -> float:
        return float(np.sum(self.counts))


def _cumulative_integral(t: np.ndarray, f: np.ndarray, dt: float):
    """Left-Riemann running integral, queryable at arbitrary positions."""
    pos = np.concatenate([t, [t[-1] + dt]])
    cum = np.concatenate([[0.0], np.cumsum(f) * dt])
    return lambda x: np.interp(x, pos, cum)


def bin_probabilities(env: PhotonEnvelope, atom: AtomParams, chain: EfficiencyChain,
                      forward_edges: np.ndarray, backward_edges: np.ndarray):
    """Per-herald detection probabilities per bin for the three channels.

    Forward probabilities are eta_f times the fraction of the no-atom
    rate integral falling in each bin (same normalization for the
    with-atom channel, so extinction survives); the backward channel uses
    eta_f_tilde * eta_q * eta_b * integral(P_e) / tau0.
    """
    t, dt = env.grid, env.dt
    trace = solve_amplitude_ode(atom, env)
    r_f0 = np.abs(env.amplitude) ** 2
    r_f = forward_rate(atom, env, trace)

    cum0 = _cumulative_integral(t, r_f0, dt)
    cumf = _cumulative_integral(t, r_f, dt)
    cumb = _cumulative_integral(t, trace.p_e, dt)

    norm = cum0(forward_edges[-1]) - cum0(forward_edges[0])
    if norm <= 0:
        raise ValueError("forward bins do not cover the envelope support")
    p_f0 = chain.eta_f * np.diff(cum0(forward_edges)) / norm
    p_f = chain.eta_f * np.diff(cumf(forward_edges)) / norm
    p_b = (chain.eta_f_tilde * chain.eta_q * chain.eta_b
           * np.diff(cumb(backward_edges)) / atom.tau0)

    for name, p in (("forward", p_f0), ("forward", p_f), ("backward", p_b)):
        if np.any(p < -1e-15):
            raise ValueError(f"negative {name} bin probability")
        if p.sum() > 1.0:
            raise ValueError(
                f"{name} detection probability per herald exceeds 1 ({p.sum():.3g}); "
                "check the efficiency chain")
    return np.clip(p_f0, 0, None), np.clip(p_f, 0, None), np.clip(p_b, 0, None)


def _draw_channel(rng: np.random.Generator, n: int, probs: np.ndarray,
                  accidental_mean_per_bin: float) -> np.ndarray:
    rest = 1.0 - probs.sum()
    counts = rng.multinomial(n, np.append(probs, rest))[:-1]
    if accidental_mean_per_bin > 0:
        counts = counts + rng.poisson(accidental_mean_per_bin, size=probs.size)
    return counts


def synthesize(env: PhotonEnvelope, atom: AtomParams, chain: EfficiencyChain,
               n_heralds: int, seed: int = 0,
               forward_edges: np.ndarray | None = None,
               backward_edges: np.ndarray | None = None,
               threads: int = 1):
    """Synthesize (G_f0, G_f, G_b) coincidence histograms.

    Per herald and channel at most one true coincidence is drawn;
    accidentals are added as a uniform Poisson background of
    ``chain.accidental_rate`` counts per herald per ns.  Fixed seeds give
    bit-identical histograms; the three channels use independent spawned
    RNG streams.
    """
    if n_heralds <= 0:
        raise ValueError(f"n_heralds must be positive, got {n_heralds}")
    forward_edges = (DEFAULT_FORWARD_EDGES if forward_edges is None
                     else np.asarray(forward_edges, dtype=float))
    backward_edges = (DEFAULT_BACKWARD_EDGES if backward_edges is None
                      else np.asarray(backward_edges, dtype=float))
    dt_f = forward_edges[1] - forward_edges[0]
    dt_b = backward_edges[1] - backward_edges[0]

    p_f0, p_f, p_b = bin_probabilities(env, atom, chain, forward_edges, backward_edges)

    n_blocks = (n_heralds + BLOCK_SIZE - 1) // BLOCK_SIZE
    block_sizes = [min(BLOCK_SIZE, n_heralds - i * BLOCK_SIZE) for i in range(n_blocks)]
    streams = np.random.SeedSequence(seed).spawn(n_blocks)

    def run_block(args):
        block_ss, n = args
        ss_f0, ss_f, ss_b = block_ss.spawn(3)
        c0 = _draw_channel(np.random.default_rng(ss_f0), n, p_f0,
                           n * chain.accidental_rate * dt_f)
        cf = _draw_channel(np.random.default_rng(ss_f), n, p_f,
                           n * chain.accidental_rate * dt_f)
        cb = _draw_channel(np.random.default_rng(ss_b), n, p_b,
                           n * chain.accidental_rate * dt_b)
        return c0, cf, cb

    jobs = list(zip(streams, block_sizes))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_block, jobs))
    else:
        results = [run_block(j) for j in jobs]

    # merged histograms are sums of per-block counts: order independent
    c_f0 = np.sum([r[0] for r in results], axis=0)
    c_f = np.sum([r[1] for r in results], axis=0)
    c_b = np.sum([r[2] for r in results], axis=0)

    mk = lambda counts, edges, width, ch: CoincidenceHistogram(
        edges[:-1], float(width), counts, n_heralds, ch, seed=seed)
    return (mk(c_f0, forward_edges, dt_f, Channel.FORWARD_NO_ATOM),
            mk(c_f, forward_edges, dt_f, Channel.FORWARD_WITH_ATOM),
            mk(c_b, backward_edges, dt_b, Channel.BACKWARD))


# ---------------------------------------------------------------------------
# CSV + JSON sidecar interface
# ---------------------------------------------------------------------------

def write_histogram_csv(path, hist: CoincidenceHistogram,
                        header_comment: str | None = None) -> None:
    """Histogram CSV (bin_start_ns, bin_end_ns, counts) + JSON sidecar."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["bin_start_ns", "bin_end_ns", "counts"])
        for s, c in zip(hist.bin_start, hist.counts):
            c_str = str(int(c)) if not hist.corrected else f"{c:.6f}"
            writer.writerow([f"{s:.10g}", f"{s + hist.bin_width:.10g}", c_str])
    sidecar = {"n_heralds": int(hist.n_heralds), "channel": hist.channel.value,
               "dt_ns": hist.bin_width, "seed": hist.seed}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_histogram_csv(path) -> CoincidenceHistogram:
    rows = []
    header_seen = False
    with open(path, newline="") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if not header_seen:
                if cells[:3] != ["bin_start_ns", "bin_end_ns", "counts"]:
                    raise DataFormatError(
                        f"{path}: expected header 'bin_start_ns, bin_end_ns, counts'")
                header_seen = True
                continue
            rows.append([float(c) for c in cells[:3]])
    if not rows:
        raise DataFormatError(f"{path}: no histogram rows")
    data = np.asarray(rows, dtype=float)
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"{path}: missing JSON sidecar {path}.json")
    counts = data[:, 2]
    corrected = bool(np.any(counts != np.round(counts)))
    return CoincidenceHistogram(
        bin_start=data[:, 0],
        bin_width=float(sidecar["dt_ns"]),
        counts=counts if corrected else counts.astype(np.int64),
        n_heralds=int(sidecar["n_heralds"]),
        channel=Channel(sidecar["channel"]),
        corrected=corrected,
        seed=sidecar.get("seed"))
