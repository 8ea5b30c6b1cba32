"""Command-line front end: simulate, synth, analyze, shape, fit, extinction.

JSON in, CSV/JSON out; every output file carries a header comment (or
JSON field) with the tool version and a hash of the inputs so runs can
be reproduced.  Exit codes: 0 success, 2 malformed config, 3 unphysical
parameters, 4 data-format problems.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import cavity_from_json, envelope_overlap, shape_conditional_probe
from .dynamics import (AtomParams, delta_rate, extinction_closed_form,
                       extinction_numeric, forward_rate, backward_rate,
                       solve_amplitude_ode, write_series_csv)
from .envelopes import (EnvelopeShape, make_decaying, make_rising,
                        read_envelope_csv, write_envelope_csv, default_grid)
from .errors import ConfigError, DataFormatError
from .events import EfficiencyChain, read_histogram_csv, synthesize, write_histogram_csv
from .fitting import (EXTINCTION_WINDOW_DECAYING, EXTINCTION_WINDOW_RISING,
                      fit_envelope, fit_lambda)
from .presets import REFERENCE_CHAIN
from .reconstruct import (counts_to_rate, delta_series, extinction_from_data,
                          reconstruct_backward, reconstruct_forward,
                          subtract_accidentals)

EXIT_CONFIG = 2
EXIT_PHYSICS = 3
EXIT_DATA = 4


def _input_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _header(input_hash: str) -> str:
    return f"photon-atom {__version__} input={input_hash}"


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}")


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required config key '{key}'")
    return cfg[key]


def _atom_from_config(cfg: dict) -> AtomParams:
    tau0 = float(_require(cfg, "tau0_ns"))
    lam = float(_require(cfg, "lambda"))
    return AtomParams(tau0=tau0, overlap=lam)


def _chain_from_config(cfg: dict) -> EfficiencyChain:
    sub = cfg.get("chain")
    if sub is None:
        return REFERENCE_CHAIN
    return EfficiencyChain(
        eta_f=float(sub.get("eta_f", REFERENCE_CHAIN.eta_f)),
        eta_f_tilde=float(sub.get("eta_f_tilde", REFERENCE_CHAIN.eta_f_tilde)),
        eta_b=float(sub.get("eta_b", REFERENCE_CHAIN.eta_b)),
        eta_q=float(sub.get("eta_q", REFERENCE_CHAIN.eta_q)),
        accidental_rate=float(sub.get("accidental_rate", 0.0)))


def _envelope_from_config(cfg: dict):
    tau_p = float(_require(cfg, "tau_p_ns"))
    env_cfg = cfg.get("envelope", {})
    shape = env_cfg.get("shape", "exp_decaying")
    grid_cfg = cfg.get("grid", {})
    step = float(grid_cfg.get("step_ns", 0.05))
    span = float(grid_cfg.get("span_tau_p", 8.0))
    grid = default_grid(tau_p, step=step, span=span)
    if shape == "exp_decaying":
        return make_decaying(tau_p, grid)
    if shape == "exp_rising":
        return make_rising(tau_p, grid)
    if shape == "cavity_shaped":
        cav_cfg = env_cfg.get("cavity")
        if cav_cfg is None:
            raise ConfigError("envelope shape 'cavity_shaped' needs an 'envelope.cavity' block")
        return shape_conditional_probe(cavity_from_json(cav_cfg), tau_p, grid)
    if shape == "tabulated":
        path = env_cfg.get("csv")
        if path is None:
            raise ConfigError("envelope shape 'tabulated' needs an 'envelope.csv' path")
        return read_envelope_csv(path)
    raise ConfigError(f"unknown envelope shape '{shape}'")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PHOTON_ATOM_THREADS", "1")))
    except ValueError:
        return 1


def _infer_shape(hist) -> EnvelopeShape:
    centers = hist.bin_centers
    com = float(np.sum(np.asarray(hist.counts, float) * centers))
    return EnvelopeShape.EXP_DECAYING if com >= 0 else EnvelopeShape.EXP_RISING


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    tag = _input_hash(cfg)
    atom = _atom_from_config(cfg)
    chain = _chain_from_config(cfg)
    env = _envelope_from_config(cfg)

    trace = solve_amplitude_ode(atom, env)
    r_f0 = np.abs(env.amplitude) ** 2
    r_f = forward_rate(atom, env, trace)
    delta = delta_rate(r_f0, r_f)
    r_b = backward_rate(atom, trace, chain.eta_b)
    eps_cf = extinction_closed_form(atom, env.tau_p)
    eps_num = extinction_numeric(env.grid, delta, (env.grid[0], env.grid[-1]))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hdr = _header(tag)
    write_series_csv(out / "pe.csv", env.grid, trace.p_e, value_name="p_e", header_comment=hdr)
    write_series_csv(out / "r_f0.csv", env.grid, r_f0, header_comment=hdr)
    write_series_csv(out / "r_f.csv", env.grid, r_f, header_comment=hdr)
    write_series_csv(out / "r_b.csv", env.grid, r_b, header_comment=hdr)
    write_series_csv(out / "delta.csv", env.grid, delta, header_comment=hdr)
    summary = {
        "tool_version": __version__,
        "input_hash": tag,
        "epsilon": eps_num,
        "epsilon_closed_form": eps_cf,
        "peak_pe": trace.peak,
        "peak_time_ns": trace.peak_time,
        "envelope_shape": env.shape.value,
        "tau_p_ns": env.tau_p,
        "tau0_ns": atom.tau0,
        "lambda": atom.overlap,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"epsilon={eps_num:.5f} (closed form {eps_cf:.5f}), "
          f"peak_pe={trace.peak:.5f} at {trace.peak_time:.1f} ns -> {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_json(args.config)
    if args.heralds <= 0:
        raise ConfigError(f"--heralds must be positive, got {args.heralds}")
    tag = _input_hash({"config": cfg, "heralds": args.heralds, "seed": args.seed,
                       "dt_ns": args.dt_ns, "span_ns": args.span_ns})
    atom = _atom_from_config(cfg)
    chain = _chain_from_config(cfg)
    env = _envelope_from_config(cfg)

    forward_edges = np.arange(-args.span_ns, args.span_ns + args.dt_ns, args.dt_ns)
    backward_edges = np.arange(-args.span_ns - 1.0, args.span_ns + 6.0, 5.0)
    g_f0, g_f, g_b = synthesize(env, atom, chain, args.heralds, seed=args.seed,
                                forward_edges=forward_edges,
                                backward_edges=backward_edges,
                                threads=_threads())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hdr = _header(tag)
    write_histogram_csv(out / "g_f0.csv", g_f0, header_comment=hdr)
    write_histogram_csv(out / "g_f.csv", g_f, header_comment=hdr)
    write_histogram_csv(out / "g_b.csv", g_b, header_comment=hdr)
    print(f"synthesized {args.heralds} heralds (seed {args.seed}): "
          f"G_f0 {int(g_f0.total())}, G_f {int(g_f.total())}, G_b {int(g_b.total())} counts -> {out}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_json(args.params)
    tag = _input_hash({"params": cfg, "g_f0": str(args.g_f0), "g_f": str(args.g_f),
                       "g_b": str(args.g_b) if args.g_b else None})
    atom = _atom_from_config(cfg)
    chain = _chain_from_config(cfg)

    g_f0 = read_histogram_csv(args.g_f0)
    g_f = read_histogram_csv(args.g_f)
    if (g_f0.bin_start.shape != g_f.bin_start.shape
            or not np.allclose(g_f0.bin_start, g_f.bin_start, atol=1e-9)):
        raise DataFormatError("G_f0 and G_f are on different bin grids")

    shape = _infer_shape(g_f0)
    window = args.window_ns or (EXTINCTION_WINDOW_DECAYING
                                if shape is EnvelopeShape.EXP_DECAYING
                                else EXTINCTION_WINDOW_RISING)

    floors = {}
    try:
        g_f0_c, fl0 = subtract_accidentals(g_f0)
        g_f_c, flf = subtract_accidentals(g_f)
        floors = {"g_f0_floor": fl0.counts_per_bin, "g_f0_floor_sigma": fl0.sigma,
                  "g_f_floor": flf.counts_per_bin, "g_f_floor_sigma": flf.sigma}
    except DataFormatError:
        g_f0_c, g_f_c = g_f0, g_f   # not enough margin bins; proceed uncorrected

    r0 = counts_to_rate(g_f0_c, chain)
    rf = counts_to_rate(g_f_c, chain)
    delta = delta_series(r0, rf)
    eps, eps_sigma = extinction_from_data(r0, rf, window)
    trace = reconstruct_forward(r0, rf, atom)
    ipk = int(np.argmax(trace.p_e))

    env_fit = fit_envelope(g_f0, shape)
    lam_fit = fit_lambda(g_f0, g_f, atom.tau0, shape=shape, tau_p=env_fit.tau_p)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hdr = _header(tag)
    write_series_csv(out / "delta.csv", delta.bin_start, delta.value, delta.sigma,
                     value_name="delta", header_comment=hdr)
    write_series_csv(out / "pe_forward.csv", trace.grid, trace.p_e, trace.sigma,
                     value_name="p_e", header_comment=hdr)

    report = {
        "tool_version": __version__,
        "input_hash": tag,
        "envelope_shape": shape.value,
        "window_ns": list(window),
        "epsilon": eps,
        "epsilon_sigma": eps_sigma,
        "peak_pe": float(trace.p_e[ipk]),
        "peak_pe_sigma": float(trace.sigma[ipk]),
        "peak_time_ns": float(trace.grid[ipk]),
        "fit": {
            "tau_p_ns": env_fit.tau_p,
            "tau_p_sigma": env_fit.tau_p_sigma,
            "lambda": lam_fit.overlap,
            "lambda_sigma": lam_fit.overlap_sigma,
            "chi2_reduced": lam_fit.chi2_reduced,
            "n_iterations": lam_fit.n_iterations,
            "window_ns": list(lam_fit.window),
        },
        **floors,
    }

    if args.g_b:
        g_b = read_histogram_csv(args.g_b)
        try:
            g_b_c, flb = subtract_accidentals(g_b)
            report["g_b_floor"] = flb.counts_per_bin
        except DataFormatError:
            g_b_c = g_b
        back = reconstruct_backward(g_b_c, chain, atom)
        write_series_csv(out / "pe_backward.csv", back.grid, back.p_e, back.sigma,
                         value_name="p_e", header_comment=hdr)
        jpk = int(np.argmax(back.p_e))
        report["peak_pe_backward"] = float(back.p_e[jpk])
        report["peak_pe_backward_sigma"] = float(back.sigma[jpk])

    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"epsilon={eps:.5f}+-{eps_sigma:.5f} ({shape.value}), "
          f"peak_pe={report['peak_pe']:.5f}+-{report['peak_pe_sigma']:.5f} -> {out}")
    return 0


def cmd_shape(args) -> int:
    cav_cfg = _load_json(args.cavity)
    cav = cavity_from_json(cav_cfg)
    if args.detuning_mhz is not None:
        cav = cavity_from_json({**cav_cfg, "detuning_mhz": args.detuning_mhz})
    tag = _input_hash({"cavity": cav_cfg, "tau_p": args.tau_p_ns,
                       "detuning_mhz": cav.detuning_mhz})
    env = shape_conditional_probe(cav, args.tau_p_ns)
    ideal_up = make_rising(args.tau_p_ns, env.grid)
    ideal_dn = make_decaying(args.tau_p_ns, env.grid)
    ov_up = envelope_overlap(env, ideal_up)
    ov_dn = envelope_overlap(env, ideal_dn)
    write_envelope_csv(args.out, env, header_comment=_header(tag))
    print(f"detuning {cav.detuning_mhz:.1f} MHz: overlap with rising {ov_up:.4f}, "
          f"with decaying {ov_dn:.4f}; pre-normalization energy {env.pre_norm:.4f}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_json(args.params)
    atom = _atom_from_config(cfg)
    g_f0 = read_histogram_csv(args.g_f0)
    shape = _infer_shape(g_f0)
    env_fit = fit_envelope(g_f0, shape)
    report = {
        "tool_version": __version__,
        "tau_p_ns": env_fit.tau_p,
        "tau_p_sigma": env_fit.tau_p_sigma,
        "chi2_reduced": env_fit.chi2_reduced,
        "n_iterations": env_fit.n_iterations,
        "envelope_shape": shape.value,
    }
    if args.g_f:
        g_f = read_histogram_csv(args.g_f)
        lam_fit = fit_lambda(g_f0, g_f, atom.tau0, shape=shape, tau_p=env_fit.tau_p)
        report.update({"lambda": lam_fit.overlap, "lambda_sigma": lam_fit.overlap_sigma,
                       "lambda_chi2_reduced": lam_fit.chi2_reduced,
                       "window_ns": list(lam_fit.window)})
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_extinction(args) -> int:
    cfg = _load_json(args.params)
    chain = _chain_from_config(cfg)
    g_f0 = read_histogram_csv(args.g_f0)
    g_f = read_histogram_csv(args.g_f)
    shape = _infer_shape(g_f0)
    window = args.window_ns or (EXTINCTION_WINDOW_DECAYING
                                if shape is EnvelopeShape.EXP_DECAYING
                                else EXTINCTION_WINDOW_RISING)
    r0 = counts_to_rate(g_f0, chain)
    rf = counts_to_rate(g_f, chain)
    eps, sigma = extinction_from_data(r0, rf, window)
    print(f"epsilon = {eps:.5f} +- {sigma:.5f}  (window {window[0]:g}..{window[1]:g} ns)")
    return 0


# ---------------------------------------------------------------------------

def _window_arg(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return (lo, hi)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photon-atom",
                                description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"photon-atom {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="forward physics from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("synth", help="Monte Carlo coincidence histograms")
    s.add_argument("--config", required=True)
    s.add_argument("--heralds", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dt-ns", type=float, default=2.0)
    s.add_argument("--span-ns", type=float, default=154.0)
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("analyze", help="histograms -> rates, population, extinction, fits")
    s.add_argument("g_f0")
    s.add_argument("g_f")
    s.add_argument("--g-b", default=None)
    s.add_argument("--params", required=True)
    s.add_argument("--window-ns", type=_window_arg, default=None)
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("shape", help="cavity-shaped conditional probe envelope")
    s.add_argument("--cavity", required=True)
    s.add_argument("--tau-p-ns", type=float, required=True)
    s.add_argument("--detuning-mhz", type=float, default=None)
    s.add_argument("--out", default="envelope.csv")
    s.set_defaults(func=cmd_shape)

    s = sub.add_parser("fit", help="fit tau_p (and lambda) to histograms")
    s.add_argument("g_f0")
    s.add_argument("g_f", nargs="?", default=None)
    s.add_argument("--params", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("extinction", help="windowed extinction from histograms")
    s.add_argument("g_f0")
    s.add_argument("g_f")
    s.add_argument("--params", required=True)
    s.add_argument("--window-ns", type=_window_arg, default=None)
    s.set_defaults(func=cmd_extinction)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
