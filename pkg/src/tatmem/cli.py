"""Command-line entry point: ``tatmem <command> --config run.ini [options]``."""
from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .config import ConfigError, build_phantom, build_problem, dump_config, load_config
from .forward import integrate_trace, solve_forward
from .geometry import uniqueness_times
from .medium import check_attenuation_condition, check_speed_condition
from .reconstruct import (DivergenceError, contraction_estimate, neumann_reconstruct,
                          weighted_norm)

COMMANDS = ("forward", "reconstruct", "roundtrip", "check-kernel", "check-speed", "phantom",
            "energy-report", "contraction")


class _Outputs:
    """Files are written to a scratch directory and moved into place on success."""

    def __init__(self, stage: Path, final: Path):
        self.stage, self.final, self.files = stage, final, []

    def path(self, name: str) -> Path:
        p = self.stage / name
        self.files.append(p)
        return p


@contextmanager
def _staged(out_dir: Path, cfg, command: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        outs = _Outputs(stage, out_dir)
        yield outs
        (stage / "config.ini").write_text(dump_config(cfg))
        outs.files.append(stage / "config.ini")
        formats.write_manifest(stage, cfg.hash, outs.files, command)
        for p in [*outs.files, stage / formats.manifest_name(command)]:
            p.replace(out_dir / p.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _say(msg: str) -> None:
    print(msg, flush=True)


def _forward(args, cfg, prob, energy_only=False):
    ph = build_phantom(cfg, prob.grid, prob.domain)
    stride = args.snapshots if args.snapshots is not None else cfg.run.snapshot_stride
    res = solve_forward(prob.medium, ph, prob.grid, prob.domain, snapshot_stride=stride,
                        absorbing=cfg.geometry.absorbing)
    with _staged(args.out, cfg, args.command) as out:
        formats.write_energy_csv(out.path("energy.csv"), res.energy)
        if not energy_only:
            formats.write_trace(out.path("trace.mtrc"), res.trace)
            formats.write_field(out.path("phantom.mtat"), ph.f, prob.grid)
            for n, snap in sorted(res.snapshots.items()):
                formats.write_field(out.path(f"snapshot_{n:06d}.mtat"), snap, prob.grid)
    drift = res.energy.drift()
    _say(f"{args.command}: nt={prob.grid.nt} dt={prob.grid.dt:.6g} extended-energy drift "
         f"{drift:.3e}; wrote {args.out}")
    return 0


def _reconstruct(args, cfg, prob, trace=None, f_true=None):
    if trace is None:
        path = Path(args.trace) if args.trace else args.out / "trace.mtrc"
        trace = formats.read_trace(path, "raw")
    rc = cfg.reconstruct
    try:
        est, rep = neumann_reconstruct(prob.medium, integrate_trace(trace), prob.grid, prob.domain,
                                       m_max=rc.m_max, tol_rel=rc.tol_rel, f_true=f_true,
                                       filter_order=rc.filter_order)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = rep.as_dict()
    # wall-clock times would break byte-identical reports; print them instead
    timings = report.pop("timings")
    if f_true is not None:
        report["final_relative_error"] = rep.errors[-1]
    with _staged(args.out, cfg, args.command) as out:
        formats.write_field(out.path("fhat.mtat"), est, prob.grid)
        formats.export_pgm(est, out.path("fhat.pgm"), comment=f"config_sha256 {cfg.hash}")
        if f_true is not None:
            formats.write_trace(out.path("trace.mtrc"), trace)
            formats.write_field(out.path("phantom.mtat"), f_true, prob.grid)
        formats.write_json(out.path("report.json"), report, cfg.hash)
    msg = f"{args.command}: {rep.iterates} terms, converged={rep.converged}"
    if f_true is not None:
        msg += f", relative error {rep.errors[-1]:.4e}"
    _say(msg)
    _say("timings: " + ", ".join(f"{k} {v:.2f}s" for k, v in timings.items()))
    return 0


def _roundtrip(args, cfg, prob):
    ph = build_phantom(cfg, prob.grid, prob.domain)
    res = solve_forward(prob.medium, ph, prob.grid, prob.domain, track_energy=False,
                        absorbing=cfg.geometry.absorbing)
    return _reconstruct(args, cfg, prob, trace=res.trace, f_true=ph.f)


def _check_kernel(args, cfg, prob):
    g = prob.grid
    rep = check_attenuation_condition(prob.medium.kernel, g.T, g.dt, a=prob.medium.a,
                                      seed=cfg.run.seed % 2 ** 32)
    try:
        p_ok = bool(np.all(prob.medium.p >= 0))
        psi_error = None
    except ValueError as exc:
        p_ok, psi_error = False, str(exc)
    body = {"value_ok": rep.value_ok, "first_diff_ok": rep.first_diff_ok,
            "second_diff_ok": rep.second_diff_ok, "positive_definite_ok": rep.pd_ok,
            "q_nonnegative": rep.q_nonnegative, "damping_nonnegative": rep.damping_nonnegative,
            "p_nonnegative": p_ok, "pd_min_ratio": rep.pd_min_ratio,
            "worst": {str(k): v for k, v in rep.worst.items()}}
    if psi_error:
        body["psi_error"] = psi_error
    ok = rep.ok and p_ok
    with _staged(args.out, cfg, args.command) as out:
        formats.write_json(out.path("kernel_check.json"), dict(body, ok=ok), cfg.hash)
    for key in ("value_ok", "first_diff_ok", "second_diff_ok", "positive_definite_ok",
                "p_nonnegative"):
        _say(f"{key}: {'pass' if body[key] else 'FAIL'}")
    if psi_error:
        _say(f"tail transform unavailable: {psi_error}")
    return 0 if ok else 1


def _check_speed(args, cfg, prob):
    rep = check_speed_condition(prob.medium.c, prob.grid, prob.x0)
    body = {"ok": rep.ok, "margin": rep.margin, "argmin": list(rep.argmin), "x0": list(prob.x0)}
    if rep.ok:
        try:
            tb = uniqueness_times(prob.medium.c, prob.x0, prob.domain, prob.grid, prob.medium.c0)
            body.update(R_Omega=tb.R_Omega, r_Omega=tb.r_Omega, D_Omega=tb.D_Omega,
                        alpha_conv=tb.alpha_conv, c0=tb.c0, T1_halfbound=tb.T1_halfbound,
                        T_uniqueness=tb.T_uniqueness, damped_threshold=tb.damped_threshold,
                        T=prob.grid.T)
        except ValueError as exc:
            body.update(ok=False, error=str(exc))
    with _staged(args.out, cfg, args.command) as out:
        formats.write_json(out.path("speed_check.json"), body, cfg.hash)
    _say(f"speed condition {'ok' if body['ok'] else 'VIOLATED'}: margin {rep.margin:.6g}")
    if "damped_threshold" in body:
        _say(f"T = {prob.grid.T:.4g}; damped-series threshold {body['damped_threshold']:.4g}, "
             f"uniqueness time {body['T_uniqueness']:.4g}")
    return 0 if body["ok"] else 1


def _phantom(args, cfg, prob):
    ph = build_phantom(cfg, prob.grid, prob.domain)
    with _staged(args.out, cfg, args.command) as out:
        formats.write_field(out.path("phantom.mtat"), ph.f, prob.grid)
        formats.export_pgm(ph.f, out.path("phantom.pgm"), comment=f"config_sha256 {cfg.hash}")
    _say(f"phantom: max {ph.f.max():.4g}, norm "
         f"{weighted_norm(ph.f, prob.medium, prob.grid, prob.domain):.4g}")
    return 0


def _contraction(args, cfg, prob):
    rho, ratios = contraction_estimate(prob.medium, prob.grid, prob.domain,
                                       n_samples=cfg.reconstruct.n_samples, seed=cfg.run.seed,
                                       workers=cfg.run.threads, return_all=True)
    with _staged(args.out, cfg, args.command) as out:
        formats.write_json(out.path("contraction.json"),
                           {"rho": rho, "ratios": ratios, "T": prob.grid.T}, cfg.hash)
    _say(f"contraction estimate {rho:.4f} over {len(ratios)} phantoms")
    return 0


_HANDLERS = {"forward": _forward, "reconstruct": _reconstruct, "roundtrip": _roundtrip,
             "check-kernel": _check_kernel, "check-speed": _check_speed, "phantom": _phantom,
             "energy-report": lambda a, c, p: _forward(a, c, p, energy_only=True),
             "contraction": _contraction}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tatmem", description=(
        "Attenuated thermoacoustic forward modelling and Neumann-series reconstruction."))
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="run configuration (INI)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides run.seed)")
        p.add_argument("--snapshots", type=int, help="store a field snapshot every K steps")
        if name == "reconstruct":
            p.add_argument("--trace", help="raw trace file (default OUT/trace.mtrc)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg = replace(cfg, run=replace(cfg.run, threads=args.threads))
        if args.snapshots is not None and args.snapshots < 0:
            raise ConfigError("--snapshots must be non-negative")
        prob = build_problem(cfg)
        return _HANDLERS[args.command](args, cfg, prob)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
