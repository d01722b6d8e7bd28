"""Command line: ``dynalloc synth|simulate|verify|bench``.

Exit status is 0 only when every executed step and check succeeded; 1 for
failed checks or solver failures, 2 for bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ProblemConfig, disturbance_from_dict, load_config, parse_config, \
    satellite_config
from .results import SynthesisResult, dumps
from .sdp import BACKEND_ENV, SdpError, SolveOptions
from .sim import (DisturbanceSignal, SaturationSpec, SimulationError, Trajectory, actuator_usage, simulate,
                  static_baseline, trajectory_metrics)
from .verify import Report, VerificationError, check_trajectory_certificates, verify_result

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write_json(path: Path, obj, sort_keys: bool = True) -> None:
    path.write_text(dumps(obj, sort_keys))


# ---------------------------------------------------------------- synth

def _synthesis_options(cfg: ProblemConfig, mode=None, rho=None, eps=None, line_search=None,
                       backend=None):
    from .synthesis import SynthesisOptions

    s = cfg.synthesis
    mode = mode or s.get("mode", "nominal")
    rho = rho if rho is not None else s.get("rho", (1.0, 1.0, 1.0))
    selector = s.get("trace_selector")
    opts = SynthesisOptions(
        mode=mode, rho=tuple(rho), trace_selector=selector,
        sigma_line_search=bool(s.get("sigma_line_search", False) if line_search is None else line_search),
        solver=SolveOptions(backend=backend),
    )
    if eps is not None:
        opts.eps = eps
    elif "eps" in s:
        opts.eps = float(s["eps"])
    return opts


def run_synthesis(cfg: ProblemConfig, opts) -> SynthesisResult:
    from .synthesis import synthesize

    if opts.mode == "disturbed" and cfg.disturbance is None:
        raise ConfigError("disturbed mode needs a disturbance section", "disturbance")
    return synthesize(cfg.closed_loop, opts, cfg.disturbance)


def _summary_line(r: SynthesisResult, elapsed: float) -> str:
    def fmt(v):
        return "n/a" if v is None else f"{float(v):.6g}"

    return (f"status={r.status} mode={r.mode} gamma={fmt(r.gamma)} mu={fmt(r.mu)} "
            f"lambda={fmt(r.lam)} solve_time={elapsed:.2f}s")


def cmd_synth(args) -> int:
    from .synthesis import SynthesisError

    cfg = load_config(args.config)
    opts = _synthesis_options(cfg, args.mode, args.rho, args.eps, args.sigma_line_search,
                              args.backend)
    t0 = time.perf_counter()
    try:
        result = run_synthesis(cfg, opts)
    except SynthesisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.report, indent=2, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_FAIL
    elapsed = time.perf_counter() - t0
    out = Path(args.output or Path(args.config).with_suffix(".gains.json"))
    result.save(out)
    print(_summary_line(result, elapsed))
    print(f"wrote {out}")
    return EXIT_OK


# ------------------------------------------------------------- simulate

def _vertex_weights(cfg: ProblemConfig, theta=None, alpha=None):
    n_alpha = cfg.closed_loop.influence.n_alpha
    if n_alpha == 0:
        return None
    if alpha is not None:
        return np.asarray(alpha, dtype=float)
    if theta is not None:
        return cfg.theta_weights(theta)
    return np.full(n_alpha, 1.0 / n_alpha)


def _parse_disturbance(text, cfg: ProblemConfig) -> DisturbanceSignal:
    n_w = max(cfg.closed_loop.n_w, 1)
    if text is None:
        return cfg.disturbance_signal()
    if text == "zero":
        return DisturbanceSignal.zero(n_w)
    if text.startswith("pulse:"):
        vals = _floats(text[len("pulse:"):])
        if len(vals) != 3:
            raise ConfigError("pulse needs amplitude,t_start,t_end", "--disturbance")
        return DisturbanceSignal.pulse(vals[0], vals[1], vals[2])
    path = Path(text)
    if path.exists():
        return disturbance_from_dict(json.loads(path.read_text()), n_w, str(path))
    raise ConfigError("expected 'zero', 'pulse:a,t0,t1' or a JSON file", "--disturbance")


def gnuplot_script(csv_names: list[str], n_p: int, m_a: int) -> str:
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set xlabel 't [s]'",
             "set terminal pngcairo size 900,600", "set output 'position.png'",
             "set ylabel 'y_p'"]
    plots = ", ".join(f"'{name}' using 't':'x1' with lines title '{name}'" for name in csv_names)
    lines.append(f"plot {plots}")
    lines += ["set output 'actuators.png'", "set ylabel 'sat(y_f) [mN]'"]
    for name in csv_names:
        cols = ", ".join(f"'{name}' using 't':'sat{i + 1}' with lines title '{name} sat{i + 1}'"
                         for i in range(m_a))
        lines.append(f"plot {cols}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    cl = cfg.closed_loop
    sc = cfg.scenario
    gains = SynthesisResult.load(args.gains)
    dist = _parse_disturbance(args.disturbance, cfg)
    x0 = cfg.initial_state(args.x0)
    t_final = args.t_final if args.t_final is not None else float(sc.get("t_final", 120.0))
    dt = args.dt if args.dt is not None else float(sc.get("dt", 0.01))
    alpha = _vertex_weights(cfg, args.theta, args.alpha)
    if args.baseline == "static":
        traj = static_baseline(cl, gains.E_c, x0, dist, t_final, dt, alpha)
    else:
        traj = simulate(cl, gains, alpha, x0, dist, t_final, dt)
    out = Path(args.output or "trajectory.csv")
    traj.to_csv(out)
    metrics = trajectory_metrics(traj, cl.W)
    metrics["disturbance_energy"] = dist.energy(cfg.disturbance.R if cfg.disturbance else None)
    if cfg.disturbance is not None:
        metrics["disturbance_admissible"] = dist.admissible(cfg.disturbance.R, cfg.disturbance.sigma)
    metrics["baseline"] = args.baseline
    thrust = SaturationSpec(cl.u_bar, cfg.xi).physical(traj.y_f)
    metrics["physical_thrust_min"] = thrust.min(axis=0).tolist()
    metrics["physical_thrust_max"] = thrust.max(axis=0).tolist()
    _write_json(out.with_suffix(".metrics.json"), metrics)
    Path(out.with_suffix(".gp")).write_text(gnuplot_script([out.name], cl.n_p, cl.m_a))
    print(f"wrote {out} ({len(traj.t)} samples), energy={metrics['energy']:.6g}, "
          f"terminal |x|={metrics['terminal_state_norm']:.3e}")
    return EXIT_OK


# --------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    cl = cfg.closed_loop
    gains = SynthesisResult.load(args.gains)
    R = cfg.disturbance.R if cfg.disturbance is not None else None
    threshold = args.abscissa_threshold
    if threshold is None:
        threshold = -1e-4 if gains.mode == "external" else 0.0
    report = verify_result(cl, gains, R, abscissa_threshold=threshold)
    if args.trajectory:
        traj = Trajectory.from_csv(args.trajectory)
        if gains.P_vertices:
            alpha = _vertex_weights(cfg, args.theta, args.alpha)
            sigma = cfg.disturbance.sigma if cfg.disturbance is not None else None
            report.extend(check_trajectory_certificates(
                traj, gains.P_at(alpha), gains.gamma, gains.mu, cl.W, R, sigma))
        else:
            report.add("trajectory_certificates", "not-applicable", reason="gains carry no P")
    else:
        report.add("trajectory_certificates", "not-applicable", reason="no trajectory given")
    _emit_report(report, args.json)
    return EXIT_OK if report.passed else EXIT_FAIL


def _emit_report(report: Report, json_path=None) -> None:
    print(report.to_text())
    if json_path:
        Path(json_path).write_text(report.to_json() + "\n")


# ---------------------------------------------------------------- bench

BENCHES = ("satellite-disturbed", "satellite-robust")
PENALISED_REDUCTION = 0.20
TERMINAL_YP = 1e-3
TERMINAL_RELATIVE = 1e-3


def run_bench(which: str, outdir: Path, backend=None, log=print) -> Report:
    """Design, simulate and verify one benchmark example, writing all artefacts."""
    from .synthesis import SynthesisError

    if which not in BENCHES:
        raise ValueError(f"unknown benchmark {which!r}; choose from {BENCHES}")
    example = which.split("-", 1)[1]
    outdir.mkdir(parents=True, exist_ok=True)
    cfg_dict = satellite_config(example)
    _write_json(outdir / "problem.json", cfg_dict, sort_keys=False)
    cfg = parse_config(cfg_dict)
    cl, sc = cfg.closed_loop, cfg.scenario
    rep = Report(f"bench {which}")

    opts = _synthesis_options(cfg, backend=backend)
    try:
        t0 = time.perf_counter()
        gains = run_synthesis(cfg, opts)
        elapsed = time.perf_counter() - t0
    except SynthesisError as exc:
        raise StageError("synth", str(exc)) from exc
    gains.save(outdir / "gains.json")
    log(_summary_line(gains, elapsed))
    rep.add("synth_feasible", gains.status in ("optimal", "feasible"), status=gains.status)

    R = cfg.disturbance.R
    try:
        rep.extend(verify_result(cl, gains, R))
    except VerificationError as exc:
        raise StageError("verify", str(exc)) from exc

    x0 = cfg.initial_state()
    dist = cfg.disturbance_signal()
    t_final, dt = float(sc["t_final"]), float(sc["dt"])
    csvs = []
    try:
        if example == "disturbed":
            traj = simulate(cl, gains, None, x0, dist, t_final, dt)
            base = static_baseline(cl, gains.E_c, x0, dist, t_final, dt)
            for name, tr in (("dynamic.csv", traj), ("static.csv", base)):
                tr.to_csv(outdir / name)
                csvs.append(name)
            cert = check_trajectory_certificates(traj, gains.P, gains.gamma, gains.mu, cl.W,
                                                 R, cfg.disturbance.sigma)
            rep.extend(cert)
            y_p_end = float(abs(traj.x[-1, 0]))
            rep.add("terminal_y_p", y_p_end < TERMINAL_YP, TERMINAL_YP - y_p_end,
                    y_p=y_p_end, t_final=t_final)
            dyn_use, stat_use = actuator_usage(traj)[0], actuator_usage(base)[0]
            reduction = 1.0 - dyn_use / stat_use if stat_use > 0 else 0.0
            rep.add("penalised_actuator_reduction", reduction >= PENALISED_REDUCTION,
                    reduction - PENALISED_REDUCTION, dynamic=dyn_use, static=stat_use,
                    reduction=reduction)
            metrics = {"dynamic": trajectory_metrics(traj, cl.W),
                       "static": trajectory_metrics(base, cl.W),
                       "disturbance_energy": dist.energy(R),
                       "disturbance_admissible": dist.admissible(R, cfg.disturbance.sigma)}
        else:
            metrics = {}
            for theta in sc["theta"]:
                alpha = cfg.theta_weights(theta)
                tag = f"theta_{theta:.2f}"
                traj = simulate(cl, gains, alpha, x0, dist, t_final, dt)
                base = static_baseline(cl, gains.E_c, x0, dist, t_final, dt, alpha)
                for name, tr in ((f"dynamic_{tag}.csv", traj), (f"static_{tag}.csv", base)):
                    tr.to_csv(outdir / name)
                    csvs.append(name)
                cert = check_trajectory_certificates(traj, gains.P_at(alpha), gains.gamma, None,
                                                     cl.W, R, None)
                for c in cert.checks:
                    c.name = f"{c.name}[{tag}]"
                rep.extend(cert)
                ratio = float(np.linalg.norm(traj.x[-1]) / np.linalg.norm(x0))
                rep.add(f"terminal_state[{tag}]", ratio < TERMINAL_RELATIVE,
                        TERMINAL_RELATIVE - ratio, relative_norm=ratio, t_final=t_final)
                metrics[tag] = {"dynamic": trajectory_metrics(traj, cl.W),
                                "static": trajectory_metrics(base, cl.W)}
    except SimulationError as exc:
        raise StageError("simulate", str(exc)) from exc
    _write_json(outdir / "metrics.json", metrics)
    (outdir / "plot.gp").write_text(gnuplot_script(csvs, cl.n_p, cl.m_a))
    (outdir / "summary.txt").write_text(rep.to_text() + "\n")
    (outdir / "summary.json").write_text(rep.to_json() + "\n")
    return rep


def cmd_bench(args) -> int:
    outdir = Path(args.outdir or f"bench-{args.which}")
    try:
        rep = run_bench(args.which, outdir, args.backend)
    except StageError as exc:
        print(f"error: bench aborted in stage {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(rep.to_text())
    print(f"artefacts in {outdir}")
    return EXIT_OK if rep.passed else EXIT_FAIL


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dynalloc",
        description="Design, simulate and verify dynamic control allocators with anti-windup.",
        epilog=f"The SDP backend defaults to clarabel; set {BACKEND_ENV}=cvxopt to change it.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="solve the design LMIs and write a gains file")
    s.add_argument("config")
    s.add_argument("--mode", choices=["nominal", "global", "disturbed", "robust"])
    s.add_argument("--rho", type=_floats, help="objective weights, e.g. 2,0.15,1000")
    s.add_argument("--eps", type=float, help="relative strict-inequality margin")
    s.add_argument("--sigma-line-search", action="store_true", default=None)
    s.add_argument("--backend", choices=["clarabel", "cvxopt"])
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="simulate the saturated loop and write a CSV")
    s.add_argument("config")
    s.add_argument("gains")
    s.add_argument("--x0", type=_floats, help="plant initial state (or full state)")
    s.add_argument("--disturbance", help="'zero', 'pulse:amp,t0,t1' or a JSON file")
    s.add_argument("--theta", type=float, help="scalar uncertain parameter (needs theta_range)")
    s.add_argument("--alpha", type=_floats, help="vertex weights")
    s.add_argument("--t-final", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--baseline", choices=["dynamic", "static"], default="dynamic")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="check a gains file (and optionally a trajectory)")
    s.add_argument("gains")
    s.add_argument("config")
    s.add_argument("--trajectory")
    s.add_argument("--theta", type=float)
    s.add_argument("--alpha", type=_floats)
    s.add_argument("--abscissa-threshold", type=float,
                   help="default 0, or -1e-4 for external gains")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("bench", help="reproduce a benchmark example end to end")
    s.add_argument("which", choices=BENCHES)
    s.add_argument("--outdir")
    s.add_argument("--backend", choices=["clarabel", "cvxopt"])
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        # ConfigError, ModelError and VerificationError are ValueErrors too
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, SdpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
