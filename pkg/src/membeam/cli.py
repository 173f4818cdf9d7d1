"""Command-line entry point.

Subcommands:
    validate <cfg>                  check every model hypothesis; exit 0 iff all pass
    simulate <cfg>                  run the configured simulation; write CSV + report
    spectrum <cfg>                  eigenvalues (re, im) sorted by real part + abscissa
    oracle-check <cfg>              dt-halving error table against exp(t A_h)
    sweep <cfg> --param P --values  one simulate + fit per value, concurrent

Exit codes: 0 pass, 1 validation/certification failure, 2 usage/parse error.
The environment variable MEMBEAM_LOG sets the log level.  CSV and report
paths come from the config's [output] section; --csv/--report override.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, model, stepper
from .config import ProblemSetup, build_setup, parse_config, with_parameter
from .errors import (
    ConfigError,
    DimensionTooLarge,
    MembeamError,
    SimulationAborted,
)

log = logging.getLogger("membeam")

CSV_HEADER = "t,E,D,dE_numeric,identity_residual,F1,F2,I,L"

_DENSE_CAP = 2000


def default_config_path(name: str = "default") -> Path:
    """Path of a shipped run file ('default' or 'small')."""
    return Path(resources.files("membeam").joinpath(f"data/{name}.cfg"))


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(path, records, truncated_at: int | None = None):
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(",".join(_fmt(v) for v in
                              (r.t, r.E, r.D, r.dE_numeric, r.identity_residual,
                               r.F1, r.F2, r.Ifun, r.Ltotal)) + "\n")
        if truncated_at is not None:
            fh.write(f"# TRUNCATED at step {truncated_at}\n")


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    lines = []
    failures = []

    try:
        params = model.derive_params(cfg.lambda1, cfg.lambda2, cfg.kappa, cfg.beta)
        lines.append(f"params: kappa={params.kappa:g} beta={params.beta:g} "
                     f"lambda1={params.lambda1:g} lambda2={params.lambda2:g} "
                     f"l={params.l:.12g} PASS")
    except MembeamError as exc:
        field = getattr(exc, "field", "params")
        lines.append(f"params: FAIL ({field}: {exc})")
        failures.append(field)
        params = None

    report = None
    try:
        from .config import build_kernel
        kernel = build_kernel(cfg)
        report = model.validate_kernel(kernel, strict=False)
        for name, ok in (("H1", report.h1), ("H2", report.h2),
                         ("H3", report.h3), ("H4", report.h4)):
            lines.append(f"kernel {name}: {'PASS' if ok else 'FAIL'}")
            if not ok:
                failures.append(name)
        lines.append(f"kernel certificate: mu0={report.mu0:.12g} delta1={report.delta1:.12g}")
    except MembeamError as exc:
        lines.append(f"kernel: FAIL ({exc})")
        failures.append("kernel")
        kernel = None

    coeffs = None
    try:
        from .config import parse_profile
        from .discretization import build_spatial_grid
        grid = build_spatial_grid(cfg.L, cfg.Nx)
        p = parse_profile(cfg.p_spec, cfg.L, cfg.base_dir)(grid.nodes)
        g = parse_profile(cfg.g_spec, cfg.L, cfg.base_dir)(grid.nodes)
        coeffs = model.certify_coefficients(p, g, grid)
        lines.append(f"coefficients: alpha1={coeffs.alpha1:.12g} alpha2={coeffs.alpha2:.12g} "
                     f"alpha3={coeffs.alpha3:.12g} alpha4={coeffs.alpha4:.12g} PASS")
    except MembeamError as exc:
        lines.append(f"coefficients: FAIL ({exc})")
        failures.append("coefficients")

    if params is not None and kernel is not None and coeffs is not None \
            and report is not None and report.passed:
        try:
            from .discretization import build_operators
            ops = build_operators(grid, coeffs, params)
            mcfg = analysis.choose_multipliers(params, kernel, coeffs,
                                               analysis.poincare_constant(ops))
            lines.append(f"multipliers: N={mcfg.N:.6g} N1={mcfg.N1:g} N2={mcfg.N2:.6g} "
                         f"gamma1={mcfg.gamma1:.6g} gamma2={mcfg.gamma2:.6g} PASS")
        except MembeamError as exc:
            lines.append(f"multipliers: FAIL ({exc})")
            failures.append("multipliers")

    text = "\n".join(lines)
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n")
    if failures:
        print(f"validation FAILED: {', '.join(failures)}")
        return 1
    print("validation PASSED")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _run_simulation(setup: ProblemSetup):
    cfg = setup.config
    scfg = stepper.SchemeConfig(dt=cfg.dt, scheme=cfg.scheme)
    return stepper.simulate(setup.initial_state, scfg, cfg.T,
                            sample_every=cfg.sample_every, mcfg=setup.mcfg)


def cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    setup = build_setup(cfg)
    csv_path = args.csv or cfg.csv_path
    report_path = args.report or cfg.report_path

    try:
        result = _run_simulation(setup)
    except SimulationAborted as exc:
        stepper._fill_numeric_derivatives(exc.records)
        _write_csv(csv_path, exc.records, truncated_at=exc.step_index)
        print(f"simulation aborted at step {exc.step_index}: {exc.cause}")
        return 1
    _write_csv(csv_path, result.records)

    checks = analysis.certify_trajectory(result.records)
    lines = [c.format_line() for c in checks]
    try:
        fit = analysis.fit_decay(result.records, (0.2 * cfg.T, cfg.T), "peak_envelope")
        lines.append(f"decay fit: gamma={fit.gamma_fit:.6g} K={fit.K_fit:.6g} "
                     f"r2={fit.r2:.6g} window=[{fit.window[0]:g},{fit.window[1]:g}] "
                     f"method={fit.method}")
        if fit.gamma_fit <= 0:
            checks.append(analysis.CheckResult("decay_rate_positive", fit.gamma_fit, 0.0, False))
    except MembeamError as exc:
        lines.append(f"decay fit: unavailable ({exc})")
    if setup.assembly.dim <= _DENSE_CAP:
        absc = analysis.spectral_abscissa(setup.assembly)
        lines.append(f"spectral abscissa: {absc:.6g} (dim={setup.assembly.dim})")
    else:
        lines.append(f"spectral abscissa: skipped (dim={setup.assembly.dim} > {_DENSE_CAP})")
    lines.append(f"certified decay rate (Lyapunov): {setup.mcfg.gamma_certified:.6g}")

    text = "\n".join(lines)
    Path(report_path).write_text(text + "\n")
    print(text)
    print(f"wrote {csv_path} and {report_path}")
    return 0 if all(c.passed for c in checks) else 1


# ---------------------------------------------------------------------------
# spectrum / oracle-check


def cmd_spectrum(args) -> int:
    cfg = parse_config(args.config)
    setup = build_setup(cfg)
    try:
        w = analysis.eigenvalues(setup.assembly)
    except DimensionTooLarge as exc:
        print(f"spectrum unavailable: {exc}")
        return 1
    csv_path = args.csv or os.path.splitext(cfg.csv_path)[0] + "_spectrum.csv"
    absc = float(w[0].real)
    with open(csv_path, "w") as fh:
        fh.write(f"# abscissa = {_fmt(absc)}\n")
        fh.write("re,im\n")
        for lam in w:
            fh.write(f"{_fmt(lam.real)},{_fmt(lam.imag)}\n")
    print(f"abscissa = {absc:.6g}; wrote {csv_path}")
    return 0 if absc <= 1e-10 else 1


def cmd_oracle_check(args) -> int:
    cfg = parse_config(args.config)
    setup = build_setup(cfg)
    if setup.assembly.dim > _DENSE_CAP:
        print(f"oracle-check unavailable: dimension {setup.assembly.dim} > {_DENSE_CAP}")
        return 1

    from .discretization import assemble_generator, memory_grid_from_counts

    dts = [cfg.dt * (0.5 ** k) for k in range(args.levels)]
    errors = []
    H = setup.assembly.metric_matrix

    def hnorm(vec):
        return float(np.sqrt(vec @ (H @ vec)))

    for dt in dts:
        if cfg.scheme == "split_semilagrangian":
            mg = memory_grid_from_counts(setup.kernel, ds=dt, Ns=setup.memory_grid.Ns)
            asm = assemble_generator(setup.assembly.ops, mg, setup.params)
            state = model.build_initial_state(
                model.InitialData(u0=setup.initial_state.u, v0=setup.initial_state.v,
                                  theta0=setup.initial_state.theta,
                                  history_mode=cfg.history_mode), asm)
            ref = stepper.oracle_evolve(asm, state.flatten(), cfg.T)
            Hd = asm.metric_matrix
            out = stepper.simulate(state, stepper.SchemeConfig(dt=dt, scheme=cfg.scheme),
                                   cfg.T, sample_every=10**9).final_state.flatten()
            err = float(np.sqrt((out - ref) @ (Hd @ (out - ref)) / (ref @ (Hd @ ref))))
        else:
            ref = stepper.oracle_evolve(setup.assembly, setup.initial_state.flatten(), cfg.T)
            out = stepper.simulate(setup.initial_state,
                                   stepper.SchemeConfig(dt=dt, scheme=cfg.scheme),
                                   cfg.T, sample_every=10**9).final_state.flatten()
            err = hnorm(out - ref) / hnorm(ref)
        errors.append(err)

    orders = [float(np.log2(errors[i] / errors[i + 1])) for i in range(len(errors) - 1)]
    fitted = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    csv_path = args.csv or os.path.splitext(cfg.csv_path)[0] + "_oracle.csv"
    with open(csv_path, "w") as fh:
        fh.write(f"# scheme = {cfg.scheme}, fitted order = {_fmt(fitted)}\n")
        fh.write("dt,rel_error\n")
        for dt, err in zip(dts, errors):
            fh.write(f"{_fmt(dt)},{_fmt(err)}\n")
    print(f"scheme {cfg.scheme}: errors {['%.3e' % e for e in errors]}, "
          f"pairwise orders {['%.2f' % o for o in orders]}, fitted order {fitted:.3f}")
    print(f"wrote {csv_path}")
    expected = 1.9 if cfg.scheme == "full_implicit_midpoint" else 0.9
    return 0 if fitted >= expected else 1


# ---------------------------------------------------------------------------
# sweep


def _sweep_worker(payload):
    cfg, name, value = payload
    swept = with_parameter(cfg, name, value)
    setup = build_setup(swept)
    result = _run_simulation(setup)
    fit = analysis.fit_decay(result.records, (0.2 * swept.T, swept.T), "peak_envelope")
    absc = (analysis.spectral_abscissa(setup.assembly)
            if setup.assembly.dim <= _DENSE_CAP else float("nan"))
    cond = analysis.resolvent_check(setup.assembly)
    return {"value": value, "gamma_fit": fit.gamma_fit, "K_fit": fit.K_fit,
            "r2": fit.r2, "abscissa": absc, "resolvent_cond": cond}


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    values = [float(v) for v in args.values.replace(",", " ").split()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    payloads = [(cfg, args.param, v) for v in values]
    rows = []
    if args.serial or len(values) == 1:
        rows = [_sweep_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=min(len(values), os.cpu_count() or 1)) as pool:
            rows = list(pool.map(_sweep_worker, payloads))

    csv_path = args.csv or os.path.splitext(cfg.csv_path)[0] + "_sweep.csv"
    with open(csv_path, "w") as fh:
        fh.write(f"{args.param},gamma_fit,K_fit,r2,abscissa,resolvent_cond\n")
        for row in rows:
            fh.write(",".join(_fmt(row[k]) for k in
                              ("value", "gamma_fit", "K_fit", "r2",
                               "abscissa", "resolvent_cond")) + "\n")
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="membeam", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra):
        p = sub.add_parser(name)
        p.add_argument("config", help="run configuration file")
        p.add_argument("--csv", default=None, help="override CSV output path")
        p.add_argument("--report", default=None, help="override report output path")
        for argname, kwargs in extra.items():
            p.add_argument(argname, **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("validate", cmd_validate)
    add("simulate", cmd_simulate)
    add("spectrum", cmd_spectrum)
    add("oracle-check", cmd_oracle_check,
        **{"--levels": dict(type=int, default=3, help="number of dt halvings")})
    sweep = add("sweep", cmd_sweep,
                **{"--param": dict(required=True, help="parameter to sweep, e.g. beta"),
                   "--values": dict(required=True, help="comma/space separated values"),
                   "--serial": dict(action="store_true", help="disable concurrency")})
    _ = sweep
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MEMBEAM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MembeamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
