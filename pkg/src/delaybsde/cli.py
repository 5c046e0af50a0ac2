"""Command line front end.

Subcommands:
    check-assumptions   validate a config and evaluate the well-posedness checks
    solve               run the fixed-point solver and write solution CSVs
    stability           run a perturbation-family experiment
    helly-bray          run a pathwise integral-convergence experiment

Settings resolve as: command line flag > DELAYBSDE_* environment variable >
config file value > built-in default.  Exit codes: 0 all checks passed,
2 a check or experiment failed, 1 bad input or internal error.
"""

import argparse
import hashlib
import json
import os
import sys

ENV_PREFIX = "DELAYBSDE_"
DEFAULT_PATHS = 2000
DEFAULT_STEPS = 50
DEFAULT_SEED = 0
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def load_config(path):
    """Read a JSON config file, mapping parse problems to ConfigError."""
    from .errors import ConfigError

    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def canonical_config_text(config):
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def _env(name):
    return os.environ.get(ENV_PREFIX + name)


def resolve_setting(flag_value, env_name, config_value, default, cast=int):
    """Apply the flag > environment > config > default precedence."""
    if flag_value is not None:
        return flag_value
    raw = _env(env_name)
    if raw is not None:
        return cast(raw)
    if config_value is not None:
        return config_value
    return default


def suggest_aligned_steps(T, delta, n_steps, span=25):
    """Step counts near n_steps for which delta is a whole number of steps."""
    good = []
    for n in range(max(1, n_steps - span), n_steps + span + 1):
        ratio = delta * n / T
        if abs(ratio - round(ratio)) <= 1e-9 * max(1.0, ratio) and round(ratio) >= 1:
            good.append(n)
    good.sort(key=lambda n: (abs(n - n_steps), n))
    return good[:3]


def validate(config, n_steps=None):
    """Check a config dict without running anything.

    Returns a list of diagnostics, each ``{"level", "code", "message"}`` with
    level "error" or "warning".  An empty list means the config is runnable.
    """
    import numpy as np

    from .model import c_threshold
    from .registry import known_names

    diags = []

    def err(code, message):
        diags.append({"level": "error", "code": code, "message": message})

    def warn(code, message):
        diags.append({"level": "warning", "code": code, "message": message})

    problem = config.get("problem")
    if not isinstance(problem, dict):
        err("schema", "config must contain a 'problem' object")
        return diags

    for key in ("T", "delta", "beta", "L", "L_tilde", "terminal", "A"):
        if key not in problem:
            err("schema", f"problem section is missing required key '{key}'")
    if diags:
        return diags

    T = problem["T"]
    delta = problem["delta"]
    if not (isinstance(T, (int, float)) and T > 0):
        err("domain", f"T must be a positive number, got {T!r}")
    if not (isinstance(delta, (int, float)) and 0 < delta <= (T if isinstance(T, (int, float)) else np.inf)):
        err("domain", f"delta must satisfy 0 < delta <= T, got {delta!r}")
    for key in ("m", "d"):
        value = problem.get(key, 1)
        if not (isinstance(value, int) and value >= 1):
            err("domain", f"{key} must be an integer >= 1, got {value!r}")

    beta = problem["beta"]
    L_tilde = problem["L_tilde"]
    for key, value in (("beta", beta), ("L", problem["L"]), ("L_tilde", L_tilde)):
        if not (isinstance(value, (int, float)) and value > 0):
            err("domain", f"{key} must be a positive number, got {value!r}")
    if not diags and beta <= 2.0 * np.sqrt(2.0) * L_tilde:
        err("beta-range",
            f"beta={beta} must exceed 2*sqrt(2)*L_tilde={2.0 * np.sqrt(2.0) * L_tilde:.6g} "
            "for the contraction constant to exist")

    c = problem.get("c")
    if c is not None and not diags:
        cap = c_threshold(beta, L_tilde)
        if not (isinstance(c, (int, float)) and 0 < c < cap):
            err("c-range", f"c={c!r} must lie in (0, {cap:.6g}) for beta={beta}, L_tilde={L_tilde}")

    names = known_names()
    terminal = problem.get("terminal")
    if not (isinstance(terminal, dict) and terminal.get("name") in names["terminal"]):
        err("registry", f"terminal must name one of {sorted(names['terminal'])}")
    for section, kind in (("F", "F"), ("G", "G")):
        entry = problem.get(section)
        if entry is not None and not (isinstance(entry, dict) and entry.get("name") in names[kind]):
            err("registry", f"{section} must be null or name one of {sorted(names[kind])}")

    A = problem.get("A")
    known_A = {"deterministic", "running_max", "time_integral", "oscillatory"}
    if not (isinstance(A, dict) and A.get("kind") in known_A):
        err("registry", f"A.kind must be one of {sorted(known_A)}")

    if not any(d["level"] == "error" for d in diags):
        steps = n_steps if n_steps is not None else config.get("solver", {}).get("n_steps", DEFAULT_STEPS)
        ratio = delta * steps / T
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            hint = suggest_aligned_steps(T, delta, steps)
            extra = f"; nearby aligned step counts: {hint}" if hint else ""
            err("grid-alignment",
                f"delay delta={delta} is not a whole number of steps at n_steps={steps}{extra}")

    solver = config.get("solver", {})
    if solver and not isinstance(solver, dict):
        err("schema", "'solver' section must be an object")
    elif solver.get("scheme") not in (None, "explicit", "implicit"):
        err("schema", f"solver.scheme must be 'explicit' or 'implicit', got {solver.get('scheme')!r}")

    if problem.get("K", 0.0) == 0.0 and problem.get("F") is not None:
        warn("bounds", "F is set but K is 0; the smallness checks will treat F as undelayed")
    if problem.get("K_tilde", 0.0) == 0.0 and problem.get("G") is not None:
        warn("bounds", "G is set but K_tilde is 0; the smallness checks will treat G as undelayed")
    return diags


def _format(value):
    return format(float(value), ".17g")


def write_table(path, header, columns):
    """Write columns of floats as CSV with full precision."""
    import numpy as np

    columns = [np.asarray(col, dtype=float) for col in columns]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_format(v) for v in row) + "\n")


def write_manifest(out_dir, command, config, settings):
    import numpy
    import scipy

    from . import __version__

    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(canonical_config_text(config).encode("utf-8")).hexdigest(),
        "settings": settings,
        "versions": {
            "package": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": "%d.%d.%d" % sys.version_info[:3],
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _prepare(args):
    """Shared setup: config, resolved settings, problem, ensemble."""
    from .path_calculus import TimeGrid
    from .registry import problem_from_dict
    from .stochastic_engine import realize_increasing_process, simulate_brownian

    config = load_config(args.config)
    solver_cfg = config.get("solver", {}) if isinstance(config.get("solver", {}), dict) else {}
    n_paths = resolve_setting(args.paths, "PATHS", solver_cfg.get("n_paths"), DEFAULT_PATHS)
    n_steps = resolve_setting(args.steps, "STEPS", solver_cfg.get("n_steps"), DEFAULT_STEPS)
    seed = resolve_setting(args.seed, "SEED", solver_cfg.get("seed"), DEFAULT_SEED)
    out_dir = resolve_setting(args.out, "OUT", config.get("out"), "delaybsde-out", cast=str)

    diags = validate(config, n_steps=n_steps)
    for diag in diags:
        print(f"{diag['level']}: [{diag['code']}] {diag['message']}")
    if any(d["level"] == "error" for d in diags):
        return None

    problem = problem_from_dict(config["problem"])
    grid = TimeGrid.uniform(problem.T, n_steps, delta=problem.delta)
    ensemble = simulate_brownian(grid, n_paths, d=problem.d, seed=seed)
    ensemble = realize_increasing_process(problem.A_spec, ensemble)
    settings = {"seed": seed, "n_paths": n_paths, "n_steps": n_steps}
    return config, solver_cfg, problem, ensemble, out_dir, settings


def _ensure_out(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def cmd_check(args):
    from .model import (check_H1, check_H2, check_integrability, effective_c,
                        probe_lipschitz, select_lambda)

    prepared = _prepare(args)
    if prepared is None:
        return 2
    config, solver_cfg, problem, ensemble, out_dir, settings = prepared

    c = effective_c(problem)
    h1 = check_H1(problem, ensemble, c)
    h2 = check_H2(problem, ensemble, c)
    print(h1)
    print(h2)

    failures = 0 if h1.passed else 1
    failures += 0 if h2.passed else 1

    try:
        selection = select_lambda(c, problem.beta, problem.L_tilde)
        print(f"lambda selection: lambda={selection.lam:.6g} "
              f"mu_lambda={selection.mu_lambda:.6g} a={selection.a:.6g} b={selection.b:.6g}")
        mu = selection.mu_lambda
    except Exception as exc:
        print(f"lambda selection: FAIL ({exc})")
        failures += 1
        mu = float("nan")

    probes = {}
    for which in ("F", "G"):
        probe = probe_lipschitz(problem, which=which, seed=settings["seed"])
        probes[which] = probe
        verdict = "FAIL" if (probe.exceeds_L or probe.exceeds_K1) else "PASS"
        print(f"lipschitz probe {which}: {verdict} empirical_L={probe.empirical_L:.6g} "
              f"declared_L={probe.declared_L:.6g} empirical_K1={probe.empirical_K1:.6g} "
              f"declared_K1={probe.declared_K1:.6g}")
        if probe.exceeds_L or probe.exceeds_K1:
            failures += 1

    integ = check_integrability(problem, ensemble)
    verdict = "PASS" if integ.all_finite else "FAIL"
    print(f"integrability: {verdict}")
    for name, entry in integ.entries.items():
        flags = []
        if not entry.finite:
            flags.append("not finite")
        if entry.heavy_tail:
            flags.append("heavy tail")
        note = f" ({', '.join(flags)})" if flags else ""
        print(f"  {name} = {entry.value:.6g}{note}")
    if not integ.all_finite:
        failures += 1

    import numpy as np

    _ensure_out(out_dir)
    report = {
        "c": c,
        "H1": {"lhs_max": float(np.max(h1.lhs)), "passed": h1.passed,
               "worst_margin": h1.worst_margin, "pass_fraction": h1.pass_fraction,
               "notes": h1.notes},
        "H2": {"lhs_max": float(np.max(h2.lhs)), "passed": h2.passed,
               "worst_margin": h2.worst_margin, "pass_fraction": h2.pass_fraction,
               "notes": h2.notes},
        "mu_lambda": mu,
        "probes": {
            which: {"empirical_L": p.empirical_L, "declared_L": p.declared_L,
                    "empirical_K1": p.empirical_K1, "declared_K1": p.declared_K1,
                    "exceeds_L": p.exceeds_L, "exceeds_K1": p.exceeds_K1}
            for which, p in probes.items()
        },
        "integrability": {name: {"value": e.value, "finite": e.finite,
                                 "heavy_tail": e.heavy_tail}
                          for name, e in integ.entries.items()},
        "failures": failures,
    }
    with open(os.path.join(out_dir, "assumptions.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    write_manifest(out_dir, "check-assumptions", config, settings)

    print(f"check-assumptions: {'PASS' if failures == 0 else f'FAIL ({failures} failures)'}")
    return 0 if failures == 0 else 2


def _solution_columns(label, values, n_show=5):
    """Mean curve plus the first few sample paths, one block per component."""
    import numpy as np

    n_paths, _, width = values.shape
    header, columns = [], []
    for j in range(width):
        header.append(f"mean_{label}{j + 1}")
        columns.append(values[:, :, j].mean(axis=0))
        for i in range(min(n_show, n_paths)):
            header.append(f"path{i + 1}_{label}{j + 1}")
            columns.append(values[i, :, j])
    return header, columns


def cmd_solve(args):
    from .errors import (BlowupError, ConstraintViolationError,
                         NonContractionError)
    from .picard_solver import contraction_report, solve
    from .stochastic_engine import RegressionBasis

    prepared = _prepare(args)
    if prepared is None:
        return 2
    config, solver_cfg, problem, ensemble, out_dir, settings = prepared

    basis = RegressionBasis(degree=int(solver_cfg.get("degree", 2)))
    kwargs = {
        "basis": basis,
        "tol": float(solver_cfg.get("tol", 1e-6)),
        "max_iter": int(solver_cfg.get("max_iter", 25)),
        "scheme": solver_cfg.get("scheme", "explicit"),
        "force": bool(solver_cfg.get("force", False)),
    }
    if solver_cfg.get("ridge") is not None:
        kwargs["ridge"] = float(solver_cfg["ridge"])

    try:
        solution = solve(problem, ensemble, **kwargs)
    except ConstraintViolationError as exc:
        print(f"solve: FAIL ({exc})")
        return 2
    except (NonContractionError, BlowupError) as exc:
        print(f"solve: FAIL ({exc})")
        return 2

    diag = solution.diagnostics
    t = ensemble.grid.nodes
    _ensure_out(out_dir)

    header, columns = _solution_columns("Y", solution.Y)
    write_table(os.path.join(out_dir, "solution_Y.csv"), ["t"] + header, [t] + columns)
    header, columns = _solution_columns("Z", solution.Z.reshape(solution.Z.shape[0], solution.Z.shape[1], -1))
    write_table(os.path.join(out_dir, "solution_Z.csv"), ["t"] + header, [t] + columns)

    iterations = list(range(1, len(diag.deltas) + 1))
    ratios = [float("nan")] + list(diag.ratios)
    write_table(os.path.join(out_dir, "diagnostics.csv"),
                ["iteration", "distance", "ratio", "mu_lambda"],
                [iterations, diag.deltas, ratios, [diag.mu_lambda] * len(iterations)])
    write_manifest(out_dir, "solve", config, settings)

    report = contraction_report(diag)
    y0 = ", ".join(_format(v) for v in solution.initial_value)
    print(f"solve: converged={diag.converged} iterations={diag.iterations} Y(0)=[{y0}]")
    print(f"contraction: {report.verdict} tail_max={report.tail_max:.6g} "
          f"mu_lambda={diag.mu_lambda:.6g}")
    print(f"martingale residual={diag.martingale_residual:.3e} "
          f"self consistency rms={diag.self_consistency_rms:.3e}")
    ok = diag.converged and report.verdict != "FAIL"
    print(f"solve: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_stability(args):
    from .errors import FamilyInvalidError
    from .registry import problem_from_dict
    from .stability_lab import (oscillatory_A_family, run_stability,
                                xi_shift_family)

    config = load_config(args.config)
    stab_cfg = config.get("stability", {})
    if not isinstance(stab_cfg, dict):
        print("error: [schema] 'stability' section must be an object")
        return 1
    solver_cfg = config.get("solver", {}) if isinstance(config.get("solver", {}), dict) else {}
    n_paths = resolve_setting(args.paths, "PATHS", solver_cfg.get("n_paths"), DEFAULT_PATHS)
    n_steps = resolve_setting(args.steps, "STEPS", solver_cfg.get("n_steps"), DEFAULT_STEPS)
    seed = resolve_setting(args.seed, "SEED", solver_cfg.get("seed"), DEFAULT_SEED)
    out_dir = resolve_setting(args.out, "OUT", config.get("out"), "delaybsde-out", cast=str)

    diags = validate(config, n_steps=n_steps)
    for diag in diags:
        print(f"{diag['level']}: [{diag['code']}] {diag['message']}")
    if any(d["level"] == "error" for d in diags):
        return 2

    base = problem_from_dict(config["problem"])
    kind = stab_cfg.get("kind", "oscillatory_A")
    if kind == "oscillatory_A":
        n_values = [int(n) for n in stab_cfg.get("n_values", [2, 4, 8, 16])]
        family = oscillatory_A_family(base, n_values)
    elif kind == "xi_shift":
        shifts = [float(s) for s in stab_cfg.get("shifts", [1.0, 0.5, 0.25, 0.125])]
        family = xi_shift_family(base, shifts)
    else:
        print(f"error: [schema] stability.kind must be 'oscillatory_A' or 'xi_shift', got {kind!r}")
        return 1

    try:
        report = run_stability(
            family, n_paths=n_paths, n_steps=n_steps, seed=seed,
            final_threshold=float(stab_cfg.get("final_threshold", 1e-3)),
            tol=float(stab_cfg.get("tol", 1e-8)),
            max_iter=int(stab_cfg.get("max_iter", 25)),
            scheme=stab_cfg.get("scheme", "explicit"))
    except FamilyInvalidError as exc:
        print(f"stability: FAIL ({exc})")
        return 2

    print(report)
    _ensure_out(out_dir)
    rows = report.rows
    write_table(os.path.join(out_dir, "stability.csv"),
                ["label", "delta_xi", "delta_F", "delta_G", "sup_A_diff", "bv_H", "error"],
                [[float(r.label) for r in rows], [r.delta_xi for r in rows],
                 [r.delta_F for r in rows], [r.delta_G for r in rows],
                 [r.sup_A_diff for r in rows], [r.bv_H for r in rows],
                 [r.error for r in rows]])
    settings = {"seed": seed, "n_paths": n_paths, "n_steps": n_steps}
    write_manifest(out_dir, "stability", config, settings)
    print(f"stability: {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 2


def cmd_hellybray(args):
    from .path_calculus import TimeGrid
    from .stability_lab import (helly_bray_stochastic_check,
                                oscillatory_integration_family,
                                resonant_integration_family)
    from .stochastic_engine import simulate_brownian

    config = load_config(args.config)
    hb_cfg = config.get("hellybray", {})
    if not isinstance(hb_cfg, dict):
        print("error: [schema] 'hellybray' section must be an object")
        return 1
    n_paths = resolve_setting(args.paths, "PATHS", hb_cfg.get("n_paths"), DEFAULT_PATHS)
    n_steps = resolve_setting(args.steps, "STEPS", hb_cfg.get("n_steps"), 200)
    seed = resolve_setting(args.seed, "SEED", hb_cfg.get("seed"), DEFAULT_SEED)
    out_dir = resolve_setting(args.out, "OUT", config.get("out"), "delaybsde-out", cast=str)

    family = hb_cfg.get("family", "oscillatory")
    T = float(hb_cfg.get("T", 1.0))
    n_values = [int(n) for n in hb_cfg.get("n_values", [2, 4, 8, 16, 32])]
    ensemble = simulate_brownian(TimeGrid.uniform(T, n_steps), n_paths, d=1, seed=seed)

    if family == "oscillatory":
        X_list, H_list, X_limit, H_limit = oscillatory_integration_family(ensemble, n_values)
    elif family == "resonant":
        X_list, H_list, X_limit, H_limit = resonant_integration_family(ensemble, n_values)
    else:
        print(f"error: [schema] hellybray.family must be 'oscillatory' or 'resonant', got {family!r}")
        return 1

    report = helly_bray_stochastic_check(
        X_list, H_list, X_limit, H_limit, ensemble.grid,
        nu_ladder=tuple(hb_cfg.get("nu_ladder", (0.25, 0.5, 1.0, 2.0))),
        ks_threshold=float(hb_cfg.get("ks_threshold", 0.02)),
        bv_levels=tuple(hb_cfg.get("bv_levels", (0.5, 1.0, 2.0, 4.0, 8.0))),
        labels=[str(n) for n in n_values])
    print(report)

    _ensure_out(out_dir)
    labels, nus, phis, sups, kss = [], [], [], [], []
    for row in report.rows:
        for nu, phi in sorted(row.phi.items()):
            labels.append(float(row.label))
            nus.append(nu)
            phis.append(phi)
            sups.append(row.sup_distance)
            kss.append(row.ks_statistic)
    write_table(os.path.join(out_dir, "hellybray.csv"),
                ["label", "nu", "phi_distance", "sup_distance", "ks_statistic"],
                [labels, nus, phis, sups, kss])
    settings = {"seed": seed, "n_paths": n_paths, "n_steps": n_steps}
    write_manifest(out_dir, "helly-bray", config, settings)
    print(f"helly-bray: {report.verdict}")
    return 0 if report.passed else 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="delaybsde",
        description="Solver and experiment laboratory for backward stochastic "
                    "equations with delayed arguments and Stieltjes drivers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--out", help=f"output directory (env {ENV_PREFIX}OUT)")
        p.add_argument("--seed", type=int, help=f"simulation seed (env {ENV_PREFIX}SEED)")
        p.add_argument("--paths", type=int, help=f"number of Monte Carlo paths (env {ENV_PREFIX}PATHS)")
        p.add_argument("--steps", type=int, help=f"number of time steps (env {ENV_PREFIX}STEPS)")
        p.add_argument("--threads", type=int,
                       help="pin BLAS thread pools to this count (re-executes the process)")

    for name, func, text in (
            ("check-assumptions", cmd_check, "validate a config and run the well-posedness checks"),
            ("solve", cmd_solve, "run the fixed-point solver and write solution CSVs"),
            ("stability", cmd_stability, "run a perturbation-family stability experiment"),
            ("helly-bray", cmd_hellybray, "run a pathwise integral-convergence experiment")):
        p = sub.add_parser(name, help=text, description=text)
        add_common(p)
        p.set_defaults(func=func)
    return parser


def _apply_threads(argv):
    """Honor --threads by re-executing with BLAS pools pinned.

    Thread counts are read by the BLAS runtime at import, which happens before
    argument parsing, so the only reliable way to apply the flag is a re-exec
    with the environment set.  Results do not depend on the count; this is a
    performance control.
    """
    if os.environ.get(ENV_PREFIX + "THREADS_APPLIED"):
        return
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return
    env = dict(os.environ)
    for var in _THREAD_VARS:
        env[var] = str(threads)
    env[ENV_PREFIX + "THREADS_APPLIED"] = "1"
    os.execve(sys.executable, [sys.executable, "-m", "delaybsde.cli"] + list(argv), env)


def run(argv=None):
    """Parse arguments and dispatch; returns the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    _apply_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    from .errors import ConfigError, DelayBsdeError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DelayBsdeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
