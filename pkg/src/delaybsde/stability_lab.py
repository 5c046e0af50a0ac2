"""Perturbation experiments and convergence of coupled Stieltjes integrals.

Two instruments live here.  The stability runner solves a family of nearby
problems on one shared Brownian ensemble and relates the solution error to
the size of the input perturbation (terminal condition, drivers, integrator
process).  The integral-convergence checker follows sequences of coupled
integrands and integrators, tracking a truncated-expectation distance ladder,
a terminal two-sample statistic, and the variation-tightness precondition
that separates honest convergence from resonant counterexamples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import ks_2samp, qmc, spearmanr

from .errors import FamilyInvalidError
from .model import (ProblemSpec, check_H1, check_H2, effective_c,
                    equivalent_norm, weighted_norm)
from .path_calculus import TimeGrid, cumulative_stieltjes
from .picard_solver import solve
from .stochastic_engine import (IncreasingProcessSpec, PathEnsemble,
                                realize_increasing_process, simulate_brownian)

__all__ = [
    "PerturbationFamily",
    "oscillatory_A_family",
    "xi_shift_family",
    "generator_gap",
    "StabilityRow",
    "StabilityReport",
    "run_stability",
    "bv_tail_curve",
    "HellyBrayRow",
    "HellyBrayReport",
    "helly_bray_stochastic_check",
    "oscillatory_integration_family",
    "resonant_integration_family",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PerturbationFamily:
    """A reference problem and perturbed members, coarsest perturbation first."""

    base: ProblemSpec
    members: list
    labels: list | None = None
    p: float = 2.0

    def __post_init__(self):
        if not self.members:
            raise ValueError("family needs at least one member")
        for i, member in enumerate(self.members):
            for attr in ("T", "delta", "m", "d"):
                if getattr(member, attr) != getattr(self.base, attr):
                    raise ValueError(
                        f"member {i} differs from the base in {attr}")
        if self.labels is not None and len(self.labels) != len(self.members):
            raise ValueError("one label per member")

    def label_of(self, i: int) -> str:
        return str(self.labels[i]) if self.labels is not None else str(i)


def oscillatory_A_family(base: ProblemSpec, n_values) -> PerturbationFamily:
    """Members whose integrator gains a vanishing oscillation of order 1/n."""
    members = [replace(base, A_spec=IncreasingProcessSpec(
        "oscillatory", {"base": base.A_spec, "n": int(n)}))
        for n in n_values]
    return PerturbationFamily(base=base, members=members,
                              labels=[int(n) for n in n_values])


def xi_shift_family(base: ProblemSpec, shifts) -> PerturbationFamily:
    """Members with the terminal value shifted by a constant per member."""
    members = []
    for s in shifts:
        s = float(s)

        def xi(ensemble, _s=s, _base=base.xi):
            return np.asarray(_base(ensemble), dtype=float) + _s
        members.append(replace(base, xi=xi))
    return PerturbationFamily(base=base, members=members,
                              labels=[float(s) for s in shifts])


def generator_gap(gen_a, gen_b, problem: ProblemSpec, which: str = "F",
                  n_samples: int = 512, seed: int = 0, box: float = 3.0) -> float:
    """sup |gen_a - gen_b| over a low-discrepancy cloud of arguments."""
    if which not in ("F", "G"):
        raise ValueError("which must be 'F' or 'G'")
    if gen_a is None and gen_b is None:
        return 0.0
    m, d = problem.m, problem.d
    k = 8
    theta = np.linspace(-problem.delta, 0.0, k + 1)
    rho = problem.rho_or_dirac().project(problem.delta, k)
    rho_t = problem.rho_tilde_or_dirac().project(problem.delta, k)

    dim = d + m + m * d + 2 * m + 2 * m * d
    sampler = qmc.Sobol(dim, scramble=True, seed=seed)
    u = box * (2.0 * sampler.random_base2(
        int(np.ceil(np.log2(max(n_samples, 4))))) - 1.0)
    n = u.shape[0]
    pos = [0]

    def take(count):
        block = u[:, pos[0]:pos[0] + count]
        pos[0] += count
        return block

    w = take(d)
    y = take(m)
    z = take(m * d).reshape(n, m, d)
    y_seg = (take(m)[:, None, :] + take(m)[:, None, :] * theta[None, :, None])
    z_seg = (take(m * d)[:, None, :] + take(m * d)[:, None, :]
             * theta[None, :, None]).reshape(n, k + 1, m, d)

    from .model import GenContext

    def call(gen, t, ctx):
        if gen is None:
            return np.zeros((n, m))
        if which == "F":
            out = gen(t, y, z, y_seg, z_seg, ctx)
        else:
            out = gen(t, y, y_seg, ctx)
        return np.asarray(out, dtype=float).reshape(n, m)

    gap = 0.0
    for t in np.linspace(0.0, problem.T, 9):
        ctx = GenContext(t=float(t), w=w, theta=theta, rho=rho, rho_tilde=rho_t)
        diff = call(gen_a, float(t), ctx) - call(gen_b, float(t), ctx)
        gap = max(gap, float(np.max(np.sqrt(np.sum(diff ** 2, axis=1)))))
    return gap


@dataclass(frozen=True)
class StabilityRow:
    label: str
    delta_xi: float
    delta_F: float
    delta_G: float
    sup_A_diff: float
    bv_H: float
    error: float
    norm_total: float

    @property
    def delta_total(self) -> float:
        return self.delta_xi + self.delta_F + self.delta_G + self.sup_A_diff


@dataclass(frozen=True)
class StabilityReport:
    rows: list
    spearman_rho: float
    trend_ok: bool
    final_ok: bool
    final_threshold: float

    @property
    def passed(self) -> bool:
        return self.trend_ok and self.final_ok

    def __str__(self):
        lines = [f"{'label':>8} {'d_xi':>10} {'d_F':>10} {'d_G':>10} "
                 f"{'sup|dA|':>10} {'BV(H)':>10} {'error':>12}"]
        for r in self.rows:
            lines.append(f"{r.label:>8} {r.delta_xi:10.3e} {r.delta_F:10.3e} "
                         f"{r.delta_G:10.3e} {r.sup_A_diff:10.3e} "
                         f"{r.bv_H:10.3e} {r.error:12.5e}")
        state = "PASS" if self.passed else "FAIL"
        lines.append(f"trend rho={self.spearman_rho:.3f} "
                     f"final<= {self.final_threshold:g}: {state}")
        return "\n".join(lines)


def run_stability(family: PerturbationFamily, *, n_paths: int = 2000,
                  n_steps: int = 50, seed: int = 0,
                  final_threshold: float = 1e-3, tol: float = 1e-8,
                  max_iter: int = 25, scheme: str = "explicit",
                  basis=None) -> StabilityReport:
    """Solve the base and every member on one Brownian ensemble and relate
    solution error to perturbation size.

    Every member must satisfy the smallness conditions with the family's
    single budget c (taken from the base problem); a violating member stops
    the run with FamilyInvalidError naming it.  The error per member is
    E sup_t |Y_n - Y|^2 + E int |Z_n - Z|^2 dt on coupled paths.
    """
    base = family.base
    grid = TimeGrid.uniform(base.T, n_steps, delta=base.delta)
    driving = simulate_brownian(grid, n_paths, d=base.d, seed=seed)
    c_family = effective_c(base)

    ens_base = realize_increasing_process(base.A_spec, driving)
    for name, checker in (("H1", check_H1), ("H2", check_H2)):
        report = checker(base, ens_base, c_family)
        if not report.passed:
            raise FamilyInvalidError(f"base problem fails ({name}): {report}")
    sol_base = solve(base, ens_base, c=c_family, tol=tol, max_iter=max_iter,
                     scheme=scheme, basis=basis)
    xi_base = np.asarray(base.xi(ens_base), dtype=float).reshape(n_paths, -1)

    rows = []
    for i, member in enumerate(family.members):
        label = family.label_of(i)
        ens_n = realize_increasing_process(member.A_spec, driving)
        for name, checker in (("H1", check_H1), ("H2", check_H2)):
            report = checker(member, ens_n, c_family)
            if not report.passed:
                raise FamilyInvalidError(
                    f"member {i} (label {label}) fails ({name}): {report}")
        sol_n = solve(member, ens_n, c=c_family, tol=tol, max_iter=max_iter,
                      scheme=scheme, basis=basis)

        xi_n = np.asarray(member.xi(ens_n), dtype=float).reshape(n_paths, -1)
        gap = xi_n - xi_base
        delta_xi = float(np.mean(np.sum(gap ** 2, axis=1) ** family.p))
        delta_F = generator_gap(member.F, base.F, base, which="F", seed=seed)
        delta_G = generator_gap(member.G, base.G, base, which="G", seed=seed)
        H = ens_n.A - ens_base.A
        sup_A = float(np.mean(np.max(np.abs(H), axis=1)))
        bv_H = float(np.mean(np.sum(np.abs(np.diff(H, axis=1)), axis=1)))
        err = equivalent_norm(sol_n.Y - sol_base.Y, sol_n.Z - sol_base.Z,
                              ens_base.A, grid, alpha=0.0, beta=0.0,
                              a=0.0, b=1.0)
        sanity = weighted_norm(sol_n.Y, sol_n.Z, ens_n.A, grid,
                               p=family.p, beta=member.beta)
        rows.append(StabilityRow(
            label=label, delta_xi=delta_xi, delta_F=delta_F, delta_G=delta_G,
            sup_A_diff=sup_A, bv_H=bv_H, error=err.total,
            norm_total=sanity.total))

    deltas = np.array([r.delta_total for r in rows])
    errors = np.array([r.error for r in rows])
    degenerate = bool(np.all(deltas < 1e-14) or np.all(errors < 1e-14))
    if degenerate or len(rows) < 3:
        rho = float("nan")
        trend_ok = degenerate or bool(np.all(np.diff(errors) <= 0))
    else:
        res = spearmanr(deltas, errors)
        rho = float(getattr(res, "statistic", getattr(res, "correlation", np.nan)))
        trend_ok = bool(np.isnan(rho)) or rho >= 0.6
    final_ok = bool(errors[-1] <= final_threshold)
    report = StabilityReport(rows=rows, spearman_rho=rho, trend_ok=trend_ok,
                             final_ok=final_ok, final_threshold=final_threshold)
    if not report.passed:
        log.warning("stability verdict FAIL:\n%s", report)
    return report


# ------------------------------------------------- integral convergence

def bv_tail_curve(H_list, levels=(0.5, 1.0, 2.0, 4.0, 8.0)) -> dict:
    """For each level nu: worst-case P(variation of H_n > nu) over members."""
    out = {}
    for nu in levels:
        worst = 0.0
        for H in H_list:
            H = np.atleast_2d(np.asarray(H, dtype=float))
            variation = np.sum(np.abs(np.diff(H, axis=1)), axis=1)
            worst = max(worst, float(np.mean(variation > nu)))
        out[float(nu)] = worst
    return out


@dataclass(frozen=True)
class HellyBrayRow:
    label: str
    sup_distance: float
    phi: dict
    ks_statistic: float


@dataclass(frozen=True)
class HellyBrayReport:
    rows: list
    bv_tail: dict
    tight: bool
    decreasing: bool
    ks_final: float
    ks_threshold: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def __str__(self):
        lines = [f"{'label':>8} {'E sup|I_n - I|':>16} {'KS(T)':>8}"]
        for r in self.rows:
            lines.append(f"{r.label:>8} {r.sup_distance:16.6e} "
                         f"{r.ks_statistic:8.4f}")
        lines.append(f"variation tight: {self.tight}  verdict: {self.verdict}")
        return "\n".join(lines)


def helly_bray_stochastic_check(X_list, H_list, X_limit, H_limit,
                                grid: TimeGrid, *,
                                nu_ladder=(0.25, 0.5, 1.0, 2.0),
                                ks_threshold: float = 0.02,
                                bv_levels=(0.5, 1.0, 2.0, 4.0, 8.0),
                                bv_tail_threshold: float = 0.01,
                                labels=None) -> HellyBrayReport:
    """Convergence of coupled integrals int X_n dH_n toward int X dH.

    All processes are path stacks on one grid (deterministic inputs may be
    single rows).  Reports, per member, the coupled distance
    E sup_t |I_n(t) - I(t)|, its truncations E[min(sup..., nu)] over the
    ladder, and the two-sample terminal statistic.  The verdict is
    INCONCLUSIVE when no variation level bounds every member's tail
    probability: without that tightness the distances may diverge even
    though integrands and integrators settle down pointwise.
    """
    if not (len(X_list) == len(H_list) >= 1):
        raise ValueError("need equally many integrands and integrators")
    n_nodes = grid.nodes.size

    def rows_of(arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        if arr.shape[-1] != n_nodes:
            raise ValueError("process does not live on the given grid")
        return arr

    X_limit = rows_of(X_limit)
    H_limit = rows_of(H_limit)
    I_lim = cumulative_stieltjes(X_limit, H_limit)
    rows = []
    for j, (X, H) in enumerate(zip(X_list, H_list)):
        X, H = rows_of(X), rows_of(H)
        I_n = cumulative_stieltjes(X, H)
        gap = np.abs(I_n - I_lim)
        per_path_sup = np.max(gap, axis=1)
        phi = {float(nu): float(np.mean(np.minimum(per_path_sup, nu)))
               for nu in nu_ladder}
        ks = float(ks_2samp(I_n[:, -1], I_lim[:, -1], method="asymp").statistic) \
            if I_n.shape[0] > 1 else float(abs(I_n[0, -1] - I_lim[0, -1]))
        label = str(labels[j]) if labels is not None else str(j)
        rows.append(HellyBrayRow(label=label,
                                 sup_distance=float(np.mean(per_path_sup)),
                                 phi=phi, ks_statistic=ks))

    tail = bv_tail_curve(H_list, levels=bv_levels)
    tight = any(v <= bv_tail_threshold for v in tail.values())
    sups = np.array([r.sup_distance for r in rows])
    decreasing = bool(np.all(np.diff(sups) < 0.0)) if len(rows) >= 2 else True
    ks_final = rows[-1].ks_statistic
    if not tight:
        verdict = "INCONCLUSIVE"
    elif decreasing and ks_final <= ks_threshold:
        verdict = "PASS"
    else:
        verdict = "FAIL"
    return HellyBrayReport(rows=rows, bv_tail=tail, tight=tight,
                           decreasing=decreasing, ks_final=ks_final,
                           ks_threshold=ks_threshold, verdict=verdict)


def oscillatory_integration_family(ensemble: PathEnsemble, n_values,
                                   component: int = 0):
    """Coupled family X_n = W + p_n, H_n = t + p_n with the common vanishing
    oscillation p_n(t) = T sin(2 pi n t / T) / (4 pi n); limits (W, t)."""
    grid = ensemble.grid
    t = grid.nodes
    T = grid.T
    W = ensemble.W[:, :, component]
    X_list, H_list = [], []
    for n in n_values:
        p = T * np.sin(2 * np.pi * int(n) * t / T) / (4 * np.pi * int(n))
        X_list.append(W + p[None, :])
        H_list.append(np.broadcast_to(t + p, W.shape))
    return X_list, H_list, W, np.broadcast_to(t, W.shape)


def resonant_integration_family(ensemble: PathEnsemble, n_values,
                                component: int = 0):
    """Counterexample family: H_n = sin(2 pi n^2 t)/(4 pi n) vanishes
    uniformly but with variation of order n, and X_n = W + cos(2 pi n^2 t)/
    sqrt(n) rides the resonance; the coupled integrals do not converge."""
    grid = ensemble.grid
    t = grid.nodes
    W = ensemble.W[:, :, component]
    X_list, H_list = [], []
    for n in n_values:
        n = int(n)
        H = np.sin(2 * np.pi * n * n * t) / (4 * np.pi * n)
        X_list.append(W + (np.cos(2 * np.pi * n * n * t) / np.sqrt(n))[None, :])
        H_list.append(np.broadcast_to(H, W.shape))
    return X_list, H_list, W, np.broadcast_to(np.zeros_like(t), W.shape)
