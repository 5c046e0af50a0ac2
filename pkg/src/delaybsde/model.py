"""Problem data, weighted norms and well-posedness arithmetic.

A problem couples terminal data xi, a driver F(t, y, z, y_segment, z_segment),
a Stieltjes driver G(t, y, y_segment) integrated against an increasing process
A, delay measures rho / rho_tilde on [-delta, 0], and declared regularity
constants.  The checkers below decide whether the smallness conditions that
make the fixed-point construction contract actually hold for a realized A,
and compute the contraction budget (threshold for c, lambda, mu_lambda).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import ConstraintViolationError, NumericOverflowError
from .path_calculus import TimeGrid
from .stochastic_engine import IncreasingProcessSpec, PathEnsemble, omega_delta

__all__ = [
    "AtomMeasure",
    "ProblemSpec",
    "GenContext",
    "NormReport",
    "ConditionReport",
    "LambdaSelection",
    "segment_integral",
    "weighted_norm",
    "equivalent_norm",
    "c_threshold",
    "effective_c",
    "check_H1",
    "check_H2",
    "select_lambda",
    "probe_lipschitz",
    "check_integrability",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AtomMeasure:
    """Finite atomic probability measure on the delay window [-delta, 0]."""

    thetas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        thetas = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if thetas.shape != weights.shape or thetas.ndim != 1:
            raise ValueError("thetas and weights must be equally sized vectors")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
        if np.any(thetas > 0):
            raise ValueError("atoms must sit in [-delta, 0]")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, theta: float) -> "AtomMeasure":
        return cls(np.array([theta]), np.array([1.0]))

    @classmethod
    def uniform(cls, delta: float, n_atoms: int) -> "AtomMeasure":
        ths = np.linspace(-delta, 0.0, n_atoms)
        return cls(ths, np.full(n_atoms, 1.0 / n_atoms))

    def project(self, delta: float, n_theta_steps: int) -> np.ndarray:
        """Weights re-attached to the nearest node of a theta grid with
        n_theta_steps equal steps spanning [-delta, 0]."""
        if np.any(self.thetas < -delta - 1e-12):
            raise ValueError("atom outside the delay window")
        out = np.zeros(n_theta_steps + 1)
        idx = np.clip(np.round((self.thetas + delta) / delta * n_theta_steps),
                      0, n_theta_steps).astype(int)
        np.add.at(out, idx, self.weights)
        return out


@dataclass(frozen=True)
class GenContext:
    """Per-call evaluation context handed to generators.

    ``w`` is the Brownian state at the current time (the randomness hook);
    ``theta`` the segment grid; ``rho`` / ``rho_tilde`` the delay measures
    projected onto it.
    """

    t: float
    w: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    rho_tilde: np.ndarray


def segment_integral(segment: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_j weights[j] * segment[:, j, ...] over the theta axis."""
    return np.einsum("nj...,j->n...", segment, weights, optimize=False)


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem description.

    xi maps an ensemble to terminal values (n_paths, m).  F and G are
    vectorized generators F(t, y, z, y_seg, z_seg, ctx) -> (n, m) and
    G(t, y, y_seg, ctx) -> (n, m); either may be None (zero).  K and K_tilde
    are the delay-kernel bounds: scalars, per-node arrays, or callables
    (grid, ensemble) -> per-path-per-node arrays.
    """

    T: float
    delta: float
    xi: object
    A_spec: IncreasingProcessSpec
    beta: float
    L: float
    L_tilde: float
    m: int = 1
    d: int = 1
    F: object = None
    G: object = None
    K: object = 0.0
    K_tilde: object = 0.0
    rho: AtomMeasure | None = None
    rho_tilde: AtomMeasure | None = None
    c: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.T <= 0 or not (0 < self.delta <= self.T):
            raise ValueError("need T > 0 and 0 < delta <= T")
        if self.beta <= 0 or self.L <= 0 or self.L_tilde <= 0:
            raise ValueError("constants beta, L, L_tilde must be positive")
        if self.m < 1 or self.d < 1:
            raise ValueError("need m >= 1 and d >= 1")
        if self.c is not None and self.c <= 0:
            raise ValueError("c must be positive when given")
        for meas in (self.rho, self.rho_tilde):
            if meas is not None and np.any(meas.thetas < -self.delta - 1e-12):
                raise ValueError("delay measure atom outside [-delta, 0]")

    @property
    def alpha(self) -> float:
        return 8.0 * self.L ** 2 + 0.5

    def rho_or_dirac(self) -> AtomMeasure:
        return self.rho if self.rho is not None else AtomMeasure.dirac(-self.delta)

    def rho_tilde_or_dirac(self) -> AtomMeasure:
        return self.rho_tilde if self.rho_tilde is not None else AtomMeasure.dirac(-self.delta)

    def context(self, grid: TimeGrid, t: float, w: np.ndarray) -> GenContext:
        k = grid.delta_index_offset
        step = grid.T / grid.n_steps
        theta = (np.arange(k + 1) - k) * step
        return GenContext(t=t, w=w, theta=theta,
                          rho=self.rho_or_dirac().project(self.delta, k),
                          rho_tilde=self.rho_tilde_or_dirac().project(self.delta, k))


# ----------------------------------------------------------------- norms

@dataclass(frozen=True)
class NormReport:
    """Terms of a weighted norm of (Y, Z); ``total`` is the p-th power."""

    sup_term: float
    dA_term: float
    dt_term: float
    p: float
    beta: float
    alpha: float = 0.0
    a: float = 1.0
    b: float = 1.0

    @property
    def total(self) -> float:
        return self.sup_term + self.a * self.dA_term + self.b * self.dt_term

    @property
    def norm(self) -> float:
        return self.total ** (1.0 / self.p)


def _as_paths(values, n_nodes, trailing):
    """Normalize to (n_paths, n_nodes, *trailing); None becomes zeros."""
    if values is None:
        return None
    values = np.asarray(values, dtype=float)
    want = 2 + len(trailing)
    while values.ndim < want:
        values = values[..., None]
    if values.shape[1] != n_nodes:
        raise ValueError(f"node axis mismatch: {values.shape} vs {n_nodes} nodes")
    return values


def _sq_size(values):
    """Squared Euclidean size over all trailing axes -> (n_paths, n_nodes)."""
    flat = values.reshape(values.shape[0], values.shape[1], -1)
    return np.einsum("nik,nik->ni", flat, flat, optimize=False)


def _weights(A, grid, alpha, beta):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with np.errstate(over="ignore"):
        w = np.exp(alpha * grid.nodes[None, :] + beta * A)
    if not np.all(np.isfinite(w)):
        raise NumericOverflowError(
            "exp(alpha t + beta A) overflowed; beta * A(T) is too large")
    return A, w


def weighted_norm(Y, Z, A, grid: TimeGrid, p: float = 2.0,
                  beta: float = 0.0) -> NormReport:
    """Monte Carlo estimate of the p-th power of the solution norm.

    sup term   E[ sup_t e^{beta A}|Y|^p ]
    dA term    E[ int_0^T e^{beta A}|Y|^2 dA ]^{p/2}
    dt term    E[ int_0^T e^{beta A}|Z|^2 dt ]^{p/2}
    Left-point sums; the terminal node never enters the integrals.
    """
    if p < 2:
        raise ValueError("p >= 2 required")
    A, w = _weights(A, grid, 0.0, beta)
    sup_term = dA_term = dt_term = 0.0
    if Y is not None:
        Y = _as_paths(Y, grid.nodes.size, ("m",))
        ysq = _sq_size(Y)
        sup_term = float(np.mean(np.max(w * ysq ** (p / 2.0), axis=1)))
        dA_term = float(np.mean(np.sum(w[:, :-1] * ysq[:, :-1] * np.diff(A, axis=1), axis=1))) ** (p / 2.0)
    if Z is not None:
        Z = _as_paths(Z, grid.nodes.size, ("m", "d"))
        zsq = _sq_size(Z)
        dt_term = float(np.mean(np.sum(w[:, :-1] * zsq[:, :-1] * grid.steps()[None, :], axis=1))) ** (p / 2.0)
    report = NormReport(sup_term=sup_term, dA_term=dA_term, dt_term=dt_term,
                        p=p, beta=beta)
    if not np.isfinite(report.total):
        raise NumericOverflowError("weighted norm is not finite")
    return report


def equivalent_norm(dY, dZ, A, grid: TimeGrid, alpha: float, beta: float,
                    a: float, b: float) -> NormReport:
    """Squared contraction norm with weights e^{alpha t + beta A(t)}:

    E sup e^{alpha t + beta A}|dY|^2 + a E int e^..|dY|^2 dA
                                     + b E int e^..|dZ|^2 dt.
    """
    A, w = _weights(A, grid, alpha, beta)
    sup_term = dA_term = dt_term = 0.0
    if dY is not None:
        dY = _as_paths(dY, grid.nodes.size, ("m",))
        ysq = _sq_size(dY)
        sup_term = float(np.mean(np.max(w * ysq, axis=1)))
        dA_term = float(np.mean(np.sum(w[:, :-1] * ysq[:, :-1] * np.diff(A, axis=1), axis=1)))
    if dZ is not None:
        dZ = _as_paths(dZ, grid.nodes.size, ("m", "d"))
        zsq = _sq_size(dZ)
        dt_term = float(np.mean(np.sum(w[:, :-1] * zsq[:, :-1] * grid.steps()[None, :], axis=1)))
    report = NormReport(sup_term=sup_term, dA_term=dA_term, dt_term=dt_term,
                        p=2.0, beta=beta, alpha=alpha, a=a, b=b)
    if not np.isfinite(report.total):
        raise NumericOverflowError("equivalent norm is not finite")
    return report


# ----------------------------------------------------------------- constants

def c_threshold(beta: float, L_tilde: float) -> float:
    """Upper bound for the smallness constant: min{(b^2-8Lt^2)/(4b^2), 1/584}."""
    if beta <= 2.0 * np.sqrt(2.0) * L_tilde:
        raise ConstraintViolationError(
            f"beta={beta} must exceed 2*sqrt(2)*L_tilde={2 * np.sqrt(2) * L_tilde:.6g}")
    return min((beta ** 2 - 8.0 * L_tilde ** 2) / (4.0 * beta ** 2), 1.0 / 584.0)


def effective_c(problem: ProblemSpec) -> float:
    """The problem's c, defaulting to half the admissible threshold."""
    if problem.c is not None:
        return problem.c
    return 0.5 * c_threshold(problem.beta, problem.L_tilde)


def _K_sup(K, grid: TimeGrid, ensemble: PathEnsemble | None):
    """Sup over time of the kernel bound; per path when K is random."""
    if callable(K):
        vals = np.asarray(K(grid, ensemble), dtype=float)
        return vals.max(axis=-1)
    vals = np.asarray(K, dtype=float)
    if vals.ndim == 0:
        return float(vals)
    return float(vals.max())


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of a smallness check: per-path LHS against the budget c."""

    name: str
    lhs: np.ndarray
    c: float
    passed: bool
    pass_fraction: float
    worst_margin: float
    notes: str = ""

    def __str__(self):
        state = "PASS" if self.passed else "FAIL"
        return (f"({self.name}) {state}  worst margin {self.worst_margin:.3e}  "
                f"pass fraction {self.pass_fraction:.3f}  {self.notes}")


def _condition_report(name, lhs, c, notes=""):
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    margins = c - lhs
    passed = bool(np.all(margins >= 0.0)) and not notes
    return ConditionReport(name=name, lhs=lhs, c=c, passed=passed,
                           pass_fraction=float(np.mean(margins >= 0.0)),
                           worst_margin=float(margins.min()), notes=notes)


def check_H1(problem: ProblemSpec, ensemble: PathEnsemble, c: float) -> ConditionReport:
    """Drift-delay smallness: K1 max{1,T} e^{(8L^2+1/2)delta + beta omega_delta} / (4L^2) <= c."""
    if c <= 0:
        raise ValueError("c must be positive")
    notes = ""
    try:
        if c >= c_threshold(problem.beta, problem.L_tilde):
            notes = "c exceeds the admissible threshold"
    except ConstraintViolationError as exc:
        raise ConstraintViolationError(f"(H1) unusable: {exc}") from None
    if ensemble.A is None:
        raise ValueError("ensemble carries no realized A")
    K1 = _K_sup(problem.K, ensemble.grid, ensemble)
    w_delta = omega_delta(ensemble, problem.delta)
    lhs = K1 * max(1.0, problem.T) * np.exp(problem.alpha * problem.delta
                                            + problem.beta * w_delta) \
        / (4.0 * problem.L ** 2)
    return _condition_report("H1", lhs, c, notes)


def check_H2(problem: ProblemSpec, ensemble: PathEnsemble, c: float) -> ConditionReport:
    """Stieltjes-delay smallness: 4 Kt1 A(T) e^{(8L^2+1/2)delta + beta omega_delta} / beta <= c."""
    if c <= 0:
        raise ValueError("c must be positive")
    notes = ""
    try:
        if c >= c_threshold(problem.beta, problem.L_tilde):
            notes = "c exceeds the admissible threshold"
    except ConstraintViolationError as exc:
        raise ConstraintViolationError(f"(H2) unusable: {exc}") from None
    if ensemble.A is None:
        raise ValueError("ensemble carries no realized A")
    Kt1 = _K_sup(problem.K_tilde, ensemble.grid, ensemble)
    w_delta = omega_delta(ensemble, problem.delta)
    lhs = 4.0 * Kt1 * ensemble.A[:, -1] * np.exp(problem.alpha * problem.delta
                                                 + problem.beta * w_delta) \
        / problem.beta
    return _condition_report("H2", lhs, c, notes)


@dataclass(frozen=True)
class LambdaSelection:
    lam: float
    mu_lambda: float
    a: float
    b: float
    c: float
    beta: float
    L_tilde: float
    bdg_constant: float = 144.0


def mu_lambda(lam: float, c: float, beta: float, L_tilde: float,
              bdg_constant: float = 144.0) -> float:
    """max{c(2+lam), 8 Lt^2 (2+lam)/(lam beta^2), 2c(2+lam)/(lam - 2 bdg)}."""
    lam = np.asarray(lam, dtype=float)
    out = np.maximum.reduce([
        c * (2.0 + lam),
        8.0 * L_tilde ** 2 * (2.0 + lam) / (lam * beta ** 2),
        2.0 * c * (2.0 + lam) / (lam - 2.0 * bdg_constant),
    ])
    return float(out) if out.ndim == 0 else out


def select_lambda(c: float, beta: float, L_tilde: float,
                  bdg_constant: float = 144.0, n_scan: int = 200) -> LambdaSelection:
    """Pick lambda on a log scan minimizing the contraction factor mu_lambda.

    Requires 0 < c < c_threshold(beta, L_tilde); the returned factor is
    guaranteed below one there.  b = lam/2 - bdg_constant keeps the printed
    value with its default 144; pass 72 to see the alternative bookkeeping.
    """
    threshold = c_threshold(beta, L_tilde)
    if not (0 < c < threshold):
        raise ConstraintViolationError(
            f"c={c} leaves no contraction margin (needs 0 < c < {threshold:.6g})")
    lo = 2.0 * bdg_constant * (1.0 + 1e-6)
    hi = 10.0 * max(2.0 * bdg_constant, 1.0 / (2.0 * c) - 2.0)
    lams = np.geomspace(lo, hi, n_scan)
    mus = mu_lambda(lams, c, beta, L_tilde, bdg_constant)
    j = int(np.argmin(mus))
    lam, mu = float(lams[j]), float(mus[j])
    if mu >= 1.0:
        raise ConstraintViolationError(
            f"no scanned lambda contracts (best mu={mu:.4f}); "
            "beta or c are too close to their limits")
    return LambdaSelection(lam=lam, mu_lambda=mu, a=lam * beta / 2.0,
                           b=lam / 2.0 - bdg_constant, c=c, beta=beta,
                           L_tilde=L_tilde, bdg_constant=bdg_constant)


# ----------------------------------------------------------------- probes

@dataclass(frozen=True)
class LipschitzProbe:
    which: str
    empirical_L: float
    empirical_K1: float
    declared_L: float
    declared_K1: float
    exceeds_L: bool
    exceeds_K1: bool
    n_samples: int


def probe_lipschitz(problem: ProblemSpec, which: str = "F",
                    n_samples: int = 2048, seed: int = 0,
                    box: float = 3.0) -> LipschitzProbe:
    """Empirical Lipschitz/kernel constants from low-discrepancy sampling.

    Draws paired arguments differing only in (y, z) for the pointwise
    constant, and only in the delayed segments for the kernel constant
    K1 = sup |dGen|^2 / int (|dy_seg|^2 + |dz_seg|^2) drho.  Flags when an
    estimate exceeds the declared constant.
    """
    if which not in ("F", "G"):
        raise ValueError("which must be 'F' or 'G'")
    gen = problem.F if which == "F" else problem.G
    m, d = problem.m, problem.d
    k = 8
    theta = np.linspace(-problem.delta, 0.0, k + 1)
    rho_w = problem.rho_or_dirac().project(problem.delta, k)
    rho_t_w = problem.rho_tilde_or_dirac().project(problem.delta, k)
    weights = rho_w if which == "F" else rho_t_w

    declared_L = problem.L if which == "F" else problem.L_tilde
    declared_K_raw = problem.K if which == "F" else problem.K_tilde
    declared_K = float("inf") if callable(declared_K_raw) \
        else float(np.max(np.asarray(declared_K_raw, dtype=float)))
    if gen is None:
        return LipschitzProbe(which, 0.0, 0.0, declared_L, declared_K,
                              False, False, 0)

    # sample dims: t | w | y, y2 | z, z2 | segment endpoint/slope pairs
    dim = 1 + d + 2 * m + 2 * m * d + 4 * m + 4 * m * d
    sampler = qmc.Sobol(dim, scramble=True, seed=seed)
    u = sampler.random_base2(int(np.ceil(np.log2(max(n_samples, 4)))))
    n = u.shape[0]
    u = box * (2.0 * u - 1.0)
    pos = [0]

    def take(count):
        block = u[:, pos[0]:pos[0] + count]
        pos[0] += count
        return block

    t_nodes = (take(1)[:, 0] / box + 1.0) / 2.0 * problem.T
    w = take(d)
    y, y2 = take(m), take(m)
    z = take(m * d).reshape(n, m, d)
    z2 = take(m * d).reshape(n, m, d)

    def seg(endpoints, slopes):
        # linear-in-theta profile: value endpoints at theta=0
        return endpoints[:, None, :] + slopes[:, None, :] * theta[None, :, None]

    ys_a = seg(take(m), take(m))
    ys_b = seg(take(m), take(m))
    zs_a = seg(take(m * d), take(m * d)).reshape(n, k + 1, m, d)
    zs_b = seg(take(m * d), take(m * d)).reshape(n, k + 1, m, d)

    emp_L = 0.0
    emp_K = 0.0
    for i in range(n):
        ctx = GenContext(t=float(t_nodes[i]), w=w[i:i + 1], theta=theta,
                         rho=rho_w, rho_tilde=rho_t_w)
        if which == "F":
            base = gen(ctx.t, y[i:i + 1], z[i:i + 1], ys_a[i:i + 1], zs_a[i:i + 1], ctx)
            moved = gen(ctx.t, y2[i:i + 1], z2[i:i + 1], ys_a[i:i + 1], zs_a[i:i + 1], ctx)
            gap = np.linalg.norm(y[i] - y2[i]) + np.linalg.norm(z[i] - z2[i])
            if gap > 1e-9:
                emp_L = max(emp_L, float(np.linalg.norm(moved - base)) / gap)
            seg_moved = gen(ctx.t, y[i:i + 1], z[i:i + 1], ys_b[i:i + 1], zs_b[i:i + 1], ctx)
            den = float(np.sum(weights * (np.sum((ys_a[i] - ys_b[i]) ** 2, axis=-1)
                                          + np.sum((zs_a[i] - zs_b[i]) ** 2, axis=(-2, -1)))))
            if den > 1e-9:
                emp_K = max(emp_K, float(np.sum((seg_moved - base) ** 2)) / den)
        else:
            base = gen(ctx.t, y[i:i + 1], ys_a[i:i + 1], ctx)
            moved = gen(ctx.t, y2[i:i + 1], ys_a[i:i + 1], ctx)
            gap = np.linalg.norm(y[i] - y2[i])
            if gap > 1e-9:
                emp_L = max(emp_L, float(np.linalg.norm(moved - base)) / gap)
            seg_moved = gen(ctx.t, y[i:i + 1], ys_b[i:i + 1], ctx)
            den = float(np.sum(weights * np.sum((ys_a[i] - ys_b[i]) ** 2, axis=-1)))
            if den > 1e-9:
                emp_K = max(emp_K, float(np.sum((seg_moved - base) ** 2)) / den)
    probe = LipschitzProbe(
        which=which, empirical_L=emp_L, empirical_K1=emp_K,
        declared_L=declared_L, declared_K1=declared_K,
        exceeds_L=emp_L > declared_L + 1e-9,
        exceeds_K1=emp_K > declared_K + 1e-9,
        n_samples=n)
    if probe.exceeds_L or probe.exceeds_K1:
        log.warning("declared constants for %s are too small: %s", which, probe)
    return probe


# ----------------------------------------------------------------- moments

@dataclass(frozen=True)
class MomentEstimate:
    value: float
    finite: bool
    heavy_tail: bool
    n: int


@dataclass(frozen=True)
class IntegrabilityReport:
    entries: dict
    p: float

    @property
    def all_finite(self) -> bool:
        return all(e.finite for e in self.entries.values())


def _moment(samples, top_fraction=0.01, tail_share=0.5) -> MomentEstimate:
    samples = np.asarray(samples, dtype=float)
    finite = bool(np.all(np.isfinite(samples)))
    value = float(samples.mean()) if finite else float("inf")
    heavy = False
    if finite and samples.size >= 100 and value > 0:
        srt = np.sort(samples)[::-1]
        top = srt[: max(1, int(np.ceil(top_fraction * samples.size)))]
        heavy = bool(top.sum() > tail_share * samples.sum())
    return MomentEstimate(value=value, finite=finite, heavy_tail=heavy,
                          n=int(samples.size))


def check_integrability(problem: ProblemSpec, ensemble: PathEnsemble,
                        p: float = 2.0,
                        r_values=(1.0, 2.0, 4.0, 8.0)) -> IntegrabilityReport:
    """Monte Carlo moment estimates behind the standing assumptions.

    Reports, per sample-mean entry, whether all samples were finite and
    whether the top 1% of samples carries more than half the estimate
    (a heavy-tail warning: the plain average is then untrustworthy).
    """
    grid = ensemble.grid
    if ensemble.A is None:
        raise ValueError("ensemble carries no realized A")
    n, nodes = ensemble.n_paths, grid.nodes
    xi = np.asarray(problem.xi(ensemble), dtype=float).reshape(n, -1)
    xi_sq = np.einsum("nm,nm->n", xi, xi, optimize=False)
    with np.errstate(over="ignore"):
        eA = np.exp(problem.beta * ensemble.A)
        eAT = eA[:, -1]

    def gen_at_zero(gen, is_F):
        vals = np.zeros((n, nodes.size))
        if gen is None:
            return vals
        ksteps = grid.delta_index_offset
        zero_y = np.zeros((n, problem.m))
        zero_z = np.zeros((n, problem.m, problem.d))
        zero_yseg = np.zeros((n, ksteps + 1, problem.m))
        zero_zseg = np.zeros((n, ksteps + 1, problem.m, problem.d))
        for i, t in enumerate(nodes):
            ctx = problem.context(grid, float(t), ensemble.W[:, i, :])
            out = gen(t, zero_y, zero_z, zero_yseg, zero_zseg, ctx) if is_F \
                else gen(t, zero_y, zero_yseg, ctx)
            out = np.asarray(out, dtype=float).reshape(n, -1)
            if not np.all(np.isfinite(out)):
                raise NumericOverflowError(f"generator at zero is not finite at t={t}")
            vals[:, i] = np.einsum("nm,nm->n", out, out, optimize=False)
        return vals

    F0_sq = gen_at_zero(problem.F, True)
    G0_sq = gen_at_zero(problem.G, False)
    dA = np.diff(ensemble.A, axis=1)
    dt = grid.steps()[None, :]
    int_F = np.sum(eA[:, :-1] * F0_sq[:, :-1] * dt, axis=1)
    int_G_dA = np.sum(eA[:, :-1] * G0_sq[:, :-1] * dA, axis=1)
    int_G_dt = np.sum(eA[:, :-1] * G0_sq[:, :-1] * dt, axis=1)

    entries = {
        "A0": _moment(eAT * (1.0 + xi_sq)),
        "A1_F": _moment(int_F),
        "A1_G": _moment(int_G_dA),
        "A0p": _moment(eAT ** p * xi_sq ** p),
        "A1p_F": _moment(int_F ** p),
        "A1p_G": _moment(int_G_dt ** p),
        "A1sup_G": _moment(np.max(G0_sq, axis=1) ** p),
    }
    for r in r_values:
        with np.errstate(over="ignore"):
            entries[f"A0r_r{r:g}"] = _moment(np.exp(r * ensemble.A[:, -1]))
    for name, est in entries.items():
        if est.heavy_tail:
            log.warning("moment %s dominated by its top samples "
                        "(estimate %.3e unreliable)", name, est.value)
    return IntegrabilityReport(entries=entries, p=p)
