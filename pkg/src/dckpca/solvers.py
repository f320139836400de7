"""The two dual solvers: L-BFGS on the square-loss dual and DCA for
Moreau-envelope objectives.

The L-BFGS line search exploits the ray structure of the dual cost: with
GH and GD precomputed, (H + a D)' G (H + a D) is a quadratic in ``a`` built
from s x s blocks, so every Wolfe trial costs O(s^3) instead of O(n^2 s).
One n^2 s product per accepted step (GD) dominates an iteration.
"""

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .dual_core import (DualVariable, SINGULARITY_FLOOR_SCALE, _gram_entries,
                        grad_pi, optimal_dual_cost, sym_eig_small)
from .errors import KpcaError, SingularMatrixError
from .objectives import HUBER_KINDS, ObjectiveSpec, prox_psi_star, psi_star_value

LBFGS_DEFAULT_MAX_ITERS = 500
DCA_DEFAULT_MAX_ITERS = 1000
REPORT_VERSION = "dckpca/1"
_GH_REFRESH_EVERY = 64


@dataclass
class SolveConfig:
    """Shared solver knobs. ``benchmark_eigs`` (exact top-s eigenvalues of G)
    switches on residual-based stopping at eta < tol; production runs use the
    gradient/stall criteria instead. ``max_iters`` of None picks the solver
    default (500 for L-BFGS, 1000 for DCA)."""

    tol: float = 1e-6
    max_iters: int | None = None
    lbfgs_memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_linesearch_steps: int = 25
    initial_step: float = 1.0
    seed: int = 0
    benchmark_eigs: object = None

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise KpcaError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.lbfgs_memory < 1:
            raise KpcaError("lbfgs_memory must be >= 1")
        if not self.tol > 0:
            raise KpcaError("tol must be positive")
        if not self.initial_step > 0:
            raise KpcaError("initial_step must be positive")


@dataclass
class SolveReport:
    iterations: int
    cost_trace: list
    eta_trace: list | None
    wall_seconds: float
    termination: str

    def to_dict(self) -> dict:
        clean = lambda xs: [x if math.isfinite(x) else None for x in xs]
        return {
            "spec_version": REPORT_VERSION,
            "iterations": self.iterations,
            "cost_trace": clean(self.cost_trace),
            "eta_trace": None if self.eta_trace is None else clean(self.eta_trace),
            "wall_seconds": self.wall_seconds,
            "termination": self.termination,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _wolfe_scalar(phi, dphi, phi0, dphi0, c1, c2, alpha0, max_trials):
    """Strong-Wolfe step search (bracketing + zoom, Nocedal & Wright 3.5/3.6).

    Returns the accepted step, or None when no conforming step was found
    within ``max_trials`` trial points. Raises ValueError on ascent directions.
    """
    if not dphi0 < 0:
        raise ValueError(f"not a descent direction: directional derivative {dphi0:.3e}")
    trials = [0]

    def zoom(lo, hi, phi_lo, dphi_lo, phi_hi):
        while trials[0] < max_trials:
            # quadratic interpolation with bisection safeguard
            denom = phi_hi - phi_lo - dphi_lo * (hi - lo)
            a = lo - 0.5 * dphi_lo * (hi - lo) ** 2 / denom if denom != 0 else 0.5 * (lo + hi)
            width = abs(hi - lo)
            if not np.isfinite(a) or abs(a - lo) < 0.1 * width or abs(a - hi) < 0.1 * width:
                a = 0.5 * (lo + hi)
            phi_a = phi(a)
            trials[0] += 1
            if phi_a > phi0 + c1 * a * dphi0 or phi_a >= phi_lo:
                hi, phi_hi = a, phi_a
            else:
                dphi_a = dphi(a)
                if abs(dphi_a) <= -c2 * dphi0:
                    return a
                if dphi_a * (hi - lo) >= 0:
                    hi, phi_hi = lo, phi_lo
                lo, phi_lo, dphi_lo = a, phi_a, dphi_a
        return None

    prev_a, prev_phi, prev_dphi = 0.0, phi0, dphi0
    a = alpha0
    first = True
    while trials[0] < max_trials:
        phi_a = phi(a)
        trials[0] += 1
        if phi_a > phi0 + c1 * a * dphi0 or (not first and phi_a >= prev_phi):
            return zoom(prev_a, a, prev_phi, prev_dphi, phi_a)
        dphi_a = dphi(a)
        if abs(dphi_a) <= -c2 * dphi0:
            return a
        if dphi_a >= 0:
            return zoom(a, prev_a, phi_a, dphi_a, prev_phi)
        prev_a, prev_phi, prev_dphi = a, phi_a, dphi_a
        a *= 2.0
        first = False
    return None


def line_search_strong_wolfe(fg, x, direction, c1=1e-4, c2=0.9,
                             max_steps=25, initial_step=1.0):
    """Step length along ``direction`` satisfying the strong Wolfe conditions.

    ``fg(x)`` returns (cost, gradient). Returns None when no conforming step
    exists within the trial budget (a stalled signal); raises ValueError for
    non-descent directions.
    """
    x = np.asarray(x, dtype=float)
    direction = np.asarray(direction, dtype=float)
    cache = {}

    def at(a):
        if a not in cache:
            f, g = fg(x + a * direction)
            cache[a] = (float(f), float(np.vdot(g, direction)))
        return cache[a]

    f0, d0 = at(0.0)
    return _wolfe_scalar(lambda a: at(a)[0], lambda a: at(a)[1], f0, d0,
                         c1, c2, initial_step, max_steps)


def _sym(M):
    return 0.5 * (M + M.T)


def _floor_check(dec):
    floor = SINGULARITY_FLOOR_SCALE * max(float(dec.lam[0]), 1.0)
    if float(dec.lam[-1]) <= floor:
        raise SingularMatrixError(
            f"H'GH is near-singular: eigenvalue {dec.lam[-1]:.6e} <= floor {floor:.6e}"
        )


def _pi_from(dec):
    return float(np.sum(np.sqrt(np.maximum(dec.lam, 0.0))))


def _retry_once(run, seed, h0):
    """Reseed-once policy for the measure-zero singular-initialization event."""
    try:
        return run(seed)
    except SingularMatrixError:
        if h0 is not None:
            raise
        return run(seed + 1)


def lbfgs_solve(G, s: int, config: SolveConfig | None = None, h0=None):
    """Minimize the square-loss dual 0.5 Tr(H'H) - Tr sqrt(H'GH) with two-loop
    L-BFGS directions and a strong Wolfe line search.

    H0 has i.i.d. standard normal entries drawn from the config seed (``h0``
    overrides, e.g. for warm starts). Stops at eta < tol in benchmark mode,
    otherwise on gradient RMS <= tol or relative cost stall over 3 iterations.
    """
    cfg = config or SolveConfig()
    G = _gram_entries(G)
    if s < 1:
        raise KpcaError("s must be >= 1")
    return _retry_once(lambda seed: _lbfgs_once(G, s, cfg, seed, h0), cfg.seed, h0)


def _lbfgs_once(G, s, cfg, seed, h0):
    n = G.shape[0]
    t0 = time.perf_counter()
    H = np.array(h0, dtype=float) if h0 is not None else \
        np.random.default_rng(seed).standard_normal((n, s))
    max_iters = cfg.max_iters if cfg.max_iters is not None else LBFGS_DEFAULT_MAX_ITERS
    bench = cfg.benchmark_eigs is not None
    if bench:
        eigs = np.asarray(cfg.benchmark_eigs, dtype=float)
        if eigs.shape != (s,):
            raise KpcaError(f"benchmark_eigs must hold exactly s={s} values")
        d_opt = optimal_dual_cost(eigs)
        if d_opt == 0.0:
            raise KpcaError("degenerate Gram: optimal dual cost is zero")

    GH = G @ H
    gpi, dec = grad_pi(G, H, gh=GH)
    cost = 0.5 * float(np.vdot(H, H)) - _pi_from(dec)
    grad = H - gpi

    costs = [cost]
    etas = [abs(cost - d_opt) / abs(d_opt)] if bench else None
    memory = []
    iterations = 0
    termination = None

    while True:
        if bench and etas[-1] < cfg.tol:
            termination = "tolerance"
            break
        if not bench:
            if float(np.linalg.norm(grad)) / np.sqrt(n * s) <= cfg.tol:
                termination = "gradient"
                break
            if len(costs) >= 4:
                recent = costs[-4:]
                steps = [abs(recent[i + 1] - recent[i]) for i in range(3)]
                if max(steps) <= cfg.tol * max(1.0, abs(recent[-1])):
                    termination = "tolerance"
                    break
        if iterations >= max_iters:
            termination = "max_iters"
            break

        D = -_two_loop(grad, memory)
        dphi0 = float(np.vdot(grad, D))
        if dphi0 >= 0:
            # quasi-Newton model went bad; restart from steepest descent
            memory.clear()
            D = -grad
            dphi0 = -float(np.vdot(grad, grad))
            if dphi0 >= 0:
                termination = "gradient"
                break

        # ray restriction: all Wolfe trials run on s x s blocks
        GD = G @ D
        A1 = _sym(H.T @ GH)
        A2 = H.T @ GD
        A4 = _sym(D.T @ GD)
        hh = float(np.vdot(H, H))
        hd = float(np.vdot(H, D))
        dd = float(np.vdot(D, D))

        def small(a):
            return _sym(A1 + a * (A2 + A2.T) + (a * a) * A4)

        def phi(a):
            lam = np.linalg.eigvalsh(small(a))
            return 0.5 * (hh + 2 * a * hd + a * a * dd) - float(
                np.sum(np.sqrt(np.maximum(lam, 0.0))))

        def dphi(a):
            dec_a = sym_eig_small(small(a))
            _floor_check(dec_a)
            W = dec_a.apply(lambda lam: 1.0 / np.sqrt(lam))
            return (hd + a * dd) - float(np.sum((A2.T + a * A4) * W.T))

        alpha = _wolfe_scalar(phi, dphi, cost, dphi0, cfg.c1, cfg.c2,
                              cfg.initial_step, cfg.max_linesearch_steps)
        if alpha is None:
            termination = "stalled"
            break

        H_new = H + alpha * D
        GH_new = GH + alpha * GD
        iterations += 1
        if iterations % _GH_REFRESH_EVERY == 0:
            GH_new = G @ H_new
        gpi, dec = grad_pi(G, H_new, gh=GH_new)
        cost_new = 0.5 * float(np.vdot(H_new, H_new)) - _pi_from(dec)
        grad_new = H_new - gpi

        s_vec = alpha * D
        y_vec = grad_new - grad
        sy = float(np.vdot(s_vec, y_vec))
        if sy > 1e-10 * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)):
            memory.append((s_vec, y_vec, 1.0 / sy))
            if len(memory) > cfg.lbfgs_memory:
                memory.pop(0)

        H, GH, cost, grad = H_new, GH_new, cost_new, grad_new
        costs.append(cost)
        if bench:
            etas.append(abs(cost - d_opt) / abs(d_opt))

    report = SolveReport(iterations, costs, etas, time.perf_counter() - t0, termination)
    return DualVariable(H), report


def _two_loop(grad, memory):
    """Two-loop recursion for the L-BFGS direction H_k * grad."""
    q = grad.copy()
    alphas = []
    for s_i, y_i, rho_i in reversed(memory):
        a = rho_i * float(np.vdot(s_i, q))
        alphas.append(a)
        q -= a * y_i
    if memory:
        s_i, y_i, _ = memory[-1]
        q *= float(np.vdot(s_i, y_i)) / float(np.vdot(y_i, y_i))
    for (s_i, y_i, rho_i), a in zip(memory, reversed(alphas)):
        b = rho_i * float(np.vdot(y_i, q))
        q += (a - b) * s_i
    return q


def dca_solve(G, s: int, objective: ObjectiveSpec, config: SolveConfig | None = None,
              h0=None):
    """Difference-of-convex iteration for Moreau-envelope objectives:
    Y = grad pi(H_t); H_{t+1} = prox_{Psi*}(Y).

    Stops when the absolute cost variation drops below machine epsilon scaled
    by max(1, |cost|), with at most 1000 iterations; benchmark mode switches
    to eta < tol like the L-BFGS solver. The dual cost never increases.
    """
    cfg = config or SolveConfig()
    G = _gram_entries(G)
    if s < 1:
        raise KpcaError("s must be >= 1")
    if not objective.resolved:
        raise KpcaError("resolve the kappa_max fraction before solving")
    return _retry_once(lambda seed: _dca_once(G, s, objective, cfg, seed, h0),
                       cfg.seed, h0)


def _dca_once(G, s, objective, cfg, seed, h0):
    n = G.shape[0]
    t0 = time.perf_counter()
    H = np.array(h0, dtype=float) if h0 is not None else \
        np.random.default_rng(seed).standard_normal((n, s))
    max_iters = cfg.max_iters if cfg.max_iters is not None else DCA_DEFAULT_MAX_ITERS
    eps_mach = float(np.finfo(np.float64).eps)
    bench = cfg.benchmark_eigs is not None
    if bench:
        eigs = np.asarray(cfg.benchmark_eigs, dtype=float)
        if eigs.shape != (s,):
            raise KpcaError(f"benchmark_eigs must hold exactly s={s} values")
        d_opt = optimal_dual_cost(eigs)
        if d_opt == 0.0:
            raise KpcaError("degenerate Gram: optimal dual cost is zero")

    costs = []
    etas = [] if bench else None
    termination = None
    while True:
        GH = G @ H
        dec = sym_eig_small(_sym(H.T @ GH))
        square_cost = 0.5 * float(np.vdot(H, H)) - _pi_from(dec)
        costs.append(square_cost + psi_star_value(objective, H))
        if bench:
            etas.append(abs(square_cost - d_opt) / abs(d_opt))
            if etas[-1] < cfg.tol:
                termination = "tolerance"
                break
        elif len(costs) >= 2 and math.isfinite(costs[-1]) and math.isfinite(costs[-2]) \
                and abs(costs[-1] - costs[-2]) < eps_mach * max(1.0, abs(costs[-1])):
            termination = "tolerance"
            break
        if len(costs) - 1 >= max_iters:
            termination = "max_iters"
            break

        try:
            _floor_check(dec)
        except SingularMatrixError as exc:
            if objective.kind in HUBER_KINDS:
                raise SingularMatrixError(
                    f"{exc}; kappa={objective.kappa:g} is likely too small "
                    "(the prox collapses iterates toward rank deficiency)") from exc
            raise
        Y = GH @ dec.apply(lambda lam: 1.0 / np.sqrt(lam))
        H = prox_psi_star(objective, Y)

    report = SolveReport(len(costs) - 1, costs, etas, time.perf_counter() - t0,
                         termination)
    return DualVariable(H), report
