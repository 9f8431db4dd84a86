"""Finite-time stability diagnostics for the error dynamics of a flow.

Two particles driven by the same noise differ by an error obeying the
deterministic ODE ``dxtilde = A(lam) xtilde dlam``: the diffusion term
cancels.  The natural Lyapunov weights are ``S`` (the prior precision)
and ``M(lam) = S + lam H^T R^{-1} H``; along admissible flows
``V_M = xtilde^T M xtilde`` never increases and decays exponentially at
rate ``sigma = min_eig(Q0) * min_eig(S)`` whenever the diffusion is
uniformly positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import AdmissibilityError
from .flows import FlowParameterization, affine_tables, exact_flow
from .grid import LambdaGrid
from .integrate import ELLIPSOID_STREAM, FTSS_STREAM, make_generator
from .model import GaussianPrior, HomotopyDerivatives, LinearMeasurement

# Per-chunk budget (float64 entries) for Monte Carlo trajectory blocks.
_CHUNK_BUDGET = 8_000_000


class Regime(Enum):
    """Qualitative behavior of V_M along the flow."""

    CONSTANT_V = "ConstantV"
    NON_INCREASING = "NonIncreasing"
    EXPONENTIAL_DECAY = "ExponentialDecay"


@dataclass(frozen=True)
class ErrorTrajectory:
    """Error states and Lyapunov traces at every grid node."""

    nodes: np.ndarray
    errors: np.ndarray  # (steps + 1, n)
    v_m: np.ndarray
    v_s: np.ndarray


@dataclass(frozen=True)
class FtsResult:
    verdict: bool
    alpha: float
    beta: float


@dataclass(frozen=True)
class FtcsResult:
    verdict: bool
    alpha: float
    beta: float
    gamma: float
    lambda1: Optional[float]


@dataclass(frozen=True)
class FtssResult:
    verdict: bool
    alpha: float
    beta: float
    epsilon: float
    n_mc: int
    empirical_prob: float
    threshold: float


@dataclass(frozen=True)
class StabilityReport:
    fts: FtsResult
    ftcs: FtcsResult
    ftss: FtssResult
    sigma: float
    regime: Regime

    def to_dict(self) -> dict:
        return {
            "fts": {"verdict": self.fts.verdict, "alpha": self.fts.alpha,
                    "beta": self.fts.beta},
            "ftcs": {"verdict": self.ftcs.verdict, "alpha": self.ftcs.alpha,
                     "beta": self.ftcs.beta, "gamma": self.ftcs.gamma,
                     "lambda1": self.ftcs.lambda1},
            "ftss": {"verdict": self.ftss.verdict, "alpha": self.ftss.alpha,
                     "beta": self.ftss.beta, "epsilon": self.ftss.epsilon,
                     "n_mc": self.ftss.n_mc,
                     "empirical_prob": self.ftss.empirical_prob,
                     "threshold": self.ftss.threshold},
            "sigma": self.sigma,
            "regime": self.regime.value,
        }


def _quad_trace(paths: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """x^T W x for every (particle, node); einsum keeps it deterministic."""
    return np.einsum("pki,ij,pkj->pk", paths, weight, paths, optimize=False)


def _flow_error_tables(params, grid, prior, meas):
    """Drift tables of the error ODE: the flow's A with b forced to zero."""
    a_nodes, _, _ = affine_tables(params, prior, meas, grid.nodes, want_q=False)
    a_mids, _, _ = affine_tables(params, prior, meas, grid.midpoints, want_q=False)
    n = prior.n
    return a_nodes, np.zeros((grid.steps + 1, n)), a_mids, np.zeros((grid.steps, n))


def _system_error_tables(a_fn: Callable[[float], np.ndarray], grid: LambdaGrid, n: int):
    """Drift tables for a hand-supplied linear system ``dx = A(lam) x dlam``."""
    a_nodes = np.stack([np.asarray(a_fn(float(l)), dtype=float) for l in grid.nodes])
    a_mids = np.stack([np.asarray(a_fn(float(l)), dtype=float) for l in grid.midpoints])
    return a_nodes, np.zeros((grid.steps + 1, n)), a_mids, np.zeros((grid.steps, n))


def _propagate_errors(x0_block, tables, dlam):
    a_nodes, b_nodes, a_mids, b_mids = tables
    states, paths, code, step, particle = kernels.rk4_propagate(
        x0_block, a_nodes, b_nodes, a_mids, b_mids, dlam, record=True)
    if code:
        raise AdmissibilityError(
            f"error trajectory left the trusted range at step {step}"
        )
    return paths


def _trajectory_from_paths(nodes, path, s_weight, g_weight):
    u = path @ s_weight * path
    v_s = u.sum(axis=1)
    if g_weight is None:
        v_m = v_s.copy()
    else:
        w = path @ g_weight * path
        v_m = v_s + nodes * w.sum(axis=1)
    return ErrorTrajectory(nodes=nodes.copy(), errors=path, v_m=v_m, v_s=v_s)


def error_trajectory(x1_0, x2_0, params: FlowParameterization, grid: LambdaGrid,
                     prior: GaussianPrior, meas: LinearMeasurement) -> ErrorTrajectory:
    """Propagate the difference of two flow solutions through the error ODE.

    Args:
        x1_0, x2_0: the two initial states whose difference is tracked.
        params: flow parameterization (only its drift matters here).
        grid: pseudo-time grid; the solve always uses the deterministic
            fourth-order scheme.
        prior, meas: the model.

    Returns:
        ErrorTrajectory with V_M and V_S recorded at every node.
    """
    x1_0 = np.asarray(x1_0, dtype=float)
    x2_0 = np.asarray(x2_0, dtype=float)
    if x1_0.shape != (prior.n,) or x2_0.shape != (prior.n,):
        raise ValueError(f"initial states must have shape {(prior.n,)}")
    tables = _flow_error_tables(params, grid, prior, meas)
    paths = _propagate_errors((x1_0 - x2_0)[None, :], tables, grid.dlam)
    return _trajectory_from_paths(grid.nodes, paths[0], prior.precision,
                                  meas.info_matrix)


def linear_error_trajectory(xtilde0, a_fn: Callable[[float], np.ndarray],
                            grid: LambdaGrid, s_weight) -> ErrorTrajectory:
    """Error trajectory for an arbitrary linear system ``dx = A(lam) x dlam``.

    This is the hook used to exercise the definition checkers on known
    unstable dynamics; V_M is reported with the constant weight S.
    """
    xtilde0 = np.asarray(xtilde0, dtype=float)
    s_weight = np.asarray(s_weight, dtype=float)
    n = xtilde0.size
    tables = _system_error_tables(a_fn, grid, n)
    paths = _propagate_errors(xtilde0[None, :], tables, grid.dlam)
    return _trajectory_from_paths(grid.nodes, paths[0], s_weight, None)


def lyapunov_derivative(xtilde, lam, Q, derivs: HomotopyDerivatives) -> float:
    """Exact dV_M/dlam along the flow: ``-(M xtilde)^T Q (M xtilde)``."""
    xtilde = np.asarray(xtilde, dtype=float)
    v = derivs.M @ xtilde
    return -float(v @ np.asarray(Q, dtype=float) @ v)


def _check_fts_params(alpha: float, beta: float) -> None:
    if not 0.0 < alpha < beta:
        raise ValueError(f"need 0 < alpha < beta, got alpha={alpha}, beta={beta}")


def check_fts(traj: ErrorTrajectory, alpha: float, beta: float, s_weight) -> FtsResult:
    """Finite-time stability of one sampled trajectory.

    True iff ``xtilde0^T S xtilde0 < alpha`` implies
    ``xtilde^T S xtilde < beta`` at every node (vacuously true when the
    premise fails).  Requires ``0 < alpha < beta``.
    """
    alpha, beta = float(alpha), float(beta)
    _check_fts_params(alpha, beta)
    s_weight = np.asarray(s_weight, dtype=float)
    v = np.einsum("ki,ij,kj->k", traj.errors, s_weight, traj.errors)
    verdict = bool(v[0] >= alpha or np.all(v < beta))
    return FtsResult(verdict=verdict, alpha=alpha, beta=beta)


def check_ftcs(traj: ErrorTrajectory, alpha: float, beta: float, gamma: float,
               s_weight) -> FtcsResult:
    """Contractive finite-time stability of one sampled trajectory.

    Requires ``0 < beta < alpha < gamma``.  True iff the trajectory is
    finite-time stable for (alpha, gamma) and the S-norm drops below
    beta at some interior node and stays there through lam 1.  The
    returned lambda1 is the earliest such node.
    """
    alpha, beta, gamma = float(alpha), float(beta), float(gamma)
    if not 0.0 < beta < alpha < gamma:
        raise ValueError(
            f"need 0 < beta < alpha < gamma, got beta={beta}, alpha={alpha}, gamma={gamma}"
        )
    s_weight = np.asarray(s_weight, dtype=float)
    v = np.einsum("ki,ij,kj->k", traj.errors, s_weight, traj.errors)
    if v[0] >= alpha:
        return FtcsResult(verdict=True, alpha=alpha, beta=beta, gamma=gamma,
                          lambda1=None)
    if not np.all(v < gamma):
        return FtcsResult(verdict=False, alpha=alpha, beta=beta, gamma=gamma,
                          lambda1=None)
    nodes = traj.nodes
    below = v < beta
    lambda1 = None
    # Scan interior nodes for the earliest lam after which the bound holds.
    for j in range(1, nodes.size - 1):
        if below[j:].all():
            lambda1 = float(nodes[j])
            break
    return FtcsResult(verdict=lambda1 is not None, alpha=alpha, beta=beta,
                      gamma=gamma, lambda1=lambda1)


def check_ftss(params: Optional[FlowParameterization], prior: GaussianPrior,
               meas: LinearMeasurement, grid: LambdaGrid, alpha: float,
               beta: float, epsilon: float, n_mc: int, seed: int,
               system_a_fn: Optional[Callable[[float], np.ndarray]] = None,
               ) -> FtssResult:
    """Monte Carlo check of finite-time stochastic stability.

    Draws ``n_mc`` initial errors as scaled differences of prior samples
    with ``E[xtilde0^T S xtilde0] = alpha`` exactly, propagates each
    through the error ODE and measures the fraction whose S-norm stays
    at or below beta on the whole grid.  The verdict compares that
    fraction against ``1 - epsilon`` minus a three-sigma binomial margin.

    When ``system_a_fn`` is given the error dynamics come from that
    linear system instead of the flow (params may then be None), which
    lets the checker run against known unstable dynamics.

    Requires ``alpha < beta``, ``alpha/beta <= epsilon < 1`` and
    ``n_mc >= 100``.
    """
    alpha, beta, epsilon = float(alpha), float(beta), float(epsilon)
    n_mc = int(n_mc)
    _check_fts_params(alpha, beta)
    if not alpha / beta <= epsilon < 1.0:
        raise ValueError(
            f"need alpha/beta <= epsilon < 1, got epsilon={epsilon}, "
            f"alpha/beta={alpha / beta}"
        )
    if n_mc < 100:
        raise ValueError(f"n_mc must be at least 100, got {n_mc}")
    s_weight = prior.precision
    # Difference of two prior draws has covariance 2 P_g, so the expected
    # S-norm is tr(S * 2 P_g) = 2n; rescale to hit alpha exactly.
    tau = 2.0 * float(np.trace(s_weight @ prior.P_g))
    scale = np.sqrt(alpha / tau)
    gen = make_generator(seed, FTSS_STREAM)
    z = gen.standard_normal((n_mc, prior.n)) - gen.standard_normal((n_mc, prior.n))
    x0 = scale * (z @ prior.chol.T)

    if system_a_fn is not None:
        tables = _system_error_tables(system_a_fn, grid, prior.n)
    else:
        if params is None:
            raise ValueError("params is required unless system_a_fn is given")
        tables = _flow_error_tables(params, grid, prior, meas)
    chunk = max(1, _CHUNK_BUDGET // ((grid.steps + 1) * prior.n))
    ok_count = 0
    for start in range(0, n_mc, chunk):
        block = x0[start:start + chunk]
        paths = _propagate_errors(block, tables, grid.dlam)
        v = _quad_trace(paths, s_weight)
        ok_count += int(np.sum(np.all(v <= beta, axis=1)))
    empirical = ok_count / n_mc
    margin = 3.0 * np.sqrt(epsilon * (1.0 - epsilon) / n_mc)
    threshold = (1.0 - epsilon) - margin
    return FtssResult(verdict=bool(empirical >= threshold), alpha=alpha,
                      beta=beta, epsilon=epsilon, n_mc=n_mc,
                      empirical_prob=float(empirical), threshold=float(threshold))


def contraction_rate(params: FlowParameterization, prior: GaussianPrior,
                     meas: LinearMeasurement, grid: LambdaGrid) -> float:
    """Guaranteed decay rate ``sigma = min_eig(Q0) * min_eig(S)``.

    Q0 is inferred as the smallest diffusion eigenvalue over the grid
    nodes, clipped at zero; sigma is zero whenever the diffusion loses
    rank somewhere.
    """
    qs = params.q_stack(grid.nodes, prior, meas)
    w = np.linalg.eigvalsh(0.5 * (qs + np.swapaxes(qs, 1, 2)))
    q_floor = max(float(w.min()), 0.0)
    s_min = float(np.linalg.eigvalsh(prior.precision).min())
    return q_floor * s_min


def classify_regime(params: FlowParameterization, prior: GaussianPrior,
                    meas: LinearMeasurement, grid: LambdaGrid) -> Regime:
    """Qualitative V_M behavior implied by the diffusion on the grid.

    Zero diffusion everywhere preserves V_M exactly; semidefinite
    diffusion makes it non-increasing; uniformly positive definite
    diffusion forces exponential decay.  An indefinite diffusion raises
    AdmissibilityError.
    """
    qs = params.q_stack(grid.nodes, prior, meas)
    scale = float(np.abs(qs).max())
    if scale == 0.0:
        return Regime.CONSTANT_V
    w = np.linalg.eigvalsh(0.5 * (qs + np.swapaxes(qs, 1, 2)))
    min_eig = float(w.min())
    if min_eig < -1e-10 * scale:
        raise AdmissibilityError(
            f"diffusion is indefinite on the grid (min eigenvalue {min_eig:.3e})"
        )
    if min_eig <= 1e-12 * scale:
        return Regime.NON_INCREASING
    return Regime.EXPONENTIAL_DECAY


def ellipsoid_invariance_check(prior: GaussianPrior, meas: LinearMeasurement,
                               grid: LambdaGrid, n_particles: int,
                               seed: int) -> float:
    """Max relative drift of V_M along the zero-diffusion flow.

    Places ``n_particles`` error vectors on the ellipsoid
    ``xtilde^T S xtilde = 1``, propagates them with the deterministic
    flow and returns ``max |V_M - 1|`` over all particles and nodes.
    The exact flow keeps V_M constant, so small values certify the
    integrator as much as the flow.
    """
    n_particles = int(n_particles)
    if n_particles < 0:
        raise ValueError(f"n_particles must be >= 0, got {n_particles}")
    if n_particles == 0:
        return 0.0
    gen = make_generator(seed, ELLIPSOID_STREAM)
    z = gen.standard_normal((n_particles, prior.n))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("degenerate direction draw")
    y = z / norms
    chol_s = np.linalg.cholesky(prior.precision)
    x0 = solve_triangular(chol_s.T, y.T, lower=False).T

    tables = _flow_error_tables(exact_flow(), grid, prior, meas)
    paths = _propagate_errors(x0, tables, grid.dlam)
    u = _quad_trace(paths, prior.precision)
    w = _quad_trace(paths, meas.info_matrix)
    v_m = u + grid.nodes[None, :] * w
    return float(np.abs(v_m - 1.0).max())


def _refine(grid: LambdaGrid) -> LambdaGrid:
    nodes = np.sort(np.concatenate([grid.nodes, grid.midpoints]))
    return LambdaGrid(nodes, grid.scheme)


def build_stability_report(params: FlowParameterization, prior: GaussianPrior,
                           meas: LinearMeasurement, grid: LambdaGrid,
                           alpha: float = 1.0, beta: float = 2.0,
                           gamma: float = 4.0, beta_ss: float = 4.0,
                           epsilon: float = 0.25, n_mc: int = 2000,
                           n_directions: int = 8, seed: int = 0) -> StabilityReport:
    """Run all stability checks for a flow and summarize the verdicts.

    Deterministic verdicts (finite-time and contractive) are evaluated on
    ``n_directions`` boundary trajectories with ``xtilde0^T S xtilde0``
    just under alpha.  Every verdict is recomputed on a once-refined grid
    and must agree, guarding against sampling artifacts; disagreement
    raises RuntimeError.
    """
    sigma = contraction_rate(params, prior, meas, grid)
    regime = classify_regime(params, prior, meas, grid)
    if sigma > 0.0:
        beta_c = alpha * 0.5 * (np.exp(-sigma) + 1.0)
    else:
        beta_c = 0.75 * alpha
    s_weight = prior.precision

    def deterministic_verdicts(g: LambdaGrid):
        gen = make_generator(seed, ELLIPSOID_STREAM)
        z = gen.standard_normal((n_directions, prior.n))
        y = z / np.linalg.norm(z, axis=1, keepdims=True)
        chol_s = np.linalg.cholesky(s_weight)
        x0 = solve_triangular(chol_s.T, y.T, lower=False).T * np.sqrt(0.999 * alpha)
        tables = _flow_error_tables(params, g, prior, meas)
        paths = _propagate_errors(x0, tables, g.dlam)
        fts_ok = True
        ftcs_ok = True
        lambda1 = None
        for p in range(paths.shape[0]):
            traj = _trajectory_from_paths(g.nodes, paths[p], s_weight,
                                          meas.info_matrix)
            fts_ok &= check_fts(traj, alpha, beta, s_weight).verdict
            res = check_ftcs(traj, alpha=alpha, beta=beta_c, gamma=gamma,
                             s_weight=s_weight)
            ftcs_ok &= res.verdict
            if res.lambda1 is not None:
                lambda1 = res.lambda1 if lambda1 is None else max(lambda1, res.lambda1)
        return bool(fts_ok), bool(ftcs_ok), lambda1

    fts_ok, ftcs_ok, lambda1 = deterministic_verdicts(grid)
    fts_ok2, ftcs_ok2, _ = deterministic_verdicts(_refine(grid))
    ftss = check_ftss(params, prior, meas, grid, alpha, beta_ss, epsilon,
                      n_mc, seed)
    ftss2 = check_ftss(params, prior, meas, _refine(grid), alpha, beta_ss,
                       epsilon, n_mc, seed)
    if (fts_ok, ftcs_ok, ftss.verdict) != (fts_ok2, ftcs_ok2, ftss2.verdict):
        raise RuntimeError(
            "stability verdicts changed under grid refinement; use a finer grid"
        )
    return StabilityReport(
        fts=FtsResult(verdict=fts_ok, alpha=alpha, beta=beta),
        ftcs=FtcsResult(verdict=ftcs_ok, alpha=alpha, beta=beta_c,
                        gamma=gamma, lambda1=lambda1),
        ftss=ftss,
        sigma=float(sigma),
        regime=regime,
    )
