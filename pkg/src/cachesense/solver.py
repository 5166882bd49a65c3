"""Consensus ADMM for sparse field recovery from cached compressive samples.

Each cache solves a basis-pursuit program over the shared sparsifying
dictionary, coupled to its neighbors only through anchor observations: per
pair, both sides must agree on the dictionary output at Q shared sensors
repeated across the W window slots. The second multiplier family of the
underlying two-sided consensus formulation is eliminated up front (it mirrors
the kept one with opposite sign under zero initialization), so one anchor
vector per directed edge per iteration is all that ever travels.

The per-cache linear system matrix B'B + 2 sum G'G + I does not depend on the
penalty, so its Cholesky factor is computed once at compile time and reused
across every iteration and penalty rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import kron_rows, synthesize
from .caching import anchor_flat_indices
from .netsim import comm_report


@dataclass(frozen=True)
class SolverConfig:
    rho0: float = 10.0
    tau: float = 2.0
    eta_ratio: float = 10.0
    eps_pri: float = 0.004  # threshold on the squared primal residual
    eps_dual: float = 1.5  # threshold on the squared dual residual
    max_iters: int = 3000
    adapt_rho: bool = True


def soft_threshold(values, kappa):
    """Elementwise shrinkage: the proximal map of kappa * l1."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    values = np.asarray(values)
    return np.sign(values) * np.maximum(np.abs(values) - kappa, 0.0)


def adapt_penalty(rho, r_norm, s_norm, tau=2.0, eta_ratio=10.0):
    """Residual-balancing penalty update (compares norms, not squares)."""
    if r_norm > eta_ratio * s_norm:
        return rho * tau
    if s_norm > eta_ratio * r_norm:
        return rho / tau
    return rho


@dataclass
class AdmmProblem:
    """Compiled per-cache operators plus cached system factorizations."""

    dimension: int
    b: list  # per cache, (M*W, D) sampled dictionary rows
    y: list  # per cache, (M*W,) measurements
    neighbors: list  # per cache, neighbor cache ids
    gamma: dict  # unordered pair (c, c') with c < c' -> (Q*W, D) anchor rows
    factors: list  # per cache, cho_factor of B'B + 2 sum G'G + I
    basis: object = None  # kept for field-space estimates when available

    @property
    def n_agents(self):
        return len(self.b)

    def gamma_pair(self, c, cp):
        return self.gamma[(c, cp) if c < cp else (cp, c)]

    def edges(self):
        """Directed neighbor edges in deterministic order."""
        return [(c, int(cp)) for c in range(self.n_agents) for cp in self.neighbors[c]]


def problem_from_matrices(b_list, y_list, neighbors, gamma, basis=None):
    """Compile a problem from explicit operators; factorizations happen here."""
    dimension = b_list[0].shape[1]
    factors = []
    for c, b in enumerate(b_list):
        a = b.T @ b + np.eye(dimension)
        for cp in neighbors[c]:
            cp = int(cp)
            g = gamma[(c, cp) if c < cp else (cp, c)]
            a += 2.0 * (g.T @ g)
        factors.append(cho_factor(a, overwrite_a=True, check_finite=False))
    return AdmmProblem(
        dimension=dimension,
        b=list(b_list),
        y=[np.asarray(y, dtype=float) for y in y_list],
        neighbors=[list(map(int, nbrs)) for nbrs in neighbors],
        gamma=dict(gamma),
        factors=factors,
        basis=basis,
    )


def compile_single(measurements, basis, cache):
    b = kron_rows(basis, measurements.flat_indices(cache))
    return problem_from_matrices(
        [b], [measurements.values[cache]], neighbors=[[]], gamma={}, basis=basis
    )


def compile_centralized(measurements, basis):
    """Pool every cache's samples into one agent."""
    flat = np.concatenate(
        [measurements.flat_indices(c) for c in range(measurements.n_caches)]
    )
    y = np.concatenate(measurements.values)
    return problem_from_matrices(
        [kron_rows(basis, flat)], [y], neighbors=[[]], gamma={}, basis=basis
    )


def compile_collaborative(layout, measurements, anchors, basis):
    if measurements.n_sensors != layout.n_sensors:
        raise ValueError("measurements and layout disagree on the sensor count")
    if basis.n_sensors != layout.n_sensors or basis.window != measurements.window:
        raise ValueError("basis shape does not match the measurement window")
    b_list = [
        kron_rows(basis, measurements.flat_indices(c)) for c in range(layout.n_caches)
    ]
    gamma = {
        (c, cp): kron_rows(
            basis, anchor_flat_indices(anchors.pair(c, cp), layout.n_sensors, basis.window)
        )
        for c, cp in layout.pairs()
    }
    return problem_from_matrices(
        b_list, list(measurements.values), list(layout.neighbors), gamma, basis=basis
    )


def system_matrix(problem, cache):
    """The rho-independent z-update system matrix, rebuilt for inspection."""
    a = problem.b[cache].T @ problem.b[cache] + np.eye(problem.dimension)
    for cp in problem.neighbors[cache]:
        g = problem.gamma_pair(cache, cp)
        a = a + 2.0 * (g.T @ g)
    return a


@dataclass
class AdmmState:
    z: list
    zt: list  # the split copy carrying the l1 term
    lam: list  # sampling-constraint multipliers
    xi: list  # splitting multipliers
    mu: dict  # alignment multipliers keyed by directed edge (c, c')
    msg_out: dict  # (c, c') -> anchor view of own z sent to c'
    msg_in: dict  # (c, c') -> anchor view of c''s z received from c'
    k: int = 0


def initial_state(problem):
    d = problem.dimension
    zeros = lambda: [np.zeros(d) for _ in range(problem.n_agents)]
    edges = problem.edges()
    edge_zeros = lambda: {e: np.zeros(problem.gamma_pair(*e).shape[0]) for e in edges}
    return AdmmState(
        z=zeros(),
        zt=zeros(),
        lam=[np.zeros(y.size) for y in problem.y],
        xi=zeros(),
        mu=edge_zeros(),
        msg_out=edge_zeros(),
        msg_in=edge_zeros(),
    )


def collaborative_step(problem, state, rho, network=None):
    """One synchronous iteration; every agent reads only last-round state.

    Order per agent: multiplier ascent (lam, mu, xi), then the z linear
    solve against the cached factor, then shrinkage. New anchor views are
    exchanged at the end of the round.
    """
    n = problem.n_agents
    z_new, zt_new, lam_new, xi_new = [None] * n, [None] * n, [None] * n, [None] * n
    mu_new = {}
    outboxes = {}
    for c in range(n):
        b, y = problem.b[c], problem.y[c]
        lam = state.lam[c] + rho * (b @ state.z[c] - y)
        xi = state.xi[c] + rho * (state.z[c] - state.zt[c])
        rhs = b.T @ (rho * y - lam) + rho * state.zt[c] - xi
        for cp in problem.neighbors[c]:
            g = problem.gamma_pair(c, cp)
            own = state.msg_out[(c, cp)]
            received = state.msg_in[(c, cp)]
            mu = state.mu[(c, cp)] + 0.5 * rho * (own - received)
            mu_new[(c, cp)] = mu
            rhs += g.T @ (rho * (own + received) - 2.0 * mu)
        z = cho_solve(problem.factors[c], rhs, check_finite=False) / rho
        zt = soft_threshold(z + xi / rho, 1.0 / rho)
        z_new[c], zt_new[c], lam_new[c], xi_new[c] = z, zt, lam, xi
        for cp in problem.neighbors[c]:
            outboxes[(c, cp)] = problem.gamma_pair(c, cp) @ z
    if network is not None:
        inbox = network.exchange_round(outboxes)
    else:
        inbox = {(cp, c): v for (c, cp), v in outboxes.items()}
    msg_in = {edge: inbox[edge] for edge in outboxes}
    return AdmmState(
        z=z_new,
        zt=zt_new,
        lam=lam_new,
        xi=xi_new,
        mu=mu_new,
        msg_out=outboxes,
        msg_in=msg_in,
        k=state.k + 1,
    )


def residual_norms(problem, prev, cur, rho):
    """Squared primal and dual residuals of the stacked program."""
    r_sq = 0.0
    for c in range(problem.n_agents):
        r_sq += float(np.sum((problem.b[c] @ cur.z[c] - problem.y[c]) ** 2))
        r_sq += float(np.sum((cur.z[c] - cur.zt[c]) ** 2))
    for edge in problem.edges():
        diff = cur.msg_out[edge] - cur.msg_in[edge]
        r_sq += 0.5 * float(np.sum(diff**2))
    accum = [prev.zt[c] - cur.zt[c] for c in range(problem.n_agents)]
    for c, cp in problem.gamma:
        g = problem.gamma[(c, cp)]
        dz = prev.z[c] - cur.z[c] + prev.z[cp] - cur.z[cp]
        pulled = g.T @ (g @ dz)
        accum[c] = accum[c] + pulled
        accum[cp] = accum[cp] + pulled
    s_sq = rho * rho * sum(float(np.sum(v**2)) for v in accum)
    return r_sq, s_sq


@dataclass
class RecoveryResult:
    z: list  # per-agent coefficient estimates
    iterations: int
    converged: bool
    r_sq: float
    s_sq: float
    rho_final: float
    trace: list = field(default_factory=list, repr=False)
    comm: dict = None
    iterates: list = None


def run_admm(
    problem,
    config=None,
    *,
    network=None,
    truth=None,
    record_iterates=False,
    stop_early=True,
):
    """Drive the iteration to the stopping rule or the iteration cap.

    truth, when given as an (N, W) matrix, adds per-agent normalized field
    errors to the trace. record_iterates keeps full per-iteration state and
    is meant for small problems only.
    """
    config = config or SolverConfig()
    state = initial_state(problem)
    rho = config.rho0
    trace = []
    iterates = [] if record_iterates else None
    converged = False
    r_sq = s_sq = float("nan")
    truth_energy = float(np.sum(truth**2)) if truth is not None else None
    for _ in range(config.max_iters):
        prev = state
        state = collaborative_step(problem, state, rho, network)
        r_sq, s_sq = residual_norms(problem, prev, state, rho)
        row = {"iteration": state.k, "r_sq": r_sq, "s_sq": s_sq, "rho": rho}
        if truth is not None and problem.basis is not None:
            row["nmse"] = [
                float(np.sum((field_estimate(problem.basis, z) - truth) ** 2))
                / truth_energy
                for z in state.z
            ]
        trace.append(row)
        if record_iterates:
            iterates.append(
                {
                    "iteration": state.k,
                    "rho": rho,
                    "z": list(state.z),
                    "zt": list(state.zt),
                    "lam": list(state.lam),
                    "xi": list(state.xi),
                    "mu": dict(state.mu),
                    "msg_out": dict(state.msg_out),
                    "msg_in": dict(state.msg_in),
                }
            )
        if stop_early and r_sq <= config.eps_pri and s_sq <= config.eps_dual:
            converged = True
            break
        if config.adapt_rho:
            rho = adapt_penalty(
                rho, np.sqrt(r_sq), np.sqrt(s_sq), config.tau, config.eta_ratio
            )
    return RecoveryResult(
        z=list(state.z),
        iterations=state.k,
        converged=converged,
        r_sq=r_sq,
        s_sq=s_sq,
        rho_final=rho,
        trace=trace,
        iterates=iterates,
    )


def solve_basis_pursuit(a, y, config=None, **kwargs):
    """Single-agent l1 recovery for an explicit measurement matrix."""
    problem = problem_from_matrices([np.asarray(a, dtype=float)], [y], [[]], {})
    return run_admm(problem, config, **kwargs)


def solve_centralized(measurements, basis, config=None, **kwargs):
    return run_admm(compile_centralized(measurements, basis), config, **kwargs)


def solve_noncollaborative(measurements, basis, config=None, **kwargs):
    """Independent per-cache recovery; returns one result per cache."""
    return [
        run_admm(compile_single(measurements, basis, c), config, **kwargs)
        for c in range(measurements.n_caches)
    ]


def solve_collaborative(
    layout, measurements, anchors, basis, config=None, *, network=None, **kwargs
):
    problem = compile_collaborative(layout, measurements, anchors, basis)
    result = run_admm(problem, config, network=network, **kwargs)
    if network is not None:
        result.comm = comm_report(network.log)
    return result


def field_estimate(basis, z):
    """Coefficients back to an (N, W) window, columns are instants."""
    return synthesize(basis, z).reshape((basis.n_sensors, basis.window), order="F")


def baseline_average(estimates):
    """Consensus by plain averaging of per-cache field estimates."""
    if not len(estimates):
        raise ValueError("need at least one estimate")
    return np.mean(np.stack(estimates), axis=0)


def baseline_partition(estimates, layout):
    """Stitch each cache's own-coverage rows into one field estimate."""
    out = np.zeros_like(np.asarray(estimates[0]))
    for c, cov in enumerate(layout.coverage):
        out[np.asarray(cov, dtype=int)] = np.asarray(estimates[c])[
            np.asarray(cov, dtype=int)
        ]
    return out
