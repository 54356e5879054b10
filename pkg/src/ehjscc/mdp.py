"""Average-cost MDP over (source state, battery level) and its solvers.

State ``s = (x, b)`` with ``x`` in {0, 1} and ``b`` in ``{0..B}``; the action
``u`` in ``{0..b}`` is the energy spent in the slot. The per-slot cost depends
on ``u`` only, so it is stored as a vector indexed by ``u``.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu, spsolve

FULL_Q_LIMIT = 500


class NonConvergenceError(RuntimeError):
    def __init__(self, iterations, span):
        super().__init__(f"RVIA did not converge in {iterations} iterations (span {span:.3e})")
        self.iterations = iterations
        self.span = span


class ReducibleChainWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MdpModel:
    capacity: int
    source_matrix: np.ndarray   # (2, 2) source-state transition matrix
    harvest: np.ndarray         # (2, E+1) harvest pmf per source state
    cost: np.ndarray            # (B+1,) cost of spending u quanta
    k_of_u: np.ndarray | None = None   # (B+1,) compression level used for each u
    d_fl: float | None = None

    def __post_init__(self):
        B = self.capacity
        if B < 0:
            raise ValueError("battery capacity must be >= 0")
        P = np.asarray(self.source_matrix, dtype=float)
        H = np.asarray(self.harvest, dtype=float)
        c = np.asarray(self.cost, dtype=float)
        if P.shape != (2, 2) or np.any(P < 0) or not np.allclose(P.sum(1), 1, atol=1e-10):
            raise ValueError("source_matrix must be a 2x2 stochastic matrix")
        if H.ndim != 2 or H.shape[0] != 2 or np.any(H < 0) or not np.allclose(H.sum(1), 1, atol=1e-10):
            raise ValueError("harvest must hold one pmf per source state")
        if c.shape != (B + 1,):
            raise ValueError(f"cost must have length B+1={B + 1}")
        object.__setattr__(self, "source_matrix", P)
        object.__setattr__(self, "harvest", H)
        object.__setattr__(self, "cost", c)

    @property
    def n_states(self) -> int:
        return 2 * (self.capacity + 1)

    def states(self):
        return [(x, b) for x in (0, 1) for b in range(self.capacity + 1)]

    def index(self, x: int, b: int) -> int:
        return x * (self.capacity + 1) + b

    def actions(self, s) -> range:
        return range(s[1] + 1)

    def cost_of(self, s, u: int) -> float:
        if not 0 <= u <= s[1]:
            raise ValueError(f"action {u} not admissible in state {s}")
        return float(self.cost[u])

    def with_cost(self, cost, k_of_u=None) -> "MdpModel":
        return replace(self, cost=np.asarray(cost, dtype=float), k_of_u=k_of_u)

    def transition(self, s, u: int) -> np.ndarray:
        """Successor distribution as a ``(2, B+1)`` array."""
        x, b = s
        if not 0 <= u <= b:
            raise ValueError(f"action {u} not admissible in state {s}")
        B = self.capacity
        nxt = np.minimum(b - u + np.arange(self.harvest.shape[1]), B)
        battery = np.zeros(B + 1)
        np.add.at(battery, nxt, self.harvest[x])
        return np.outer(self.source_matrix[x], battery)

    @property
    def _next_index(self) -> np.ndarray:
        # next battery level for (remaining energy r, harvest e)
        B = self.capacity
        E = self.harvest.shape[1] - 1
        return np.minimum(np.arange(B + 1)[:, None] + np.arange(E + 1)[None, :], B)

    def policy_matrix(self, policy, *, dense: bool = True):
        """Transition matrix of the chain induced by a stationary policy.

        ``dense=False`` returns a CSR matrix, which is what large batteries need.
        """
        policy = np.asarray(policy)
        B = self.capacity
        if policy.shape != (2, B + 1):
            raise ValueError(f"policy must have shape (2, {B + 1})")
        b = np.arange(B + 1)
        if np.any(policy < 0) or np.any(policy > b[None, :]):
            x, bb = map(int, np.argwhere((policy < 0) | (policy > b[None, :]))[0])
            raise ValueError(f"policy action {policy[x, bb]} not admissible in state {(x, bb)}")
        nxt = self._next_index[b[None, :] - policy]             # (2, B+1, E+1)
        E1 = self.harvest.shape[1]
        rows, cols, vals = [], [], []
        for x2 in (0, 1):
            p = self.source_matrix[:, x2][:, None, None] * self.harvest[:, None, :]
            rows.append(np.broadcast_to(np.arange(self.n_states).reshape(2, B + 1, 1), (2, B + 1, E1)))
            cols.append(x2 * (B + 1) + nxt)
            vals.append(np.broadcast_to(p, (2, B + 1, E1)))
        rows, cols, vals = (np.concatenate([a.ravel() for a in v]) for v in (rows, cols, vals))
        keep = vals > 0
        n = self.n_states
        P = sparse.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
        P.sum_duplicates()
        return P.toarray() if dense else P


def expected_after_harvest(V: np.ndarray, harvest: np.ndarray) -> np.ndarray:
    """``W[x, r] = sum_e harvest[x, e] * V[x, min(r + e, B)]``."""
    E1 = harvest.shape[1]
    pad = np.concatenate([V, np.repeat(V[:, -1:], E1 - 1, axis=1)], axis=1)
    return np.einsum("xre,xe->xr", sliding_window_view(pad, E1, axis=1), harvest)


def backup(model: MdpModel, J: np.ndarray, actions=None) -> np.ndarray:
    """One Bellman backup: ``Q[x, b, j]`` for action ``actions[j]`` (all by default).

    Inadmissible actions get +inf.
    """
    B = model.capacity
    u = np.arange(B + 1) if actions is None else np.asarray(actions)
    V = model.source_matrix @ J                    # V[x, n] = E[J(x', n) | x]
    W = expected_after_harvest(V, model.harvest)
    rem = np.arange(B + 1)[:, None] - u[None, :]
    Q = model.cost[u][None, None, :] + W[:, np.clip(rem, 0, None)]
    Q[:, rem < 0] = np.inf
    return Q


def undominated_actions(cost: np.ndarray) -> np.ndarray:
    """Actions whose cost is strictly below that of every cheaper action.

    Value iterates started from zero stay non-increasing in the battery
    level, so spending more for no lower cost never helps; dropping those
    actions leaves the minimum and the smallest-action argmin unchanged.
    """
    prefix = np.minimum.accumulate(cost)
    keep = np.ones(len(cost), dtype=bool)
    keep[1:] = cost[1:] < prefix[:-1]
    return np.nonzero(keep)[0]


def greedy_policy(Q: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Argmin over actions; near-ties (float noise) go to the smallest action."""
    best = Q.min(axis=2, keepdims=True)
    tol = rtol * np.maximum(1.0, np.abs(best))
    return np.argmax(Q <= best + tol, axis=2)


@dataclass
class MdpSolution:
    policy: np.ndarray          # (2, B+1) action per state
    gain: float
    values: np.ndarray          # (2, B+1) relative values
    iterations: int
    final_span: float
    q: np.ndarray | None = field(repr=False, default=None)   # (2, B+1, B+1), small batteries only


def rvia_solve(model: MdpModel, epsilon: float = 1e-6, max_iter: int = 100_000,
               ref=None, tau: float = 1.0) -> MdpSolution:
    """Relative value iteration with span-seminorm stopping.

    ``ref`` is the state whose value is pinned to zero after every sweep
    (default: good source, full battery). ``tau < 1`` applies the
    aperiodicity transform ``J <- tau*TJ + (1-tau)*J``, which leaves the
    optimal policy unchanged and scales the per-sweep gain by ``tau``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    B = model.capacity
    rx, rb = (1, B) if ref is None else ref
    actions = undominated_actions(model.cost)
    J = np.zeros((2, B + 1))
    span = np.inf
    for it in range(1, max_iter + 1):
        J_prev = J
        TJ = backup(model, J, actions).min(axis=2)
        J_new = tau * TJ + (1 - tau) * J
        diff = J_new - J
        span = float(diff.max() - diff.min())
        J = J_new - J_new[rx, rb]
        if span <= epsilon:
            gain = (diff.max() + diff.min()) / 2 / tau
            # dominated actions never win the smallest-action argmin either
            policy = actions[greedy_policy(backup(model, J_prev, actions))]
            Q = backup(model, J_prev) if B <= FULL_Q_LIMIT else None
            return MdpSolution(policy, float(gain), J, it, span, Q)
    raise NonConvergenceError(max_iter, span)


@dataclass
class PolicyEvaluation:
    gain: float
    rho: np.ndarray          # (2, B+1) long-run state occupancy
    reducible: bool


def _stationary(P) -> np.ndarray:
    """Stationary law of an irreducible sparse stochastic matrix.

    One balance equation is replaced by the normalisation. States should be
    ordered so that ``P`` is banded (battery-major), which keeps the
    natural-order LU free of fill-in.
    """
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    A = (P.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    # P^T - I is column diagonally dominant, so elimination needs no pivoting
    rho = splu(A.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0).solve(rhs)
    rho = np.clip(rho, 0.0, None)
    return rho / rho.sum()


def _class_stationary(P, members: np.ndarray, B: int) -> np.ndarray:
    # battery-major order: index (x, b) -> 2b + x
    order = members[np.argsort(2 * (members % (B + 1)) + members // (B + 1), kind="stable")]
    rho = np.empty(len(order))
    rho_sorted = _stationary(P[order][:, order])
    pos = np.searchsorted(members, order)
    rho[pos] = rho_sorted
    return rho


def evaluate_policy(model: MdpModel, policy, cost=None, start=None) -> PolicyEvaluation:
    """Long-run average cost of a stationary policy via its stationary law.

    If the induced chain has several closed classes, the long-run occupancy
    seen from ``start`` (default: good source, full battery) is used and
    the result is flagged reducible.
    """
    policy = np.asarray(policy)
    c = model.cost if cost is None else np.asarray(cost, dtype=float)
    B = model.capacity
    P = model.policy_matrix(policy, dense=False)
    n = P.shape[0]
    ncomp, labels = connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaving = np.zeros(ncomp, dtype=bool)
    leaving[labels[coo.row[labels[coo.row] != labels[coo.col]]]] = True
    closed = [np.nonzero(labels == lab)[0] for lab in np.nonzero(~leaving)[0]]

    rho = np.zeros(n)
    reducible = len(closed) > 1
    if not reducible:
        members = closed[0]
        rho[members] = _class_stationary(P, members, B)
    else:
        sx, sb = (1, B) if start is None else start
        s0 = model.index(sx, sb)
        recurrent = np.zeros(n, dtype=bool)
        for members in closed:
            recurrent[members] = True
        transient = np.nonzero(~recurrent)[0]
        if recurrent[s0]:
            weights = [1.0 if s0 in members else 0.0 for members in closed]
        else:
            T = P[transient][:, transient]
            lhs = (sparse.identity(len(transient), format="csc") - T).tocsc()
            R = np.column_stack([np.asarray(P[transient][:, members].sum(axis=1)).ravel() for members in closed])
            absorb = spsolve(lhs, R).reshape(len(transient), len(closed))
            weights = absorb[np.searchsorted(transient, s0)].tolist()
        for w, members in zip(weights, closed):
            if w > 0:
                rho[members] += w * _class_stationary(P, members, B)
        warnings.warn("policy induces a reducible chain; evaluated from the full-battery start",
                      ReducibleChainWarning, stacklevel=2)

    rho = rho.reshape(2, B + 1)
    u = policy.astype(int)
    gain = float((rho * c[u]).sum())
    return PolicyEvaluation(gain, rho, reducible)


def steady_state_cost(model: MdpModel, policy, cost=None) -> float:
    return evaluate_policy(model, policy, cost).gain


def brute_force_gain(model: MdpModel):
    """Best long-run cost over every deterministic stationary policy.

    Only sensible for tiny models: the number of policies is
    ``prod_b (b+1)^2``.
    """
    B = model.capacity
    choices = [range(b + 1) for _ in (0, 1) for b in range(B + 1)]
    best, best_policy = np.inf, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ReducibleChainWarning)
        for flat in itertools.product(*choices):
            policy = np.array(flat).reshape(2, B + 1)
            g = evaluate_policy(model, policy).gain
            if g < best - 1e-15:
                best, best_policy = g, policy
    return best, best_policy


@dataclass
class ThresholdReport:
    passed: bool
    violations: list          # states (x, b) where u*(x, b+1) < u*(x, b)


def verify_threshold(policy) -> ThresholdReport:
    policy = np.asarray(policy)
    bad = [(x, b) for x in range(policy.shape[0]) for b in range(policy.shape[1] - 1)
           if policy[x, b + 1] < policy[x, b]]
    return ThresholdReport(not bad, bad)


@dataclass
class StructureReport:
    passed: bool
    convexity_violations: list       # (x, b, second difference)
    submodularity_violations: list   # (x, b, u, increase of Q(b,u+1)-Q(b,u) from b to b+1)
    worst_convexity: float
    worst_submodularity: float


def verify_structure(model: MdpModel, solution: MdpSolution, tol: float = 1e-5) -> StructureReport:
    """Numerical convexity of J in b and submodularity of Q in (b, u).

    Submodularity is checked on adjacent action pairs, which implies it for
    every ``u' >= u`` by telescoping.
    """
    J = solution.values
    Q = solution.q if solution.q is not None else backup(model, J)
    conv = []
    worst_c = 0.0
    if J.shape[1] >= 3:
        second = J[:, 2:] - 2 * J[:, 1:-1] + J[:, :-2]
        worst_c = float(min(0.0, second.min()))
        for x, i in zip(*np.nonzero(second < -tol)):
            conv.append((int(x), int(i) + 1, float(second[x, i])))
    sub = []
    worst_s = 0.0
    B = model.capacity
    if B >= 2:
        with np.errstate(invalid="ignore"):
            step = Q[:, :, 1:] - Q[:, :, :-1]          # step[x, b, u] = Q(b, u+1) - Q(b, u)
            growth = step[:, 1:, :] - step[:, :-1, :]  # change from b to b+1
        b = np.arange(B)[:, None]
        u = np.arange(B)[None, :]
        valid = (u + 1 <= b)                          # both actions admissible at b
        vals = np.where(valid[None], growth, -np.inf)
        worst_s = float(max(0.0, vals.max()))
        for x, bb, uu in zip(*np.nonzero(vals > tol)):
            sub.append((int(x), int(bb), int(uu), float(vals[x, bb, uu])))
    return StructureReport(not conv and not sub, conv, sub, worst_c, worst_s)


def build_model(config) -> MdpModel:
    """MDP for a :class:`SystemConfig` (or an already resolved ``System``)."""
    from .config import System, SystemConfig

    system = config.resolve() if isinstance(config, SystemConfig) else config
    if not isinstance(system, System):
        raise TypeError("build_model expects a SystemConfig or System")
    B = system.capacity
    k_of_u = system.rd.k_table(B)
    cost = system.rd.curve[k_of_u]
    return MdpModel(
        capacity=B,
        source_matrix=system.harvest.source_matrix,
        harvest=system.harvest.pmf_matrix(),
        cost=cost,
        k_of_u=k_of_u,
        d_fl=system.fit.d_fl,
    )
