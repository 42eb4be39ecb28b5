"""Adaptive-zooming bandit over a node hierarchy with EXP3.P-style selection.

State per active node is three scalars — the cumulative optimistic estimate
G_hat, the cumulative confidence sum S_conf, and log c_prod (the log-product
of child counts along the ancestry) — plus bookkeeping.  Weights are never
stored: the closed form

    log w_t(u) = eta_t * G_hat(u) - log_c_prod(u)

reproduces the explicit multiplicative-update-and-split table exactly, and
is evaluated in log space with max-subtraction each round.  When a node's
sampling uncertainty drops below its diameter (instantaneous and aggregate
confidence tests both pass), the node is replaced by its children, each of
which inherits the parent's scalars by value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dc_fields, replace
from typing import Optional

import numpy as np

from .metric import (
    CubeNode,
    FiniteMetricSpace,
    ZoomingDag,
    build_zooming_dag,
    cube_children,
    cube_level,
    cube_root,
    doubling_constant,
    representative,
)
from .rng import stream_key, uniform
from .trace import NodeMeta, RoundRecord, Trace

SELECT_STREAM = "algo.select"


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamValues:
    beta: float
    beta_tilde: float
    gamma: float
    eta: float


def raw_param(t: int, a_size: int, T: int, n_dbl: int, d: float) -> float:
    """Unclamped schedule value sqrt(2 ln(A T^3) ln(N A)) / sqrt(t A d ln^2 T).

    The log argument N*A is floored at 2 so degenerate singleton spaces do
    not zero the schedule.
    """
    if T < 2:
        return 0.5
    num = 2.0 * math.log(a_size * T**3) * math.log(max(2.0, n_dbl * a_size))
    den = t * a_size * d * math.log(T) ** 2
    return math.sqrt(num / den)


class ParamSchedule:
    """Per-round (beta, beta_tilde, gamma, eta) with clamping and cummin.

    All four are clamped into (0, 1/2]; beta and eta are additionally forced
    non-increasing via a running minimum (|A_t| jumps can bump the raw
    formula).  beta_tilde equals beta.  gamma = (2 + 4 log2 T) |A_t| beta,
    clamped.  A constant override replaces the formula entirely.
    """

    def __init__(self, T: int, n_dbl: int, d: float,
                 override: Optional[ParamValues] = None):
        self.T = T
        self.n_dbl = n_dbl
        self.d = d
        self.override = override
        self.history: list = []  # history[t-1] = ParamValues
        self._running_min = 0.5

    def advance(self, t: int, a_size: int) -> ParamValues:
        if t != len(self.history) + 1:
            raise ValueError(f"schedule advanced out of order: t={t}")
        if self.override is not None:
            pv = self.override
        else:
            beta = min(0.5, raw_param(t, a_size, self.T, self.n_dbl, self.d))
            beta = min(beta, self._running_min)
            self._running_min = beta
            gamma = min(0.5, (2.0 + 4.0 * math.log2(self.T)) * a_size * beta)
            pv = ParamValues(beta=beta, beta_tilde=beta, gamma=gamma, eta=beta)
        self.history.append(pv)
        return pv

    def at(self, t: int) -> ParamValues:
        return self.history[t - 1]


# --------------------------------------------------------------------------
# Configuration and state
# --------------------------------------------------------------------------


@dataclass
class AlgoConfig:
    seed: int = 0
    repr_policy: str = "center"
    record_state: bool = True  # keep per-round pi / G_hat snapshots
    debug_invariants: bool = False
    zoom_enabled: bool = True
    start_height: int = 0  # activate the full level at this height initially
    d: Optional[float] = None  # covering dimension override (DAG spaces)
    n_dbl: Optional[int] = None  # doubling constant override
    param_override: Optional[ParamValues] = None

    @classmethod
    def from_dict(cls, spec: dict) -> "AlgoConfig":
        known = {f.name for f in dc_fields(cls)}
        unknown = set(spec) - known
        if unknown:
            raise ValueError(f"invalid config keys: {sorted(unknown)}")
        return cls(**spec)


@dataclass
class NodeState:
    """Read-only per-node view (tests and diagnostics; arrays are the truth)."""

    node: object
    node_id: int
    g_hat: float
    s_conf: float
    log_c_prod: float
    tau0: int
    mass: float
    last_pi: float


@dataclass
class ConfTerms:
    conf_tot: float  # 1/beta_t + S_conf
    conf_inst: float  # beta_tilde_t + beta_t / pi_t(u)


class AlgState:
    """One run's mutable state.  Confined to a single sequential execution;
    run independent seeds in separate states."""

    def __init__(self, space, T: int, config: AlgoConfig):
        if T < 1:
            raise ValueError("horizon T must be >= 1")
        self.config = config
        self.T = T
        self.t = 1
        self.space = space

        if isinstance(space, int):
            self.kind = "cube"
            self.d = float(space)
            self.n_dbl = 2**space
        else:
            if isinstance(space, FiniteMetricSpace):
                space = build_zooming_dag(
                    space, max_height=int(math.ceil(math.log2(max(2, T)))) + 1
                )
                self.space = space
            if not isinstance(space, ZoomingDag):
                raise TypeError(f"unsupported space {type(space)!r}")
            self.kind = "dag"
            self.d = float(config.d) if config.d is not None else 1.0
            self.n_dbl = (
                config.n_dbl
                if config.n_dbl is not None
                else doubling_constant(space.space).value
            )
        if config.d is not None:
            self.d = float(config.d)
        if config.n_dbl is not None:
            self.n_dbl = int(config.n_dbl)

        self.conf_coeff = 1.0 + 4.0 * math.log2(T) if T > 1 else 1.0
        self.schedule = ParamSchedule(
            T, self.n_dbl, self.d, override=config.param_override
        )
        self.select_key = stream_key(config.seed, SELECT_STREAM)

        self.trace = Trace(
            algorithm="adversarial_zooming",
            T=T,
            d=int(self.d) if float(self.d).is_integer() else self.d,
            n_dbl=self.n_dbl,
            seed=config.seed,
            space_kind=self.kind,
        )

        # hot per-node state, parallel to self.nodes (activation order)
        self.nodes: list = []  # underlying CubeNode / DagNode
        self.ids: list = []  # trace node ids
        self.g_hat = np.zeros(0)
        self.s_conf = np.zeros(0)
        self.log_c_prod = np.zeros(0)
        self.mass = np.zeros(0)
        self.last_pi = np.zeros(0)
        self.scale = np.zeros(0)
        self._next_id = 0

        for node, log_cp in self._initial_nodes():
            self._activate(node, log_cp, parent_id=None, tau0=1)

    # -- node plumbing -------------------------------------------------------

    def _initial_nodes(self):
        h = self.config.start_height
        if self.kind == "cube":
            if h == 0:
                return [(cube_root(int(self.d)), 0.0)]
            nodes = cube_level(int(self.d), h)
            # equal split from the root: log c_prod = h * ln(2^d)
            return [(u, h * math.log(2 ** int(self.d))) for u in nodes]
        dag = self.space
        if h > dag.max_height:
            raise ValueError(f"start_height {h} exceeds DAG height {dag.max_height}")
        level = dag.levels[h]
        if h == 0:
            return [(dag.nodes[level[0]], 0.0)]
        # uniform inherited weight across the level (root's equal split,
        # iterated); exact lineage is ambiguous in a DAG, so use level size
        log_cp = math.log(len(level)) if len(level) > 1 else 0.0
        return [(dag.nodes[nid], log_cp) for nid in level]

    def _node_scale(self, node) -> float:
        return node.diameter if isinstance(node, CubeNode) else node.action_radius

    def _node_children(self, node):
        if isinstance(node, CubeNode):
            return cube_children(node)
        return [self.space.nodes[nid] for nid in node.children]

    def _activate(self, node, log_cp, parent_id, tau0,
                  g_hat=0.0, s_conf=0.0) -> int:
        nid = self._next_id
        self._next_id += 1
        self.nodes.append(node)
        self.ids.append(nid)
        self.g_hat = np.append(self.g_hat, g_hat)
        self.s_conf = np.append(self.s_conf, s_conf)
        self.log_c_prod = np.append(self.log_c_prod, log_cp)
        self.mass = np.append(self.mass, 0.0)
        self.last_pi = np.append(self.last_pi, np.nan)
        self.scale = np.append(self.scale, self._node_scale(node))
        arm = representative(node, self.config.repr_policy, self.config.seed)
        if not isinstance(arm, tuple):
            arm = (arm,)
        self.trace.add_node(
            NodeMeta(
                node_id=nid,
                parent_id=parent_id,
                height=node.height,
                scale=self._node_scale(node),
                tau0=tau0,
                arm=arm,
                log_c_prod=log_cp,
            )
        )
        return nid

    @property
    def n_active(self) -> int:
        return len(self.nodes)

    def node_states(self) -> list:
        return [
            NodeState(
                node=self.nodes[i],
                node_id=self.ids[i],
                g_hat=float(self.g_hat[i]),
                s_conf=float(self.s_conf[i]),
                log_c_prod=float(self.log_c_prod[i]),
                tau0=self.trace.node_table[self.ids[i]].tau0,
                mass=float(self.mass[i]),
                last_pi=float(self.last_pi[i]),
            )
            for i in range(self.n_active)
        ]

    def conf_terms(self, i: int, pv: ParamValues) -> ConfTerms:
        return ConfTerms(
            conf_tot=1.0 / pv.beta + float(self.s_conf[i]),
            conf_inst=pv.beta_tilde + pv.beta / float(self.last_pi[i]),
        )


def init(space, T: int, config: Optional[AlgoConfig] = None) -> AlgState:
    """Fresh state: A_1 is the root (weights all one), schedule empty."""
    return AlgState(space, T, config or AlgoConfig())


# --------------------------------------------------------------------------
# One round
# --------------------------------------------------------------------------


def distribution(state: AlgState, pv: ParamValues) -> np.ndarray:
    """Exploration-mixed selection distribution over active nodes.

    p is proportional to exp(eta*G_hat - log_c_prod), computed with
    max-subtraction; pi mixes in gamma of uniform, so every node keeps
    probability at least gamma/|A_t|.
    """
    w_log = pv.eta * state.g_hat - state.log_c_prod
    if not np.all(np.isfinite(w_log)):
        raise ArithmeticError(f"non-finite weight exponent at round {state.t}")
    p = np.exp(w_log - w_log.max())
    p /= p.sum()
    n = state.n_active
    pi = (1.0 - pv.gamma) * p + pv.gamma / n
    return pi


def select(state: AlgState, pi: np.ndarray):
    """Inverse-CDF draw on the round-keyed uniform; cumulative sums follow
    activation order, which fixes tie-breaking deterministically."""
    u = float(uniform(state.select_key, state.t))
    cum = np.cumsum(pi)
    idx = int(np.searchsorted(cum, u, side="right"))
    idx = min(idx, state.n_active - 1)
    arm = state.trace.node_table[state.ids[idx]].arm
    return idx, arm


def estimate(state: AlgState, chosen: int, reward: float, pi: np.ndarray,
             pv: ParamValues) -> np.ndarray:
    """Optimistic estimates: IPS for the chosen node plus the confidence
    bonus (1 + 4 log2 T) beta_t / pi_t(u) for every active node."""
    if not (0.0 <= reward <= 1.0):
        raise ValueError(f"reward {reward} outside [0, 1]")
    ghat = state.conf_coeff * pv.beta / pi
    ghat[chosen] += reward / pi[chosen]
    return ghat


def update(state: AlgState, ghat: np.ndarray, pi: np.ndarray,
           pv: ParamValues) -> None:
    state.g_hat += ghat
    state.s_conf += pv.beta / pi
    state.mass += pi
    state.last_pi = pi.copy()


def zoom_check(state: AlgState, i: int, pv: ParamValues) -> bool:
    """Zoom in iff both confidence tests clear the node's scale:
    instantaneous beta_tilde + beta/pi <= e^L - 1, and aggregate
    1/beta + S_conf <= t*L."""
    L = state.scale[i]
    inst = pv.beta_tilde + pv.beta / state.last_pi[i]
    if inst > math.expm1(L):
        return False
    tot = 1.0 / pv.beta + state.s_conf[i]
    return tot <= state.t * L


def zoom_in(state: AlgState, zoom_idx: list) -> list:
    """Deactivate the flagged nodes, activate their children with the
    parent's scalars inherited by value.  Equal weight split is implicit:
    each child's log_c_prod grows by ln |c(parent)|."""
    zoomed_ids = []
    keep = np.ones(state.n_active, dtype=bool)
    additions = []  # (node, log_cp, parent_id, g_hat, s_conf)
    active_dag_ids = (
        {n.node_id for n in state.nodes} if state.kind == "dag" else None
    )
    for i in zoom_idx:
        node = state.nodes[i]
        if node.height > math.log2(state.T) + 1e-9:
            raise RuntimeError(
                f"zoom-in on node of height {node.height} > log2 T at round "
                f"{state.t}; the height bound should make this unreachable"
            )
        keep[i] = False
        pid = state.ids[i]
        zoomed_ids.append(pid)
        meta = state.trace.node_table[pid]
        meta.tau1 = state.t
        children = state._node_children(node)
        meta.n_children = len(children)
        log_cp = state.log_c_prod[i] + math.log(len(children))
        for child in children:
            if active_dag_ids is not None:
                if child.node_id in active_dag_ids:
                    continue
                active_dag_ids.add(child.node_id)
            additions.append((child, log_cp, pid, state.g_hat[i], state.s_conf[i]))

    for arr_name in ("g_hat", "s_conf", "log_c_prod", "mass", "last_pi", "scale"):
        setattr(state, arr_name, getattr(state, arr_name)[keep])
    state.nodes = [n for n, k in zip(state.nodes, keep) if k]
    state.ids = [n for n, k in zip(state.ids, keep) if k]
    for child, log_cp, pid, g, s in additions:
        state._activate(child, log_cp, parent_id=pid, tau0=state.t + 1,
                        g_hat=g, s_conf=s)
    return zoomed_ids


def _debug_checks(state: AlgState, pi: np.ndarray, pv: ParamValues) -> None:
    t, n = state.t, len(pi)
    assert abs(pi.sum() - 1.0) <= 1e-12, f"round {t}: sum(pi) != 1"
    assert pi.min() >= pv.gamma / n - 1e-12, f"round {t}: pi below floor"
    conf_tot = 1.0 / pv.beta + state.s_conf
    bad = conf_tot < (t - 1) * state.scale - 1e-9
    assert not bad.any(), f"round {t}: zooming invariant violated"
    max_h = 1.0 + math.log2(state.T) + 1e-9
    assert all(nd.height <= max_h for nd in state.nodes), f"round {t}: height"


def step(state: AlgState, env) -> RoundRecord:
    """Play one round: params, distribution, selection, reward, estimate,
    update, then the zoom pass over the nodes that were active this round
    (children activated now are first eligible next round)."""
    t = state.t
    if t > state.T:
        raise RuntimeError(f"horizon exhausted: t={t} > T={state.T}")
    n_before = state.n_active
    pv = state.schedule.advance(t, n_before)
    pi = distribution(state, pv)
    chosen, arm = select(state, pi)
    chosen_id = state.ids[chosen]
    reward = float(env.reward(t, arm))
    ghat = estimate(state, chosen, reward, pi, pv)
    update(state, ghat, pi, pv)

    # snapshots describe the active set of *this* round, taken before zooming
    snap_ids = snap_pi = snap_ghat = None
    if state.config.record_state:
        snap_ids = tuple(state.ids)
        snap_pi = pi.copy()
        snap_ghat = state.g_hat.copy()

    zoomed = []
    if state.config.zoom_enabled:
        zoom_idx = [i for i in range(n_before) if zoom_check(state, i, pv)]
        if zoom_idx:
            zoomed = zoom_in(state, zoom_idx)

    if state.config.debug_invariants:
        _debug_checks(state, pi, pv)

    rec = RoundRecord(
        t=t,
        node_id=chosen_id,
        arm=arm,
        reward=reward,
        beta=pv.beta,
        beta_tilde=pv.beta_tilde,
        gamma=pv.gamma,
        eta=pv.eta,
        n_active=n_before,
        zoomed=tuple(zoomed),
        active_ids=snap_ids,
        pi=snap_pi,
        g_hat=snap_ghat,
    )
    state.trace.append(rec)
    state.t += 1
    return rec


def run(state: AlgState, env, rounds: Optional[int] = None) -> Trace:
    """Play `rounds` rounds (default: to the horizon)."""
    end = state.T if rounds is None else min(state.T, state.t + rounds - 1)
    while state.t <= end:
        step(state, env)
    return state.trace


# --------------------------------------------------------------------------
# Anytime operation (doubling trick)
# --------------------------------------------------------------------------


class _OffsetEnv:
    """Shift local phase rounds onto the global oblivious reward sequence."""

    def __init__(self, env, offset: int):
        self.env = env
        self.offset = offset

    def reward(self, t: int, arm):
        return self.env.reward(t + self.offset, arm)


@dataclass
class AnytimeResult:
    phases: list  # one Trace per phase, horizons 1, 2, 4, ...
    total_rounds: int

    def rewards(self) -> np.ndarray:
        return np.concatenate([tr.rewards() for tr in self.phases])

    def phase_lengths(self) -> list:
        return [tr.n_rounds for tr in self.phases]


def run_anytime(space, config: AlgoConfig, rounds: int, env) -> AnytimeResult:
    """Doubling trick: restart with horizon 2^i per phase i = 0, 1, 2, ...

    Each phase gets fresh state and a phase-derived selection seed; the
    final phase is cut short when the round budget runs out.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    phase_key = stream_key(config.seed, "anytime.phase")
    phases = []
    done = 0
    i = 0
    while done < rounds:
        T_i = 1 << i
        budget = min(T_i, rounds - done)
        phase_seed = int(uniform(phase_key, i) * 2**31)
        cfg = replace(config, seed=phase_seed)
        state = init(space, T_i, cfg)
        run(state, _OffsetEnv(env, done), rounds=budget)
        phases.append(state.trace)
        done += budget
        i += 1
    return AnytimeResult(phases=phases, total_rounds=done)


# --------------------------------------------------------------------------
# Schedule assumption audit
# --------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    """Rounds violating each tuning assumption (reporting only — the raw
    schedule provably fails some clauses in the earliest clamped rounds)."""

    violations: dict  # clause name -> list of rounds

    @property
    def ok(self) -> bool:
        return not any(self.violations.values())

    def total(self) -> int:
        return sum(len(v) for v in self.violations.values())


def check_assumptions(schedule: ParamSchedule, trace: Trace) -> AssumptionReport:
    """Audit the recorded schedule against the regret theorem's conditions.

    Per round: eta <= beta <= gamma/|A_t| and
    eta (1 + beta (1 + 4 log2 T)) <= gamma/|A_t|; the tilde sequence must be
    non-increasing with beta_tilde >= beta.  The integral condition on
    beta_tilde has no closed form (beta depends on |A_t|), so it is reported
    via its discrete sufficient per-step form
    beta_tilde_t <= 1/beta_{t+1} - 1/beta_t, which telescopes to every
    window.
    """
    tol = 1e-12
    cc = 1.0 + 4.0 * math.log2(trace.T) if trace.T > 1 else 1.0
    out = {
        "eta_le_beta": [],
        "beta_le_gamma_share": [],
        "product_clause": [],
        "tilde_nonincreasing": [],
        "tilde_ge_beta": [],
        "tilde_window": [],
    }
    prev = None
    for k, rec in enumerate(trace.rounds):
        share = rec.gamma / rec.n_active
        if rec.eta > rec.beta + tol:
            out["eta_le_beta"].append(rec.t)
        if rec.beta > share + tol:
            out["beta_le_gamma_share"].append(rec.t)
        if rec.eta * (1.0 + rec.beta * cc) > share + tol:
            out["product_clause"].append(rec.t)
        if prev is not None and rec.beta_tilde > prev.beta_tilde + tol:
            out["tilde_nonincreasing"].append(rec.t)
        if rec.beta_tilde < rec.beta - tol:
            out["tilde_ge_beta"].append(rec.t)
        if k + 1 < len(trace.rounds):
            nxt = trace.rounds[k + 1]
            if rec.beta_tilde > 1.0 / nxt.beta - 1.0 / rec.beta + tol:
                out["tilde_window"].append(rec.t)
        prev = rec
    return AssumptionReport(violations=out)
