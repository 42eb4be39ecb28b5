"""Reference algorithm: EXP3.P over a fixed uniform discretization.

The estimator has the same optimistic shape as the zooming learner's
(IPS plus a confidence bonus over the sampling probability), but the arm set
is fixed for the whole run and the parameters are constants tuned for the
horizon.  Records use the same trace schema, so the evaluation and CLI
pipelines are shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import stream_key, uniform
from .trace import NodeMeta, RoundRecord, Trace

SELECT_STREAM = "algo.select"  # same stream as the zooming learner


def uniform_grid(d: int, eps: float) -> np.ndarray:
    """Cell centers of the uniform eps-grid on [0,1]^d: K = ceil(1/eps)^d arms."""
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    m = math.ceil(1.0 / eps)
    axis = (np.arange(m) + 0.5) / m
    if d == 1:
        return axis.reshape(-1, 1)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def default_grid_eps(T: int, d: int) -> float:
    """eps = T^(-1/(d+2)), the classic K ~ T^(d/(d+2)) discretization."""
    return float(T) ** (-1.0 / (d + 2))


@dataclass(frozen=True)
class Exp3PParams:
    beta: float
    gamma: float
    eta: float
    conf_scale: float = 1.0  # multiplier on beta/pi in the estimator


def default_params(K: int, T: int) -> Exp3PParams:
    # standard horizon tuning: gamma ~ sqrt(K log(KT)/T), eta = gamma/K,
    # beta ~ sqrt(log(KT)/(KT)); all capped at 1/2
    lg = math.log(max(2, K * T))
    gamma = min(0.5, math.sqrt(K * lg / T))
    return Exp3PParams(
        beta=min(0.5, math.sqrt(lg / (K * T))),
        gamma=gamma,
        eta=min(0.5, gamma / K),
        conf_scale=1.0,
    )


class Exp3PState:
    def __init__(self, arms: np.ndarray, T: int, seed: int = 0,
                 params: Optional[Exp3PParams] = None,
                 record_state: bool = False):
        arms = np.atleast_2d(np.asarray(arms, dtype=np.float64))
        self.arms = arms
        self.K = len(arms)
        self.T = T
        self.t = 1
        self.params = params or default_params(self.K, T)
        self.g_hat = np.zeros(self.K)
        self.record_state = record_state
        self.select_key = stream_key(seed, SELECT_STREAM)
        self.trace = Trace(
            algorithm="exp3p_uniform", T=T, d=arms.shape[1],
            n_dbl=2 ** arms.shape[1], seed=seed, space_kind="arms",
        )
        for k in range(self.K):
            self.trace.add_node(
                NodeMeta(node_id=k, parent_id=None, height=0, scale=0.0,
                         tau0=1, arm=tuple(arms[k]), log_c_prod=0.0)
            )


def exp3p_distribution(state: Exp3PState) -> np.ndarray:
    p = state.params
    w_log = p.eta * state.g_hat
    w = np.exp(w_log - w_log.max())
    w /= w.sum()
    return (1.0 - p.gamma) * w + p.gamma / state.K


def exp3p_step(state: Exp3PState, env) -> RoundRecord:
    t = state.t
    if t > state.T:
        raise RuntimeError(f"horizon exhausted: t={t} > T={state.T}")
    p = state.params
    pi = exp3p_distribution(state)
    u = float(uniform(state.select_key, t))
    k = min(int(np.searchsorted(np.cumsum(pi), u, side="right")), state.K - 1)
    arm = tuple(state.arms[k])
    reward = float(env.reward(t, arm))
    ghat = p.conf_scale * p.beta / pi
    ghat[k] += reward / pi[k]
    state.g_hat += ghat
    rec = RoundRecord(
        t=t, node_id=k, arm=arm, reward=reward,
        beta=p.beta, beta_tilde=p.beta, gamma=p.gamma, eta=p.eta,
        n_active=state.K,
        active_ids=tuple(range(state.K)) if state.record_state else None,
        pi=pi.copy() if state.record_state else None,
        g_hat=state.g_hat.copy() if state.record_state else None,
    )
    state.trace.append(rec)
    state.t += 1
    return rec


def exp3p_run(arms, T: int, env, seed: int = 0,
              params: Optional[Exp3PParams] = None,
              record_state: bool = False) -> Trace:
    state = Exp3PState(arms, T, seed=seed, params=params,
                       record_state=record_state)
    while state.t <= T:
        exp3p_step(state, env)
    return state.trace
