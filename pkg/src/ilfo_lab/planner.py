"""Optimistic min-max planning under a learned model.

The learner-side game is min over occupancy measures of
sup_f E_d[f] - E_e[f] - <d, b>, with f from a witness class and b an
exploration bonus.  Best responses are exact: backward DP for tabular
models, open-loop sequence search for KNR models.  The outer loop is
Frank-Wolfe / fictitious play with 1/k averaging, which returns a
uniform mixture of the per-round best responses.  A linear program over
the occupancy polytope provides an independent value oracle for small
tabular games.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .discriminators import MmdDiscriminator, mmd_update, tv_best_response
from .envs import ConfigurationError, MixedPolicy, Policy, occupancy_exact
from .expert import ExpertDataset
from .models import BonusFunction, CalibratedModel

Array = np.ndarray


@dataclass(frozen=True)
class KnrSearchConfig:
    """Budget for open-loop sequence search under a KNR model."""

    exhaustive_limit: int = 4096
    n_candidates: int = 0   # 0 disables the random-shooting fallback

    def __post_init__(self):
        if self.exhaustive_limit < 1 or self.n_candidates < 0:
            raise ConfigurationError("invalid search budget")


@dataclass(frozen=True)
class MinMaxConfig:
    """Outer-loop settings for the min-max solver."""

    k_iters: int = 200
    averaging: str = "harmonic"       # or "uniform" (same final mixture)
    solver: str = "frank_wolfe"       # or "mw_finite"
    mw_learning_rate: float = 0.5
    tolerance: float = 1e-2
    mmd_update_mode: str = "exact"    # or "grad"
    mmd_eta: float = 0.67
    knr_search: KnrSearchConfig = field(default_factory=KnrSearchConfig)

    def __post_init__(self):
        if self.k_iters < 1:
            raise ConfigurationError("k_iters must be >= 1")
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be positive")
        if self.averaging not in ("harmonic", "uniform"):
            raise ConfigurationError(f"unknown averaging: {self.averaging!r}")
        if self.solver not in ("frank_wolfe", "mw_finite"):
            raise ConfigurationError(f"unknown solver: {self.solver!r}")
        if self.mw_learning_rate <= 0:
            raise ConfigurationError("mw_learning_rate must be positive")
        if self.mmd_update_mode not in ("exact", "grad"):
            raise ConfigurationError("mmd_update_mode must be exact or grad")


@dataclass(frozen=True)
class _ModelView:
    """Adapter exposing a stationary kernel with MDP-like attributes."""

    horizon: int
    num_states: int
    num_actions: int
    init_state: int
    p: Array

    def kernel(self, h: int) -> Array:
        return self.p


def _kernel_of(model) -> Array:
    if isinstance(model, CalibratedModel):
        return model.p_hat
    return np.asarray(model, dtype=float)


def best_response_tabular(model, cost, horizon: int) -> Policy:
    """Exact optimal deterministic nonstationary policy via backward DP.

    cost may be (S, A) or (S,); ties pick the lowest action index.
    Costs may be negative (bonus-augmented objectives).
    """
    kernel = _kernel_of(model)
    s_dim, a_dim = kernel.shape[0], kernel.shape[1]
    c = np.asarray(cost, dtype=float)
    if c.ndim == 1:
        c = np.repeat(c[:, None], a_dim, axis=1)
    if c.shape != (s_dim, a_dim):
        raise ConfigurationError("cost must be (S, A) or (S,)")
    actions = np.zeros((horizon, s_dim), dtype=np.int64)
    v = np.zeros(s_dim)
    for h in range(horizon - 1, -1, -1):
        q = c + kernel @ v
        actions[h] = np.argmin(q, axis=1)
        v = q[np.arange(s_dim), actions[h]]
    return Policy.deterministic(actions, num_actions=a_dim)


def _decode_sequence(index: int, horizon: int, num_actions: int) -> Array:
    seq = np.zeros(horizon, dtype=np.int64)
    for h in range(horizon - 1, -1, -1):
        seq[h] = index % num_actions
        index //= num_actions
    return seq


def _score_sequence(model: CalibratedModel, seq: Array, cost_fn: Callable,
                    bonus, init_state) -> float:
    s = np.asarray(init_state, dtype=float)
    total = 0.0
    for a in seq:
        total += float(cost_fn(s))
        if bonus is not None:
            total -= float(bonus(s, int(a)))
        s = model.mean_prediction(s, int(a))
    return total


def best_response_knr(model: CalibratedModel, cost_fn: Callable, bonus,
                      horizon: int, num_actions: int, init_state,
                      search_cfg: KnrSearchConfig,
                      rng: np.random.Generator | None = None) -> Policy:
    """Best open-loop action sequence under the learned nominal dynamics.

    Minimizes sum_h [cost(s_h) - b(s_h, a_h)] where s rolls forward with
    the model mean and noise off.  Exhaustive when A^H fits the budget,
    otherwise random shooting over n_candidates distinct sequences; ties
    pick the lexicographically smallest sequence.
    """
    if model.kind != "knr":
        raise ConfigurationError("best_response_knr needs a knr model")
    total = num_actions ** horizon
    if total <= search_cfg.exhaustive_limit:
        candidate_ids = np.arange(total)
    elif search_cfg.n_candidates > 0:
        if rng is None:
            raise ConfigurationError("random shooting needs an rng")
        n = min(search_cfg.n_candidates, total)
        if total <= 10**6:
            candidate_ids = np.sort(rng.choice(total, size=n, replace=False))
        else:
            # collisions are vanishingly rare at this scale; dedupe anyway
            draws = rng.integers(0, total, size=n)
            candidate_ids = np.unique(draws)
    else:
        raise ConfigurationError(
            f"A^H = {total} exceeds the exhaustive budget "
            f"{search_cfg.exhaustive_limit} and random shooting is disabled")
    best_score = np.inf
    best_seq = None
    for idx in candidate_ids:
        seq = _decode_sequence(int(idx), horizon, num_actions)
        score = _score_sequence(model, seq, cost_fn, bonus, init_state)
        if score < best_score - 1e-15:
            best_score = score
            best_seq = seq
    return Policy.open_loop(best_seq)


def _bonus_table(bonus, s_dim: int, a_dim: int) -> Array:
    if bonus is None:
        return np.zeros((s_dim, a_dim))
    if isinstance(bonus, BonusFunction) and bonus.table is not None:
        return np.asarray(bonus.table, dtype=float)
    if isinstance(bonus, np.ndarray):
        return np.asarray(bonus, dtype=float)
    return np.array([[float(bonus(s, a)) for a in range(a_dim)]
                     for s in range(s_dim)])


def _expert_state_distribution(expert, s_dim: int) -> Array:
    if isinstance(expert, ExpertDataset):
        return expert.state_distribution(s_dim)
    d_e = np.asarray(expert, dtype=float)
    if d_e.shape != (s_dim,) or np.any(d_e < 0):
        raise ConfigurationError("expert distribution must be (S,) and >= 0")
    return d_e


def box_objective(d_avg_sa: Array, d_e: Array, bonus_table: Array) -> float:
    """sup over the box class of the IPM, minus the mean bonus."""
    d_state = d_avg_sa.sum(axis=1)
    ipm = float(np.maximum(d_state - d_e, 0.0).sum())
    return ipm - float((d_avg_sa * bonus_table).sum())


def _occupancy_avg(view: _ModelView, policy) -> Array:
    return occupancy_exact(view, policy).average


def solve_minmax(model: CalibratedModel, bonus, disc_class, expert,
                 cfg: MinMaxConfig, *, horizon: int, init_state=0,
                 num_actions: int | None = None,
                 rng: np.random.Generator | None = None
                 ) -> tuple[MixedPolicy, float]:
    """Solve the occupancy-matching game under the learned model.

    Returns a uniform mixture of the per-round best responses and the
    final sup-over-witnesses objective at that mixture.  disc_class is
    "box" (tabular Frank-Wolfe), an explicit list of per-state witness
    vectors (tabular multiplicative weights), or an MmdDiscriminator
    (KNR path).
    """
    if model.kind == "tabular":
        if cfg.solver == "mw_finite":
            if isinstance(disc_class, str):
                raise ConfigurationError(
                    "mw_finite needs an explicit finite witness list")
            return _solve_mw_finite(model, bonus, disc_class, expert, cfg,
                                    horizon, init_state)
        if disc_class != "box":
            raise ConfigurationError(
                "tabular frank_wolfe uses the box witness class")
        return _solve_fw_box(model, bonus, expert, cfg, horizon, init_state)
    if model.kind == "knr":
        if not isinstance(disc_class, MmdDiscriminator):
            raise ConfigurationError("knr solving needs an MmdDiscriminator")
        if num_actions is None:
            raise ConfigurationError("knr solving needs num_actions")
        return _solve_fw_mmd(model, bonus, disc_class, expert, cfg,
                             horizon, num_actions, init_state, rng)
    raise ConfigurationError(f"unsupported model kind: {model.kind!r}")


def _solve_fw_box(model, bonus, expert, cfg, horizon, init_state):
    s_dim, a_dim = model.num_states, model.num_actions
    view = _ModelView(horizon=horizon, num_states=s_dim, num_actions=a_dim,
                      init_state=int(init_state), p=model.p_hat)
    d_e = _expert_state_distribution(expert, s_dim)
    b_table = _bonus_table(bonus, s_dim, a_dim)
    uniform = Policy.tabular(np.full((horizon, s_dim, a_dim), 1.0 / a_dim))
    d_bar = _occupancy_avg(view, uniform)
    components = []
    occs = []        # kept only in uniform-averaging mode
    for k in range(1, cfg.k_iters + 1):
        f_k, _ = tv_best_response(d_bar.sum(axis=1), d_e)
        cost = f_k.values[:, None] - b_table
        pi_k = best_response_tabular(model, cost, horizon)
        occ_k = _occupancy_avg(view, pi_k)
        components.append(pi_k)
        if cfg.averaging == "harmonic":
            d_bar = (1.0 - 1.0 / k) * d_bar + occ_k / k
        else:
            occs.append(occ_k)
            d_bar = np.mean(occs, axis=0)
    mixture = MixedPolicy(components=tuple(components),
                          weights=np.full(len(components),
                                          1.0 / len(components)))
    return mixture, box_objective(d_bar, d_e, b_table)


def _solve_mw_finite(model, bonus, witness_list, expert, cfg, horizon,
                     init_state):
    s_dim, a_dim = model.num_states, model.num_actions
    view = _ModelView(horizon=horizon, num_states=s_dim, num_actions=a_dim,
                      init_state=int(init_state), p=model.p_hat)
    witnesses = np.asarray([np.asarray(f, dtype=float) for f in witness_list])
    if witnesses.ndim != 2 or witnesses.shape[1] != s_dim:
        raise ConfigurationError("witness list must be M vectors of length S")
    d_e = _expert_state_distribution(expert, s_dim)
    b_table = _bonus_table(bonus, s_dim, a_dim)
    weights = np.full(witnesses.shape[0], 1.0 / witnesses.shape[0])
    components = []
    d_bar = None
    for k in range(1, cfg.k_iters + 1):
        f_mix = weights @ witnesses
        pi_k = best_response_tabular(model, f_mix[:, None] - b_table,
                                     horizon)
        occ_k = _occupancy_avg(view, pi_k)
        components.append(pi_k)
        d_bar = occ_k if d_bar is None else (1 - 1.0 / k) * d_bar + occ_k / k
        payoff = witnesses @ (occ_k.sum(axis=1) - d_e)
        weights = weights * np.exp(cfg.mw_learning_rate * payoff)
        weights /= weights.sum()
    mixture = MixedPolicy(components=tuple(components),
                          weights=np.full(len(components),
                                          1.0 / len(components)))
    ipm = float(np.max(witnesses @ (d_bar.sum(axis=1) - d_e)))
    objective = ipm - float((d_bar * b_table).sum())
    return mixture, objective


def _nominal_decision_states(model, seq, init_state, horizon):
    """States s_0..s_{H-1} reached by the model mean under an action seq."""
    states = []
    s = np.asarray(init_state, dtype=float)
    for h in range(horizon):
        states.append(np.atleast_1d(s).copy())
        s = model.mean_prediction(s, int(seq[h]))
    return np.asarray(states)


def _mean_bonus_on_path(bonus, states, seq) -> float:
    if bonus is None:
        return 0.0
    return float(np.mean([bonus(states[h], int(seq[h]))
                          for h in range(len(seq))]))


def _solve_fw_mmd(model, bonus, disc, expert, cfg, horizon, num_actions,
                  init_state, rng):
    fmap = disc.feature_map
    if isinstance(expert, ExpertDataset):
        expert_states = expert.flat_view()
    else:
        expert_states = np.asarray(expert, dtype=float)
    mean_e = fmap(expert_states).mean(axis=0)
    init_seq = np.zeros(horizon, dtype=np.int64)
    init_states = _nominal_decision_states(model, init_seq, init_state,
                                           horizon)
    mean_bar = fmap(init_states).mean(axis=0)
    components = []
    paths = []
    for k in range(1, cfg.k_iters + 1):
        disc = mmd_update(disc, mean_bar, mean_e, mode=cfg.mmd_update_mode,
                          eta_w=cfg.mmd_eta)
        cost_fn = lambda s: float(disc(np.atleast_1d(np.asarray(s, float))))
        pi_k = best_response_knr(model, cost_fn, bonus, horizon, num_actions,
                                 init_state, cfg.knr_search, rng)
        seq = pi_k.action_seq
        states_k = _nominal_decision_states(model, seq, init_state, horizon)
        m_k = fmap(states_k).mean(axis=0)
        components.append(pi_k)
        paths.append((states_k, seq))
        mean_bar = (1 - 1.0 / k) * mean_bar + m_k / k
    mixture = MixedPolicy(components=tuple(components),
                          weights=np.full(len(components),
                                          1.0 / len(components)))
    sup_ipm = disc.zeta * float(np.linalg.norm(mean_bar - mean_e))
    mean_b = float(np.mean([_mean_bonus_on_path(bonus, st, sq)
                            for st, sq in paths]))
    return mixture, sup_ipm - mean_b


def game_value_lp(model, bonus, expert, horizon: int,
                  init_state: int = 0) -> float:
    """Exact game value by linear programming over the occupancy polytope.

    Minimizes sum_s max(0, d_avg(s) - d_e(s)) - <d_avg, b> over all
    per-step occupancies consistent with the model kernel, using slack
    variables for the positive part.  Independent of the Frank-Wolfe
    path; used as an oracle for solver soundness.
    """
    kernel = _kernel_of(model)
    s_dim, a_dim = kernel.shape[0], kernel.shape[1]
    d_e = _expert_state_distribution(expert, s_dim)
    b_table = _bonus_table(bonus, s_dim, a_dim)
    n_d = horizon * s_dim * a_dim
    n = n_d + s_dim

    def d_idx(h, s, a):
        return h * s_dim * a_dim + s * a_dim + a

    c = np.zeros(n)
    for h in range(horizon):
        for s in range(s_dim):
            for a in range(a_dim):
                c[d_idx(h, s, a)] = -b_table[s, a] / horizon
    c[n_d:] = 1.0

    a_eq = np.zeros((horizon * s_dim, n))
    b_eq = np.zeros(horizon * s_dim)
    for s in range(s_dim):
        for a in range(a_dim):
            a_eq[s, d_idx(0, s, a)] = 1.0
    b_eq[int(init_state)] = 1.0
    for h in range(1, horizon):
        for s_next in range(s_dim):
            row = h * s_dim + s_next
            for a in range(a_dim):
                a_eq[row, d_idx(h, s_next, a)] = 1.0
            for s in range(s_dim):
                for a in range(a_dim):
                    a_eq[row, d_idx(h - 1, s, a)] -= kernel[s, a, s_next]

    a_ub = np.zeros((s_dim, n))
    b_ub = d_e.copy()
    for s in range(s_dim):
        for h in range(horizon):
            for a in range(a_dim):
                a_ub[s, d_idx(h, s, a)] = 1.0 / horizon
        a_ub[s, n_d + s] = -1.0

    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n, method="highs")
    if not res.success:
        raise RuntimeError(f"LP solve failed: {res.message}")
    return float(res.fun)
