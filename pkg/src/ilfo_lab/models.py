"""Calibrated dynamics models learned from replayed transitions.

Three model families share one container:

* tabular count models with per-(s, a) confidence widths,
* kernelized nonlinear regulator (KNR) ridge models with elliptical
  confidence widths,
* finite version spaces that keep every hypothesis still consistent
  with the data.

All widths are reported through ``CalibratedModel.sigma`` which caps at
``SIGMA_CAP`` so downstream bonuses stay bounded.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .envs import ConfigurationError, Trajectory, _frozen

Array = np.ndarray

# Total-variation distance between distributions never exceeds 2, so
# widths beyond 2 carry no information.
SIGMA_CAP = 2.0


class ReplayBuffer:
    """FIFO store of (h, s, a, s') transitions, pooled across h.

    ``capacity=0`` means unbounded.  When ``num_states``/``num_actions``
    are given the buffer also maintains exact visit counts so tabular
    fits are O(S A S) instead of O(len(buffer)).
    """

    def __init__(self, capacity: int = 0, num_states: int | None = None,
                 num_actions: int | None = None):
        if capacity < 0:
            raise ConfigurationError("capacity must be >= 0")
        if (num_states is None) != (num_actions is None):
            raise ConfigurationError(
                "num_states and num_actions must be given together")
        self.capacity = int(capacity)
        self.num_states = num_states
        self.num_actions = num_actions
        self._items: deque = deque()
        if num_states is not None:
            self._counts_sas = np.zeros(
                (num_states, num_actions, num_states), dtype=np.int64)
        else:
            self._counts_sas = None

    @property
    def tabular(self) -> bool:
        return self._counts_sas is not None

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def append(self, h: int, s, a: int, s_next) -> None:
        if self.tabular:
            self._counts_sas[int(s), int(a), int(s_next)] += 1
        self._items.append((h, s, int(a), s_next))
        if self.capacity and len(self._items) > self.capacity:
            h0, s0, a0, n0 = self._items.popleft()
            if self.tabular:
                self._counts_sas[int(s0), int(a0), int(n0)] -= 1

    def extend_trajectory(self, traj: Trajectory) -> None:
        for h in range(traj.horizon):
            self.append(h, traj.states[h], traj.actions[h], traj.states[h + 1])

    def count(self, s: int, a: int) -> int:
        if not self.tabular:
            raise ConfigurationError("counts require a tabular buffer")
        return int(self._counts_sas[s, a].sum())

    @property
    def counts_sas(self) -> Array:
        if not self.tabular:
            raise ConfigurationError("counts require a tabular buffer")
        return self._counts_sas.copy()

    @property
    def counts_sa(self) -> Array:
        return self.counts_sas.sum(axis=2)


def bootstrap_buffers(buffer: ReplayBuffer, rng: np.random.Generator,
                      n: int = 2) -> list[ReplayBuffer]:
    """Resample ``n`` buffers of the same size with replacement."""
    items = list(buffer)
    out = []
    for _ in range(n):
        fresh = ReplayBuffer(capacity=0, num_states=buffer.num_states,
                             num_actions=buffer.num_actions)
        if items:
            idx = rng.integers(0, len(items), size=len(items))
            for i in idx:
                fresh.append(*items[i])
        out.append(fresh)
    return out


@dataclass(frozen=True)
class VersionSpace:
    """Finite hypothesis class filtered by squared prediction distance.

    A hypothesis survives when the summed squared distance between its
    predictions and the least-squares winner's predictions over the
    buffer stays below ``threshold``.
    """

    hypotheses: tuple
    lsq_index: int
    threshold: float
    survivor_mask: Array
    noise_std: float

    def __post_init__(self):
        if len(self.hypotheses) == 0:
            raise ConfigurationError("version space needs >= 1 hypothesis")
        mask = np.asarray(self.survivor_mask, dtype=bool)
        if mask.shape != (len(self.hypotheses),):
            raise ConfigurationError("survivor mask shape mismatch")
        if not mask[self.lsq_index]:
            raise ConfigurationError("least-squares winner must survive")
        object.__setattr__(self, "survivor_mask", _frozen(mask))

    @property
    def num_survivors(self) -> int:
        return int(self.survivor_mask.sum())

    def predict(self, s, a) -> Array:
        return np.atleast_1d(np.asarray(
            self.hypotheses[self.lsq_index](s, a), dtype=float))

    def uncertainty(self, s, a) -> float:
        """Width = max pairwise disagreement of survivors, scaled by 1/sigma."""
        preds = [np.atleast_1d(np.asarray(g(s, a), dtype=float))
                 for g, keep in zip(self.hypotheses, self.survivor_mask)
                 if keep]
        if len(preds) == 1:
            return 0.0
        width = 0.0
        for i in range(len(preds)):
            for j in range(i + 1, len(preds)):
                width = max(width, float(np.linalg.norm(preds[i] - preds[j])))
        return min(width / self.noise_std, SIGMA_CAP)


@dataclass(frozen=True)
class CalibratedModel:
    """A fitted dynamics model plus its per-(s, a) confidence width."""

    kind: str
    t: int
    delta: float
    # tabular fields
    p_hat: Array | None = None
    sigma_table: Array | None = None
    # knr fields
    w_hat: Array | None = None
    cov: Array | None = None
    cov_inv: Array | None = field(default=None, repr=False)
    lam_ridge: float | None = None
    noise_std: float | None = None
    w_max: float | None = None
    beta: float | None = None
    features: Callable | None = field(default=None, repr=False)
    # version-space field
    version_space: VersionSpace | None = None

    def __post_init__(self):
        if self.kind not in ("tabular", "knr", "version_space"):
            raise ConfigurationError(f"unknown model kind: {self.kind!r}")
        if self.t < 1:
            raise ConfigurationError("model index t must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.kind == "tabular":
            p = np.asarray(self.p_hat, dtype=float)
            if p.ndim != 3 or p.shape[0] != p.shape[2]:
                raise ConfigurationError("p_hat must have shape (S, A, S)")
            if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12) or np.any(p < 0):
                raise ConfigurationError("p_hat rows must be distributions")
            sig = np.asarray(self.sigma_table, dtype=float)
            if sig.shape != p.shape[:2] or np.any(sig < 0):
                raise ConfigurationError("sigma_table shape or sign mismatch")
            object.__setattr__(self, "p_hat", _frozen(p))
            object.__setattr__(self, "sigma_table", _frozen(sig))
        elif self.kind == "knr":
            for name in ("w_hat", "cov", "lam_ridge", "noise_std", "w_max",
                         "beta", "features"):
                if getattr(self, name) is None:
                    raise ConfigurationError(f"knr model missing {name}")
            w = np.asarray(self.w_hat, dtype=float)
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (w.shape[1], w.shape[1]):
                raise ConfigurationError("cov must be (d, d) matching w_hat")
            # cov = sum phi phi^T + lam I is symmetric PD by construction
            np.linalg.cholesky(c)
            object.__setattr__(self, "w_hat", _frozen(w))
            object.__setattr__(self, "cov", _frozen(c))
            object.__setattr__(self, "cov_inv", _frozen(np.linalg.inv(c)))
        else:
            if self.version_space is None:
                raise ConfigurationError("version_space model missing data")

    # dims
    @property
    def num_states(self) -> int:
        return self.p_hat.shape[0]

    @property
    def num_actions(self) -> int:
        return self.p_hat.shape[1]

    def kernel(self, h: int) -> Array:
        if self.kind != "tabular":
            raise ConfigurationError("kernel is defined for tabular models")
        return self.p_hat

    def sigma(self, s, a) -> float:
        """Confidence width, always capped at SIGMA_CAP."""
        if self.kind == "tabular":
            return float(min(self.sigma_table[int(s), int(a)], SIGMA_CAP))
        if self.kind == "knr":
            return float(min(knr_uncertainty(self, s, a), SIGMA_CAP))
        return self.version_space.uncertainty(s, a)

    def mean_prediction(self, s, a) -> Array:
        """Next-state mean: a distribution row (tabular) or a vector."""
        if self.kind == "tabular":
            return self.p_hat[int(s), int(a)].copy()
        if self.kind == "knr":
            phi = np.asarray(self.features(s, a), dtype=float)
            return self.w_hat @ phi
        return self.version_space.predict(s, a)


def fit_tabular(buffer: ReplayBuffer, t: int, delta: float) -> CalibratedModel:
    """Count-based model with width min{sqrt(S ln(t^2 S A / delta) / N), 2}.

    Unvisited (s, a) pairs fall back to the uniform row and the full cap.
    """
    if not buffer.tabular:
        raise ConfigurationError("fit_tabular needs a tabular buffer")
    if t < 1:
        raise ConfigurationError("model index t must be >= 1")
    counts = buffer.counts_sas
    s_dim, a_dim = counts.shape[0], counts.shape[1]
    n_sa = counts.sum(axis=2)
    p_hat = np.full((s_dim, a_dim, s_dim), 1.0 / s_dim)
    visited = n_sa > 0
    p_hat[visited] = counts[visited] / n_sa[visited][:, None]
    log_term = np.log(t**2 * s_dim * a_dim / delta)
    sigma = np.full((s_dim, a_dim), SIGMA_CAP)
    sigma[visited] = np.minimum(
        np.sqrt(s_dim * log_term / n_sa[visited]), SIGMA_CAP)
    return CalibratedModel(kind="tabular", t=t, delta=delta,
                           p_hat=p_hat, sigma_table=sigma)


def fit_knr_ridge(buffer: ReplayBuffer, features: Callable,
                  feature_dim: int, state_dim: int,
                  lam_ridge: float) -> tuple[Array, Array]:
    """Ridge regression of next states on features.

    Returns (w_hat, cov) with w_hat = (sum s' phi^T)(cov)^{-1} and
    cov = sum phi phi^T + lam I.  An empty buffer yields w_hat = 0.
    """
    if lam_ridge <= 0:
        raise ConfigurationError("lam_ridge must be positive")
    cov = lam_ridge * np.eye(feature_dim)
    moment = np.zeros((state_dim, feature_dim))
    for _, s, a, s_next in buffer:
        phi = np.asarray(features(s, a), dtype=float)
        cov += np.outer(phi, phi)
        moment += np.outer(np.atleast_1d(s_next), phi)
    w_hat = np.linalg.solve(cov, moment.T).T
    return w_hat, cov


def knr_beta(t: int, delta: float, lam_ridge: float, noise_std: float,
             w_max: float, state_dim: int, cov: Array) -> float:
    """Elliptical confidence radius for the ridge estimate at round t."""
    if t < 1:
        raise ConfigurationError("model index t must be >= 1")
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ConfigurationError("cov must be positive definite")
    log_ratio = logdet - d * np.log(lam_ridge)
    val = (2 * lam_ridge * w_max**2
           + 8 * noise_std**2 * (state_dim * np.log(5)
                                 + 2 * np.log(t**2 / delta)
                                 + np.log(4) + log_ratio))
    return float(np.sqrt(val))


def fit_knr_model(buffer: ReplayBuffer, features: Callable,
                  feature_dim: int, state_dim: int, lam_ridge: float,
                  noise_std: float, w_max: float, t: int,
                  delta: float) -> CalibratedModel:
    w_hat, cov = fit_knr_ridge(buffer, features, feature_dim, state_dim,
                               lam_ridge)
    beta = knr_beta(t, delta, lam_ridge, noise_std, w_max, state_dim, cov)
    return CalibratedModel(kind="knr", t=t, delta=delta, w_hat=w_hat,
                           cov=cov, lam_ridge=lam_ridge, noise_std=noise_std,
                           w_max=w_max, beta=beta, features=features)


def knr_uncertainty(model: CalibratedModel, s, a) -> float:
    """Raw width (beta / sigma) * |phi|_{cov^{-1}}, not capped."""
    if model.kind != "knr":
        raise ConfigurationError("knr_uncertainty needs a knr model")
    phi = np.asarray(model.features(s, a), dtype=float)
    quad = float(phi @ model.cov_inv @ phi)
    # clip tiny negative round-off from the explicit inverse
    quad = max(quad, 0.0)
    return model.beta / model.noise_std * np.sqrt(quad)


def fit_version_space(buffer: ReplayBuffer, hypotheses: Sequence[Callable],
                      noise_std: float, g_bound: float, t: int,
                      delta: float) -> VersionSpace:
    """Keep hypotheses within squared distance z_t of the LS winner.

    z_t = 2 sigma^2 G^2 ln(2 t^2 |G| / delta).  Distances compare
    predictions on the buffered (s, a) pairs, not excess losses.
    """
    if t < 1:
        raise ConfigurationError("model index t must be >= 1")
    if noise_std <= 0 or g_bound <= 0:
        raise ConfigurationError("noise_std and g_bound must be positive")
    hyps = tuple(hypotheses)
    if not hyps:
        raise ConfigurationError("version space needs >= 1 hypothesis")
    n_g = len(hyps)
    preds = []  # preds[i] = stacked predictions of hypothesis i
    targets = []
    for _, s, a, s_next in buffer:
        targets.append(np.atleast_1d(np.asarray(s_next, dtype=float)))
        preds.append([np.atleast_1d(np.asarray(g(s, a), dtype=float))
                      for g in hyps])
    z_t = 2 * noise_std**2 * g_bound**2 * np.log(2 * t**2 * n_g / delta)
    if not targets:
        return VersionSpace(hypotheses=hyps, lsq_index=0, threshold=float(z_t),
                            survivor_mask=np.ones(n_g, dtype=bool),
                            noise_std=noise_std)
    losses = np.zeros(n_g)
    for row, y in zip(preds, targets):
        for i in range(n_g):
            losses[i] += float(np.sum((row[i] - y) ** 2))
    winner = int(np.argmin(losses))
    dist = np.zeros(n_g)
    for row in preds:
        ref = row[winner]
        for i in range(n_g):
            dist[i] += float(np.sum((row[i] - ref) ** 2))
    mask = dist <= z_t
    return VersionSpace(hypotheses=hyps, lsq_index=winner,
                        threshold=float(z_t), survivor_mask=mask,
                        noise_std=noise_std)


@dataclass(frozen=True)
class BonusFunction:
    """Per-(s, a) exploration bonus with a known upper bound."""

    mode: str
    fn: Callable = field(repr=False)
    upper: float
    table: Array | None = None

    def __post_init__(self):
        if self.mode not in ("theory", "ensemble"):
            raise ConfigurationError(f"unknown bonus mode: {self.mode!r}")
        if self.table is not None:
            tab = np.asarray(self.table, dtype=float)
            if np.any(tab < 0) or np.any(tab > self.upper + 1e-12):
                raise ConfigurationError("bonus table out of [0, upper]")
            object.__setattr__(self, "table", _frozen(tab))

    def __call__(self, s, a) -> float:
        if self.table is not None:
            return float(self.table[int(s), int(a)])
        return float(self.fn(s, a))


def theory_bonus(model: CalibratedModel, horizon: int) -> BonusFunction:
    """b(s, a) = H * min{sigma(s, a), 2}, so b is bounded by 2H."""
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    table = None
    if model.kind == "tabular":
        table = horizon * np.minimum(model.sigma_table, SIGMA_CAP)
    return BonusFunction(
        mode="theory",
        fn=lambda s, a: horizon * min(model.sigma(s, a), SIGMA_CAP),
        upper=SIGMA_CAP * horizon, table=table)


def ensemble_bonus(model_a: CalibratedModel, model_b: CalibratedModel,
                   buffer: ReplayBuffer, lam_bonus: float) -> BonusFunction:
    """Disagreement bonus b = lam * min{1, delta(s,a) / delta_max}.

    delta(s, a) is the L2 gap between the two models' mean predictions
    and delta_max its maximum over the buffer.  An all-zero disagreement
    over the buffer gives the zero bonus.
    """
    if lam_bonus < 0:
        raise ConfigurationError("lam_bonus must be >= 0")

    def gap(s, a) -> float:
        return float(np.linalg.norm(
            model_a.mean_prediction(s, a) - model_b.mean_prediction(s, a)))

    delta_max = 0.0
    for _, s, a, _ in buffer:
        delta_max = max(delta_max, gap(s, a))

    if delta_max == 0.0:
        fn = lambda s, a: 0.0
    else:
        fn = lambda s, a: lam_bonus * min(1.0, gap(s, a) / delta_max)

    table = None
    if model_a.kind == "tabular" and model_b.kind == "tabular":
        tab = np.zeros((model_a.num_states, model_a.num_actions))
        for s in range(model_a.num_states):
            for a in range(model_a.num_actions):
                tab[s, a] = fn(s, a)
        table = tab
    return BonusFunction(mode="ensemble", fn=fn, upper=lam_bonus, table=table)
