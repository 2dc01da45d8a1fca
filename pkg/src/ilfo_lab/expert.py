"""Expert construction and state-only demonstration datasets.

Datasets deliberately carry no action information: the learner sees states and
nothing else. The single-sample view draws one state per trajectory uniformly
over the H decision steps, which makes its draws i.i.d. from the expert's
average state occupancy; the flat view exposes all decision-step states.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .envs import (
    ConfigurationError,
    KnrSystem,
    Policy,
    TabularMdp,
    rollout,
)

Array = np.ndarray

OPENLOOP_SEARCH_LIMIT = 1_000_000


@dataclass(frozen=True)
class ExpertDataset:
    """N state-only trajectories of equal length H+1."""

    trajectories: tuple

    def __post_init__(self):
        trajs = tuple(np.asarray(t) for t in self.trajectories)
        if not trajs:
            raise ConfigurationError("dataset needs at least one trajectory")
        lengths = {len(t) for t in trajs}
        if len(lengths) != 1:
            raise ConfigurationError("trajectories must share one horizon")
        if next(iter(lengths)) < 2:
            raise ConfigurationError("trajectories must contain at least s_0 and s_1")
        frozen = []
        for t in trajs:
            c = np.array(t, copy=True)
            c.setflags(write=False)
            frozen.append(c)
        object.__setattr__(self, "trajectories", tuple(frozen))

    @property
    def num_trajectories(self) -> int:
        return len(self.trajectories)

    @property
    def horizon(self) -> int:
        return len(self.trajectories[0]) - 1

    def single_sample_view(self, rng: np.random.Generator) -> Array:
        """One uniformly-timed decision-step state per trajectory (i.i.d. draws)."""
        H = self.horizon
        picks = rng.integers(0, H, size=self.num_trajectories)
        return np.stack([traj[h] for traj, h in zip(self.trajectories, picks)])

    def flat_view(self) -> Array:
        """All decision-step states (s_0..s_{H-1} of every trajectory), stacked."""
        H = self.horizon
        return np.concatenate([np.asarray(t[:H]) for t in self.trajectories])

    def state_distribution(self, num_states: int) -> Array:
        """Empirical state distribution of the flat view (tabular states only)."""
        flat = self.flat_view()
        if flat.ndim != 1:
            raise ConfigurationError("state_distribution needs integer states")
        return np.bincount(flat.astype(int), minlength=num_states) / len(flat)


def solve_optimal_tabular(mdp: TabularMdp) -> Policy:
    """Cost-minimizing deterministic nonstationary policy via backward recursion.

    Ties go to the lowest action index.
    """
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    v = np.zeros(S)
    greedy = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        q = mdp.cost[:, None] + mdp.kernel(h) @ v
        greedy[h] = np.argmin(q, axis=1)
        v = q[np.arange(S), greedy[h]]
    return Policy.deterministic(greedy, num_actions=A)


def solve_openloop_knr(system: KnrSystem, n_eval_rollouts: int = 0,
                       rng: np.random.Generator | None = None) -> Policy:
    """Best open-loop action sequence under the noise-free nominal dynamics.

    Scores every one of the A^H sequences on the deterministic rollout
    (noise treated as zero), so ``n_eval_rollouts`` and ``rng`` do not affect
    the selection; they are accepted for interface stability only. Ties go to
    the lexicographically smallest sequence.
    """
    A, H = system.num_actions, system.horizon
    if A ** H > OPENLOOP_SEARCH_LIMIT:
        raise ConfigurationError(
            f"open-loop search space {A}^{H} exceeds {OPENLOOP_SEARCH_LIMIT}")

    # breadth-first expansion shares prefix rollouts; lexicographic order is
    # preserved because actions are expanded in increasing index order
    states = [np.array(system.init_state, dtype=float)]
    costs = np.array([0.0])
    for _ in range(H):
        step_cost = np.array([system.cost_of(s) for s in states])
        new_states = []
        new_costs = np.empty(len(states) * A)
        for i, s in enumerate(states):
            base = costs[i] + step_cost[i]
            for a in range(A):
                new_states.append(system.weights @ system.feature(s, a))
                new_costs[i * A + a] = base
        states = new_states
        costs = new_costs
    best = int(np.argmin(costs))
    seq = []
    for _ in range(H):
        seq.append(best % A)
        best //= A
    return Policy.open_loop(list(reversed(seq)))


def sample_expert_states(env, expert: Policy, n_trajectories: int,
                         rng: np.random.Generator) -> ExpertDataset:
    """Roll the expert ``n_trajectories`` times and keep only the states."""
    if n_trajectories < 1:
        raise ConfigurationError("need at least one trajectory")
    trajs = []
    for _ in range(n_trajectories):
        trajs.append(rollout(env, expert, rng).states)
    return ExpertDataset(trajectories=tuple(trajs))


def save_expert_dataset(dataset: ExpertDataset, path: str) -> None:
    """Line-oriented text format: one trajectory per line, numbers comma-joined."""
    first = np.asarray(dataset.trajectories[0])
    vector = first.ndim == 2
    dim = first.shape[1] if vector else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# horizon={dataset.horizon} state_dim={dim}\n")
        for traj in dataset.trajectories:
            flat = np.asarray(traj).reshape(-1)
            if vector:
                fh.write(",".join(format(x, ".17g") for x in flat) + "\n")
            else:
                fh.write(",".join(str(int(x)) for x in flat) + "\n")


def load_expert_dataset(path: str) -> ExpertDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# horizon="):
            raise ConfigurationError("missing dataset header")
        fields = dict(part.split("=") for part in header[2:].split())
        horizon = int(fields["horizon"])
        dim = int(fields["state_dim"])
        trajs = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vals = [float(x) for x in line.split(",")]
            if dim > 0:
                arr = np.array(vals).reshape(horizon + 1, dim)
            else:
                arr = np.array([int(v) for v in vals], dtype=int)
                if len(arr) != horizon + 1:
                    raise ConfigurationError("trajectory length mismatch")
            trajs.append(arr)
    return ExpertDataset(trajectories=tuple(trajs))
