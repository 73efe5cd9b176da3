"""Q-learning on reward machines.

The decentralized trainer gives each agent its own projected machine and
trains one q-table per machine state, re-evaluating the labeling under
every machine state each step so a single trajectory updates all of them
(exactly |U| writes per environment step). Shared events are simulated
during training by a synchronization coin; at execution time the agents
run greedily in lockstep and their proposals go through the real
synchronization barrier.

Baselines: independent q-learning over a task-progress memory,
hierarchical independent learners over navigation options, and a
centralized monolithic learner on the joint state and action space. The
centralized learner refuses up front when its q-bank would not fit the
budget, reporting the estimate.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .environments import (
    STAY,
    DomainBundle,
    IndividualGridEnv,
    TeamGridEnv,
)
from .machine import RewardMachine

__all__ = [
    "TrainerConfig",
    "EpisodeResult",
    "BudgetExceededError",
    "softmax_select",
    "greedy_select",
    "QRMTrainer",
    "dqprm_execute",
    "DQPRMRunner",
    "IQLRunner",
    "HILRunner",
    "CQRMRunner",
    "ALGORITHMS",
    "make_runner",
    "save_snapshot",
    "load_snapshot",
]

HOLD_LIMIT = 10
NAVIGATE_LIMIT = 50


@dataclass(frozen=True)
class TrainerConfig:
    """Learning hyperparameters and schedule, shared by every algorithm.

    The schedule fields (total_steps, test_every, test_episodes, seed)
    are read by the experiment harness; the runners themselves only
    consume the learning constants.
    """

    gamma: float = 0.9
    alpha: float = 0.8
    tau: float = 0.02
    sync_prob: float = 0.3
    episode_len: int = 1000
    total_steps: int = 20_000
    test_every: int = 1000
    test_episodes: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.sync_prob <= 1.0:
            raise ValueError("sync_prob must be in (0, 1]")
        if self.episode_len < 1:
            raise ValueError("episode_len must be at least 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must not be negative")
        if self.test_every < 1:
            raise ValueError("test_every must be at least 1")
        if self.test_episodes < 1:
            raise ValueError("test_episodes must be at least 1")


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of one greedy test episode.

    steps equals the horizon when the team did not finish in time;
    local_completed is empty for the centralized algorithms.
    """

    steps: int
    completed: bool
    local_completed: tuple[bool, ...] = ()


class BudgetExceededError(RuntimeError):
    """A q-bank allocation would blow the entry budget."""

    def __init__(self, estimate: int, limit: int):
        self.estimate = estimate
        self.limit = limit
        super().__init__(
            f"centralized training would allocate about {estimate:.2e} "
            f"q-entries, over the budget of {limit:.2e}; train with the "
            f"decentralized algorithm instead"
        )


def softmax_select(q_row: np.ndarray, tau: float, rng: np.random.Generator) -> int:
    """Boltzmann action choice; consumes exactly one uniform draw."""
    z = np.asarray(q_row, dtype=float) / tau
    z -= z.max()
    p = np.exp(z)
    cum = np.cumsum(p)
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(k, len(cum) - 1)


def greedy_select(q_row: np.ndarray) -> int:
    """Lowest-index argmax, so greedy rollouts are deterministic."""
    return int(np.argmax(q_row))


class QRMTrainer:
    """Q-learning over one reward machine with counterfactual updates.

    After each environment step the labeling is re-evaluated under every
    machine state and each state's q-table is written once: len(rm.states)
    writes per step, no more, no less. Episodes restart when the machine
    reaches a final state (checked before acting) or at episode_len steps.

    label_of(s, u) must return the events observed on arriving in
    environment state s while the machine sits at u, already ordered.
    Shared events fire during training only when the per-step
    synchronization coin (drawn from sync_rng) comes up under sync_prob;
    pass sync_rng=None to make every event fire unconditionally.
    """

    def __init__(
        self,
        env,
        rm: RewardMachine,
        label_of: Callable[[int, str], tuple[str, ...]],
        occurred: Mapping[str, frozenset[str]],
        config: TrainerConfig,
        rng: np.random.Generator,
        *,
        shared_events: frozenset[str] = frozenset(),
        sync_rng: np.random.Generator | None = None,
        write_hook: Callable[[str, int, int, float], None] | None = None,
    ):
        if rm.initial in rm.final_states:
            raise ValueError("machine initial state is final; nothing to learn")
        self.env = env
        self.rm = rm
        self.label_of = label_of
        self.occurred = occurred
        self.config = config
        self.rng = rng
        self.shared_events = frozenset(shared_events)
        self.sync_rng = sync_rng
        self.write_hook = write_hook
        self.q: dict[str, np.ndarray] = {
            u: np.zeros((env.num_states, env.num_actions)) for u in rm.states
        }
        self._labels: dict[tuple[int, str], tuple[str, ...]] = {}
        self.s = env.reset(rng)
        self.u = rm.initial
        self.episode_steps = 0
        self.total_steps = 0

    def _label(self, s: int, u: str) -> tuple[str, ...]:
        key = (s, u)
        got = self._labels.get(key)
        if got is None:
            got = tuple(self.label_of(s, u))
            self._labels[key] = got
        return got

    def _fold(
        self, u: str, events: tuple[str, ...], fire_shared: bool
    ) -> tuple[str, float]:
        finals = self.rm.final_states
        reward = 0.0
        for e in events:
            if not fire_shared and e in self.shared_events:
                continue
            v = self.rm.delta.get((u, e))
            if v is None:
                continue
            if v in finals and u not in finals:
                reward = 1.0
            u = v
        return u, reward

    def run_steps(self, n: int) -> None:
        for _ in range(n):
            self._step()

    def _step(self) -> None:
        cfg = self.config
        if self.u in self.rm.final_states or self.episode_steps >= cfg.episode_len:
            self.s = self.env.reset(self.rng)
            self.u = self.rm.initial
            self.episode_steps = 0
        s, u = self.s, self.u
        a = softmax_select(self.q[u][s], cfg.tau, self.rng)
        s2 = self.env.step(s, a, self.occurred[u], self.rng)
        fire = True
        if self.sync_rng is not None:
            fire = self.sync_rng.random() < cfg.sync_prob
        nxt = u
        for v in self.rm.states:
            v2, r = self._fold(v, self._label(s2, v), fire)
            if v2 in self.rm.final_states:
                target = r
            else:
                target = r + cfg.gamma * float(self.q[v2][s2].max())
            row = self.q[v]
            row[s, a] = (1.0 - cfg.alpha) * row[s, a] + cfg.alpha * target
            if self.write_hook is not None:
                self.write_hook(v, s, a, float(row[s, a]))
            if v == u:
                nxt = v2
        self.s = s2
        self.u = nxt
        self.episode_steps += 1
        self.total_steps += 1

    def greedy_action(self, s: int, u: str) -> int:
        return greedy_select(self.q[u][s])

    def test_episode(
        self, rng: np.random.Generator, max_steps: int | None = None
    ) -> tuple[int, bool]:
        """Greedy rollout with shared events assumed to synchronize.

        Returns (steps to completion, completed); steps caps at the horizon.
        """
        limit = self.config.episode_len if max_steps is None else max_steps
        s = self.env.reset(rng)
        u = self.rm.initial
        if u in self.rm.final_states:
            return 0, True
        for t in range(1, limit + 1):
            a = self.greedy_action(s, u)
            s = self.env.step(s, a, self.occurred[u], rng)
            u, _ = self._fold(u, self._label(s, u), True)
            if u in self.rm.final_states:
                return t, True
        return limit, False


def dqprm_execute(
    bundle: DomainBundle,
    qtables: Sequence[Mapping[str, np.ndarray]],
    rng: np.random.Generator,
    max_steps: int = 1000,
) -> EpisodeResult:
    """One greedy decentralized episode with true event synchronization.

    Each agent follows its own q-tables over its own projected machine,
    gated by its own view of which events have occurred. Proposed events
    pass through the synchronization barrier; a team-machine shadow
    follows along and the projection invariant (each agent's machine
    state names the block of the team state) is checked every step.
    """
    n = bundle.num_agents
    envs = [IndividualGridEnv(bundle.domain, i) for i in range(n)]
    machines = bundle.local_machines()
    s = [env.reset(rng) for env in envs]
    us = [m.initial for m in machines]
    u_team = bundle.rm.initial
    team_finals = bundle.rm.final_states

    def check_blocks(t: int) -> None:
        for i in range(n):
            want = bundle.projections[i].partition.name_of(u_team)
            if us[i] != want:
                raise RuntimeError(
                    f"decomposition invariant violated at step {t}: team state "
                    f"{u_team} lies in block {want} of agent {i}, which is at "
                    f"{us[i]}"
                )

    check_blocks(0)
    if u_team in team_finals:
        return EpisodeResult(0, True, tuple(True for _ in range(n)))

    steps, completed = max_steps, False
    for t in range(1, max_steps + 1):
        for i in range(n):
            if us[i] in machines[i].final_states:
                a = STAY
            else:
                a = greedy_select(qtables[i][us[i]][s[i]])
            s[i] = envs[i].step(s[i], a, bundle.local_occurred[i][us[i]], rng)
        cells = tuple(envs[i].cells[s[i]] for i in range(n))
        synced = list(
            synchronized_proposals(bundle, cells, us)
        )
        for i in range(n):
            for e in synced[i]:
                v = machines[i].delta.get((us[i], e))
                if v is not None:
                    us[i] = v
        label = bundle.team_labeling.label(cells, u_team)
        for e in bundle.index.ordered(label):
            v = bundle.rm.delta.get((u_team, e))
            if v is not None:
                u_team = v
        check_blocks(t)
        if not completed and u_team in team_finals:
            steps, completed = t, True
            break

    local_done = tuple(us[i] in machines[i].final_states for i in range(n))
    if completed and not all(local_done):
        raise RuntimeError(
            "team machine finished but some local machine did not: "
            f"{[m.initial for m in machines]} -> {us}"
        )
    return EpisodeResult(steps, completed, local_done)


def synchronized_proposals(
    bundle: DomainBundle, cells: Sequence, us: Sequence[str]
) -> tuple[frozenset[str], ...]:
    """Each agent's surviving proposal at the given cells and machine states."""
    from .labeling import synchronize

    proposals = [
        bundle.local_labelings[i].label(cells[i], us[i])
        for i in range(bundle.num_agents)
    ]
    return synchronize(proposals, bundle.index)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class DQPRMRunner:
    """Decentralized training: one QRMTrainer per agent, no joint state.

    run_steps(n) advances every agent by n environment steps, so step
    counts are per agent and comparable with the joint algorithms' step
    counts.
    """

    algorithm = "dqprm"

    def __init__(self, bundle: DomainBundle, config: TrainerConfig, seed=0):
        self.bundle = bundle
        self.config = config
        children = _seed_sequence(seed).spawn(2 * bundle.num_agents + 1)
        self.trainers: list[QRMTrainer] = []
        for i in range(bundle.num_agents):
            env = IndividualGridEnv(bundle.domain, i)
            labeling = bundle.local_labelings[i]

            def label_of(s_idx, u, _labeling=labeling, _cells=env.cells):
                return tuple(_labeling.label(_cells[s_idx], u))

            shared = frozenset(
                e for e in bundle.sigmas[i] if bundle.index.is_shared(e)
            )
            self.trainers.append(
                QRMTrainer(
                    env,
                    bundle.projections[i].machine,
                    label_of,
                    bundle.local_occurred[i],
                    config,
                    np.random.default_rng(children[2 * i]),
                    shared_events=shared,
                    sync_rng=np.random.default_rng(children[2 * i + 1]),
                )
            )
        self.test_rng = np.random.default_rng(children[-1])

    def run_steps(self, n: int) -> None:
        for trainer in self.trainers:
            trainer.run_steps(n)

    def test_episode(self, rng: np.random.Generator | None = None) -> EpisodeResult:
        return dqprm_execute(
            self.bundle,
            [t.q for t in self.trainers],
            self.test_rng if rng is None else rng,
            self.config.episode_len,
        )

    def snapshot_arrays(self) -> dict[str, np.ndarray]:
        return {
            f"agent{i}::{u}": t.q[u]
            for i, t in enumerate(self.trainers)
            for u in t.rm.states
        }

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for i, t in enumerate(self.trainers):
            for u in t.rm.states:
                key = f"agent{i}::{u}"
                if key not in arrays:
                    raise KeyError(f"snapshot is missing {key!r}")
                if arrays[key].shape != t.q[u].shape:
                    raise ValueError(f"snapshot array {key!r} has the wrong shape")
                t.q[u] = np.array(arrays[key], dtype=float)


class _JointRunnerBase:
    """Common joint-simulation scaffolding for the flat baselines."""

    def __init__(self, bundle: DomainBundle, config: TrainerConfig, num_streams: int, seed):
        self.bundle = bundle
        self.config = config
        children = _seed_sequence(seed).spawn(num_streams + 1)
        self.rngs = [np.random.default_rng(c) for c in children[:-1]]
        self.test_rng = np.random.default_rng(children[-1])
        self.envs = [
            IndividualGridEnv(bundle.domain, i) for i in range(bundle.num_agents)
        ]
        self.total_steps = 0
        self._reset()

    def _reset(self) -> None:
        self.s = [env.start for env in self.envs]
        self.u_team = self.bundle.rm.initial
        self.episode_steps = 0

    def _cells(self, s: Sequence[int]) -> tuple:
        return tuple(self.envs[i].cells[s[i]] for i in range(len(s)))

    def _fold_team(self, u: str, cells) -> tuple[str, float]:
        rm = self.bundle.rm
        label = self.bundle.team_labeling.label(cells, u)
        reward = 0.0
        for e in self.bundle.index.ordered(label):
            v = rm.delta.get((u, e))
            if v is None:
                continue
            if v in rm.final_states and u not in rm.final_states:
                reward = 1.0
            u = v
        return u, reward

    def run_steps(self, n: int) -> None:
        for _ in range(n):
            self._step()
            self.total_steps += 1


class IQLRunner(_JointRunnerBase):
    """Independent q-learning over (task memory, own cell) states.

    All agents act in the same episode; each one keeps its own q-table
    indexed by the shared task-progress memory and its own position, and
    everyone receives the team reward.
    """

    algorithm = "iql"

    def __init__(self, bundle: DomainBundle, config: TrainerConfig, seed=0):
        super().__init__(bundle, config, bundle.num_agents, seed)
        self.q = [
            np.zeros((bundle.num_memories, env.num_states, env.num_actions))
            for env in self.envs
        ]

    def _step(self) -> None:
        cfg = self.config
        bundle = self.bundle
        if (
            self.u_team in bundle.rm.final_states
            or self.episode_steps >= cfg.episode_len
        ):
            self._reset()
        m = bundle.memory_of[self.u_team]
        occ = bundle.team_occurred[self.u_team]
        actions = [
            softmax_select(self.q[i][m, self.s[i]], cfg.tau, self.rngs[i])
            for i in range(bundle.num_agents)
        ]
        s2 = [
            self.envs[i].step(self.s[i], actions[i], occ, self.rngs[i])
            for i in range(bundle.num_agents)
        ]
        u2, r = self._fold_team(self.u_team, self._cells(s2))
        m2 = bundle.memory_of[u2]
        done = u2 in bundle.rm.final_states
        for i in range(bundle.num_agents):
            if done:
                target = r
            else:
                target = r + cfg.gamma * float(self.q[i][m2, s2[i]].max())
            old = self.q[i][m, self.s[i], actions[i]]
            self.q[i][m, self.s[i], actions[i]] = (
                1.0 - cfg.alpha
            ) * old + cfg.alpha * target
        self.s = s2
        self.u_team = u2
        self.episode_steps += 1

    def test_episode(self, rng: np.random.Generator | None = None) -> EpisodeResult:
        rng = self.test_rng if rng is None else rng
        bundle = self.bundle
        limit = self.config.episode_len
        s = [env.start for env in self.envs]
        u = bundle.rm.initial
        if u in bundle.rm.final_states:
            return EpisodeResult(0, True)
        for t in range(1, limit + 1):
            m = bundle.memory_of[u]
            occ = bundle.team_occurred[u]
            s = [
                self.envs[i].step(
                    s[i], greedy_select(self.q[i][m, s[i]]), occ, rng
                )
                for i in range(bundle.num_agents)
            ]
            u, _ = self._fold_team(u, self._cells(s))
            if u in bundle.rm.final_states:
                return EpisodeResult(t, True)
        return EpisodeResult(limit, False)

    def snapshot_arrays(self) -> dict[str, np.ndarray]:
        return {f"agent{i}::q": q for i, q in enumerate(self.q)}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for i in range(self.bundle.num_agents):
            key = f"agent{i}::q"
            if key not in arrays:
                raise KeyError(f"snapshot is missing {key!r}")
            if arrays[key].shape != self.q[i].shape:
                raise ValueError(f"snapshot array {key!r} has the wrong shape")
            self.q[i] = np.array(arrays[key], dtype=float)


@dataclass
class _ActiveOption:
    index: int
    start_memory: int
    steps: int = 0
    reward: float = 0.0


class HILRunner(_JointRunnerBase):
    """Hierarchical independent learners over navigation options.

    Each agent picks among a "remain" option (wander in place for a few
    steps) and the domain's navigate options (available once their
    required events have occurred). Options run call-and-return: once
    picked, one executes until its own termination (target reached or
    the step cap), so agents react to team events only at option
    boundaries. Option policies learn a pseudo-reward of 1 at the
    target; the meta level learns from accumulated discounted team
    reward with an SMDP bootstrap.
    """

    algorithm = "hil"

    def __init__(self, bundle: DomainBundle, config: TrainerConfig, seed=0):
        super().__init__(bundle, config, bundle.num_agents, seed)
        self.options = [
            (None, *bundle.options_for(i)) for i in range(bundle.num_agents)
        ]
        self.meta_q = [
            np.zeros((bundle.num_memories, len(self.options[i])))
            for i in range(bundle.num_agents)
        ]
        self.opt_q = [
            {
                k: np.zeros((env.num_states, env.num_actions))
                for k in range(1, len(self.options[i]))
            }
            for i, env in enumerate(self.envs)
        ]
        self.active: list[_ActiveOption | None] = [None] * bundle.num_agents

    def _available(self, agent: int, memory: int) -> list[int]:
        events = self.bundle.memories[memory]
        out = [0]
        for k, option in enumerate(self.options[agent]):
            if k == 0:
                continue
            if all(e in events for e in option.requires):
                out.append(k)
        return out

    def _pick_option(self, agent: int, memory: int, rng, greedy: bool) -> int:
        avail = self._available(agent, memory)
        rows = self.meta_q[agent][memory, avail]
        if greedy:
            return avail[greedy_select(rows)]
        return avail[softmax_select(rows, self.config.tau, rng)]

    def _primitive(self, agent: int, option_index: int, s: int, rng, greedy: bool) -> int:
        # the remain option wanders: any move that keeps the agent nearby
        # qualifies, so it draws uniformly rather than following a q-row
        if option_index == 0:
            return int(rng.integers(self.envs[agent].num_actions))
        row = self.opt_q[agent][option_index][s]
        if greedy:
            return greedy_select(row)
        return softmax_select(row, self.config.tau, rng)

    def _option_done(self, agent: int, active: _ActiveOption, s: int) -> bool:
        if active.index == 0:
            return active.steps >= HOLD_LIMIT
        target = self.options[agent][active.index].target
        return (
            self.envs[agent].cells[s] == target
            or active.steps >= NAVIGATE_LIMIT
        )

    def _finish(self, agent: int, active: _ActiveOption, memory: int, terminal: bool) -> None:
        cfg = self.config
        if terminal:
            boot = 0.0
        else:
            avail = self._available(agent, memory)
            boot = cfg.gamma**active.steps * float(
                self.meta_q[agent][memory, avail].max()
            )
        old = self.meta_q[agent][active.start_memory, active.index]
        self.meta_q[agent][active.start_memory, active.index] = (
            1.0 - cfg.alpha
        ) * old + cfg.alpha * (active.reward + boot)
        self.active[agent] = None

    def _step(self) -> None:
        cfg = self.config
        bundle = self.bundle
        n = bundle.num_agents
        if (
            self.u_team in bundle.rm.final_states
            or self.episode_steps >= cfg.episode_len
        ):
            self._reset()
            self.active = [None] * n
        m = bundle.memory_of[self.u_team]
        occ = bundle.team_occurred[self.u_team]
        actions = []
        starts = list(self.s)
        for i in range(n):
            if self.active[i] is None:
                self.active[i] = _ActiveOption(
                    self._pick_option(i, m, self.rngs[i], greedy=False), m
                )
            actions.append(
                self._primitive(
                    i, self.active[i].index, self.s[i], self.rngs[i], greedy=False
                )
            )
        s2 = [
            self.envs[i].step(self.s[i], actions[i], occ, self.rngs[i])
            for i in range(n)
        ]
        u2, r = self._fold_team(self.u_team, self._cells(s2))
        m2 = bundle.memory_of[u2]
        done = u2 in bundle.rm.final_states
        for i in range(n):
            active = self.active[i]
            active.reward += cfg.gamma**active.steps * r
            active.steps += 1
            if active.index != 0:
                target = self.options[i][active.index].target
                reached = self.envs[i].cells[s2[i]] == target
                pseudo = 1.0 if reached else 0.0
                if reached:
                    goal = pseudo
                else:
                    goal = pseudo + cfg.gamma * float(
                        self.opt_q[i][active.index][s2[i]].max()
                    )
                table = self.opt_q[i][active.index]
                old = table[starts[i], actions[i]]
                table[starts[i], actions[i]] = (
                    1.0 - cfg.alpha
                ) * old + cfg.alpha * goal
            if done or self._option_done(i, active, s2[i]):
                self._finish(i, active, m2, terminal=done)
        self.s = s2
        self.u_team = u2
        self.episode_steps += 1

    def test_episode(self, rng: np.random.Generator | None = None) -> EpisodeResult:
        rng = self.test_rng if rng is None else rng
        bundle = self.bundle
        n = bundle.num_agents
        limit = self.config.episode_len
        s = [env.start for env in self.envs]
        u = bundle.rm.initial
        if u in bundle.rm.final_states:
            return EpisodeResult(0, True)
        active: list[_ActiveOption | None] = [None] * n
        for t in range(1, limit + 1):
            m = bundle.memory_of[u]
            occ = bundle.team_occurred[u]
            for i in range(n):
                if active[i] is None:
                    active[i] = _ActiveOption(
                        self._pick_option(i, m, rng, greedy=True), m
                    )
            s = [
                self.envs[i].step(
                    s[i],
                    self._primitive(i, active[i].index, s[i], rng, greedy=True),
                    occ,
                    rng,
                )
                for i in range(n)
            ]
            u, _ = self._fold_team(u, self._cells(s))
            if u in bundle.rm.final_states:
                return EpisodeResult(t, True)
            for i in range(n):
                active[i].steps += 1
                if self._option_done(i, active[i], s[i]):
                    active[i] = None
        return EpisodeResult(limit, False)

    def snapshot_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i in range(self.bundle.num_agents):
            out[f"agent{i}::meta"] = self.meta_q[i]
            for k, table in self.opt_q[i].items():
                out[f"agent{i}::opt{k}"] = table
        return out

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for i in range(self.bundle.num_agents):
            key = f"agent{i}::meta"
            if key not in arrays:
                raise KeyError(f"snapshot is missing {key!r}")
            self.meta_q[i] = np.array(arrays[key], dtype=float)
            for k in self.opt_q[i]:
                key = f"agent{i}::opt{k}"
                if key not in arrays:
                    raise KeyError(f"snapshot is missing {key!r}")
                self.opt_q[i][k] = np.array(arrays[key], dtype=float)


class CQRMRunner:
    """Centralized learner on the joint state and action space.

    Uses the same counterfactual trainer as the decentralized algorithm
    but against the full team machine, so the q-bank scales with
    cells^N * actions^N * machine states. Construction refuses when that
    exceeds max_q_entries.
    """

    algorithm = "cqrm"

    def __init__(
        self,
        bundle: DomainBundle,
        config: TrainerConfig,
        seed=0,
        *,
        max_q_entries: int = 50_000_000,
    ):
        self.bundle = bundle
        self.config = config
        env = TeamGridEnv(bundle.domain)
        estimate = len(bundle.rm.states) * env.num_states * env.num_actions
        if estimate > max_q_entries:
            raise BudgetExceededError(estimate, max_q_entries)
        children = _seed_sequence(seed).spawn(2)

        def label_of(s_idx, u, _env=env, _bundle=bundle):
            label = _bundle.team_labeling.label(_env.decode(s_idx), u)
            return _bundle.index.ordered(label)

        self.trainer = QRMTrainer(
            env,
            bundle.rm,
            label_of,
            bundle.team_occurred,
            config,
            np.random.default_rng(children[0]),
        )
        self.test_rng = np.random.default_rng(children[1])

    def run_steps(self, n: int) -> None:
        self.trainer.run_steps(n)

    def test_episode(self, rng: np.random.Generator | None = None) -> EpisodeResult:
        steps, completed = self.trainer.test_episode(
            self.test_rng if rng is None else rng
        )
        return EpisodeResult(steps, completed)

    def snapshot_arrays(self) -> dict[str, np.ndarray]:
        return {f"team::{u}": self.trainer.q[u] for u in self.bundle.rm.states}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for u in self.bundle.rm.states:
            key = f"team::{u}"
            if key not in arrays:
                raise KeyError(f"snapshot is missing {key!r}")
            if arrays[key].shape != self.trainer.q[u].shape:
                raise ValueError(f"snapshot array {key!r} has the wrong shape")
            self.trainer.q[u] = np.array(arrays[key], dtype=float)


ALGORITHMS = {
    "dqprm": DQPRMRunner,
    "iql": IQLRunner,
    "hil": HILRunner,
    "cqrm": CQRMRunner,
}


def make_runner(
    algorithm: str, bundle: DomainBundle, config: TrainerConfig, seed=0, **kwargs
):
    if algorithm not in ALGORITHMS:
        known = ", ".join(sorted(ALGORITHMS))
        raise ValueError(f"unknown algorithm {algorithm!r} (known: {known})")
    return ALGORITHMS[algorithm](bundle, config, seed, **kwargs)


def save_snapshot(path, runner) -> None:
    """Write a runner's q-bank plus metadata to a single .npz file."""
    meta = {
        "format": 1,
        "algorithm": runner.algorithm,
        "domain": runner.bundle.name,
        "config": dataclasses.asdict(runner.config),
    }
    np.savez_compressed(
        path, __meta__=np.array(json.dumps(meta)), **runner.snapshot_arrays()
    )


def load_snapshot(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (metadata, arrays) from a snapshot file."""
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path} is not a q-bank snapshot")
        meta = json.loads(str(data["__meta__"][()]))
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return meta, arrays
