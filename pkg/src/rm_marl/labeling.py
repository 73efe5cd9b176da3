"""Team and local labeling functions over grid domains.

A labeling function turns low-level environment states into the abstract
events a reward machine consumes. The team labeling sees the joint state;
each agent's local labeling sees only that agent's position and projected
machine state, and proposes an event whenever some teammate configuration
consistent with its view would make the team labeling fire. Shared events
then pass a synchronization barrier: they fire only when every collaborator
proposes them in the same step.

Trajectory labeling is synchronous: the label observed on arriving in a
state is evaluated against the current machine state and folded into it
before the next step, identically on the team and local sides. That
symmetry is what keeps the per-agent event strings equal to the natural
projections of the team string. Labels are sets; concurrent events are
folded in a fixed interleaving order (ascending first-collaborator index,
then event name), and a well-formed domain makes the order immaterial.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .algebra import ProjectedRM
from .machine import RewardMachine

__all__ = [
    "Requirement",
    "LabelingRule",
    "CollaboratorIndex",
    "TeamLabeling",
    "LocalLabeling",
    "LabeledTrajectory",
    "LabelingReport",
    "DomainTooLargeError",
    "local_labelings",
    "synchronize",
    "team_labeled_trajectory",
    "local_labeled_trajectories",
    "check_projection_consistency",
    "check_label_decomposability",
    "verify_labeling_factored",
]

Cell = tuple[int, int]


@dataclass(frozen=True)
class Requirement:
    """Position condition on one agent: inside (or, negated, outside) a
    cell set."""

    agent: int
    cells: frozenset[Cell]
    negate: bool = False

    def holds(self, pos: Cell) -> bool:
        return (pos in self.cells) != self.negate


@dataclass(frozen=True)
class LabelingRule:
    """One event trigger: fires when the machine state is in `guard` and
    every requirement holds at the joint position."""

    event: str
    guard: frozenset[str]
    requirements: tuple[Requirement, ...]

    def requirements_on(self, agent: int) -> tuple[Requirement, ...]:
        return tuple(r for r in self.requirements if r.agent == agent)


@dataclass(frozen=True)
class CollaboratorIndex:
    """For each event, the set of agents whose local event set contains it."""

    sigmas: tuple[frozenset[str], ...]
    _collab: dict[str, frozenset[int]] = field(repr=False)

    @classmethod
    def from_sigmas(cls, sigmas: Sequence[Iterable[str]]) -> "CollaboratorIndex":
        sig = tuple(frozenset(s) for s in sigmas)
        collab: dict[str, set[int]] = {}
        for i, s in enumerate(sig):
            for e in s:
                collab.setdefault(e, set()).add(i)
        return cls(sigmas=sig, _collab={e: frozenset(a) for e, a in collab.items()})

    @property
    def num_agents(self) -> int:
        return len(self.sigmas)

    @property
    def events(self) -> frozenset[str]:
        return frozenset(self._collab)

    def collaborators(self, event: str) -> frozenset[int]:
        try:
            return self._collab[event]
        except KeyError:
            raise ValueError(f"event {event!r} is in no local event set") from None

    def is_shared(self, event: str) -> bool:
        return len(self.collaborators(event)) > 1

    def flatten_key(self, event: str):
        return (min(self.collaborators(event)), event)

    def ordered(self, events: Iterable[str]) -> tuple[str, ...]:
        """Concurrent events in the fixed interleaving order."""
        return tuple(sorted(events, key=self.flatten_key))


@dataclass(frozen=True)
class TeamLabeling:
    """Rule-based team labeling function.

    Rules are ordered; when two rules would fire events that share a
    collaborator in the same step (which a well-formed domain never allows),
    the earlier rule wins, so the output always contains at most one event
    per agent. The decomposability checker inspects the raw matches, so
    such a domain is still reported as ill-formed.
    """

    rules: tuple[LabelingRule, ...]
    index: CollaboratorIndex

    def __post_init__(self):
        for k, rule in enumerate(self.rules):
            if rule.event not in self.index.events:
                raise ValueError(
                    f"rule {k} fires {rule.event!r}, which is in no local event set"
                )
            for r in rule.requirements:
                if not 0 <= r.agent < self.index.num_agents:
                    raise ValueError(f"rule {k} constrains unknown agent {r.agent}")

    @property
    def num_agents(self) -> int:
        return self.index.num_agents

    def label_raw(self, s: Sequence[Cell], u: str) -> tuple[str, ...]:
        """All matched events in rule order, without the one-per-agent
        enforcement. Duplicate events are reported once."""
        out: list[str] = []
        for rule in self.rules:
            if u not in rule.guard or rule.event in out:
                continue
            if all(r.holds(s[r.agent]) for r in rule.requirements):
                out.append(rule.event)
        return tuple(out)

    def label(self, s: Sequence[Cell], u: str) -> frozenset[str]:
        out: list[str] = []
        for e in self.label_raw(s, u):
            mine = self.index.collaborators(e)
            if any(mine & self.index.collaborators(prev) for prev in out):
                continue
            out.append(e)
        return frozenset(out)


@dataclass(frozen=True)
class LocalLabeling:
    """Agent i's labeling function, constructed from the team rules.

    An event is proposed at (s_i, u_i) when some team rule for an event in
    the agent's local set is armed at a team state inside block u_i, and
    the rule's requirements on agent i itself hold at s_i. Requirements on
    teammates are dropped: the agent cannot observe them, and some teammate
    configuration satisfies them, so the event could be occurring. Shared
    proposals are resolved by the synchronization barrier.
    """

    agent: int
    sigma: frozenset[str]
    rules: tuple[LabelingRule, ...]
    blocks: dict[str, frozenset[str]]

    @classmethod
    def from_team(
        cls, team: TeamLabeling, agent: int, projection: ProjectedRM
    ) -> "LocalLabeling":
        sigma = team.index.sigmas[agent]
        rules = tuple(r for r in team.rules if r.event in sigma)
        blocks = {
            name: projection.partition.blocks[k]
            for k, name in enumerate(projection.partition.names)
        }
        return cls(agent=agent, sigma=sigma, rules=rules, blocks=blocks)

    def proposals(self, s_i: Cell, u_i: str) -> tuple[str, ...]:
        """Every proposable event at (s_i, u_i), in rule order."""
        members = self.blocks[u_i]
        out: list[str] = []
        for rule in self.rules:
            if rule.event in out or not (rule.guard & members):
                continue
            if all(r.holds(s_i) for r in rule.requirements_on(self.agent)):
                out.append(rule.event)
        return tuple(out)

    def label(self, s_i: Cell, u_i: str) -> frozenset[str]:
        """At most one event: the first proposable rule wins."""
        p = self.proposals(s_i, u_i)
        return frozenset(p[:1])


def local_labelings(
    team: TeamLabeling, projections: Sequence[ProjectedRM]
) -> tuple[LocalLabeling, ...]:
    if len(projections) != team.num_agents:
        raise ValueError("one projection per agent required")
    return tuple(
        LocalLabeling.from_team(team, i, p) for i, p in enumerate(projections)
    )


def synchronize(
    proposals: Sequence[Iterable[str]], index: CollaboratorIndex
) -> tuple[frozenset[str], ...]:
    """One barrier step: agent i keeps its proposed event iff every
    collaborator on that event proposed it too."""
    sets = [frozenset(p) for p in proposals]
    if len(sets) != index.num_agents:
        raise ValueError("one proposal set per agent required")
    for i, p in enumerate(sets):
        if len(p) > 1:
            raise ValueError(f"agent {i} proposed {len(p)} events; at most 1 allowed")
    out = []
    for p in sets:
        kept = frozenset(
            e for e in p if all(e in sets[j] for j in index.collaborators(e))
        )
        out.append(kept)
    return tuple(out)


@dataclass(frozen=True)
class LabeledTrajectory:
    """A state trajectory annotated with machine states and label sets.

    steps[t] = (environment state, machine state at t, label observed at t).
    The label at t was evaluated on arrival in steps[t], against the machine
    state at t-1; the machine state at t has already folded it. `events` is
    the flattened event string and `final_state` the machine state after
    the last fold.
    """

    steps: tuple[tuple[Any, str, frozenset[str]], ...]
    events: tuple[str, ...]
    final_state: str
    completed: bool


def _fold(
    rm: RewardMachine,
    u: str,
    label: frozenset[str],
    index: CollaboratorIndex,
    xi: list[str],
) -> str:
    for e in index.ordered(label):
        xi.append(e)
        nxt = rm.delta.get((u, e))
        if nxt is not None:
            u = nxt
    return u


def team_labeled_trajectory(
    traj: Sequence[Any], rm: RewardMachine, labeling: TeamLabeling
) -> LabeledTrajectory:
    """Label a joint-state trajectory against the team machine.

    The initial state carries the empty label; each later state's label is
    evaluated against the machine state it is about to update.
    """
    if not traj:
        raise ValueError("trajectory must contain at least one state")
    index = labeling.index
    u = rm.initial
    xi: list[str] = []
    steps = [(traj[0], u, frozenset())]
    for t in range(len(traj) - 1):
        label = labeling.label(traj[t + 1], u)
        u = _fold(rm, u, label, index, xi)
        steps.append((traj[t + 1], u, label))
    return LabeledTrajectory(
        steps=tuple(steps),
        events=tuple(xi),
        final_state=u,
        completed=u in rm.final_states,
    )


def local_labeled_trajectories(
    trajs: Sequence[Sequence[Any]],
    rms: Sequence[RewardMachine],
    labelings: Sequence[LocalLabeling],
    index: CollaboratorIndex,
) -> tuple[LabeledTrajectory, ...]:
    """Label per-agent trajectories in lockstep with synchronization.

    Each step every agent evaluates its proposal against its current
    machine state, the barrier keeps only fully-agreed shared events, and
    each agent folds its synchronized label before the next step, mirroring
    the team-side construction.
    """
    n = len(trajs)
    if not (len(rms) == len(labelings) == index.num_agents == n):
        raise ValueError("per-agent inputs must have equal length")
    k = len(trajs[0])
    if any(len(t) != k for t in trajs):
        raise ValueError("per-agent trajectories must have equal length")
    if k == 0:
        raise ValueError("trajectories must contain at least one state")
    us = [rm.initial for rm in rms]
    xis: list[list[str]] = [[] for _ in range(n)]
    steps = [[(trajs[i][0], us[i], frozenset())] for i in range(n)]
    for t in range(k - 1):
        proposals = [
            labelings[i].label(trajs[i][t + 1], us[i]) for i in range(n)
        ]
        synced = synchronize(proposals, index)
        for i in range(n):
            us[i] = _fold(rms[i], us[i], synced[i], index, xis[i])
            steps[i].append((trajs[i][t + 1], us[i], synced[i]))
    return tuple(
        LabeledTrajectory(
            steps=tuple(steps[i]),
            events=tuple(xis[i]),
            final_state=us[i],
            completed=us[i] in rms[i].final_states,
        )
        for i in range(n)
    )


def check_projection_consistency(
    team: LabeledTrajectory,
    locals_: Sequence[LabeledTrajectory],
    projections: Sequence[ProjectedRM],
    index: CollaboratorIndex,
) -> None:
    """Assert the lockstep invariants tying the team record to the local
    ones: per step, each agent's synchronized label equals the team label
    restricted to its events, and the team machine state lies inside the
    agent's block. Raises ValueError naming the first violated step."""
    if len(team.steps) != min(len(l.steps) for l in locals_):
        raise ValueError("team and local records must cover the same steps")
    for i, (local, proj) in enumerate(zip(locals_, projections)):
        sigma = index.sigmas[i]
        for t, ((_, u, l_team), (_, u_i, l_i)) in enumerate(
            zip(team.steps, local.steps)
        ):
            if frozenset(e for e in l_team if e in sigma) != l_i:
                raise ValueError(
                    f"step {t}: agent {i} label {sorted(l_i)} != team label "
                    f"{sorted(l_team)} restricted to its events"
                )
            if proj.partition.name_of(u) != u_i:
                raise ValueError(
                    f"step {t}: team state {u} lies in block "
                    f"{proj.partition.name_of(u)}, but agent {i} is at {u_i}"
                )


class DomainTooLargeError(ValueError):
    """Joint enumeration would exceed the configured pair budget."""

    def __init__(self, estimate: int, limit: int):
        self.estimate = estimate
        self.limit = limit
        super().__init__(
            f"joint enumeration needs {estimate} (state, machine-state) pairs, "
            f"over the limit of {limit}; raise max_pairs or use "
            f"verify_labeling_factored"
        )


_CONDITIONS = (
    "one-event-per-agent",
    "local-output-unique",
    "local-rules-match-construction",
    "team-fire-implies-local",
    "local-fire-implies-team",
)


@dataclass(frozen=True)
class LabelingReport:
    """Outcome of a labeling decomposability check.

    `violations` maps a condition name to the first witnessed violation;
    an absent key means the condition held everywhere. Conditions:

    - one-event-per-agent: the team labeling never matches two events
      visible to the same agent in one step.
    - local-output-unique: no agent has two proposable events at the same
      (cell, machine-state) pair.
    - local-rules-match-construction: the shipped local labelings equal
      the canonical construction from the team rules.
    - team-fire-implies-local: every fired event is proposed by all of its
      collaborators.
    - local-fire-implies-team: an event unanimously proposed is actually
      fired by the team labeling.
    """

    method: str
    pair_count: int
    violations: dict[str, str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        lines = [f"pairs covered: {self.pair_count} ({self.method})"]
        for name in _CONDITIONS:
            msg = self.violations.get(name)
            lines.append(f"{name}: {'ok' if msg is None else 'FAIL ' + msg}")
        extra = set(self.violations) - set(_CONDITIONS)
        for name in sorted(extra):
            lines.append(f"{name}: FAIL {self.violations[name]}")
        return "\n".join(lines)


def _req_vector(cells: Sequence[Cell], reqs: Iterable[Requirement]) -> np.ndarray:
    v = np.ones(len(cells), dtype=bool)
    for r in reqs:
        inset = np.fromiter((c in r.cells for c in cells), dtype=bool, count=len(cells))
        v &= inset != r.negate
    return v


def _event_order(rm: RewardMachine, index: CollaboratorIndex) -> list[str]:
    known = [e for e in rm.alphabet if e in index.events]
    return known + sorted(index.events - set(rm.alphabet))


def check_label_decomposability(
    rm: RewardMachine,
    team: TeamLabeling,
    locals_: Sequence[LocalLabeling],
    agent_states: Sequence[Sequence[Cell]],
    *,
    max_pairs: int = 10**7,
) -> LabelingReport:
    """Certify a labeling decomposition by joint enumeration.

    Walks every (joint cell configuration, machine state) pair and checks
    the conditions listed on LabelingReport, reporting the first witness
    per condition. Refuses domains whose joint product exceeds max_pairs.
    """
    index = team.index
    n = index.num_agents
    if len(locals_) != n or len(agent_states) != n:
        raise ValueError("need one local labeling and one state list per agent")
    cells = [tuple(s) for s in agent_states]
    sizes = [len(c) for c in cells]
    if any(sz == 0 for sz in sizes):
        raise ValueError("every agent needs at least one cell")
    total = math.prod(sizes) * len(rm.states)
    if total > max_pairs:
        raise DomainTooLargeError(total, max_pairs)

    events = _event_order(rm, index)
    violations: dict[str, str] = {}

    def note(cond: str, msg: str) -> None:
        violations.setdefault(cond, msg)

    def broadcast(i: int, vec: np.ndarray) -> np.ndarray:
        shape = [1] * n
        shape[i] = sizes[i]
        return vec.reshape(shape)

    rule_vecs = [
        [_req_vector(cells[i], rule.requirements_on(i)) for i in range(n)]
        for rule in team.rules
    ]

    # Declared local proposal vectors per (agent, block, event).
    prop: list[dict[str, dict[str, np.ndarray]]] = []
    rev_block: list[dict[str, str]] = []
    for i in range(n):
        per_block: dict[str, dict[str, np.ndarray]] = {}
        rev: dict[str, str] = {}
        for bname, members in locals_[i].blocks.items():
            for m in members:
                rev[m] = bname
            vecs: dict[str, np.ndarray] = {}
            for rule in locals_[i].rules:
                if not (rule.guard & members):
                    continue
                v = _req_vector(cells[i], rule.requirements_on(i))
                vecs[rule.event] = vecs.get(rule.event, False) | v
            per_block[bname] = vecs
        prop.append(per_block)
        rev_block.append(rev)

    def joint_witness(coord: Sequence[int]) -> str:
        return "(" + ", ".join(str(cells[i][coord[i]]) for i in range(n)) + ")"

    # Existential construction, accumulated over machine states per block.
    constructed: list[dict[str, dict[str, np.ndarray]]] = [
        {b: {} for b in locals_[i].blocks} for i in range(n)
    ]

    for u in rm.states:
        fire: dict[str, np.ndarray] = {}
        for k, rule in enumerate(team.rules):
            if u not in rule.guard:
                continue
            t = np.ones(sizes, dtype=bool)
            for i in range(n):
                t &= broadcast(i, rule_vecs[k][i])
            prev = fire.get(rule.event)
            fire[rule.event] = t if prev is None else prev | t

        for i in range(n):
            mine = [e for e in events if e in index.sigmas[i] and e in fire]
            if len(mine) >= 2:
                count = np.zeros(sizes, dtype=np.int8)
                for e in mine:
                    count += fire[e]
                if count.max() > 1:
                    coord = np.argwhere(count > 1)[0]
                    both = [e for e in mine if fire[e][tuple(coord)]]
                    note(
                        "one-event-per-agent",
                        f"at machine state {u} and cells {joint_witness(coord)}, "
                        f"events {' and '.join(both)} both fire for agent {i}",
                    )
            bname = rev_block[i][u]
            axes = tuple(j for j in range(n) if j != i)
            for e, t in fire.items():
                if e not in index.sigmas[i]:
                    continue
                seen = t.any(axis=axes) if axes else t
                acc = constructed[i][bname].get(e)
                constructed[i][bname][e] = seen if acc is None else acc | seen

        for e in events:
            collab = sorted(index.collaborators(e))
            fired = fire.get(e)
            vecs = {
                i: prop[i][rev_block[i][u]].get(e, np.zeros(sizes[i], dtype=bool))
                for i in collab
            }
            if any(not v.any() for v in vecs.values()):
                # Nobody can unanimously propose e here; only the forward
                # direction can fail.
                if fired is not None and fired.any():
                    coord = np.argwhere(fired)[0]
                    bad = [i for i in collab if not vecs[i][coord[i]]]
                    note(
                        "team-fire-implies-local",
                        f"at machine state {u} and cells {joint_witness(coord)}, "
                        f"event {e} fires but agent {bad[0]} does not propose it",
                    )
                continue
            all_prop = np.ones(sizes, dtype=bool)
            for i in collab:
                all_prop &= broadcast(i, vecs[i])
            if fired is not None:
                missing = fired & ~all_prop
                if missing.any():
                    coord = np.argwhere(missing)[0]
                    bad = [i for i in collab if not vecs[i][coord[i]]]
                    note(
                        "team-fire-implies-local",
                        f"at machine state {u} and cells {joint_witness(coord)}, "
                        f"event {e} fires but agent {bad[0]} does not propose it",
                    )
            ghost = all_prop if fired is None else all_prop & ~fired
            if ghost.any():
                coord = np.argwhere(ghost)[0]
                note(
                    "local-fire-implies-team",
                    f"at machine state {u} and cells {joint_witness(coord)}, "
                    f"all collaborators propose {e} but the team labeling "
                    f"does not fire it",
                )

    for i in range(n):
        for bname in locals_[i].blocks:
            declared = prop[i][bname]
            built = constructed[i][bname]
            for e in events:
                d = declared.get(e, np.zeros(sizes[i], dtype=bool))
                c = built.get(e, np.zeros(sizes[i], dtype=bool))
                if (d != c).any():
                    k = int(np.flatnonzero(d != c)[0])
                    kind = "proposes" if d[k] else "misses"
                    note(
                        "local-rules-match-construction",
                        f"agent {i} at cell {cells[i][k]} in machine state "
                        f"{bname} {kind} {e}, unlike the canonical construction",
                    )
            armed = [e for e in events if declared.get(e) is not None and declared[e].any()]
            for a in range(len(armed)):
                for b in range(a + 1, len(armed)):
                    both = declared[armed[a]] & declared[armed[b]]
                    if both.any():
                        k = int(np.flatnonzero(both)[0])
                        note(
                            "local-output-unique",
                            f"agent {i} at cell {cells[i][k]} in machine state "
                            f"{bname} could propose both {armed[a]} and {armed[b]}",
                        )

    return LabelingReport(method="joint", pair_count=total, violations=violations)


def verify_labeling_factored(
    rm: RewardMachine,
    team: TeamLabeling,
    locals_: Sequence[LocalLabeling],
    agent_states: Sequence[Sequence[Cell]],
) -> LabelingReport:
    """Certify a labeling decomposition without joint enumeration.

    Sound and complete for rule sets whose requirements constrain agents
    independently (the per-rule conjunction factorizes over agents), which
    is the only form LabelingRule can express. Runs in time linear in
    rules x states x cells instead of the joint product, so it scales to
    domains check_label_decomposability refuses. Preconditions that the
    shortcut needs (one armed rule per event and block, rules that can
    fire at all) are themselves checked and reported.
    """
    index = team.index
    n = index.num_agents
    if len(locals_) != n or len(agent_states) != n:
        raise ValueError("need one local labeling and one state list per agent")
    cells = [tuple(s) for s in agent_states]
    sizes = [len(c) for c in cells]
    if any(sz == 0 for sz in sizes):
        raise ValueError("every agent needs at least one cell")
    total = math.prod(sizes) * len(rm.states)
    events = _event_order(rm, index)
    violations: dict[str, str] = {}

    def note(cond: str, msg: str) -> None:
        violations.setdefault(cond, msg)

    state_set = set(rm.states)
    for k, rule in enumerate(team.rules):
        if not rule.guard <= state_set:
            foreign = sorted(rule.guard - state_set)
            note(
                "factored-preconditions",
                f"rule {k} ({rule.event}) guards unknown machine state "
                f"{foreign[0]}",
            )

    rev_block: list[dict[str, str]] = []
    for i in range(n):
        rev: dict[str, str] = {}
        seen: set[str] = set()
        for bname, members in locals_[i].blocks.items():
            if members & seen:
                note(
                    "local-rules-match-construction",
                    f"agent {i}'s machine-state blocks overlap",
                )
            seen |= members
            for m in members:
                rev[m] = bname
        if seen != state_set:
            note(
                "local-rules-match-construction",
                f"agent {i}'s machine-state blocks do not cover the team states",
            )
        rev_block.append(rev)

    for i in range(n):
        expected = tuple(r for r in team.rules if r.event in index.sigmas[i])
        if locals_[i].rules != expected or locals_[i].sigma != index.sigmas[i]:
            note(
                "local-rules-match-construction",
                f"agent {i}'s local rules differ from the canonical "
                f"construction from the team rules",
            )

    sat = [
        [_req_vector(cells[i], rule.requirements_on(i)) for i in range(n)]
        for rule in team.rules
    ]

    rules_for: dict[str, list[int]] = {}
    for k, rule in enumerate(team.rules):
        rules_for.setdefault(rule.event, []).append(k)

    for e, ks in rules_for.items():
        for i in sorted(index.collaborators(e)):
            for bname, members in locals_[i].blocks.items():
                armed = [k for k in ks if team.rules[k].guard & members]
                if len(armed) > 1:
                    note(
                        "factored-preconditions",
                        f"rules {armed[0]} and {armed[1]} both fire {e} and are "
                        f"both armed inside agent {i}'s machine state {bname}; "
                        f"the factored check cannot certify this rule set",
                    )
    for k, rule in enumerate(team.rules):
        for i in range(n):
            if not sat[k][i].any():
                note(
                    "factored-preconditions",
                    f"rule {k} ({rule.event}) can never fire: agent {i} "
                    f"cannot satisfy its requirement",
                )

    for a in range(n):
        mine = [e for e in events if e in index.sigmas[a] and e in rules_for]
        for x in range(len(mine)):
            for y in range(x + 1, len(mine)):
                for k in rules_for[mine[x]]:
                    for k2 in rules_for[mine[y]]:
                        shared_guard = team.rules[k].guard & team.rules[k2].guard
                        if not shared_guard:
                            continue
                        armed_at = [s for s in rm.states if s in shared_guard]
                        if not armed_at:
                            continue
                        meets = [sat[k][i] & sat[k2][i] for i in range(n)]
                        if all(m.any() for m in meets):
                            u = armed_at[0]
                            coord = [int(np.argmax(m)) for m in meets]
                            note(
                                "one-event-per-agent",
                                f"at machine state {u} and cells "
                                f"({', '.join(str(cells[i][coord[i]]) for i in range(n))}), "
                                f"events {mine[x]} and {mine[y]} both fire for "
                                f"agent {a}",
                            )

    for i in range(n):
        for bname, members in locals_[i].blocks.items():
            own: dict[str, np.ndarray] = {}
            for rule in locals_[i].rules:
                if rule.guard & members:
                    v = _req_vector(cells[i], rule.requirements_on(i))
                    prev = own.get(rule.event)
                    own[rule.event] = v if prev is None else prev | v
            armed = [e for e in events if e in own and own[e].any()]
            for x in range(len(armed)):
                for y in range(x + 1, len(armed)):
                    both = own[armed[x]] & own[armed[y]]
                    if both.any():
                        c = int(np.flatnonzero(both)[0])
                        note(
                            "local-output-unique",
                            f"agent {i} at cell {cells[i][c]} in machine state "
                            f"{bname} could propose both {armed[x]} and {armed[y]}",
                        )

    for k, rule in enumerate(team.rules):
        e = rule.event
        collab = sorted(index.collaborators(e))
        if any(not sat[k][i].any() for i in range(n)):
            continue  # flagged above; nothing here can fire
        armed_at = [s for s in rm.states if s in rule.guard]
        if not armed_at:
            continue
        outside = sorted(
            {r.agent for r in rule.requirements} - set(collab)
        )
        if outside:
            j = outside[0]
            if not sat[k][j].all():
                u = armed_at[0]
                note(
                    "local-fire-implies-team",
                    f"rule {k} ({e}) constrains agent {j}, who is not a "
                    f"collaborator on {e}: at machine state {u}, all "
                    f"collaborators can propose {e} while agent {j} at cell "
                    f"{cells[j][int(np.argmin(sat[k][j]))]} blocks the team "
                    f"labeling from firing it",
                )
        for u in rm.states:
            if u in rule.guard:
                continue
            if all(locals_[i].blocks[rev_block[i][u]] & rule.guard for i in collab):
                note(
                    "local-fire-implies-team",
                    f"at machine state {u}, every collaborator's machine state "
                    f"block meets the guard of rule {k}, so all can propose "
                    f"{e}, but the team labeling does not fire it at {u}",
                )
                break

    return LabelingReport(method="factored", pair_count=total, violations=violations)
