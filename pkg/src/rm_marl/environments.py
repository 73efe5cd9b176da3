"""Gridworld domains wired to reward machines and labeling functions.

A domain config (TOML) declares the grid, the team machine, per-agent event
sets, labeling rules, gated regions, and the option sets used by the
hierarchical baseline. `make_domain` parses it strictly (unknown keys and
dangling references are errors with field paths) and returns a bundle
holding the machine, its projections, the team and local labelings, and
precomputed event-occurrence maps used for region gating and for the
baselines' memory abstraction.

Movement: five actions (up, down, left, right, stay). A moving agent slips
to one of the two perpendicular neighbours with the domain's slip
probability (split evenly); staying never slips and consumes no
randomness. Moves into walls, out of bounds, or into a region whose gate
event has not occurred for that agent are no-ops. Coordinates are
(row, col) with row 0 at the bottom.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .algebra import ProjectedRM, compose_many, project
from .labeling import (
    CollaboratorIndex,
    LabelingRule,
    LocalLabeling,
    Requirement,
    TeamLabeling,
    check_label_decomposability,
    local_labelings,
    verify_labeling_factored,
)
from .machine import RewardMachine, parse_rm

__all__ = [
    "ACTIONS",
    "ACTION_NAMES",
    "STAY",
    "ConfigError",
    "Region",
    "NavigateOption",
    "GridWorldDomain",
    "DomainBundle",
    "IndividualGridEnv",
    "TeamGridEnv",
    "events_occurred",
    "step_agent",
    "step_team",
    "make_domain",
    "shipped_domains",
    "build_rendezvous_machine",
]

Cell = tuple[int, int]

# up, down, left, right, stay; row 0 is the bottom row
ACTIONS: tuple[Cell, ...] = ((1, 0), (-1, 0), (0, -1), (0, 1), (0, 0))
ACTION_NAMES = ("up", "down", "left", "right", "stay")
STAY = 4
_PERPENDICULAR = {0: (2, 3), 1: (2, 3), 2: (0, 1), 3: (0, 1)}


class ConfigError(ValueError):
    """Domain config rejected; the message names the offending field."""


@dataclass(frozen=True)
class Region:
    """Cells an agent cannot enter until its gate event has occurred."""

    name: str
    cells: frozenset[Cell]
    agent: int
    opens_on: str


@dataclass(frozen=True)
class NavigateOption:
    """Hierarchical-baseline option: head for a target cell.

    Available only once every event in `requires` has occurred.
    """

    agent: int
    name: str
    target: Cell
    requires: tuple[str, ...]


@dataclass(frozen=True)
class GridWorldDomain:
    name: str
    width: int
    height: int
    walls: frozenset[Cell]
    num_agents: int
    starts: tuple[Cell, ...]
    regions: tuple[Region, ...]
    slip_prob: float = 0.02

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls

    def free_cells(self) -> tuple[Cell, ...]:
        return tuple(
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if (r, c) not in self.walls
        )

    def blocked(self, agent: int, target: Cell, occurred: frozenset[str]) -> bool:
        if not self.is_free(target):
            return True
        for region in self.regions:
            if (
                region.agent == agent
                and target in region.cells
                and region.opens_on not in occurred
            ):
                return True
        return False


def step_agent(
    domain: GridWorldDomain,
    agent: int,
    pos: Cell,
    action: int,
    rng: np.random.Generator,
    occurred: frozenset[str] = frozenset(),
) -> Cell:
    """One movement step for one agent. Consumes one uniform draw unless
    the action is stay."""
    if not 0 <= action < len(ACTIONS):
        raise ValueError(f"unknown action {action}")
    if action == STAY:
        return pos
    draw = rng.random()
    half = domain.slip_prob / 2.0
    if draw < half:
        action = _PERPENDICULAR[action][0]
    elif draw < domain.slip_prob:
        action = _PERPENDICULAR[action][1]
    dr, dc = ACTIONS[action]
    target = (pos[0] + dr, pos[1] + dc)
    if domain.blocked(agent, target, occurred):
        return pos
    return target


def step_team(
    domain: GridWorldDomain,
    joint: Sequence[Cell],
    actions: Sequence[int],
    rngs: Sequence[np.random.Generator],
    occurreds: Sequence[frozenset[str]],
) -> tuple[Cell, ...]:
    """Componentwise independent agent steps, one RNG stream per agent."""
    return tuple(
        step_agent(domain, i, joint[i], actions[i], rngs[i], occurreds[i])
        for i in range(domain.num_agents)
    )


def events_occurred(rm: RewardMachine) -> dict[str, frozenset[str]]:
    """For each machine state, the events that must already have occurred.

    An event has occurred at u when u is forward-reachable from some target
    of that event's transitions. Used for region gating and the baselines'
    memory abstraction.
    """
    succ: dict[str, list[str]] = {u: [] for u in rm.states}
    for src, _, dst in rm.edges:
        succ[src].append(dst)
    out: dict[str, set[str]] = {u: set() for u in rm.states}
    for event in rm.alphabet:
        targets = [dst for _, e, dst in rm.edges if e == event]
        seen = set(targets)
        queue = deque(targets)
        while queue:
            u = queue.popleft()
            out[u].add(event)
            for v in succ[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
    return {u: frozenset(events) for u, events in out.items()}


@dataclass(frozen=True)
class DomainBundle:
    """A fully wired domain: grid, machine, decomposition, labelings."""

    name: str
    domain: GridWorldDomain
    rm: RewardMachine
    sigmas: tuple[tuple[str, ...], ...]
    index: CollaboratorIndex
    team_labeling: TeamLabeling
    projections: tuple[ProjectedRM, ...]
    local_labelings: tuple[LocalLabeling, ...]
    memory_events: tuple[str, ...]
    options: tuple[NavigateOption, ...]
    team_occurred: dict[str, frozenset[str]]
    local_occurred: tuple[dict[str, frozenset[str]], ...]
    memory_of: dict[str, int]
    memories: tuple[frozenset[str], ...]
    num_memories: int

    @property
    def num_agents(self) -> int:
        return self.domain.num_agents

    def local_machines(self) -> tuple[RewardMachine, ...]:
        return tuple(p.machine for p in self.projections)

    def options_for(self, agent: int) -> tuple[NavigateOption, ...]:
        return tuple(o for o in self.options if o.agent == agent)

    def certify(self, max_pairs: int = 10**7):
        """Run both decomposition checkers; returns (automata, labeling)
        reports. The labeling check enumerates jointly when it fits in
        max_pairs and falls back to the factored verifier otherwise."""
        from .algebra import check_decomposition

        automata = check_decomposition(self.rm, self.sigmas)
        cells = self.domain.free_cells()
        states = [cells] * self.num_agents
        pairs = len(cells) ** self.num_agents * len(self.rm.states)
        if pairs <= max_pairs:
            labeling = check_label_decomposability(
                self.rm, self.team_labeling, self.local_labelings, states,
                max_pairs=max_pairs,
            )
        else:
            labeling = verify_labeling_factored(
                self.rm, self.team_labeling, self.local_labelings, states
            )
        return automata, labeling


class IndividualGridEnv:
    """One agent's movement environment over integer cell indices."""

    def __init__(self, domain: GridWorldDomain, agent: int):
        self.domain = domain
        self.agent = agent
        self.cells = domain.free_cells()
        self.cell_index = {c: k for k, c in enumerate(self.cells)}
        self.num_states = len(self.cells)
        self.num_actions = len(ACTIONS)
        self.start = self.cell_index[domain.starts[agent]]

    def reset(self, rng: np.random.Generator) -> int:
        return self.start

    def step(
        self,
        s: int,
        action: int,
        occurred: frozenset[str],
        rng: np.random.Generator,
    ) -> int:
        pos = step_agent(
            self.domain, self.agent, self.cells[s], action, rng, occurred
        )
        return self.cell_index[pos]


class TeamGridEnv:
    """Joint movement environment with mixed-radix state and action ids.

    Agent 0 occupies the most significant digit of both encodings.
    """

    def __init__(self, domain: GridWorldDomain):
        self.domain = domain
        self.cells = domain.free_cells()
        self.cell_index = {c: k for k, c in enumerate(self.cells)}
        self.n = domain.num_agents
        self.num_cells = len(self.cells)
        self.num_states = self.num_cells**self.n
        self.num_actions = len(ACTIONS) ** self.n
        self.start = self.encode(domain.starts)

    def encode(self, joint: Sequence[Cell]) -> int:
        s = 0
        for cell in joint:
            s = s * self.num_cells + self.cell_index[cell]
        return s

    def decode(self, s: int) -> tuple[Cell, ...]:
        out = []
        for _ in range(self.n):
            s, k = divmod(s, self.num_cells)
            out.append(self.cells[k])
        return tuple(reversed(out))

    def decode_action(self, a: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.n):
            a, k = divmod(a, len(ACTIONS))
            out.append(k)
        return tuple(reversed(out))

    def reset(self, rng: np.random.Generator) -> int:
        return self.start

    def step(
        self,
        s: int,
        action: int,
        occurred: frozenset[str],
        rng: np.random.Generator | Sequence[np.random.Generator],
    ) -> int:
        rngs = [rng] * self.n if isinstance(rng, np.random.Generator) else rng
        joint = self.decode(s)
        acts = self.decode_action(action)
        nxt = step_team(
            self.domain, joint, acts, rngs, [occurred] * self.n
        )
        return self.encode(nxt)


def shipped_domains() -> tuple[str, ...]:
    return ("buttons", "rendezvous-2", "rendezvous-10")


_SHIPPED_FILES = {
    "buttons": "buttons.toml",
    "rendezvous-2": "rendezvous2.toml",
    "rendezvous-10": "rendezvous10.toml",
}


def _want(table: dict, path: str, key: str, kind, required=True, default=None):
    where = f"{path}.{key}" if path else key
    if key not in table:
        if required:
            raise ConfigError(f"{where}: missing")
        return default
    value = table[key]
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}: expected integer, got boolean")
    if not isinstance(value, kind):
        names = (
            "/".join(k.__name__ for k in kind)
            if isinstance(kind, tuple)
            else kind.__name__
        )
        raise ConfigError(f"{where}: expected {names}, got {type(value).__name__}")
    return value


def _no_extras(table: dict, path: str, allowed: Iterable[str]) -> None:
    extra = sorted(set(table) - set(allowed))
    if extra:
        where = f"{path}.{extra[0]}" if path else extra[0]
        raise ConfigError(f"{where}: unknown key")


def _cell(value: Any, where: str) -> Cell:
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(x, int) and not isinstance(x, bool) for x in value)
    ):
        raise ConfigError(f"{where}: expected [row, col]")
    return (value[0], value[1])


def _cell_list(value: Any, where: str) -> tuple[Cell, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list of [row, col] pairs")
    return tuple(_cell(v, f"{where}[{k}]") for k, v in enumerate(value))


def build_rendezvous_machine(
    num_agents: int,
) -> tuple[RewardMachine, tuple[tuple[str, ...], ...]]:
    """Team machine for an N-agent rendezvous task, as the parallel
    composition of per-agent four-state chains, plus the event sets.

    Agent i (1-based in event names) waits for its own arrival Rdv{i},
    then the shared simultaneous rendezvous Rdv, then its goal G{i}.
    """
    if num_agents < 1:
        raise ValueError("need at least one agent")
    chains = []
    sigmas = []
    for i in range(1, num_agents + 1):
        rdv_i, goal_i = f"Rdv{i}", f"G{i}"
        chains.append(
            RewardMachine(
                states=("w0", "w1", "g", "f"),
                initial="w0",
                alphabet=(rdv_i, "Rdv", goal_i),
                transitions=(
                    ("w0", rdv_i, "w1"),
                    ("w1", "Rdv", "g"),
                    ("g", goal_i, "f"),
                ),
                final_states=frozenset({"f"}),
            ).require_valid()
        )
        sigmas.append((rdv_i, "Rdv", goal_i))
    return compose_many(chains), tuple(sigmas)


def _rendezvous_rules(
    rm: RewardMachine,
    num_agents: int,
    rdv_cells: frozenset[Cell],
    goals: Sequence[Cell],
) -> tuple[LabelingRule, ...]:
    def part(state: str, i: int) -> str:
        return state.split("|")[i] if num_agents > 1 else state

    rules = []
    for i in range(num_agents):
        guard = frozenset(u for u in rm.states if part(u, i) == "w0")
        rules.append(
            LabelingRule(f"Rdv{i + 1}", guard, (Requirement(i, rdv_cells),))
        )
    all_waiting = frozenset(
        u for u in rm.states if all(part(u, i) == "w1" for i in range(num_agents))
    )
    rules.append(
        LabelingRule(
            "Rdv",
            all_waiting,
            tuple(Requirement(i, rdv_cells) for i in range(num_agents)),
        )
    )
    for i in range(num_agents):
        guard = frozenset(u for u in rm.states if part(u, i) == "g")
        rules.append(
            LabelingRule(
                f"G{i + 1}", guard, (Requirement(i, frozenset({goals[i]})),)
            )
        )
    return tuple(rules)


def _parse_grid(cfg: dict, num_agents: int) -> GridWorldDomain:
    grid = _want(cfg, "", "grid", dict)
    _no_extras(grid, "grid", ("width", "height", "walls", "starts", "slip"))
    width = _want(grid, "grid", "width", int)
    height = _want(grid, "grid", "height", int)
    if width < 1 or height < 1:
        raise ConfigError("grid.width: grid dimensions must be positive")
    walls = frozenset(_cell_list(grid.get("walls", []), "grid.walls"))
    starts = _cell_list(_want(grid, "grid", "starts", list), "grid.starts")
    slip = float(
        _want(grid, "grid", "slip", (int, float), required=False, default=0.02)
    )
    if not 0.0 <= slip < 1.0:
        raise ConfigError("grid.slip: must be in [0, 1)")
    name = _want(cfg, "", "name", str)
    domain = GridWorldDomain(
        name=name,
        width=width,
        height=height,
        walls=walls,
        num_agents=num_agents,
        starts=starts,
        regions=(),
        slip_prob=slip,
    )
    for k, cell in enumerate(walls):
        if not domain.in_bounds(cell):
            raise ConfigError(f"grid.walls: cell {list(cell)} out of bounds")
    if len(starts) != num_agents:
        raise ConfigError(
            f"grid.starts: expected {num_agents} entries, got {len(starts)}"
        )
    for k, cell in enumerate(starts):
        if not domain.is_free(cell):
            raise ConfigError(f"grid.starts[{k}]: cell {list(cell)} not free")
    return domain


def _parse_regions(cfg: dict, domain: GridWorldDomain) -> tuple[Region, ...]:
    regions = []
    names = set()
    for k, entry in enumerate(cfg.get("regions", [])):
        path = f"regions[{k}]"
        _no_extras(entry, path, ("name", "agent", "opens_on", "cells"))
        name = _want(entry, path, "name", str)
        if name in names:
            raise ConfigError(f"{path}.name: duplicate region {name!r}")
        names.add(name)
        agent = _want(entry, path, "agent", int)
        if not 0 <= agent < domain.num_agents:
            raise ConfigError(f"{path}.agent: no agent {agent}")
        opens_on = _want(entry, path, "opens_on", str)
        cells = _cell_list(_want(entry, path, "cells", list), f"{path}.cells")
        for cell in cells:
            if not domain.is_free(cell):
                raise ConfigError(
                    f"{path}.cells: cell {list(cell)} is a wall or out of bounds"
                )
        regions.append(
            Region(name=name, cells=frozenset(cells), agent=agent, opens_on=opens_on)
        )
    return tuple(regions)


def _parse_rules(
    cfg: dict, rm: RewardMachine, num_agents: int, domain: GridWorldDomain
) -> tuple[LabelingRule, ...]:
    entries = cfg.get("rules", [])
    if not entries:
        raise ConfigError("rules: missing")
    rules = []
    states = set(rm.states)
    for k, entry in enumerate(entries):
        path = f"rules[{k}]"
        _no_extras(entry, path, ("event", "guard", "requirements"))
        event = _want(entry, path, "event", str)
        if event not in rm.alphabet:
            raise ConfigError(f"{path}.event: {event!r} not in the machine alphabet")
        guard_raw = _want(entry, path, "guard", list)
        guard = []
        for g in guard_raw:
            if not isinstance(g, str) or g not in states:
                raise ConfigError(f"{path}.guard: unknown state {g!r}")
            if (g, event) not in rm.delta:
                raise ConfigError(
                    f"{path}.guard: event {event} has no transition from {g}"
                )
            guard.append(g)
        if not guard:
            raise ConfigError(f"{path}.guard: empty")
        reqs = []
        for j, rentry in enumerate(entry.get("requirements", [])):
            rpath = f"{path}.requirements[{j}]"
            _no_extras(rentry, rpath, ("agent", "cells", "negate"))
            agent = _want(rentry, rpath, "agent", int)
            if not 0 <= agent < num_agents:
                raise ConfigError(f"{rpath}.agent: no agent {agent}")
            cells = _cell_list(_want(rentry, rpath, "cells", list), f"{rpath}.cells")
            for cell in cells:
                if not domain.is_free(cell):
                    raise ConfigError(
                        f"{rpath}.cells: cell {list(cell)} is a wall or out of bounds"
                    )
            negate = _want(rentry, rpath, "negate", bool, required=False, default=False)
            reqs.append(Requirement(agent, frozenset(cells), negate))
        rules.append(LabelingRule(event, frozenset(guard), tuple(reqs)))
    return tuple(rules)


def _parse_options(
    cfg: dict, domain: GridWorldDomain, memory_events: tuple[str, ...]
) -> tuple[NavigateOption, ...]:
    options = []
    for k, entry in enumerate(cfg.get("options", [])):
        path = f"options[{k}]"
        _no_extras(entry, path, ("agent", "name", "target", "requires"))
        agent = _want(entry, path, "agent", int)
        if not 0 <= agent < domain.num_agents:
            raise ConfigError(f"{path}.agent: no agent {agent}")
        name = _want(entry, path, "name", str)
        target = _cell(_want(entry, path, "target", list), f"{path}.target")
        if not domain.is_free(target):
            raise ConfigError(
                f"{path}.target: cell {list(target)} is a wall or out of bounds"
            )
        requires = _want(entry, path, "requires", list, required=False, default=[])
        for e in requires:
            if e not in memory_events:
                raise ConfigError(
                    f"{path}.requires: {e!r} is not a memory event"
                )
        options.append(
            NavigateOption(
                agent=agent, name=name, target=target, requires=tuple(requires)
            )
        )
    return tuple(options)


def _resolve_source(source: str | Path):
    """Returns (config text, base directory or package anchor)."""
    key = str(source)
    if key in _SHIPPED_FILES:
        anchor = resources.files("rm_marl.domains")
        return (anchor / _SHIPPED_FILES[key]).read_text(encoding="utf-8"), anchor
    path = Path(source)
    if not path.exists():
        raise ConfigError(
            f"no shipped domain or config file named {key!r} "
            f"(shipped: {', '.join(shipped_domains())})"
        )
    return path.read_text(encoding="utf-8"), path.parent


def make_domain(source: str | Path) -> DomainBundle:
    """Load and wire a domain from a shipped name or a TOML config path."""
    text, base = _resolve_source(source)
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None

    _no_extras(
        cfg,
        "",
        (
            "name",
            "agents",
            "kind",
            "grid",
            "machine",
            "events",
            "regions",
            "rules",
            "options",
            "rendezvous",
        ),
    )
    name = _want(cfg, "", "name", str)
    num_agents = _want(cfg, "", "agents", int)
    if num_agents < 1:
        raise ConfigError("agents: must be at least 1")
    domain = _parse_grid(cfg, num_agents)
    kind = _want(cfg, "", "kind", str, required=False, default="explicit")

    if kind == "rendezvous":
        for key in ("machine", "events", "rules", "regions"):
            if key in cfg:
                raise ConfigError(f"{key}: not allowed with kind = 'rendezvous'")
        rdv = _want(cfg, "", "rendezvous", dict)
        _no_extras(rdv, "rendezvous", ("cell", "cells", "goals"))
        if ("cell" in rdv) == ("cells" in rdv):
            raise ConfigError("rendezvous: give exactly one of 'cell' or 'cells'")
        if "cell" in rdv:
            zone_field = "rendezvous.cell"
            zone = (_cell(rdv["cell"], zone_field),)
        else:
            zone_field = "rendezvous.cells"
            zone = _cell_list(rdv["cells"], zone_field)
            if not zone:
                raise ConfigError(f"{zone_field}: empty")
        goals = _cell_list(
            _want(rdv, "rendezvous", "goals", list), "rendezvous.goals"
        )
        if len(goals) != num_agents:
            raise ConfigError(
                f"rendezvous.goals: expected {num_agents} entries, got {len(goals)}"
            )
        for cell in zone:
            if not domain.is_free(cell):
                raise ConfigError(f"{zone_field}: cell {list(cell)} not free")
        for k, cell in enumerate(goals):
            if not domain.is_free(cell):
                raise ConfigError(
                    f"rendezvous.goals[{k}]: cell {list(cell)} not free"
                )
        rm, sigmas = build_rendezvous_machine(num_agents)
        rules = _rendezvous_rules(rm, num_agents, frozenset(zone), goals)
        memory_events = ("Rdv",) + tuple(f"G{i + 1}" for i in range(num_agents))
        # option targets aim at the zone cell nearest the grid center
        anchor = min(
            zone,
            key=lambda c: (
                abs(c[0] - domain.height // 2) + abs(c[1] - domain.width // 2),
                c,
            ),
        )
        options = tuple(
            NavigateOption(i, "to-rendezvous", anchor, ())
            for i in range(num_agents)
        ) + tuple(
            NavigateOption(i, "to-goal", goals[i], ("Rdv",))
            for i in range(num_agents)
        )
        regions: tuple[Region, ...] = ()
    elif kind == "explicit":
        machine = _want(cfg, "", "machine", dict)
        _no_extras(machine, "machine", ("file",))
        rm_name = _want(machine, "machine", "file", str)
        try:
            rm_text = (base / rm_name).read_text(encoding="utf-8")
        except (FileNotFoundError, OSError):
            raise ConfigError(f"machine.file: cannot read {rm_name!r}") from None
        rm = parse_rm(rm_text).require_valid()
        events = _want(cfg, "", "events", dict)
        _no_extras(events, "events", ("sigmas", "memory"))
        sig_raw = _want(events, "events", "sigmas", list)
        if len(sig_raw) != num_agents:
            raise ConfigError(
                f"events.sigmas: expected {num_agents} entries, got {len(sig_raw)}"
            )
        sigmas = []
        for i, entry in enumerate(sig_raw):
            if not isinstance(entry, list) or not all(
                isinstance(e, str) for e in entry
            ):
                raise ConfigError(f"events.sigmas[{i}]: expected a list of events")
            for e in entry:
                if e not in rm.alphabet:
                    raise ConfigError(
                        f"events.sigmas[{i}]: {e!r} not in the machine alphabet"
                    )
            sigmas.append(tuple(entry))
        sigmas = tuple(sigmas)
        covered = {e for s in sigmas for e in s}
        missing = [e for e in rm.alphabet if e not in covered]
        if missing:
            raise ConfigError(
                f"events.sigmas: event {missing[0]!r} is in no agent's set"
            )
        memory_events = tuple(
            _want(events, "events", "memory", list, required=False, default=[])
        )
        for e in memory_events:
            if e not in rm.alphabet:
                raise ConfigError(f"events.memory: {e!r} not in the machine alphabet")
        regions = _parse_regions(cfg, domain)
        for k, region in enumerate(regions):
            if region.opens_on not in rm.alphabet:
                raise ConfigError(
                    f"regions[{k}].opens_on: {region.opens_on!r} not in the "
                    f"machine alphabet"
                )
            # decentralized gating reads the agent's own projected machine,
            # so the gate event must be observable by the gated agent
            if region.opens_on not in sigmas[region.agent]:
                raise ConfigError(
                    f"regions[{k}].opens_on: {region.opens_on!r} is not "
                    f"observable by agent {region.agent}"
                )
        rules = _parse_rules(cfg, rm, num_agents, domain)
        options = _parse_options(cfg, domain, memory_events)
    else:
        raise ConfigError(f"kind: unknown domain kind {kind!r}")

    domain = dataclasses.replace(domain, regions=regions)
    if kind == "rendezvous":
        options = _parse_options(cfg, domain, memory_events) or options

    index = CollaboratorIndex.from_sigmas(sigmas)
    team_labeling = TeamLabeling(rules=rules, index=index)
    projections = tuple(project(rm, s) for s in sigmas)
    locals_ = local_labelings(team_labeling, projections)
    team_occurred = events_occurred(rm)
    local_occurred = tuple(events_occurred(p.machine) for p in projections)

    memory_sets = {
        u: frozenset(e for e in team_occurred[u] if e in memory_events)
        for u in rm.states
    }
    distinct = sorted(set(memory_sets.values()), key=lambda s: (len(s), sorted(s)))
    mem_index = {s: k for k, s in enumerate(distinct)}
    memory_of = {u: mem_index[memory_sets[u]] for u in rm.states}

    return DomainBundle(
        name=name,
        domain=domain,
        rm=rm,
        sigmas=tuple(tuple(s) for s in sigmas),
        index=index,
        team_labeling=team_labeling,
        projections=projections,
        local_labelings=locals_,
        memory_events=memory_events,
        options=options,
        team_occurred=team_occurred,
        local_occurred=local_occurred,
        memory_of=memory_of,
        memories=tuple(distinct),
        num_memories=len(distinct),
    )
