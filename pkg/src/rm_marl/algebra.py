"""Operations on reward machines: projection, composition, bisimulation.

Projection collapses a machine onto the events one agent can observe; the
parallel composition of all the per-agent projections, synchronizing on
shared events, should then be indistinguishable from the original machine.
`check_decomposition` bundles that test: it verifies the per-agent event
sets cover the alphabet, projects, composes and checks bisimilarity,
returning either the matched-pair relation or a concrete event string on
which the two machines disagree.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .machine import RewardMachine

__all__ = [
    "Partition",
    "ProjectedRM",
    "ProjectionError",
    "BisimWitness",
    "DecompositionReport",
    "local_equivalence",
    "project",
    "parallel_compose",
    "compose_many",
    "is_bisimilar",
    "check_decomposition",
]


class ProjectionError(ValueError):
    """Projection produced an ill-formed machine (bad local event set)."""


class _UnionFind:
    def __init__(self, items: Iterable[str]):
        self.parent = {x: x for x in items}

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


@dataclass(frozen=True)
class Partition:
    """A partition of a machine's states into named blocks.

    Blocks are ordered by the position of their first member in the source
    machine's state tuple; a block's name is its members sorted and joined
    with '+'.
    """

    blocks: tuple[frozenset[str], ...]
    names: tuple[str, ...]
    _name_of: dict[str, str] = field(repr=False)
    _block_of: dict[str, frozenset[str]] = field(repr=False)

    def name_of(self, state: str) -> str:
        return self._name_of[state]

    def block_of(self, state: str) -> frozenset[str]:
        return self._block_of[state]

    def __len__(self) -> int:
        return len(self.blocks)


def _normalize_sigma(rm: RewardMachine, sigma: Iterable[str]) -> tuple[str, ...]:
    requested = list(sigma)
    extra = [e for e in requested if e not in set(rm.alphabet)]
    if extra:
        raise ValueError(f"events not in the machine's alphabet: {extra}")
    keep = frozenset(requested)
    return tuple(e for e in rm.alphabet if e in keep)


def local_equivalence(rm: RewardMachine, sigma: Iterable[str]) -> Partition:
    """Smallest equivalence over rm's states that (1) identifies the two
    endpoints of every transition labeled outside `sigma` and (2) identifies
    e-successors of identified states for every e in `sigma`.

    Computed as a union-find fixed point: one pass for (1), then repeated
    merging of successor blocks until (2) induces no further merges.
    """
    rm.require_valid()
    sigma_t = _normalize_sigma(rm, sigma)
    sigma_set = frozenset(sigma_t)
    uf = _UnionFind(rm.states)
    edges_by_event: dict[str, list[tuple[str, str]]] = {e: [] for e in sigma_t}
    for (u, e), v in rm.delta.items():
        if e in sigma_set:
            edges_by_event[e].append((u, v))
        else:
            uf.union(u, v)
    changed = True
    while changed:
        changed = False
        for e in sigma_t:
            targets: dict[str, str] = {}
            for u, v in edges_by_event[e]:
                src = uf.find(u)
                if src in targets:
                    if uf.union(targets[src], v):
                        changed = True
                else:
                    targets[src] = uf.find(v)
    groups: dict[str, list[str]] = {}
    for s in rm.states:
        groups.setdefault(uf.find(s), []).append(s)
    blocks = tuple(frozenset(members) for members in groups.values())
    names = tuple("+".join(sorted(b)) for b in blocks)
    name_of = {s: names[i] for i, b in enumerate(blocks) for s in b}
    block_of = {s: blocks[i] for i, b in enumerate(blocks) for s in b}
    return Partition(blocks=blocks, names=names, _name_of=name_of, _block_of=block_of)


@dataclass(frozen=True)
class ProjectedRM:
    """A machine over one agent's events plus the state-to-block mapping."""

    machine: RewardMachine
    sigma: tuple[str, ...]
    partition: Partition

    def block_name(self, team_state: str) -> str:
        return self.partition.name_of(team_state)


def project(rm: RewardMachine, sigma: Iterable[str]) -> ProjectedRM:
    """Project `rm` onto the event subset `sigma`.

    States of the result are the blocks of the local equivalence; a block
    has an e-transition to another block whenever any member does. Blocks
    containing a final state become final. Raises ProjectionError if the
    result leaves a final block or is nondeterministic, both of which
    indicate a local event set that cannot carry the task.
    """
    part = local_equivalence(rm, sigma)
    sigma_t = _normalize_sigma(rm, sigma)
    sigma_set = frozenset(sigma_t)
    delta: dict[tuple[str, str], str] = {}
    for u, e, v in rm.edges:
        if e not in sigma_set:
            continue
        key = (part.name_of(u), e)
        dst = part.name_of(v)
        prev = delta.get(key)
        if prev is not None and prev != dst:
            raise ProjectionError(
                f"projection ill-formed: block {key[0]} maps to both {prev} "
                f"and {dst} on {e}"
            )
        delta[key] = dst
    finals = [n for n, b in zip(part.names, part.blocks) if b & rm.final_states]
    final_set = frozenset(finals)
    for (u, e), _ in delta.items():
        if u in final_set:
            raise ProjectionError(
                f"projection ill-formed: final block {u} has an outgoing "
                f"transition on {e}"
            )
    machine = RewardMachine(
        states=part.names,
        initial=part.name_of(rm.initial),
        alphabet=sigma_t,
        transitions=delta,
        final_states=finals,
    ).require_valid()
    return ProjectedRM(machine=machine, sigma=sigma_t, partition=part)


def parallel_compose(rm1: RewardMachine, rm2: RewardMachine) -> RewardMachine:
    """Parallel composition synchronizing on the shared alphabet.

    Shared events move only when both machines define them; events private
    to one machine interleave. Only states reachable from the joint initial
    state are kept, and a joint state is final when both components are.
    Composite states are named "left|right".
    """
    rm1.require_valid()
    rm2.require_valid()
    a1, a2 = set(rm1.alphabet), set(rm2.alphabet)
    alphabet = tuple(rm1.alphabet) + tuple(e for e in rm2.alphabet if e not in a1)
    shared = a1 & a2

    def name(pair: tuple[str, str]) -> str:
        return f"{pair[0]}|{pair[1]}"

    start = (rm1.initial, rm2.initial)
    seen: dict[str, tuple[str, str]] = {name(start): start}
    order = [start]
    edges: list[tuple[str, str, str]] = []
    queue: deque[tuple[str, str]] = deque([start])
    while queue:
        u1, u2 = queue.popleft()
        for e in alphabet:
            d1 = rm1.delta.get((u1, e)) if e in a1 else None
            d2 = rm2.delta.get((u2, e)) if e in a2 else None
            if e in shared:
                if d1 is None or d2 is None:
                    continue
                nxt = (d1, d2)
            elif e in a1:
                if d1 is None:
                    continue
                nxt = (d1, u2)
            else:
                if d2 is None:
                    continue
                nxt = (u1, d2)
            n = name(nxt)
            if n in seen:
                if seen[n] != nxt:
                    raise ValueError(
                        f"composite state name collision on {n!r}; rename states"
                    )
            else:
                seen[n] = nxt
                order.append(nxt)
                queue.append(nxt)
            edges.append((name((u1, u2)), e, n))
    finals = [
        name(p)
        for p in order
        if p[0] in rm1.final_states and p[1] in rm2.final_states
    ]
    return RewardMachine(
        states=[name(p) for p in order],
        initial=name(start),
        alphabet=alphabet,
        transitions=edges,
        final_states=finals,
    ).require_valid()


def compose_many(rms: Sequence[RewardMachine]) -> RewardMachine:
    """Left fold of parallel_compose; the composition is associative up to
    bisimilarity, and the flat "a|b|c" naming makes the fold order
    invisible in the state names."""
    if not rms:
        raise ValueError("need at least one machine")
    out = rms[0]
    for rm in rms[1:]:
        out = parallel_compose(out, rm)
    return out


@dataclass(frozen=True)
class BisimWitness:
    """Outcome of a bisimilarity check.

    Exactly one of `relation` (when bisimilar) and `counterexample` (a
    distinguishing event string, when one exists) is populated. An alphabet
    mismatch makes the machines non-bisimilar by definition; if no
    behavioral counterexample exists the mismatch itself is the witness,
    reported in `note`.
    """

    bisimilar: bool
    relation: tuple[tuple[str, str], ...] | None = None
    counterexample: tuple[str, ...] | None = None
    note: str = ""


def is_bisimilar(rm1: RewardMachine, rm2: RewardMachine) -> BisimWitness:
    """Decide bisimilarity of two deterministic machines.

    Pairs states reachable by the same strings with a union-find worklist,
    near-linear in the number of edges. Related states must agree on
    finality and on which events are defined; a violation is reported as
    the event string reaching it (shortest first, the worklist is FIFO).
    """
    rm1.require_valid()
    rm2.require_valid()
    a1, a2 = set(rm1.alphabet), set(rm2.alphabet)
    alphabet = tuple(rm1.alphabet) + tuple(e for e in rm2.alphabet if e not in a1)
    mismatch = a1 != a2
    note = "alphabet mismatch" if mismatch else ""

    uf = _UnionFind([("L", s) for s in rm1.states] + [("R", s) for s in rm2.states])
    start = (rm1.initial, rm2.initial)
    parent: dict[tuple[str, str], tuple[tuple[str, str], str]] = {}
    pairs: list[tuple[str, str]] = [start]
    uf.union(("L", start[0]), ("R", start[1]))
    queue: deque[tuple[str, str]] = deque([start])

    def path_to(pair: tuple[str, str]) -> tuple[str, ...]:
        events: list[str] = []
        while pair in parent:
            pair, e = parent[pair]
            events.append(e)
        return tuple(reversed(events))

    while queue:
        pair = queue.popleft()
        u1, u2 = pair
        if (u1 in rm1.final_states) != (u2 in rm2.final_states):
            return BisimWitness(False, counterexample=path_to(pair), note=note)
        for e in alphabet:
            d1 = rm1.delta.get((u1, e)) if e in a1 else None
            d2 = rm2.delta.get((u2, e)) if e in a2 else None
            if (d1 is None) != (d2 is None):
                return BisimWitness(
                    False, counterexample=path_to(pair) + (e,), note=note
                )
            if d1 is None:
                continue
            if uf.union(("L", d1), ("R", d2)):
                nxt = (d1, d2)
                if nxt not in parent and nxt != start:
                    parent[nxt] = (pair, e)
                pairs.append(nxt)
                queue.append(nxt)
    if mismatch:
        return BisimWitness(False, note=note)
    return BisimWitness(True, relation=tuple(pairs))


@dataclass(frozen=True)
class DecompositionReport:
    """Result of checking a team machine against per-agent event sets."""

    cover_ok: bool
    missing_events: tuple[str, ...]
    projections: tuple[ProjectedRM, ...]
    composed: RewardMachine | None
    bisimilar: bool | None
    witness: BisimWitness | None

    @property
    def valid(self) -> bool:
        return self.cover_ok and bool(self.bisimilar)

    def summary(self) -> str:
        if not self.cover_ok:
            return "cover: FAIL (uncovered events: " + " ".join(self.missing_events) + ")"
        lines = ["cover: ok"]
        for i, proj in enumerate(self.projections):
            lines.append(
                f"agent {i}: {len(proj.machine.states)} states over "
                + " ".join(proj.sigma)
            )
        if self.bisimilar:
            lines.append("composition bisimilar to the team machine: yes")
        else:
            lines.append("composition bisimilar to the team machine: NO")
            assert self.witness is not None
            if self.witness.counterexample is not None:
                lines.append(
                    "counterexample: " + " ".join(self.witness.counterexample)
                )
            if self.witness.note:
                lines.append("note: " + self.witness.note)
        return "\n".join(lines)


def check_decomposition(
    rm: RewardMachine, sigmas: Sequence[Iterable[str]]
) -> DecompositionReport:
    """Project `rm` onto each event set, compose the projections and test
    bisimilarity against `rm`. The event sets must jointly cover the
    alphabet; if they do not, the report says so and skips the rest."""
    rm.require_valid()
    normalized = [_normalize_sigma(rm, s) for s in sigmas]
    if not normalized:
        raise ValueError("need at least one event set")
    covered = set().union(*map(set, normalized))
    missing = tuple(e for e in rm.alphabet if e not in covered)
    if missing:
        return DecompositionReport(
            cover_ok=False,
            missing_events=missing,
            projections=(),
            composed=None,
            bisimilar=None,
            witness=None,
        )
    projections = tuple(project(rm, s) for s in normalized)
    composed = compose_many([p.machine for p in projections])
    witness = is_bisimilar(rm, composed)
    return DecompositionReport(
        cover_ok=True,
        missing_events=(),
        projections=projections,
        composed=composed,
        bisimilar=witness.bisimilar,
        witness=witness,
    )
