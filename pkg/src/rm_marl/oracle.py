"""Exact shortest-completion search for small team domains.

Breadth-first search over (joint position, team machine state) with
deterministic moves (no slip) and the same immediate event fold the
runtime uses. The result is a lower bound on any executed episode's
steps-to-completion: slip and imperfect policies can only slow a team
down, never beat noiseless optimal play.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import product

from .environments import ACTIONS, DomainBundle

__all__ = ["OracleTooLargeError", "OracleResult", "shortest_completion"]


class OracleTooLargeError(ValueError):
    """The joint search space exceeds the configured node budget."""

    def __init__(self, estimate: int, limit: int):
        self.estimate = estimate
        self.limit = limit
        super().__init__(
            f"shortest-completion search needs about {estimate} states, "
            f"over the limit of {limit}; raise max_states to force it"
        )


@dataclass(frozen=True)
class OracleResult:
    """steps is None when no completing play exists at all."""

    steps: int | None
    explored: int

    @property
    def completable(self) -> bool:
        return self.steps is not None


def shortest_completion(
    bundle: DomainBundle, *, max_states: int = 2_000_000
) -> OracleResult:
    rm = bundle.rm
    domain = bundle.domain
    n = bundle.num_agents
    cells = domain.free_cells()
    estimate = len(cells) ** n * len(rm.states)
    if estimate > max_states:
        raise OracleTooLargeError(estimate, max_states)

    index_of = {cell: k for k, cell in enumerate(cells)}

    # move[u][i][p][a] -> next position index under deterministic motion
    # with agent i's regions gated by what has occurred at team state u
    def move_table(u: str) -> list[list[list[int]]]:
        occurred = bundle.team_occurred[u]
        closed = [
            frozenset().union(
                *(
                    r.cells
                    for r in domain.regions
                    if r.agent == i and r.opens_on not in occurred
                ),
                frozenset(),
            )
            for i in range(n)
        ]
        table = []
        for i in range(n):
            rows = []
            for cell in cells:
                row = []
                for dr, dc in ACTIONS:
                    nxt = (cell[0] + dr, cell[1] + dc)
                    if not domain.is_free(nxt) or nxt in closed[i]:
                        nxt = cell
                    row.append(index_of[nxt])
                rows.append(row)
            table.append(rows)
        return table

    moves: dict[str, list[list[list[int]]]] = {}

    def fold(u: str, at: tuple[int, ...]) -> str:
        label = bundle.team_labeling.label(tuple(cells[p] for p in at), u)
        for e in bundle.index.ordered(label):
            v = rm.delta.get((u, e))
            if v is not None:
                u = v
        return u

    u0 = rm.initial
    if u0 in rm.final_states:
        return OracleResult(0, 0)
    start = (tuple(index_of[c] for c in domain.starts), u0)
    joint_actions = tuple(product(range(len(ACTIONS)), repeat=n))
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        (at, u), depth = frontier.popleft()
        if u not in moves:
            moves[u] = move_table(u)
        table = moves[u]
        for acts in joint_actions:
            nxt = tuple(table[i][at[i]][acts[i]] for i in range(n))
            u2 = fold(u, nxt)
            if u2 in rm.final_states:
                return OracleResult(depth + 1, len(seen))
            node = (nxt, u2)
            if node not in seen:
                seen.add(node)
                frontier.append((node, depth + 1))
    return OracleResult(None, len(seen))
