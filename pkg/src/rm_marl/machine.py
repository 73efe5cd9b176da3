"""Reward machines: finite-state task monitors over event alphabets.

A reward machine is a Mealy-style automaton with a partial, deterministic
transition function. The machines used throughout this package are in
task-completion form: reward 1 is emitted exactly on transitions that enter
a final state, final states have no outgoing transitions, and every other
transition emits 0.

Run semantics: events with no transition defined at the current state are
skipped (the state is unchanged). This makes a machine's verdict on an event
string well defined even when the string interleaves events the machine does
not care about at that moment.
"""

from __future__ import annotations

import re
from typing import Iterable, Mapping

__all__ = [
    "RewardMachine",
    "RMSyntaxError",
    "parse_rm",
    "serialize_rm",
    "natural_projection",
]


class RMSyntaxError(ValueError):
    """Malformed reward machine text; carries a 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


_STATE_RE = re.compile(r"[A-Za-z0-9_+|.()\-]+\Z")
_EVENT_RE = re.compile(r"[A-Za-z0-9_]+\Z")
_TRANSITION_RE = re.compile(
    r"(?P<src>[A-Za-z0-9_+|.()\-]+)\s*-(?P<event>[A-Za-z0-9_]+)->\s*(?P<dst>[A-Za-z0-9_+|.()\-]+)\Z"
)

_Edge = tuple[str, str, str]


class RewardMachine:
    """Immutable-by-convention reward machine.

    transitions may be given as a {(state, event): state} mapping or as an
    iterable of (state, event, state) triples. Triples are kept in
    construction order so validate() can report nondeterministic pairs that
    a dict would silently collapse.
    """

    def __init__(
        self,
        states: Iterable[str],
        initial: str,
        alphabet: Iterable[str],
        transitions: Mapping[tuple[str, str], str] | Iterable[_Edge],
        final_states: Iterable[str],
    ):
        self.states: tuple[str, ...] = tuple(states)
        self.initial: str = initial
        self.alphabet: tuple[str, ...] = tuple(alphabet)
        self.final_states: frozenset[str] = frozenset(final_states)
        if isinstance(transitions, Mapping):
            edges = tuple((u, e, v) for (u, e), v in transitions.items())
        else:
            edges = tuple(transitions)
        self.edges: tuple[_Edge, ...] = edges
        # First occurrence wins; duplicates are surfaced by validate().
        delta: dict[tuple[str, str], str] = {}
        for u, e, v in edges:
            delta.setdefault((u, e), v)
        self.delta: dict[tuple[str, str], str] = delta
        self._state_set = frozenset(self.states)
        self._alphabet_set = frozenset(self.alphabet)

    # ------------------------------------------------------------------
    # Dynamics

    def step(self, state: str, event: str) -> tuple[str, int] | None:
        """One transition. Returns (next_state, reward), or None if no
        transition on `event` is defined at `state`.

        Unknown states or events are input errors, distinct from the
        in-alphabet "no transition defined here" case.
        """
        if state not in self._state_set:
            raise ValueError(f"unknown state {state!r}")
        if event not in self._alphabet_set:
            raise ValueError(f"unknown event {event!r}")
        nxt = self.delta.get((state, event))
        if nxt is None:
            return None
        reward = 1 if state not in self.final_states and nxt in self.final_states else 0
        return nxt, reward

    def apply(self, state: str, events: Iterable[str]) -> tuple[str, int]:
        """Fold a sequence of events from `state`, skipping undefined
        transitions. Returns (resulting state, total reward)."""
        total = 0
        for event in events:
            out = self.step(state, event)
            if out is not None:
                state, r = out
                total += r
        return state, total

    def delta_extended(self, state: str, events: Iterable[str]) -> str:
        """State reached from `state` after folding `events` (undefined
        transitions skipped)."""
        return self.apply(state, events)[0]

    def run(self, events: Iterable[str]) -> tuple[str, bool]:
        """Run the machine on an event string from its initial state.

        Returns (final state of the run, completed flag). The completed flag
        is the machine's verdict: True iff the run ends in a final state.
        """
        state, _ = self.apply(self.initial, events)
        return state, state in self.final_states

    def is_final(self, state: str) -> bool:
        return state in self.final_states

    def events_defined_at(self, state: str) -> tuple[str, ...]:
        """Events with a transition at `state`, in alphabet order."""
        return tuple(e for e in self.alphabet if (state, e) in self.delta)

    # ------------------------------------------------------------------
    # Well-formedness

    def validate(self) -> list[str]:
        """Return a list of human-readable violations; empty means valid.

        Checks: membership of the initial state, final states and transition
        endpoints; events drawn from the alphabet; no duplicate state or
        alphabet entries; determinism; no outgoing transitions from final
        states.
        """
        problems: list[str] = []
        seen_states: set[str] = set()
        for s in self.states:
            if s in seen_states:
                problems.append(f"duplicate state {s}")
            seen_states.add(s)
        seen_events: set[str] = set()
        for e in self.alphabet:
            if e in seen_events:
                problems.append(f"duplicate alphabet symbol {e}")
            seen_events.add(e)
        if self.initial not in self._state_set:
            problems.append(f"initial state {self.initial} not in state set")
        for f in sorted(self.final_states):
            if f not in self._state_set:
                problems.append(f"final state {f} not in state set")
        seen_pairs: dict[tuple[str, str], str] = {}
        for u, e, v in self.edges:
            if u not in self._state_set:
                problems.append(f"transition from unknown state {u}")
            if v not in self._state_set:
                problems.append(f"transition to unknown state {v}")
            if e not in self._alphabet_set:
                problems.append(f"transition on unknown event {e}")
            if (u, e) in seen_pairs:
                problems.append(f"nondeterministic transition from {u} on {e}")
            else:
                seen_pairs[(u, e)] = v
            if u in self.final_states:
                problems.append(f"outgoing transition from final state {u}")
        return problems

    def require_valid(self) -> "RewardMachine":
        problems = self.validate()
        if problems:
            raise ValueError("invalid reward machine: " + "; ".join(problems))
        return self

    # ------------------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RewardMachine):
            return NotImplemented
        return (
            self.states == other.states
            and self.initial == other.initial
            and self.alphabet == other.alphabet
            and self.delta == other.delta
            and self.final_states == other.final_states
        )

    __hash__ = None  # mutable-looking container; identity hashing would mislead

    def __repr__(self) -> str:
        return (
            f"RewardMachine(states={len(self.states)}, alphabet={len(self.alphabet)}, "
            f"transitions={len(self.delta)}, initial={self.initial!r})"
        )


# ----------------------------------------------------------------------
# Text format
#
#   states: u_I u_1 u_2
#   initial: u_I
#   alphabet: YB GB
#   final: u_2
#   u_I -YB-> u_1
#   u_1 -GB-> u_2
#
# '#' starts a comment, blank lines are ignored, whitespace is free-form.
# Serialization is canonical: the four header lines in the order above,
# then transitions sorted lexicographically.

_SECTIONS = ("states", "initial", "alphabet", "final")


def parse_rm(text: str) -> RewardMachine:
    """Parse the reward machine text format.

    Syntax problems (including duplicate transition lines) raise
    RMSyntaxError with the offending line number. Semantic problems such as
    nondeterminism against the declared sections are left to validate().
    """
    sections: dict[str, list[str]] = {}
    edges: list[_Edge] = []
    seen_pairs: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" in line:
            key, _, rest = line.partition(":")
            key = key.strip()
            if key not in _SECTIONS:
                raise RMSyntaxError(f"unknown section {key!r}", lineno)
            if key in sections:
                raise RMSyntaxError(f"duplicate section {key!r}", lineno)
            names = rest.split()
            for name in names:
                pattern = _EVENT_RE if key == "alphabet" else _STATE_RE
                if not pattern.match(name):
                    raise RMSyntaxError(f"bad name {name!r} in section {key!r}", lineno)
            sections[key] = names
            continue
        m = _TRANSITION_RE.match(line)
        if m is None:
            raise RMSyntaxError(f"cannot parse {line!r}", lineno)
        src, event, dst = m.group("src"), m.group("event"), m.group("dst")
        if (src, event) in seen_pairs:
            raise RMSyntaxError(f"duplicate transition from {src} on {event}", lineno)
        seen_pairs.add((src, event))
        edges.append((src, event, dst))
    for key in ("states", "initial", "alphabet", "final"):
        if key not in sections:
            raise RMSyntaxError(f"missing section {key!r}")
    if len(sections["initial"]) != 1:
        raise RMSyntaxError("section 'initial' must name exactly one state")
    return RewardMachine(
        states=sections["states"],
        initial=sections["initial"][0],
        alphabet=sections["alphabet"],
        transitions=edges,
        final_states=sections["final"],
    )


def serialize_rm(rm: RewardMachine) -> str:
    """Canonical text for a reward machine; parse_rm round-trips it."""
    finals = [s for s in rm.states if s in rm.final_states]
    # Final states not present in the state list (invalid machines) still
    # serialize so that parse->validate reproduces the problem.
    finals += sorted(rm.final_states - set(rm.states))
    lines = [
        "states: " + " ".join(rm.states),
        "initial: " + rm.initial,
        "alphabet: " + " ".join(rm.alphabet),
        "final: " + " ".join(finals),
    ]
    lines.extend(sorted(f"{u} -{e}-> {v}" for (u, e), v in rm.delta.items()))
    return "\n".join(lines) + "\n"


def natural_projection(events: Iterable[str], sigma: Iterable[str]) -> tuple[str, ...]:
    """Subsequence of `events` retaining only symbols in `sigma`."""
    keep = frozenset(sigma)
    return tuple(e for e in events if e in keep)
