from importlib import resources

import pytest

from rm_marl import RewardMachine, parse_rm
from rm_marl.algebra import project
from rm_marl.environments import make_domain
from rm_marl.labeling import (
    CollaboratorIndex,
    LabelingRule,
    Requirement,
    TeamLabeling,
    local_labelings,
)

BUTTONS_SIGMAS = (
    ("YB", "RB", "Goal"),
    ("YB", "GB", "A2RB", "A2NRB", "RB"),
    ("GB", "A3RB", "A3NRB", "RB"),
)

YB_CELL = (1, 4)
GB_CELL = (3, 8)
RB_CELL = (3, 9)
GOAL_CELL = (1, 6)

BUTTONS_WALLS = frozenset(
    {(r, 3) for r in range(2, 10)}
    | {(2, c) for c in range(4, 10)}
    | {(r, 7) for r in range(5, 10)}
    | {(4, 9)}
)


def load_domain_rm(name):
    text = (resources.files("rm_marl.domains") / name).read_text(encoding="utf-8")
    return parse_rm(text).require_valid()


class LineEnv:
    """Deterministic 3-cell corridor; actions are 0=left, 1=stay, 2=right.

    Implements the same protocol as IndividualGridEnv but with nothing
    random in it, so learned q-values can be compared against exact
    dynamic programming.
    """

    num_states = 3
    num_actions = 3
    start = 0

    def reset(self, rng):
        return self.start

    def step(self, s, a, occurred, rng):
        if a == 0:
            return max(0, s - 1)
        if a == 2:
            return min(self.num_states - 1, s + 1)
        return s


# one event per arrival cell and machine state: the agent shuttles the
# corridor end to end four times, giving a 3 x 5 = 15-state product
CHAIN_LABELS = {
    (2, "u0"): ("e1",),
    (0, "u1"): ("e2",),
    (2, "u2"): ("e3",),
    (0, "u3"): ("e4",),
}


def chain_label_of(s, u):
    return CHAIN_LABELS.get((s, u), ())


def make_chain_rm():
    states = ["u0", "u1", "u2", "u3", "u4"]
    transitions = {(f"u{k}", f"e{k + 1}"): f"u{k + 1}" for k in range(4)}
    return RewardMachine(
        states, "u0", ["e1", "e2", "e3", "e4"], transitions, ["u4"]
    )


def chain_occurred(rm):
    return {u: frozenset() for u in rm.states}


def make_buttons_rules():
    def at(agent, cell, negate=False):
        return Requirement(agent, frozenset({cell}), negate)

    return (
        LabelingRule("YB", frozenset({"u_I"}), (at(0, YB_CELL),)),
        LabelingRule("GB", frozenset({"u_1"}), (at(1, GB_CELL),)),
        LabelingRule("A2RB", frozenset({"u_2", "u_4"}), (at(1, RB_CELL),)),
        LabelingRule("A3RB", frozenset({"u_2", "u_3"}), (at(2, RB_CELL),)),
        LabelingRule("A2NRB", frozenset({"u_3", "u_5"}), (at(1, RB_CELL, True),)),
        LabelingRule("A3NRB", frozenset({"u_4", "u_5"}), (at(2, RB_CELL, True),)),
        LabelingRule("RB", frozenset({"u_5"}), (at(1, RB_CELL), at(2, RB_CELL))),
        LabelingRule("Goal", frozenset({"u_6"}), (at(0, GOAL_CELL),)),
    )


@pytest.fixture(scope="session")
def buttons_rm():
    return load_domain_rm("buttons_team.rm")


@pytest.fixture(scope="session")
def buttons_sigmas():
    return BUTTONS_SIGMAS


@pytest.fixture(scope="session")
def buttons_index():
    return CollaboratorIndex.from_sigmas(BUTTONS_SIGMAS)


@pytest.fixture(scope="session")
def buttons_labeling(buttons_index):
    return TeamLabeling(rules=make_buttons_rules(), index=buttons_index)


@pytest.fixture(scope="session")
def buttons_projections(buttons_rm):
    return tuple(project(buttons_rm, s) for s in BUTTONS_SIGMAS)


@pytest.fixture(scope="session")
def buttons_locals(buttons_labeling, buttons_projections):
    return local_labelings(buttons_labeling, buttons_projections)


@pytest.fixture(scope="session")
def buttons_free_cells():
    return tuple(
        (r, c)
        for r in range(10)
        for c in range(10)
        if (r, c) not in BUTTONS_WALLS
    )


@pytest.fixture(scope="session")
def buttons_bundle():
    return make_domain("buttons")


@pytest.fixture(scope="session")
def rdv2_bundle():
    return make_domain("rendezvous-2")


@pytest.fixture(scope="session")
def rdv10_bundle():
    return make_domain("rendezvous-10")
