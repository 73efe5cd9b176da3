"""Gridworld dynamics, domain configs, and the shipped domains."""

import dataclasses
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BUTTONS_SIGMAS, BUTTONS_WALLS, make_buttons_rules
from rm_marl.algebra import is_bisimilar
from rm_marl.environments import (
    ACTIONS,
    STAY,
    ConfigError,
    GridWorldDomain,
    IndividualGridEnv,
    TeamGridEnv,
    build_rendezvous_machine,
    events_occurred,
    make_domain,
    shipped_domains,
    step_agent,
    step_team,
)
from rm_marl.labeling import verify_labeling_factored
from rm_marl.machine import parse_rm


def toy_domain(slip=0.0):
    return GridWorldDomain(
        name="toy",
        width=3,
        height=3,
        walls=frozenset({(1, 1)}),
        num_agents=1,
        starts=((0, 0),),
        regions=(),
        slip_prob=slip,
    )


class TestStepAgent:
    def test_slip_rate(self, rdv2_bundle):
        domain = rdv2_bundle.domain
        rng = np.random.default_rng(42)
        outcomes = {(5, 6): 0, (6, 5): 0, (4, 5): 0}
        n = 100_000
        for _ in range(n):
            outcomes[step_agent(domain, 0, (5, 5), 3, rng)] += 1
        perp = (outcomes[(6, 5)] + outcomes[(4, 5)]) / n
        assert abs(perp - 0.02) < 0.003
        # the slip mass is split evenly between the two perpendiculars
        assert abs(outcomes[(6, 5)] / n - 0.01) < 0.0025
        assert abs(outcomes[(4, 5)] / n - 0.01) < 0.0025

    def test_slip_never_reverses(self, rdv2_bundle):
        rng = np.random.default_rng(7)
        for _ in range(5_000):
            assert step_agent(rdv2_bundle.domain, 0, (5, 5), 0, rng) != (4, 5)

    def test_stay_moves_nothing_and_draws_nothing(self, rdv2_bundle):
        rng = np.random.default_rng(3)
        before = rng.bit_generator.state
        assert step_agent(rdv2_bundle.domain, 0, (5, 5), STAY, rng) == (5, 5)
        assert rng.bit_generator.state == before

    def test_moves_consume_one_draw(self, rdv2_bundle):
        rng_a = np.random.default_rng(11)
        rng_b = np.random.default_rng(11)
        step_agent(rdv2_bundle.domain, 0, (5, 5), 2, rng_a)
        rng_b.random()
        assert rng_a.bit_generator.state == rng_b.bit_generator.state

    def test_wall_blocks(self):
        domain = toy_domain()
        rng = np.random.default_rng(0)
        assert step_agent(domain, 0, (0, 1), 0, rng) == (0, 1)

    def test_boundary_blocks(self):
        domain = toy_domain()
        rng = np.random.default_rng(0)
        assert step_agent(domain, 0, (0, 0), 2, rng) == (0, 0)
        assert step_agent(domain, 0, (0, 0), 1, rng) == (0, 0)

    def test_region_gates_only_its_agent(self, buttons_bundle):
        domain = dataclasses.replace(buttons_bundle.domain, slip_prob=0.0)
        rng = np.random.default_rng(0)
        # (7, 5) is in the yellow region, closed to agent 1 until YB
        assert step_agent(domain, 1, (8, 5), 1, rng) == (8, 5)
        assert step_agent(domain, 1, (8, 5), 1, rng, frozenset({"YB"})) == (7, 5)
        assert step_agent(domain, 0, (8, 5), 1, rng) == (7, 5)

    def test_unknown_action_rejected(self, rdv2_bundle):
        with pytest.raises(ValueError, match="unknown action"):
            step_agent(rdv2_bundle.domain, 0, (5, 5), 9, np.random.default_rng(0))

    def test_step_team_is_componentwise(self, rdv2_bundle):
        domain = rdv2_bundle.domain
        joint = ((2, 2), (7, 7))
        actions = (3, 1)
        seeds = (100, 101)
        team = step_team(
            domain,
            joint,
            actions,
            [np.random.default_rng(s) for s in seeds],
            [frozenset(), frozenset()],
        )
        solo = tuple(
            step_agent(domain, i, joint[i], actions[i], np.random.default_rng(seeds[i]))
            for i in range(2)
        )
        assert team == solo

    @settings(max_examples=30, deadline=None)
    @given(
        seed=st.integers(0, 10**6),
        actions=st.lists(st.integers(0, 4), min_size=1, max_size=60),
    )
    def test_walk_stays_on_free_cells(self, buttons_bundle, seed, actions):
        domain = buttons_bundle.domain
        rng = np.random.default_rng(seed)
        pos = domain.starts[1]
        for a in actions:
            pos = step_agent(domain, 1, pos, a, rng, frozenset({"YB"}))
            assert domain.is_free(pos)


class TestEventsOccurred:
    def test_buttons_chain(self, buttons_bundle):
        occ = buttons_bundle.team_occurred
        assert occ["u_I"] == frozenset()
        assert occ["u_1"] == frozenset({"YB"})
        # the press/release events loop back, so they count as having
        # occurred anywhere in the diamond
        assert occ["u_2"] == frozenset(
            {"YB", "GB", "A2RB", "A3RB", "A2NRB", "A3NRB"}
        )
        assert occ["u_6"] == frozenset(
            {"YB", "GB", "RB", "A2RB", "A3RB", "A2NRB", "A3NRB"}
        )
        assert occ["u_7"] == frozenset(buttons_bundle.rm.alphabet)

    def test_rendezvous_chain(self, rdv2_bundle):
        occ = rdv2_bundle.team_occurred
        assert occ["w0|w0"] == frozenset()
        assert occ["g|g"] == frozenset({"Rdv1", "Rdv2", "Rdv"})
        assert occ["f|f"] == frozenset({"Rdv1", "Rdv2", "Rdv", "G1", "G2"})

    def test_local_occurrences_support_gating(self, buttons_bundle):
        # each region's gate event must become visible in the gated
        # agent's own projected machine
        for region in buttons_bundle.domain.regions:
            occ = buttons_bundle.local_occurred[region.agent]
            assert any(region.opens_on in seen for seen in occ.values())

    def test_buttons_memory_abstraction(self, buttons_bundle):
        assert buttons_bundle.num_memories == 4
        assert buttons_bundle.memory_of == {
            "u_I": 0,
            "u_1": 1,
            "u_2": 2,
            "u_3": 2,
            "u_4": 2,
            "u_5": 2,
            "u_6": 3,
            "u_7": 3,
        }

    def test_rendezvous_memory_abstraction(self, rdv2_bundle):
        # pre-rendezvous states collapse to one memory; afterwards the
        # goal bits distinguish 2^2 sets
        assert rdv2_bundle.num_memories == 5
        assert events_occurred(rdv2_bundle.rm) == rdv2_bundle.team_occurred


class TestShippedDomains:
    def test_names(self):
        assert shipped_domains() == ("buttons", "rendezvous-2", "rendezvous-10")

    def test_buttons_layout(self, buttons_bundle):
        domain = buttons_bundle.domain
        assert (domain.width, domain.height) == (10, 10)
        assert domain.walls == BUTTONS_WALLS
        assert len(domain.free_cells()) == 80
        assert domain.starts == ((1, 3), (9, 5), (9, 8))
        assert domain.slip_prob == 0.02
        assert {r.name for r in domain.regions} == {"yellow", "green", "red"}

    def test_buttons_rules_and_sigmas(self, buttons_bundle):
        assert buttons_bundle.sigmas == BUTTONS_SIGMAS
        assert tuple(buttons_bundle.team_labeling.rules) == make_buttons_rules()
        assert buttons_bundle.memory_events == ("YB", "GB", "RB")

    def test_buttons_certifies(self, buttons_bundle):
        automata, labeling = buttons_bundle.certify()
        assert automata.bisimilar
        assert labeling.ok
        assert labeling.method == "joint"
        assert labeling.pair_count == 80**3 * 8

    def test_buttons_factored_route_agrees(self, buttons_bundle):
        cells = buttons_bundle.domain.free_cells()
        report = verify_labeling_factored(
            buttons_bundle.rm,
            buttons_bundle.team_labeling,
            buttons_bundle.local_labelings,
            [cells] * 3,
        )
        assert report.ok

    def test_rendezvous2_matches_explicit_machine(self, rdv2_bundle):
        text = (
            resources.files("rm_marl.domains") / "rendezvous2_team.rm"
        ).read_text(encoding="utf-8")
        explicit = parse_rm(text).require_valid()
        assert len(rdv2_bundle.rm.states) == 8
        assert is_bisimilar(rdv2_bundle.rm, explicit).bisimilar

    def test_rendezvous2_certifies(self, rdv2_bundle):
        automata, labeling = rdv2_bundle.certify()
        assert automata.bisimilar
        assert labeling.ok
        assert labeling.method == "joint"
        assert labeling.pair_count == 100**2 * 8

    def test_rendezvous10_certifies_via_factored_route(self, rdv10_bundle):
        assert len(rdv10_bundle.rm.states) == 2048
        automata, labeling = rdv10_bundle.certify()
        assert automata.bisimilar
        assert labeling.ok
        assert labeling.method == "factored"
        assert labeling.pair_count == 147**10 * 2048

    @pytest.mark.parametrize(
        "bundle_name", ["buttons_bundle", "rdv2_bundle", "rdv10_bundle"]
    )
    def test_guards_equal_transition_domains(self, bundle_name, request):
        # every rule fires exactly where its event has a transition, so
        # fold order within a step can never hit an undefined edge
        bundle = request.getfixturevalue(bundle_name)
        for rule in bundle.team_labeling.rules:
            domain_states = {
                u for u in bundle.rm.states if (u, rule.event) in bundle.rm.delta
            }
            assert rule.guard == domain_states, rule.event

    def test_options_per_agent(self, buttons_bundle):
        names = [o.name for o in buttons_bundle.options_for(0)]
        assert names == ["to-yellow-button", "to-goal"]
        assert [o.name for o in buttons_bundle.options_for(2)] == ["to-red-button"]
        goal_opt = buttons_bundle.options_for(0)[1]
        assert goal_opt.target == (1, 6)
        assert goal_opt.requires == ("RB",)

    def test_loads_from_explicit_path(self, tmp_path):
        for name in ("buttons.toml", "buttons_team.rm"):
            data = (resources.files("rm_marl.domains") / name).read_text(
                encoding="utf-8"
            )
            (tmp_path / name).write_text(data, encoding="utf-8")
        bundle = make_domain(tmp_path / "buttons.toml")
        assert tuple(bundle.team_labeling.rules) == make_buttons_rules()


class TestBuildRendezvousMachine:
    def test_single_agent_chain(self):
        rm, sigmas = build_rendezvous_machine(1)
        assert rm.states == ("w0", "w1", "g", "f")
        assert sigmas == (("Rdv1", "Rdv", "G1"),)

    def test_two_agents(self):
        rm, sigmas = build_rendezvous_machine(2)
        assert len(rm.states) == 8
        assert rm.initial == "w0|w0"
        assert sigmas == (("Rdv1", "Rdv", "G1"), ("Rdv2", "Rdv", "G2"))

    def test_rejects_zero_agents(self):
        with pytest.raises(ValueError):
            build_rendezvous_machine(0)


MINI_RM = """\
states: a b
initial: a
alphabet: X
final: b
a -X-> b
"""

MINI_CONFIG = """\
name = "mini"
agents = 1

[grid]
width = 3
height = 3
starts = [[0, 0]]
walls = [[1, 1]]

[machine]
file = "mini.rm"

[events]
sigmas = [["X"]]
memory = ["X"]

[[rules]]
event = "X"
guard = ["a"]
[[rules.requirements]]
agent = 0
cells = [[2, 2]]
"""


class TestConfigErrors:
    def load(self, tmp_path, config_text, rm_text=MINI_RM):
        (tmp_path / "mini.rm").write_text(rm_text, encoding="utf-8")
        path = tmp_path / "mini.toml"
        path.write_text(config_text, encoding="utf-8")
        return make_domain(path)

    def expect(self, tmp_path, config_text, fragment):
        with pytest.raises(ConfigError) as excinfo:
            self.load(tmp_path, config_text)
        assert fragment in str(excinfo.value), str(excinfo.value)

    def test_mini_config_is_valid(self, tmp_path):
        bundle = self.load(tmp_path, MINI_CONFIG)
        assert bundle.name == "mini"
        assert bundle.num_memories == 2

    def test_unknown_shipped_name(self):
        with pytest.raises(ConfigError, match="no shipped domain"):
            make_domain("atlantis")

    def test_invalid_toml(self, tmp_path):
        self.expect(tmp_path, "name = [unclosed", "not valid TOML")

    def test_unknown_top_level_key(self, tmp_path):
        self.expect(tmp_path, MINI_CONFIG + "\nzoom = 1\n", "zoom: unknown key")

    def test_missing_width(self, tmp_path):
        self.expect(
            tmp_path, MINI_CONFIG.replace("width = 3\n", ""), "grid.width: missing"
        )

    def test_wrong_type(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace("agents = 1", 'agents = "one"'),
            "agents: expected int, got str",
        )

    def test_agents_must_be_positive(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace("agents = 1", "agents = 0"),
            "agents: must be at least 1",
        )

    def test_start_out_of_bounds(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace("starts = [[0, 0]]", "starts = [[5, 0]]"),
            "grid.starts[0]: cell [5, 0] not free",
        )

    def test_start_count_mismatch(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace("starts = [[0, 0]]", "starts = [[0, 0], [2, 0]]"),
            "grid.starts: expected 1 entries, got 2",
        )

    def test_slip_out_of_range(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace("walls = [[1, 1]]", "walls = [[1, 1]]\nslip = 1.5"),
            "grid.slip: must be in [0, 1)",
        )

    def test_missing_machine_file(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace('file = "mini.rm"', 'file = "nope.rm"'),
            "machine.file: cannot read 'nope.rm'",
        )

    def test_sigma_event_not_in_alphabet(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace('sigmas = [["X"]]', 'sigmas = [["X", "Y"]]'),
            "events.sigmas[0]: 'Y' not in the machine alphabet",
        )

    def test_uncovered_event(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace('sigmas = [["X"]]', "sigmas = [[]]"),
            "events.sigmas: event 'X' is in no agent's set",
        )

    def test_guard_state_unknown(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace('guard = ["a"]', 'guard = ["zz"]'),
            "rules[0].guard: unknown state 'zz'",
        )

    def test_guard_outside_transition_domain(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace('guard = ["a"]', 'guard = ["b"]'),
            "rules[0].guard: event X has no transition from b",
        )

    def test_requirement_cell_is_a_wall(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace("cells = [[2, 2]]", "cells = [[1, 1]]"),
            "rules[0].requirements[0].cells: cell [1, 1] is a wall",
        )

    def test_requirement_agent_unknown(self, tmp_path):
        self.expect(
            tmp_path,
            MINI_CONFIG.replace(
                "[[rules.requirements]]\nagent = 0",
                "[[rules.requirements]]\nagent = 4",
            ),
            "rules[0].requirements[0].agent: no agent 4",
        )

    def test_region_opens_on_unknown_event(self, tmp_path):
        extra = (
            '\n[[regions]]\nname = "pen"\nagent = 0\nopens_on = "Q"\n'
            "cells = [[2, 0]]\n"
        )
        self.expect(
            tmp_path,
            MINI_CONFIG + extra,
            "regions[0].opens_on: 'Q' not in the machine alphabet",
        )

    def test_region_gate_must_be_observable(self, tmp_path):
        config = MINI_CONFIG.replace("agents = 1", "agents = 2")
        config = config.replace(
            "starts = [[0, 0]]", "starts = [[0, 0], [2, 0]]"
        )
        config = config.replace('sigmas = [["X"]]', 'sigmas = [["X"], []]')
        config += (
            '\n[[regions]]\nname = "pen"\nagent = 1\nopens_on = "X"\n'
            "cells = [[2, 2]]\n"
        )
        self.expect(tmp_path, config, "'X' is not observable by agent 1")

    def test_option_requires_unknown_memory_event(self, tmp_path):
        extra = (
            '\n[[options]]\nagent = 0\nname = "go"\ntarget = [2, 2]\n'
            'requires = ["Z"]\n'
        )
        self.expect(
            tmp_path,
            MINI_CONFIG + extra,
            "options[0].requires: 'Z' is not a memory event",
        )

    def test_rendezvous_goal_count(self, tmp_path):
        config = (
            'name = "r"\nagents = 2\nkind = "rendezvous"\n\n[grid]\n'
            "width = 3\nheight = 3\nstarts = [[0, 0], [2, 2]]\nwalls = []\n\n"
            "[rendezvous]\ncell = [1, 1]\ngoals = [[0, 2]]\n"
        )
        self.expect(
            tmp_path, config, "rendezvous.goals: expected 2 entries, got 1"
        )

    def test_rendezvous_cell_and_cells_exclusive(self, tmp_path):
        config = (
            'name = "r"\nagents = 2\nkind = "rendezvous"\n\n[grid]\n'
            "width = 3\nheight = 3\nstarts = [[0, 0], [2, 2]]\nwalls = []\n\n"
            "[rendezvous]\ncell = [1, 1]\ncells = [[1, 1]]\n"
            "goals = [[0, 2], [2, 0]]\n"
        )
        self.expect(
            tmp_path, config, "rendezvous: give exactly one of 'cell' or 'cells'"
        )

    def test_rendezvous_zone_must_not_be_empty(self, tmp_path):
        config = (
            'name = "r"\nagents = 2\nkind = "rendezvous"\n\n[grid]\n'
            "width = 3\nheight = 3\nstarts = [[0, 0], [2, 2]]\nwalls = []\n\n"
            "[rendezvous]\ncells = []\ngoals = [[0, 2], [2, 0]]\n"
        )
        self.expect(tmp_path, config, "rendezvous.cells: empty")

    def test_rendezvous_rejects_explicit_sections(self, tmp_path):
        config = MINI_CONFIG.replace(
            'name = "mini"', 'name = "mini"\nkind = "rendezvous"'
        )
        self.expect(tmp_path, config, "machine: not allowed with kind = 'rendezvous'")

    def test_unknown_kind(self, tmp_path):
        config = MINI_CONFIG.replace(
            'name = "mini"', 'name = "mini"\nkind = "maze"'
        )
        self.expect(tmp_path, config, "kind: unknown domain kind 'maze'")


class TestEnvAdapters:
    def test_individual_env_matches_step_agent(self, buttons_bundle):
        env = IndividualGridEnv(buttons_bundle.domain, 1)
        assert env.num_states == 80
        assert env.cells[env.reset(np.random.default_rng(0))] == (9, 5)
        s = env.cell_index[(8, 5)]
        got = env.step(s, 1, frozenset({"YB"}), np.random.default_rng(12))
        want = step_agent(
            buttons_bundle.domain,
            1,
            (8, 5),
            1,
            np.random.default_rng(12),
            frozenset({"YB"}),
        )
        assert env.cells[got] == want

    @settings(max_examples=50, deadline=None)
    @given(data=st.data())
    def test_team_env_roundtrip(self, rdv2_bundle, data):
        env = TeamGridEnv(rdv2_bundle.domain)
        cells = data.draw(
            st.tuples(
                st.sampled_from(env.cells), st.sampled_from(env.cells)
            )
        )
        assert env.decode(env.encode(cells)) == cells
        action = data.draw(st.integers(0, env.num_actions - 1))
        parts = env.decode_action(action)
        assert len(parts) == 2
        assert action == parts[0] * 5 + parts[1]

    def test_team_env_step_is_componentwise(self, rdv2_bundle):
        env = TeamGridEnv(rdv2_bundle.domain)
        s = env.encode(((3, 4), (5, 4)))
        nxt = env.step(
            s,
            3 * 5 + 1,
            frozenset(),
            [np.random.default_rng(9), np.random.default_rng(10)],
        )
        want = (
            step_agent(rdv2_bundle.domain, 0, (3, 4), 3, np.random.default_rng(9)),
            step_agent(rdv2_bundle.domain, 1, (5, 4), 1, np.random.default_rng(10)),
        )
        assert env.decode(nxt) == want

    def test_team_env_sizes(self, rdv2_bundle):
        env = TeamGridEnv(rdv2_bundle.domain)
        assert env.num_states == 100**2
        assert env.num_actions == 25
        assert env.decode(env.reset(None)) == ((0, 0), (9, 9))
