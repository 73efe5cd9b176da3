"""Trainers, runners, action selection, and q-bank snapshots."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import corridor_values
from conftest import CHAIN_LABELS, LineEnv, chain_label_of, chain_occurred, make_chain_rm
from rm_marl import RewardMachine
from rm_marl.learners import (
    HOLD_LIMIT,
    NAVIGATE_LIMIT,
    BudgetExceededError,
    EpisodeResult,
    TrainerConfig,
    QRMTrainer,
    _ActiveOption,
    dqprm_execute,
    greedy_select,
    load_snapshot,
    make_runner,
    save_snapshot,
    softmax_select,
)


class CountingRNG:
    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    def random(self):
        self.calls += 1
        return self._rng.random()


def chain_trainer(config=None, seed=0, **kwargs):
    rm = make_chain_rm()
    cfg = config or TrainerConfig(tau=0.3, episode_len=200)
    return QRMTrainer(
        LineEnv(),
        rm,
        chain_label_of,
        chain_occurred(rm),
        cfg,
        np.random.default_rng(seed),
        **kwargs,
    )


class TestTrainerConfig:
    def test_defaults_are_valid(self):
        TrainerConfig()

    @pytest.mark.parametrize(
        "field,value",
        [
            ("gamma", 0.0),
            ("gamma", 1.1),
            ("alpha", 0.0),
            ("alpha", 1.5),
            ("tau", 0.0),
            ("tau", -1.0),
            ("sync_prob", 0.0),
            ("sync_prob", 1.2),
            ("episode_len", 0),
            ("total_steps", -1),
            ("test_every", 0),
            ("test_episodes", 0),
        ],
    )
    def test_rejects_bad_values(self, field, value):
        with pytest.raises(ValueError):
            TrainerConfig(**{field: value})

    def test_is_frozen(self):
        with pytest.raises(dataclasses.FrozenInstanceError):
            TrainerConfig().gamma = 0.5


class TestActionSelection:
    def test_greedy_breaks_ties_toward_lowest_index(self):
        assert greedy_select(np.array([0.0, 0.0, 0.0])) == 0
        assert greedy_select(np.array([0.2, 0.7, 0.7])) == 1

    def test_softmax_consumes_one_uniform_draw(self):
        rng = CountingRNG(3)
        softmax_select(np.array([0.1, 0.5, 0.2]), 0.5, rng)
        assert rng.calls == 1

    def test_softmax_near_zero_tau_is_greedy(self):
        rng = np.random.default_rng(0)
        row = np.array([0.1, 0.9, 0.3, 0.2])
        picks = {softmax_select(row, 0.02, rng) for _ in range(200)}
        assert picks == {1}

    def test_softmax_matches_boltzmann_frequencies(self):
        row = np.array([0.0, 0.1, 0.3])
        tau = 0.1
        p = np.exp(row / tau - row.max() / tau)
        p /= p.sum()
        rng = np.random.default_rng(11)
        counts = np.zeros(3)
        n = 20_000
        for _ in range(n):
            counts[softmax_select(row, tau, rng)] += 1
        assert np.abs(counts / n - p).max() < 0.02

    # integer-valued rows keep the shifted computation bitwise identical
    @given(
        qs=st.lists(st.integers(-16, 16), min_size=2, max_size=6),
        shift=st.integers(-8, 8),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_softmax_is_shift_invariant(self, qs, shift, seed):
        row = np.array(qs, dtype=float)
        a = softmax_select(row / 4, 0.5, np.random.default_rng(seed))
        b = softmax_select(row / 4 + shift, 0.5, np.random.default_rng(seed))
        assert a == b
        assert 0 <= a < len(qs)


class TestQRMTrainer:
    def test_rejects_machine_with_final_initial(self):
        done = RewardMachine(["u"], "u", ["e"], {}, ["u"])
        with pytest.raises(ValueError):
            QRMTrainer(
                LineEnv(),
                done,
                chain_label_of,
                {"u": frozenset()},
                TrainerConfig(),
                np.random.default_rng(0),
            )

    def test_writes_exactly_one_entry_per_machine_state_per_step(self):
        writes = []
        trainer = chain_trainer(
            write_hook=lambda u, s, a, q: writes.append((u, s, a, q))
        )
        n = 200
        trainer.run_steps(n)
        assert len(writes) == n * len(trainer.rm.states)
        states = set(trainer.rm.states)
        for k in range(n):
            chunk = writes[k * 5 : (k + 1) * 5]
            assert {u for u, _, _, _ in chunk} == states
            assert len({(s, a) for _, s, a, _ in chunk}) == 1

    def test_greedy_values_match_value_iteration(self):
        trainer = chain_trainer(seed=4)
        trainer.run_steps(60_000)
        rm = trainer.rm
        expected = corridor_values(rm, CHAIN_LABELS, trainer.config.gamma)
        for s in range(3):
            for u in rm.states:
                if u in rm.final_states:
                    continue
                got = float(trainer.q[u][s].max())
                assert got == pytest.approx(expected[(s, u)], abs=1e-3)

    def test_final_state_rows_stay_at_zero(self):
        trainer = chain_trainer(seed=4)
        trainer.run_steps(5_000)
        assert float(np.abs(trainer.q["u4"]).max()) == 0.0

    def test_q_values_stay_in_unit_interval(self):
        trainer = chain_trainer(seed=9)
        trainer.run_steps(5_000)
        for u in trainer.rm.states:
            assert trainer.q[u].min() >= 0.0
            assert trainer.q[u].max() <= 1.0

    def test_shared_events_fire_at_sync_prob_rate(self):
        rm = RewardMachine(["u0", "u1"], "u0", ["e"], {("u0", "e"): "u1"}, ["u1"])
        trainer = QRMTrainer(
            LineEnv(),
            rm,
            lambda s, u: ("e",),
            {u: frozenset() for u in rm.states},
            TrainerConfig(sync_prob=0.3, episode_len=10_000),
            np.random.default_rng(2),
            shared_events=frozenset({"e"}),
            sync_rng=np.random.default_rng(17),
        )
        n = 30_000
        completions = 0
        for _ in range(n):
            trainer.run_steps(1)
            completions += trainer.u in rm.final_states
        mean_wait = n / completions
        assert mean_wait == pytest.approx(1 / 0.3, rel=0.05)

    def test_sync_prob_one_equals_unconditional_firing(self):
        always = chain_trainer(
            TrainerConfig(tau=0.3, episode_len=200, sync_prob=1.0),
            seed=5,
            shared_events=frozenset({"e1", "e3"}),
            sync_rng=np.random.default_rng(99),
        )
        plain = chain_trainer(seed=5)
        always.run_steps(400)
        plain.run_steps(400)
        for u in plain.rm.states:
            np.testing.assert_array_equal(always.q[u], plain.q[u])

    def test_test_episode_reports_horizon_when_incomplete(self):
        trainer = chain_trainer()
        steps, completed = trainer.test_episode(np.random.default_rng(0), 7)
        assert (steps, completed) == (7, False)

    def test_test_episode_completes_after_training(self):
        trainer = chain_trainer(seed=4)
        trainer.run_steps(20_000)
        steps, completed = trainer.test_episode(np.random.default_rng(0))
        assert completed
        # start cell 0: right, right, left, left, right, right, left, left
        assert steps == 8


class TestRunners:
    def test_unknown_algorithm_is_rejected(self, rdv2_bundle):
        with pytest.raises(ValueError, match="unknown algorithm"):
            make_runner("sarsa", rdv2_bundle, TrainerConfig())

    def test_dqprm_is_deterministic_given_seed(self, rdv2_bundle):
        results = []
        for _ in range(2):
            runner = make_runner("dqprm", rdv2_bundle, TrainerConfig(), seed=(3, 4))
            runner.run_steps(500)
            results.append((runner.snapshot_arrays(), runner.test_episode()))
        arrays_a, result_a = results[0]
        arrays_b, result_b = results[1]
        assert result_a == result_b
        assert arrays_a.keys() == arrays_b.keys()
        for key in arrays_a:
            np.testing.assert_array_equal(arrays_a[key], arrays_b[key])

    def test_dqprm_execute_horizon_sentinel(self, rdv2_bundle):
        runner = make_runner(
            "dqprm", rdv2_bundle, TrainerConfig(episode_len=25), seed=0
        )
        result = runner.test_episode()
        assert result == EpisodeResult(25, False, (False, False))

    def test_dqprm_learns_rendezvous(self, rdv2_bundle):
        runner = make_runner("dqprm", rdv2_bundle, TrainerConfig(seed=7), seed=(7, 1))
        runner.run_steps(4000)
        result = runner.test_episode(np.random.default_rng(1))
        assert result.completed
        assert result.local_completed == (True, True)
        assert result.steps < 100

    def test_dqprm_execute_checks_the_projection_invariant(self, rdv2_bundle):
        # zero q-tables are a valid (if useless) policy; the invariant and
        # synchronization machinery must hold up for a full episode
        qtables = [
            {u: np.zeros((env_states, 5)) for u in m.states}
            for m, env_states in zip(
                rdv2_bundle.local_machines(),
                [100, 100],
            )
        ]
        result = dqprm_execute(
            rdv2_bundle, qtables, np.random.default_rng(3), max_steps=50
        )
        assert result.steps == 50
        assert not result.completed

    def test_iql_smoke(self, rdv2_bundle):
        runner = make_runner("iql", rdv2_bundle, TrainerConfig(), seed=1)
        runner.run_steps(300)
        result = runner.test_episode()
        assert isinstance(result, EpisodeResult)
        assert 1 <= result.steps <= runner.config.episode_len

    def test_cqrm_smoke_on_small_domain(self, rdv2_bundle):
        runner = make_runner("cqrm", rdv2_bundle, TrainerConfig(), seed=1)
        runner.run_steps(300)
        result = runner.test_episode()
        assert isinstance(result, EpisodeResult)
        assert result.local_completed == ()

    def test_cqrm_refuses_oversized_joint_space(self, buttons_bundle):
        with pytest.raises(BudgetExceededError) as err:
            make_runner("cqrm", buttons_bundle, TrainerConfig(), seed=0)
        assert err.value.estimate == 8 * 80**3 * 5**3
        assert err.value.limit == 50_000_000


class TestHIL:
    def test_hold_option_runs_exactly_hold_limit_steps(self, rdv2_bundle):
        runner = make_runner("hil", rdv2_bundle, TrainerConfig(), seed=0)
        hold = _ActiveOption(index=0, start_memory=0)
        assert not runner._option_done(0, hold, s=0)
        capped = dataclasses.replace(hold, steps=HOLD_LIMIT)
        assert runner._option_done(0, capped, s=0)

    def test_navigate_option_ends_at_target_or_cap(self, rdv2_bundle):
        runner = make_runner("hil", rdv2_bundle, TrainerConfig(), seed=0)
        option = runner.options[0][1]
        at_target = runner.envs[0].cell_index[option.target]
        elsewhere = (at_target + 1) % runner.envs[0].num_states
        nav = _ActiveOption(index=1, start_memory=0)
        assert runner._option_done(0, nav, s=at_target)
        assert not runner._option_done(0, nav, s=elsewhere)
        capped = dataclasses.replace(nav, steps=NAVIGATE_LIMIT)
        assert runner._option_done(0, capped, s=elsewhere)

    def test_navigate_options_gate_on_required_events(self, buttons_bundle):
        runner = make_runner("hil", buttons_bundle, TrainerConfig(), seed=0)
        nothing = buttons_bundle.memories.index(frozenset())
        everything = buttons_bundle.memories.index(frozenset({"YB", "GB", "RB"}))
        assert runner._available(1, nothing) == [0]
        assert runner._available(1, everything) == [0, 1, 2]

    def test_hil_smoke(self, rdv2_bundle):
        runner = make_runner("hil", rdv2_bundle, TrainerConfig(), seed=2)
        runner.run_steps(300)
        result = runner.test_episode()
        assert isinstance(result, EpisodeResult)
        assert 1 <= result.steps <= runner.config.episode_len


class TestSnapshots:
    def test_round_trip(self, rdv2_bundle, tmp_path):
        config = TrainerConfig(seed=7)
        runner = make_runner("dqprm", rdv2_bundle, config, seed=(7, 0))
        runner.run_steps(300)
        path = tmp_path / "bank.npz"
        save_snapshot(path, runner)
        meta, arrays = load_snapshot(path)
        assert meta["format"] == 1
        assert meta["algorithm"] == "dqprm"
        assert meta["domain"] == "rendezvous-2"
        assert meta["config"] == dataclasses.asdict(config)
        original = runner.snapshot_arrays()
        assert arrays.keys() == original.keys()
        for key in original:
            np.testing.assert_array_equal(arrays[key], original[key])

        fresh = make_runner("dqprm", rdv2_bundle, config, seed=(7, 0))
        fresh.load_arrays(arrays)
        rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
        assert fresh.test_episode(rng_a) == runner.test_episode(rng_b)

    def test_load_rejects_missing_and_misshapen_arrays(self, rdv2_bundle, tmp_path):
        runner = make_runner("dqprm", rdv2_bundle, TrainerConfig(), seed=0)
        path = tmp_path / "bank.npz"
        save_snapshot(path, runner)
        _, arrays = load_snapshot(path)

        fresh = make_runner("dqprm", rdv2_bundle, TrainerConfig(), seed=0)
        clipped = dict(arrays)
        victim = next(iter(clipped))
        del clipped[victim]
        with pytest.raises(KeyError):
            fresh.load_arrays(clipped)
        mangled = dict(arrays)
        mangled[victim] = np.zeros((2, 2))
        with pytest.raises(ValueError):
            fresh.load_arrays(mangled)

    def test_load_rejects_foreign_npz(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, stuff=np.arange(3))
        with pytest.raises(ValueError, match="not a q-bank"):
            load_snapshot(path)
