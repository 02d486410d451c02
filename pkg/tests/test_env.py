import dataclasses
import math

import numpy as np
import pytest

from carbonopt.env import (
    Action,
    DEFAULT_REWARD_SCALE,
    EnvConfig,
    NetworkState,
    calibrate_reward_scale,
    denormalize_action,
    evaluate,
    normalize_action,
    normalize_state,
    oracle_best,
    sample_state,
)


def make_state(**overrides):
    fields = dict(
        channel_gain=2e-8,
        renewable_fraction=0.4,
        grid_intensity=1.5e-4,
        intermediate_size=4e6,
        edge_cycles=1e9,
        user_cycles=3e8,
    )
    fields.update(overrides)
    return NetworkState(**fields)


class TestSampleState:
    def test_degenerate_ranges_give_exact_state(self):
        cfg = EnvConfig(
            channel_gain_range=(3e-8, 3e-8),
            renewable_fraction_range=(0.25, 0.25),
            grid_intensity_range=(1.1e-4, 1.1e-4),
            intermediate_size_range=(2e6, 2e6),
            edge_cycles_range=(6e8, 6e8),
            user_cycles_range=(2e8, 2e8),
        )
        s = sample_state(np.random.default_rng(0), cfg)
        assert s == NetworkState(3e-8, 0.25, 1.1e-4, 2e6, 6e8, 2e8)

    def test_fixed_seed_reproduces_state(self):
        cfg = EnvConfig()
        a = sample_state(np.random.default_rng(42), cfg)
        b = sample_state(np.random.default_rng(42), cfg)
        assert a == b

    def test_uniform_mean_of_renewable_fraction(self):
        cfg = EnvConfig()
        rng = np.random.default_rng(1234)
        rhos = [sample_state(rng, cfg).renewable_fraction for _ in range(10_000)]
        assert abs(np.mean(rhos) - 0.5) < 0.02

    def test_invalid_range_raises(self):
        cfg = EnvConfig()
        cfg.channel_gain_range = (2e-8, 1e-8)
        with pytest.raises(ValueError, match="min > max"):
            sample_state(np.random.default_rng(0), cfg)


class TestEvaluate:
    def test_fully_renewable_and_carbon_free_user_means_zero_carbon(self):
        cfg = EnvConfig(user_intensity=0.0)
        state = make_state(renewable_fraction=1.0)
        out = evaluate(state, Action(3e6, 0.5), cfg)
        assert out.carbon == 0.0

    def test_unit_snr_rate(self):
        # p g / (N0 b) == 1 at b = 1e6 makes the rate exactly b
        cfg = EnvConfig()
        b, p = 1e6, 0.5
        g = cfg.noise_psd * b / p
        state = make_state(channel_gain=g, intermediate_size=2e6)
        out = evaluate(state, Action(b, p), cfg)
        assert out.transmit_time == pytest.approx(2e6 / 1e6, rel=1e-12)

    def test_pinned_outcome_matches_spreadsheet_recomputation(self):
        # independent straight-line recomputation of every formula
        cfg = EnvConfig()
        state = make_state()
        action = Action(2.5e6, 0.3)
        out = evaluate(state, action, cfg)

        rate = action.bandwidth * math.log2(
            1.0 + action.power * state.channel_gain / (cfg.noise_psd * action.bandwidth)
        )
        tx_t = state.intermediate_size / rate
        edge_t = state.edge_cycles / cfg.edge_frequency
        user_t = state.user_cycles / cfg.user_frequency
        e_tx = action.power * tx_t
        e_edge = cfg.edge_capacitance * cfg.edge_frequency**2 * state.edge_cycles
        e_user = cfg.user_capacitance * cfg.user_frequency**2 * state.user_cycles
        carbon = (1 - state.renewable_fraction) * (e_edge + e_tx) * state.grid_intensity \
            + e_user * cfg.user_intensity
        total = tx_t + edge_t + user_t
        violation = max(0.0, total - cfg.latency_budget)
        reward = -(carbon + cfg.penalty_weight * violation) / cfg.reward_scale

        assert out.transmit_time == pytest.approx(tx_t, rel=1e-9)
        assert out.edge_compute_time == pytest.approx(edge_t, rel=1e-9)
        assert out.user_compute_time == pytest.approx(user_t, rel=1e-9)
        assert out.total_latency == pytest.approx(total, rel=1e-9)
        assert out.transmit_energy == pytest.approx(e_tx, rel=1e-9)
        assert out.edge_energy == pytest.approx(e_edge, rel=1e-9)
        assert out.user_energy == pytest.approx(e_user, rel=1e-9)
        assert out.carbon == pytest.approx(carbon, rel=1e-9)
        assert out.latency_violation == pytest.approx(violation, abs=1e-12)
        assert out.reward == pytest.approx(reward, rel=1e-9)
        assert out.total_latency == out.transmit_time + out.edge_compute_time + out.user_compute_time
        assert out.feasible == (out.latency_violation == 0.0)

    def test_zero_power_is_flagged_not_a_crash(self):
        cfg = EnvConfig(power_min=0.0)
        out = evaluate(make_state(), Action(1e6, 0.0), cfg)
        assert math.isinf(out.transmit_time)
        assert not out.feasible
        assert out.reward == cfg.reward_floor
        assert out.carbon >= 0.0 and math.isfinite(out.carbon)

    def test_out_of_bounds_action_rejected(self):
        cfg = EnvConfig()
        with pytest.raises(ValueError, match="out of bounds"):
            evaluate(make_state(), Action(cfg.bandwidth_max * 2, 0.5), cfg)

    def test_purity_bit_identical(self):
        cfg = EnvConfig()
        a = evaluate(make_state(), Action(2e6, 0.7), cfg)
        b = evaluate(make_state(), Action(2e6, 0.7), cfg)
        assert a == b


class TestRewardAndCarbonStructure:
    def test_carbon_non_increasing_in_renewable_fraction(self):
        cfg = EnvConfig()
        action = Action(2e6, 0.5)
        rhos = np.linspace(0.0, 1.0, 21)
        carbons = [evaluate(make_state(renewable_fraction=r), action, cfg).carbon for r in rhos]
        assert all(c2 <= c1 for c1, c2 in zip(carbons, carbons[1:]))

    def test_reward_strictly_decreasing_in_carbon_at_fixed_violation(self):
        cfg = EnvConfig()
        action = Action(4e6, 0.5)
        lo = evaluate(make_state(renewable_fraction=0.9), action, cfg)
        hi = evaluate(make_state(renewable_fraction=0.1), action, cfg)
        assert lo.latency_violation == hi.latency_violation == 0.0
        assert hi.carbon > lo.carbon
        assert hi.reward < lo.reward

    def test_reward_strictly_decreasing_in_violation_at_fixed_carbon(self):
        # shrinking the latency budget moves violation without touching carbon
        state = make_state(intermediate_size=8e6, channel_gain=2e-9)
        action = Action(1e6, 0.2)
        tight = evaluate(state, action, EnvConfig(latency_budget=0.5))
        tighter = evaluate(state, action, EnvConfig(latency_budget=0.25))
        assert tight.carbon == tighter.carbon
        assert tighter.latency_violation > tight.latency_violation > 0.0
        assert tighter.reward < tight.reward

    def test_rate_monotone_in_power_and_bandwidth(self):
        cfg = EnvConfig()
        state = make_state()

        def rate(b, p):
            return state.intermediate_size / evaluate(state, Action(b, p), cfg).transmit_time

        powers = np.linspace(cfg.power_min, cfg.power_max, 15)
        rates_p = [rate(2e6, p) for p in powers]
        assert all(r2 > r1 for r1, r2 in zip(rates_p, rates_p[1:]))

        bands = np.linspace(cfg.bandwidth_min, cfg.bandwidth_max, 15)
        rates_b = [rate(b, 0.5) for b in bands]
        assert all(r2 > r1 for r1, r2 in zip(rates_b, rates_b[1:]))


class TestOracle:
    def test_two_by_two_grid_is_argmax_over_four_evaluates(self):
        cfg = EnvConfig()
        state = make_state()
        action, outcome = oracle_best(state, cfg, (2, 2))
        cells = [
            (Action(b, p), evaluate(state, Action(b, p), cfg))
            for b in (cfg.bandwidth_min, cfg.bandwidth_max)
            for p in (cfg.power_min, cfg.power_max)
        ]
        best = max(cells, key=lambda c: c[1].reward)
        assert outcome.reward == best[1].reward
        assert action == best[0]
        assert outcome == evaluate(state, action, cfg)

    def test_latency_slack_everywhere_puts_optimum_at_min_power(self):
        cfg = EnvConfig(latency_budget=100.0)  # slack in every cell
        state = make_state()
        action, outcome = oracle_best(state, cfg, (11, 11))
        assert action.power == cfg.power_min
        # dominance check by direct evaluation over the grid
        for b in np.linspace(cfg.bandwidth_min, cfg.bandwidth_max, 11):
            for p in np.linspace(cfg.power_min, cfg.power_max, 11):
                assert evaluate(state, Action(float(b), float(p)), cfg).reward <= outcome.reward

    def test_grid_refinement_never_decreases_best_reward(self):
        cfg = EnvConfig()
        rng = np.random.default_rng(5)
        for _ in range(3):
            state = sample_state(rng, cfg)
            _, coarse = oracle_best(state, cfg, (11, 11))
            _, fine = oracle_best(state, cfg, (101, 101))
            assert fine.reward >= coarse.reward - 1e-9 * abs(coarse.reward)

    def test_tiny_grid_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            oracle_best(make_state(), EnvConfig(), (1, 5))


class TestActionStateScaling:
    def test_zero_maps_to_midpoint_action(self):
        cfg = EnvConfig()
        a = denormalize_action(np.zeros(2), cfg)
        assert a.bandwidth == pytest.approx((cfg.bandwidth_min + cfg.bandwidth_max) / 2)
        assert a.power == pytest.approx((cfg.power_min + cfg.power_max) / 2)

    def test_corners_hit_bounds(self):
        cfg = EnvConfig()
        lo = denormalize_action(np.array([-1.0, -1.0]), cfg)
        hi = denormalize_action(np.array([1.0, 1.0]), cfg)
        assert (lo.bandwidth, lo.power) == (cfg.bandwidth_min, cfg.power_min)
        assert (hi.bandwidth, hi.power) == (cfg.bandwidth_max, cfg.power_max)

    def test_out_of_range_input_clamped(self):
        cfg = EnvConfig()
        a = denormalize_action(np.array([-3.0, 7.0]), cfg)
        assert (a.bandwidth, a.power) == (cfg.bandwidth_min, cfg.power_max)

    def test_round_trip_within_1e12(self):
        cfg = EnvConfig()
        rng = np.random.default_rng(17)
        for _ in range(100):
            action = denormalize_action(rng.uniform(-1, 1, size=2), cfg)
            back = denormalize_action(normalize_action(action, cfg), cfg)
            assert back.bandwidth == pytest.approx(action.bandwidth, rel=1e-12)
            assert back.power == pytest.approx(action.power, rel=1e-12)

    def test_normalize_state_lands_in_unit_box(self):
        cfg = EnvConfig()
        rng = np.random.default_rng(8)
        for _ in range(50):
            v = normalize_state(sample_state(rng, cfg), cfg)
            assert v.shape == (6,)
            assert np.all(v >= 0.0) and np.all(v <= 1.0)

    def test_degenerate_range_normalizes_to_half(self):
        cfg = EnvConfig(grid_intensity_range=(1.5e-4, 1.5e-4))
        v = normalize_state(make_state(grid_intensity=1.5e-4), cfg)
        assert v[2] == 0.5


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = EnvConfig(latency_budget=2.0, penalty_weight=0.1)
        path = tmp_path / "env.json"
        cfg.save(path)
        assert EnvConfig.load(path) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown EnvConfig keys"):
            EnvConfig.from_dict({"bandwith_min": 1.0})

    def test_validation_lists_every_problem(self):
        cfg = EnvConfig(noise_psd=-1.0, penalty_weight=-2.0, power_min=5.0, power_max=1.0)
        problems = cfg.validate()
        assert len(problems) >= 3

    def test_reward_scale_constant_reproduces(self):
        assert calibrate_reward_scale() == pytest.approx(DEFAULT_REWARD_SCALE, rel=1e-12)


class TestStateValidation:
    def test_negative_gain_rejected(self):
        with pytest.raises(ValueError, match="invalid network state"):
            make_state(channel_gain=-1.0)

    def test_renewable_fraction_above_one_rejected(self):
        with pytest.raises(ValueError):
            make_state(renewable_fraction=1.5)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            make_state(intermediate_size=math.inf)
