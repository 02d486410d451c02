import numpy as np
import pytest

from carbonopt.env import Action, EnvConfig, evaluate
from carbonopt.protocol import build_eval_protocol, hash_states, score_actions


class TestEvalProtocol:
    def test_shared_seed_gives_bit_identical_states(self):
        cfg = EnvConfig()
        a = build_eval_protocol(cfg, eval_seed=42, n_states=16)
        b = build_eval_protocol(cfg, eval_seed=42, n_states=16)
        assert a.states == b.states
        assert a.state_hash == b.state_hash
        np.testing.assert_array_equal(a.chain_noise, b.chain_noise)

    def test_different_seed_changes_hash(self):
        cfg = EnvConfig()
        a = build_eval_protocol(cfg, eval_seed=1, n_states=8)
        b = build_eval_protocol(cfg, eval_seed=2, n_states=8)
        assert a.state_hash != b.state_hash

    def test_hash_depends_on_order_and_content(self):
        cfg = EnvConfig()
        p = build_eval_protocol(cfg, eval_seed=3, n_states=4)
        assert hash_states(p.states) == p.state_hash
        assert hash_states(tuple(reversed(p.states))) != p.state_hash

    def test_score_actions_reduces_by_mean(self):
        cfg = EnvConfig()
        protocol = build_eval_protocol(cfg, eval_seed=4, n_states=5)
        actions = [Action(2e6, 0.5)] * 5
        score = score_actions(protocol, actions, cfg)
        outcomes = [evaluate(s, a, cfg) for s, a in zip(protocol.states, actions)]
        assert score.mean_reward == pytest.approx(np.mean([o.reward for o in outcomes]))
        assert score.mean_carbon_g == pytest.approx(np.mean([o.carbon for o in outcomes]))

    def test_wrong_action_count_rejected(self):
        cfg = EnvConfig()
        protocol = build_eval_protocol(cfg, eval_seed=5, n_states=4)
        with pytest.raises(ValueError, match="expected 4 actions"):
            score_actions(protocol, [Action(2e6, 0.5)], cfg)
