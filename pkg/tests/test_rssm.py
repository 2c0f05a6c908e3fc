import json
from pathlib import Path

import numpy as np
import pytest

from navmorph.errors import DimensionError, UsageError
from navmorph.numcore import Tensor
from navmorph.rssm import (
    GaussianParams,
    ModelConfig,
    RolloutConfig,
    RolloutNoise,
    WorldModel,
)

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ModelConfig(d_obs=6, d_x=4, d_h=5, d_s=3, d_a=3, hidden=8)


def trace(model, n_steps=3):
    """Deterministic filter trace from fixed inputs and noise."""
    rng = np.random.default_rng(42)
    out = []
    prev, a_prev = None, np.zeros(2)
    for t in range(n_steps):
        x = model.encode_observation(rng.normal(size=model.config.d_obs))
        h = Tensor(np.zeros(model.config.d_h)) if prev is None else model.recurrent_step(prev)
        latent, post, prior = model.filter_step(prev, model.embed_action(a_prev), x, h,
                                                eps=rng.normal(size=model.config.d_s))
        out.append({"h": latent.h.data.tolist(), "s": latent.s.data.tolist(),
                    "post_mu": post.mu.data.tolist(), "post_sigma": post.sigma.data.tolist(),
                    "prior_mu": prior.mu.data.tolist(), "prior_sigma": prior.sigma.data.tolist()})
        a_prev = rng.normal(scale=0.2, size=2)
        prev = latent
    return out


def test_filter_trace_matches_golden_fixture():
    golden = json.loads((FIXTURES / "filter_trace.json").read_text())
    got = trace(WorldModel(SMALL, seed=3))
    for g, w in zip(got, golden):
        for key in w:
            np.testing.assert_allclose(g[key], w[key], rtol=1e-12, atol=1e-14)


def test_first_step_prior_is_standard_normal_and_h_starts_at_zero():
    model = WorldModel(SMALL, seed=0)
    state = model.initial_state()
    assert not np.any(state.h.data) and not np.any(state.s.data)
    x = model.encode_observation(np.ones(6))
    _, post, prior = model.filter_step(None, model.embed_action(np.zeros(2)), x, state.h,
                                       eps=np.zeros(3))
    assert prior.mu.data.tolist() == [0.0] * 3 and prior.sigma.data.tolist() == [1.0] * 3
    assert np.all(post.sigma.data > SMALL.sigma_floor)


def test_train_mode_initial_state_needs_rng():
    model = WorldModel(SMALL)
    with pytest.raises(UsageError):
        model.initial_state(mode="train")
    s = model.initial_state(np.random.default_rng(0), "train").s
    assert s.shape == (3,) and np.any(s.data)


def test_eval_mode_uses_posterior_mean():
    model = WorldModel(SMALL, seed=1)
    x = model.encode_observation(np.ones(6))
    latent, post, _ = model.filter_step(None, model.embed_action(np.zeros(2)), x,
                                        Tensor(np.zeros(5)), mode="eval")
    assert np.array_equal(latent.s.data, post.mu.data)


def test_dimension_checks():
    model = WorldModel(SMALL)
    with pytest.raises(DimensionError):
        model.encode_observation(np.ones(5))
    with pytest.raises(DimensionError):
        model.embed_action(np.ones(3))
    with pytest.raises(DimensionError):
        model.prior(Tensor(np.zeros(4)), Tensor(np.zeros(3)))


@pytest.mark.parametrize("horizon", [0, 1, 2, 4])
def test_rollout_length_contract(horizon):
    model = WorldModel(SMALL, seed=2)
    start = model.initial_state()
    steps = model.imagine_rollout(start, RolloutConfig(horizon))
    assert len(steps) == horizon
    for s in steps:
        assert s.action.shape == (2,) and s.embedding.shape == (4,)


def test_rollout_first_action_is_policy_at_start():
    model = WorldModel(SMALL, seed=2)
    start = model.initial_state(np.random.default_rng(0), "train")
    steps = model.imagine_rollout(start, RolloutConfig(2))
    assert np.array_equal(steps[0].action.data, model.decode_action(start.h, start.s).data)


def test_rollout_noise_replay_and_mean_determinism():
    model = WorldModel(SMALL, seed=2)
    start = model.initial_state(np.random.default_rng(0), "train")
    noise = RolloutNoise()
    first = model.imagine_rollout(start, RolloutConfig(2, "sample"), rng=np.random.default_rng(5),
                                  noise=noise)
    again = model.imagine_rollout(start, RolloutConfig(2, "sample"), noise=noise)
    for a, b in zip(first, again):
        assert np.array_equal(a.embedding.data, b.embedding.data)
    m1 = model.imagine_rollout(start, RolloutConfig(2))
    m2 = model.imagine_rollout(start, RolloutConfig(2))
    assert all(np.array_equal(a.s.data, b.s.data) for a, b in zip(m1, m2))
    with pytest.raises(UsageError):
        model.imagine_rollout(start, RolloutConfig(2, "sample"))
    with pytest.raises(UsageError):
        RolloutConfig(-1)


def test_rollout_applies_enhancer_to_each_state():
    model = WorldModel(SMALL, seed=2)
    seen = []
    model.imagine_rollout(model.initial_state(), RolloutConfig(3),
                          lambda h: seen.append(h.data.copy()) or h * 0.5)
    assert len(seen) == 3


def test_encoder_is_frozen_and_excluded_from_training():
    model = WorldModel(SMALL)
    names = list(model.trainable)
    assert names and not any(n.startswith("encoder.") for n in names)
    assert len(model.params) > len(names)
    assert model.encode_observation(np.ones(6))._node is None


def test_checkpoint_round_trip(tmp_path):
    model = WorldModel(SMALL, seed=4)
    model.save(tmp_path / "ckpt.json")
    back = WorldModel.load(tmp_path / "ckpt.json")
    assert back.config == model.config
    for name, p in model.params.items():
        assert np.array_equal(back.params[name].data, p.data)
    assert trace(back) == trace(model)
    doc = json.loads((tmp_path / "ckpt.json").read_text())
    assert doc["format"] == "navmorph-ckpt-v1"
    assert {"name", "shape", "data"} <= set(doc["params"][0])


def test_standard_gaussian_helper():
    g = GaussianParams.standard(2)
    assert g.mu.data.tolist() == [0.0, 0.0] and g.sigma.data.tolist() == [1.0, 1.0]
