import math

import numpy as np
import pytest

from chairsit.policy import Adam, ActionSample, HeadSpec, PolicyNet, gaussian_head


def make_net(head, obs_dim=6, seed=0, dtype=np.float64):
    return PolicyNet(obs_dim, head, rng=np.random.default_rng(seed), dtype=dtype)


def heads():
    return [
        gaussian_head(3, 0.1),
        HeadSpec(kind="categorical", n_classes=4),
        HeadSpec(kind="mixed", dim=2, n_classes=4, sigma=np.full(2, 0.25), walk_class=0),
    ]


def test_head_validation():
    with pytest.raises(ValueError):
        HeadSpec(kind="gaussian", dim=3, sigma=np.zeros(2))
    with pytest.raises(ValueError):
        HeadSpec(kind="gaussian", dim=2, sigma=np.array([0.1, -0.1]))
    with pytest.raises(ValueError):
        HeadSpec(kind="nope")


def test_forward_is_pure_and_finite():
    rng = np.random.default_rng(4)
    net = make_net(gaussian_head(3, 0.1))
    s = rng.normal(size=6)
    a1, v1 = net.forward(s)
    a2, v2 = net.forward(s)
    assert np.array_equal(a1, a2) and v1 == v2
    for _ in range(200):
        out, v = net.forward(rng.normal(size=6) * 10)
        assert np.all(np.isfinite(out)) and math.isfinite(v)
    with pytest.raises(ValueError):
        net.forward(np.zeros(7))


def test_zero_weights_give_bias():
    net = make_net(gaussian_head(3, 0.1))
    for k in net.param_order:
        net.params[k][:] = 0.0
    net.params["p_b3"][:] = np.array([0.5, -0.5, 0.25])
    out, v = net.forward(np.ones(6))
    assert np.allclose(out, [0.5, -0.5, 0.25])
    assert v == 0.0


def test_gaussian_sampling_stats():
    net = make_net(gaussian_head(2, 0.1), seed=1)
    s = np.ones(6) * 0.3
    mu, _ = net.forward(s)
    rng = np.random.default_rng(2)
    n = 100_000
    samples = np.array([net.sample(s, rng).action for _ in range(n)])
    err = np.abs(samples.mean(axis=0) - mu)
    assert np.all(err < 3 * 0.1 / math.sqrt(n) + 1e-12)
    # near-zero stddev collapses onto the mean
    tiny = make_net(gaussian_head(2, 1e-12), seed=1)
    for k in tiny.param_order:
        tiny.params[k] = net.params[k].copy()
    a = tiny.sample(s, np.random.default_rng(0)).action
    assert np.allclose(a, mu, atol=1e-9)


def test_uniform_logits_give_uniform_classes():
    net = make_net(HeadSpec(kind="categorical", n_classes=4))
    for k in net.param_order:
        net.params[k][:] = 0.0
    rng = np.random.default_rng(3)
    counts = np.zeros(4)
    n = 40_000
    for _ in range(n):
        counts[net.sample(np.zeros(6), rng).aux] += 1
    assert np.all(np.abs(counts / n - 0.25) < 0.01)
    assert net.log_prob(np.zeros(6), np.array([2.0])) == pytest.approx(math.log(0.25))


def test_closed_form_log_probs():
    # 1-d standard normal at its mean
    net = make_net(gaussian_head(1, 1.0))
    for k in net.param_order:
        net.params[k][:] = 0.0
    lp = net.log_prob(np.zeros(6), np.zeros(1))
    assert lp == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-9)


def test_sample_log_prob_consistency():
    rng = np.random.default_rng(5)
    for head in heads():
        net = make_net(head, seed=7)
        for _ in range(50):
            s = rng.normal(size=6)
            samp = net.sample(s, rng)
            assert net.log_prob(s, samp.action) == pytest.approx(samp.log_prob, abs=1e-9)


def test_logit_shift_invariance():
    net = make_net(HeadSpec(kind="mixed", dim=2, n_classes=4,
                            sigma=np.full(2, 0.25), walk_class=0), seed=9)
    rng = np.random.default_rng(0)
    s = rng.normal(size=6)
    a = net.sample(s, rng).action
    lp = net.log_prob(s, a)
    net.params["p_b3"][:4] += 3.7  # shift every logit
    assert net.log_prob(s, a) == pytest.approx(lp, abs=1e-9)


def test_deterministic_action():
    net = make_net(HeadSpec(kind="categorical", n_classes=4))
    for k in net.param_order:
        net.params[k][:] = 0.0
    net.params["p_b3"][:] = np.array([1.0, 2.0, 2.0, 0.0])
    assert net.deterministic_action(np.zeros(6)).aux == 1  # tie -> lowest index
    g = make_net(gaussian_head(3, 0.1))
    s = np.ones(6)
    mu, _ = g.forward(s)
    assert np.array_equal(g.deterministic_action(s).action, mu)
    # evaluation does not consume randomness
    a1 = g.deterministic_action(s).action
    a2 = g.deterministic_action(s).action
    assert np.array_equal(a1, a2)


def _loss_grads(net, s, action, want):
    cache = net.forward_cached(s[None, :])
    if want == "logp":
        lp, dlp = net._lp_from_out(cache["out"], np.asarray(action)[None, :])
        grads = net.backward(cache, dlp, np.zeros(1))
        return float(lp[0]), grads
    grads = net.backward(cache, np.zeros_like(cache["out"]), np.ones(1))
    return float(cache["v"][0]), grads


def _scalar(net, s, action, want):
    if want == "logp":
        return net.log_prob(s, action)
    return net.value(s)


@pytest.mark.parametrize("want", ["logp", "value"])
def test_gradients_match_finite_differences(want):
    h = 1e-5
    rng = np.random.default_rng(12)
    for trial in range(6):
        head = heads()[trial % 3]
        net = make_net(head, obs_dim=5, seed=100 + trial, dtype=np.float64)
        s = rng.normal(size=5)
        action = net.sample(s, rng).action.astype(np.float64)
        _, grads = _loss_grads(net, s, action, want)
        for name, g in zip(net.param_order, grads):
            p = net.params[name]
            flat = p.reshape(-1)
            idx = rng.integers(0, flat.size, size=min(6, flat.size))
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                f_plus = _scalar(net, s, action, want)
                flat[i] = orig - h
                f_minus = _scalar(net, s, action, want)
                flat[i] = orig
                fd = (f_plus - f_minus) / (2 * h)
                an = g.reshape(-1)[i]
                denom = max(abs(fd), abs(an), 1e-6)
                assert abs(fd - an) / denom < 1e-4, (name, i, fd, an)


def test_serialization_round_trip(tmp_path):
    for head in heads():
        net = make_net(head, seed=3, dtype=np.float32)
        net.stage = "stage1"
        prefix = tmp_path / f"ckpt_{head.kind}"
        net.save(prefix)
        back = PolicyNet.load(prefix)
        s = np.linspace(-1, 1, 6).astype(np.float32)
        out1, v1 = net.forward(s)
        out2, v2 = back.forward(s)
        assert np.array_equal(out1, out2)
        assert v1 == v2
        assert back.stage == "stage1"
        # saving the loaded net reproduces the same bytes
        prefix2 = tmp_path / f"ckpt2_{head.kind}"
        back.save(prefix2)
        assert open(f"{prefix}.bin", "rb").read() == open(f"{prefix2}.bin", "rb").read()


def test_stale_layout_rejected(tmp_path):
    import json
    net = make_net(gaussian_head(2, 0.1))
    prefix = tmp_path / "ck"
    net.save(prefix)
    manifest = json.load(open(f"{prefix}.json"))
    manifest["feature_layout"] = "deadbeef"
    json.dump(manifest, open(f"{prefix}.json", "w"))
    with pytest.raises(ValueError, match="feature layout"):
        PolicyNet.load(prefix)


def test_adam_zero_lr_is_noop():
    net = make_net(gaussian_head(2, 0.1), dtype=np.float32)
    opt = Adam(net, lr=0.0)
    before = {k: v.copy() for k, v in net.params.items()}
    cache = net.forward_cached(np.random.default_rng(0).normal(size=(8, 6)))
    grads = net.backward(cache, np.ones_like(cache["out"]), np.ones(8))
    opt.step(grads, max_grad_norm=0.5)
    for k in net.param_order:
        assert np.array_equal(net.params[k], before[k])
