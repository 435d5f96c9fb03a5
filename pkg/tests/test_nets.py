import numpy as np
import pytest

from trackmarl import nets
from trackmarl.tracklets import AgentGraph


def _graph(node_features):
    nf = np.asarray(node_features, float)
    return AgentGraph(agent_id=0, neighbor_ids=np.arange(1, len(nf)), node_features=nf)


def _spec(node_dim, n_nodes, n_actions=5, arch="gcn", **kw):
    return nets.PolicySpec(node_dim=node_dim, n_nodes=n_nodes, n_actions=n_actions, arch=arch, **kw)


# --- gcn layer ---------------------------------------------------------------


def test_gcn_layer_hand_example():
    out = nets.gcn_layer_forward(np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2), np.eye(2))
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])


def test_gcn_layer_zero_weights():
    out = nets.gcn_layer_forward(np.random.default_rng(0).normal(size=(3, 4)), np.ones((3, 3)) - np.eye(3), np.zeros((4, 2)), np.zeros((4, 2)))
    assert np.all(out == 0.0)


def test_gcn_layer_shape_errors():
    with pytest.raises(ValueError):
        nets.gcn_layer_forward(np.eye(2), np.eye(3), np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        nets.gcn_layer_forward(np.eye(2), np.zeros((2, 2)), np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        nets.gcn_layer_forward(np.eye(2), np.zeros((2, 2)), np.zeros((3, 2)), np.zeros((3, 2)))


def test_gcn_layer_row_equivariance(rng):
    phi = rng.normal(size=(5, 6))
    adj = np.ones((5, 5)) - np.eye(5)
    wo, ws = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    base = nets.gcn_layer_forward(phi, adj, wo, ws)
    perm = rng.permutation(5)
    permuted = nets.gcn_layer_forward(phi[perm], adj, wo, ws)
    np.testing.assert_allclose(permuted, base[perm], rtol=1e-12, atol=1e-12)


# --- forward -----------------------------------------------------------------


def test_forward_uniform_at_zero_params():
    spec = _spec(8, 3, n_actions=4)
    params = {k: np.zeros_like(v) for k, v in nets.init_params(spec, np.random.default_rng(0)).items()}
    out = nets.forward(_graph(np.random.default_rng(1).normal(size=(3, 8))), params, spec)
    np.testing.assert_allclose(out.probs, 0.25)
    assert out.entropy == pytest.approx(np.log(4.0), abs=1e-12)
    assert out.value == 0.0


def test_forward_probs_sum_to_one(rng):
    spec = _spec(10, 4)
    params = nets.init_params(spec, rng)
    for _ in range(20):
        out = nets.forward(_graph(rng.normal(size=(4, 10))), params, spec)
        assert abs(out.probs.sum() - 1.0) < 1e-9
        assert np.isfinite(out.value)
        assert 0.0 <= out.entropy <= np.log(5.0) + 1e-12


def test_forward_two_node_hand_example():
    # identity-ish network: every weight an identity, all biases zero
    spec = _spec(2, 2, n_actions=2, gcn_widths=(2, 2), head_hidden=2)
    params = nets.init_params(spec, np.random.default_rng(0))
    for k in params:
        if k.endswith(("_other", "_self")) or "_w" in k:
            params[k] = np.eye(*params[k].shape) if params[k].ndim == 2 else params[k]
        else:
            params[k] = np.zeros_like(params[k])
    params["v_w2"] = np.ones((2, 1))
    out = nets.forward(_graph(np.eye(2)), params, spec)
    # layers give [[.5,.5],[.5,.5]], pool gives [.5,.5], value head sums -> 1.0
    assert out.value == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(out.probs, [0.5, 0.5], atol=1e-12)


def test_forward_permutation_invariance(rng):
    spec = _spec(12, 5)
    for trial in range(20):
        params = nets.init_params(spec, rng)
        nf = rng.normal(size=(5, 12))
        base = nets.forward(_graph(nf), params, spec)
        perm = np.concatenate([[0], 1 + rng.permutation(4)])
        out = nets.forward(_graph(nf[perm]), params, spec)
        np.testing.assert_allclose(out.probs, base.probs, rtol=1e-6)
        assert out.value == pytest.approx(base.value, rel=1e-6)


# --- flat MLP baseline --------------------------------------------------------


def test_mlp_input_dim_and_zero_case():
    spec = _spec(36, 4, arch="mlp")
    params = nets.init_params(spec, np.random.default_rng(0))
    assert params["mlp_w0"].shape == (144, 128)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    out = nets.flat_mlp_forward(_graph(np.random.default_rng(2).normal(size=(4, 36))), zeros, spec)
    np.testing.assert_allclose(out.probs, 0.2)
    assert out.value == 0.0


def test_mlp_not_permutation_invariant(rng):
    spec = _spec(8, 4, arch="mlp")
    violations = 0
    for _ in range(40):
        params = nets.init_params(spec, rng)
        nf = rng.normal(size=(4, 8))
        base = nets.flat_mlp_forward(_graph(nf), params, spec)
        swapped = nf.copy()
        swapped[[1, 2]] = swapped[[2, 1]]
        out = nets.flat_mlp_forward(_graph(swapped), params, spec)
        if np.abs(out.probs - base.probs).max() > 1e-9 or abs(out.value - base.value) > 1e-9:
            violations += 1
    assert violations >= 38  # negative control: order must matter


def test_arch_dispatch_guards():
    gcn_spec = _spec(4, 2)
    mlp_spec = _spec(4, 2, arch="mlp")
    g = _graph(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        nets.forward(g, {}, mlp_spec)
    with pytest.raises(ValueError):
        nets.flat_mlp_forward(g, {}, gcn_spec)


# --- backward ----------------------------------------------------------------


def test_backward_value_bias_gradient_is_one():
    spec = _spec(6, 3)
    params = {k: np.zeros_like(v) for k, v in nets.init_params(spec, np.random.default_rng(0)).items()}
    g = _graph(np.random.default_rng(1).normal(size=(3, 6)))
    grads = nets.backward(g, params, spec, nets.LossSeeds(value_coef=1.0))
    assert grads["v_b2"][0] == 1.0


def test_backward_entropy_stationary_at_uniform():
    # exact zero for power-of-two action counts (0.25 * log4 is exact)
    spec = _spec(6, 3, n_actions=4)
    params = {k: np.zeros_like(v) for k, v in nets.init_params(spec, np.random.default_rng(0)).items()}
    g = _graph(np.random.default_rng(1).normal(size=(3, 6)))
    grads = nets.backward(g, params, spec, nets.LossSeeds(entropy_coef=1.0))
    for k, v in grads.items():
        assert np.all(v == 0.0), k

    # five actions: stationary up to one rounding step of log(5)
    spec5 = _spec(6, 3, n_actions=5)
    params5 = {k: np.zeros_like(v) for k, v in nets.init_params(spec5, np.random.default_rng(0)).items()}
    grads5 = nets.backward(g, params5, spec5, nets.LossSeeds(entropy_coef=1.0))
    for k, v in grads5.items():
        assert np.abs(v).max() < 1e-15, k


def test_backward_requires_action_for_logp():
    spec = _spec(6, 3)
    params = nets.init_params(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        nets.backward(_graph(np.zeros((3, 6))), params, spec, nets.LossSeeds(logp_coef=1.0))


def _loss_value(graph, params, spec, seeds):
    out = nets.forward_batch(graph.node_features, params, spec)
    total = 0.0
    if seeds.logp_coef:
        total += seeds.logp_coef * out.log_probs[0, seeds.action]
    total += seeds.entropy_coef * out.entropy[0]
    total += seeds.value_coef * out.values[0]
    return total


def _margin_ok(graph, params, spec, margin=1e-2):
    """Reject configurations where finite differences would cross a ReLU kink
    or flip the max-pool argmax."""
    cache = nets.forward_batch(graph.node_features, params, spec)
    hid = cache.hidden
    if spec.arch == "gcn":
        for s in hid["pre"]:
            if np.abs(s).min() < margin:
                return False
        h = hid["post"][-1][0]
        top2 = np.sort(h, axis=0)[-2:, :]
        if (top2[1] - top2[0]).min() < margin:
            return False
        pooled = hid["pooled"]
        for w, b in (("pi_w1", "pi_b1"), ("v_w1", "v_b1")):
            if np.abs(pooled @ params[w] + params[b]).min() < margin:
                return False
    else:
        h = graph.node_features.reshape(1, -1)
        for layer in range(len(spec.mlp_widths)):
            pre = h @ params[f"mlp_w{layer}"] + params[f"mlp_b{layer}"]
            if np.abs(pre).min() < margin:
                return False
            h = np.maximum(pre, 0.0)
    return True


def _fd_check(spec, rng, n_instances, step=1e-3, tol=1e-4):
    checked = 0
    attempts = 0
    while checked < n_instances:
        attempts += 1
        assert attempts < 50 * n_instances, "margin sampling failed to converge"
        params = nets.init_params(spec, rng)
        graph = _graph(rng.normal(size=(spec.n_nodes, spec.node_dim)))
        if not _margin_ok(graph, params, spec):
            continue
        seeds = nets.LossSeeds(
            action=int(rng.integers(spec.n_actions)),
            logp_coef=float(rng.normal()),
            entropy_coef=float(rng.normal()),
            value_coef=float(rng.normal()),
        )
        grads = nets.backward(graph, params, spec, seeds)
        for k in params:
            flat = params[k].reshape(-1)
            for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + step
                up = _loss_value(graph, params, spec, seeds)
                flat[idx] = orig - step
                down = _loss_value(graph, params, spec, seeds)
                flat[idx] = orig
                fd = (up - down) / (2 * step)
                an = grads[k].reshape(-1)[idx]
                denom = max(abs(fd), abs(an), 1e-8)
                assert abs(fd - an) / denom <= tol, f"{k}[{idx}]: fd={fd} analytic={an}"
        checked += 1
    return checked


def test_gradcheck_gcn(rng):
    spec = _spec(6, 3, n_actions=4, gcn_widths=(5, 5), head_hidden=5)
    assert _fd_check(spec, rng, 10) == 10


def test_gradcheck_mlp(rng):
    spec = _spec(5, 3, n_actions=4, arch="mlp", mlp_widths=(6, 6))
    assert _fd_check(spec, rng, 10) == 10


# --- checkpoints --------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {
        "a/w": rng.normal(size=(3, 4)).astype(np.float32).astype(np.float64),
        "a/b": rng.normal(size=5).astype(np.float32).astype(np.float64),
        "meta": np.array([1.0, 2.0, 3.0]),
    }
    path = tmp_path / "ck.ckpt"
    nets.save_checkpoint(path, tensors)
    loaded = nets.load_checkpoint(path)
    assert set(loaded) == set(tensors)
    for k in tensors:
        np.testing.assert_allclose(loaded[k], tensors[k].astype(np.float32))


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(nets.CheckpointError):
        nets.load_checkpoint(p)


def test_checkpoint_version_mismatch(tmp_path):
    p = tmp_path / "future.ckpt"
    nets.save_checkpoint(p, {"x": np.zeros(2)}, version=99)
    with pytest.raises(nets.CheckpointVersionError) as exc:
        nets.load_checkpoint(p)
    assert "99" in str(exc.value) and "1" in str(exc.value)


def test_sample_index_matches_distribution():
    rng = np.random.default_rng(5)
    probs = np.array([0.1, 0.6, 0.3])
    draws = np.bincount([nets.sample_index(probs, rng) for _ in range(20_000)], minlength=3) / 20_000
    np.testing.assert_allclose(draws, probs, atol=0.02)
