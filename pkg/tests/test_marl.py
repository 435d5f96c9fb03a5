import numpy as np
import pytest

from trackmarl import arena, marl, nets


def _tiny_task(**kw):
    args = dict(task="coop_nav", n_agents=2, episode_len=5, image_size=32)
    args.update(kw)
    return arena.TaskConfig(**args)


def _tiny_trainer(**kw):
    args = dict(total_episodes=20, episodes_per_batch=5, eval_every=10, eval_episodes=3, minibatch_size=64)
    args.update(kw)
    return marl.TrainerConfig(**args)


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        marl.TrainerConfig(gamma=0.0)
    with pytest.raises(ValueError):
        marl.TrainerConfig(gamma=1.5)
    with pytest.raises(ValueError):
        marl.TrainerConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        marl.TrainerConfig(n_step=0)
    with pytest.raises(ValueError):
        marl.TrainerConfig(workers=0)
    marl.TrainerConfig(gamma=1.0)  # boundary allowed


# --- returns and advantages ---------------------------------------------------


def test_n_step_return_examples():
    assert marl.n_step_return([1.0, 1.0], 10.0, 0.9) == 10.0
    assert marl.n_step_return([3.0, 5.0, 7.0], 100.0, 0.0) == 3.0
    assert marl.n_step_return([2.5], 99.0, 0.9, dones=[True]) == 2.5


def test_n_step_return_truncates_mid_window():
    # done after the second reward wipes the tail and the bootstrap
    got = marl.n_step_return([1.0, 2.0, 5.0], 50.0, 0.5, dones=[False, True, False])
    assert got == 1.0 + 0.5 * 2.0


def test_n_step_return_matches_recursive_oracle(rng):
    def oracle(rewards, bootstrap, gamma, dones, t=0):
        if t == len(rewards):
            return bootstrap
        tail = 0.0 if dones[t] else oracle(rewards, bootstrap, gamma, dones, t + 1)
        return rewards[t] + gamma * tail

    for _ in range(1000):
        n = int(rng.integers(1, 8))
        rewards = rng.normal(size=n)
        bootstrap = float(rng.normal())
        gamma = float(rng.uniform(0.1, 1.0))
        dones = list(rng.random(n) < 0.2)
        got = marl.n_step_return(rewards, bootstrap, gamma, dones)
        want = oracle(rewards, bootstrap, gamma, dones)
        assert got == want  # bitwise: same recursion order


def test_episode_returns_consistent_with_scalar_op(rng):
    t_len, n, gamma = 9, 4, 0.93
    rewards = rng.normal(size=t_len)
    values = rng.normal(size=t_len)
    final_value = float(rng.normal())
    got = marl.episode_n_step_returns(rewards, values, gamma, n, final_value)
    for t in range(t_len):
        end = min(t + n, t_len)
        boot = values[end] if end < t_len else final_value
        want = marl.n_step_return(rewards[t:end], boot, gamma)
        assert got[t] == want


def test_advantage_examples():
    assert marl.advantage(10.0, 9.0) == 1.0
    assert marl.advantage(7.5, 7.5) == 0.0
    np.testing.assert_allclose(marl.advantage([1.0, -1.0], [0.0, 0.0], standardize=True), [1.0, -1.0])


def test_value_loss_examples():
    assert marl.value_loss([2.0], [1.0]) == 1.0
    assert marl.value_loss([3.0, -1.0], [3.0, -1.0]) == 0.0
    assert marl.value_loss([1.0, 0.0], [0.0, 2.0]) == 2.5


# --- ppo objective --------------------------------------------------------------


def _one_sample_batch(spec, params, rng, ratio, adv):
    obs = rng.normal(size=(1, spec.n_nodes, spec.node_dim))
    cache = nets.forward_batch(obs, params, spec)
    action = int(np.argmax(cache.probs[0]))
    logp_new = cache.log_probs[0, action]
    return {
        "obs": obs,
        "actions": np.array([action]),
        "log_probs_old": np.array([logp_new - np.log(ratio)]),
        "advantages": np.array([adv]),
        "returns": np.array([float(cache.values[0])]),  # zero value loss
    }


@pytest.mark.parametrize(
    "ratio,adv,expected",
    [
        (1.0, 2.0, 2.0),  # on-policy: term is the advantage itself
        (1.5, 1.0, 1.2),  # clipped above: min(1.5, 1.2)
        (0.5, -1.0, -0.8),  # clipped below: min(-0.5, -0.8)
    ],
)
def test_clip_surrogate_values(ratio, adv, expected, rng):
    spec = nets.PolicySpec(node_dim=6, n_nodes=3, n_actions=4)
    params = nets.init_params(spec, rng)
    cfg = marl.TrainerConfig(clip_eps=0.2, entropy_coef=0.0, value_coef=0.0)
    batch = _one_sample_batch(spec, params, rng, ratio, adv)
    loss, _, stats = marl.ppo_objective(batch, params, cfg, spec)
    assert -stats["loss_policy"] == pytest.approx(expected, abs=1e-12)
    assert loss == pytest.approx(-expected, abs=1e-12)


@pytest.mark.parametrize("ratio,adv", [(1.4, 1.0), (0.6, -1.0)])
def test_clipped_region_gradients_exactly_zero(ratio, adv, rng):
    spec = nets.PolicySpec(node_dim=6, n_nodes=3, n_actions=4)
    params = nets.init_params(spec, rng)
    cfg = marl.TrainerConfig(clip_eps=0.2, entropy_coef=0.0, value_coef=0.0)
    batch = _one_sample_batch(spec, params, rng, ratio, adv)
    _, grads, _ = marl.ppo_objective(batch, params, cfg, spec)
    for k, g in grads.items():
        assert np.all(g == 0.0), k


def test_ratio_one_at_old_policy(rng):
    spec = nets.PolicySpec(node_dim=6, n_nodes=3, n_actions=4)
    params = nets.init_params(spec, rng)
    obs = rng.normal(size=(8, spec.n_nodes, spec.node_dim))
    cache = nets.forward_batch(obs, params, spec)
    actions = np.array([nets.sample_index(p, rng) for p in cache.probs])
    logp_old = cache.log_probs[np.arange(8), actions]
    adv = rng.normal(size=8)
    cfg = marl.TrainerConfig(entropy_coef=0.0, value_coef=0.0)
    batch = {"obs": obs, "actions": actions, "log_probs_old": logp_old, "advantages": adv, "returns": cache.values}
    _, _, stats = marl.ppo_objective(batch, params, cfg, spec)
    assert -stats["loss_policy"] == pytest.approx(adv.mean(), abs=1e-12)


def test_ppo_gradients_match_finite_differences(rng):
    spec = nets.PolicySpec(node_dim=5, n_nodes=3, n_actions=4, gcn_widths=(4, 4), head_hidden=4)
    params = nets.init_params(spec, rng)
    cfg = marl.TrainerConfig(entropy_coef=0.013, value_coef=0.7)
    b = 5
    obs = rng.normal(size=(b, 3, 5))
    cache = nets.forward_batch(obs, params, spec)
    actions = np.array([nets.sample_index(p, rng) for p in cache.probs])
    batch = {
        "obs": obs,
        "actions": actions,
        "log_probs_old": cache.log_probs[np.arange(b), actions] + rng.normal(0, 0.05, b),
        "advantages": rng.normal(size=b),
        "returns": rng.normal(size=b),
    }
    _, grads, _ = marl.ppo_objective(batch, params, cfg, spec)
    h = 1e-6
    for k in params:
        flat = params[k].reshape(-1)
        for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _, _ = marl.ppo_objective(batch, params, cfg, spec)
            flat[idx] = orig - h
            down, _, _ = marl.ppo_objective(batch, params, cfg, spec)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = grads[k].reshape(-1)[idx]
            assert abs(fd - an) <= 1e-6 * max(1.0, abs(fd)), f"{k}[{idx}]"


# --- rollout collection ---------------------------------------------------------


def _setup(task_cfg, rep="tracklets_gcn", knn=None):
    specs = marl.make_specs(task_cfg, rep, knn)
    params = marl.init_agents(specs, 0, False)
    m = arena.layout(task_cfg).n_entities
    fac = marl.EnvPipelineFactory(task_cfg, (m - 1) if knn is None else knn, 0.0)
    return fac, params, specs


def test_collect_transition_counts():
    task = _tiny_task()
    fac, params, specs = _setup(task)
    buf = marl.collect_rollouts(fac, params, specs, _tiny_trainer(), [7], 3)
    assert buf.n_agents == 2
    assert buf.obs.shape[1] == 3 * task.episode_len
    assert buf.n_transitions == 2 * 3 * task.episode_len
    assert buf.n_episodes == 3
    tr = buf.transition(0, 0)
    assert tr.log_prob <= 0.0 and np.isfinite(tr.reward)
    assert buf.dones[:, task.episode_len - 1].all()
    assert not buf.dones[:, : task.episode_len - 1].any()


def test_collect_is_deterministic():
    task = _tiny_task()
    fac, params, specs = _setup(task)
    cfg = _tiny_trainer()
    a = marl.collect_rollouts(fac, params, specs, cfg, [5, 6], 4)
    b = marl.collect_rollouts(fac, params, specs, cfg, [5, 6], 4)
    for field in ("obs", "actions", "rewards", "values", "log_probs", "final_values"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field


def test_collect_process_pool_matches_inline():
    task = _tiny_task()
    fac, params, specs = _setup(task)
    inline = marl.collect_rollouts(fac, params, specs, _tiny_trainer(workers=1), [5, 6], 4)
    pooled = marl.collect_rollouts(fac, params, specs, _tiny_trainer(workers=2), [5, 6], 4)
    for field in ("obs", "actions", "rewards", "values", "log_probs", "final_values"):
        assert np.array_equal(getattr(inline, field), getattr(pooled, field)), field


def test_collect_full_dropout_carries_initial_tracks():
    task = _tiny_task()
    specs = marl.make_specs(task, "tracklets_gcn", None)
    params = marl.init_agents(specs, 0, False)
    fac = marl.EnvPipelineFactory(task, arena.layout(task).n_entities - 1, dropout=1.0)
    buf = marl.collect_rollouts(fac, params, specs, _tiny_trainer(), [3], 2)
    # no detections ever: all tracks stay at the arena center, so every
    # observation equals the first one
    first = buf.obs[:, 0]
    for t in range(buf.obs.shape[1]):
        assert np.array_equal(buf.obs[:, t], first)


def test_collect_rejects_empty_requests():
    task = _tiny_task()
    fac, params, specs = _setup(task)
    with pytest.raises(ValueError):
        marl.collect_rollouts(fac, params, specs, _tiny_trainer(), [], 2)
    with pytest.raises(ValueError):
        marl.collect_rollouts(fac, params, specs, _tiny_trainer(), [1], 0)


# --- training loop ---------------------------------------------------------------


def test_train_zero_episodes_returns_initialization():
    task = _tiny_task()
    res = marl.train(task, _tiny_trainer(total_episodes=0), seed=3)
    fresh = marl.init_agents(marl.make_specs(task, "tracklets_gcn", None), 3, False)
    assert res.metrics == []
    assert np.isnan(res.final_metric)
    for got, want in zip(res.params, fresh):
        for k in want:
            assert np.array_equal(got[k], want[k])


def test_train_eval_cadence_and_final_metric():
    task = _tiny_task()
    res = marl.train(task, _tiny_trainer(total_episodes=50, eval_every=10, eval_episodes=2, final_metric_rounds=3), seed=0)
    assert [m["train_episodes"] for m in res.metrics] == [10, 20, 30, 40, 50]
    assert [m["eval_round"] for m in res.metrics] == [1, 2, 3, 4, 5]
    tail = [m["mean_eval_reward"] for m in res.metrics[-3:]]
    assert res.final_metric == pytest.approx(np.mean(tail))


def test_train_is_reproducible():
    task = _tiny_task()
    cfg = _tiny_trainer(total_episodes=20, eval_every=10)
    a = marl.train(task, cfg, seed=11)
    b = marl.train(task, cfg, seed=11)
    assert a.metrics == b.metrics
    for pa, pb in zip(a.params, b.params):
        for k in pa:
            assert np.array_equal(pa[k], pb[k])


def test_train_divergence_carries_last_good(monkeypatch):
    task = _tiny_task()

    calls = {"n": 0}
    real = marl._update_agent

    def explode(buffer, agent, params, spec, cfg, optimizer, rng):
        calls["n"] += 1
        if calls["n"] > 2:
            raise FloatingPointError("synthetic NaN")
        return real(buffer, agent, params, spec, cfg, optimizer, rng)

    monkeypatch.setattr(marl, "_update_agent", explode)
    with pytest.raises(marl.TrainDivergedError) as exc:
        marl.train(task, _tiny_trainer(total_episodes=20, eval_every=10), seed=0)
    assert exc.value.last_good_params is not None
    assert isinstance(exc.value.metrics, list)


def test_save_load_agents_roundtrip(tmp_path):
    task = _tiny_task()
    specs = marl.make_specs(task, "tracklets_mlp", 2)
    params = marl.init_agents(specs, 4, False)
    path = tmp_path / "bundle.ckpt"
    marl.save_agents(path, params, specs[0], knn=2)
    loaded, spec, knn = marl.load_agents(path)
    assert knn == 2
    assert spec.arch == "mlp"
    assert spec.node_dim == specs[0].node_dim
    assert len(loaded) == len(params)
    for got, want in zip(loaded, params):
        assert set(got) == set(want)
        for k in want:
            np.testing.assert_allclose(got[k], want[k].astype(np.float32))


def test_evaluate_is_deterministic():
    task = _tiny_task()
    fac, params, specs = _setup(task)
    a = marl.evaluate(fac, params, specs, 5, seed=9)
    b = marl.evaluate(fac, params, specs, 5, seed=9)
    assert a[0] == b[0] and a[1] == b[1]
    with pytest.raises(ValueError):
        marl.evaluate(fac, params, specs, 0, seed=9)


def test_metrics_csv_roundtrip(tmp_path):
    rows = [
        {"train_episodes": 10, "eval_round": 1, "mean_eval_reward": -3.5, "std_eval_reward": 1.25,
         "loss_policy": 0.002, "loss_value": 0.87, "entropy": 1.58},
        {"train_episodes": 20, "eval_round": 2, "mean_eval_reward": -3.0, "std_eval_reward": 1.0,
         "loss_policy": -0.001, "loss_value": 0.5, "entropy": 1.3},
    ]
    path = tmp_path / "metrics.csv"
    marl.write_metrics_csv(path, rows)
    assert marl.read_metrics_csv(path) == rows


def test_metrics_csv_rejects_unknown_schema(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# other-schema v9\ntrain_episodes\n1\n")
    with pytest.raises(ValueError):
        marl.read_metrics_csv(path)
