import math
import random

import pytest

import sirsa


def test_cvar_matches_sorted_tail():
    rng = random.Random(0)
    for _ in range(200):
        xs = [rng.gauss(0, 1) for _ in range(rng.randint(1, 40))]
        alpha = max(rng.random(), 1.0 / len(xs))
        k = math.floor(alpha * len(xs) + 1e-9)
        tail = sorted(xs)[:k]
        assert sirsa.empirical_var(xs, alpha) == tail[-1]
        assert sirsa.empirical_cvar(xs, alpha) == pytest.approx(sum(tail) / k, rel=1e-12)


def test_gaussian_cvar():
    assert sirsa.gaussian_cvar(3.0, 0.0, 0.2) == 3.0
    phi = math.exp(-0.5 * 0.0) / math.sqrt(2 * math.pi)
    assert sirsa.gaussian_cvar(0.0, 1.0, 0.5) == pytest.approx(-phi / 0.5)
    assert sirsa.std_normal_cdf(1.96) == pytest.approx(0.975, abs=1e-4)


def test_env_straight_line_hits_obstacle_once():
    env = sirsa.PointMassEnv("obstacle")
    lo, hi = env.context_bounds()
    assert env.context_dim == 1
    rewards = env.rollout([hi[0]], [0.0] * 50)
    assert len(rewards) == 50
    assert sum(rewards) == pytest.approx(49.0)


def test_misspecified_corners():
    cs = sirsa.misspecified_contexts("obstacle", [0.05], [0.01], 1.0)
    assert sorted(c[0] for c in cs) == pytest.approx([0.03, 0.07])
    assert len(sirsa.misspecified_contexts("combined", [0.05, 0.08], [0.01, 0.01], 0.5)) == 4


def test_config_errors_and_hash():
    with pytest.raises(sirsa.ConfigError):
        sirsa.config_hash({"bogus": 1})
    full = sirsa.normalize_config({})
    assert sirsa.config_hash(full) == sirsa.config_hash({})
    assert full["eval"]["K"] == 50


def test_train_and_evaluate_tiny_run():
    cfg = {
        "env": {"variant": "velocity"},
        "suite": {"n_train_sets": 2, "contexts_per_set": 1, "n_test_sets": 2},
        "policy": {"algorithm": "sirsa", "t_threshold": 20, "n_cvar": 10},
        "train": {"budget": 40, "hidden": [8], "batch_size": 16, "cvar_batch_size": 4,
                  "grad_steps_per_episode": 10, "warmup_episodes": 1},
        "eval": {"K": 3},
    }
    ckpt = sirsa.train(cfg, seed=1)
    assert ckpt["config_hash"] == sirsa.config_hash(cfg)
    reports = sirsa.evaluate(cfg, ckpt, seed=1)
    assert len(reports) == 1
    for s in reports[0]["sets"]:
        assert len(s["returns"]) == 3
        assert s["min"] <= s["mean"]
    assert reports == sirsa.evaluate(cfg, ckpt, seed=1)
