"""Smoke test for the acoe Python extension.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import math
import pathlib
import tempfile

import acoe

NAV = {"kind": "nav", "dim": 2, "goal": [0.0, 0.0], "step_size": 0.1, "actions": "discrete"}


def check_distances():
    assert acoe.tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert math.isclose(acoe.w1_distance([1.0, 0.0], [0.0, 1.0], [0.0, 3.0]), 3.0)


def check_attack_parsing():
    spec = acoe.parse_attack("kind=pgd,eps=0.1,k=10")
    assert spec["kind"] == "pgd" and spec["steps"] == 10
    try:
        acoe.parse_attack("pgd:eps=-1")
    except ValueError:
        pass
    else:
        raise AssertionError("negative budget accepted")


def check_env():
    env = acoe.Env(NAV)
    obs = env.reset(3)
    assert len(obs) == env.obs_dim == 2
    obs2, reward, terminal, truncated = env.step(0)
    assert math.isfinite(reward) and len(obs2) == 2
    assert env.reward_query(env.state(), 0) == env.reward_query(env.state(), 0)


def check_oracle():
    p = acoe.Pomdp.random(4, 2, 0.9, seed=1)
    v = p.mdp_value()
    assert len(v) == 4 and all(math.isfinite(x) for x in v)
    b = p.posterior(0)
    assert math.isclose(sum(b), 1.0)
    u, d = p.belief_value(0, b)
    assert math.isfinite(u) and math.isfinite(d)
    check = p.check_bound()
    assert check["violations"] == []
    report = acoe.verify("prop1", instances=4)
    assert report["passed"]


def check_train_and_eval():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = {
            "env": NAV,
            "algo": "delta-ppo",
            "lambda": 0.2,
            "belief": {"kind": "a2b", "eps": 0.05, "n": 4},
            "optim": {"iterations": 1, "steps_per_iter": 64, "minibatch": 32, "epochs": 1},
            "seeds": [0],
        }
        path = pathlib.Path(tmp) / "config.json"
        path.write_text(json.dumps(cfg))
        bundles = acoe.train(str(path), tmp)
        agent = acoe.Agent.load(bundles[0])
        obs = agent.env().reset(0)
        assert isinstance(agent.act(obs), int)
        mean, std = agent.evaluate("identity", episodes=2)
        assert math.isfinite(mean) and std >= 0
        o = agent.perturb(obs, "fgsm:eps=0.05")
        assert max(abs(a - b) for a, b in zip(o, obs)) <= 0.05 + 1e-12


if __name__ == "__main__":
    check_distances()
    check_attack_parsing()
    check_env()
    check_oracle()
    check_train_and_eval()
    print("acoe smoke test passed")
