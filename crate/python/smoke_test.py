"""Smoke test for the `abdnet` extension module.

Build and install first, e.g. `maturin develop --release -m crates/py/Cargo.toml`.
"""

import json
import math
import pathlib
import tempfile

import abdnet

ASSETS = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "assets"


def check_dynamics():
    tree = abdnet.KinematicTree.load(ASSETS / "morphologies" / "double_pendulum.json")
    assert tree.dof == 2, tree
    q, qd, tau = [0.3, -0.7], [0.1, 0.4], [1.0, -0.5]
    a = tree.forward_dynamics(q, qd, tau)
    b = tree.oracle_dynamics(q, qd, tau)
    assert max(abs(x - y) for x, y in zip(a, b)) < 1e-10
    report = tree.dyncheck(50, 1)
    assert report["max_abs_dev"] < 1e-8, report
    heavy = tree.mass_scaled("upper", 2.0)
    assert heavy.content_hash() != tree.content_hash()
    print("dynamics ok", tree)


def check_env():
    env = abdnet.Env("double_pendulum_balance", seed=3)
    assert "hopper_hop" in abdnet.Env.presets()
    obs = env.reset(3)
    assert len(obs) == env.obs_dim
    total = 0.0
    for _ in range(20):
        obs, r, done, trunc = env.step([0.0] * env.action_dim)
        total += r
        if done or trunc:
            break
    assert math.isfinite(total)
    print("env ok", env.name, env.obs_dim, env.action_dim)


def check_flops():
    tree = abdnet.KinematicTree.load(ASSETS / "morphologies" / "chain4.json")
    for kind in ("abdnet", "abdnet-noorth", "gnn", "mlp"):
        f = abdnet.flops(tree, kind, d=8)
        assert f["analytic"] == f["instrumented"], kind
    print("flops ok", f["analytic"]["total"])


def check_training():
    cfg = json.dumps({"total_env_steps": 1024, "n_envs": 4, "rollout_len": 64, "eval_interval": 1, "eval_episodes": 2})
    with tempfile.TemporaryDirectory() as out:
        s = abdnet.train_policy("double_pendulum_balance", "abdnet", cfg, out)
        assert len(s["metrics"]) == 4
        ckpt = pathlib.Path(out) / "final.bin"
        policy = abdnet.Policy.load(ckpt)
        env = abdnet.Env("double_pendulum_balance")
        torque = policy.act(env.obs())
        assert all(abs(t) <= l for t, l in zip(torque, env.torque_limit))
        rep = abdnet.eval_shift(ckpt, [1.0, 1.5], episodes=4)
        assert rep["rows"][0]["retention_pct"] == 100.0
    d = abdnet.train_dynamics("identity_synthetic", "abdnet", json.dumps({"dataset_steps": 500, "epochs": 3}))
    assert d["val_mse"] < 1e-4, d["val_mse"]
    print("training ok")


if __name__ == "__main__":
    check_dynamics()
    check_env()
    check_flops()
    check_training()
    print("all smoke checks passed")
