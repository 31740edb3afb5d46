#!/usr/bin/env python3
"""Smoke test for the sdrlab_py extension module.

Expects the cdylib to exist already:

    cargo build -p sdrlab-py --release
    python3 python/smoke_test.py

The library is copied into a temporary directory under the importable name
`sdrlab_py.so`, so no packaging tooling is required.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent

TINY_NET = {
    "subnets": [1, 2],
    "hosts": [
        {"address": [0, 0], "services": ["ssh"], "os": "linux", "processes": ["cron"]},
        {"address": [1, 0], "services": ["http", "ssh"], "os": "linux"},
        {"address": [1, 1], "services": ["http", "smb-share"], "os": "windows"},
    ],
    "firewalls": [],
    "adjacency": [[0, 1]],
    "service_catalog": {"ssh": "common", "http": "common", "smb-share": "data"},
}


def locate_cdylib():
    for profile in ("release", "debug"):
        for suffix in (".so", ".dylib"):
            candidate = REPO / "target" / profile / f"libsdrlab_py{suffix}"
            if candidate.exists():
                return candidate
    sys.exit("no built extension found; run `cargo build -p sdrlab-py --release` first")


def import_module(tmp):
    lib = locate_cdylib()
    shutil.copy2(lib, Path(tmp) / "sdrlab_py.so")
    sys.path.insert(0, tmp)
    import sdrlab_py

    return sdrlab_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def check_network(m):
    net = m.Network.reference()
    assert net.num_hosts == 26, net.num_hosts
    assert net.num_subnets == 10, net.num_subnets
    assert net.total_services >= 207, net.total_services
    assert "(1,0)" in net.hosts()
    assert net.risk_tier("(4,0)") == "high"
    assert net.risk_tier("(1,0)") == "low"
    rebuilt = m.Network.from_json(net.to_json())
    assert rebuilt.num_hosts == 26
    print("network:", repr(net))


def check_simulator(m):
    sim = m.Simulator(m.Network.reference(), "(3,1)", "(1,0)")
    assert sim.observation_len == 884, sim.observation_len
    assert sim.slice_len == 34, sim.slice_len
    actions = sim.actions()
    assert len(actions) == 156, len(actions)
    assert actions[0] == ("(1,0)", "service_scan")
    obs = sim.reset()
    assert len(obs) == 884

    # The foothold carries 11 common services: +11 discovery, -1 scan toll.
    reward, done, invalid = sim.step("(1,0)", "service_scan")
    approx(reward, 10.0)
    assert not done and not invalid

    # The innermost zone is out of reach from the DMZ; the toll still lands.
    reward, done, invalid = sim.step("(9,2)", "exploit")
    approx(reward, -4.0)
    assert invalid and not done

    reachable = sim.action_mask("reachable")
    progressive = sim.action_mask("progressive")
    assert len(reachable) == len(progressive) == 156
    assert any(progressive)
    assert all(r for r, p in zip(reachable, progressive) if p)
    print("simulator: obs", sim.observation_len, "actions", len(actions))


def check_math(m):
    adv = m.gae([1.0, 0.0, 2.0], [2.0, 0.5, 1.0, 0.0], 0.5, 0.5)
    approx(adv[0], -0.6875)
    approx(adv[1], 0.25)
    approx(adv[2], 1.0)

    loss, grad, clip_fraction = m.ppo_loss([0.0], [0.0], [2.0], 0.2)
    approx(loss, -2.0)
    approx(grad[0], -2.0)
    approx(clip_fraction, 0.0)

    approx(m.penalty("authentication", "exploit", 1.0), -6.0)
    approx(m.penalty("data", "service_scan", 5.0), -15.0)
    approx(m.penalty("common", "privilege_escalation", 3.0), -6.0)
    try:
        m.penalty("bogus", "exploit", 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("bogus category accepted")

    assert m.check_algorithm("da-ppo") == "da-ppo"
    try:
        m.check_algorithm("ppo2")
    except ValueError:
        pass
    else:
        raise AssertionError("bogus algorithm accepted")
    print("math: gae/ppo/penalty tables agree")


def check_training(m, tmp):
    net_path = Path(tmp) / "tiny_net.json"
    net_path.write_text(json.dumps(TINY_NET))
    config = json.dumps(
        {
            "network": str(net_path),
            "algorithm": "a2c",
            "target": [1, 1],
            "initial": [0, 0],
            "seed": 3,
            "algo": {"episodes": 25},
            "warmup": {"episodes": 10},
        }
    )

    goals = json.loads(m.warmup_goals(config))
    assert sum(1 for g in goals if g["origin"] == "target") == 1, goals

    checkpoint, goal_set, metrics_csv = m.train(config)
    doc = json.loads(checkpoint)
    assert doc["algorithm"] == "a2c"
    lines = metrics_csv.strip().splitlines()
    assert lines[0] == "episode,reward,steps,wall_ms"
    assert len(lines) == 26, len(lines)

    path = json.loads(m.evaluate(config, checkpoint, goal_set))
    assert path["target"] == [1, 1]
    assert path["steps"] > 0
    assert isinstance(path["completed"], bool)
    print(
        "training: 25 episodes ->",
        f"completed={path['completed']} steps={path['steps']} "
        f"reward={path['total_reward']:.2f}",
    )


def main():
    with tempfile.TemporaryDirectory() as tmp:
        m = import_module(tmp)
        check_network(m)
        check_simulator(m)
        check_math(m)
        check_training(m, tmp)
    print("smoke test: OK")


if __name__ == "__main__":
    main()
