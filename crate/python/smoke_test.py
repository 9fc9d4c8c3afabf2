"""Smoke test for the fdlab extension module.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/fdlab-*.whl
"""

import json
import math

import fdlab


def main():
    cfg = fdlab.InstanceConfig(d=30, k=3, m=8, n=16, eps=0.1, seed=7)
    inst = cfg.build()
    assert (inst.d, inst.k, inst.m, inst.n) == (30, 3, 8, 16)
    assert abs(inst.eps_measured - 0.1) < 1e-6

    seeds = [c.seed for c in cfg.battery(0, 3)]
    assert len(set(seeds)) == 3
    assert seeds == [c.seed for c in cfg.battery(0, 3)]

    runs = {m: inst.run(m) for m in ("FT", "LP", "LPFT")}
    for name, traj in runs.items():
        assert traj.method == name and traj.converged, name
        assert len(traj) == len(traj.times) == len(traj.l_ood)
        assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(traj.train_loss, traj.train_loss[1:]))
        assert traj.to_csv().count("\n") == len(traj) + 1
    lp = runs["LP"]
    assert math.isclose(inst.ood_loss(lp.head, lp.extractor), lp.l_ood[-1], rel_tol=1e-9)
    assert lp.extractor == inst.b_init

    # A subspace contains itself; an extractor is at distance 0 from itself.
    assert abs(fdlab.principal_angle_cos(inst.x[:3], inst.x[:8]) - 1.0) < 1e-9
    assert fdlab.extractor_distance(inst.b_star, inst.b_star) < 1e-12

    assert "THM1" in fdlab.result_ids()
    report = fdlab.verify("LEM_FEATINV", seed=1, n_instances=2)
    assert report.passed and report.evaluate()
    assert json.loads(report.to_json())["result_id"] == "LEM_FEATINV"

    try:
        fdlab.InstanceConfig(d=10, k=3, m=7)
    except ValueError as e:
        assert "m < d - k" in str(e)
    else:
        raise AssertionError("invalid dimensions accepted")

    print("fdlab", fdlab.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
