"""Smoke test for the compiled extension: python python/smoke_test.py"""

import json
import math

import preb_sim

CONFIG = """
[system]
L_S = 4

[[baths]]
beta = 0.1
mu = 1.5
spectral = { kind = "semicircle", coupling = 1.0, bath_hopping = 2.0 }

[[baths]]
beta = 0.2
mu = -1.5
spectral = { kind = "semicircle", coupling = 2.0, bath_hopping = 2.0 }

[run]
tau = 3.0
n_steps = 4

[output]
stride = 1.0
"""


def main():
    assert preb_sim.required_bath_size(6.0, 2.0) == 14
    assert preb_sim.required_bath_size(12.0, 2.0) == 26

    bath = preb_sim.Bath.semicircle(1.0, 2.0, beta=0.1, mu=1.5)
    chain = bath.chain(10)
    assert len(chain) == 10
    assert abs(chain.gamma - 1.0) < 1e-8
    assert max(abs(g - 2.0) for g in chain.hop) < 1e-6
    assert 1.5 <= bath.memory_time() <= 2.5

    exp = preb_sim.Experiment(CONFIG)
    timeline = exp.run()
    assert len(timeline) == 1 + 4 * 3
    assert timeline.times[0] == 0.0
    assert timeline.occupations[0] == [1.0, 0.0, 1.0, 0.0]
    assert all(0.0 <= n <= 1.0 for row in timeline.occupations for n in row)
    assert timeline.to_csv().startswith("t,n_1,n_2,n_3,n_4,I_1,I_2,I_3")

    ness = exp.ness()
    assert len(ness.occupations) == 4 and len(ness.currents) == 3
    assert ness.current_spread() < 1e-6
    system = preb_sim.SystemSpec(4)
    other = preb_sim.ness_observables(system, bath, preb_sim.Bath.semicircle(2.0, 2.0, 0.2, -1.5))
    assert other.max_deviation(ness) < 1e-12

    report = json.loads(exp.certify(3.0, tol=math.inf, max_doublings=1, horizon=6.0))
    assert report["converged"] and report["certified_by"] == [3.0, 6.0]

    try:
        preb_sim.Experiment(CONFIG.replace("L_S = 4", "L_S = 4\nV = 1.0"))
    except ValueError as e:
        assert "interacting system requires tebd or dense" in str(e)
    else:
        raise AssertionError("interacting free-fermion config accepted")

    print("smoke test ok:", preb_sim.__version__)


if __name__ == "__main__":
    main()
