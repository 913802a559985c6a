"""Smoke test for the stringstab extension module."""

import math

import stringstab as ss


def main():
    t = ss.Topology(5, 2)
    assert t.degrees() == [2, 2, 2, 2, 2], t.degrees()
    assert t.laplacian()[2] == [-1.0, -1.0, 2.0, 0.0, 0.0]
    assert t.has_spanning_tree()
    assert ss.Topology(5, 2, "truncated").degrees() == [1, 2, 2, 2, 2]

    p = ss.Protocol.reference(2)
    assert p.gains == [0.2, 1.5]
    for r in (1, 2, 3):
        assert abs(p.dc_gain(r) - 1.0 / r) < 1e-12

    roots = ss.polynomial_roots([2.0, -3.0, 1.0])
    assert sorted(round(z.real, 9) for z in roots) == [1.0, 2.0]
    assert ss.routh_hurwitz([1.0, 3.0, 3.0, 1.0]) == "stable"

    report = ss.hinf_estimate(ss.Protocol.reference(1), 2)
    assert report["verdict"] == "attenuating", report
    report = ss.hinf_estimate(ss.Protocol.reference(3), 1)
    assert report["verdict"] == "amplifying", report
    assert abs(report["hinf"] - 1.8290110074890515) < 1e-6

    check = ss.check(t, p)
    assert check["overall"] and len(check["modes"]) == 5

    sim = ss.simulate(ss.Topology(4, 1), ss.Protocol.reference(1), horizon=10.0)
    assert len(sim["peaks"]) == 4
    assert all(math.isfinite(v) for v in sim["peaks"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
