"""Smoke test for the loopfm_py extension: `python3 python/smoke_test.py`."""

import json
import math

import loopfm_py as lf


def main():
    auc, logloss, ne = lf.evaluate([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert abs(auc - 0.75) < 1e-12, auc
    base = [0.5] * 4
    assert abs(lf.evaluate(base, [0, 1, 0, 1])[2] - 1.0) < 1e-12

    vals = [math.tanh(0.01 * i - 1.0) for i in range(200)]
    once = lf.round_trip("int8", vals)
    assert lf.round_trip("int8", once) == once
    assert max(abs(a - b) for a, b in zip(vals, lf.round_trip("int4", vals))) <= 0.125 + 1e-12

    small = "[theory]\nbattery_size = 2\ngrid_points = 4\nl_max = 2\n"
    theory = json.loads(lf.verify_theory(small))
    assert all(ok for _, ok in theory["checks"]), theory["checks"]

    try:
        lf.ablate("sideways")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown axis accepted")

    assert "[transfer]" in lf.default_config()
    print("loopfm_py", lf.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
