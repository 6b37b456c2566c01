"""Smoke test for the Python extension.

Build and install first, e.g. `pip install --no-build-isolation ./crates/py`
or `maturin develop -m crates/py/Cargo.toml`.
"""

import math
import pathlib

import chn

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    assert close(chn.rho(1, 4.0, 1.0), math.pi / 4, 1e-9)
    b = math.sqrt(2.0)
    assert close(chn.rho(4, 4.0, 1.0, 0.5), b * math.atan(b), 1e-9)
    assert math.isinf(chn.rho(4, 4.0, 1.0, 1.0))

    net = chn.Network.from_file(str(CONFIGS / "is.json"))
    assert (net.num_tiers, net.num_files) == (2, 2)
    assert chn.Network.from_json(net.to_json()).to_json() == net.to_json()

    tau = 10 ** (-0.5)
    total, per_tier = chn.coverage(net, 1, tau)
    assert 0.0 < total < 1.0 and len(per_tier) == 2
    assert close(total, chn.coverage_equal_alpha(net, 1, tau), 1e-6)
    assocs = [chn.association_probability(net, 1, k) for k in range(2)]
    assert close(sum(assocs), 1.0, 1e-12)

    half = chn.Network.from_file(str(CONFIGS / "is_half_activity.json"))
    d, _ = chn.delay(half, 1, tau)
    assert d >= 1.0 and math.isfinite(d)
    assert math.isinf(chn.delay(net, 0, tau)[0])

    sim = chn.simulate(net, 1, tau, samples=20000, seed=3)
    cov = sim["coverage"]
    assert abs(cov["mean"] - total) <= 4 * cov["std_error"], (cov, total)
    assert sim == chn.simulate(net, 1, tau, samples=20000, seed=3)

    try:
        chn.Network.from_json('{"tiers": [], "num_files": 1}')
    except ValueError as e:
        assert "tier" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    try:
        chn.coverage(net, 5, 1.0)
    except IndexError:
        pass
    else:
        raise AssertionError("bad file index accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
