"""Smoke test for the pyslb extension module.

Build and install first, e.g. `pip install ./crates/python` (maturin), or
copy target/release/libpyslb.so next to this file as pyslb.so.
"""

import math

import pyslb


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b, tol)


def main():
    g = pyslb.Source.gaussian()
    close(g.differential_entropy(), 0.5 * math.log(2 * math.pi * math.e), 1e-12)
    close(g.floor_entropy(), 1.459, 1e-3)
    assert g.dim == 1 and len(g.sample(10, seed=1)) == 10

    spec = pyslb.DistortionSpec(dim=1, r=2.0, distortion=0.25)
    close(pyslb.slb(g.differential_entropy(), spec), math.log(2), 1e-12)
    gap, se = pyslb.gap_upper_bound(g, pyslb.DistortionSpec(1, 2.0, 0.01))
    close(gap, 0.5 * math.log(1.01), 2 * se + 1e-9)

    close(pyslb.discrete_entropy([0.5, 0.5]), math.log(2), 1e-15)
    h, se = pyslb.floor_entropy_mc(g, 100_000, seed=3)
    close(h, g.floor_entropy(), 5 * se + 1e-3)

    rd = pyslb.rate_at_distortion(g, 0.25, -8.0, 8.0, cells=256)
    close(rd["rate"], math.log(2), 1e-2)

    q = pyslb.quantizer_report(g, 0.01)
    close(q["gap_to_rd"], pyslb.high_resolution_excess(), 1e-3)

    law = [([0.2], [0.2], 0.5), ([1.7], [0.4], 0.5)]
    rep = pyslb.converse_check(law)
    assert rep["chain_holds"] and rep["carry_holds"]

    try:
        pyslb.Source.gaussian(variance=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative variance accepted")

    print("pyslb", pyslb.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
