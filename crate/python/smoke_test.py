#!/usr/bin/env python3
"""Smoke test for the horomix_py extension module.

Builds the cdylib with cargo if necessary, loads it, and exercises the main
types and operations end to end with small sample counts.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def ensure_extension() -> Path:
    candidates = [
        ROOT / "target" / "release" / "libhoromix_py.so",
        ROOT / "target" / "debug" / "libhoromix_py.so",
    ]
    for c in candidates:
        if c.exists():
            return c
    print("building horomix-py (release)...")
    subprocess.run(
        ["cargo", "build", "--release", "-p", "horomix-py"], cwd=ROOT, check=True
    )
    return candidates[0]


def load_module():
    lib = ensure_extension()
    tmp = Path(tempfile.mkdtemp(prefix="horomix_py_"))
    shutil.copy2(lib, tmp / "horomix_py.so")
    sys.path.insert(0, str(tmp))
    import horomix_py

    return horomix_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    hx = load_module()
    print(f"loaded horomix_py {hx.__version__}")

    # closed-form exponentials and the renormalization identity
    assert hx.exp_flow("U", 1.0) == [1.0, 1.0, 0.0, 1.0]
    a, b, c, d = hx.exp_flow("X", 2.0)
    approx(a, math.e, 1e-12)
    approx(d, 1.0 / math.e, 1e-12)
    assert hx.renormalization_residual(7.0, 0.0) == 0.0
    assert hx.renormalization_residual(1000.0, 5.0) <= 1e-10
    print("PASS sl2 exponentials and renormalization identity")

    # combinatorial procedure: the k = 2 worked example
    approx(hx.xi_k([0.5, 0.5]), 0.25 / 576.0, 1e-18)
    res = hx.run_procedure([0.5, 0.5], [0.0, 500.0, 1000.0])
    assert res["stop_step"] == 2
    approx(res["radii"][0], 1000.0 ** (1.0 / 48.0), 1e-15)
    assert res["assignment"] == ["left", "anchor:0", "right"]
    plan = hx.plan_3mix(10.0, 1e4, 0.45)
    assert plan["case"] == "A"
    approx(plan["sigma"], 1e4 ** (-0.85), 1e-15)
    ts, reflected = hx.normalize_times([0.0, 1.0, 10.0])
    assert reflected and ts == [0.0, 9.0, 10.0]
    exponent, _, r2 = hx.fit_decay([(t, t ** -0.5) for t in (1.0, 2.0, 4.0, 8.0)])
    approx(exponent, -0.5, 1e-12)
    approx(r2, 1.0, 1e-12)
    print("PASS clustering procedure, planner, decay fit")

    # a small lab: reduction, sampling, cocycle, shearing
    lab = hx.Lab(
        "[correlate]\nn = 2000\ngaps = 5 50\n\n[vdc]\nn = 2000\n\n[l2avg]\nn = 500\n",
        seed=7,
    )
    ident = [1.0, 0.0, 0.0, 1.0]
    assert lab.reduce(ident) == ident
    pts = lab.sample(32)
    assert len(pts) == 32
    assert pts == lab.sample(32), "sampling must be deterministic in the seed"
    x = pts[0]
    det = x[0] * x[3] - x[1] * x[2]
    approx(det, 1.0, 1e-9)

    t1, t2 = 7.0, 11.0
    u1 = lab.u_of(x, t1)
    mid = lab.flow_tau(x, t1)
    u2 = lab.u_of(mid, t2)
    u12 = lab.u_of(x, t1 + t2)
    approx(u12, u1 + u2, 1e-7)
    approx(lab.inverse_clock(x, u12), t1 + t2, 1e-7)
    assert lab.tau(x) > 0.0
    a_trivial = lab.shear_discrepancy(x, 0.0, 20.0)
    assert abs(a_trivial) <= 1e-7
    a = lab.shear_discrepancy(x, 0.2, 50.0)
    dev = lab.deviation_integral(x, 0.2, 50.0)
    assert math.isfinite(a) and math.isfinite(dev)
    print("PASS lab reduction, sampling, cocycle, shearing")

    # estimators at smoke-test scale
    value, stderr = lab.correlate(2, 5.0, n=2000)
    assert math.isfinite(value) and stderr >= 0.0
    lhs, rhs, margin, margin_se, holds = lab.vdc(50.0, 5.0, n=2000)
    assert holds, f"vdc violated: lhs {lhs} rhs {rhs} margin {margin} +- {margin_se}"
    v25, _ = lab.l2avg(25.0, n=500)
    assert math.isfinite(v25)
    profile = lab.correlation_profile(k=2)
    assert len(profile["rows"]) == 2
    print("PASS estimators (correlate, vdc, l2avg, profile)")

    print("smoke test OK")


if __name__ == "__main__":
    main()
