"""Acceptance suite on the default configuration.

One PASS/FAIL line per criterion is collected in ``LINES`` and printed in
the pytest terminal summary (and on stdout when run as a script).  The two
full runs take about seven minutes together.
"""
import filecmp
import os
import time

import pytest

from stwave import harness

LINES = {}
BUDGET = {1: 60, 2: 120, 3: 300, 4: 600, 6: 180, 7: 600}


def _report(num, title, ok, detail):
    line = f"criterion {num} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    LINES[num] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def full(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = harness.ExperimentConfig.from_text("", out=str(root / "threads1"), threads=1)
    t0 = time.perf_counter()
    ctx = harness.Context(cfg)
    setup = time.perf_counter() - t0
    results, timings = harness.run("all", cfg, ctx)
    by_name = {r.name: r for r in results}
    sub = harness.ExperimentConfig.from_text("checks = d_dual_route", out=str(root / "dual"))
    t0 = time.perf_counter()
    dual = harness.run_verify_calculus(sub, harness.Context(sub))
    dual_time = time.perf_counter() - t0
    return {"root": root, "cfg": cfg, "res": by_name, "time": timings, "setup": setup,
            "dual": dual, "dual_time": dual_time}


def _crit(res, name):
    return next(c for c in res.criteria if c.name == name)


def _fmt(cs):
    return "; ".join(f"{c.name}={c.measured:.4g} (limit {c.limit:.4g})" for c in cs)


def test_criterion_1_fractional_calculus(full):
    res = full["res"]["verify-calculus"]
    sec = full["time"]["verify-calculus"] + full["setup"]
    keys = ("semigroup", "integration_by_parts", "fractional_pairing", "zero_extension", "commutation")
    cs = [c for c in res.criteria if c.name.startswith(keys)]
    ok = res.passed and len(cs) == 6 and sec < BUDGET[1]
    assert _report(1, "fractional calculus identities", ok,
                   f"{_fmt(cs)}; all {len(res.criteria)} asserted rows pass={res.passed}; {sec:.1f} s")


def test_criterion_2_dual_route(full):
    c = full["dual"].criteria[0]
    pairs = int(c.name.split("_")[3])
    sec = full["dual_time"]
    ok = c.passed and pairs >= 200 and sec < BUDGET[2]
    assert _report(2, "D by two routes", ok, f"{pairs} pairs, max diff {c.measured:.3g} "
                   f"(limit {c.limit:g}); {sec:.1f} s")


def test_criterion_3_stability(full):
    res = full["res"]["stability"]
    sec = full["time"]["stability"] + full["setup"]
    ok = res.passed and len(res.criteria) == 3 and sec < BUDGET[3]
    assert _report(3, "uniform stability", ok, f"{_fmt(res.criteria)}; {sec:.1f} s")


def test_criterion_4_rates(full):
    res = full["res"]["rates"]
    c = _crit(res, "rate_slope_last_three")
    sec = full["time"]["rates"] + full["setup"]
    ok = c.passed and sec < BUDGET[4]
    assert _report(4, "convergence rate", ok, f"{_fmt([c])}; {sec:.1f} s")


def test_criterion_5_quasi_optimality(full):
    res = full["res"]["rates"]
    cs = [_crit(res, "quasi_optimality_ratio_max"), _crit(res, "galerkin_orthogonality")]
    assert _report(5, "quasi-optimality", all(c.passed for c in cs), _fmt(cs))


def test_criterion_6_apply(full):
    res = full["res"]["compress"]
    sec = full["time"]["compress"] + full["setup"]
    ok = res.passed and sec < BUDGET[6]
    assert _report(6, "certified APPLY", ok, f"{_fmt(res.criteria)}; {sec:.1f} s")


def test_criterion_7_adaptive(full):
    res = full["res"]["adaptive"]
    sec = full["time"]["adaptive"] + full["setup"]
    ok = res.passed and sec < BUDGET[7]
    assert _report(7, "adaptive optimality", ok,
                   f"{_fmt(res.criteria)}; s_fit={res.info['s_fit']:.4g}; {sec:.1f} s")


def test_criterion_8_determinism(full):
    a = full["root"] / "threads1"
    b = full["root"] / "threads2"
    cfg = harness.ExperimentConfig.from_text("", out=str(b), threads=2)
    harness.run("all", cfg)
    names = sorted(f for f in os.listdir(a) if f.endswith(".csv"))
    same, diff, err = filecmp.cmpfiles(a, b, names, shallow=False)
    ok = bool(names) and not diff and not err and sorted(os.listdir(b)) == sorted(os.listdir(a))
    assert _report(8, "byte-identical CSVs for threads 1 and 2", ok,
                   f"{len(same)}/{len(names)} files identical" + (f", differ: {diff + err}"
                                                                  if diff or err else ""))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
