import filecmp
import os

import pytest

from stwave import cli, harness
from stwave.errors import ParameterError

SMALL = """\
# tiny but complete
k_max = 3
stab_k_max = 3
compress_k = 3
universe_k = 4
eps_grid = 1e-1, 3e-2
apply_eps = 1e-1, 1e-3
apply_vectors = 2
oracle_t = 7
oracle_x = 8
pairs = 10
pair_level = 3
checks = closed_forms, minus_fd, d_dual_route
"""


def test_config_parsing_and_hash(tmp_path):
    cfg = harness.ExperimentConfig.from_text(SMALL, out=str(tmp_path))
    assert cfg.k_max == 3 and cfg.eps_grid == (1e-1, 3e-2) and cfg.quad_tol is None
    same = harness.ExperimentConfig.from_text(SMALL, out="elsewhere", threads=4)
    assert cfg.hash() == same.hash()
    other = harness.ExperimentConfig.from_text(SMALL, seed=1)
    assert cfg.hash() != other.hash()


@pytest.mark.parametrize("text", ["k_max 3", "nosuch = 1", "k_min = 5\nk_max = 3",
                                  "weights = fancy", "problem = wave"])
def test_config_errors(text):
    with pytest.raises(ParameterError):
        harness.ExperimentConfig.from_text(text)


def test_csv_layout(tmp_path):
    cfg = harness.ExperimentConfig.from_text("", out=str(tmp_path))
    p = harness.write_csv(str(tmp_path / "x.csv"), cfg, ("a", "b", "c"), [(1, 0.1, None), (2, True, "s")])
    lines = open(p).read().splitlines()
    assert lines == [f"# config_hash={cfg.hash()}", "a,b,c", "1,0.1,", "2,true,s"]


def _run_cli(tmp_path, *extra, config=SMALL):
    cf = tmp_path / "cfg.txt"
    cf.write_text(config)
    return cli.main([*extra[:1], "--config", str(cf), "-q", *extra[1:]])


def test_verify_quadrature_override_fails(tmp_path):
    code = _run_cli(tmp_path, "verify-calculus", "--out", str(tmp_path / "o"),
                    config=SMALL + "quad_tol = 1e-14\n")
    assert code == 1
    text = (tmp_path / "o" / "verify_calculus.csv").read_text()
    assert "minus_derivative_fd" in text and ",false" in text


def test_empty_check_list_warns(tmp_path):
    cfg = harness.ExperimentConfig.from_text(SMALL.replace(
        "checks = closed_forms, minus_fd, d_dual_route", "checks = ,"), out=str(tmp_path))
    with pytest.warns(RuntimeWarning, match="empty check list"):
        res = harness.run_verify_calculus(cfg)
    assert res.criteria == []


def test_unknown_check_is_a_cli_error(tmp_path):
    assert _run_cli(tmp_path, "verify-calculus", "--out", str(tmp_path),
                    config=SMALL.replace("minus_fd", "bogus")) == 2


def test_single_level_rates_have_no_slope(tmp_path):
    cfg = harness.ExperimentConfig.from_text(SMALL + "k_min = 2\nk_max = 2\n", out=str(tmp_path))
    res = harness.run_rates(cfg)
    rows = (tmp_path / "rates.csv").read_text().splitlines()
    assert rows[2].endswith(",")
    assert "rate_slope_last_three" not in [c.name for c in res.criteria]


def test_all_is_thread_independent(tmp_path):
    a, b = tmp_path / "t1", tmp_path / "t2"
    codes = [_run_cli(tmp_path, "all", "--out", str(d), "--threads", n)
             for d, n in ((a, "1"), (b, "2"))]
    assert codes[0] == codes[1]
    names = sorted(os.listdir(a))
    assert "summary.csv" in names and names == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors
