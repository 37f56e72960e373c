import json
import textwrap

import pytest

from rigidlab.cli import main
from rigidlab.experiment import ConfigError, ExperimentConfigError, compare_runs, parse_config

EUCLID = """\
experiment: euclid-coarse
pipeline: rho-rigidity
medium:
  kind: density
  dimension: 2
  delta: 0.1
numerics:
  h: 0.05
  dt: {dt}
  T: {T}
omega: [1.0, 0.0]
"""

BUMP = """\
experiment: bump-coarse
pipeline: rho-rigidity
medium:
  kind: density
  dimension: 2
  delta: 0.1
  bumps:
    - {amplitude: 0.2, center: [0.0, 0.0], radius: 0.8}
numerics:
  h: 0.05
  dt: 0.015
  T: 3.5
omega: [1.0, 0.0]
"""

METRIC3 = """\
experiment: metric-3d
pipeline: metric-rigidity
medium:
  kind: metric
  dimension: 3
  bumps:
    - amplitude: 0.1
      center: [0.0, 0.0, 0.0]
      radius: 0.7
      matrix: [[1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.0]]
numerics:
  h: 0.06
  dt: 0.01
  T: 4.0
"""


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_validate_ok(tmp_path, capsys):
    p = write(tmp_path, EUCLID.format(dt=0.015, T=3.5))
    assert main(["validate", "--config", str(p)]) == 0
    out = capsys.readouterr().out
    assert out.rstrip().endswith("OK")
    assert "cfl" in out.lower()


def test_validate_short_horizon(tmp_path, capsys):
    p = write(tmp_path, BUMP.replace("T: 3.5", "T: 2"))
    assert main(["validate", "--config", str(p)]) == 1
    out = capsys.readouterr().out
    assert "T=2 violates T > 4√g_max − 1 = 3.38" in out and "INVALID" in out
    assert main(["validate", "--config", str(p), "--allow-short-horizon"]) == 0


def test_validate_cfl(tmp_path, capsys):
    p = write(tmp_path, EUCLID.format(dt=0.05, T=3.5))
    assert main(["validate", "--config", str(p)]) == 1
    assert "violates the CFL limit" in capsys.readouterr().out


def test_validate_counts_directions_in_3d(tmp_path, capsys):
    p = write(tmp_path, METRIC3)
    assert main(["validate", "--config", str(p)]) == 0
    assert "|Omega| = 6 direction(s)" in capsys.readouterr().out


def test_parse_error_reports_line(tmp_path, capsys):
    p = write(tmp_path, EUCLID.format(dt=0.015, T=3.5).replace("h: 0.05", "h: -0.05"))
    assert main(["validate", "--config", str(p)]) == 1
    err = capsys.readouterr().err
    assert f"{p}:8: numerics.h" in err


def test_missing_field_and_unknown_key():
    with pytest.raises(ExperimentConfigError, match="numerics.T"):
        parse_config(EUCLID.format(dt=0.015, T=3.5).replace("  T: 3.5\n", ""))
    with pytest.raises(ExperimentConfigError, match="colour"):
        parse_config(EUCLID.format(dt=0.015, T=3.5) + "colour: red\n")


def test_yaml_syntax_error(tmp_path, capsys):
    p = write(tmp_path, "experiment: [unclosed\n")
    assert main(["validate", "--config", str(p)]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 1


@pytest.fixture(scope="module")
def euclid_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    p = write(base, EUCLID.format(dt=0.015, T=3.5))
    codes = [main(["run", "--config", str(p), "--out", str(base / name)]) for name in ("a", "b")]
    return base, codes


def test_run_euclidean_consistent(euclid_runs):
    base, codes = euclid_runs
    assert codes == [0, 0]
    man = json.loads((base / "a" / "manifest.json").read_text())
    assert man["verdict"].startswith("consistent")
    assert man["exit_code"] == 0


def test_manifest_is_complete(euclid_runs):
    base, _ = euclid_runs
    man = json.loads((base / "a" / "manifest.json").read_text())
    for key in ("package", "version", "config", "resolved", "derived", "verdict", "metrics", "checks", "outputs"):
        assert key in man
    listed = set(man["outputs"])
    on_disk = {str(f.relative_to(base / "a")) for f in (base / "a").rglob("*") if f.name != "manifest.json"}
    assert listed == on_disk
    assert man["resolved"]["epsilon"] == pytest.approx(0.2)


def test_runs_are_bit_identical(euclid_runs):
    base, _ = euclid_runs
    for f in (base / "a").glob("*.csv"):
        assert f.read_bytes() == (base / "b" / f.name).read_bytes()
    assert (base / "a" / "manifest.json").read_bytes() == (base / "b" / "manifest.json").read_bytes()


def test_compare_self(euclid_runs, capsys, tmp_path):
    base, _ = euclid_runs
    assert main(["compare", str(base / "a"), str(base / "b"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "differs" not in out and "none" in out
    data = json.loads((tmp_path / "compare.json").read_text())
    assert all(d == 0.0 for _, d in data["trace_distances"])


def test_compare_disjoint(tmp_path):
    for name, key in (("x", "a.csv"), ("y", "b.csv")):
        (tmp_path / name).mkdir()
        (tmp_path / name / "manifest.json").write_text(json.dumps({"outputs": {key: "0"}}))
    with pytest.raises(ConfigError, match="share no artifact"):
        compare_runs(tmp_path / "x", tmp_path / "y")
    assert main(["compare", str(tmp_path / "x"), str(tmp_path / "y")]) == 1


def test_run_refuses_short_horizon(tmp_path):
    p = write(tmp_path, BUMP.replace("T: 3.5", "T: 2"))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o" / "manifest.json").exists()


def test_bad_jobs(tmp_path):
    p = write(tmp_path, EUCLID.format(dt=0.015, T=3.5))
    assert main(["run", "--config", str(p), "--jobs", "0"]) == 1


def test_compare_across_media(euclid_runs, tmp_path, capsys):
    base, _ = euclid_runs
    p = write(tmp_path, BUMP.replace("h: 0.05", "h: 0.05\n  epsilon: 0.2"))
    main(["run", "--config", str(p), "--out", str(tmp_path / "bump")])
    capsys.readouterr()
    comp = compare_runs(base / "a", tmp_path / "bump")
    dists = dict(comp.traces)
    assert dists["trace_medium.csv"] > 0
    assert dists["trace_euclidean.csv"] == 0.0
