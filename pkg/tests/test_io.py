import json

import numpy as np
import pytest

from stadium_otoc.analysis import compare_curves, fit_xi
from stadium_otoc.cli import EXIT_COMPUTE, EXIT_INVALID, EXIT_OK, main
from stadium_otoc.config import DEFAULT_CONFIG, ConfigError, RunConfig
from stadium_otoc.series import OtocSeries, SeriesFormatError

SMALL = """\
[solver]
h = 0.05
n_basis = 150
n_keep = 120
[ensemble]
log2_kT_over_E0 = 2 3 4 5
[time]
ell_max = 4
points = 30
[mc]
n_samples = 4000
blocks = 10
[output]
dir = {out}
"""


def series(n=20, scale=1.0):
    t = np.linspace(0, 1, n)
    return OtocSeries(t, 2 * t, scale * (1 + t**2), 0.01 * np.ones(n), {"quantity": "demo", "seed": 1})


# -- series ------------------------------------------------------------------

def test_series_roundtrip_is_exact(tmp_path):
    s = series()
    p = s.write(tmp_path / "a.csv")
    back = OtocSeries.read(p)
    np.testing.assert_array_equal(back.values, s.values)
    assert back.meta == s.meta
    back.write(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_series_validation(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,ell,value,stderr\n0,0,1,0\n")
    with pytest.raises(SeriesFormatError):
        OtocSeries.read(bad)
    bad.write_text("t,ell,value,stderr\n0,0,abc,0\n")
    with pytest.raises(SeriesFormatError):
        OtocSeries.read(bad)
    with pytest.raises(SeriesFormatError):
        OtocSeries([0, 0], [0, 1], [1, 1])
    with pytest.raises(SeriesFormatError):
        OtocSeries([0, 1], [0, 1], [1, 1], [-1, 0])


# -- config ------------------------------------------------------------------

def test_default_config_text_matches_defaults():
    assert RunConfig.from_string(DEFAULT_CONFIG).digest() == RunConfig().digest()
    c = RunConfig()
    np.testing.assert_allclose(c.kT_values, [32, 64, 128, 256, 512])
    assert c.ell_grid.size == 200 and c.ell_grid[-1] == 25.0


@pytest.mark.parametrize("text, field", [
    ("[solver]\nn_keep = 5000\n", "n_keep"),
    ("[geometry]\na = -1\n", "a"),
    ("[solver]\nh = abc\n", "h"),
    ("[solver]\nbogus = 1\n", "bogus"),
    ("[nowhere]\nx = 1\n", "nowhere"),
    ("[ensemble]\nlog2_kT_over_E0 =\n", "log2_kT_over_E0"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        RunConfig.from_string(text)


def test_nu_override_parsed():
    c = RunConfig.from_string("[orbits]\nnu.axial = 5\n")
    assert c.nu_override == {"axial": 5}


# -- analysis ------------------------------------------------------------------

def test_fit_xi_exact_power_laws():
    t = np.linspace(0, 1, 5)
    lin = {k: OtocSeries(t, t + 0.0, 0.3 * k * np.ones(5)) for k in (32.0, 64.0, 128.0, 256.0)}
    f = fit_xi(lin, 0.5)
    assert abs(f.xi - 1.0) < 1e-12
    pw = {k: OtocSeries(t, t + 0.0, 0.3 * k**1.03 * np.ones(5)) for k in (32.0, 64.0, 128.0, 256.0)}
    assert fit_xi(pw, 0.5).xi == pytest.approx(1.03, abs=1e-10)
    with pytest.raises(ValueError):
        fit_xi(dict(list(lin.items())[:3]), 0.5)


def test_compare_curves():
    a, b = series(), series(scale=1.05)
    c = compare_curves(a, b, (0.0, 2.0))
    assert c.max_relative_deviation == pytest.approx(0.05, rel=1e-12)
    assert compare_curves(a, b, (0, 2), 1.0, 1.05).max_relative_deviation < 1e-14


# -- command line ------------------------------------------------------------

@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "run.ini").write_text(SMALL.format(out="out"))
    return tmp_path


def test_cli_pipeline_is_reproducible(workdir):
    for cmd in ("eigensolve", "classical-otoc", "quantum-otoc", "semiclassical", "compare", "figure-data"):
        assert main(["--config", "run.ini", cmd]) == EXIT_OK
    out = workdir / "out"
    snap = {p: p.read_bytes() for p in out.rglob("*") if p.is_file() and "provenance" not in p.parts}
    for cmd in ("classical-otoc", "quantum-otoc", "semiclassical", "compare", "figure-data"):
        assert main(["--config", "run.ini", "--force", cmd]) == EXIT_OK
    for p, data in snap.items():
        if p.suffix in (".csv", ".json"):
            assert p.read_bytes() == data, p
    side = json.loads((out / "classical" / "O_cl_j2.json").read_text())
    assert side["config_hash"] and side["seed"] == 12345
    for sub in ("fig2", "fig3", "fig4"):
        assert (out / "figures" / sub / "plot.py").exists()
    report = json.loads((out / "compare.json").read_text())
    assert report["components_vs_classical"] and report["growth"]


def test_cli_seed_changes_classical_output(workdir):
    assert main(["--config", "run.ini", "classical-otoc"]) == EXIT_OK
    a = (workdir / "out" / "classical" / "O_cl_j3.csv").read_bytes()
    assert main(["--config", "run.ini", "--seed", "7", "--force", "classical-otoc"]) == EXIT_OK
    assert (workdir / "out" / "classical" / "O_cl_j3.csv").read_bytes() != a


def test_cli_exit_codes(workdir, capsys):
    (workdir / "bad.ini").write_text("[solver]\nn_keep = 99999\n")
    assert main(["--config", "bad.ini", "lyapunov"]) == EXIT_INVALID
    assert "n_keep" in capsys.readouterr().err
    assert main(["--config", "missing.ini", "lyapunov"]) == EXIT_INVALID
    # quantum stage without a cached eigensolve
    assert main(["--config", "run.ini", "quantum-otoc"]) == EXIT_INVALID
    # cache built for a different grid is refused
    assert main(["--config", "run.ini", "eigensolve"]) == EXIT_OK
    (workdir / "run2.ini").write_text(SMALL.format(out="out").replace("h = 0.05", "h = 0.04"))
    assert main(["--config", "run2.ini", "quantum-otoc"]) == EXIT_INVALID
    assert "--force" in capsys.readouterr().err
    # more levels than grid points is a compute failure
    (workdir / "coarse.ini").write_text(SMALL.format(out="out3").replace("h = 0.05", "h = 0.3"))
    assert main(["--config", "coarse.ini", "eigensolve"]) == EXIT_COMPUTE
