import json

import numpy as np
import pytest

from cycleperturb import cli
from cycleperturb.config import ExperimentConfig, build_field, build_perturbation, load_config, parse_config
from cycleperturb.cycle import find_cycle
from cycleperturb.errors import ConfigError
from conftest import HARMONIC_CONFIG, REFERENCE_CONFIG

BASE = {"system": {"field": "duffing", "k": 1.0, "seed": [1.0, 0.0]},
        "perturbation": [{"type": "forcing", "a": 1.0}]}


def with_(**patch):
    d = {k: (dict(v) if isinstance(v, dict) else list(v)) for k, v in BASE.items()}
    for k, v in patch.items():
        d[k] = v
    return d


def test_reference_config_parses(reference_config):
    cfg = reference_config
    assert cfg.ladder == (0.02, 0.01, 0.005, 0.0025)
    assert cfg.sigma == -1.0 and cfg.seed == 12345 and cfg.expect_nondegenerate is True
    assert build_field(cfg).name.startswith("duffing")
    assert len(build_perturbation(cfg, 4.0).generators) == 1


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.tolerances.integration == 1e-10 and cfg.tolerances.quadrature == 1e-8
    assert cfg.threads == 1 and not cfg.paper_literal


@pytest.mark.parametrize("patch", [
    {"ladder": {"eps": [0.01, 0.02]}},
    {"ladder": {"eps": [0.01, -0.005]}},
    {"ladder": {"eps": []}},
    {"tolerances": {"quadrature": 0.0}},
    {"tolerances": {"bogus": 1.0}},
    {"run": {"sigma": 2}},
    {"run": {"threads": 0}},
    {"run": {"colour": "red"}},
    {"system": {"field": "van_der_pol"}},
    {"system": {"field": "duffing", "seed": [1.0]}},
    {"perturbation": [{"type": "magnetism"}]},
])
def test_invalid_configs_rejected(patch):
    with pytest.raises(ConfigError):
        parse_config(with_(**patch))


def test_bad_term_parameters_rejected():
    cfg = parse_config(with_(perturbation=[{"type": "dry_friction", "mu": 1.0}]))
    with pytest.raises(ConfigError):
        build_perturbation(cfg, 1.0)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[system\nfield = ")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_digest_ignores_execution_settings(reference_config):
    a = reference_config
    assert a.digest() == a.with_overrides(out="elsewhere", threads=4).digest()
    assert a.digest() != a.with_overrides(seed=1).digest()


def test_custom_sympy_field_matches_builtin():
    cfg = parse_config(with_(system={"field": "custom", "f1": "x2", "f2": "-x1 - k*x1**3", "k": 1.0,
                                     "symmetric": True, "hamiltonian": "x2**2/2 + x1**2/2 + k*x1**4/4"}))
    fld = build_field(cfg)
    x = np.array([0.7, -0.2])
    np.testing.assert_allclose(fld(x), [-0.2, -0.7 - 0.343], atol=1e-15)
    np.testing.assert_allclose(fld.jacobian(x), [[0.0, 1.0], [-1.0 - 3 * 0.49, 0.0]], atol=1e-15)
    cyc = find_cycle(fld, [1.0, 0.0])
    assert cyc.period == pytest.approx(find_cycle(build_field(parse_config(BASE)), [1.0, 0.0]).period, abs=1e-9)


def test_custom_field_unbound_symbol():
    cfg = parse_config(with_(system={"field": "custom", "f1": "x2", "f2": "-w*x1"}))
    with pytest.raises(ConfigError):
        build_field(cfg)


def test_experiment_config_direct_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(system={"field": "duffing"}, perturbation=(), cycle_seed=(1.0, 0.0), ladder=(0.0,))


# ---------------------------------------------------------------------------
# CLI


def test_cli_config_error_writes_nothing(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[system]\nfield = "nope"\n')
    out = tmp_path / "out"
    assert cli.main(["cycle", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_cli_bad_eps_override_is_config_error(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["sweep", "--config", str(REFERENCE_CONFIG), "--out", str(out), "--eps", "0.01", "0.02"]) == 2
    assert not out.exists()


def test_cli_numerical_failure_writes_diagnostic(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[system]\nfield = "duffing"\nseed = [0.0, 0.0]\n')
    out = tmp_path / "o"
    assert cli.main(["cycle", "--config", str(cfg), "--out", str(out)]) == 3
    diag = json.loads((out / "diagnostic.json").read_text())
    assert diag["error"] == "EquilibriumSeed"


def test_cli_analyze_degenerate_exits_3(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["analyze", "--config", str(HARMONIC_CONFIG), "--out", str(out)]) == 3
    assert (out / "diagnostic.json").exists()


def test_cli_cycle_outputs(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["cycle", "--config", str(REFERENCE_CONFIG), "--out", str(out)]) == 0
    info = json.loads((out / "cycle.json").read_text())
    assert info["T"] == pytest.approx(4.768022029, abs=1e-8)
    assert info["nondegenerate"] is True
    assert info["theta0"] == pytest.approx(0.80157, abs=1e-4)
    header = (out / "cycle.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,z_tilde1,z_tilde2,z_hat1,z_hat2,y1,y2"


def test_cli_harmonic_verify_skips(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", str(HARMONIC_CONFIG), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    status = {v["name"]: v["status"] for v in report["verdicts"]}
    assert status.pop("nondegeneracy") == "pass"
    assert set(status.values()) == {"skipped"}
    assert "SKIPPED" in capsys.readouterr().out
    assert not (out / "ladder.csv").exists()


def test_cli_verify_failure_exits_1(tmp_path):
    # expecting nondegeneracy from an isochronous oscillator must fail verification
    cfg = tmp_path / "c.toml"
    cfg.write_text(HARMONIC_CONFIG.read_text().replace("expect_nondegenerate = false", "expect_nondegenerate = true"))
    assert cli.main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_cli_sweep_is_byte_reproducible(tmp_path):
    outs = []
    for i, threads in enumerate(("1", "2")):
        out = tmp_path / f"o{i}"
        args = ["sweep", "--config", str(REFERENCE_CONFIG), "--out", str(out), "--eps", "0.02", "0.01",
                "--threads", threads]
        assert cli.main(args) == 0
        outs.append((out / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = np.loadtxt(tmp_path / "o0" / "sweep.csv", delimiter=",", skiprows=1)
    assert rows.shape == (2, 5)
    assert (tmp_path / "o0" / "sweep.csv").read_text().splitlines()[0] == "eps,sup_ratio,sup_residual,Delta,v"


def test_cli_analyze_and_plot(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["analyze", "--config", str(REFERENCE_CONFIG), "--out", str(out), "--eps", "0.01"]) == 0
    doc = json.loads((out / "analyze.json").read_text())
    assert doc["residual"] <= 1e-8
    assert len(doc["events"]) == 2
    for name in ("orbit.csv", "cycle.csv", "profile.csv"):
        assert (out / name).stat().st_size > 0
    assert cli.main(["plot", "--config", str(REFERENCE_CONFIG), "--out", str(out), "--eps", "0.01"]) == 0
    for name in ("orbit.svg", "residual.svg"):
        assert (out / name).read_text().startswith("<svg")
