import copy
import json
from pathlib import Path

import numpy as np
import pytest

from dynalloc import satellite as bm
from dynalloc.cli import main
from dynalloc.config import ConfigError, load_config, parse_config, satellite_config
from dynalloc.results import SynthesisResult, dumps
from dynalloc.sim import Trajectory

ROOT = Path(__file__).resolve().parents[1]
DISTURBED = ROOT / "configs" / "satellite_disturbed.json"
ROBUST = ROOT / "configs" / "satellite_robust.json"
FIXTURE = ROOT / "fixtures" / "reference_gains_disturbed.json"


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(dumps(data, sort_keys=False))
    return path


def test_shipped_configs_match_builtin():
    for path, ex in ((DISTURBED, "disturbed"), (ROBUST, "robust")):
        assert json.loads(path.read_text()) == json.loads(json.dumps(satellite_config(ex)))


def test_config_builds_benchmark_loop():
    cfg = load_config(DISTURBED)
    ref = bm.closed_loop()
    assert np.allclose(cfg.closed_loop.A, ref.A) and np.allclose(cfg.closed_loop.C, ref.C)
    assert cfg.disturbance.sigma == 1.0
    assert np.allclose(cfg.initial_state()[:2], [-0.18, 0.0])
    assert cfg.disturbance_signal().energy() == pytest.approx(0.1667 ** 2 * 36)
    rob = load_config(ROBUST)
    assert rob.theta_range == (0.9, 1.0)
    assert np.allclose(rob.theta_weights(0.95), [0.5, 0.5])


def test_malformed_row_names_field(tmp_path):
    data = satellite_config("disturbed")
    data["plant"]["A_p"][1] = [0.0]
    path = write(tmp_path, data)
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "plant.A_p[1]"
    assert "row 1 has length 1, expected 2" in str(info.value)
    assert info.value.line is not None and "A_p" in path.read_text().splitlines()[info.value.line - 1]


@pytest.mark.parametrize("mutate, field", [
    (lambda d: d.pop("plant"), "plant"),
    (lambda d: d["dimensions"].update(m_a=-1), "dimensions.m_a"),
    (lambda d: d["influence"].update(u_bar=[50.0] * 7), "influence.u_bar"),
    (lambda d: d["weights"].update(w=[1.0] * 7 + [0.0]), "weights.w"),
    (lambda d: d["controller"].update(C_c="nope"), "controller.C_c"),
    (lambda d: d["influence"].update(M_n=[[1.0] * 8, [1.0] * 8]), "influence.M_n"),
])
def test_schema_errors(mutate, field):
    data = satellite_config("disturbed")
    mutate(data)
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.field == field


def test_optional_feedthrough_defaults_to_zero():
    data = satellite_config("disturbed")
    del data["controller"]["D_c"]
    cfg = parse_config(data)
    assert np.all(cfg.closed_loop.controller.D_c == 0)


def test_invalid_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "dimensions": {\n    "n_p": 2,,\n  }\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 3


def test_dumps_keeps_rows_compact():
    text = dumps({"A": [[1.0, -2e-05], [3, 4]], "s": "x"})
    assert '[1.0, -2e-05]' in text and json.loads(text)["A"][0][1] == -2e-05


# CLI ----------------------------------------------------------------------------

def test_cli_synth_global_rejected(tmp_path, capsys):
    code = main(["synth", str(DISTURBED), "--mode", "global", "-o", str(tmp_path / "g.json")])
    assert code == 1
    assert "global mode requires stable plant" in capsys.readouterr().err


def test_cli_schema_error_exit_code(tmp_path, capsys):
    data = satellite_config("disturbed")
    data["plant"]["B_p"][0] = [0.0]
    code = main(["synth", str(write(tmp_path, data))])
    assert code == 2
    assert "plant.B_p[0]" in capsys.readouterr().err


def test_cli_bad_weights_exit_code(capsys):
    assert main(["synth", str(DISTURBED), "--rho", "0,0,0"]) == 2
    assert "objective weight" in capsys.readouterr().err


def test_cli_synth_simulate_verify(tmp_path, capsys):
    gains = tmp_path / "gains.json"
    assert main(["synth", str(DISTURBED), "--mode", "disturbed", "--rho", "2,0.15,1000",
                 "-o", str(gains)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("status=optimal mode=disturbed gamma=")
    res = SynthesisResult.load(gains)
    assert res.mode == "disturbed" and res.mu <= 1.0

    csv = tmp_path / "run.csv"
    assert main(["simulate", str(DISTURBED), str(gains), "--t-final", "60", "-o", str(csv)]) == 0
    traj = Trajectory.from_csv(csv)
    assert traj.x.shape == (6001, 10)
    metrics = json.loads(csv.with_suffix(".metrics.json").read_text())
    assert set(metrics) >= {"energy", "peak_abs_sat", "terminal_state_norm",
                            "allocation_error_integral", "disturbance_admissible"}
    assert metrics["disturbance_admissible"] is False
    # thrusts mapped back into the physical range [0, 100]
    assert min(metrics["physical_thrust_min"]) >= 0 and max(metrics["physical_thrust_max"]) <= 100
    assert csv.with_suffix(".gp").exists()

    rep_json = tmp_path / "rep.json"
    assert main(["verify", str(gains), str(DISTURBED), "--trajectory", str(csv),
                 "--json", str(rep_json)]) == 0
    text = capsys.readouterr().out
    data = json.loads(rep_json.read_text())
    assert data["passed"] is True
    # the JSON report mirrors the printed one line by line
    printed = [ln.split()[1] for ln in text.splitlines()[1:] if ln.split()[0] in ("PASS", "FAIL", "NOT-APPLICABLE")]
    assert printed == [c["name"] for c in data["checks"]]


def test_cli_simulate_static_and_zero_horizon(tmp_path):
    csv = tmp_path / "s.csv"
    assert main(["simulate", str(DISTURBED), str(FIXTURE), "--baseline", "static",
                 "--t-final", "10", "-o", str(csv)]) == 0
    traj = Trajectory.from_csv(csv)
    assert np.all(traj.x[:, 4:] == 0)
    csv0 = tmp_path / "z.csv"
    assert main(["simulate", str(DISTURBED), str(FIXTURE), "--t-final", "0", "-o", str(csv0)]) == 0
    lines = csv0.read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("t,x1,")


def test_cli_simulate_disturbance_flags(tmp_path):
    csv = tmp_path / "p.csv"
    assert main(["simulate", str(DISTURBED), str(FIXTURE), "--disturbance", "pulse:0.1,0,1",
                 "--t-final", "2", "--x0", "0,0", "-o", str(csv)]) == 0
    metrics = json.loads(csv.with_suffix(".metrics.json").read_text())
    assert metrics["disturbance_energy"] == pytest.approx(0.01)
    assert metrics["disturbance_admissible"] is True
    spec = tmp_path / "w.json"
    spec.write_text(json.dumps({"kind": "samples", "breakpoints": [0, 1, 2], "values": [[0.1], [0.2], [0]]}))
    assert main(["simulate", str(DISTURBED), str(FIXTURE), "--disturbance", str(spec),
                 "--t-final", "3", "-o", str(csv)]) == 0
    assert main(["simulate", str(DISTURBED), str(FIXTURE), "--disturbance", "pulse:1",
                 "-o", str(csv)]) == 2


def test_cli_simulate_robust_theta(tmp_path):
    gains = ROOT / "fixtures" / "reference_gains_robust.json"
    csv = tmp_path / "r.csv"
    assert main(["simulate", str(ROBUST), str(gains), "--theta", "0.9", "--t-final", "5",
                 "-o", str(csv)]) == 0
    assert main(["simulate", str(ROBUST), str(gains), "--alpha", "0.7,0.7", "--t-final", "5",
                 "-o", str(csv)]) == 2


def test_cli_verify_fixture(capsys):
    assert main(["verify", str(FIXTURE), str(DISTURBED)]) == 0
    out = capsys.readouterr().out
    assert "abscissa[0]" in out and "NOT-APPLICABLE  trajectory_certificates" in out
    robust = ROOT / "fixtures" / "reference_gains_robust.json"
    assert main(["verify", str(robust), str(ROBUST)]) == 0


def test_cli_verify_negated_P(tmp_path, disturbed_design, capsys):
    bad = copy.deepcopy(disturbed_design)
    bad.P_vertices = [-bad.P]
    path = tmp_path / "bad.json"
    bad.save(path)
    assert main(["verify", str(path), str(DISTURBED)]) == 2
    assert "not positive definite" in capsys.readouterr().err


def test_cli_verify_zero_allocator_fails(tmp_path):
    g = bm.reference_gains("disturbed")
    g.K_f = np.zeros_like(g.K_f)
    path = tmp_path / "zero.json"
    g.save(path)
    assert main(["verify", str(path), str(DISTURBED)]) == 1


def test_cli_missing_file(capsys):
    assert main(["verify", "/nonexistent/gains.json", str(DISTURBED)]) == 2
