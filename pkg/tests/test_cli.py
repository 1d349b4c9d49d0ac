import json
import re
import subprocess
import sys

import numpy as np
import pytest

from conftest import market_scenario
from oracles import davis
from rdmm.cli import main
from rdmm.core import TrainSpec
from rdmm.scenario import build_nec_scenario, load_scenario, scenario_to_dict, write_scenario


@pytest.fixture
def scenario_file(tmp_path):
    def make(sc=None, edit=None):
        d = scenario_to_dict(sc or market_scenario())
        if edit:
            edit(d)
        f = tmp_path / "scenario.json"
        f.write_text(json.dumps(d))
        return f
    return make


def test_help_from_console_script():
    out = subprocess.run([sys.executable, "-m", "rdmm.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("dispatch", "train", "rdmm", "nec"):
        assert cmd in out.stdout


def test_nec_writes_a_loadable_scenario(tmp_path, capsys):
    assert main(["nec", "--out", str(tmp_path / "nec")]) == 0
    assert load_scenario(tmp_path / "nec" / "scenario.json") == build_nec_scenario()
    assert sorted(p.name for p in (tmp_path / "nec").glob("prices_acc*.csv")) == \
        [f"prices_acc{n}.csv" for n in (1, 2, 3, 4)]


def test_invalid_scenario_exits_1_with_field_path(scenario_file, tmp_path, capsys):
    f = scenario_file(edit=lambda d: d["agents"][0].update(c=[1e-5]))
    assert main(["dispatch", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 1
    assert "agents[0].c" in capsys.readouterr().err
    assert main(["dispatch", "--scenario", str(tmp_path / "missing.json")]) == 1


@pytest.mark.parametrize("flag, value", [("--dt", "0.05"), ("--dt", "61"), ("--intervals", "0"),
                                         ("--intervals", "289"), ("--damping", "0"), ("--tol-k", "-1")])
def test_override_ranges(scenario_file, flag, value, capsys):
    with pytest.raises(SystemExit) as info:
        main(["rdmm", "--scenario", str(scenario_file()), flag, value])
    assert info.value.code == 1


def test_dispatch_with_oracle(scenario_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["dispatch", "--scenario", str(scenario_file()), "--out", str(out), "--oracle"]) == 0
    text = capsys.readouterr().out
    dev = float(re.search(r"deviation from QP oracle: (\S+)", text).group(1))
    assert dev <= 1e-6
    assert text.count("ACC ") == 2
    assert (out / "dispatch_acc1.csv").exists() and (out / "dispatch_acc2.csv").exists()


def test_dispatch_non_convergence_exits_2(scenario_file, tmp_path, capsys):
    f = scenario_file(edit=lambda d: d["negotiation"].update(k_max=3))
    assert main(["dispatch", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 2
    assert "balance residual" in capsys.readouterr().out


def test_infeasible_timetable_exits_2(scenario_file, tmp_path, capsys):
    f = scenario_file(edit=lambda d: d["trains"][0]["stations"][1].update(latest_departure_s=100.0))
    assert main(["train", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 2
    assert "leg 0" in capsys.readouterr().err


def test_train_min_work(scenario_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["train", "--scenario", str(scenario_file()), "--out", str(out), "--min-work"]) == 0
    assert "t1: total trip cost" in capsys.readouterr().out
    rows = (out / "trajectory_t1.csv").read_text().splitlines()
    assert rows[0] == "t_s,price_usd_per_mwh,x_m,v_mps,power_w"
    assert float(rows[-1].split(",")[2]) == pytest.approx(20_000.0, abs=1e-3)


def test_train_trace_cost(scenario_file, tmp_path, capsys):
    t = np.arange(0.0, 801.0, 2.0)
    lines = ["t_s,x_m,v_mps"] + [f"{float(ti)!r},{25.0 * float(ti)!r},25.0" for ti in t]
    (tmp_path / "trace.csv").write_text("\n".join(lines) + "\n")
    args = ["train", "--scenario", str(scenario_file()), "--out", str(tmp_path / "o"),
            "--trace", str(tmp_path / "trace.csv")]
    assert main(args) == 0
    cost = float(re.search(r"trace cost (\S+) \$", capsys.readouterr().out).group(1))
    spec = TrainSpec.acela()
    kwh = davis(spec.davis_a, spec.davis_b, spec.davis_c, 25.0) * 20_000.0 / 3.6e6
    assert cost == pytest.approx(0.05 * kwh, abs=0.006)


def test_rdmm_reports_are_byte_identical_across_jobs(scenario_file, tmp_path, capsys):
    f = scenario_file()
    assert main(["rdmm", "--scenario", str(f), "--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main(["rdmm", "--scenario", str(f), "--out", str(tmp_path / "b"), "--jobs", "4"]) == 0
    a = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert a == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert "summary.json" in a and "trajectory_t1.csv" in a
    for name in a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "reduction" in capsys.readouterr().out


def test_rdmm_non_convergence_still_writes_report(tmp_path, capsys):
    from rdmm.dispatch import StepSizes
    f = tmp_path / "s.json"
    write_scenario(market_scenario(1e-4, steps=StepSizes(j_max=2)), f)
    assert main(["rdmm", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 2
    assert "did not converge" in capsys.readouterr().out
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["converged"] is False
