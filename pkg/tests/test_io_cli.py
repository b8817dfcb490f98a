import json

import pytest

from migplan import io
from migplan.cli import main
from migplan.cluster import ClusterState
from migplan.fixtures import data_path
from migplan.model import Deployment, GpuConfig

PROFILES = str(data_path("profiles.json"))
DAY = str(data_path("day_slos.json"))
NIGHT = str(data_path("night_slos.json"))


def test_dumps_is_canonical():
    assert io.dumps({"b": 0.1 + 0.2, "a": [1, 2.0]}) == '{\n  "a": [\n    1,\n    2.0\n  ],\n  "b": 0.3\n}\n'
    with pytest.raises(ValueError):
        io.dumps({"x": float("nan")})


def test_profiles_and_slos_round_trip():
    prof = io.profiles_from(io.read(PROFILES, "profiles"))
    assert io.profiles_from(json.loads(io.dumps(io.profiles_doc(prof)))).keys() == prof.keys()
    slos = io.slos_from(io.read(DAY, "slos"))
    assert io.slos_from(io.slos_doc(slos)) == sorted(slos, key=lambda s: s.service_id)


def test_deployment_and_cluster_round_trip():
    dep = Deployment((GpuConfig.build([(4, 0, "a", 8), (2, 4, "b", 1)]), GpuConfig.build([(7, 0, "a", 32)])))
    back = io.deployment_from(io.validate(json.loads(io.dumps(io.deployment_doc(dep))), "deployment"))
    assert back == dep
    st = ClusterState.from_deployment(dep, spare=1)
    doc = io.cluster_doc(st)
    assert io.cluster_doc(io.cluster_from(io.validate(doc, "cluster"))) == doc


def test_schema_error_names_file_and_path(tmp_path):
    bad = tmp_path / "slos.json"
    bad.write_text(json.dumps({"services": [{"id": "a", "model": "m", "required_rps": -1, "max_p90_ms": 10}]}))
    with pytest.raises(io.SchemaError, match=r"slos\.json: \$\.services\[0\]\.required_rps"):
        io.read(bad, "slos")
    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps({"services": [], "note": 1}))
    with pytest.raises(io.SchemaError, match="note"):
        io.read(extra, "slos")


def test_cli_schema_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["optimize", "--slos", str(bad), "--profiles", PROFILES]) == 2
    assert "broken.json" in capsys.readouterr().err


def test_cli_missing_flag_exits_2(capsys):
    assert main(["optimize", "--profiles", PROFILES]) == 2
    assert main(["optimize", "--slos", DAY, "--profiles", PROFILES, "--mode", "mcts"]) == 2
    assert "--seed" in capsys.readouterr().err


def test_cli_incompatible_universes_exit_1(tmp_path, capsys):
    dep = tmp_path / "dep.json"
    io.write(dep, io.deployment_doc(Deployment((GpuConfig.build([(7, 0, "svc-ghost", 32)]),))))
    code = main(["transition", "--from", str(dep), "--to", str(dep), "--old-slos", DAY, "--new-slos", NIGHT,
                 "--profiles", PROFILES])
    assert code == 1
    assert "svc-ghost" in capsys.readouterr().err


def test_cli_enumerate_partitions(capsys):
    assert main(["enumerate-partitions"]) == 0
    assert json.loads(capsys.readouterr().out)["count"] == 18


def test_cli_transition_then_simulate(tmp_path):
    day, night = tmp_path / "day.json", tmp_path / "night.json"
    assert main(["optimize", "--slos", DAY, "--profiles", PROFILES, "-o", str(day)]) == 0
    assert main(["optimize", "--slos", NIGHT, "--profiles", PROFILES, "-o", str(night)]) == 0
    plan, state, report = tmp_path / "plan.json", tmp_path / "state.json", tmp_path / "report.json"
    assert main(["transition", "--from", str(day), "--to", str(night), "--old-slos", DAY, "--new-slos", NIGHT,
                 "--profiles", PROFILES, "--state-out", str(state), "-o", str(plan)]) == 0
    assert main(["simulate", "--state", str(state), "--plan", str(plan), "--old-slos", DAY, "--new-slos", NIGHT,
                 "--profiles", PROFILES, "-o", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["safe"] and rep["violations"] == []
    manifest = json.loads((tmp_path / "plan.json.manifest.json").read_text())
    assert manifest["command"] == "transition" and DAY in manifest["inputs"]


def test_cli_simulate_unsafe_plan_exits_1(tmp_path):
    state, plan = tmp_path / "state.json", tmp_path / "plan.json"
    dep = Deployment((GpuConfig.build([(7, 0, "svc-bert", 32)]),))
    io.write(state, io.cluster_doc(ClusterState.from_deployment(dep)))
    io.write(plan, {"extra_gpu_budget": 0, "stages": [[
        {"kind": "delete", "gpu": "gpu-000", "size": 7, "slot": 0, "service": "svc-bert", "batch": 32}]]})
    slos = tmp_path / "slos.json"
    slos.write_text(json.dumps({"services": [
        {"id": "svc-bert", "model": "bert-base", "required_rps": 10, "max_p90_ms": 500}]}))
    args = ["simulate", "--state", str(state), "--plan", str(plan), "--old-slos", str(slos), "--new-slos", str(slos),
            "--profiles", PROFILES]
    assert main(args) == 1


@pytest.mark.parametrize("cmd", [
    ["optimize", "--slos", DAY, "--profiles", PROFILES, "--mode", "mcts", "--seed", "5", "--budget-iters", "20"],
    ["gen-workload", "--n", "6", "--seed", "9"],
])
def test_cli_seeded_output_is_byte_identical(tmp_path, cmd):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(cmd + ["-o", str(a)]) == 0
    assert main(cmd + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
