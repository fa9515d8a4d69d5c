"""
命令行测试：参数解析与合并优先级、退出码、结果表与 manifest 的写出
"""

import json

import pandas as pd
import pytest

import cli
from errors import UsageError, ValidationError
from result_store import ResultStore
from run_config import RunConfig, Subcommand


def _write_config(tmp_path, text):
    path = tmp_path / "run.conf"
    path.write_text(text, encoding="utf-8")
    return str(path)


# ---------------------------------------------------------------------------
# 解析与合并
# ---------------------------------------------------------------------------


def test_no_arguments_prints_usage(capsys):
    assert cli.main([]) == 64
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_subcommand_and_flag():
    assert cli.main(["frobnicate"]) == 64
    assert cli.main(["crit-limit", "--bogus", "1"]) == 64


def test_theta_out_of_range_is_validation_error():
    with pytest.raises(ValidationError) as info:
        cli.parse_config(["tube-prob", "--bigN", "8", "--theta", "1.6"], environ={})
    assert info.value.key == "theta"
    assert cli.main(["tube-prob", "--bigN", "8", "--theta", "1.6"]) == 2


def test_flag_overrides_config_file(tmp_path):
    conf = _write_config(tmp_path, "seed=1\nsamples=500\n")
    config = cli.parse_config(["mc", "--bigN", "8", "--theta", "0.7", "--config", conf, "--seed", "2"], environ={})
    assert config.seed == 2
    assert config.n_samples == 500


def test_config_file_used_when_flag_absent(tmp_path):
    conf = _write_config(tmp_path, "seed=1\nlambda=50.0\ntheta=0.7\n")
    config = cli.parse_config(["mc", "--config", conf], environ={})
    assert config.seed == 1
    assert config.lam == 50.0
    assert config.cutoff_args() == [{"lam": 50.0}]


def test_threads_from_environment():
    env = {"WAVECRIT_THREADS": "3"}
    assert cli.parse_config(["crit-limit"], environ=env).threads == 3
    assert cli.parse_config(["crit-limit", "--threads", "5"], environ=env).threads == 5


def test_config_file_beats_environment(tmp_path):
    conf = _write_config(tmp_path, "threads=2\n")
    config = cli.parse_config(["crit-limit", "--config", conf], environ={"WAVECRIT_THREADS": "6"})
    assert config.threads == 2


def test_unknown_config_key(tmp_path):
    conf = _write_config(tmp_path, "seed=1\ncolour=blue\n")
    with pytest.raises(UsageError) as info:
        cli.parse_config(["crit-limit", "--config", conf], environ={})
    assert info.value.key == "colour"


def test_missing_config_file(tmp_path):
    with pytest.raises(UsageError):
        cli.parse_config(["crit-limit", "--config", str(tmp_path / "absent.conf")], environ={})


@pytest.mark.parametrize(
    "text,subcommand,key",
    [
        ("seed=abc\n", ["mc", "--bigN", "8", "--theta", "0.7"], "seed"),
        ("theta=x\n", ["mc", "--bigN", "8"], "theta"),
        ("bigNs=25,x\n", ["ldp", "--theta", "0.5"], "bigNs"),
        ("refine=maybe\n", ["mc", "--bigN", "8", "--theta", "0.7"], "refine"),
    ],
)
def test_unparsable_config_value_is_usage_error(tmp_path, text, subcommand, key):
    conf = _write_config(tmp_path, text)
    with pytest.raises(UsageError) as info:
        cli.parse_config(subcommand + ["--config", conf], environ={})
    assert info.value.key == key
    assert cli.main(subcommand + ["--config", conf, "--output", str(tmp_path)]) == 64


def test_out_of_range_config_value_is_validation_error(tmp_path):
    conf = _write_config(tmp_path, "theta=1.6\n")
    with pytest.raises(ValidationError) as info:
        cli.parse_config(["tube-prob", "--bigN", "8", "--config", conf], environ={})
    assert info.value.key == "theta"


def test_flag_replaces_unparsable_config_value(tmp_path):
    conf = _write_config(tmp_path, "seed=abc\n")
    config = cli.parse_config(["mc", "--bigN", "8", "--theta", "0.7", "--config", conf, "--seed", "4"], environ={})
    assert config.seed == 4


def test_unparsable_thread_count_in_environment():
    with pytest.raises(UsageError) as info:
        cli.parse_config(["crit-limit"], environ={"WAVECRIT_THREADS": "many"})
    assert info.value.key == "threads"


def test_refine_flag_overrides_config_file(tmp_path):
    conf = _write_config(tmp_path, "refine=true\n")
    base = ["euler", "--bigN", "8", "--theta", "0.7", "--config", conf]
    assert cli.parse_config(base, environ={}).refine is True
    assert cli.parse_config(base + ["--no-refine"], environ={}).refine is False
    assert cli.parse_config(["euler", "--bigN", "8", "--theta", "0.7", "--refine"], environ={}).refine is True


def test_defaults_and_lists():
    config = cli.parse_config(["ldp", "--bigNs", "25,50", "--theta", "0.5"], environ={})
    assert config.subcommand == Subcommand.LDP
    assert config.cutoff_args() == [{"bigN": 25}, {"bigN": 50}]
    assert config.seed == 42
    assert cli.parse_config(["crit-limit"], environ={}).dim == 1


def test_subcommand_requirements():
    with pytest.raises(ValidationError):
        cli.parse_config(["crit-radius"], environ={})
    with pytest.raises(ValidationError):
        cli.parse_config(["mc", "--bigN", "8"], environ={})
    with pytest.raises(ValidationError):
        cli.parse_config(["tube-prob", "--manifold", "sphere2", "--bigN", "5", "--theta", "0.5"], environ={})
    with pytest.raises(ValidationError):
        cli.parse_config(["euler", "--manifold", "torus2", "--bigN", "5", "--theta", "0.5"], environ={})


def test_run_config_rejects_unknown_field():
    with pytest.raises(Exception):
        RunConfig(subcommand="crit-limit", colour="blue")


# ---------------------------------------------------------------------------
# 运行与输出
# ---------------------------------------------------------------------------


def test_crit_limit_writes_table_and_manifest(tmp_path):
    assert cli.main(["crit-limit", "--dim", "2", "--output", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "crit_limit.csv")
    assert list(table.columns) == ["d", "value", "argmin_u"]
    assert table["d"].tolist() == [2]
    manifest = json.loads((tmp_path / "crit_limit.manifest.json").read_text(encoding="utf-8"))
    assert manifest["subcommand"] == "crit-limit"
    assert manifest["parameters"]["dim"] == 2
    assert manifest["outputs"] == ["crit_limit.csv"]
    assert "artifact_version" in manifest


def test_crit_radius_columns(tmp_path):
    assert cli.main(["crit-radius", "--manifold", "torus1", "--bigN", "10", "--output", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "crit_radius.csv")
    assert list(table.columns) == ["lambda", "r_lambda", "regime", "argmin_dg", "limit_d", "rel_err"]
    assert table["regime"].iloc[0] in ("NearDiagonal", "Bulk", "FarField")


def test_tube_prob_json_output(tmp_path):
    code = cli.main(["tube-prob", "--bigN", "8", "--theta", "0.7", "--format", "json", "--output", str(tmp_path)])
    assert code == 0
    records = json.loads((tmp_path / "tube_prob.json").read_text(encoding="utf-8"))
    assert records[0]["k_lambda"] == 17
    assert records[0]["p_exact"] == pytest.approx(6.69e-3, rel=0.01)


def test_mc_output_is_reproducible(tmp_path):
    args = ["mc", "--bigN", "8", "--theta", "0.7", "--samples", "2000", "--grid-points", "256"]
    assert cli.main(args + ["--output", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--threads", "3", "--output", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "mc.csv").read_bytes()
    second = (tmp_path / "b" / "mc.csv").read_bytes()
    assert first == second


def test_resource_error_exit_code(tmp_path):
    out = tmp_path / "weyl"
    assert cli.main(["weyl-check", "--manifold", "torus3", "--bigN", "200", "--output", str(out)]) == 3
    assert not (out / "weyl_check.csv").exists()


def test_validity_manifest_records_radius(tmp_path):
    args = ["validity", "--bigN", "8", "--thetas", "0.3,0.5", "--samples", "1000", "--grid-points", "256"]
    assert cli.main(args + ["--output", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "validity.manifest.json").read_text(encoding="utf-8"))
    assert "rho_hat" in manifest["results"]
    table = pd.read_csv(tmp_path / "validity.csv")
    assert table["theta"].tolist() == [0.3, 0.5]


def test_result_store_roundtrip(tmp_path):
    store = ResultStore(str(tmp_path), "json")
    table, manifest = store.save_run("demo", [{"a": 1, "b": float("inf")}], ["a", "b"], "crit-limit", {"dim": 1})
    assert table.name == "demo.json"
    assert store.load_manifest("demo")["outputs"] == ["demo.json"]
    assert store.load_manifest("demo")["status"] == "ok"
    table = store.load_table("demo")
    assert table["a"].tolist() == [1]
    assert not list(tmp_path.glob("*.tmp"))
    assert store.load_manifest("missing") == {}


def test_failed_manifest_leaves_no_table(tmp_path):
    store = ResultStore(str(tmp_path), "csv")
    with pytest.raises(TypeError):
        store.save_run("demo", [{"a": 1}], ["a"], "crit-limit", {"dim": 1}, extra={"bad": object()})
    assert list(tmp_path.glob("*")) == []


def test_failed_table_leaves_no_manifest(tmp_path, monkeypatch):
    store = ResultStore(str(tmp_path), "csv")

    def broken_to_csv(self, *args, **kwargs):
        raise OSError("磁盘已满")

    monkeypatch.setattr(pd.DataFrame, "to_csv", broken_to_csv)
    with pytest.raises(OSError):
        store.save_run("demo", [{"a": 1}], ["a"], "crit-limit", {"dim": 1})
    assert list(tmp_path.glob("*")) == []
