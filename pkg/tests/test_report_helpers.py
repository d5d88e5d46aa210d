import json

import numpy as np
import pandas as pd
import pytest

from Multiplexing.analytic import Protocol, rate_for
from Multiplexing.experiments import McSettings, fig4_rate_vs_distance, simulate_point
from Multiplexing.protocols import ProtocolConfig
from Multiplexing.report_helpers import (
    OutputError,
    config_hash,
    describe_column,
    per_replication_table,
    rate_table,
    summarize_agreement,
    trace_table,
    write_csv,
    write_json,
    write_table,
    write_workbook,
)


@pytest.fixture
def agreement_table():
    return pd.DataFrame({
        "d_km": [10.0, 20.0, 30.0],
        "mbk_n2_analytic": [100.0, 50.0, 25.0],
        "mbk_n2_mc": [104.0, np.nan, 20.0],
        "mbk_n2_stderr": [2.0, np.nan, 0.0],
    })


def test_describe_column():
    assert describe_column("d_km") == "node separation (km)"
    assert "standard error" in describe_column("mepl_n2_stderr")
    assert "local BSMs" in describe_column("n_p0.1")
    assert describe_column("something_else") == ""


def test_config_hash_is_stable():
    assert config_hash("seed = 1\n") == config_hash("seed = 1\n")
    assert config_hash("seed = 1\n") != config_hash("seed = 2\n")
    assert len(config_hash("")) == 64


def test_summarize_agreement(agreement_table):
    summary = summarize_agreement(agreement_table).set_index("label")
    row = summary.loc["mbk_n2"]
    assert row["protocol"] == "mbk"
    assert row["points"] == 3
    assert row["mc_points"] == 2
    assert row["worst_rel_error"] == pytest.approx(0.2)
    assert row["worst_abs_z"] == pytest.approx(2.0)
    assert row["within_5pct"] == 1
    assert row["within_3se"] == 1


def test_rate_table(default_params, geom_50):
    configs = [ProtocolConfig(Protocol.MBK), ProtocolConfig(Protocol.MPS, p_em=0.1)]
    rates = [rate_for(default_params, geom_50, config) for config in configs]
    table = rate_table(rates, [config.label for config in configs])
    assert table["label"].tolist() == ["mbk_n2", "mps_p0.1"]
    assert table["rate_hz"].tolist() == pytest.approx([3.24, 20.25])


def test_per_replication_and_trace_tables(default_params, geom_50):
    mc = McSettings(replications=3, successes=20, seed=4, workers=1)
    estimate = simulate_point(default_params, geom_50, ProtocolConfig(Protocol.MPS, p_em=0.1), mc, trace=True)

    per_rep = per_replication_table(estimate)
    assert per_rep["replication"].tolist() == [0, 1, 2]
    assert (per_rep["successes"] == 20).all()
    assert {"seed", "stream_id", "digest", "rounds", "joint_successes"} <= set(per_rep.columns)

    trace = trace_table(estimate.runs[1].trace, replication=1)
    assert list(trace.columns) == ["time", "node", "event_kind", "detail", "replication"]
    assert (trace["event_kind"] == "success").sum() == 20


def test_write_csv_with_header_and_schema(tmp_path):
    table = fig4_rate_vs_distance(distances_km=[20, 60])
    path = write_csv(table, tmp_path / "out" / "fig4.csv", ["seed: 7", "config sha256: abc"])

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[:2] == ["# seed: 7", "# config sha256: abc"]

    back = pd.read_csv(path, comment="#")
    assert len(back) == 2
    assert back["mepl_n2_analytic"].tolist() == pytest.approx(table["mepl_n2_analytic"].tolist(), rel=1e-9)

    schema = json.loads((tmp_path / "out" / "fig4.schema.json").read_text(encoding="utf-8"))
    described = {column["name"]: column["description"] for column in schema["columns"]}
    assert described["mepl_n2_analytic"] == "closed-form rate (Hz)"


def test_write_json_keeps_provenance_and_attrs(tmp_path):
    table = fig4_rate_vs_distance(distances_km=[20, 60])
    path = write_json(table, tmp_path / "fig4.json", {"seed": np.int64(3), "command": "sweep"})

    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["provenance"] == {"seed": 3, "command": "sweep"}
    assert payload["attrs"]["figure"] == 4
    assert len(payload["rows"]) == 2


def test_write_workbook_one_sheet_per_table(tmp_path):
    tables = {"fig4": fig4_rate_vs_distance(distances_km=[20, 60]), "notes": pd.DataFrame({"a": [1]})}
    path = write_workbook(tables, tmp_path / "fig4.xlsx")

    sheets = pd.read_excel(path, sheet_name=None)
    assert set(sheets) == {"fig4", "notes"}
    assert len(sheets["fig4"]) == 2


def test_unknown_format_is_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_table(pd.DataFrame({"a": [1]}), tmp_path / "x.parquet", "parquet")


def test_unwritable_target_is_an_output_error(tmp_path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("", encoding="utf-8")
    with pytest.raises(OutputError):
        write_csv(pd.DataFrame({"a": [1]}), blocker / "out.csv")
