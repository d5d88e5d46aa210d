import numpy as np
import pandas as pd
import pytest

from Multiplexing.analytic import Protocol
from Multiplexing.experiments import fig4_rate_vs_distance, fig6_rate_vs_memories
from Multiplexing.transformations import (
    add_agreement_metrics,
    add_rate_ratios,
    expected_log_slope,
    fit_scaling_laws,
    prepare_rate_table,
    protocol_of,
    to_long_format,
)


@pytest.fixture
def small_table():
    return pd.DataFrame({
        "d_km": [10.0, 20.0, 30.0],
        "mbk_n2_analytic": [100.0, 50.0, 25.0],
        "mbk_n2_mc": [104.0, np.nan, 20.0],
        "mbk_n2_stderr": [2.0, np.nan, 0.0],
        "mps_p0.1_analytic": [200.0, 100.0, 50.0],
        "mps_p0.1_mc": [201.0, 99.0, 51.0],
        "mps_p0.1_stderr": [1.0, 1.0, 1.0],
    })


def test_protocol_of_label():
    assert protocol_of("mepl_n2") is Protocol.MEPL
    assert protocol_of("mps_p0.01") is Protocol.MPS
    assert protocol_of("mepl_tsg25us") is Protocol.MEPL


def test_agreement_metrics(small_table):
    table = add_agreement_metrics(small_table)
    assert table["mbk_n2_rel_error"].iloc[0] == pytest.approx(0.04)
    assert table["mbk_n2_z"].iloc[0] == pytest.approx(2.0)
    assert table["mbk_n2_within_5pct"].tolist() == [True, False, False]
    assert table["mbk_n2_within_3se"].tolist() == [True, False, False]
    # zero stderr leaves z undefined
    assert np.isnan(table["mbk_n2_z"].iloc[2])
    assert table["mps_p0.1_within_3se"].all()


def test_rate_ratios_against_first_curve(small_table):
    table = add_rate_ratios(small_table)
    assert table["mps_p0.1_vs_mbk_n2"].tolist() == pytest.approx([2.0, 2.0, 2.0])


def test_prepare_rate_table_groups_curve_columns(small_table):
    table = prepare_rate_table(small_table)
    assert table.columns[0] == "d_km"
    columns = list(table.columns)
    mbk = [i for i, col in enumerate(columns) if col.startswith("mbk_n2_")]
    assert mbk == list(range(mbk[0], mbk[0] + len(mbk)))


def test_long_format_of_a_distance_sweep():
    long = to_long_format(fig4_rate_vs_distance())
    assert len(long) == 80
    assert list(long.columns) == ["d_km", "label", "protocol", "analytic", "mc", "stderr"]
    assert set(long["protocol"]) == {"mbk", "mepl", "mps"}
    assert long["mc"].isna().all()


def test_long_format_of_a_memory_sweep():
    long = to_long_format(fig6_rate_vs_memories(t_sg_values=(200e-6, 50e-6)))
    assert list(long.columns)[0] == "n_qubits"
    # N from 2 to N_max(50 us) + 3 = 9
    assert len(long) == 2 * 8


def test_log_slopes_follow_fiber_attenuation(default_params):
    fits = fit_scaling_laws(fig4_rate_vs_distance(), default_params).set_index("label")
    assert fits.loc["mbk_n2", "slope_per_km"] == pytest.approx(-0.02, abs=1e-9)
    assert fits.loc["mps_p0.1", "slope_per_km"] == pytest.approx(-0.02, abs=1e-9)
    assert fits.loc["mepl_n2", "slope_per_km"] == pytest.approx(-0.01, abs=1e-9)
    assert (fits["r_squared"] > 0.999).all()
    assert (fits["slope_per_km"] - fits["expected_slope_per_km"]).abs().max() < 1e-9


def test_expected_slopes(default_params):
    assert expected_log_slope(Protocol.MEPL, default_params) == pytest.approx(-0.01)
    assert expected_log_slope(Protocol.MBK, default_params) == pytest.approx(-0.02)


def test_fit_skips_curves_without_values(default_params):
    table = fig4_rate_vs_distance()
    fits = fit_scaling_laws(table, default_params, column="mc")
    assert fits.empty
