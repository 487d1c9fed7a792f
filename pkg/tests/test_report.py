import csv

import pytest
from PIL import Image

from wscswap.metrics import MetricReport
from wscswap.report import write_report


def reports():
    return {
        "base": MetricReport(0.5, 0.4, 0.6, psnr=20.0, num_sources=5),
        "ours": MetricReport(0.75, 0.5, 0.6, psnr=18.0, num_sources=5),
    }


def test_table_and_plots(tmp_path):
    files = write_report(reports(), tmp_path, baseline="base")
    names = [f.name for f in files]
    assert names == ["metrics.csv", "id_retrieval.png", "id_csim.png", "id_consis.png", "psnr.png"]
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert [r["method"] for r in rows] == ["base", "ours"]
    assert rows[1]["id_retrieval"] == "0.75" and rows[1]["pose_err"] == ""
    assert rows[1]["rel_id_retrieval"] == "+50.00%"
    assert rows[1]["rel_psnr"] == "-10.00%"
    assert rows[0]["rel_id_csim"] == "+0.00%"
    for f in files[1:]:
        with Image.open(f) as im:
            assert im.size[0] > 100


def test_lower_is_better_sign(tmp_path):
    r = {"a": MetricReport(0.5, 0.4, 0.6, pose_err=2.0, exp_err=4.0),
         "b": MetricReport(0.5, 0.4, 0.6, pose_err=1.0, exp_err=5.0)}
    write_report(r, tmp_path, baseline="a")
    row = list(csv.DictReader((tmp_path / "metrics.csv").open()))[1]
    assert row["rel_pose_err"] == "+50.00%" and row["rel_exp_err"] == "-25.00%"


def test_no_baseline_has_no_relative_columns(tmp_path):
    write_report(reports(), tmp_path)
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert "rel_" not in header


def test_rejects_non_reports(tmp_path):
    with pytest.raises(TypeError):
        write_report({"x": {"id_csim": 1.0}}, tmp_path)
