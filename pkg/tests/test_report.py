from __future__ import annotations

import csv
import math
import xml.etree.ElementTree as ET

import pytest

from gface.report import ReportError, digest_csv, line_plot, write_report
from gface.train import HISTORY_COLUMNS, TrainHistory

NS = {"s": "http://www.w3.org/2000/svg"}


def history(n: int) -> TrainHistory:
    rows = []
    for t in range(n):
        row = {k: float(t + i) / 10 for i, k in enumerate(HISTORY_COLUMNS)}
        row.update(epoch=t, acc_all=0.2 + 0.1 * t, acc_old=0.9 - 0.05 * t, acc_new=0.1 * t)
        rows.append(row)
    return TrainHistory(rows)


def plot_area(svg: str) -> dict:
    area = ET.fromstring(svg).find(".//s:g[@id='plot-area']", NS)
    return {k[5:]: float(v) for k, v in area.attrib.items() if k.startswith("data-")}


def test_axes_span_the_data_exactly():
    h = history(5)
    svg = line_plot(h.column("epoch"), {k: h.column(k) for k in ("acc_all", "acc_old", "acc_new")},
                    "acc")
    area = plot_area(svg)
    values = [h.column(k) for k in ("acc_all", "acc_old", "acc_new")]
    assert (area["xmin"], area["xmax"]) == (0.0, 4.0)
    assert area["ymin"] == min(v.min() for v in values)
    assert area["ymax"] == max(v.max() for v in values)


def test_polyline_points_stay_inside_the_plot_area():
    h = history(6)
    svg = line_plot(h.column("epoch"), {"loss_total": h.column("loss_total")}, "loss")
    area = plot_area(svg)
    root = ET.fromstring(svg)
    pts = [tuple(map(float, p.split(",")))
           for line in root.iterfind(".//s:polyline", NS) for p in line.get("points").split()]
    xs, ys = zip(*pts)
    assert min(xs) == pytest.approx(area["left"]) and max(xs) == pytest.approx(area["right"])
    assert min(ys) == pytest.approx(area["top"]) and max(ys) == pytest.approx(area["bottom"])


def test_nan_breaks_the_line():
    svg = line_plot([0, 1, 2, 3], {"a": [1.0, math.nan, 2.0, 3.0]}, "gap")
    assert len(ET.fromstring(svg).findall(".//s:polyline", NS)) == 2


def test_flat_series_gets_unit_height():
    area = plot_area(line_plot([0, 1], {"a": [2.0, 2.0]}, "flat"))
    assert (area["ymin"], area["ymax"]) == (1.5, 2.5)


def test_digest_has_one_row_per_epoch():
    rows = list(csv.reader(digest_csv(history(5)).splitlines()))
    assert rows[0] == ["epoch", "loss_total", "acc_all", "acc_old", "acc_new"]
    assert len(rows) == 6


def test_write_report_outputs(tmp_path):
    history(5).save(tmp_path / "history.csv")
    paths = write_report(tmp_path / "history.csv", tmp_path / "out")
    assert sorted(p.name for p in paths) == ["accuracy.svg", "digest.csv", "losses.svg"]
    for p in paths:
        if p.suffix == ".svg":
            ET.parse(p)


def test_empty_history_writes_nothing(tmp_path):
    TrainHistory([]).save(tmp_path / "history.csv")
    with pytest.raises(ReportError, match="no epochs"):
        write_report(tmp_path / "history.csv", tmp_path / "out")
    assert not (tmp_path / "out").exists()


def test_missing_and_corrupt_history(tmp_path):
    with pytest.raises(ReportError, match="not found"):
        write_report(tmp_path / "nope.csv", tmp_path / "out")
    (tmp_path / "h.csv").write_text("garbage\n1\n")
    with pytest.raises(ReportError, match="corrupt"):
        write_report(tmp_path / "h.csv", tmp_path / "out")
