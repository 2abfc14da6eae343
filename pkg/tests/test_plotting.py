"""Plot tests: CSV schema enforcement and machine-checkable SVG structure."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from resnextkit import plotting
from resnextkit.train import METRICS_HEADER, MetricsRow

SVG = "{http://www.w3.org/2000/svg}"


def make_rows(n: int, drops=(), seed: int = 0) -> list[MetricsRow]:
    rng = np.random.default_rng(seed)
    rows = []
    lr = 0.1
    for e in range(n):
        if e in drops:
            lr *= 0.1
        err = float(50.0 * np.exp(-e / max(n, 1)) + rng.uniform(0, 3))
        rows.append(MetricsRow(e, lr, 2.0 - e / n, 50.0 + e, 2.1 - e / n, err, 1.0))
    return rows


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(METRICS_HEADER + "\n")
        for r in rows:
            f.write(r.to_csv() + "\n")
    return str(path)


def elements(svg_path, tag, cls=None):
    root = ET.parse(svg_path).getroot()
    found = root.iter(SVG + tag)
    if cls is None:
        return list(found)
    return [e for e in found if e.get("class") == cls]


def test_read_metrics_round_trip(tmp_path):
    rows = make_rows(5, drops=(3,))
    path = write_csv(tmp_path / "m.csv", rows)
    assert plotting.read_metrics(path) == rows


def test_read_metrics_rejects_bad_files(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(plotting.PlotError, match="empty"):
        plotting.read_metrics(str(empty))
    bad_header = tmp_path / "bad.csv"
    bad_header.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(plotting.PlotError, match="header"):
        plotting.read_metrics(str(bad_header))
    no_rows = tmp_path / "none.csv"
    no_rows.write_text(METRICS_HEADER + "\n")
    with pytest.raises(plotting.PlotError, match="no metric rows"):
        plotting.read_metrics(str(no_rows))


def test_drop_epochs_found_from_lr_column():
    rows = make_rows(8, drops=(3, 6))
    assert plotting.drop_epochs(rows) == [3, 6]
    assert plotting.drop_epochs(make_rows(4)) == []


def test_error_vs_epoch_structure(tmp_path):
    out = tmp_path / "epoch.svg"
    series = [("8x64d", make_rows(10, drops=(4, 8), seed=1)),
              ("16x64d", make_rows(10, drops=(4, 8), seed=2))]
    plotting.plot_error_vs_epoch(series, str(out))
    assert len(elements(out, "polyline", "series")) == 2
    assert len(elements(out, "line", "lr-drop")) == 2
    texts = [t.text for t in elements(out, "text")]
    assert "lr drop @4" in texts and "lr drop @8" in texts
    assert "8x64d" in texts and "16x64d" in texts
    # each series polyline has one point per epoch
    for poly in elements(out, "polyline", "series"):
        assert len(poly.get("points").split()) == 10


def test_error_vs_epoch_rejects_empty():
    with pytest.raises(plotting.PlotError, match="no metric series"):
        plotting.plot_error_vs_epoch([], "unused.svg")
    with pytest.raises(plotting.PlotError, match="empty"):
        plotting.plot_error_vs_epoch([("x", [])], "unused.svg")


def test_error_vs_size_structure(tmp_path):
    out = tmp_path / "size.svg"
    points = [("8x64d", 34_426_698, 17.8), ("2x8d", 100_000, 31.0),
              ("8x32d", 12_917_578, 21.2)]
    plotting.plot_error_vs_size(points, str(out))
    assert len(elements(out, "polyline", "series")) == 3
    assert len(elements(out, "circle")) == 3
    assert len(elements(out, "path", "trend")) == 1
    xs = [float(c.get("cx")) for c in elements(out, "circle")]
    assert xs == sorted(xs)   # drawn in ascending parameter order
    texts = [t.text for t in elements(out, "text")]
    assert "2x8d" in texts


def test_error_vs_size_single_point(tmp_path):
    out = tmp_path / "one.svg"
    plotting.plot_error_vs_size([("only", 1000, 12.0)], str(out))
    assert len(elements(out, "polyline", "series")) == 1
    assert len(elements(out, "path", "trend")) == 0


def test_emit_plot_error_vs_epoch(tmp_path):
    p1 = write_csv(tmp_path / "run_a.csv", make_rows(6, drops=(3,)))
    p2 = write_csv(tmp_path / "run_b.csv", make_rows(6, drops=(3,), seed=9))
    out = tmp_path / "out.svg"
    plotting.emit_plot([p1, p2], "error-vs-epoch", str(out))
    assert len(elements(out, "polyline", "series")) == 2
    texts = [t.text for t in elements(out, "text")]
    assert "run_a" in texts   # default label is the file stem


def test_emit_plot_error_vs_size(tmp_path):
    p1 = write_csv(tmp_path / "small.csv", make_rows(4))
    p2 = write_csv(tmp_path / "large.csv", make_rows(4, seed=5))
    out = tmp_path / "size.svg"
    plotting.emit_plot([p1, p2], "error-vs-size", str(out),
                       labels=["s", "l"], param_counts=[1000, 2000])
    assert len(elements(out, "polyline", "series")) == 2
    with pytest.raises(plotting.PlotError, match="parameter count"):
        plotting.emit_plot([p1, p2], "error-vs-size", str(out))


def test_emit_plot_validation(tmp_path):
    p1 = write_csv(tmp_path / "m.csv", make_rows(3))
    with pytest.raises(plotting.PlotError, match="no metrics files"):
        plotting.emit_plot([], "error-vs-epoch", "unused.svg")
    with pytest.raises(plotting.PlotError, match="labels"):
        plotting.emit_plot([p1], "error-vs-epoch", "unused.svg", labels=["a", "b"])
    with pytest.raises(plotting.PlotError, match="unknown plot kind"):
        plotting.emit_plot([p1], "scatter", "unused.svg")
