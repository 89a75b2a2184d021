"""
Ablation CSV and SVG charts
"""
import pytest

from protoconv.core.errors import IoError
from protoconv.core.models import AblationRow, EpochLog
from protoconv.eval.reports.generator import (
    ABLATION_FIELDS,
    bar_chart_svg,
    curves_svg,
    line_chart_svg,
    read_ablation_csv,
    read_epoch_log,
    write_ablation_csv,
)


@pytest.mark.unit
def test_ablation_csv(tmp_path):
    rows = [
        AblationRow(setting="S=3", fold="0", miou=0.41234567, fb_iou=0.6, n_seeds=2, fingerprint="abc"),
        AblationRow(setting="S=3", fold="mean", status="failed", n_seeds=2),
    ]
    path = tmp_path / "a.csv"
    write_ablation_csv(rows, path)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(ABLATION_FIELDS)
    back = read_ablation_csv(path)
    assert back[0].miou == pytest.approx(0.412346)
    assert back[1].miou is None and back[1].status == "failed"


@pytest.mark.unit
def test_missing_csv(tmp_path):
    with pytest.raises(IoError):
        read_ablation_csv(tmp_path / "nope.csv")


@pytest.mark.unit
def test_bar_chart_skips_missing_values():
    svg = bar_chart_svg(["a", "b"], {"fold 0": [0.5, None]}, "T & U")
    assert svg.count('fill="#1f77b4"') == 2  # one bar, one legend swatch
    assert "T &amp; U" in svg
    assert svg.rstrip().endswith("</svg>")


@pytest.mark.unit
def test_line_chart_single_point():
    svg = line_chart_svg([3.0], {"fold 0": [0.2]}, "one", x_label="S")
    assert "<polyline" in svg and "<circle" in svg


@pytest.mark.unit
def test_curves_from_epoch_log(tmp_path):
    path = tmp_path / "epochs.csv"
    path.write_text("epoch,train_loss,train_miou,val_miou\n0,0.9,0.2,0.1\n1,0.7,0.3,\n")
    epochs = read_epoch_log(path)
    assert epochs == [
        EpochLog(epoch=0, train_loss=0.9, train_miou=0.2, val_miou=0.1),
        EpochLog(epoch=1, train_loss=0.7, train_miou=0.3),
    ]
    svg = curves_svg(epochs)
    assert svg.count("<polyline") == 2
    assert "val mIoU" in svg
