import pandas as pd
import pytest

from codedsched.plots import build_figure, emit_plot


def _sweep_csv(path):
    rows = [{"policy": p, "value": v, "seed": s, "avg_queue": v * (2 if p == "greedy" else 1) + s * 0.01}
            for p in ("greedy", "onenode") for v in (0.1, 0.3, 0.5, 0.7, 0.9) for s in (1, 2)]
    pd.DataFrame(rows).to_csv(path, index=False)
    return path


def test_one_line_per_series_with_seed_average(tmp_path):
    df = pd.read_csv(_sweep_csv(tmp_path / "sweep.csv"))
    fig = build_figure(df, "value", "avg_queue")
    lines = fig.axes[0].get_lines()
    assert len(lines) == 2
    assert all(len(line.get_xdata()) == 5 for line in lines)
    greedy = next(line for line in lines if line.get_label() == "greedy")
    assert greedy.get_ydata()[0] == pytest.approx(0.2 + 0.015)


def test_emit_plot_is_byte_stable(tmp_path):
    csv = _sweep_csv(tmp_path / "sweep.csv")
    a = emit_plot(str(csv), "value", "avg_queue", str(tmp_path / "a.svg"))
    b = emit_plot(str(csv), "value", "avg_queue", str(tmp_path / "b.svg"))
    data = open(a, "rb").read()
    assert data.startswith(b"<?xml")
    assert data == open(b, "rb").read()


def test_empty_csv_is_rejected(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    out = tmp_path / "out.svg"
    with pytest.raises(ValueError):
        emit_plot(str(empty), "value", "avg_queue", str(out))
    header_only = tmp_path / "header.csv"
    header_only.write_text("policy,value,avg_queue\n")
    with pytest.raises(ValueError):
        emit_plot(str(header_only), "value", "avg_queue", str(out))
    assert not out.exists()


def test_missing_column(tmp_path):
    df = pd.read_csv(_sweep_csv(tmp_path / "sweep.csv"))
    with pytest.raises(ValueError, match="drop_rate"):
        build_figure(df, "value", "drop_rate")
