import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from pandas.errors import EmptyDataError  # noqa: E402

from .config import LOG_QUIET  # noqa: E402


def _log(msg: str):
    if not LOG_QUIET:
        print(f"[Plot] {msg}", flush=True)


def read_table(csv_path: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(csv_path)
    except EmptyDataError:
        raise ValueError(f"{csv_path} is empty") from None
    if df.empty:
        raise ValueError(f"{csv_path} has no rows")
    return df


def build_figure(df: pd.DataFrame, x: str, y: str, series: str = "policy", title: str | None = None):
    """One line per series value; repeated x values (seeds) are averaged."""
    missing = [c for c in (x, y, series) if c not in df.columns]
    if missing:
        raise ValueError(f"missing columns: {', '.join(missing)}")
    if df.empty:
        raise ValueError("nothing to plot")

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, group in sorted(df.groupby(series), key=lambda kv: str(kv[0])):
        points = group.groupby(x, sort=True)[y].mean()
        ax.plot(points.index.to_numpy(), points.to_numpy(), marker="o", label=str(name))
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def emit_plot(csv_path: str, x: str, y: str, out_path: str, series: str = "policy",
              title: str | None = None) -> str:
    """Static SVG line chart; identical input gives identical bytes."""
    fig = build_figure(read_table(csv_path), x, y, series, title)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    # fixed id salt and no date stamp keep the SVG byte-stable
    with matplotlib.rc_context({"svg.hashsalt": "codedsched", "svg.fonttype": "path"}):
        fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    _log(f"wrote {out_path}")
    return out_path
