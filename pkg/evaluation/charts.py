from pathlib import Path

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots
from sklearn.decomposition import PCA

from config.constants import MOTION_COLUMNS, TARGET_FPS

GT_COLOR = "#06B6D4"
PRED_COLOR = "#E879F9"


def _style(fig, height):
    fig.update_layout(
        height=height,
        template="plotly_dark",
        paper_bgcolor="rgba(15, 23, 42, 0.5)",
        plot_bgcolor="rgba(15, 23, 42, 0.8)",
        hovermode="x unified",
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
        font=dict(color="#E2E8F0"),
        margin=dict(l=70, r=70, t=60, b=60),
    )
    return fig


def create_trajectory_chart(pred: np.ndarray, gt: np.ndarray, title: str = "", start_frame: int = 0):
    """Ground truth vs generated motion, one row per channel, time in seconds."""
    t = (start_frame + np.arange(len(pred))) / TARGET_FPS
    fig = make_subplots(rows=len(MOTION_COLUMNS), cols=1, shared_xaxes=True,
                        subplot_titles=MOTION_COLUMNS, vertical_spacing=0.02)

    for c, name in enumerate(MOTION_COLUMNS):
        first = c == 0
        fig.add_trace(go.Scatter(
            x=t, y=gt[:, c], mode="lines", name="Ground truth", legendgroup="gt", showlegend=first,
            line=dict(color=GT_COLOR, width=2),
            hovertemplate="%{y:.2f}°<extra>GT " + name + "</extra>",
        ), row=c + 1, col=1)
        fig.add_trace(go.Scatter(
            x=t, y=pred[:, c], mode="lines", name="Generated", legendgroup="pred", showlegend=first,
            line=dict(color=PRED_COLOR, width=2, dash="dash"),
            hovertemplate="%{y:.2f}°<extra>pred " + name + "</extra>",
        ), row=c + 1, col=1)

    fig.update_xaxes(title_text="Time (s)", row=len(MOTION_COLUMNS), col=1)
    fig.update_layout(title=title)
    return _style(fig, height=180 * len(MOTION_COLUMNS))


def create_embedding_scatter(embeddings: np.ndarray, labels, kinds=None, title: str = "Style embeddings (PCA)"):
    """2-D PCA projection of style embeddings coloured by label; ``kinds`` sets the marker symbol."""
    xy = PCA(n_components=2).fit_transform(embeddings)
    df = pd.DataFrame({"pc1": xy[:, 0], "pc2": xy[:, 1], "label": [str(l) for l in labels]})
    if kinds is not None:
        df["kind"] = list(kinds)
    fig = px.scatter(df, x="pc1", y="pc2", color="label", symbol="kind" if kinds is not None else None, title=title)
    fig.update_traces(marker=dict(size=8, opacity=0.8))
    return _style(fig, height=600)


def write_chart(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(path, include_plotlyjs="cdn")
    return path
