import logging
import os
import tempfile
from pathlib import Path

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

METRIC_LABELS = {
    'logdp': 'logDP',
    'logeur': 'logEUR',
    'logrur': 'logRUR',
    'eel': 'EEL',
    'eed': 'EED',
    'ild': 'ILD',
    'entropy': 'Entropy',
    'ds': 'DS',
}


def _label(column):
    name, _, k = column.partition('@')
    label = METRIC_LABELS.get(name, name.capitalize())
    return f"{label}@{k}" if k else label


def create_frontier_chart(frontier, x_column, y_column, baselines=None, title=None):
    """
    Create an accuracy versus beyond-accuracy chart for a threshold sweep.

    Args:
        frontier (pd.DataFrame): One row per threshold with a `v` column
        x_column (str): Beyond-accuracy metric column, e.g. 'ild@10'
        y_column (str): Accuracy column, e.g. 'recall@10'
        baselines (pd.DataFrame): Optional rows with `method`, x and y columns
        title (str): Figure title

    Returns:
        plotly.graph_objects.Figure: Frontier chart, or None without data
    """
    if frontier is None or frontier.empty:
        return None

    try:
        fig = px.line(
            frontier.sort_values('v'),
            x=x_column,
            y=y_column,
            markers=True,
            hover_data=['v'],
            title=title or f"{_label(y_column)} vs {_label(x_column)}",
            labels={x_column: _label(x_column), y_column: _label(y_column)},
        )
        fig.update_traces(name='TREx sweep', showlegend=True)

        if baselines is not None and not baselines.empty:
            for row in baselines.itertuples(index=False):
                fig.add_trace(go.Scatter(
                    x=[row.x],
                    y=[row.y],
                    mode='markers',
                    marker=dict(size=11, symbol='diamond'),
                    name=row.method,
                ))
        return fig
    except Exception as e:
        logger.error(f"Error creating frontier chart for {x_column}: {e}")
        return None


def create_ablation_chart(table, metric_columns):
    """Grouped bars of accuracy per ablation variant."""
    if table.empty:
        return None
    long = table.melt(id_vars=['variant'], value_vars=list(metric_columns), var_name='metric', value_name='value')
    return px.bar(long, x='metric', y='value', color='variant', barmode='group', title='Repetition module ablation')


def baseline_points(aggregates, x_column, y_column):
    """Pick (method, x, y) rows out of a long aggregate table with method/metric/value columns."""
    if aggregates is None or aggregates.empty:
        return pd.DataFrame(columns=['method', 'x', 'y'])
    wide = aggregates.pivot_table(index='method', columns='metric', values='value', aggfunc='first')
    if x_column not in wide or y_column not in wide:
        return pd.DataFrame(columns=['method', 'x', 'y'])
    points = wide[[x_column, y_column]].rename(columns={x_column: 'x', y_column: 'y'})
    return points.reset_index()


def write_figure(fig, path):
    """Write a figure as standalone HTML, atomically. Returns the path or None."""
    if fig is None:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.stem}.", suffix='.html', dir=path.parent)
    os.close(fd)
    try:
        fig.write_html(tmp_name, include_plotlyjs='cdn', full_html=True)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Wrote chart {path}")
    return path
