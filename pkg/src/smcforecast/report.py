"""Figure rendering for the command line reports.

All figures are written as PNG files next to the delimited outputs they
illustrate. Rendering is forced onto the Agg backend and the PNG software
metadata stamp is suppressed, so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120
_SAVE_KW = {"dpi": _DPI, "metadata": {"Software": None}}


def _new_figure(width=8.0, height=4.5):
    return plt.figure(figsize=(width, height), dpi=_DPI)


def save_fan_chart(path, y_past, y_future, mean, lower, upper, title=None):
    """Lookback, truth, forecast mean, and 95% band for one window."""
    y_past = np.asarray(y_past, dtype=float)
    look = y_past.shape[0]
    horizon = np.asarray(mean).shape[0]
    t_past = np.arange(-look + 1, 1)
    t_fut = np.arange(1, horizon + 1)

    fig = _new_figure()
    ax = fig.add_subplot(111)
    ax.plot(t_past, y_past, color="0.3", lw=1.2, label="lookback")
    ax.plot(t_fut, y_future, color="k", lw=1.2, label="actual")
    ax.plot(t_fut, mean, color="tab:blue", lw=1.4, label="forecast mean")
    ax.fill_between(t_fut, lower, upper, color="tab:blue", alpha=0.25,
                    linewidth=0, label="95% band")
    ax.axvline(0.5, color="0.6", lw=0.8, ls=":")
    ax.set_xlabel("hours from forecast origin")
    ax.set_ylabel("normalized target")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_evaluation_figure(path, starts, rmse_values, picp_values, title=None):
    """Per-window point error and coverage across the evaluation set."""
    starts = np.asarray(starts)
    fig = _new_figure(8.0, 5.5)
    ax1 = fig.add_subplot(211)
    ax1.plot(starts, rmse_values, ".", ms=4, color="tab:red")
    ax1.axhline(float(np.mean(rmse_values)), color="tab:red", lw=1.0, ls="--")
    ax1.set_ylabel("window RMSE")
    if title:
        ax1.set_title(title)
    ax2 = fig.add_subplot(212, sharex=ax1)
    ax2.plot(starts, picp_values, ".", ms=4, color="tab:blue")
    ax2.axhline(float(np.mean(picp_values)), color="tab:blue", lw=1.0, ls="--")
    ax2.axhline(0.95, color="0.5", lw=0.8, ls=":")
    ax2.set_ylim(-0.02, 1.02)
    ax2.set_ylabel("window coverage")
    ax2.set_xlabel("window start row")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_training_curves(path, log_rows, loss_key, val_key, ylabel, title=None):
    """Per-epoch training progress from the loop's log rows."""
    epochs = [row["epoch"] for row in log_rows]
    fig = _new_figure()
    ax = fig.add_subplot(111)
    ax.plot(epochs, [row[loss_key] for row in log_rows], "-o", ms=3,
            label=loss_key)
    if val_key is not None:
        ax.plot(epochs, [row[val_key] for row in log_rows], "-s", ms=3,
                label=val_key)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_parameter_trace(path, trajectory, reference=None, title=None):
    """Online estimation trajectories, one line per tracked parameter."""
    trajectory = np.asarray(trajectory, dtype=float)
    fig = _new_figure()
    ax = fig.add_subplot(111)
    for j in range(trajectory.shape[1]):
        ax.plot(trajectory[:, j], lw=1.0)
    if reference is not None:
        for value in np.atleast_1d(reference):
            ax.axhline(float(value), color="0.4", lw=0.8, ls="--")
    ax.set_xlabel("observation index")
    ax.set_ylabel("parameter value")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
