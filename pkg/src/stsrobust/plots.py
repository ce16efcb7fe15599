"""Static SVG figures: joint states, inputs and CoM paths.

The nominal closed loop is drawn dashed, the Monte Carlo ensemble solid.
Output is deterministic: fixed hash salt and no date stamp.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import INPUT_NAMES, STATE_NAMES  # noqa: E402

_ENSEMBLE_STYLE = dict(color="tab:blue", lw=0.5, alpha=0.25)
_NOMINAL_STYLE = dict(color="black", lw=1.5, ls="--")
_REF_STYLE = dict(color="tab:red", lw=1.0, ls=":")
_LABELS = {
    "theta1": r"$\theta_1$ [deg]", "theta2": r"$\theta_2$ [deg]", "theta3": r"$\theta_3$ [deg]",
    "omega1": r"$\omega_1$ [deg/s]", "omega2": r"$\omega_2$ [deg/s]", "omega3": r"$\omega_3$ [deg/s]",
    "tau1": r"$\tau_1$ [N m]", "tau2": r"$\tau_2$ [N m]", "Fx": r"$F_x$ [N]", "Fy": r"$F_y$ [N]",
}


def _save(fig, path: Path) -> Path:
    with matplotlib.rc_context({"svg.hashsalt": "stsrobust", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _split_draws(ensemble):
    if len(ensemble) == 0:
        return []
    draws = ensemble[:, 0].astype(int)
    cuts = np.flatnonzero(np.diff(draws)) + 1
    return np.split(ensemble[:, 1:], cuts)


def _panel_grid(names, columns, nominal, runs, ref_t, ref_cols, path, degrees):
    fig, axes = plt.subplots(len(names) // 2, 2, figsize=(9, 2.2 * len(names) // 2), sharex=True)
    for ax, name, col, ref in zip(axes.T.ravel(), names, columns, ref_cols):
        scale = np.rad2deg(1.0) if degrees else 1.0
        for run in runs:
            ax.plot(run[:, 0], scale * run[:, col], **_ENSEMBLE_STYLE)
        ax.plot(ref_t, scale * ref, **_REF_STYLE)
        ax.plot(nominal[:, 0], scale * nominal[:, col], **_NOMINAL_STYLE)
        ax.set_ylabel(_LABELS.get(name, name))
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("t [s]")
    fig.tight_layout()
    return _save(fig, path)


def render_report(out: Path, traj, nominal: np.ndarray, ensemble: np.ndarray, summary: dict) -> list:
    """Write ``states.svg``, ``inputs.svg`` and ``com.svg`` into ``out``.

    ``nominal`` and each ensemble run are history tables whose columns are
    ``t``, six states, four inputs and six task outputs.
    """
    out = Path(out)
    runs = _split_draws(ensemble)
    paths = [
        _panel_grid(STATE_NAMES, range(1, 7), nominal, runs, traj.times,
                    traj.x_bar.T, out / "states.svg", degrees=True),
        _panel_grid(INPUT_NAMES, range(7, 11), nominal, runs, traj.times,
                    traj.u_bar.T, out / "inputs.svg", degrees=False),
    ]

    fig, (ax_path, ax_speed) = plt.subplots(1, 2, figsize=(10, 4))
    for run in runs:
        ax_path.plot(run[:, 12], run[:, 13], **_ENSEMBLE_STYLE)
        ax_speed.plot(run[:, 0], np.hypot(run[:, 15], run[:, 16]), **_ENSEMBLE_STYLE)
    ax_path.plot(nominal[:, 12], nominal[:, 13], **_NOMINAL_STYLE)
    ax_speed.plot(nominal[:, 0], np.hypot(nominal[:, 15], nominal[:, 16]), **_NOMINAL_STYLE)
    ax_path.set_xlabel(r"$x_{CoM}$ [m]")
    ax_path.set_ylabel(r"$y_{CoM}$ [m]")
    ax_path.set_aspect("equal", adjustable="datalim")
    ax_speed.set_xlabel("t [s]")
    ax_speed.set_ylabel("CoM speed [m/s]")
    ax_path.set_title(f"{summary.get('x_com_pass', '?')}/{summary.get('draws', '?')} within "
                      f"{1000 * summary.get('x_com_tol_m', float('nan')):.0f} mm")
    ax_speed.set_title(f"{summary.get('speed_pass', '?')}/{summary.get('draws', '?')} within "
                       f"{100 * summary.get('speed_tol_m_per_s', float('nan')):.0f} cm/s")
    for ax in (ax_path, ax_speed):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    paths.append(_save(fig, out / "com.svg"))
    return paths
