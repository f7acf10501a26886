"""PNG figures for experiment outputs (matplotlib, Agg backend)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import median_curve  # noqa: E402
from .problems import rosenbrock  # noqa: E402
from .smc import B_TRUE, Q_TRUE, SSMOracle  # noqa: E402

__all__ = ["plot_cost_curves", "plot_rosenbrock_paths", "plot_ssm_estimates", "render_experiment"]


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_cost_curves(traces, path, against="k", title=None):
    """Median noisy cost of each method against iteration or wall time.

    ``traces`` maps method name to a list of traces.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, group in traces.items():
        if not group:
            continue
        f = median_curve(group, "f")
        xs = np.arange(1, len(f) + 1) if against == "k" else median_curve(group, "elapsed_s")
        ax.plot(xs, f, label=method, lw=1.2)
    if np.all([np.all(t.f > 0) for g in traces.values() for t in g]):
        ax.set_yscale("log")
    ax.set_xlabel("iteration" if against == "k" else "wall time [s]")
    ax.set_ylabel("cost (median over runs)")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_rosenbrock_paths(traces, path, x0=None):
    """Iterate paths over the Rosenbrock contours, one line per run."""
    fig, ax = plt.subplots(figsize=(6, 5))
    g1, g2 = np.meshgrid(np.linspace(-2, 2, 300), np.linspace(-1, 3, 300))
    z = np.vectorize(lambda a, b: rosenbrock((a, b))[0])(g1, g2)
    ax.contour(g1, g2, np.log10(z + 1e-3), levels=25, cmap="Greys", linewidths=0.6)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (method, group) in enumerate(traces.items()):
        for j, trace in enumerate(group):
            if not trace.iterates:
                continue
            X = np.asarray(trace.iterates)
            if x0 is not None:
                X = np.vstack([x0, X])
            ax.plot(X[:, 0], X[:, 1], color=colors[i % len(colors)], lw=0.7, alpha=0.6,
                    label=method if j == 0 else None)
    ax.plot([1], [1], "k*", ms=10)
    ax.set_xlim(-2, 2)
    ax.set_ylim(-1, 3)
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    ax.legend()
    return _save(fig, path)


def plot_ssm_estimates(estimates, path):
    """Scatter of extracted (b, q) estimates with the true values marked."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(est[:, 0], est[:, 1], s=18, alpha=0.7, label="estimates")
    ax.axvline(B_TRUE, color="k", lw=0.8, ls="--")
    ax.axhline(Q_TRUE, color="k", lw=0.8, ls="--", label="true value")
    ax.set_xlabel("b")
    ax.set_ylabel("q")
    ax.legend()
    return _save(fig, path)


def render_experiment(result):
    """Write the standard figures for an :class:`~sqnls.harness.ExperimentResult`."""
    cfg = result.config
    out = Path(result.out)
    grouped = {m: [r.trace for r in rs] for m, rs in result.by_method().items() if rs}
    if not grouped:
        return []
    paths = [
        plot_cost_curves(grouped, out / "cost_vs_iteration.png", "k", cfg.problem),
        plot_cost_curves(grouped, out / "cost_vs_time.png", "time", cfg.problem),
    ]
    if cfg.problem == "rosenbrock":
        paths.append(plot_rosenbrock_paths(grouped, out / "rosenbrock_paths.png", cfg.x0))
    elif cfg.problem == "ssm":
        est = [SSMOracle.to_theta(r.estimate) for rs in result.by_method().values() for r in rs]
        paths.append(plot_ssm_estimates(est, out / "ssm_estimates.png"))
    return paths
