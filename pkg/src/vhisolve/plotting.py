"""PNG figures for the report path.  Files carry no timestamps or version strings."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path, dpi):
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata=_META)
    plt.close(fig)
    return path


def plot_trajectory(path, times, values, *, labels=None, reference=None, dpi=100):
    """Components of a trajectory against time, optionally with a reference curve."""
    values = np.atleast_2d(np.asarray(values))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for j in range(min(values.shape[1], 8)):
        ax.plot(times, values[:, j], lw=1.4, label=labels[j] if labels else f"u[{j}]")
    if reference is not None:
        ax.plot(times, reference, "k--", lw=1, label="reference")
    ax.set_xlabel("t")
    ax.set_ylabel("u")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, loc="best")
    return _save(fig, path, dpi)


def plot_sweeps(path, distances, *, rate=None, dpi=100):
    """Sweep-to-sweep history distances on a log scale."""
    d = np.asarray(distances, dtype=float)
    k = np.arange(1, d.size + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(k, np.where(d > 0, d, np.nan), "o-", ms=4)
    if rate is not None and d.size and d[0] > 0 and 0 < rate < 1:
        ax.semilogy(k, d[0] * rate ** (k - 1), "k:", lw=1, label=f"rate {rate:.3f}")
        ax.legend(fontsize=8)
    ax.set_xlabel("sweep")
    ax.set_ylabel("sup distance")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path, dpi)


def plot_contact(path, sol, *, dpi=100):
    """Final-step contact profile: normal velocity against the gap, and tractions."""
    asm = sol.assembly
    n = len(sol.times) - 1
    x = asm.mesh.nodes[asm.contact_nodes, 0]
    order = np.argsort(x)
    x = x[order]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(x, sol.normal_velocity(n)[order], "o-", ms=3, label="w_nu")
    if np.isfinite(asm.contact.gap):
        ax1.axhline(asm.contact.gap, color="k", ls="--", lw=1, label="gap")
    ax1.set_ylabel("normal velocity")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(x, sol.sigma_nu(n)[order], "o-", ms=3, label="sigma_nu")
    ax2.plot(x, sol.sigma_tau(n)[order], "s-", ms=3, label="sigma_tau")
    fb = asm.contact.friction
    ax2.axhline(fb, color="0.5", ls=":", lw=1)
    ax2.axhline(-fb, color="0.5", ls=":", lw=1)
    ax2.set_xlabel("x")
    ax2.set_ylabel("traction")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)
    return _save(fig, path, dpi)
