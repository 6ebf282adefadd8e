"""Figure rendering for CLI reports (matplotlib, file output only)."""

import matplotlib

matplotlib.use("Agg")

import numpy as np
import matplotlib.pyplot as plt


def save_leakage_figure(report, path) -> None:
    """Per-direction emitted band levels against the leakage threshold."""
    directions = list(report.directions)
    fig, axes = plt.subplots(1, len(directions), figsize=(4.2 * len(directions), 3.4),
                             sharey=True, squeeze=False)
    for ax, direction in zip(axes[0], directions):
        rows = report.directions[direction]
        centers = [b.f_center_hz for b in rows]
        ax.semilogx(centers, [b.threshold_db_spl for b in rows], "k--", label="leakage threshold")
        ax.semilogx(centers, [b.source_db_spl for b in rows], color="0.6", label="source")
        colors = ["tab:green" if b.passed else "tab:red" for b in rows]
        ax.scatter(centers, [b.emitted_db_spl for b in rows], c=colors, s=18, label="emitted")
        ax.set_title(direction)
        ax.set_xlabel("frequency (Hz)")
        ax.grid(True, which="both", alpha=0.3)
    axes[0][0].set_ylabel("level (dB SPL)")
    axes[0][0].legend(fontsize=8)
    fig.suptitle(f"audible leakage audit: {'PASS' if report.passed else 'FAIL'}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_rank_figure(rows, path) -> None:
    """Planarity (lower is better) and on-axis level per layout."""
    names = [r.name for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.barh(names[::-1], [r.planarity_rad for r in rows][::-1], color="tab:blue")
    ax1.set_xlabel("planarity (RMS rad, lower better)")
    ax2.barh(names[::-1], [r.on_axis_spl_db for r in rows][::-1], color="tab:orange")
    ax2.set_xlabel("on-axis level (dB rel.)")
    for ax in (ax1, ax2):
        ax.grid(True, axis="x", alpha=0.3)
    fig.suptitle(f"layout ranking (best: {rows[0].name})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_rsa_figure(estimate, path) -> None:
    """Success rate vs distance with Wilson intervals and the 50 % line."""
    d = [r.distance_m for r in estimate.rows]
    rate = [r.rate for r in estimate.rows]
    lo = [r.rate - r.wilson_low for r in estimate.rows]
    hi = [r.wilson_high - r.rate for r in estimate.rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.errorbar(d, rate, yerr=[lo, hi], fmt="o-", capsize=3)
    ax.axhline(0.5, color="k", linestyle="--", linewidth=1)
    if estimate.rsa_m is not None:
        ax.axvline(estimate.rsa_m, color="tab:red", linestyle=":",
                   label=f"RSA = {estimate.rsa_m:g} m")
        ax.legend()
    ax.set_xlabel("distance (m)")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_field_figure(grid, path) -> None:
    """Scatter of field magnitude (dB) over the sample points."""
    mag_db = 20.0 * np.log10(np.maximum(np.abs(grid.pressure), 1e-300))
    fig, ax = plt.subplots(figsize=(5, 4.2))
    sc = ax.scatter(grid.points[:, 0] * 1e3, grid.points[:, 1] * 1e3, c=mag_db,
                    cmap="viridis", s=14)
    fig.colorbar(sc, ax=ax, label="|p| (dB rel.)")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_demod_figure(recovered, path, reference=None) -> None:
    """Recovered baseband (and the reference, when provided)."""
    fig, ax = plt.subplots(figsize=(6.5, 3))
    t = np.arange(recovered.samples.size) / recovered.sample_rate_hz
    show = slice(0, min(recovered.samples.size, 4 * recovered.sample_rate_hz // 1000))
    if reference is not None:
        ref = reference.samples
        scale = np.max(np.abs(ref)) or 1.0
        rec_scale = np.max(np.abs(recovered.samples)) or 1.0
        ax.plot(t[show] * 1e3, ref[show] / scale, color="0.6", label="reference")
        ax.plot(t[show] * 1e3, recovered.samples[show] / rec_scale, color="tab:blue",
                label="recovered (normalized)")
        ax.legend(fontsize=8)
    else:
        ax.plot(t[show] * 1e3, recovered.samples[show], color="tab:blue")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("amplitude")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_attack_figure(report, path) -> None:
    """Per-bearing command counts with the confirmed bearing highlighted."""
    angles = [ar.angle_deg for ar in report.angle_results]
    counts = [ar.commands_sent + len(ar.outcome.commands) for ar in report.angle_results]
    colors = ["tab:green" if ar.outcome.success else "tab:gray" for ar in report.angle_results]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar([str(a) for a in angles], counts, color=colors)
    ax.set_xlabel("bearing (deg)")
    ax.set_ylabel("commands sent")
    state = "confirmed" if report.success else ("aborted" if report.aborted else "no target")
    ax.set_title(f"attack session: {state}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
