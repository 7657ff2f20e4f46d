"""Figures written next to the tabular reports."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no timestamps/software tags: identical inputs give identical files
_PNG_METADATA = {"Software": None}

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def plot_iterations(records, path):
    """Matches and registration cost against search radius, one line per bundle.

    ``records`` are report entries as produced by ``io.bundle_record``.
    """
    fig, (ax_n, ax_c) = plt.subplots(1, 2, figsize=(8, 3.2))
    for rec in records:
        log = rec["iteration_log"]
        if not log:
            continue
        radii = [it["radius_mm"] for it in log]
        ax_n.plot(radii, [it["matches"] for it in log], "o-", label=rec["name"])
        costs = [(r, it["cost_mm"]) for r, it in zip(radii, log) if it["cost_mm"] is not None]
        if costs:
            ax_c.plot(*zip(*costs), "o-", label=rec["name"])
    for ax in (ax_n, ax_c):
        ax.set_xlabel("search radius (mm)")
        ax.invert_xaxis()
    ax_n.set_ylabel("matched streamlines")
    ax_c.set_ylabel("registration cost (mm)")
    if records:
        ax_n.legend(fontsize=7)
    _save(fig, path)


def plot_comparison(reports, path):
    """Bar charts of Dice, adjacency and absolute volume difference per bundle."""
    names = [r.name for r in reports]
    panels = (("dice", "Dice"), ("adjacency", "adjacency (mm)"),
              ("volume_delta", "|volume difference| (mm$^3$)"))
    fig, axes = plt.subplots(1, 3, figsize=(9, 3))
    for ax, (attr, label) in zip(axes, panels):
        ax.bar(range(len(reports)), [getattr(r, attr) for r in reports], color="0.4")
        ax.set_xticks(range(len(reports)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylabel(label)
    axes[0].set_ylim(0, 1.05)
    _save(fig, path)
