"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "svg.hashsalt": "idfsim",
}


def _save(fig, path):
    fig.tight_layout()
    # No timestamps in the metadata so reruns give identical files.
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_cr_frequencies(symbols_by_label, L, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, sym in symbols_by_label.items():
            freq = np.bincount(sym, minlength=L + 1)[1:] / len(sym)
            ax.plot(np.arange(1, L + 1), freq * L, lw=0.8, label=label)
        ax.axhline(1.0, color="k", lw=0.8, ls="--")
        ax.set_xlabel("cell l")
        ax.set_ylabel("L x empirical frequency")
        ax.set_title(f"common randomness cells, L={L}")
        ax.legend()
        return _save(fig, path)


def plot_type2(rows, lam, path):
    frac = np.array([r["collision_fraction"] for r in rows])
    est = np.array([r["estimate"].p_hat for r in rows])
    low = np.array([r["estimate"].ci_low for r in rows])
    high = np.array([r["estimate"].ci_high for r in rows])
    ceil = np.array([r["ceiling"] for r in rows])
    order = np.argsort(frac)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(frac, est, yerr=[est - low, high - est], fmt="o", ms=2, lw=0.4,
                    alpha=0.5, label="false-accept estimate")
        ax.plot(frac[order], ceil[order], "r-", lw=1, label="collision fraction + eps")
        ax.axhline(lam, color="k", ls="--", lw=0.8, label="lambda")
        ax.set_xlabel("collision fraction |F_i n F_j| / L")
        ax.set_ylabel("type II error")
        ax.legend()
        return _save(fig, path)


def plot_type1(rows, lam, path):
    est = np.array([r["estimate"].p_hat for r in rows])
    high = np.array([r["estimate"].ci_high for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        idx = np.arange(len(rows))
        ax.bar(idx, est, color="C0", label="estimate")
        ax.plot(idx, high, "k_", ms=6, label="upper 95%")
        ax.axhline(lam, color="r", ls="--", lw=0.8, label="lambda")
        ax.set_xlabel("identity tuple")
        ax.set_ylabel("type I error")
        ax.legend()
        return _save(fig, path)


def plot_bounds(rows, path):
    valid = [r for r in rows if r.get("valid")]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        groups = sorted({(r["lambda"], r["M"]) for r in valid})
        for i, (lam, M) in enumerate(groups):
            pts = sorted((r for r in valid if (r["lambda"], r["M"]) == (lam, M)), key=lambda r: r["L"])
            L = [r["L"] for r in pts]
            c = f"C{i % 10}"
            ax.plot(L, [r["log2_exact_tail"] for r in pts], "o-", color=c, ms=3,
                    label=f"lam={lam}, M={M}")
            ax.plot(L, [r["log2_chernoff"] for r in pts], "--", color=c, lw=0.8)
            ax.plot(L, [r["log2_corollary"] for r in pts], ":", color=c, lw=0.8)
        ax.set_xlabel("L")
        ax.set_ylabel("log2 probability (solid exact, dashed Chernoff, dotted weakened)")
        if groups:
            ax.legend(ncol=2)
        return _save(fig, path)


def plot_rates(rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        kinds = sorted({r["kind"] for r in rows if r.get("rate") is not None})
        for kind in kinds:
            pts = sorted((r for r in rows if r["kind"] == kind and r.get("rate") is not None),
                         key=lambda r: r["log2_N"])
            ax.plot([r["log2_N"] for r in pts], [r["rate"] for r in pts], "o-", ms=3, label=kind)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("log2 N")
        ax.set_ylabel("rate")
        if kinds:
            ax.legend()
        return _save(fig, path)


def plot_collisions(fractions, M, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(fractions, bins=60, color="C0", alpha=0.8)
        ax.axvline(1.0 / M, color="r", ls="--", lw=0.8, label="1/M")
        ax.set_xlabel("collision fraction")
        ax.set_ylabel("pairs")
        ax.legend()
        return _save(fig, path)


def plot_calibration(history, targets, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        K = len(targets)
        for k in range(K):
            pts = sorted({(h["reps"][k], h["ci_high"][k]) for h in history})
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "o", ms=3, label=f"sender {k + 1}")
            ax.axhline(targets[k], color=f"C{k}", ls="--", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("repetitions")
        ax.set_ylabel("upper 95% symbol error")
        ax.legend()
        return _save(fig, path)
