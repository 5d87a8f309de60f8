"""Plot J and the gain over PST from a `simulate`/`reproduce-paper` sweep CSV."""
import sys

import matplotlib.pyplot as plt
import pandas as pd


def main(path, out):
    df = pd.read_csv(path)
    fig, (ax_j, ax_g) = plt.subplots(1, 2, figsize=(10, 4))
    for (policy, q), g in df.groupby(["policy", "q"]):
        g = g.sort_values("p")
        ax_j.errorbar(g.p, g.J_mean, yerr=g.J_stderr, marker="o", label=f"{policy}, q={q}")
        if policy != "pst":
            ax_g.errorbar(g.p, g.gain_pct, yerr=g.gain_stderr, marker="o", label=f"{policy}, q={q}")
    ax_j.set(xlabel="p", ylabel="J", title="average cost")
    ax_g.set(xlabel="p", ylabel="gain over PST [%]", title="performance gain")
    for ax in (ax_j, ax_g):
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit("usage: plot_sweep.py sweep.csv figure.png")
    main(sys.argv[1], sys.argv[2])
