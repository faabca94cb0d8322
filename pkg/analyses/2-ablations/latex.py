"""Function for converting ablation results to a latex table."""
import re
import pandas as pd
from src.retrieval import MetricsReport

RECALLS = ["r1", "r5", "r10", "r100"]


def summarize(data: pd.DataFrame) -> pd.DataFrame:
    """Average recalls over seeds, full model first, with ``sum_r``."""
    means = data.groupby("variant", sort=False)[RECALLS].mean()
    order = ["full", *[ v for v in means.index if v != "full" ]]
    means = means.loc[order]
    means["sum_r"] = [ MetricsReport(*row).sum_r for row in means[RECALLS].itertuples(index=False) ]
    return means

def to_latex(data: pd.DataFrame, **kwds) -> str:
    """Convert data frame with one row per (variant, seed) to latex table.

    The best value in every column is set in bold.
    """
    means = summarize(data)
    columns = {
        "variant": r"Variant",
        "r1":      r"R@1",
        "r5":      r"R@5",
        "r10":     r"R@10",
        "r100":    r"R@100",
        "sum_r":   r"SumR",
    }
    best = { columns[c]: f"{means[c].max():.1f}" for c in means.columns }

    N = data["seed"].nunique()
    kwds = {
        "float_format": "%.1f",
        "escape":       False,
        "index":        False,
        "position":     "h!",
        "label":        "tab:ablations",
        "caption":      rf"Ablation study on the synthetic corpus (mean over $N = {N}$ seeds)",
        **kwds
    }
    frame = means.reset_index().rename(columns=columns)
    latex = frame.to_latex(**kwds).strip().split("\n")

    # Bold the best value of every column in the body rows
    header = list(frame.columns)
    variants = set(frame["Variant"])
    rx = re.compile(r"\s*\\\\\s*$")
    for i, line in enumerate(latex):
        cells = [ c.strip() for c in rx.sub("", line).split("&") ]
        if len(cells) != len(header) or cells[0] not in variants:
            continue
        cells = [
            rf"\textbf{{{c}}}" if name in best and c == best[name] else c
            for name, c in zip(header, cells)
        ]
        latex[i] = " & ".join(cells).replace("_", r"\_") + r" \\"

    # Add font formatting
    pre = latex[:1] + [r"\sffamily", r"\footnotesize"]
    latex = "\n".join([*pre, *latex[1:]])
    return latex.strip()
