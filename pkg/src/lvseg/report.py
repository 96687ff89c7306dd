"""Summary tables and SVG figures rebuilt from a per-case metrics table.

Everything here is a pure function of the rows of ``metrics.csv``; the SVG
writers emit elements in a fixed order with fixed number formatting so that
identical inputs give identical files.
"""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .stats import bland_altman, cov_of, linear_regression, tukey_hsd
from .training import MODEL_LABELS

REQUIRED_COLUMNS = ("run", "model", "ss_count", "dataset", "role", "case_id", "dsc",
                    "predicted_ml", "truth_ml")
BASELINE_MODEL = "gs_only"
MODEL_ORDER = ("gs_only", "ss_only", "gs_then_ss", "ss_then_gs")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ReportError(ValueError):
    pass


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ReportError(f"metrics file {path}: missing columns {missing}")
        rows = list(reader)
    return normalize_rows(rows)


def normalize_rows(rows) -> list[dict]:
    if not rows:
        raise ReportError("no data")
    out = []
    for r in rows:
        missing = [c for c in REQUIRED_COLUMNS if c not in r]
        if missing:
            raise ReportError(f"missing columns {missing}")
        r = dict(r)
        for k in ("dsc", "predicted_ml", "truth_ml"):
            r[k] = float(r[k])
        n = r["ss_count"]
        r["ss_count"] = None if n is None or n == "" else int(n)
        out.append(r)
    return out


def _model_key(model: str):
    return (MODEL_ORDER.index(model) if model in MODEL_ORDER else len(MODEL_ORDER), model)


def _run_key(run_rows):
    r = run_rows[0]
    return (_model_key(r["model"]), r.get("target", ""), r["ss_count"] or 0, r["run"])


def group_by(rows, *keys) -> "OrderedDict":
    out = OrderedDict()
    for r in rows:
        out.setdefault(tuple(r[k] for k in keys) if len(keys) > 1 else r[keys[0]], []).append(r)
    return out


def run_label(run_rows) -> str:
    r = run_rows[0]
    label = MODEL_LABELS.get(r["model"], r["model"])
    if r["ss_count"] is not None:
        tgt = r.get("target", "")
        label += f" ({tgt}, {r['ss_count']} SS)" if tgt else f" ({r['ss_count']} SS)"
    return label


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def _safe_cov(values) -> float:
    try:
        return cov_of(values)
    except ValueError:
        return math.nan


def summary_table(rows) -> list[dict]:
    """Mean DSC, CoV and LVV regression per (run, dataset)."""
    rows = normalize_rows(rows)
    out = []
    by_run = group_by(rows, "run")
    for run in sorted(by_run, key=lambda k: _run_key(by_run[k])):
        for dataset, rr in group_by(by_run[run], "dataset").items():
            d = [r["dsc"] for r in rr]
            entry = {"run": run, "model": rr[0]["model"], "label": run_label(rr), "dataset": dataset,
                     "n": len(rr), "dsc_mean": float(np.mean(d)), "dsc_cov": _safe_cov(d)}
            try:
                reg = linear_regression([r["truth_ml"] for r in rr], [r["predicted_ml"] for r in rr])
                entry.update(r_squared=reg.r_squared, intercept=reg.intercept, slope=reg.slope)
            except ValueError:
                entry.update(r_squared=math.nan, intercept=math.nan, slope=math.nan)
            out.append(entry)
    return out


def significance_vs_baseline(rows) -> dict:
    """Tukey p-value of each run against the GS-only run, per dataset.

    Returns ``{(run, dataset): p}``; empty when no baseline run exists.
    """
    rows = normalize_rows(rows)
    out = {}
    for dataset, rr in group_by(rows, "dataset").items():
        by_run = group_by(rr, "run")
        base = [k for k, v in by_run.items() if v[0]["model"] == BASELINE_MODEL]
        if not base or len(by_run) < 2:
            continue
        names = sorted(by_run, key=lambda k: _run_key(by_run[k]))
        groups = [[r["dsc"] for r in by_run[k]] for k in names]
        if any(len(g) < 2 for g in groups):
            continue
        res = tukey_hsd(groups, labels=tuple(names))
        for name in names:
            if name != base[0]:
                out[(name, dataset)] = res.p_value(name, base[0])
    return out


def star_for(p, alpha: float = 0.05) -> str:
    return "*" if p is not None and p < alpha else ""


def markdown_table(rows, alpha: float = 0.05) -> str:
    """Runs as rows, datasets as columns; cells are ``mean DSC (CoV)``.

    The best mean per dataset is bold; ``*`` marks runs whose DSC differs
    from the GS-only run on that dataset (Tukey p < ``alpha``).
    """
    summary = summary_table(rows)
    sig = significance_vs_baseline(rows)
    datasets = sorted({s["dataset"] for s in summary})
    runs = list(OrderedDict.fromkeys(s["run"] for s in summary))
    cell = {(s["run"], s["dataset"]): s for s in summary}
    labels = {s["run"]: s["label"] for s in summary}
    best = {d: max(cell[(r, d)]["dsc_mean"] for r in runs if (r, d) in cell) for d in datasets}
    lines = ["| Model | " + " | ".join(datasets) + " |", "|---|" + "---|" * len(datasets)]
    for run in runs:
        parts = []
        for d in datasets:
            s = cell.get((run, d))
            if s is None:
                parts.append("")
                continue
            txt = f"{s['dsc_mean']:.3f} ({_fmt(s['dsc_cov'])})"
            if s["dsc_mean"] == best[d]:
                txt = f"**{txt}**"
            # escaped so that a star after bold text stays a literal asterisk
            parts.append(txt + star_for(sig.get((run, d)), alpha).replace("*", "\\*"))
        lines.append(f"| {labels[run]} | " + " | ".join(parts) + " |")
    return "\n".join(lines) + "\n"


def regression_table(rows) -> str:
    rows = normalize_rows(rows)
    lines = ["| Model | n | R² | Intercept | Slope |", "|---|---|---|---|---|"]
    for model, rr in sorted(group_by(rows, "model").items(), key=lambda kv: _model_key(kv[0])):
        try:
            reg = linear_regression([r["truth_ml"] for r in rr], [r["predicted_ml"] for r in rr])
            vals = f"{reg.r_squared:.3f} | {reg.intercept:.3f} | {reg.slope:.3f}"
        except ValueError:
            vals = "nan | nan | nan"
        lines.append(f"| {MODEL_LABELS.get(model, model)} | {len(rr)} | {vals} |")
    return "\n".join(lines) + "\n"


def _fmt(v: float, digits: int = 3) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

class _Svg:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.items = []

    def add(self, tag, text=None, **attrs):
        a = " ".join(f'{k.rstrip("_").replace("_", "-")}="{escape(str(v))}"' for k, v in attrs.items())
        if text is None:
            self.items.append(f"<{tag} {a}/>")
        else:
            self.items.append(f"<{tag} {a}>{escape(text)}</{tag}>")

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">')
        return "\n".join([head, *self.items, "</svg>"]) + "\n"


def _n(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, svg, x0, y0, w, h, xlim, ylim, title, xlabel, ylabel):
        self.svg, self.x0, self.y0, self.w, self.h = svg, x0, y0, w, h
        self.xlim, self.ylim = _pad(xlim), _pad(ylim)
        svg.add("rect", x=_n(x0), y=_n(y0), width=_n(w), height=_n(h), fill="none", stroke="#000000",
                class_="frame")
        svg.add("text", title, x=_n(x0 + w / 2), y=_n(y0 - 8), text_anchor="middle", font_size="13")
        svg.add("text", xlabel, x=_n(x0 + w / 2), y=_n(y0 + h + 34), text_anchor="middle", font_size="11")
        svg.add("text", ylabel, x=_n(x0 - 42), y=_n(y0 + h / 2), text_anchor="middle", font_size="11",
                transform=f"rotate(-90 {_n(x0 - 42)} {_n(y0 + h / 2)})")
        for i in range(5):
            fx = self.xlim[0] + (self.xlim[1] - self.xlim[0]) * i / 4
            fy = self.ylim[0] + (self.ylim[1] - self.ylim[0]) * i / 4
            svg.add("text", f"{fx:.3g}", x=_n(self.px(fx)), y=_n(y0 + h + 16), text_anchor="middle",
                    font_size="10")
            svg.add("text", f"{fy:.3g}", x=_n(x0 - 6), y=_n(self.py(fy) + 3), text_anchor="end",
                    font_size="10")

    def px(self, x):
        return self.x0 + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w

    def py(self, y):
        return self.y0 + self.h - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h

    def line(self, xa, ya, xb, yb, cls, color, dash=None):
        attrs = dict(x1=_n(self.px(xa)), y1=_n(self.py(ya)), x2=_n(self.px(xb)), y2=_n(self.py(yb)),
                     stroke=color, class_=cls)
        if dash:
            attrs["stroke_dasharray"] = dash
        self.svg.add("line", **attrs)

    def polyline(self, xs, ys, cls, color):
        pts = " ".join(f"{_n(self.px(x))},{_n(self.py(y))}" for x, y in zip(xs, ys))
        self.svg.add("polyline", points=pts, fill="none", stroke=color, class_=cls)

    def point(self, x, y, cls, color):
        self.svg.add("circle", cx=_n(self.px(x)), cy=_n(self.py(y)), r="3", fill=color, class_=cls)


def _pad(lim):
    lo, hi = float(lim[0]), float(lim[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    span = hi - lo
    return lo - 0.05 * span, hi + 0.05 * span


def _legend(svg, x, y, entries):
    for i, (label, color) in enumerate(entries):
        svg.add("rect", x=_n(x), y=_n(y + 16 * i), width="10", height="10", fill=color, class_="legend")
        svg.add("text", label, x=_n(x + 14), y=_n(y + 16 * i + 9), font_size="10")


def _target_rows(rows):
    tgt = [r for r in rows if r["role"] == "target"]
    return tgt if tgt else rows


def ss_count_figure(rows) -> str:
    """Mean DSC and CoV on target-domain test cases against the number of SS masks."""
    rows = _target_rows(normalize_rows(rows))
    families = sorted(group_by(rows, "model"), key=_model_key)
    series = OrderedDict()
    for model in families:
        rr = [r for r in rows if r["model"] == model]
        pts = []
        for n, grp in sorted(group_by(rr, "ss_count").items(), key=lambda kv: -1 if kv[0] is None else kv[0]):
            # each run contributes its own mean and CoV; runs sharing an SS count are averaged
            per_run = group_by(grp, "run").values()
            means = [np.mean([r["dsc"] for r in g]) for g in per_run]
            covs = [_safe_cov([r["dsc"] for r in g]) for g in per_run]
            pts.append((n, float(np.mean(means)), float(np.nanmean(covs)) if not all(map(math.isnan, covs)) else math.nan))
        series[model] = pts
    counts = sorted({n for pts in series.values() for n, _, _ in pts if n is not None})
    xlim = (counts[0], counts[-1]) if counts else (0.0, 1.0)
    svg = _Svg(760, 330)
    dsc_vals = [m for pts in series.values() for _, m, _ in pts]
    cov_vals = [c for pts in series.values() for _, _, c in pts if not math.isnan(c)]
    panels = (("Mean DSC", 1, (min(dsc_vals), max(dsc_vals)), 70),
              ("CoV of DSC", 2, (min(cov_vals, default=0.0), max(cov_vals, default=1.0)), 420))
    for title, idx, ylim, x0 in panels:
        ax = _Axes(svg, x0, 40, 280, 230, xlim, ylim, title, "number of SS masks", title)
        for (model, pts), color in zip(series.items(), PALETTE):
            xs = [n for n, *_ in pts if n is not None]
            ys = [p[idx] for p in pts if p[0] is not None]
            if not xs:
                # models without SS masks are flat reference lines
                y = pts[0][idx]
                if not math.isnan(y):
                    ax.line(ax.xlim[0], y, ax.xlim[1], y, f"series {model}", color, dash="4 3")
                continue
            ax.polyline(xs, ys, f"series {model}", color)
            for x, y in zip(xs, ys):
                if not math.isnan(y):
                    ax.point(x, y, f"point {model}", color)
    _legend(svg, 630, 40, [(MODEL_LABELS.get(m, m), c) for m, c in zip(series, PALETTE)])
    return svg.render()


def regression_figure(rows) -> str:
    """Predicted against true LVV per model family, each with its least-squares line."""
    rows = normalize_rows(rows)
    models = sorted(group_by(rows, "model"), key=_model_key)
    allv = [r["truth_ml"] for r in rows] + [r["predicted_ml"] for r in rows]
    lim = (min(allv), max(allv))
    svg = _Svg(520, 380)
    ax = _Axes(svg, 70, 40, 300, 290, lim, lim, "Predicted vs true LVV", "true LVV (mL)", "predicted LVV (mL)")
    ax.line(lim[0], lim[0], lim[1], lim[1], "identity", "#999999", dash="2 2")
    for model, color in zip(models, PALETTE):
        rr = [r for r in rows if r["model"] == model]
        for r in rr:
            ax.point(r["truth_ml"], r["predicted_ml"], f"point {model}", color)
        try:
            reg = linear_regression([r["truth_ml"] for r in rr], [r["predicted_ml"] for r in rr])
        except ValueError:
            continue
        ax.line(lim[0], reg.intercept + reg.slope * lim[0], lim[1], reg.intercept + reg.slope * lim[1],
                f"fit {model}", color)
    _legend(svg, 390, 40, [(MODEL_LABELS.get(m, m), c) for m, c in zip(models, PALETTE)])
    return svg.render()


def bland_altman_figure(rows) -> str:
    """Difference against mean LVV per model family with bias and limits of agreement."""
    rows = normalize_rows(rows)
    models = sorted(group_by(rows, "model"), key=_model_key)
    results = OrderedDict()
    for model in models:
        rr = [r for r in rows if r["model"] == model]
        if len(rr) >= 2:
            results[model] = bland_altman([r["predicted_ml"] for r in rr], [r["truth_ml"] for r in rr])
    if not results:
        raise ReportError("no data: Bland-Altman needs at least 2 cases per model")
    means = [m for b in results.values() for m in b.means]
    ys = [d for b in results.values() for d in (*b.diffs, b.loa_low, b.loa_high)]
    svg = _Svg(520, 380)
    ax = _Axes(svg, 70, 40, 300, 290, (min(means), max(means)), (min(ys), max(ys)),
               "Bland-Altman", "mean of predicted and true LVV (mL)", "predicted - true (mL)")
    for (model, b), color in zip(results.items(), PALETTE):
        for m, d in zip(b.means, b.diffs):
            ax.point(m, d, f"point {model}", color)
        ax.line(ax.xlim[0], b.mean_diff, ax.xlim[1], b.mean_diff, f"bias {model}", color)
        ax.line(ax.xlim[0], b.loa_low, ax.xlim[1], b.loa_low, f"loa {model}", color, dash="5 3")
        ax.line(ax.xlim[0], b.loa_high, ax.xlim[1], b.loa_high, f"loa {model}", color, dash="5 3")
    _legend(svg, 390, 40, [(MODEL_LABELS.get(m, m), c) for m, c in zip(results, PALETTE)])
    return svg.render()


def write_report(rows, out_dir, alpha: float = 0.05) -> dict:
    """Write the figures and tables; returns the written paths by name."""
    rows = normalize_rows(rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "dsc_cov_vs_ss.svg": ss_count_figure(rows),
        "regression.svg": regression_figure(rows),
        "bland_altman.svg": bland_altman_figure(rows),
        "table_dsc.md": markdown_table(rows, alpha),
        "table_regression.md": regression_table(rows),
    }
    out = {}
    for name, text in files.items():
        (out_dir / name).write_text(text)
        out[name] = out_dir / name
    return out
