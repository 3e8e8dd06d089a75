"""Report tables (fold-level, pooled, variable importance), JSON and text rendering."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

FOLD_COLUMNS = ("Exposure", "Effect", "SE", "Lower CI", "Upper CI", "Modifier", "Fold")
POOLED_COLUMNS = ("Condition", "Psi", "Variance", "SE", "Lower CI", "Upper CI", "P-value")
VIM_COLUMNS = ("Exposure", "Psi", "SE", "Lower CI", "Upper CI", "P-value")


def _clean(obj):
    """NaN/inf -> None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def fold_rows(result) -> list[dict]:
    rows = []
    for f in result.folds:
        if f.rule is None or f.effect_v is None:
            continue
        for est, label in ((f.effect_v, str(f.rule)), (f.effect_vc, f.rule.complement_str())):
            lo, hi = est.ci
            rows.append({"Exposure": f.exposure, "Effect": est.psi, "SE": est.se, "Lower CI": lo, "Upper CI": hi,
                         "Modifier": label, "Fold": f.fold})
    return rows


def pooled_rows(pooled) -> list[dict]:
    rows = []
    for key, label in (("v", "v"), ("vc", "v^c")):
        est = pooled.per_region.get(key)
        if est is None:
            continue
        lo, hi = est.ci
        rows.append({"Condition": label, "Psi": est.psi, "Variance": est.variance, "SE": est.se, "Lower CI": lo,
                     "Upper CI": hi, "P-value": est.p_value})
    return rows


def vim_rows(pooled) -> list[dict]:
    rows = []
    for name, est in pooled.variable_importance.items():
        lo, hi = est.ci
        rows.append({"Exposure": name, "Psi": est.psi, "SE": est.se, "Lower CI": lo, "Upper CI": hi,
                     "P-value": est.p_value})
    return rows


def analysis_document(result) -> dict:
    pooled = result.pooled
    return {
        "kind": "analysis",
        "n": result.n,
        "dropped_rows": result.dropped,
        "exposures": list(result.exposure_names),
        "shift": {"units": "raw", "deltas": dict(result.shift.per_exposure_delta)},
        "config": result.config.to_dict(),
        "seed": result.config.seed,
        "folds": [f.to_dict() for f in result.folds],
        "fold_table": fold_rows(result),
        "pooled_table": pooled_rows(pooled),
        "variable_importance_table": vim_rows(pooled),
        "pooled": pooled.to_dict(),
    }


def write_csv(path, rows, columns) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _csv_value(row.get(k)) for k in columns})
    Path(path).write_text(buf.getvalue())


def _csv_value(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return "" if v is None else v


def format_p(p) -> str:
    if p is None:
        return "NA"
    if p < 0.001:
        return "<0.001"
    return "%.3f" % p


def _fmt(col, v) -> str:
    if v is None:
        return "NA"
    if col == "P-value":
        return format_p(v)
    if isinstance(v, float):
        return "%.7f" % v if col in ("Variance",) else "%.4f" % v
    return str(v)


def render_table(rows, columns, title=None) -> str:
    cells = [[_fmt(c, r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    out = []
    if title:
        out.append(title)
    out.append("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip())
    out.append("  ".join("-" * w for w in widths))
    for row in cells:
        out.append("  ".join(v.rjust(w) if i and v[:1] in "-0123456789<N" else v.ljust(w)
                             for i, (v, w) in enumerate(zip(row, widths))).rstrip())
    return "\n".join(out)


def render_document(doc: dict) -> str:
    """Plain-text tables for an analysis or simulation JSON document."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("not a report document")
    if doc["kind"] == "simulation":
        rows = doc.get("metrics") or []
        if not rows:
            return "no results\n"
        cols = ("dgp", "n", "region", "bias", "variance", "mse", "coverage", "accuracy", "precision", "recall",
                "f1", "failed_reps")
        return render_table(rows, cols, "Simulation metrics") + "\n"
    if doc["kind"] != "analysis":
        raise ValueError("unknown report kind %r" % doc["kind"])
    parts = []
    if not doc.get("folds"):
        return "no results\n"
    fold = doc.get("fold_table") or []
    if fold:
        parts.append(render_table(fold, FOLD_COLUMNS, "Effect modification by fold"))
    else:
        parts.append("No significant effect modifier found in any fold.")
    pooled = doc.get("pooled_table") or []
    if pooled:
        parts.append(render_table(pooled, POOLED_COLUMNS, "Pooled region estimates"))
        rule = (doc.get("pooled") or {}).get("modal_rule")
        agree = (doc.get("pooled") or {}).get("agreement")
        if rule:
            parts.append("Modal rule: %s (agreement %.2f)" % (rule["text"], agree or 0.0))
        diff = (doc.get("pooled") or {}).get("difference")
        if diff:
            parts.append("Difference v - v^c: %.4f (SE %.4f), Z = %.2f, p %s" % (
                diff["psi_diff"], diff["se"], diff["z"],
                "< 0.001" if diff["p_value"] < 0.001 else "= %.3f" % diff["p_value"]))
    vim = doc.get("variable_importance_table") or []
    if vim:
        parts.append(render_table(vim, VIM_COLUMNS, "Marginal shift effects"))
    return "\n\n".join(parts) + "\n"
