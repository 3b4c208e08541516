"""Report assembly: four-comparison table, judge agreement, text rendering."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from typing import Mapping, Sequence

import numpy as np

from .scoring import read_records_csv
from .stats import PairedSample, StatReport, correlation, krippendorff_alpha_interval, paired_comparisons

# (label, first configuration, second configuration); differences are second - first
TABLE4_COMPARISONS = (
    ("baseline vs popccp@M1", "baseline", "popccp@M1"),
    ("baseline vs popccp@M3", "baseline", "popccp@M3"),
    ("popccp@M1 vs popccp@M3 (primary)", "popccp@M1", "popccp@M3"),
    ("popccp@M3 vs adaptive-zscore", "popccp@M3", "adaptive-zscore"),
)

HOLM_NOTE = ("Holm p uses the standard step-down rule: sort raw p ascending, multiply the j-th smallest by "
             "(m - j + 1), enforce a running maximum and cap at 1. Adjusted values reported elsewhere that "
             "exceed this arithmetic on the same raw p are not reproduced.")


def table4(results: Mapping, comparisons: Sequence[tuple] = TABLE4_COMPARISONS) -> list:
    pairs = []
    for label, a, b in comparisons:
        if a not in results or b not in results:
            raise KeyError(f"comparison {label!r} needs configurations {a!r} and {b!r}")
        ra, rb = results[a], results[b]
        if ra.task_ids != rb.task_ids:
            raise ValueError(f"{a} and {b} are not aligned by task_id")
        pairs.append((label, PairedSample(ra.F_patched, rb.F_patched, ra.task_ids)))
    return paired_comparisons(pairs)


def stat_reports_json(rows: Sequence[StatReport]) -> dict:
    return {"comparisons": [_finite(asdict(r)) for r in rows], "note": HOLM_NOTE}


def write_stat_reports_csv(path, rows: Sequence[StatReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["comparison", "raw_p", "holm_p", "d_z", "n", "statistic", "mean_diff"])
        for r in rows:
            w.writerow([r.label, repr(r.raw_p), repr(r.holm_p), repr(r.d_z), r.n, repr(r.statistic),
                        repr(r.mean_diff)])


def write_shift_csv(path, tables: Mapping[str, dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["configuration_tag", "metric", "module", "value"])
        for tag, t in tables.items():
            for m, v in t["cosine"].items():
                w.writerow([tag, "bow_cosine", m, repr(v)])
            for m, v in t.get("embedding_cosine", {}).items():
                w.writerow([tag, "embedding_cosine", m, repr(v)])
            for key in ("intent_disagreement", "tool_disagreement", "slot_key_jaccard"):
                if t.get(key) is not None:
                    w.writerow([tag, key, "", repr(t[key])])


def _finite(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def judge_agreement(path_a, path_b, threshold: float = 0.5) -> dict:
    """Agreement between two judges' severity files (same tasks, same configurations)."""
    a = {(r.task_id, r.configuration_tag): r.severity.sev for r in read_records_csv(path_a)}
    b = {(r.task_id, r.configuration_tag): r.severity.sev for r in read_records_csv(path_b)}
    keys = sorted(a.keys() & b.keys())
    if not keys:
        raise ValueError("severity files share no (task_id, configuration_tag) rows")
    x = np.concatenate([np.asarray(a[k], dtype=float) for k in keys])
    y = np.concatenate([np.asarray(b[k], dtype=float) for k in keys])
    if len(x) != len(y):
        raise ValueError("severity vectors differ in length between files")
    return {
        "n_episodes": len(keys), "n_ratings": int(len(x)),
        "krippendorff_alpha": krippendorff_alpha_interval(x, y),
        "pearson_r": correlation(x, y, "pearson")[0],
        "spearman_rho": correlation(x, y, "spearman")[0],
        "mean_abs_diff": float(np.mean(np.abs(x - y))),
        "binary_agreement": float(np.mean((x >= threshold) == (y >= threshold))),
        "threshold": threshold,
        "unmatched": len((a.keys() | b.keys()) - set(keys)),
    }


def render_text(report: dict) -> str:
    lines = [f"run {report.get('run_id', '?')}", ""]
    dx = report.get("diagnosis")
    if dx:
        lines.append("mean dF by module: " + ", ".join(f"M{i}={v:.3f}" for i, v in enumerate(dx["means"], 1)))
        lines.append(f"pop_target: M{dx['pop_target']}   naive severity target: M{dx['naive_target']}")
        for c in dx["censuses"]:
            rates = ", ".join(f"M{m}={r:.3f}" for m, r in c["compensator_rate"].items())
            lines.append(f"tau={c['tau']:g}  compensator rate: {rates}")
        lines.append("")
    lines.append(f"{'configuration':<24}{'n':>5}{'mean F':>10}{'mean delta':>12}{'tool match':>12}")
    for row in report.get("configurations", []):
        if row.get("missing"):
            lines.append(f"{row['configuration_tag']:<24}  MISSING")
            continue
        lines.append(f"{row['configuration_tag']:<24}{row['n']:>5}{row['mean_F']:>10.3f}"
                     f"{row['mean_delta']:>+12.3f}{row['tool_match_rate']:>12.3f}")
    t4 = report.get("table4")
    if t4:
        lines += ["", f"{'comparison':<36}{'raw p':>11}{'Holm p':>11}{'d_z':>8}"]
        for r in t4["comparisons"]:
            dz = "nan" if r["d_z"] is None else f"{r['d_z']:+.2f}"
            lines.append(f"{r['label']:<36}{r['raw_p']:>11.3g}{r['holm_p']:>11.3g}{dz:>8}")
        lines.append(f"note: {t4['note']}")
    cascade = report.get("cascade")
    if cascade:
        lines += ["", f"{'cascade vs baseline':<24}{'cos M1':>8}{'cos M2':>8}{'cos M3':>8}{'cos M4':>8}"
                      f"{'intent':>8}{'tool':>8}"]
        for tag, t in cascade.items():
            cos = "".join(f"{t['cosine'].get(str(m), float('nan')):>8.3f}" for m in range(1, 5))
            lines.append(f"{tag:<24}{cos}{t['intent_disagreement'] or 0:>8.3f}{t['tool_disagreement'] or 0:>8.3f}")
    grid = report.get("kappa_grid")
    if grid:
        lines += ["", f"{'kappa':>6}{'comp rate M3':>14}{'delta CCP@M3':>14}"]
        for r in grid["rows"]:
            lines.append(f"{r['kappa']:>6g}{r['compensator_rate_m3']:>14.3f}{r['delta_ccp_m3']:>+14.3f}")
    agree = report.get("judge_agreement")
    if agree:
        lines += ["", "judge agreement: " + ", ".join(
            f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in agree.items())]
    return "\n".join(lines) + "\n"


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)
