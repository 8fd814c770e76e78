"""Run artifacts: history, refinement traces, summaries.

Every file is self-describing: '#'-prefixed key=value lines echo the
effective configuration, followed by a header row and data rows.  Floats
are serialized with repr (shortest round-trip form), so identical runs
produce byte-identical files.
"""

import json

from .util import format_float


def _echo_lines(echo):
    return [f"# {k}={echo[k]}" for k in sorted(echo)] if echo else []


def _cell(v):
    if isinstance(v, float):
        return format_float(v)
    return str(v)


def write_table(path, columns, rows, echo=None):
    lines = _echo_lines(echo)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_cell(row.get(c, "")) for c in columns))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_history(path, records, design_names, perf_names, echo=None):
    columns = ["iter"] + list(design_names) + ["cost", "step"]
    for l, nm in enumerate(perf_names):
        columns += [f"beta[{nm}]", f"beta_minus[{nm}]", f"beta_plus[{nm}]",
                    f"cov[{nm}]", f"evals[{nm}]"]
    columns += ["refined"]
    rows = []
    for rec in records:
        row = {"iter": rec["iter"], "cost": rec["cost"], "step": rec["step"],
               "refined": int(rec["refined"])}
        for j, nm in enumerate(design_names):
            row[nm] = rec["theta"][j]
        for l, nm in enumerate(perf_names):
            row[f"beta[{nm}]"] = rec[f"beta_{l}"]
            row[f"beta_minus[{nm}]"] = rec[f"beta_minus_{l}"]
            row[f"beta_plus[{nm}]"] = rec[f"beta_plus_{l}"]
            row[f"cov[{nm}]"] = rec[f"cov_{l}"]
            row[f"evals[{nm}]"] = rec["evals"][l]
        rows.append(row)
    write_table(path, columns, rows, echo)


def write_refine_trace(path, trace, echo=None):
    columns = ["batch", "doe_size", "beta_minus", "beta_zero", "beta_plus",
               "width", "evals"]
    write_table(path, columns, trace, echo)


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
