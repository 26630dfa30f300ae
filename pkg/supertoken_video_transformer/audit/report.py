import csv
import io
import os
from typing import Optional

from .flops import Comparison, FlopReport

LEDGER_FIELDS = ['layer', 'kind', 'tokens_in', 'tokens_out', 'macs', 'params']


def ledger_csv(report: FlopReport) -> str:
    """One row per layer, then a ``total`` row."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LEDGER_FIELDS, lineterminator='\n')
    writer.writeheader()
    for row in report.rows:
        writer.writerow({f: getattr(row, f) for f in LEDGER_FIELDS})
    writer.writerow({'layer': 'total', 'kind': '', 'tokens_in': '', 'tokens_out': report.final_tokens,
                     'macs': report.total_macs, 'params': report.total_params})
    return buf.getvalue()


def write_ledger_csv(report: FlopReport, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(ledger_csv(report))


def format_table(report: FlopReport, comparison: Optional[Comparison] = None) -> str:
    """Human-readable aligned ledger with per-view and multi-view totals."""
    header = ['layer', 'kind', 'tokens', 'GMACs', 'params']
    body = [[r.layer, r.kind, f"{r.tokens_in}->{r.tokens_out}", f"{r.macs / 1e9:.3f}", f"{r.params:,}"]
            for r in report.rows]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    right = {2, 3, 4}

    def fmt(row):
        return '  '.join(cell.rjust(w) if i in right else cell.ljust(w)
                         for i, (cell, w) in enumerate(zip(row, widths))).rstrip()

    lines = [f"{report.model}  input {'x'.join(str(i) for i in report.input)}", fmt(header),
             '  '.join('-' * w for w in widths)]
    lines += [fmt(row) for row in body]
    lines.append(f"total: {report.gflops:.1f} GFLOPs per view, {report.label()} "
                 f"({report.total_gflops:.1f} over all views), {report.total_params:,} params")
    if comparison is not None:
        lines.append(f"baseline {comparison.baseline.model}: {comparison.baseline.label()}, "
                     f"reduction {100 * comparison.reduction:.1f}%")
    return '\n'.join(lines) + '\n'
