"""Report files: report.csv, report.json and plotdata.csv.

Raw per-shuffle scores are stored with six significant digits and every
summary is computed from those stored values, so rendering a saved
report.json again reproduces all three files byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

from .dataio import dump_json, fmt_float, round6, write_text
from .errors import ParseError
from .eval import CellResult, EvalReport

CSV_COLUMNS = ("model", "composition", "train_mean", "train_std", "test_mean", "test_std")
PLOT_COLUMNS = ("facet", "category", "group", "value", "error")


def _round_value(v):
    if isinstance(v, float):
        return round6(v)
    if isinstance(v, dict):
        return {k: _round_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round_value(x) for x in v]
    return v


def rounded(report: EvalReport) -> EvalReport:
    """A copy holding the six-digit values that go to disk."""
    cells = []
    for c in report.cells:
        cells.append(CellResult(c.model, c.composition, _round_value(c.train_scores), _round_value(c.test_scores),
                                _round_value(c.val_scores), _round_value(c.chosen), list(c.plan_digests),
                                [tuple(_round_value(list(f))) for f in c.failures]))
    return EvalReport(cells, list(report.plan_seeds), list(report.plan_digests), report.base_seed, report.scheme)


def render_csv(report: EvalReport) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for c in report.cells:
        lines.append(",".join([c.model, c.composition] + [fmt_float(v) for v in
                                                          (c.train_mean, c.train_std, c.test_mean, c.test_std)]))
    return "\n".join(lines) + "\n"


def render_plotdata(report: EvalReport) -> str:
    """Bar-chart rows: one panel per facet, bars per model, one bar per composition."""
    lines = [",".join(PLOT_COLUMNS)]
    for facet in ("test", "train"):
        for c in report.cells:
            mean, std = (c.test_mean, c.test_std) if facet == "test" else (c.train_mean, c.train_std)
            lines.append(",".join([facet, c.model, c.composition, fmt_float(mean), fmt_float(std)]))
    return "\n".join(lines) + "\n"


def render_json(report: EvalReport) -> str:
    return dump_json(_round_value(report.to_dict()))


def write_report(report: EvalReport, out_dir) -> dict:
    """Write the three report files; returns {name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = rounded(report)
    files = {"report.csv": render_csv(report), "report.json": render_json(report),
             "plotdata.csv": render_plotdata(report)}
    paths = {}
    for name, text in files.items():
        write_text(out / name, text)
        paths[name] = out / name
    return paths


def read_report(path) -> EvalReport:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return EvalReport.from_dict(data)
    except OSError as exc:
        raise ParseError(path, f"cannot read report ({exc.strerror})") from None
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, f"not a valid report ({type(exc).__name__}: {exc})") from None
