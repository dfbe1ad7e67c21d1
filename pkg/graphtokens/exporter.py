import csv
import io
import json
from typing import List, Sequence

from .fande import FandeResult, render_quadrant_table, render_score_table
from .gradcheck import GradcheckReport
from .schemas import RunReport
from .training import StabilityRow

REPORT_COLUMNS = ["name", "operator", "encoder", "regime", "lora_rank", "lora_scale", "seed", "final_accuracy", "final_loss"]


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# --- RUN REPORTS ---

def reports_to_json(reports: Sequence[RunReport]) -> str:
    return json.dumps([r.model_dump() for r in reports], indent=2) + "\n"


def reports_from_json(text: str) -> List[RunReport]:
    data = json.loads(text)
    if isinstance(data, dict):
        data = [data]
    return [RunReport.model_validate(item) for item in data]


def _report_rows(reports: Sequence[RunReport]):
    rows = []
    for r in reports:
        for s in r.seeds:
            final_loss = s.loss_curve[-1] if s.loss_curve else ""
            rows.append([r.name, r.operator, r.encoder, r.regime, r.lora_rank or "", r.lora_scale or "", s.seed, s.final_accuracy, final_loss])
    return rows


def reports_to_csv(reports: Sequence[RunReport]) -> str:
    return _csv(REPORT_COLUMNS, _report_rows(reports))


def reports_to_table(reports: Sequence[RunReport]) -> str:
    rows = [
        [r.name, r.operator, r.encoder, r.regime, len(r.seeds), f"{r.mean:.4f}", f"{r.std:.4f}"]
        for r in reports
    ]
    return _table(["name", "operator", "encoder", "regime", "seeds", "mean", "std"], rows)


def render_reports(reports: Sequence[RunReport], fmt: str) -> str:
    if fmt == "json":
        return reports_to_json(reports)
    if fmt == "csv":
        return reports_to_csv(reports)
    return reports_to_table(reports)


# --- STABILITY ---

def _stability_rows(rows: Sequence[StabilityRow]):
    return [
        [
            r.operator,
            r.regime,
            r.runs,
            f"{r.mean:.4f}",
            f"{r.std:.4f}",
            "" if r.variance_ratio is None else f"{r.variance_ratio:.4f}",
        ]
        for r in rows
    ]


STABILITY_COLUMNS = ["operator", "regime", "runs", "mean", "std", "var_ratio_adapted_frozen"]


def render_stability(rows: Sequence[StabilityRow], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([r.__dict__ for r in rows], indent=2) + "\n"
    if fmt == "csv":
        return _csv(STABILITY_COLUMNS, _stability_rows(rows))
    return _table(STABILITY_COLUMNS, _stability_rows(rows))


# --- FANDE ---

FANDE_COLUMNS = ["dataset", "pair", "both", "only_edge", "only_feature", "neither", "examples", "fande", "fande_rounded"]


def render_fande(results: Sequence[FandeResult], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([r.as_dict() for r in results], indent=2) + "\n"
    if fmt == "csv":
        return _csv(FANDE_COLUMNS, [[r.as_dict()[c] for c in FANDE_COLUMNS] for r in results])
    blocks = [render_quadrant_table(r) for r in results]
    blocks.append(render_score_table(results))
    return "\n\n".join(blocks) + "\n"


# --- GRADCHECK ---

def render_gradcheck(reports: Sequence[GradcheckReport], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(
            [{"name": r.name, "passed": r.passed, "max_rel_err": r.max_error, "blocks": r.blocks} for r in reports],
            indent=2,
        ) + "\n"
    rows = [[r.name, name, f"{err:.3e}"] for r in reports for name, err in r.blocks.items()]
    if fmt == "csv":
        return _csv(["name", "block", "rel_err"], rows)
    return "\n".join(f"{r.name}: {r.summary()}" for r in reports) + "\n"
