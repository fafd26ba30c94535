"""
Report files - metric CSVs, Excel workbook, loss curve, ablation CSV/plot
and the prediction JSON-lines file
"""

import csv
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Alignment, Font
from openpyxl.utils import get_column_letter

from .diffusion import BehaviorToken, PredictionSet
from .errors import DatasetParseError, DatasetSchemaError
from .metrics import MetricsReport, ScenarioMetrics


METRICS_HEADER = ["metric", "K", "value", "n"]
SCENARIO_HEADER = ["id", "min_ade", "min_fde", "miss", "asd", "fsd", "ecfl", "is_intersection", "label"]
ABLATION_HEADER = ["steps", "epochs", "min_ade6", "min_fde6", "status"]
LOSS_HEADER = ["epoch", "step", "lr", "total", "reg", "cls", "conf", "val_min_ade"]

PathLike = Union[str, Path]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path: PathLike, header: List[str], rows: Iterable[List]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _scenario_row(m: ScenarioMetrics) -> List:
    return [m.scenario_id, m.min_ade, m.min_fde, m.miss, m.asd, m.fsd, m.ecfl, m.is_intersection, m.label]


# ==================== METRICS ====================

def write_metrics_csv(path: PathLike, report: MetricsReport) -> Path:
    return _write_rows(path, METRICS_HEADER, ([r[h] for h in METRICS_HEADER] for r in report.rows()))


def write_scenario_csv(path: PathLike, rows: Sequence[ScenarioMetrics]) -> Path:
    return _write_rows(path, SCENARIO_HEADER, (_scenario_row(m) for m in rows))


def read_metrics_csv(path: PathLike) -> Dict[str, Optional[float]]:
    """metric name -> value (None for an empty cell)"""
    with open(path, "r", newline="", encoding="utf-8") as f:
        return {row["metric"]: (float(row["value"]) if row["value"] else None) for row in csv.DictReader(f)}


def export_to_excel(path: PathLike, report: MetricsReport, rows: Sequence[ScenarioMetrics]) -> Path:
    """
    Workbook with a summary sheet and a per-scenario sheet
    (bold centered headers, frozen header row)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wb = Workbook()
    summary = wb.active
    summary.title = "Summary"
    _fill_sheet(summary, METRICS_HEADER, [[r[h] for h in METRICS_HEADER] for r in report.rows()],
                {1: 14, 2: 6, 3: 14, 4: 8})

    detail = wb.create_sheet("Scenarios")
    _fill_sheet(detail, SCENARIO_HEADER, [_scenario_row(m) for m in rows],
                {1: 18, **{col: 12 for col in range(2, len(SCENARIO_HEADER) + 1)}})
    wb.save(path)
    return path


def _fill_sheet(ws, headers: List[str], rows: List[List], widths: Dict[int, int]) -> None:
    header_font = Font(bold=True)
    for col, header in enumerate(headers, 1):
        cell = ws.cell(row=1, column=col, value=header)
        cell.font = header_font
        cell.alignment = Alignment(horizontal="center")
    for r, values in enumerate(rows, 2):
        for col, value in enumerate(values, 1):
            if isinstance(value, (np.floating, np.integer, np.bool_)):
                value = value.item()
            ws.cell(row=r, column=col, value=value)
    for col, width in widths.items():
        ws.column_dimensions[get_column_letter(col)].width = width
    ws.freeze_panes = "A2"


# ==================== TRAINING / ABLATION ====================

def write_loss_curve(path: PathLike, history: Sequence) -> Path:
    return _write_rows(path, LOSS_HEADER, ([getattr(r, h) for h in LOSS_HEADER] for r in history))


def write_ablation_csv(path: PathLike, rows: Sequence) -> Path:
    def values(r):
        data = asdict(r) if is_dataclass(r) else dict(r)
        return [data[h] for h in ABLATION_HEADER]
    return _write_rows(path, ABLATION_HEADER, (values(r) for r in rows))


def read_ablation_csv(path: PathLike) -> List[Dict]:
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ABLATION_HEADER:
            raise DatasetSchemaError(f"{path}: expected header {','.join(ABLATION_HEADER)}")
        for line, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "steps": int(row["steps"]),
                    "epochs": int(row["epochs"]),
                    "min_ade6": float(row["min_ade6"]) if row["min_ade6"] else None,
                    "min_fde6": float(row["min_fde6"]) if row["min_fde6"] else None,
                    "status": row["status"],
                })
            except (TypeError, ValueError) as e:
                raise DatasetParseError(f"bad ablation row: {e}", line)
    return rows


def plot_ablation(rows: Sequence[Dict], path: PathLike) -> Path:
    """Line plot of minADE6 / minFDE6 against the number of denoising steps (SVG)"""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = sorted((r for r in rows if r["status"] == "ok" and r["min_ade6"] is not None), key=lambda r: r["steps"])
    steps = [r["steps"] for r in ok]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [r["min_ade6"] for r in ok], marker="o", label="minADE$_6$")
    ax.plot(steps, [r["min_fde6"] for r in ok], marker="s", label="minFDE$_6$")
    ax.set_xlabel("denoising steps")
    ax.set_ylabel("error (m)")
    ax.set_xticks(steps)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# ==================== PREDICTIONS ====================

def _round(values: np.ndarray) -> list:
    return np.round(np.asarray(values, dtype=np.float64), 6).tolist()


def prediction_to_record(pred: PredictionSet) -> Dict:
    return {
        "id": pred.scenario_id,
        "samples": _round(pred.samples),
        "confidences": _round(pred.confidences),
        "decoder_scores": _round(pred.decoder_scores),
        "mode_probs": _round(pred.mode_probs),
        "tokens": [tok.to_json() for tok in pred.tokens],
    }


def _token_from_json(value) -> BehaviorToken:
    if value is None:
        return BehaviorToken()
    if isinstance(value, str):
        return BehaviorToken(mode=value)
    return BehaviorToken(endpoint=value)


def prediction_from_record(record: Dict, line: Optional[int] = None) -> PredictionSet:
    for key in ("id", "samples", "confidences", "mode_probs", "tokens"):
        if key not in record:
            raise DatasetSchemaError(f"missing field '{key}'", line, key)
    try:
        samples = np.asarray(record["samples"], dtype=np.float64)
        confidences = np.asarray(record["confidences"], dtype=np.float64)
        tokens = [_token_from_json(v) for v in record["tokens"]]
    except (TypeError, ValueError) as e:
        raise DatasetSchemaError(f"bad prediction values: {e}", line)
    if samples.ndim != 3 or samples.shape[-1] != 2:
        raise DatasetSchemaError(f"samples must be K x H x 2, got {samples.shape}", line, "samples")
    if len(confidences) != len(samples) or len(tokens) != len(samples):
        raise DatasetSchemaError("confidences/tokens must have one entry per sample", line, "confidences")
    return PredictionSet(
        scenario_id=str(record["id"]),
        samples=samples,
        confidences=confidences,
        decoder_scores=np.asarray(record.get("decoder_scores", confidences), dtype=np.float64),
        mode_probs=np.asarray(record["mode_probs"], dtype=np.float64),
        tokens=tokens,
    )


def write_predictions(path: PathLike, predictions: Iterable[PredictionSet]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for pred in predictions:
            f.write(json.dumps(prediction_to_record(pred), separators=(",", ":")) + "\n")
            count += 1
    return count


def read_predictions(path: PathLike) -> List[PredictionSet]:
    """
    Raises:
        DatasetParseError: a line is not valid JSON
        DatasetSchemaError: a record is missing fields or has inconsistent lengths
    """
    predictions = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(str(e), line_number)
            predictions.append(prediction_from_record(record, line_number))
    return predictions
