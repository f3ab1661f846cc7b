# report_generator.py
from __future__ import annotations

import logging
import numbers
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader, Undefined, select_autoescape

from App.calibration.metrics import CalibrationReport
from App.calibration.model_io import save_report

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"
GROUP_COLUMNS = ["group", "mass", "mean_score", "mean_label", "gasce", "violation"]


def _safe_round(value: Any, precision: Optional[int] = 4, default: Any = "n/a") -> Union[float, Any]:
    if value is None or isinstance(value, Undefined):
        return default
    if isinstance(value, numbers.Number):
        if isinstance(value, float) and not np.isfinite(value):
            return default
        return round(float(value), int(precision or 0))
    return value


def group_table(report: CalibrationReport) -> pd.DataFrame:
    """Per-group mean score against mean label, the data of a group scatter plot."""
    rows = []
    for name, entry in report.per_group.items():
        rows.append(
            {
                "group": name,
                "mass": entry.mass,
                "mean_score": entry.mean_score,
                "mean_label": entry.mean_label,
                "gasce": entry.gasce,
                "violation": entry.violation,
            }
        )
    return pd.DataFrame(rows, columns=GROUP_COLUMNS)


def write_group_csv(report: CalibrationReport, path: Union[str, Path]) -> None:
    group_table(report).to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def write_report_json(report: CalibrationReport, path: Union[str, Path]) -> None:
    save_report(report, path)


def render_html(report: CalibrationReport, title: str = "Calibration report", template_name: str = "report.html") -> str:
    env = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)), autoescape=select_autoescape(["html", "xml"]))
    env.filters["safe_round"] = _safe_round
    template = env.get_template(template_name)
    return template.render(title=title, report=report, groups=group_table(report).to_dict("records"))


def generate_report(
    report: CalibrationReport,
    json_path: Union[str, Path],
    group_csv_path: Optional[Union[str, Path]] = None,
    html_path: Optional[Union[str, Path]] = None,
    title: str = "Calibration report",
) -> None:
    """Write the JSON report plus the optional per-group CSV and HTML renderings."""
    write_report_json(report, json_path)
    if group_csv_path is not None:
        write_group_csv(report, group_csv_path)
    if html_path is not None:
        Path(html_path).write_text(render_html(report, title), encoding="utf-8")
        logger.info(f"Report saved to {html_path}")
