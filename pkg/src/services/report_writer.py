"""Report emission: report.json, CSV tables, plot data and the run manifest."""

import json
import os
import platform
import tempfile
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

from .. import __version__
from ..models.validation import ValidationReport
from ..utils.exceptions import EmptyReportError, IoFailureError
from ..utils.logger import get_pipeline_logger

logger = get_pipeline_logger()

VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "scikit-learn", "pydantic", "click")

# section name -> (subdirectory, file stem)
SECTION_FILES = {
    "latent_smd": ("tables", "latent_smd"),
    "hidden_factor": ("tables", "hidden_factor"),
    "diagnostics": ("tables", "diagnostics"),
    "plot_method_variant": ("plotdata", "method_variant"),
    "plot_sensitivity": ("plotdata", "sensitivity"),
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _atomic_write(path: Path, text: str) -> None:
    """Write to a sibling temp file, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _csv_text(records: List[Dict[str, Any]]) -> str:
    frame = pd.DataFrame(records)
    for column in frame.columns:
        if frame[column].map(lambda v: isinstance(v, (dict, list))).any():
            frame[column] = frame[column].map(lambda v: json.dumps(v, default=_jsonable, sort_keys=True))
    return frame.to_csv(index=False)


def _tables(report: ValidationReport) -> Dict[str, List[Dict[str, Any]]]:
    """Table name -> records; every table is written even when empty."""
    gaps = [
        {"scope": scope, **record.to_dict()}
        for scope, summary in report.gaps.items()
        for record in summary.records
    ]
    gap_tests = [
        {"scope": scope, **{k: v for k, v in summary.to_dict().items() if k != "pairs"}}
        for scope, summary in report.gaps.items()
    ]
    smd = [
        {"run": key, **row}
        for key, rows in report.smd_tables.items()
        for row in rows
    ]
    return {
        "rows": [r.to_dict() for r in report.rows],
        "failures": [f.to_dict() for f in report.failures],
        "cells": [c.to_dict() for c in report.cells],
        "tests": [t.to_dict() for t in report.tests],
        "tost": report.tost,
        "gaps": gaps,
        "gap_tests": gap_tests,
        "smd": smd,
    }


def _versions() -> Dict[str, str]:
    versions = {"python": platform.python_version(), "survival-latent-balance": __version__}
    for package in VERSIONED_PACKAGES:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def emit_report(report: ValidationReport, out_dir: Union[str, Path]) -> List[Path]:
    """
    Write every report artifact under ``out_dir``.

    Each file is written to a temporary sibling and renamed into place, so
    a rerun into the same directory replaces prior outputs file by file.

    Raises:
        EmptyReportError: the report holds no rows and no failures
        IoFailureError: the directory or a file cannot be written
    """
    if report.is_empty:
        raise EmptyReportError("Report is empty; nothing written", details={"experiment": report.experiment})

    out = Path(out_dir)
    written: List[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)

        report_path = out / "report.json"
        _atomic_write(report_path, json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_jsonable))
        written.append(report_path)

        for name, records in _tables(report).items():
            path = out / "tables" / f"{name}.csv"
            _atomic_write(path, _csv_text(records) if records else "")
            written.append(path)

        for section, (subdir, stem) in SECTION_FILES.items():
            path = out / subdir / f"{stem}.csv"
            records = report.sections.get(section)
            if records:
                _atomic_write(path, _csv_text(records))
                written.append(path)
            else:
                # Left over from an earlier run of a different experiment
                path.unlink(missing_ok=True)

        manifest = {
            "experiment": report.experiment,
            "config_hash": report.config_hash,
            "seed": report.seed,
            "versions": _versions(),
            "created_at": datetime.now(timezone.utc).isoformat(),
            "started_at": report.start_time.isoformat() if report.start_time else None,
            "duration_seconds": report.duration,
            "row_count": len(report.rows),
            "failed_count": report.failed_count,
            "files": sorted(str(p.relative_to(out)) for p in written),
        }
        manifest_path = out / "manifest.json"
        _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True))
        written.append(manifest_path)
    except OSError as e:
        raise IoFailureError(f"Cannot write report to {out}: {e}", details={"out_dir": str(out)})

    logger.info(f"Report written to {out} ({len(written)} files)")
    return written
