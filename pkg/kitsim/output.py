"""
Output writers for kitsim - bit-stable CSV and JSON tables

Every file starts with the provenance of the run (seed, version and all
resolved parameters) so it can be reproduced exactly. Floats are written
with 17 significant digits and rows are emitted in a fixed order, so
identical results always give byte-identical files.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

from .errors import UsageError
from .experiments import DiagramRow, RelaxationResult
from .observables import HistogramGrid, MomentSeries

LOG = logging.getLogger(__name__)

FORMATS = ("csv", "json")

MOMENT_COLUMNS = ("tau", "V", "E", "variance")
DIAGRAM_COLUMNS = ("rho", "strategy", "nu0", "V", "flux", "variance")
CONTOUR_COLUMNS = ("tau", "bin_center", "density")
RELAX_COLUMNS = ("tau", "V_measured", "V_closed_form", "V_ode", "rel_error")

Provenance = Sequence[Tuple[str, str]]


def format_float(value: float) -> str:
    """17 significant digits: parsing the text gives back the same double"""
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return format_float(value)
    return value


def to_table(results: Any) -> Tuple[Tuple[str, ...], List[Tuple[Any, ...]]]:
    """Column names and rows for any result kitsim knows how to write"""
    if isinstance(results, MomentSeries):
        rows = [(s.tau, s.V, s.E, s.var) for s in results]
        return MOMENT_COLUMNS, rows
    if isinstance(results, HistogramGrid):
        rows = [
            (float(tau), float(center), float(density))
            for tau, slice_ in zip(results.taus, results.density)
            for center, density in zip(results.centers, slice_)
        ]
        return CONTOUR_COLUMNS, rows
    if isinstance(results, RelaxationResult):
        rows = list(zip(
            results.measured.taus.tolist(),
            results.measured.V.tolist(),
            results.closed_form.tolist(),
            results.ode.tolist(),
            results.rel_errors.tolist(),
        ))
        return RELAX_COLUMNS, rows
    if isinstance(results, (list, tuple)) and all(isinstance(r, DiagramRow) for r in results):
        ordered = sorted(results, key=lambda row: row.sort_key)
        rows = [(r.rho, r.strategy, r.nu0, r.V, r.flux, r.var) for r in ordered]
        return DIAGRAM_COLUMNS, rows
    raise UsageError(f"don't know how to write results of type {type(results).__name__}")


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]],
              provenance: Optional[Provenance] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in provenance or ():
            f.write(f"# {key} = {value}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(value) for value in row])


def write_json(path: Path, columns: Sequence[str], rows: Sequence[Sequence[Any]],
               provenance: Optional[Provenance] = None) -> None:
    document = {
        "metadata": dict(provenance or ()),
        "columns": list(columns),
        "rows": [[_json_value(value) for value in row] for row in rows],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(document, indent=2, sort_keys=True, allow_nan=False))
        f.write("\n")


def write_outputs(results: Any, fmt: str, path: Path, provenance: Optional[Provenance] = None) -> Path:
    """
    Serialise results to path in the requested format

    Args:
        results: MomentSeries, list of DiagramRow, HistogramGrid or RelaxationResult
        fmt: 'csv' or 'json'
        path: destination file; its parent is created when missing
        provenance: (key, value) pairs written ahead of the data

    Returns:
        The path written
    """
    if fmt not in FORMATS:
        raise UsageError(f"unknown output format {fmt!r} (expected csv or json)")
    columns, rows = to_table(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        write_csv(path, columns, rows, provenance)
    else:
        write_json(path, columns, rows, provenance)
    LOG.info(f"💾 Output: wrote {len(rows)} rows to {path}")
    return path


def output_path(out_dir: Path, stem: str, fmt: str) -> Path:
    return Path(out_dir) / f"{stem}.{fmt}"
