# Result files: time series and scan maps (CSV / JSON) with matching readers,
# SVG heatmaps, the PDF run report and the appended run-metrics CSV.

from contextlib import contextmanager
from pathlib import Path
import csv
import json
import logging
import math
import time

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from reportlab.lib.pagesizes import LETTER
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer

from errors import DomainError, OutputError, ShapeError
from experiments import ScanResult
from liouville import Trajectory
from run_config import ARTIFACT_VERSION

logger = logging.getLogger(__name__)

TIMESERIES_COLUMNS = ["time_ns", "im_rho21", "rho11", "rho22", "rho33"]
MAP_COLUMNS = ["param", "time_ns", "im_rho21", "rho33"]
OBSERVABLES = ("im_rho21", "rho33")
METRICS_FILE = "run_metrics.csv"
METRICS_COLUMNS = [
    "datetime", "command", "config_path", "velocity_classes", "scan_points",
    "time_samples", "workers", "runtime_sec", "primary_metric", "output_files",
]
HEATMAP_SALT = "rydberg-rabi"
# axis scaling for heatmaps: param name -> (divisor, label)
PARAM_DISPLAY = {
    "intensity": (1e10, "coupling intensity (MW/cm$^2$)"),
    "detuning_480": (2.0 * math.pi * 1e6, r"$\Delta_{480}/2\pi$ (MHz)"),
}


def _fmt(value) -> str:
    return f"{value:.12g}"


@contextmanager
def _writing(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            yield handle
    except OSError as exc:
        raise OutputError(f"cannot write ({exc.strerror})", path) from exc


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read ({exc.strerror})", path) from exc


def _write_metadata_lines(handle, metadata):
    if metadata is None:
        return
    handle.write(f"# artifact_version: {json.dumps(ARTIFACT_VERSION)}\n")
    for key, value in metadata.items():
        handle.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")


def _split_csv(text):
    """Leading '# key: json' lines -> metadata dict, remaining lines -> data."""
    metadata, lines = {}, text.splitlines()
    index = 0
    while index < len(lines) and lines[index].startswith("#"):
        key, _, value = lines[index][1:].strip().partition(":")
        metadata[key.strip()] = json.loads(value) if value.strip() else None
        index += 1
    return metadata, lines[index:]


def _json_dump(document, path):
    with _writing(path) as handle:
        json.dump(document, handle, indent=1)
        handle.write("\n")


def write_timeseries(traj: Trajectory, path, fmt="csv", metadata=None):
    path = Path(path)
    columns = [traj.times * 1e9, traj.im_rho21, traj.rho11, traj.rho22, traj.rho33]
    if fmt == "json":
        document = {"artifact_version": ARTIFACT_VERSION, "metadata": metadata or {}}
        for name, values in zip(TIMESERIES_COLUMNS, columns):
            document[name] = [float(v) for v in values]
        _json_dump(document, path)
    elif fmt == "csv":
        with _writing(path) as handle:
            _write_metadata_lines(handle, metadata)
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(TIMESERIES_COLUMNS)
            for row in zip(*columns):
                writer.writerow([_fmt(v) for v in row])
    else:
        raise DomainError(f"unknown output format '{fmt}'")
    logger.info(f"Wrote {len(traj)} samples to {path}")
    return path


def read_timeseries(path):
    """-> (Trajectory, metadata) for either format, chosen by file suffix."""
    path = Path(path)
    text = _read_text(path)
    if path.suffix == ".json":
        document = json.loads(text)
        columns = [np.asarray(document[name], dtype=float) for name in TIMESERIES_COLUMNS]
        metadata = dict(document.get("metadata", {}), artifact_version=document.get("artifact_version"))
    else:
        metadata, lines = _split_csv(text)
        reader = csv.reader(lines)
        header = next(reader, None)
        if header != TIMESERIES_COLUMNS:
            raise ShapeError(f"{path}: expected columns {TIMESERIES_COLUMNS}, got {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=float).reshape(-1, 5)
        columns = list(rows.T)
    times_ns, im_rho21, rho11, rho22, rho33 = columns
    return Trajectory(times=times_ns * 1e-9, im_rho21=im_rho21, rho11=rho11,
                      rho22=rho22, rho33=rho33), metadata


def write_map(scan: ScanResult, path, fmt="csv", metadata=None):
    path = Path(path)
    metadata = dict(metadata or {}, param_name=scan.param_name, param_unit=scan.param_unit)
    if fmt == "json":
        _json_dump({
            "artifact_version": ARTIFACT_VERSION,
            "metadata": metadata,
            "params": scan.params.tolist(),
            "time_ns": (scan.times * 1e9).tolist(),
            "im_rho21": scan.im_rho21.tolist(),
            "rho33": scan.rho33.tolist(),
        }, path)
    elif fmt == "csv":
        times_ns = scan.times * 1e9
        with _writing(path) as handle:
            _write_metadata_lines(handle, metadata)
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(MAP_COLUMNS)
            for i, param in enumerate(scan.params):
                for j, t in enumerate(times_ns):
                    writer.writerow([_fmt(param), _fmt(t), _fmt(scan.im_rho21[i, j]), _fmt(scan.rho33[i, j])])
    else:
        raise DomainError(f"unknown output format '{fmt}'")
    logger.info(f"Wrote {len(scan.params)}x{len(scan.times)} {scan.param_name} map to {path}")
    return path


def read_map(path):
    """-> (ScanResult, metadata) for either format."""
    path = Path(path)
    text = _read_text(path)
    if path.suffix == ".json":
        document = json.loads(text)
        metadata = dict(document.get("metadata", {}), artifact_version=document.get("artifact_version"))
        params = np.asarray(document["params"], dtype=float)
        times_ns = np.asarray(document["time_ns"], dtype=float)
        shape = (len(params), len(times_ns))
        im_rho21 = np.asarray(document["im_rho21"], dtype=float).reshape(shape)
        rho33 = np.asarray(document["rho33"], dtype=float).reshape(shape)
    else:
        metadata, lines = _split_csv(text)
        reader = csv.reader(lines)
        header = next(reader, None)
        if header != MAP_COLUMNS:
            raise ShapeError(f"{path}: expected columns {MAP_COLUMNS}, got {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
        if rows.size == 0:
            raise ShapeError(f"{path}: map has no rows")
        # one block of strictly increasing times per param
        drops = np.nonzero(np.diff(rows[:, 1]) <= 0)[0]
        n_times = int(drops[0]) + 1 if drops.size else len(rows)
        if len(rows) % n_times:
            raise ShapeError(f"{path}: {len(rows)} rows do not split into blocks of {n_times}")
        blocks = rows.reshape(-1, n_times, 4)
        params, times_ns = blocks[:, 0, 0], blocks[0, :, 1]
        im_rho21, rho33 = blocks[:, :, 2], blocks[:, :, 3]
    scan = ScanResult(
        param_name=metadata.get("param_name") or "param",
        param_unit=metadata.get("param_unit") or "",
        params=params,
        times=times_ns * 1e-9,
        im_rho21=im_rho21,
        rho33=rho33,
    )
    return scan, metadata


def write_records(records, path, fmt="csv", metadata=None):
    """List of flat dicts as a table (CSV) or a JSON document."""
    path = Path(path)
    if fmt == "json":
        _json_dump({"artifact_version": ARTIFACT_VERSION, "metadata": metadata or {},
                    "records": records}, path)
        return path
    if fmt != "csv":
        raise DomainError(f"unknown output format '{fmt}'")
    columns = list(records[0]) if records else []
    with _writing(path) as handle:
        _write_metadata_lines(handle, metadata)
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in record.items()})
    return path


def render_heatmap(scan: ScanResult, observable, path):
    if observable not in OBSERVABLES:
        raise DomainError(f"unknown observable '{observable}', expected one of {OBSERVABLES}")
    if scan.params.size == 0 or scan.times.size == 0:
        raise ShapeError("cannot render an empty scan")
    values = getattr(scan, observable)
    divisor, label = PARAM_DISPLAY.get(scan.param_name, (1.0, f"{scan.param_name} ({scan.param_unit})"))
    params = scan.params / divisor
    times_ns = scan.times * 1e9
    low, high = float(params[0]), float(params[-1])
    if high == low:
        low, high = low - 0.5, high + 0.5
    vmin, vmax = float(values.min()), float(values.max())

    path = Path(path)
    with plt.rc_context({"svg.hashsalt": HEATMAP_SALT}):
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        try:
            image = ax.imshow(values, aspect="auto", origin="lower", interpolation="nearest",
                              extent=(times_ns[0], times_ns[-1], low, high), vmin=vmin, vmax=vmax,
                              cmap="viridis")
            fig.colorbar(image, ax=ax, label=observable)
            ax.set_xlabel("time (ns)")
            ax.set_ylabel(label)
            ax.set_title(f"{observable}: min {vmin:.4g}, max {vmax:.4g}")
            path.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OutputError(f"cannot write heatmap ({exc.strerror})", path) from exc
        finally:
            plt.close(fig)
    logger.info(f"Heatmap of {observable} saved to {path}")
    return path


def write_report_pdf(path, command, resolved, metrics):
    """PDF run report: command, headline metrics and the resolved config."""
    pdf_start_time = time.time()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = SimpleDocTemplate(
            str(path),
            pagesize=LETTER,
            rightMargin=50,
            leftMargin=50,
            topMargin=50,
            bottomMargin=50
        )
        styles = getSampleStyleSheet()
        title_style = ParagraphStyle(
            'TitleStyle',
            parent=styles['Title'],
            fontName='Helvetica-Bold',
            fontSize=20,
            spaceAfter=20,
            alignment=1
        )
        heading_style = ParagraphStyle(
            'HeadingStyle',
            parent=styles['Heading2'],
            fontName='Helvetica-Bold',
            fontSize=14,
            spaceBefore=12,
            spaceAfter=6
        )
        normal_style = ParagraphStyle('BodyStyle', parent=styles['BodyText'],
                                      fontName='Helvetica', fontSize=10, leading=12)

        story = [Paragraph("Rydberg Rabi Flopping Run Report", title_style), Spacer(1, 0.2 * inch)]
        story.append(Paragraph(f"Date: {time.strftime('%Y-%m-%d %H:%M:%S')}", normal_style))
        story.append(Paragraph(f"Command: {command}", normal_style))
        story.append(Spacer(1, 0.3 * inch))

        story.append(Paragraph("Results:", heading_style))
        for key, value in metrics.items():
            shown = f"{value:.6g}" if isinstance(value, float) else value
            story.append(Paragraph(f"- {key}: {shown}", normal_style))
        story.append(Spacer(1, 0.2 * inch))

        story.append(Paragraph("Resolved configuration:", heading_style))
        for key, value in resolved.items():
            story.append(Paragraph(f"{key} = {value}", normal_style))

        doc.build(story)
    except Exception as e:
        logger.error(f"Error generating PDF report: {e}")
        raise OutputError(f"cannot build PDF report ({e})", path) from e
    pdf_report_time = time.time() - pdf_start_time
    logger.info(f"PDF report written to {path} in {pdf_report_time:.2f} s")
    return path, pdf_report_time


def append_run_metrics(out_dir, row):
    csv_file = Path(out_dir) / METRICS_FILE
    file_exists = csv_file.is_file()
    try:
        csv_file.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_file, 'a', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
            if not file_exists:
                writer.writeheader()
            writer.writerow({column: row.get(column, "") for column in METRICS_COLUMNS})
    except OSError as exc:
        raise OutputError(f"cannot append run metrics ({exc.strerror})", csv_file) from exc
    return csv_file
