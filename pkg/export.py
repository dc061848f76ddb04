# export.py
import csv
import json
import logging
import os
from datetime import datetime

import numpy as np
from fpdf import FPDF
from fpdf.enums import XPos, YPos

import config
import formatting
from utils import clean_run_name, get_resource_path

logger = logging.getLogger(__name__)

TIMESERIES_COLUMNS = ["t", "node", "x", "u", "p"]
QUADRATURE_COLUMNS = ["t", "qp", "x", "phi", "E", "nu", "C11_eff", "alpha", "M_biot", "K11",
                      "E_eff", "nu_eff", "G_eff", "K_bulk", "v_rf"]
UNIAXIAL_COLUMNS = ["N", "stretch", "nominal_stress"]
CYCLE_COLUMNS = ["cycle", "t", "stretch", "load"]
CYCLE_SUMMARY_COLUMNS = ["cycle", "hysteresis", "residual_strain", "residual_increment"]
DARCY_COLUMNS = ["delta_p", "delta_p_fraction", "v_rf", "v_linear", "y", "deviation", "steady_time"]

# record.qp key for each per-quadrature column after (t, qp)
_QP_KEYS = {"x": "x", "phi": "phi", "E": "E", "nu": "nu", "C11_eff": "C11", "alpha": "alpha", "M_biot": "M",
            "K11": "K", "E_eff": "E_eff", "nu_eff": "nu_eff", "G_eff": "G_eff", "K_bulk": "K_bulk",
            "v_rf": "v_rf"}


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), config.CSV_FLOAT_FORMAT)


def run_directory(output_dir, run_name):
    """Creates (if needed) and returns <output_dir>/<cleaned run name>."""
    path = os.path.join(output_dir, clean_run_name(run_name) or "run")
    os.makedirs(path, exist_ok=True)
    return path


def write_rows(path, columns, rows):
    """Generic CSV writer: rows are sequences in column order."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    logger.info("Wrote %s", path)
    return path


def write_timeseries(history, column, path):
    """Nodal u and p at the pressure vertices for every increment."""
    def rows():
        for rec in history:
            u_vertex = rec.u[::2]
            for node, x in enumerate(column.vertices):
                yield rec.t, node, x, u_vertex[node], rec.p[node]
    return write_rows(path, TIMESERIES_COLUMNS, rows())


def write_quadrature(history, path):
    def rows():
        for rec in history:
            for q in range(rec.qp["x"].size):
                yield [rec.t, q] + [rec.qp[_QP_KEYS[c]][q] for c in QUADRATURE_COLUMNS[2:]]
    return write_rows(path, QUADRATURE_COLUMNS, rows())


def write_uniaxial(study, path):
    """Every point of every incremental polyline, grouped by increment count."""
    rows = ((row["N"], lam, P) for row in study for lam, P in zip(row["run"].stretch, row["run"].nominal_stress))
    return write_rows(path, UNIAXIAL_COLUMNS, rows)


def write_cycles(result, path):
    rows = zip(result.cycle, (rec.t for rec in result.history), result.stretch, result.load)
    return write_rows(path, CYCLE_COLUMNS, rows)


def write_cycle_summary(result, path):
    area, res, inc = result.hysteresis(), result.residual_strain(), result.residual_increments()
    return write_rows(path, CYCLE_SUMMARY_COLUMNS, zip(range(len(area)), area, res, inc))


def write_darcy(sweep, path):
    y = sweep.deviations()
    dev = sweep.dimensional_deviation()
    rows = ((pt.delta_p, f, pt.v_rf, pt.linear_velocity, yi, di, pt.steady_time)
            for pt, f, yi, di in zip(sweep.points, sweep.fractions(), y, dev))
    return write_rows(path, DARCY_COLUMNS, rows)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    return value


def write_manifest(run_dir, command, resolved_config, summary=None, conventions=None):
    """run_manifest.json: the resolved config plus a summary of the measured results."""
    manifest = {
        "command": command,
        "created": datetime.now().isoformat(timespec="seconds"),
        "config": resolved_config,
        "conventions": conventions or {},
        "summary": summary or {},
    }
    path = os.path.join(run_dir, config.MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(manifest), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote %s", path)
    return path


# --- PDF verification report ---
class VerificationReport(FPDF):
    def __init__(self, title, **kwargs):
        super().__init__(**kwargs)
        self.report_title = title

    def header(self):
        self.set_font(style='I', size=8)
        page_w = self.w - self.l_margin - self.r_margin
        self.cell(page_w / 2, 10, self.report_title, border=0, align='L')
        generation_date = datetime.now().strftime("%d.%m.%Y")
        self.cell(page_w / 2, 10, f"Generated: {generation_date}", border=0, align='R',
                  new_x=XPos.LMARGIN, new_y=YPos.NEXT)
        self.ln(2)
        self.set_draw_color(180, 180, 180)
        self.set_line_width(config.PDF_DIVIDER_THICKNESS)
        self.line(self.l_margin, self.get_y(), self.w - self.r_margin, self.get_y())
        self.ln(5)

    def add_verdict(self, passed, text):
        self.set_font(self.font_family, 'B', config.PDF_FONT_SIZE_HEADER)
        if passed:
            self.set_text_color(0, 120, 0)
        else:
            self.set_text_color(180, 0, 0)
        self.cell(0, 8, f"{'PASS' if passed else 'FAIL'}: {text}", new_x=XPos.LMARGIN, new_y=YPos.NEXT, align='L')
        self.set_text_color(0, 0, 0)
        self.ln(4)

    def add_details(self, details):
        """Label/value block, one line per entry."""
        page_width = self.w - self.l_margin - self.r_margin
        value_width = page_width - config.PDF_LABEL_WIDTH
        for label, value in formatting.format_summary(details).items():
            self.set_x(self.l_margin)
            start_y = self.get_y()
            self.set_font(self.font_family, 'B', config.PDF_FONT_SIZE_BODY)
            self.multi_cell(config.PDF_LABEL_WIDTH, config.PDF_LINE_HEIGHT, f"{label}:",
                            border=0, align='L', new_x=XPos.RIGHT, new_y=YPos.TOP)
            label_end_y = self.get_y()
            self.set_xy(self.l_margin + config.PDF_LABEL_WIDTH, start_y)
            self.set_font(self.font_family, '', config.PDF_FONT_SIZE_BODY)
            self.multi_cell(value_width, config.PDF_LINE_HEIGHT, value,
                            border=0, align='L', new_x=XPos.LMARGIN, new_y=YPos.NEXT)
            self.set_y(max(label_end_y, self.get_y(), start_y + config.PDF_LINE_HEIGHT))
        self.ln(config.PDF_DIVIDER_MARGIN)

    def add_table(self, headers, rows):
        page_width = self.w - self.l_margin - self.r_margin
        col_w = page_width / len(headers)
        self.set_font(self.font_family, 'B', config.PDF_FONT_SIZE_BODY)
        for h in headers:
            self.cell(col_w, config.PDF_LINE_HEIGHT, str(h), border='B', align='L')
        self.ln(config.PDF_LINE_HEIGHT)
        self.set_font(self.font_family, '', config.PDF_FONT_SIZE_BODY)
        for row in rows:
            for v in row:
                self.cell(col_w, config.PDF_LINE_HEIGHT, v if isinstance(v, str) else formatting.format_number(v),
                          border=0, align='L')
            self.ln(config.PDF_LINE_HEIGHT)


def _select_font(pdf):
    """DejaVu when all four font files are bundled, else the core fallback."""
    family = config.PDF_FONT_FALLBACK
    try:
        paths = {style: get_resource_path(p) for style, p in (('', config.FONT_REGULAR_PATH),
                                                               ('B', config.FONT_BOLD_PATH),
                                                               ('I', config.FONT_ITALIC_PATH),
                                                               ('BI', config.FONT_BOLD_ITALIC_PATH))}
        if all(os.path.exists(p) for p in paths.values()):
            for style, p in paths.items():
                pdf.add_font(config.PDF_FONT_NAME_DEJAVU, style, p)
            family = config.PDF_FONT_NAME_DEJAVU
        else:
            logger.info("DejaVu font files not found in '%s'; using %s", config.FONT_DIR, family)
    except Exception as font_err:
        logger.warning("Warning: failed to load DejaVu font (%s); using %s", font_err, family)
    return family


def create_verification_pdf(title, passed, verdict, details, headers, rows, output_filename):
    """Writes a one-section verification report; returns True on success."""
    try:
        pdf = VerificationReport(title)
        pdf.set_font(_select_font(pdf), '', config.PDF_FONT_SIZE_BODY)
        pdf.set_margins(left=15, top=15, right=15)
        pdf.set_auto_page_break(auto=True, margin=15)
        pdf.add_page()
        pdf.set_font(pdf.font_family, 'B', config.PDF_FONT_SIZE_TITLE)
        pdf.cell(0, 10, title, new_x=XPos.LMARGIN, new_y=YPos.NEXT, align='L')
        pdf.add_verdict(passed, verdict)
        pdf.add_details(details)
        if rows:
            pdf.add_table(headers, rows)
        pdf.output(output_filename)
        logger.info("PDF report exported successfully to '%s'", output_filename)
        return True
    except Exception as e:
        logger.error("An error occurred during PDF generation: %s", e)
        return False
