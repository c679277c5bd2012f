"""Byte-stable writers for CSV, JSON, SVG and PNG outputs.

Numbers are printed with 6 significant digits, CSV uses LF line endings and
a ``# key=value`` comment header echoing the resolved run configuration.
Every file is written to a temporary sibling and renamed into place.
"""

import io
import json
import math
import os
import tempfile
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from PIL import Image, ImageDraw

from . import __version__
from .errors import UnwritableOutput
from .imageproc import histogram_stretch

SVG_WIDTH, SVG_HEIGHT = 960, 540
_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
]


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        text = f"{value:.6g}"
        return "0" if text == "-0" else text
    if isinstance(value, (tuple, list)):
        return "|".join(fmt(v) for v in value)
    return str(value)


def write_bytes_atomic(path, data):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise UnwritableOutput(f"cannot write {path}: {exc}") from None
    return path


def write_text_atomic(path, text):
    return write_bytes_atomic(path, text.encode("utf-8"))


def config_header(command, config):
    lines = [f"# droplens {__version__} {command}"]
    for key in sorted(config):
        lines.append(f"# {key}={fmt(config[key])}")
    return lines


def csv_text(header, rows, command=None, config=None):
    lines = config_header(command, config) if command is not None else []
    lines.append(",".join(header))
    for row in rows:
        cells = [fmt(v) for v in row]
        for cell in cells:
            if "," in cell or "\n" in cell:
                raise ValueError(f"CSV cell {cell!r} would need quoting")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, command=None, config=None):
    return write_text_atomic(path, csv_text(header, rows, command, config))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return fmt(value)
        return float(fmt(value))
    return obj


def json_text(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    return write_text_atomic(path, json_text(obj))


def png_bytes(image):
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


# SVG ---------------------------------------------------------------------

_MARGIN = dict(left=80, right=30, top=50, bottom=60)


def _svg_open(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{SVG_WIDTH // 2}" y="28" text-anchor="middle" font-family="sans-serif" '
        f'font-size="18">{escape(title)}</text>',
    ]


def _plot_box():
    x0 = _MARGIN["left"]
    y0 = _MARGIN["top"]
    return x0, y0, SVG_WIDTH - _MARGIN["right"] - x0, SVG_HEIGHT - _MARGIN["bottom"] - y0


def line_plot_svg(xs, ys, title, x_label, y_label, marker=None):
    """Line plot with min/max axis labels and an optional ``(x, y)`` marker."""
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    bx, by, bw, bh = _plot_box()
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return bx + (x - x_lo) / (x_hi - x_lo) * bw

    def py(y):
        return by + bh - (y - y_lo) / (y_hi - y_lo) * bh

    parts = _svg_open(title)
    parts += _axes(bx, by, bw, bh, x_lo, x_hi, y_lo, y_hi, x_label, y_label)
    if xs:
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{points}"/>')
    if marker is not None:
        mx, my = marker
        parts.append(
            f'<circle cx="{px(mx):.2f}" cy="{py(my):.2f}" r="5" fill="none" stroke="#c0392b" '
            f'stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{px(mx) + 8:.2f}" y="{py(my) - 8:.2f}" font-family="sans-serif" '
            f'font-size="12" fill="#c0392b">peak {fmt(my)} @ {fmt(mx)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _axes(bx, by, bw, bh, x_lo, x_hi, y_lo, y_hi, x_label, y_label):
    font = 'font-family="sans-serif" font-size="12"'
    return [
        f'<line x1="{bx}" y1="{by + bh}" x2="{bx + bw}" y2="{by + bh}" stroke="black"/>',
        f'<line x1="{bx}" y1="{by}" x2="{bx}" y2="{by + bh}" stroke="black"/>',
        f'<text x="{bx}" y="{by + bh + 18}" text-anchor="start" {font}>{fmt(x_lo)}</text>',
        f'<text x="{bx + bw}" y="{by + bh + 18}" text-anchor="end" {font}>{fmt(x_hi)}</text>',
        f'<text x="{bx - 6}" y="{by + bh}" text-anchor="end" {font}>{fmt(y_lo)}</text>',
        f'<text x="{bx - 6}" y="{by + 12}" text-anchor="end" {font}>{fmt(y_hi)}</text>',
        f'<text x="{bx + bw / 2:.1f}" y="{SVG_HEIGHT - 15}" text-anchor="middle" {font}>'
        f"{escape(x_label)}</text>",
        f'<text x="20" y="{by + bh / 2:.1f}" text-anchor="middle" {font} '
        f'transform="rotate(-90 20 {by + bh / 2:.1f})">{escape(y_label)}</text>',
    ]


def bar_chart_svg(labels, values, title, y_label):
    bx, by, bw, bh = _plot_box()
    values = [float(v) for v in values]
    y_hi = max(values) if values and max(values) > 0 else 1.0
    parts = _svg_open(title)
    parts += _axes(bx, by, bw, bh, 0, len(values), 0.0, y_hi, "mask", y_label)[:2]
    font = 'font-family="sans-serif" font-size="12"'
    parts.append(f'<text x="{bx - 6}" y="{by + bh}" text-anchor="end" {font}>0</text>')
    parts.append(f'<text x="{bx - 6}" y="{by + 12}" text-anchor="end" {font}>{fmt(y_hi)}</text>')
    n = max(len(values), 1)
    slot = bw / n
    for i, (label, value) in enumerate(zip(labels, values)):
        h = max(value, 0.0) / y_hi * bh
        x = bx + i * slot + slot * 0.15
        parts.append(
            f'<rect x="{x:.2f}" y="{by + bh - h:.2f}" width="{slot * 0.7:.2f}" height="{h:.2f}" '
            f'fill="#1f4e9c"/>'
        )
        cx = bx + (i + 0.5) * slot
        parts.append(f'<text x="{cx:.2f}" y="{by + bh + 18}" text-anchor="middle" {font}>'
                     f"{escape(label)}</text>")
        parts.append(f'<text x="{cx:.2f}" y="{by + bh - h - 4:.2f}" text-anchor="middle" {font}>'
                     f"{fmt(value)}</text>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# raster ------------------------------------------------------------------

def montage_layout(n_panels, panel_shape, columns, pad):
    """Top-left ``(row, col)`` pixel offset of every panel, plus canvas shape."""
    h, w = panel_shape
    columns = max(1, min(columns, n_panels))
    rows = math.ceil(n_panels / columns)
    offsets = [(pad + (i // columns) * (h + pad), pad + (i % columns) * (w + pad))
               for i in range(n_panels)]
    canvas = (pad + rows * (h + pad), pad + columns * (w + pad))
    return offsets, canvas


def montage_image(frames, indices, columns=4, pad=2, saturation_fraction=0.005):
    frames = [frames[i] for i in indices]
    offsets, canvas_shape = montage_layout(len(frames), frames[0].shape, columns, pad)
    canvas = np.full(canvas_shape, 128, dtype=np.uint8)
    h, w = frames[0].shape
    for frame, (r, c) in zip(frames, offsets):
        canvas[r : r + h, c : c + w] = histogram_stretch(frame, saturation_fraction)
    return canvas, offsets


def overlay_image(frame, tracks):
    """Paint every track's centroid path onto ``frame`` (RGB)."""
    rgb = Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="L").convert("RGB")
    draw = ImageDraw.Draw(rgb)
    for track in tracks:
        color = _PALETTE[track.track_id % len(_PALETTE)]
        path = [(round(x, 2), round(y, 2)) for x, y in track.path]
        if len(path) > 1:
            draw.line(path, fill=color, width=1)
        x, y = path[-1]
        draw.ellipse([x - 2, y - 2, x + 2, y + 2], outline=color)
    return rgb
