"""Deterministic rasterizer and HTML emitter for DSL programs."""
from dataclasses import dataclass

import numpy as np

from .dsl import Leaf

COLORS = {
    "label": (200, 200, 200),
    "btn": (66, 133, 244),
    "switch": (52, 168, 83),
    "slider": (251, 188, 5),
    "img": (234, 67, 53),
    "text": (156, 39, 176),
    "check": (0, 172, 193),
}
MARGIN = 2
MIN_LEAF = 4


class TooSmall(ValueError):
    pass


class PpmFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int


def _split(extent, n):
    """Even integer partition of ``extent`` with the remainder on the last part."""
    base = extent // n
    sizes = [base] * n
    sizes[-1] += extent - base * n
    return sizes


def _layout(node, rect, out):
    if isinstance(node, Leaf):
        inner = Rect(rect.x + MARGIN, rect.y + MARGIN, rect.w - 2 * MARGIN, rect.h - 2 * MARGIN)
        if inner.w < MIN_LEAF or inner.h < MIN_LEAF:
            raise TooSmall(f"{node.tag} rect {inner.w}x{inner.h} is below {MIN_LEAF}x{MIN_LEAF}")
        out.append((node.tag, inner))
        return
    if not node.children:
        return
    vertical = node.tag == "stack"
    sizes = _split(rect.h if vertical else rect.w, len(node.children))
    offset = 0
    for child, size in zip(node.children, sizes):
        if vertical:
            sub = Rect(rect.x, rect.y + offset, rect.w, size)
        else:
            sub = Rect(rect.x + offset, rect.y, size, rect.h)
        offset += size
        _layout(child, sub, out)


def layout(ast, width, height):
    """Leaf rectangles in document order.

    ``stack`` splits its rect vertically among children, ``row`` splits
    horizontally; leaf rects are inset by a 2px margin.
    """
    if width < 16 or height < 16:
        raise TooSmall("image must be at least 16x16")
    out = []
    _layout(ast, Rect(0, 0, width, height), out)
    return out


def row_rects(ast, width, height):
    sizes = _split(height, len(ast.children))
    rects, y = [], 0
    for s in sizes:
        rects.append(Rect(0, y, width, s))
        y += s
    return rects


def _glyph(img, tag, r):
    x0, y0, x1, y1 = r.x, r.y, r.x + r.w, r.y + r.h
    if tag == "btn":
        img[y0, x0:x1] = 0
        img[y1 - 1, x0:x1] = 0
        img[y0:y1, x0] = 0
        img[y0:y1, x1 - 1] = 0
    elif tag == "slider":
        top = y0 + (r.h - 2) // 2
        img[top:top + 2, x0:x1] = 0
    elif tag == "switch":
        img[y0:y1, x0:x0 + r.w // 2] = 0
    elif tag == "img":
        s = min(4, r.w, r.h)
        for cy in (y0, y1 - s):
            for cx in (x0, x1 - s):
                img[cy:cy + s, cx:cx + s] = 0
    elif tag == "text":
        for k in (1, 2, 3):
            img[y0 + r.h * k // 4, x0:x1] = 0
    elif tag == "label":
        img[y1 - 1, x0:x1] = 0
    elif tag == "check":
        s = min(r.w, r.h)
        cx = x0 + (r.w - s) // 2
        cy = y0 + (r.h - s) // 2
        i = np.arange(s)
        img[cy + i, cx + i] = 0
        img[cy + i, cx + s - 1 - i] = 0


def render(ast, width, height):
    """Rasterize ``ast`` into an ``(height, width, 3)`` uint8 array."""
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    for tag, r in layout(ast, width, height):
        img[r.y:r.y + r.h, r.x:r.x + r.w] = COLORS[tag]
        _glyph(img, tag, r)
    return img


def export_html(ast):
    lines = []

    def emit(node, depth):
        pad = "  " * depth
        if isinstance(node, Leaf):
            lines.append(f'{pad}<div class="{node.tag}"></div>')
            return
        lines.append(f'{pad}<div class="{node.tag}">')
        for child in node.children:
            emit(child, depth + 1)
        lines.append(f"{pad}</div>")

    emit(ast, 0)
    return "\n".join(lines) + "\n"


def encode_ppm(img):
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def write_ppm(path, img):
    with open(path, "wb") as f:
        f.write(encode_ppm(img))


def _header_fields(data, magic, count):
    if not data.startswith(magic):
        raise PpmFormatError(f"missing {magic.decode()} magic")
    fields = []
    pos = len(magic)
    while len(fields) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PpmFormatError("malformed header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates header from raster
    return fields, pos + 1


def decode_ppm(data):
    (w, h, maxval), pos = _header_fields(data, b"P6", 3)
    if maxval != 255:
        raise PpmFormatError(f"unsupported maxval {maxval}")
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise PpmFormatError("truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path):
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def encode_pgm(gray):
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def decode_pgm(data):
    (w, h, maxval), pos = _header_fields(data, b"P5", 3)
    raster = data[pos:pos + w * h]
    if maxval != 255 or len(raster) != w * h:
        raise PpmFormatError("bad PGM")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()
