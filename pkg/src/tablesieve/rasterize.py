"""Built-in table rasterizer, callable as a renderer subprocess:

    python -m tablesieve.rasterize --format png --quality 100 in.html out.png

Draws the first table in the input document with a simple box layout:
bordered cells when the table declares a border, shaded header cells,
link text in blue, images and form controls as placeholder boxes. Not a
browser; meant for environments without one, and honors the same CLI
contract so the two are interchangeable.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from .errors import TableParseError
from .table_model import TableGrid, parse_table

CANVAS_MAX_WIDTH = 1024
CELL_PAD = 6
ROW_HEIGHT = 26
MIN_COL_WIDTH = 24
MAX_COL_WIDTH = 240
IMG_BOX = (30, 16)
FORM_BOX = (36, 16)

WHITE = (255, 255, 255)
BLACK = (20, 20, 20)
BORDER = (40, 40, 40)
GRID = (190, 190, 190)
HEADER_BG = (229, 229, 229)
LINK_BLUE = (0, 0, 238)
IMG_FILL = (204, 204, 204)
IMG_EDGE = (130, 130, 130)
FORM_EDGE = (90, 90, 90)
NESTED_BG = (244, 244, 244)


def _load_font():
    for candidate in (
        "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
        "/usr/share/fonts/TTF/DejaVuSans.ttf",
        "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    ):
        try:
            return ImageFont.truetype(candidate, 13)
        except OSError:
            continue
    return ImageFont.load_default()


def _text_width(font, text: str) -> int:
    if not text:
        return 0
    box = font.getbbox(text)
    return box[2] - box[0]


def _column_widths(grid: TableGrid, font) -> list[int]:
    widths = []
    for c in range(grid.n_cols):
        need = MIN_COL_WIDTH
        for r in range(grid.n_rows):
            cell = grid.cells[r][c]
            w = _text_width(font, cell.text)
            w += cell.n_images * (IMG_BOX[0] + 4)
            w += cell.n_form_controls * (FORM_BOX[0] + 4)
            if cell.contains_table:
                w = max(w, 60)
            # spanned content spreads across its columns
            need = max(need, min(w // max(cell.colspan, 1) + 2 * CELL_PAD, MAX_COL_WIDTH))
        widths.append(need)
    total = sum(widths)
    if total > CANVAS_MAX_WIDTH:
        factor = CANVAS_MAX_WIDTH / total
        widths = [max(12, int(w * factor)) for w in widths]
    return widths


def rasterize(html: str, out_path: str) -> None:
    grid = parse_table(html)
    if grid.n_rows < 1 or grid.n_cols < 1:
        raise TableParseError("table has zero area")
    bordered = bool(re.search(r"<table[^>]*\bborder\s*=\s*['\"]?[1-9]", html, re.I))
    font = _load_font()
    col_w = _column_widths(grid, font)
    col_x = [1]
    for w in col_w:
        col_x.append(col_x[-1] + w)
    width = col_x[-1] + 1
    height = grid.n_rows * ROW_HEIGHT + 2
    img = Image.new("RGB", (width, height), WHITE)
    draw = ImageDraw.Draw(img)

    for r in range(grid.n_rows):
        for c in range(grid.n_cols):
            if not grid.is_origin[r][c]:
                continue
            cell = grid.cells[r][c]
            c_end = min(c + cell.colspan, grid.n_cols)
            r_end = min(r + cell.rowspan, grid.n_rows)
            x0, y0 = col_x[c], 1 + r * ROW_HEIGHT
            x1, y1 = col_x[c_end], 1 + r_end * ROW_HEIGHT
            if cell.is_header:
                draw.rectangle([x0, y0, x1 - 1, y1 - 1], fill=HEADER_BG)
            elif cell.contains_table:
                draw.rectangle([x0, y0, x1 - 1, y1 - 1], fill=NESTED_BG)
            if bordered:
                draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=BORDER)
            cursor = x0 + CELL_PAD
            ty = y0 + (ROW_HEIGHT - 13) // 2
            if cell.text:
                color = LINK_BLUE if cell.n_links else BLACK
                draw.text((cursor, ty), cell.text, fill=color, font=font)
                if cell.n_links:
                    tw = _text_width(font, cell.text)
                    draw.line([cursor, ty + 14, cursor + tw, ty + 14], fill=LINK_BLUE)
                cursor += _text_width(font, cell.text) + 4
            for _ in range(cell.n_images):
                draw.rectangle(
                    [cursor, ty, cursor + IMG_BOX[0], ty + IMG_BOX[1]],
                    fill=IMG_FILL,
                    outline=IMG_EDGE,
                )
                draw.line([cursor, ty, cursor + IMG_BOX[0], ty + IMG_BOX[1]], fill=IMG_EDGE)
                cursor += IMG_BOX[0] + 4
            for _ in range(cell.n_form_controls):
                draw.rectangle(
                    [cursor, ty, cursor + FORM_BOX[0], ty + FORM_BOX[1]],
                    outline=FORM_EDGE,
                )
                cursor += FORM_BOX[0] + 4
    if bordered:
        draw.rectangle([0, 0, width - 1, height - 1], outline=BORDER)
    else:
        # faint grid so structure is visible even without borders
        for x in col_x:
            draw.line([x, 0, x, height], fill=GRID)
    img.save(out_path, format="PNG")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tablesieve.rasterize", description=__doc__
    )
    parser.add_argument("--format", default="png", choices=["png"])
    parser.add_argument("--quality", type=int, default=100)
    parser.add_argument("input_html")
    parser.add_argument("output_image")
    args = parser.parse_args(argv)
    try:
        html = Path(args.input_html).read_text(errors="replace")
        rasterize(html, args.output_image)
    except TableParseError as exc:
        print(f"rasterize: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"rasterize: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
