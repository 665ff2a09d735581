"""Parse raw ``<table>`` HTML into a normalized cell grid.

The grid is dense: rowspan/colspan are expanded so every (row, col) slot
holds a cell. A spanned cell occupies its origin slot plus continuation
slots that reference the same ``Cell`` object. Nested tables are not
descended into; they flag the containing cell and the grid instead.
"""

from __future__ import annotations

import html as html_lib
import json
from dataclasses import dataclass, field
from html.parser import HTMLParser

from .errors import TableParseError

# Attribute clamps per the HTML spec's own limits; they guard against
# pathological span values blowing up the dense matrix.
MAX_COLSPAN = 1000
MAX_ROWSPAN = 65534

FORM_CONTROL_TAGS = {"input", "select", "textarea", "button"}


@dataclass
class Cell:
    """One origin cell with whitespace-normalized text and content counts."""

    text: str = ""
    is_header: bool = False
    n_links: int = 0
    n_images: int = 0
    n_form_controls: int = 0
    rowspan: int = 1
    colspan: int = 1
    contains_table: bool = False

    @property
    def is_empty(self) -> bool:
        return (
            self.text == ""
            and self.n_links == 0
            and self.n_images == 0
            and self.n_form_controls == 0
            and not self.contains_table
        )


@dataclass(eq=False)
class TableGrid:
    """Dense span-expanded cell matrix for one table element."""

    cells: list[list[Cell]]
    is_origin: list[list[bool]]
    n_rows: int
    n_cols: int
    has_nested_table: bool
    raw_html: str = field(repr=False, default="")

    def __eq__(self, other: object) -> bool:
        # Structural equality; raw_html is provenance, not structure.
        if not isinstance(other, TableGrid):
            return NotImplemented
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and self.has_nested_table == other.has_nested_table
            and self.cells == other.cells
            and self.is_origin == other.is_origin
        )

    def origin_cells(self) -> list[Cell]:
        """Origin cells in row-major order (continuation slots skipped)."""
        out = []
        for r in range(self.n_rows):
            for c in range(self.n_cols):
                if self.is_origin[r][c]:
                    out.append(self.cells[r][c])
        return out

    def row(self, r: int) -> list[Cell]:
        return self.cells[r]

    def column(self, c: int) -> list[Cell]:
        return [self.cells[r][c] for r in range(self.n_rows)]

    def to_json_matrix(self) -> str:
        """Debug dump: JSON matrix of cell dicts with an origin marker."""
        matrix = []
        for r in range(self.n_rows):
            row = []
            for c in range(self.n_cols):
                cell = self.cells[r][c]
                row.append(
                    {
                        "text": cell.text,
                        "is_header": cell.is_header,
                        "n_links": cell.n_links,
                        "n_images": cell.n_images,
                        "n_form_controls": cell.n_form_controls,
                        "rowspan": cell.rowspan,
                        "colspan": cell.colspan,
                        "contains_table": cell.contains_table,
                        "origin": self.is_origin[r][c],
                    }
                )
            matrix.append(row)
        return json.dumps(matrix, ensure_ascii=False)


def _parse_span(value: str | None, clamp: int) -> int:
    try:
        n = int(str(value).strip())
    except (TypeError, ValueError):
        return 1
    if n < 1:
        return 1
    return min(n, clamp)


class _GridBuilder(HTMLParser):
    """Streaming builder for the outermost table in a fragment.

    Tracks table nesting depth so nested tables are skipped wholesale;
    they only set flags on the enclosing cell and grid. Malformed markup
    is recovered from the way browsers do: stray cells open an implicit
    row, a new cell closes the previous one.
    """

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.table_depth = 0
        self.done = False
        self.saw_table = False
        self.has_nested_table = False
        # occupancy: (row, col) -> (Cell, is_origin)
        self.slots: dict[tuple[int, int], tuple[Cell, bool]] = {}
        self.row_index = -1
        self.cursor = 0
        self.in_row = False
        self.in_cell = False
        self.in_caption = False
        self._skip_content = 0  # script/style nesting
        self._text_parts: list[str] = []
        self._cell: Cell | None = None

    # -- tag events -----------------------------------------------------

    def handle_starttag(self, tag: str, attrs) -> None:
        if self.done:
            return
        if tag in ("script", "style"):
            self._skip_content += 1
            return
        if tag == "table":
            if self.table_depth == 0:
                self.saw_table = True
            else:
                self.has_nested_table = True
                if self.table_depth == 1 and self._cell is not None:
                    self._cell.contains_table = True
            self.table_depth += 1
            return
        if self.table_depth != 1:
            return
        attrs_d = dict(attrs)
        if tag == "tr":
            self._start_row()
        elif tag in ("td", "th"):
            if not self.in_row:
                self._start_row()  # stray cell: implicit row
            if self.in_cell:
                self._end_cell()  # unclosed cell: implicit close
            self.in_cell = True
            self._text_parts = []
            self._cell = Cell(
                is_header=(tag == "th"),
                rowspan=_parse_span(attrs_d.get("rowspan"), MAX_ROWSPAN),
                colspan=_parse_span(attrs_d.get("colspan"), MAX_COLSPAN),
            )
        elif tag == "caption":
            self.in_caption = True
        elif self.in_cell and self._cell is not None:
            if tag == "a" and attrs_d.get("href") is not None:
                self._cell.n_links += 1
            elif tag == "img":
                self._cell.n_images += 1
            elif tag in FORM_CONTROL_TAGS:
                self._cell.n_form_controls += 1
            elif tag == "br":
                self._text_parts.append(" ")

    def handle_endtag(self, tag: str) -> None:
        if self.done:
            return
        if tag in ("script", "style"):
            if self._skip_content:
                self._skip_content -= 1
            return
        if tag == "table":
            if self.table_depth == 0:
                return
            self.table_depth -= 1
            if self.table_depth == 0 and self.saw_table:
                self._finish()
            return
        if self.table_depth != 1:
            return
        if tag in ("td", "th"):
            if self.in_cell:
                self._end_cell()
        elif tag == "tr":
            self._end_row()
        elif tag == "caption":
            self.in_caption = False

    def handle_data(self, data: str) -> None:
        if self.done or self._skip_content or self.in_caption:
            return
        if self.table_depth == 1 and self.in_cell:
            self._text_parts.append(data)

    # -- grid assembly ---------------------------------------------------

    def _start_row(self) -> None:
        if self.in_cell:
            self._end_cell()
        self.row_index += 1
        self.cursor = 0
        self.in_row = True

    def _end_row(self) -> None:
        if self.in_cell:
            self._end_cell()
        self.in_row = False

    def _end_cell(self) -> None:
        cell = self._cell
        assert cell is not None
        cell.text = " ".join("".join(self._text_parts).split())
        self._place(cell)
        self.in_cell = False
        self._cell = None
        self._text_parts = []

    def _place(self, cell: Cell) -> None:
        # Browser placement: shift right past slots taken by earlier spans,
        # then claim the span rectangle (existing occupants win collisions).
        row = self.row_index
        while (row, self.cursor) in self.slots:
            self.cursor += 1
        col = self.cursor
        for dr in range(cell.rowspan):
            for dc in range(cell.colspan):
                pos = (row + dr, col + dc)
                if pos not in self.slots:
                    self.slots[pos] = (cell, dr == 0 and dc == 0)
        self.cursor = col + cell.colspan

    def _finish(self) -> None:
        if self.in_cell:
            self._end_cell()
        self.in_row = False
        self.done = True

    def close(self) -> None:  # flush unclosed structures at EOF
        super().close()
        if self.saw_table and not self.done:
            self._finish()

    def build(self, raw_html: str) -> TableGrid:
        if not self.saw_table:
            raise TableParseError("no <table> element found")
        n_rows = self.row_index + 1
        # Rowspans may not extend the table past its last real row.
        kept = {pos: slot for pos, slot in self.slots.items() if pos[0] < n_rows}
        n_cols = 1 + max((c for _, c in kept), default=-1)
        if n_rows <= 0 or n_cols <= 0:
            return TableGrid([], [], 0, 0, self.has_nested_table, raw_html)
        cells: list[list[Cell]] = []
        origin: list[list[bool]] = []
        for r in range(n_rows):
            crow: list[Cell] = []
            orow: list[bool] = []
            for c in range(n_cols):
                slot = kept.get((r, c))
                if slot is None:
                    crow.append(Cell())  # padding: a real empty origin cell
                    orow.append(True)
                else:
                    crow.append(slot[0])
                    orow.append(slot[1])
            cells.append(crow)
            origin.append(orow)
        return TableGrid(cells, origin, n_rows, n_cols, self.has_nested_table, raw_html)


def parse_table(raw_html: str) -> TableGrid:
    """Parse the outermost ``<table>`` in ``raw_html`` into a dense grid.

    Raises TableParseError when no table element is present. Broken
    markup never raises; recovery follows browser conventions.
    """
    builder = _GridBuilder()
    builder.feed(raw_html)
    builder.close()
    return builder.build(raw_html)


def passes_size_filter(grid: TableGrid) -> bool:
    """Structural pre-filter: keep only tables with >= 2 rows and columns."""
    return grid.n_rows >= 2 and grid.n_cols >= 2


def visible_text(grid: TableGrid) -> str:
    """Origin-cell texts in row-major order, single-space separated."""
    return " ".join(c.text for c in grid.origin_cells() if c.text)


def to_html(grid: TableGrid) -> str:
    """Serialize back to minimal HTML that re-parses to an equal grid.

    Countable content (links, images, form controls, nested tables) is
    emitted as empty marker elements so the counts survive a round trip.
    """
    parts = ["<table>"]
    for r in range(grid.n_rows):
        parts.append("<tr>")
        for c in range(grid.n_cols):
            if not grid.is_origin[r][c]:
                continue
            cell = grid.cells[r][c]
            tag = "th" if cell.is_header else "td"
            attrs = ""
            if cell.rowspan > 1:
                attrs += f' rowspan="{cell.rowspan}"'
            if cell.colspan > 1:
                attrs += f' colspan="{cell.colspan}"'
            inner = html_lib.escape(cell.text)
            inner += '<a href="#"></a>' * cell.n_links
            inner += '<img src="#">' * cell.n_images
            inner += "<input>" * cell.n_form_controls
            if cell.contains_table:
                inner += "<table></table>"
            parts.append(f"<{tag}{attrs}>{inner}</{tag}>")
        parts.append("</tr>")
    parts.append("</table>")
    return "".join(parts)
