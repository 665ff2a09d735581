import itertools

import pytest

from tablesieve.errors import TableParseError
from tablesieve.table_model import (
    Cell,
    parse_table,
    passes_size_filter,
    to_html,
    visible_text,
)


def texts(grid):
    return [[grid.cells[r][c].text for c in range(grid.n_cols)] for r in range(grid.n_rows)]


def test_simple_2x2():
    grid = parse_table("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>")
    assert (grid.n_rows, grid.n_cols) == (2, 2)
    assert texts(grid) == [["a", "b"], ["c", "d"]]
    assert all(all(row) for row in grid.is_origin)


def test_colspan_expansion():
    grid = parse_table(
        '<table><tr><td colspan="2">a</td></tr><tr><td>b</td><td>c</td></tr></table>'
    )
    assert (grid.n_rows, grid.n_cols) == (2, 2)
    assert texts(grid) == [["a", "a"], ["b", "c"]]
    assert grid.is_origin[0] == [True, False]
    assert grid.cells[0][0] is grid.cells[0][1]
    assert len(grid.origin_cells()) == 3


def test_rowspan_expansion():
    grid = parse_table(
        '<table><tr><td rowspan="2">a</td><td>b</td></tr><tr><td>c</td></tr></table>'
    )
    assert (grid.n_rows, grid.n_cols) == (2, 2)
    assert texts(grid) == [["a", "b"], ["a", "c"]]
    assert grid.is_origin[1] == [False, True]


def test_rowspan_clamped_to_row_count():
    # The 99-row span ends at the table's real last row; "b" shifts right
    # past the occupied (1,0) slot, exactly as a browser lays it out.
    grid = parse_table('<table><tr><td rowspan="99">a</td></tr><tr><td>b</td></tr></table>')
    assert (grid.n_rows, grid.n_cols) == (2, 2)
    assert texts(grid) == [["a", ""], ["a", "b"]]
    assert not grid.is_origin[1][0]


def test_span_attribute_limits():
    grid = parse_table('<table><tr><td colspan="5000">a</td><td>b</td></tr></table>')
    assert grid.cells[0][0].colspan == 1000
    assert grid.n_cols == 1001
    grid = parse_table('<table><tr><td colspan="junk">a</td><td colspan="-3">b</td></tr></table>')
    assert grid.cells[0][0].colspan == 1
    assert grid.cells[0][1].colspan == 1


def test_collision_shifts_right():
    # The rowspan from row 0 occupies (1,0); row 1's first cell shifts to col 1.
    grid = parse_table(
        '<table><tr><td rowspan="2">a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>'
    )
    assert grid.n_cols == 3
    assert texts(grid)[1] == ["a", "c", "d"]


def test_ragged_rows_padded_with_empty_origin_cells():
    grid = parse_table("<table><tr><td>a</td><td>b</td></tr><tr><td>c</td></tr></table>")
    assert (grid.n_rows, grid.n_cols) == (2, 2)
    pad = grid.cells[1][1]
    assert pad.is_empty and grid.is_origin[1][1]
    assert len(grid.origin_cells()) == 4


def test_nested_table_flags_and_text_exclusion():
    grid = parse_table(
        "<table><tr><td><table><tr><td>inner</td></tr></table></td><td>x</td></tr>"
        "<tr><td>y</td><td>z</td></tr></table>"
    )
    assert grid.has_nested_table
    cell = grid.cells[0][0]
    assert cell.contains_table
    assert cell.text == ""
    assert "inner" not in visible_text(grid)


def test_nested_content_not_counted_in_parent():
    grid = parse_table(
        '<table><tr><td><table><tr><td><a href="#">L</a><img src="x"></td></tr></table></td>'
        "<td>x</td></tr></table>"
    )
    cell = grid.cells[0][0]
    assert cell.n_links == 0 and cell.n_images == 0


def test_content_counts():
    grid = parse_table(
        '<table><tr><td><a href="/x">go</a><a name="anchor">no href</a></td>'
        '<td><img src="a"><img src="b"></td></tr>'
        "<tr><td><input><select></select><textarea></textarea><button></button></td>"
        "<td>plain</td></tr></table>"
    )
    assert grid.cells[0][0].n_links == 1  # anchors without href are not links
    assert grid.cells[0][1].n_images == 2
    assert grid.cells[1][0].n_form_controls == 4


def test_header_cells_and_caption_excluded():
    grid = parse_table(
        "<table><caption>Ignore me</caption><tr><th>H1</th><th>H2</th></tr>"
        "<tr><td>a</td><td>b</td></tr></table>"
    )
    assert grid.cells[0][0].is_header and grid.cells[0][1].is_header
    assert not grid.cells[1][0].is_header
    assert "Ignore" not in visible_text(grid)


def test_script_and_style_content_dropped():
    grid = parse_table(
        "<table><tr><td><script>var x = 'hidden';</script>shown</td>"
        "<td><style>.c{}</style>b</td></tr></table>"
    )
    assert texts(grid) == [["shown", "b"]]


def test_whitespace_normalized_and_entities_decoded():
    grid = parse_table("<table><tr><td>  a&amp;b \n\t c  </td><td>x</td></tr></table>")
    assert grid.cells[0][0].text == "a&b c"


def test_malformed_html_recovery():
    # Unclosed cells and rows, stray cell without a row.
    grid = parse_table("<table><tr><td>a<td>b<tr><td>c</table>")
    assert (grid.n_rows, grid.n_cols) == (2, 2)
    assert texts(grid) == [["a", "b"], ["c", ""]]
    grid = parse_table("<table><td>orphan</td></table>")
    assert (grid.n_rows, grid.n_cols) == (1, 1)
    assert grid.cells[0][0].text == "orphan"


def test_unclosed_table_runs_to_end():
    grid = parse_table("<table><tr><td>a</td><td>b")
    assert (grid.n_rows, grid.n_cols) == (1, 2)
    assert texts(grid) == [["a", "b"]]


def test_sibling_table_ignored():
    grid = parse_table(
        "<table><tr><td>first</td><td>x</td></tr></table>"
        "<table><tr><td>second</td></tr></table>"
    )
    assert not grid.has_nested_table
    assert visible_text(grid) == "first x"


def test_no_table_raises():
    with pytest.raises(TableParseError):
        parse_table("<div>no tables here</div>")


def test_origin_plus_continuation_covers_grid():
    samples = [
        '<table><tr><td rowspan="2" colspan="2">a</td><td>b</td></tr>'
        "<tr><td>c</td></tr><tr><td>d</td><td>e</td><td>f</td></tr></table>",
        '<table><tr><td>a</td><td rowspan="3">b</td></tr><tr><td>c</td></tr></table>',
        "<table><tr><td>a</td></tr><tr><td>b</td><td>c</td><td>d</td></tr></table>",
    ]
    for html in samples:
        grid = parse_table(html)
        n_slots = sum(len(row) for row in grid.cells)
        assert n_slots == grid.n_rows * grid.n_cols
        n_continuation = sum(
            1 for r in range(grid.n_rows) for c in range(grid.n_cols) if not grid.is_origin[r][c]
        )
        assert len(grid.origin_cells()) + n_continuation == grid.n_rows * grid.n_cols


def test_serialize_reparse_is_identity():
    samples = [
        "<table><tr><td>a</td><td>b</td></tr><tr><td>c</td><td>d</td></tr></table>",
        '<table><tr><th colspan="2">head</th></tr><tr><td>1</td><td>2</td></tr></table>',
        '<table><tr><td rowspan="2">a</td><td><a href="#">x</a><img src="y"></td></tr>'
        "<tr><td><input></td></tr></table>",
        "<table><tr><td><table><tr><td>n</td></tr></table></td><td>t &amp; u</td></tr></table>",
        "<table><tr><td>a</td></tr><tr><td>b</td><td>c</td></tr></table>",
    ]
    for html in samples:
        grid = parse_table(html)
        again = parse_table(to_html(grid))
        assert again == grid
        assert parse_table(to_html(again)) == again


def test_size_filter_exhaustive_0_to_4():
    for n_rows, n_cols in itertools.product(range(5), range(5)):
        if n_rows == 0 or n_cols == 0:
            html = "<table></table>"
            grid = parse_table(html)
            assert not passes_size_filter(grid)
            continue
        rows = "".join(
            "<tr>" + "".join(f"<td>r{r}c{c}</td>" for c in range(n_cols)) + "</tr>"
            for r in range(n_rows)
        )
        grid = parse_table(f"<table>{rows}</table>")
        assert (grid.n_rows, grid.n_cols) == (n_rows, n_cols)
        assert passes_size_filter(grid) == (n_rows >= 2 and n_cols >= 2)


def test_empty_cell_detection():
    assert Cell().is_empty
    assert not Cell(text="x").is_empty
    assert not Cell(n_links=1).is_empty
    assert not Cell(contains_table=True).is_empty
    grid = parse_table("<table><tr><td></td><td> \n </td></tr><tr><td>a</td><td>b</td></tr></table>")
    assert grid.cells[0][0].is_empty and grid.cells[0][1].is_empty
