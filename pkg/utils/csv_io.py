"""
CSV ingest and report writers.

Dialect: comma separated, UTF-8, '.' decimal point. A first row whose first
cell is not numeric is a header; a first column whose first data cell is
not numeric holds row labels.
"""

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from models.bounds import HypothesisSet
from models.dataset import Dataset, StatField
from utils.errors import DimensionMismatchError, InputParseError

PathLike = Union[str, Path]


class CsvMatrix(NamedTuple):
    values: np.ndarray
    column_labels: Optional[List[str]]
    row_labels: Optional[List[str]]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def parse_csv(text: str, source: str = "<input>") -> CsvMatrix:
    """Parse a numeric matrix with an optional header row and label column"""
    rows = [
        (line_no, row)
        for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1)
        if row and any(cell.strip() for cell in row)
    ]
    if not rows:
        raise InputParseError("file contains no data", file=source)

    header = None
    first_line, first_row = rows[0]
    if not _is_number(first_row[0].strip()):
        header = [cell.strip() for cell in first_row]
        rows = rows[1:]
        if not rows:
            raise InputParseError("file has a header but no data rows", file=source)

    has_row_labels = not _is_number(rows[0][1][0].strip())
    offset = 1 if has_row_labels else 0
    width = len(rows[0][1]) - offset
    if width < 1:
        raise InputParseError("no numeric columns", file=source, line=rows[0][0])

    values = np.empty((len(rows), width))
    row_labels = [] if has_row_labels else None
    for i, (line_no, row) in enumerate(rows):
        if len(row) - offset != width:
            raise InputParseError(
                f"expected {width + offset} cells, found {len(row)}",
                file=source, line=line_no
            )
        if has_row_labels:
            row_labels.append(row[0].strip())
        for j, cell in enumerate(row[offset:]):
            try:
                value = float(cell.strip())
            except ValueError:
                raise InputParseError(
                    f"not a number: '{cell.strip()}'",
                    file=source, line=line_no, column=j + offset + 1
                ) from None
            if not math.isfinite(value):
                raise InputParseError(
                    f"non-finite value: '{cell.strip()}'",
                    file=source, line=line_no, column=j + offset + 1
                )
            values[i, j] = value

    column_labels = None
    if header is not None:
        column_labels = header[offset:] if len(header) == width + offset else header[-width:]
        if len(column_labels) != width:
            raise InputParseError(
                f"header has {len(header)} cells for {width} columns",
                file=source, line=first_line
            )
    return CsvMatrix(values, column_labels, row_labels)


def read_matrix(path: PathLike) -> CsvMatrix:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8-sig')
    except FileNotFoundError:
        raise InputParseError("file not found", file=str(path)) from None
    except UnicodeDecodeError as e:
        raise InputParseError(f"not UTF-8 text ({e.reason})", file=str(path)) from None
    return parse_csv(text, str(path))


def matrix_from_bytes(content: bytes, source: str) -> CsvMatrix:
    """Parse an uploaded CSV body"""
    try:
        text = content.decode('utf-8-sig')
    except UnicodeDecodeError as e:
        raise InputParseError(f"not UTF-8 text ({e.reason})", file=source) from None
    return parse_csv(text, source)


def build_dataset(
        design: CsvMatrix,
        response: CsvMatrix,
        contrasts: CsvMatrix,
        sources: Sequence[str] = ("design", "response", "contrasts"),
        transpose: bool = False
) -> Dataset:
    """
    Assemble a Dataset; transpose=True reads the response as points x subjects
    (genomics layout) and takes point labels from its row labels.
    """
    if transpose:
        response_values = response.values.T
        point_labels = response.row_labels
    else:
        response_values = response.values
        point_labels = response.column_labels

    try:
        return Dataset(
            design=design.values,
            response=response_values,
            contrasts=contrasts.values,
            point_labels=point_labels
        )
    except DimensionMismatchError as e:
        file = dict(zip(("design", "response", "contrasts"), sources)).get(e.file, e.file)
        raise DimensionMismatchError(e.message, file=file) from None


def load_dataset(
        design_path: PathLike,
        response_path: PathLike,
        contrasts_path: PathLike,
        transpose: bool = False
) -> Dataset:
    return build_dataset(
        read_matrix(design_path),
        read_matrix(response_path),
        read_matrix(contrasts_path),
        sources=(str(design_path), str(response_path), str(contrasts_path)),
        transpose=transpose
    )


def p_values_from_matrix(matrix: CsvMatrix, source: str = "<p-values>") -> Tuple[StatField, Optional[List[str]]]:
    """
    A single column is a flat vector of m p-values (labels from the row labels);
    a wider matrix holds one row per contrast and one column per point.
    """
    values = matrix.values
    if np.any((values < 0) | (values > 1)):
        row, col = np.argwhere((values < 0) | (values > 1))[0]
        raise InputParseError(
            f"p-value {values[row, col]} outside [0, 1] (data row {row + 1})",
            file=source
        )
    if values.shape[1] == 1:
        return StatField.from_p_values(values[:, 0]), matrix.row_labels
    return StatField.from_p_values(values), matrix.column_labels


def read_p_values(path: PathLike) -> Tuple[StatField, Optional[List[str]]]:
    return p_values_from_matrix(read_matrix(path), str(path))


def parse_subsets(
        text: str,
        n_contrasts: int,
        n_points: int,
        point_labels: Optional[Sequence[str]] = None,
        source: str = "<subsets>"
) -> List[HypothesisSet]:
    """
    One set per line: label,item,item,... where an item is a hypothesis id,
    a point label (every contrast at that point) or label@l (contrast l only).
    Blank lines and lines starting with '#' are skipped.
    """
    m = n_contrasts * n_points
    lookup = {label: v for v, label in enumerate(point_labels or [])}
    subsets = []
    for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not row[0].strip() or row[0].lstrip().startswith('#'):
            continue
        label = row[0].strip()
        ids = set()
        for col, raw in enumerate(row[1:], start=2):
            item = raw.strip()
            if not item:
                continue
            if item.isdigit():
                h = int(item)
                if h >= m:
                    raise InputParseError(
                        f"hypothesis id {h} out of range (m={m})",
                        file=source, line=line_no, column=col
                    )
                ids.add(h)
                continue
            name, _, contrast = item.partition('@')
            if name not in lookup:
                raise InputParseError(
                    f"unknown point label '{name}'", file=source, line=line_no, column=col
                )
            if contrast:
                if not contrast.isdigit() or int(contrast) >= n_contrasts:
                    raise InputParseError(
                        f"bad contrast index '{contrast}'", file=source, line=line_no, column=col
                    )
                ids.add(int(contrast) * n_points + lookup[name])
            else:
                ids.update(l * n_points + lookup[name] for l in range(n_contrasts))
        subsets.append(HypothesisSet(indices=sorted(ids), label=label))
    return subsets


def read_subsets(
        path: PathLike,
        n_contrasts: int,
        n_points: int,
        point_labels: Optional[Sequence[str]] = None
) -> List[HypothesisSet]:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8-sig')
    except FileNotFoundError:
        raise InputParseError("file not found", file=str(path)) from None
    return parse_subsets(text, n_contrasts, n_points, point_labels, source=str(path))


def _atomic_write(path: PathLike, text: str) -> None:
    """Write through a temporary file in the target directory, then rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path: PathLike, payload: Dict[str, Any]) -> None:
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv_atomic(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(value) for value in row])
    _atomic_write(path, buffer.getvalue())
