"""The run-log CSV contract, duplicated from the producer on purpose.

The simulator and this package share a file format, not code.  Column
names and order below must match the producer's header byte for byte;
`load_table` rejects anything else.
"""

__all__ = ["CSV_COLUMNS", "X_AXES", "SUPPORTED_VERSION", "PlotError", "SchemaError", "load_table"]

CSV_COLUMNS = (
    "schema_version",
    "t",
    "payload_words_outer",
    "payload_words_inner_y",
    "payload_words_inner_z",
    "payload_words_total",
    "wall_seconds",
    "omega1_outer",
    "omega2_outer",
    "value_surrogate",
    "grad_norm_oracle",
    "tracker_norm",
    "train_loss",
    "val_loss",
    "val_accuracy",
)

_INT_COLUMNS = {
    "schema_version",
    "t",
    "payload_words_outer",
    "payload_words_inner_y",
    "payload_words_inner_z",
    "payload_words_total",
}

# columns that make sense on a horizontal axis; everything else is a y
X_AXES = ("payload_words_total", "t", "wall_seconds")

SUPPORTED_VERSION = 1


class PlotError(ValueError):
    """Anything that prevents a figure from being drawn."""


class SchemaError(PlotError):
    """Input file does not follow the run-log CSV contract."""


def load_table(path) -> dict:
    """Parse one run log into {column: list of values}.

    Missing cells come back as None.  The header must equal the schema
    exactly; a mismatched header, a short row, or a schema_version other
    than the supported one is rejected with the file named.
    """
    path = str(path)
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header.split(",") != list(CSV_COLUMNS):
            raise SchemaError(
                f"{path}: header does not match the run-log schema; "
                f"expected {','.join(CSV_COLUMNS)!r}, got {header!r}"
            )
        table = {name: [] for name in CSV_COLUMNS}
        for ln, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(CSV_COLUMNS):
                raise SchemaError(
                    f"{path}: line {ln}: expected {len(CSV_COLUMNS)} cells, got {len(cells)}"
                )
            for name, cell in zip(CSV_COLUMNS, cells):
                if cell == "":
                    table[name].append(None)
                    continue
                try:
                    value = int(cell) if name in _INT_COLUMNS else float(cell)
                except ValueError as e:
                    raise SchemaError(f"{path}: line {ln}: column {name}: {e}") from None
                table[name].append(value)

    versions = {v for v in table["schema_version"] if v is not None}
    if len(versions) > 1:
        raise SchemaError(f"{path}: mixed schema_version values {sorted(versions)}")
    if versions and versions != {SUPPORTED_VERSION}:
        raise SchemaError(
            f"{path}: unsupported schema version {versions.pop()}; "
            f"this reader understands version {SUPPORTED_VERSION}"
        )
    return table
