"""Run diagnostics, payload accounting, and the metrics CSV format.

The CSV schema is the package's wire format: fixed column order, one
row per outer round (plus the initialization row), floats serialized
with 17 significant digits so parsing reproduces every value bit for
bit.  Optional fields (oracle gradient norm, task metrics) are empty
cells, not zeros.
"""

import time
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np

from .errors import SchemaError

__all__ = [
    "SCHEMA_VERSION",
    "CSV_SCHEMA",
    "RoundRecord",
    "DiagnosticsSnapshot",
    "PayloadLedger",
    "snapshot_outer",
    "write_log",
    "read_log",
    "records_to_arrays",
    "CsvSink",
]

SCHEMA_VERSION = 1

CSV_SCHEMA = (
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
_OPTIONAL_COLUMNS = {"grad_norm_oracle", "train_loss", "val_loss", "val_accuracy"}


@dataclass(frozen=True)
class RoundRecord:
    """One CSV row.  Cumulative payload counters are split by channel:
    outer-loop exchanges vs the two lower-level solves."""

    t: int
    payload_words_outer: int
    payload_words_inner_y: int
    payload_words_inner_z: int
    payload_words_total: int
    wall_seconds: float
    omega1_outer: float
    omega2_outer: float
    value_surrogate: float
    grad_norm_oracle: float | None
    tracker_norm: float
    train_loss: float | None
    val_loss: float | None
    val_accuracy: float | None
    schema_version: int = SCHEMA_VERSION


@dataclass(frozen=True)
class DiagnosticsSnapshot:
    """Outer-loop health at one round.

    spread_x      ||X - mean||_F^2 over nodes (consensus error)
    spread_s      same for the hypergradient trackers
    value         objective value plus the weighted consensus penalties,
                  the quantity that should trend monotonically down
    tracker_norm  norm of the mean tracker, a gradient-norm stand-in
                  that needs no oracle
    """

    spread_x: float
    spread_s: float
    value: float
    tracker_norm: float


def snapshot_outer(
    x_rows: np.ndarray, s_rows: np.ndarray, value_part: float, eta_out: float
) -> DiagnosticsSnapshot:
    m = x_rows.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        x_bar = x_rows.mean(axis=0)
        s_bar = s_rows.mean(axis=0)
        spread_x = float(np.sum((x_rows - x_bar) ** 2))
        spread_s = float(np.sum((s_rows - s_bar) ** 2))
        return DiagnosticsSnapshot(
            spread_x=spread_x,
            spread_s=spread_s,
            value=value_part + spread_x / m + eta_out * spread_s / m,
            tracker_norm=float(np.linalg.norm(s_bar)),
        )


class PayloadLedger:
    """Double-entry word counter.

    Every message appends its word count to a per-channel record list
    and bumps a running total; ``audit`` recomputes the totals from the
    records and raises if the two disagree.
    """

    def __init__(self):
        self.records: dict[str, list[int]] = {}
        self.totals: dict[str, int] = {}

    def add(self, channel: str, words: int) -> None:
        if words < 0:
            raise ValueError(f"negative payload {words}")
        self.records.setdefault(channel, []).append(int(words))
        self.totals[channel] = self.totals.get(channel, 0) + int(words)

    def add_many(self, channel: str, words_each: int, count: int) -> None:
        """Record ``count`` messages of identical size."""
        if words_each < 0 or count < 0:
            raise ValueError(f"negative payload {words_each} x {count}")
        self.records.setdefault(channel, []).extend([int(words_each)] * count)
        self.totals[channel] = self.totals.get(channel, 0) + int(words_each) * count

    def message_count(self, channel: str) -> int:
        return len(self.records.get(channel, []))

    def total(self, channel: str) -> int:
        return self.totals.get(channel, 0)

    def grand_total(self) -> int:
        return sum(self.totals.values())

    def audit(self) -> None:
        for channel, recs in self.records.items():
            if sum(recs) != self.totals[channel]:
                raise AssertionError(
                    f"payload ledger mismatch on {channel!r}: "
                    f"running total {self.totals[channel]}, records sum {sum(recs)}"
                )


def _format_cell(name: str, value) -> str:
    if value is None:
        if name not in _OPTIONAL_COLUMNS:
            raise SchemaError(f"column {name} is required but missing")
        return ""
    if name in _INT_COLUMNS:
        return str(int(value))
    v = float(value)
    if not np.isfinite(v):
        raise SchemaError(f"non-finite value for column {name}")
    return f"{v:.17g}"


def _row_cells(rec: RoundRecord) -> list[str]:
    by_name = {f.name: getattr(rec, f.name) for f in dataclass_fields(rec)}
    return [_format_cell(name, by_name[name]) for name in CSV_SCHEMA]


class CsvSink:
    """Streaming writer; flushes every ``flush_every`` rows."""

    def __init__(self, path, flush_every: int = 50):
        self.path = path
        self.flush_every = flush_every
        self._fh = open(path, "w")
        self._fh.write(",".join(CSV_SCHEMA) + "\n")
        self._rows = 0

    def write(self, rec: RoundRecord) -> None:
        self._fh.write(",".join(_row_cells(rec)) + "\n")
        self._rows += 1
        if self._rows % self.flush_every == 0:
            self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_log(records, path, flush_every: int = 50) -> None:
    with CsvSink(path, flush_every) as sink:
        for rec in records:
            sink.write(rec)


def read_log(path) -> list[RoundRecord]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header.split(",") != list(CSV_SCHEMA):
            raise SchemaError(
                f"{path}: header does not match the metrics schema; "
                f"expected {','.join(CSV_SCHEMA)!r}, got {header!r}"
            )
        records = []
        for ln, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(CSV_SCHEMA):
                raise SchemaError(
                    f"{path}: line {ln}: expected {len(CSV_SCHEMA)} cells, got {len(cells)}"
                )
            kv = {}
            for name, cell in zip(CSV_SCHEMA, cells):
                if cell == "":
                    if name not in _OPTIONAL_COLUMNS:
                        raise SchemaError(f"{path}: line {ln}: column {name} is empty")
                    kv[name] = None
                elif name in _INT_COLUMNS:
                    kv[name] = int(cell)
                else:
                    kv[name] = float(cell)
            if kv.pop("schema_version") != SCHEMA_VERSION:
                raise SchemaError(f"{path}: line {ln}: unsupported schema version")
            records.append(RoundRecord(**kv))
    return records


def records_to_arrays(records) -> dict[str, np.ndarray]:
    """Column arrays for analysis; missing optional cells become NaN."""
    out = {}
    for name in CSV_SCHEMA:
        vals = [getattr(r, name) for r in records]
        if name in _INT_COLUMNS:
            out[name] = np.array(vals, dtype=np.int64)
        else:
            out[name] = np.array(
                [np.nan if v is None else float(v) for v in vals], dtype=np.float64
            )
    return out


class Stopwatch:
    def __init__(self):
        self._t0 = time.perf_counter()

    def seconds(self) -> float:
        return time.perf_counter() - self._t0
