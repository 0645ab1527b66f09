import pytest

from gossipplot.schema import CSV_COLUMNS

_INTS = {
    "schema_version",
    "t",
    "payload_words_outer",
    "payload_words_inner_y",
    "payload_words_inner_z",
    "payload_words_total",
}


def _cell(name, value):
    if value is None:
        return ""
    if name in _INTS:
        return str(int(value))
    return "%.17g" % value


def write_run_csv(path, rows, header=None):
    """Write rows (list of dicts keyed by column name) in the log format."""
    lines = [",".join(header if header is not None else CSV_COLUMNS)]
    for row in rows:
        lines.append(",".join(_cell(name, row.get(name)) for name in CSV_COLUMNS))
    path.write_text("\n".join(lines) + "\n")
    return path


def synth_rows(n, payload_step=1000, loss0=1.0, rate=0.9, version=1, oracle=False):
    """A plausible run: cumulative payload, decaying losses, rising accuracy."""
    rows = []
    for t in range(n):
        loss = loss0 * rate**t
        rows.append(
            {
                "schema_version": version,
                "t": t,
                "payload_words_outer": 160 * t,
                "payload_words_inner_y": payload_step * t,
                "payload_words_inner_z": payload_step * t,
                "payload_words_total": (160 + 2 * payload_step) * t,
                "wall_seconds": 0.01 * t,
                "omega1_outer": 0.5 * rate**t,
                "omega2_outer": 0.25 * rate**t,
                "value_surrogate": loss,
                "grad_norm_oracle": loss * 0.1 if oracle else None,
                "tracker_norm": loss * 0.5,
                "train_loss": loss,
                "val_loss": loss * 1.1,
                "val_accuracy": 1.0 - loss * 0.5,
            }
        )
    return rows


@pytest.fixture
def three_variant_csvs(tmp_path):
    """Overlay material: same schema, different payload growth and decay."""
    paths = []
    for name, step, rate in (
        ("c2dfb", 400, 0.88),
        ("naive", 400, 0.93),
        ("uncompressed", 2000, 0.90),
    ):
        p = write_run_csv(tmp_path / f"variant_{name}.csv", synth_rows(40, step, 1.0, rate))
        paths.append((str(p), name))
    return paths
