import pytest

from conftest import synth_rows, write_run_csv
from gossipplot.render import PlotSpec, render
from gossipplot.schema import CSV_COLUMNS, PlotError, SchemaError, load_table


def spec_for(paths, **kw):
    defaults = dict(x="payload_words_total", y="val_loss")
    defaults.update(kw)
    return PlotSpec(inputs=tuple(paths), **defaults)


def test_three_variant_overlay(three_variant_csvs, tmp_path):
    out = tmp_path / "overlay.svg"
    assert render(spec_for(three_variant_csvs, out=str(out))) == str(out)
    text = out.read_text()
    assert text.startswith("<?xml")
    for _, label in three_variant_csvs:
        assert label in text
    assert "cumulative payload (words)" in text
    assert "val_loss" in text


def test_byte_identical_reruns(three_variant_csvs, tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    render(spec_for(three_variant_csvs, out=str(a)))
    render(spec_for(three_variant_csvs, out=str(b)))
    assert a.read_bytes() == b.read_bytes()


def test_payload_axis_is_monotone(tmp_path):
    # cumulative counters never decrease, so the x series is sorted as-is
    p = write_run_csv(tmp_path / "run.csv", synth_rows(30))
    xs = load_table(p)["payload_words_total"]
    assert xs == sorted(xs)
    out = tmp_path / "single.svg"
    render(spec_for([(str(p), "run")], y="val_accuracy", out=str(out)))
    assert out.exists()


def test_log_scale_oracle_curve(tmp_path):
    p = write_run_csv(tmp_path / "run.csv", synth_rows(30, oracle=True))
    out = tmp_path / "log.svg"
    render(spec_for([(str(p), "quadratic")], x="t", y="grad_norm_oracle", logy=True, out=str(out)))
    assert out.exists()


def test_empty_column_named(tmp_path):
    p = write_run_csv(tmp_path / "run.csv", synth_rows(5, oracle=False))
    with pytest.raises(PlotError, match="column 'grad_norm_oracle' has no values"):
        render(spec_for([(str(p), "run")], y="grad_norm_oracle", out=str(tmp_path / "x.svg")))


def test_schema_mismatch_names_file(three_variant_csvs, tmp_path):
    bad_header = list(CSV_COLUMNS) + ["extra"]
    bad = write_run_csv(tmp_path / "other.csv", synth_rows(3), header=bad_header)
    inputs = three_variant_csvs + [(str(bad), "other")]
    with pytest.raises(SchemaError, match=r"other\.csv"):
        render(spec_for(inputs, out=str(tmp_path / "x.svg")))


def test_version_mismatch_names_file(three_variant_csvs, tmp_path):
    future = write_run_csv(tmp_path / "future.csv", synth_rows(3, version=2))
    inputs = three_variant_csvs + [(str(future), "future")]
    with pytest.raises(SchemaError, match=r"future\.csv.*unsupported schema version 2"):
        render(spec_for(inputs, out=str(tmp_path / "x.svg")))


def test_duplicate_labels_rejected(three_variant_csvs, tmp_path):
    (p0, _), (p1, _) = three_variant_csvs[:2]
    with pytest.raises(PlotError, match="duplicate labels"):
        render(spec_for([(p0, "same"), (p1, "same")], out=str(tmp_path / "x.svg")))


def test_spec_validation_messages(tmp_path):
    with pytest.raises(PlotError, match="no input files"):
        render(PlotSpec(out=str(tmp_path / "x.svg")))
    inputs = ((str(tmp_path / "r.csv"), "r"),)
    with pytest.raises(PlotError, match="x axis 'omega1_outer' not supported"):
        PlotSpec(inputs=inputs, x="omega1_outer").validate()
    with pytest.raises(PlotError, match="y column 'loss' is not in the run-log schema"):
        PlotSpec(inputs=inputs, y="loss").validate()
    with pytest.raises(PlotError, match=r"must end in \.svg"):
        PlotSpec(inputs=inputs, out="figure.png").validate()
