import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from markedhawkes.errors import IngestError, SchemaError
from markedhawkes.io import (
    CRYPTO_DIMS,
    ModelDocument,
    fmt,
    ingest_events,
    load_model,
    load_spec,
    read_trades,
    save_model,
    spec_from_dict,
    write_csv,
    write_events,
)
from markedhawkes.marks import GmmDensity
from markedhawkes.model import ScalingTransform, eval_ground_intensity
from markedhawkes.simulate import (
    Exponential,
    coupled_1d_spec,
    decoupled_2d_spec,
    simulate,
)

import oracles
from trade_fixture import make_trade_fixture

TRADE_HEADER = "timestamp,side,instrument,volume,price,buyer_id,seller_id\n"


def fitted_like_model(kind="snh", seed=0):
    rng = np.random.default_rng(seed)
    model = oracles.random_model(kind, rng, dims=2, p=5, window=30.0)
    dens = (GmmDensity([0.25, 0.75], [0.1, 1.3], [0.2, 0.7]), GmmDensity([1.0], [2.0], [0.5]))
    return model.replace(scaling=ScalingTransform(0.8715, (1.0 / 3, 0.1)), mark_densities=dens)


# -- formatting --------------------------------------------------------------


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_is_lossless(x):
    assert float(fmt(x)) == x


def test_fmt_integers_and_strings():
    assert fmt(3) == "3" and fmt(np.int64(4)) == "4" and fmt("x") == "x"
    assert fmt(0.1) == "0.10000000000000001"


def test_write_csv_fixed_columns(tmp_path):
    p = tmp_path / "a.csv"
    write_csv(p, ["q", "coverage"], [(0.5, 0.25), (0.75, 1)])
    assert p.read_text() == "q,coverage\n0.5,0.25\n0.75,1\n"


# -- generic events ----------------------------------------------------------


def test_generic_round_trip_is_exact(tmp_path):
    seq = simulate(decoupled_2d_spec(), 200.0, seed=3)
    p = tmp_path / "ev.csv"
    write_events(p, seq)
    back = ingest_events(p)
    np.testing.assert_array_equal(back.times, seq.times)
    np.testing.assert_array_equal(back.marks, seq.marks)
    np.testing.assert_array_equal(back.event_dims, seq.event_dims)
    assert back.horizon == seq.horizon and back.dims == seq.dims
    q = tmp_path / "ev2.csv"
    write_events(q, back)
    assert q.read_bytes() == p.read_bytes()


def test_generic_without_comment_line(tmp_path):
    p = tmp_path / "ev.csv"
    p.write_text("dim,time,mark\n0,0.5,1.0\n1,0.7,2.0\n0,1.5,3.0\n")
    seq = ingest_events(p)
    assert seq.dims == 2 and len(seq) == 3
    assert seq.horizon > 1.5


@pytest.mark.parametrize("body,match", [
    ("dim,time,mark\n", "no events"),
    ("dim,time\n0,1.0\n", "missing column"),
    ("dim,time,mark\n0,2.0,1.0\n0,1.0,1.0\n", "row"),
    ("dim,time,mark\n0,abc,1.0\n", "unparsable"),
])
def test_generic_errors(tmp_path, body, match):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(IngestError, match=match):
        ingest_events(p)


def test_missing_file_and_unknown_format(tmp_path):
    with pytest.raises(IngestError):
        ingest_events(tmp_path / "nope.csv")
    p = tmp_path / "x.csv"
    p.write_text("dim,time,mark\n0,1,1\n")
    with pytest.raises(IngestError, match="format"):
        ingest_events(p, fmt="parquet")


# -- trade exports -----------------------------------------------------------


def test_same_stamp_sells_merge(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(TRADE_HEADER
                 + "100,sell,BTC-USD,0.2,30000,b1,s1\n"
                 + "100,sell,BTC-USD,0.3,30000,b2,s2\n"
                 + "101,buy,BTC-USD,1.0,30001,b3,s3\n")
    ing = read_trades(p)
    assert len(ing.sequence) == 2
    assert ing.sequence.marks[0] == 0.5
    assert ing.sequence.times.tolist() == [0.0, 1.0]
    assert ing.sequence.event_dims.tolist() == [0, 1]
    assert ing.merged_rows == 1 and ing.time_unit == "s"


def test_same_stamp_different_sides_stay_separate(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(TRADE_HEADER + "100,sell,ETH-USD,1,1,a,b\n100,buy,ETH-USD,2,1,a,b\n")
    seq = ingest_events(p, fmt="trade-csv")
    assert sorted(seq.event_dims.tolist()) == [2, 3]


def test_table_like_fixture_totals(tmp_path):
    fx = make_trade_fixture(tmp_path / "trades.csv", seed=1)
    ing = read_trades(fx.path)
    assert ing.counts == fx.counts
    assert ing.volumes == fx.volumes
    assert len(ing.sequence) == fx.events
    assert ing.merged_rows == fx.rows - fx.events
    assert ing.time_unit == "ms"
    assert ing.sequence.times[0] == 0.0


def test_millisecond_detection(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(TRADE_HEADER + "1650000000000,sell,BTC-USD,1,1,a,b\n"
                 "1650000000250,sell,BTC-USD,1,1,a,b\n")
    ing = read_trades(p)
    assert ing.time_unit == "ms"
    assert ing.sequence.times.tolist() == [0.0, 0.25]
    q = tmp_path / "s.csv"
    q.write_text(TRADE_HEADER + "1650000000,sell,BTC-USD,1,1,a,b\n1650000002.5,sell,BTC-USD,1,1,a,b\n")
    assert read_trades(q).sequence.times.tolist() == [0.0, 2.5]


@pytest.mark.parametrize("rows,match", [
    ("", "no trades"),
    ("100,sell,DOGE-USD,1,1,a,b\n", "unknown dimension label 'DOGE-USD:sell'"),
    ("100,hold,BTC-USD,1,1,a,b\n", "side"),
    ("100,sell,BTC-USD,-1,1,a,b\n", "volume"),
    ("100,sell,BTC-USD,1,1,a,b\n99,sell,BTC-USD,1,1,a,b\n", r"row\(s\) \[3\]"),
])
def test_trade_errors(tmp_path, rows, match):
    p = tmp_path / "t.csv"
    p.write_text(TRADE_HEADER + rows)
    with pytest.raises(IngestError, match=match):
        read_trades(p)


def test_custom_labels(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(TRADE_HEADER + "5,buy,SOL-USD,1,1,a,b\n")
    seq = ingest_events(p, fmt="trade-csv", labels=["SOL-USD:buy"])
    assert seq.dims == 1 and len(seq) == 1


def test_default_dimension_order():
    assert CRYPTO_DIMS == ("BTC-USD:sell", "BTC-USD:buy", "ETH-USD:sell", "ETH-USD:buy")


def test_trade_ingest_is_idempotent_through_generic(tmp_path):
    fx = make_trade_fixture(tmp_path / "trades.csv", n_stamps=50, seed=2)
    seq = ingest_events(fx.path, fmt="trade-csv")
    out = tmp_path / "ev.csv"
    write_events(out, seq)
    again = ingest_events(out)
    np.testing.assert_array_equal(again.times, seq.times)
    np.testing.assert_array_equal(again.marks, seq.marks)


# -- model documents ---------------------------------------------------------


@pytest.mark.parametrize("kind", ["snh", "nnnh"])
def test_document_round_trip_byte_identical(kind):
    doc = ModelDocument(fitted_like_model(kind), {"config": {"seed": 7}, "trace": {"epochs": 3}})
    text = doc.dumps()
    assert ModelDocument.loads(text).dumps() == text


def test_reloaded_model_reproduces_intensity(tmp_path):
    model = fitted_like_model()
    p = tmp_path / "m.json"
    save_model(p, model, {"note": "x"})
    back = load_model(p)
    assert back.metadata == {"note": "x"}
    seq = oracles.random_sequence(np.random.default_rng(1), 2, horizon=5.0)
    for d in range(2):
        assert eval_ground_intensity(back.model, d, 4.9, seq) == eval_ground_intensity(model, d, 4.9, seq)
    assert back.model.window == 30.0
    assert back.model.mark_densities[0].k == 2


def test_document_without_scaling_or_densities():
    model = oracles.random_model("nnnh", np.random.default_rng(2), dims=1, p=2)
    text = ModelDocument(model).dumps()
    back = ModelDocument.loads(text).model
    assert back.scaling is None and back.mark_densities is None


def test_schema_version_checked():
    d = ModelDocument(fitted_like_model()).to_dict()
    d["schema_version"] = 2
    with pytest.raises(SchemaError, match="schema_version"):
        ModelDocument.from_dict(d)


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("kernels"),
    lambda d: d.update(dims=3),
    lambda d: d["kernels"].update(a1=[[1.0]]),
])
def test_malformed_documents(mutate):
    d = json.loads(ModelDocument(fitted_like_model()).dumps())
    mutate(d)
    with pytest.raises((SchemaError, ValueError)):
        ModelDocument.from_dict(d)


def test_invalid_json():
    with pytest.raises(SchemaError):
        ModelDocument.loads("{not json")


# -- generator specs ---------------------------------------------------------


def test_presets_and_explicit_specs(tmp_path):
    assert spec_from_dict({"preset": "coupled-1d"}) == coupled_1d_spec()
    doc = {
        "mu": [0.7],
        "kernels": [[{"type": "ExpTimesMark", "scale": 1.0, "decay": 1.0, "mark_decay": 5.0}]],
        "marks": [{"type": "LogNormal", "mu": 0.0, "sigma": 0.5}],
    }
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(doc))
    assert load_spec(p) == coupled_1d_spec()
    matrix = dict(doc, marks=[[{"type": "Exponential", "rate": 2.0}]])
    assert spec_from_dict(matrix).marks == (Exponential(2.0),)
    gmm = dict(doc, marks=[{"type": "Gmm", "weights": [1.0], "means": [1.0], "variances": [0.5]}])
    assert isinstance(spec_from_dict(gmm).marks[0], GmmDensity)


@pytest.mark.parametrize("doc", [
    {"preset": "nope"},
    {"mu": [1.0]},
    {"mu": [1.0], "kernels": [[{"type": "Weird"}]], "marks": [{"type": "LogNormal"}]},
    {"mu": [1.0], "kernels": [[{"scale": 1}]], "marks": [{"type": "LogNormal"}]},
    {"mu": [1.0], "kernels": [[{"type": "ExpTimesMark", "speed": 1}]],
     "marks": [{"type": "LogNormal"}]},
])
def test_bad_specs(doc):
    with pytest.raises(SchemaError):
        spec_from_dict(doc)


def test_spec_file_errors(tmp_path):
    with pytest.raises(IngestError):
        load_spec(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("[")
    with pytest.raises(SchemaError):
        load_spec(p)
