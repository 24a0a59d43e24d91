import xml.etree.ElementTree as ET

import pytest

from conftest import DB1, DB1_RESULT
from fimengine.bench import (BenchConfig, BenchmarkRecord, DatasetSpec, OracleTooLarge, VerificationError,
                             brute_force_oracle, emit_csv, emit_svg_chart, parse_csv, run_benchmark)
from fimengine.datasets import SyntheticParams, TransactionDatabase

HEADER = "dataset,algorithm,backend,minsup_rel,minsup_abs,trial1,trial2,trial3,mean_ms,num_frequent,verified"
SVG = "{http://www.w3.org/2000/svg}"


def test_oracle_examples(db1):
    assert brute_force_oracle(db1, 2).frequent == DB1_RESULT
    assert brute_force_oracle(TransactionDatabase.from_transactions([], num_items=2), 1).frequent == {}
    assert brute_force_oracle(TransactionDatabase.from_transactions([(0,)]), 1).frequent == {(0,): 1}


def test_oracle_guard():
    db = TransactionDatabase.from_transactions([tuple(range(21))])
    with pytest.raises(OracleTooLarge):
        brute_force_oracle(db, 1)


def db1_spec(name="db1"):
    return DatasetSpec(name, db=TransactionDatabase.from_transactions(DB1, name=name))


def test_grid_cardinality():
    cfg = BenchConfig([db1_spec()], [0.5], ["apriori", "mr_apriori"], ["sequential", "pipelined"], workers=2)
    recs = run_benchmark(cfg)
    assert len(recs) == 4
    for r in recs:
        assert len(r.trial_times) == 3
        assert r.mean_time == sum(r.trial_times) / 3
        assert all(t > 0 for t in r.trial_times)
        assert min(r.trial_times) <= r.mean_time <= max(r.trial_times)
        assert not r.verified


def test_verified_grid():
    cfg = BenchConfig([db1_spec()], [0.5], ["apriori", "fpgrowth", "mr_apriori", "pfp"],
                      ["sequential", "batch", "inmemory", "pipelined"], partitions=2, workers=2, trials=1,
                      verify=True)
    recs = run_benchmark(cfg)
    assert len(recs) == 16
    assert all(r.verified and r.num_frequent == 6 for r in recs)


def test_cross_cell_equivalence():
    spec = DatasetSpec("fm", synthetic=SyntheticParams(num_transactions=4141, num_items=1554, seed=1))
    cfg = BenchConfig([spec], [0.001], ["apriori", "fpgrowth", "mr_apriori", "pfp"],
                      ["sequential", "pipelined"], partitions=2, workers=2, trials=1)
    recs = run_benchmark(cfg)
    assert len({r.num_frequent for r in recs}) == 1
    assert recs[0].minsup_abs == 5


def test_load_failure_continues(tmp_path):
    cfg = BenchConfig([DatasetSpec("missing", path=str(tmp_path / "nope.txt")), db1_spec()], [0.5],
                      ["apriori"], ["sequential"], trials=1)
    recs = run_benchmark(cfg)
    assert [e.dataset for e in recs.errors] == ["missing"]
    assert [r.dataset for r in recs] == ["db1"]


def test_mismatch_is_hard_failure(monkeypatch):
    import fimengine.bench as bench

    real = bench.run_miner

    def broken(algorithm, *a, **kw):
        res = real(algorithm, *a, **kw)
        if algorithm == "fpgrowth":
            res.frequent = {**res.frequent, (0, 1, 2): 1}
        return res

    monkeypatch.setattr(bench, "run_miner", broken)
    cfg = BenchConfig([db1_spec()], [0.5], ["apriori", "fpgrowth"], ["sequential"], trials=1, verify=True)
    with pytest.raises(VerificationError, match="fpgrowth"):
        run_benchmark(cfg)


def test_invalid_config():
    with pytest.raises(ValueError):
        BenchConfig([db1_spec()], [0.5], trials=0).validate()
    with pytest.raises(ValueError):
        BenchConfig([], [0.5]).validate()
    with pytest.raises(ValueError):
        BenchConfig([db1_spec()], [0.5], algorithms=["eclat"]).validate()


def rec(ds="a", algo="apriori", backend="sequential", m=0.5, times=(0.001, 0.002, 0.003)):
    return BenchmarkRecord(ds, algo, backend, m, 2, list(times), sum(times) / len(times), 6, True)


def test_csv_header_and_lines():
    assert emit_csv([]) == HEADER + "\n"
    text = emit_csv([rec()])
    lines = text.splitlines()
    assert lines[0] == HEADER
    assert lines[1] == "a,apriori,sequential,0.5,2,1.000,2.000,3.000,2.000,6,true"


def test_csv_deterministic_order_and_round_trip():
    recs = [rec("b"), rec("a", "pfp", "batch", 0.1), rec("a", "pfp", "batch", 0.01), rec("a", "apriori")]
    text = emit_csv(recs)
    assert text == emit_csv(list(reversed(recs)))
    keys = [tuple(line.split(",")[:4]) for line in text.splitlines()[1:]]
    assert keys == [("a", "apriori", "sequential", "0.5"), ("a", "pfp", "batch", "0.01"),
                    ("a", "pfp", "batch", "0.1"), ("b", "apriori", "sequential", "0.5")]
    back = parse_csv(text)
    for r, orig in zip(back, sorted(recs, key=lambda r: (r.dataset, r.algorithm, r.backend, r.minsup_rel))):
        assert (r.dataset, r.algorithm, r.backend, r.minsup_rel, r.minsup_abs, r.num_frequent, r.verified) == \
            (orig.dataset, orig.algorithm, orig.backend, orig.minsup_rel, orig.minsup_abs, orig.num_frequent,
             orig.verified)
        assert r.trial_times == pytest.approx(orig.trial_times, abs=1e-6)
        assert r.mean_time == pytest.approx(orig.mean_time, abs=1e-6)


def bars(svg):
    root = ET.fromstring(svg.encode("utf-8"))
    return root, [e for e in root.iter(SVG + "rect") if e.get("class") == "bar"]


def test_svg_structure():
    recs = [rec("Food Mart", backend=b, m=0.001, times=(t,) * 3)
            for b, t in [("batch", 0.026), ("inmemory", 0.020), ("pipelined", 0.011)]]
    svg = emit_svg_chart(recs)
    root, bs = bars(svg)
    assert root.tag == SVG + "svg" and root.get("version") == "1.1"
    assert len(bs) == 3
    assert "Food Mart @ 0.1%" in svg
    heights = {b.get("data-series"): float(b.get("height")) for b in bs}
    assert heights["batch"] > heights["inmemory"] > heights["pipelined"]
    assert "href" not in svg


def test_svg_empty_raises():
    with pytest.raises(ValueError):
        emit_svg_chart([])
