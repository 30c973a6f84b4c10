import csv

import pytest

from gfflab.records import ResultRecord, append_records
from gfflab.report import ReportError, group, report


def rec(exp, est, **params):
    return ResultRecord(exp, params, est, 0.01, 10, 1)


def test_single_record_table(tmp_path):
    append_records(tmp_path / "r.jsonl", [rec("isomorphism-suite", 0.5, n=4)])
    paths = report(tmp_path / "r.jsonl", tmp_path / "rep")
    assert [p.endswith("isomorphism-suite.csv") for p in paths] == [True]
    rows = list(csv.reader(open(paths[0])))
    assert rows[0] == ["n", "estimate", "stderr", "replicas", "seed"]
    assert len(rows) == 2 and float(rows[1][1]) == 0.5


def test_decay_plot_and_grouping(tmp_path):
    recs = [rec("connectivity-decay", 0.5 ** d, distance=d) for d in range(1, 7)]
    fit = rec("connectivity-decay", 0.69, fit="rate")
    fit.extra = {"intercept": 0.0, "ci": [0.6, 0.8]}
    recs.append(fit)
    recs += [rec("exit-set-scan", 1 / n, n=n) for n in (16, 32)]
    append_records(tmp_path / "r.jsonl", recs)
    paths = report(tmp_path / "r.jsonl", tmp_path / "rep")
    names = sorted(p.rsplit("/", 1)[1] for p in paths)
    assert names == ["connectivity-decay.csv", "connectivity-decay.png", "exit-set-scan.csv",
                     "exit-set-scan.png"]
    assert set(group(recs)) == {"connectivity-decay", "exit-set-scan"}


def test_empty_records(tmp_path):
    (tmp_path / "r.jsonl").write_text("")
    with pytest.raises(ReportError):
        report(tmp_path / "r.jsonl", tmp_path / "rep")
