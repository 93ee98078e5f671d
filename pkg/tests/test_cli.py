import json
from importlib import resources

import jsonschema
import pytest

from avgdelay.cli import main

GT_HEADER = "video_id,frame_index,track_id,class_id,x1,y1,x2,y2\n"


def _schema():
    return json.loads(resources.files("avgdelay").joinpath("report_schema.json").read_text())


@pytest.fixture
def synthetic(tmp_path):
    src = tmp_path / "src"
    code = main(["synthesize", "--p", "0.4", "--fp-rate", "1.0", "--instances", "64", "--seed", "3",
                 "--confidence-model", "interleaved", "--out", str(src)])
    assert code == 0
    return src


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_evaluate_writes_valid_report(synthetic, tmp_path, capsys):
    out = tmp_path / "eval"
    code = main(["evaluate", "--gt", str(synthetic / "gt.csv"), "--det", str(synthetic / "det.csv"),
                 "--out", str(out), "--dump-matches"])
    assert code == 0
    assert set(_files(out)) == {"report.json", "delay_profile.csv", "per_class_ap.csv", "metrics.csv",
                                "report.txt", "matches.csv"}
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, _schema())
    assert len(report["delay"]["ratios"]) == 6
    assert "AD =" in capsys.readouterr().out


def test_perfect_detector_report(tmp_path):
    src = tmp_path / "src"
    assert main(["synthesize", "--p", "1.0", "--instances", "20", "--out", str(src)]) == 0
    out = tmp_path / "eval"
    assert main(["evaluate", "--gt", str(src / "gt.csv"), "--det", str(src / "det.csv"), "--out", str(out),
                 "--report", "json"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["delay"]["average_delay"] == 0.0
    assert report["accuracy"]["mAP"] == 1.0
    assert set(_files(out)) == {"report.json"}


def test_unreachable_ratio_is_flagged(tmp_path):
    src = tmp_path / "src"
    assert main(["synthesize", "--p", "0.5", "--fp-rate", "2.0", "--instances", "16", "--out", str(src)]) == 0
    out = tmp_path / "eval"
    assert main(["evaluate", "--gt", str(src / "gt.csv"), "--det", str(src / "det.csv"), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    flags = [r["unreachable"] for r in report["delay"]["ratios"]]
    # about 0.47 FPs per object: ratios up to 0.4 bind, 0.8 and above cannot
    assert flags == [False, False, False, True, True, True]
    assert any("achieved < requested" in line for line in (out / "report.txt").read_text().splitlines())


def test_jsonl_and_per_video_scope(tmp_path):
    src = tmp_path / "src"
    assert main(["synthesize", "--p", "0.5", "--fp-rate", "0.5", "--instances", "24", "--format", "jsonl",
                 "--out", str(src)]) == 0
    out = tmp_path / "eval"
    assert main(["evaluate", "--gt", str(src / "gt.jsonl"), "--det", str(src / "det.jsonl"), "--format", "jsonl",
                 "--fp-scope", "video", "--interpolation", "11point", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    jsonschema.validate(report, _schema())
    assert report["delay"]["fp_scope"] == "video"


def test_split_summary(tmp_path, capsys):
    gt = tmp_path / "gt.csv"
    rows = [f"a,{f},0,0,0,0,10,10" for f in [*range(0, 5), *range(20, 25)]]
    rows += [f"b,{f},0,0,0,0,10,10" for f in range(0, 10)]
    gt.write_text(GT_HEADER + "\n".join(rows) + "\n")
    out = tmp_path / "split"
    assert main(["split", "--gt", str(gt), "--out", str(out)]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "dataset,snippets,frames,instances,objects"
    assert summary[1:] == ["input,2,35,2,20", "split,2,35,3,20", "vidt,1,25,2,10"]
    assert (out / "vidt_gt.csv").exists()
    assert "vidt" in capsys.readouterr().out


def test_perturb_and_report(synthetic, tmp_path):
    out = tmp_path / "pert"
    assert main(["perturb", "--gt", str(synthetic / "gt.csv"), "--det", str(synthetic / "det.csv"),
                 "--kind", "retardation_all", "--out", str(out)]) == 0
    assert (out / "det_retardation_all.csv").exists()
    rep = tmp_path / "rep"
    assert main(["report", "--gt", str(synthetic / "gt.csv"), "--det", str(synthetic / "det.csv"),
                 "--out", str(rep), "--min-class-instances", "1"]) == 0
    assert {"histogram.csv", "histogram_plot.json", "ad_by_class.csv", "ad_by_scale.csv", "kfold.csv",
            "breakdown.json"} <= set(_files(rep))


def test_output_dir_from_environment(synthetic, tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("AVGDELAY_OUT", str(target))
    assert main(["evaluate", "--gt", str(synthetic / "gt.csv"), "--det", str(synthetic / "det.csv")]) == 0
    assert (target / "report.json").exists()


def test_exit_codes(tmp_path, synthetic, capsys):
    with pytest.raises(SystemExit) as err:
        main(["evaluate", "--gt", "x.csv"])
    assert err.value.code == 1
    assert main(["perturb", "--gt", str(synthetic / "gt.csv"), "--det", str(synthetic / "det.csv"),
                 "--kind", "retardation_low_conf", "--out", str(tmp_path / "p")]) == 1
    assert main(["evaluate", "--gt", str(tmp_path / "missing.csv"), "--det", str(synthetic / "det.csv"),
                 "--out", str(tmp_path / "e")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text(GT_HEADER + "v,0,0,0,5,0,5,10\n")
    assert main(["split", "--gt", str(bad), "--out", str(tmp_path / "s")]) == 2
    assert "bad.csv:2" in capsys.readouterr().err


def test_malformed_input_leaves_no_partial_output(tmp_path, synthetic):
    det = tmp_path / "det.csv"
    text = (synthetic / "det.csv").read_text().splitlines()
    det.write_text("\n".join(text[:5] + ["syn0,0,0,0,0,1,1,2.0"]) + "\n")
    out = tmp_path / "eval"
    assert main(["evaluate", "--gt", str(synthetic / "gt.csv"), "--det", str(det), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())
