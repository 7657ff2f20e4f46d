import json
import logging

import numpy as np
import pytest

from oracles import length_oracle, radius_oracle
from streamseg import cli
from streamseg.core import resample_many
from streamseg.io import read_tck, write_tck

SCENE = {
    "resample_points": 20,
    "bundles": [
        {"family": "arc", "n_streamlines": 60, "seed": 1, "name": "AF_L",
         "offset": [0, 0, 0], "prune_radius_mm": 8},
        {"family": "helix", "n_streamlines": 60, "seed": 2, "name": "CST_R", "radius": 20,
         "offset": [0, 70, 0], "prune_radius_mm": 8},
    ],
    "decoys": {"family": "random", "n_streamlines": 300, "seed": 3, "extent": 40,
               "offset": [0, 0, 140]},
}


def _line(y, m=20):
    return np.stack([np.linspace(0, 30, m), np.full(m, float(y)), np.zeros(m)], axis=1)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    spec = out / "scene.json"
    spec.write_text(json.dumps(SCENE))
    assert cli.main(["-q", "synth", "--spec", str(spec), "--out", str(out / "data")]) == 0
    return out / "data"


def _segment(data, out, *extra):
    return cli.main(["segment", "--tractogram", str(data / "tractogram.tck"),
                     "--config", str(data / "atlas.json"), "--out", str(out), *extra])


# ------------------------------------------------------------------- synth

def test_synth_outputs(synth_dir):
    truth = json.loads((synth_dir / "ground_truth.json").read_text())
    assert set(truth) == {"AF_L", "CST_R", "decoys"}
    assert len(read_tck(synth_dir / "tractogram.tck")) == 420
    atlas = json.loads((synth_dir / "atlas.json").read_text())
    assert [b["name"] for b in atlas["bundles"]] == ["AF_L", "CST_R"]
    assert len(read_tck(synth_dir / "models" / "AF_L.tck")) == 60


def test_synth_bad_spec(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"bundles": [{"family": "blob"}]}))
    assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["synth", "--spec", str(tmp_path / "none.json"),
                     "--out", str(tmp_path / "o")]) == 1


# ----------------------------------------------------------------- segment

def test_segment_recovers_truth(synth_dir, tmp_path):
    assert _segment(synth_dir, tmp_path / "out", "--threads", "1") == 0
    truth = json.loads((synth_dir / "ground_truth.json").read_text())
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    for rec in report["bundles"]:
        assert rec["selected_ids"] == truth[rec["name"]]
        assert rec["streamline_count"] == len(truth[rec["name"]])
    assert (tmp_path / "out" / "report_iterations.png").stat().st_size > 0
    header = read_tck(tmp_path / "out" / "AF_L.tck").metadata["header"]
    assert header["bundle"] == "AF_L"
    tsv = (tmp_path / "out" / "report.tsv").read_text().splitlines()
    assert tsv[0].startswith("name\tstreamline_count")
    assert len(tsv) == 3


def test_segment_thread_invariance(synth_dir, tmp_path):
    assert _segment(synth_dir, tmp_path / "t1", "--threads", "1") == 0
    assert _segment(synth_dir, tmp_path / "t8", "--threads", "8") == 0
    files = sorted(p.name for p in (tmp_path / "t1").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "t8").iterdir())
    for name in files:
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t8" / name).read_bytes()


def test_self_segmentation(tmp_path):
    model = tmp_path / "model.tck"
    lines = [_line(y * 0.5) for y in range(12)]
    write_tck(lines, model)
    (tmp_path / "atlas.json").write_text(json.dumps(
        {"resample_points": 20, "bundles": [{"name": "B", "model_file": "model.tck",
                                             "prune_radius_mm": 4}]}))
    rc = cli.main(["segment", "--tractogram", str(model), "--config",
                   str(tmp_path / "atlas.json"), "--out", str(tmp_path / "o"), "--no-figures"])
    assert rc == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["bundles"][0]["selected_ids"] == list(range(12))
    assert not (tmp_path / "o" / "report_iterations.png").exists()


def test_segment_missing_config(synth_dir, tmp_path, caplog):
    missing = tmp_path / "nope.json"
    with caplog.at_level(logging.ERROR):
        rc = cli.main(["segment", "--tractogram", str(synth_dir / "tractogram.tck"),
                       "--config", str(missing), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert str(missing) in caplog.text


def test_segment_refuses_overwrite(synth_dir, tmp_path):
    out = tmp_path / "o"
    assert _segment(synth_dir, out, "--no-figures") == 0
    assert _segment(synth_dir, out, "--no-figures") == 1
    assert _segment(synth_dir, out, "--no-figures", "--overwrite") == 0


def test_segment_bad_threads(synth_dir, tmp_path):
    assert _segment(synth_dir, tmp_path / "o", "--threads", "0") == 1


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["info"], ["search", "--bogus"],
                                  ["compare", "--a", "x", "--b", "y", "--mode", "both"],
                                  ["search", "--tractogram", "a", "--queries", "b",
                                   "--radius", "-2"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_quiet_flag_after_subcommand(tmp_path, capsys):
    path = tmp_path / "a.tck"
    write_tck([_line(0)], path)
    assert cli.main(["info", str(path), "-q"]) == 0


def test_runtime_error_exit_2(tmp_path, monkeypatch):
    path = tmp_path / "a.tck"
    write_tck([_line(0)], path)

    def boom(*a, **k):
        raise RuntimeError("disk on fire")
    monkeypatch.setattr(cli, "build_index", boom)
    rc = cli.main(["search", "--tractogram", str(path), "--queries", str(path),
                   "--radius", "1"])
    assert rc == 2


def test_malformed_tck_exit_1(tmp_path):
    bad = tmp_path / "bad.tck"
    bad.write_bytes(b"not a tck\n")
    assert cli.main(["info", str(bad)]) == 1


# ------------------------------------------------------------------ search

@pytest.fixture
def lines_files(tmp_path):
    tract, queries = tmp_path / "t.tck", tmp_path / "q.tck"
    write_tck([_line(1), _line(5), _line(9)], tract)
    write_tck([_line(0)], queries)
    return tract, queries


def _listing(capsys):
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "query_id\ttarget_id\tdistance_mm"
    return [r.split("\t") for r in rows[1:]]


def test_search_parallel_lines(lines_files, capsys):
    tract, queries = lines_files
    assert cli.main(["search", "--tractogram", str(tract), "--queries", str(queries),
                     "--radius", "6", "--points", "20"]) == 0
    assert _listing(capsys) == [["0", "0", "1.000000"], ["0", "1", "5.000000"]]


def test_search_empty_listing(lines_files, capsys):
    tract, queries = lines_files
    assert cli.main(["search", "--tractogram", str(tract), "--queries", str(queries),
                     "--radius", "0.5"]) == 0
    assert _listing(capsys) == []


def test_search_listing_equals_oracle(synth_dir, capsys):
    tract = read_tck(synth_dir / "tractogram.tck")
    queries = read_tck(synth_dir / "models" / "AF_L.tck")
    assert cli.main(["search", "--tractogram", str(synth_dir / "tractogram.tck"),
                     "--queries", str(synth_dir / "models" / "AF_L.tck"),
                     "--radius", "5"]) == 0
    rows = _listing(capsys)
    expected = radius_oracle(resample_many(queries.streamlines, 32),
                             resample_many(tract.streamlines, 32), 5.0)
    assert {(int(q), int(t)) for q, t, _ in rows} == set(expected)
    for q, t, d in rows:
        assert abs(float(d) - expected[int(q), int(t)]) <= 5e-7
    keys = [(int(q), float(d)) for q, _, d in rows]
    assert keys == sorted(keys)


# ----------------------------------------------------------------- compare

def _compare(capsys, a, b, *extra):
    rc = cli.main(["compare", "--a", str(a), "--b", str(b), "--mode", "scan-rescan", *extra])
    return rc, json.loads(capsys.readouterr().out) if rc == 0 else None


def test_compare_same_file(lines_files, capsys):
    tract, _ = lines_files
    rc, rec = _compare(capsys, tract, tract)
    assert rc == 0 and rec["dice"] == 1.0 and rec["adjacency"] == 0.0
    assert rec["streamline_dice"] is None


def test_compare_run_rerun(lines_files, capsys):
    tract, _ = lines_files
    assert cli.main(["compare", "--a", str(tract), "--b", str(tract),
                     "--mode", "run-rerun"]) == 0
    assert json.loads(capsys.readouterr().out)["streamline_dice"] == 1.0


def test_compare_disjoint(tmp_path, capsys):
    a, b = tmp_path / "a.tck", tmp_path / "b.tck"
    write_tck([_line(0)], a)
    write_tck([_line(20)], b)
    rc, rec = _compare(capsys, a, b)
    assert rec["dice"] == 0.0 and rec["adjacency"] == 20.0


def test_compare_planned_volume_delta(tmp_path, capsys):
    # b adds a 100-voxel straight run far from the shared part
    shared = np.array([[0.0, 0, 0], [29.0, 0, 0]])
    extra = np.array([[0.0, 40, 0], [99.0, 40, 0]])
    a, b = tmp_path / "a.tck", tmp_path / "b.tck"
    write_tck([shared], a)
    write_tck([shared, extra], b)
    rc, rec = _compare(capsys, a, b, "--out", str(tmp_path / "rep"))
    assert rc == 0
    assert abs(rec["volume_delta"] - 100.0) <= 2.0
    assert rec["count_delta"] == 1
    assert rec["mean_length_delta"] == pytest.approx((29 + 99) / 2 - 29, rel=1e-6)
    for name in ("report.json", "report.tsv", "report_comparison.png"):
        assert (tmp_path / "rep" / name).exists()


def test_compare_voxel_size(lines_files, capsys):
    tract, _ = lines_files
    rc, rec = _compare(capsys, tract, tract, "--voxel-size", "2")
    assert rc == 0 and rec["volume_a"] % 8 == 0


# -------------------------------------------------------------------- info

def test_info_counts_and_length(tmp_path, capsys):
    path = tmp_path / "two.tck"
    lines = [_line(0), np.array([[0.0, 0, 0], [3, 4, 0], [3, 4, 12]])]
    write_tck(lines, path)
    assert cli.main(["info", str(path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["count"] == 2
    mean = np.mean([length_oracle(s.astype(np.float32)) for s in lines])
    assert info["length_mm"]["mean"] == pytest.approx(mean, rel=1e-9)
    assert info["points"]["max"] == 20


def test_info_empty(tmp_path, capsys):
    path = tmp_path / "empty.tck"
    write_tck([], path)
    assert cli.main(["info", str(path)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["count"] == 0 and info["bbox_mm"] is None


def test_info_missing_file(tmp_path):
    assert cli.main(["info", str(tmp_path / "absent.tck")]) == 1
