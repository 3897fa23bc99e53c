import pytest

from anchorloc.cli import main

CFG = """
scene.rng_seed = 11
scene.landmark_count = 2200
scene.aliased_group_count = 20
scene.aliased_group_size = 4
scene.n_database_frames = 60
scene.n_query_frames = 40
scene.fx = 420
scene.fy = 420
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset + reference model built once through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(CFG)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert (
        main(
            [
                "build-ref",
                "--dataset",
                str(root / "data"),
                "--out",
                str(root / "ref.txt"),
            ]
        )
        == 0
    )
    return root


def _localize(workdir, method, out, extra=()):
    data = workdir / "data"
    argv = [
        "localize",
        "--method",
        method,
        "--sequence",
        str(data / "query.txt"),
        "--config",
        str(workdir / "run.cfg"),
        "--out",
        str(out),
        "--gt",
        str(data / "gt_query.txt"),
    ]
    if method in ("proposed", "single"):
        argv += ["--model", str(workdir / "ref.txt")]
    if method == "proposed":
        argv += ["--anchors", str(data / "anchor_scores.txt")]
    return main(argv + list(extra))


def test_proposed_runs_deterministic(workdir, capsys):
    assert _localize(workdir, "proposed", workdir / "run1") == 0
    assert _localize(workdir, "proposed", workdir / "run2") == 0
    capsys.readouterr()
    t1 = (workdir / "run1" / "trajectory_proposed.txt").read_bytes()
    t2 = (workdir / "run2" / "trajectory_proposed.txt").read_bytes()
    assert t1 == t2
    e1 = (workdir / "run1" / "events_proposed.log").read_bytes()
    e2 = (workdir / "run2" / "events_proposed.log").read_bytes()
    assert e1 == e2


def test_baseline_methods_and_eval_table(workdir, capsys):
    assert _localize(workdir, "single", workdir / "run_single") == 0
    assert _localize(workdir, "onthefly", workdir / "run_fly") == 0
    _localize(workdir, "proposed", workdir / "run1")
    capsys.readouterr()
    code = main(
        [
            "eval",
            "--gt",
            str(workdir / "data" / "gt_query.txt"),
            "--out",
            str(workdir / "table.txt"),
            str(workdir / "run1" / "trajectory_proposed.txt"),
            str(workdir / "run_single" / "trajectory_single.txt"),
            str(workdir / "run_fly" / "trajectory_onthefly.txt"),
        ]
    )
    assert code == 0
    table = (workdir / "table.txt").read_text()
    out = capsys.readouterr().out
    assert table.strip() == out.strip()
    lines = table.splitlines()
    assert lines[0].startswith("Method")
    assert {l.split()[0] for l in lines[2:]} == {"proposed", "single", "onthefly"}


def test_export_ply(workdir, capsys):
    ply = workdir / "cloud.ply"
    assert main(["export", "--model", str(workdir / "ref.txt"), "--ply", str(ply)]) == 0
    capsys.readouterr()
    head = ply.read_text().splitlines()[:2]
    assert head == ["ply", "format ascii 1.0"]


def test_exit_code_config_error(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("scene.bogus = 1\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    capsys.readouterr()


def test_exit_code_io_error(workdir, tmp_path, capsys):
    assert (
        main(
            [
                "export",
                "--model",
                str(tmp_path / "missing.txt"),
                "--ply",
                str(tmp_path / "x.ply"),
            ]
        )
        == 3
    )
    capsys.readouterr()


def test_exit_code_pipeline_error(workdir, tmp_path, capsys):
    # an anchor-score file with all zeros means no anchor clears the threshold
    scores = tmp_path / "zero_scores.txt"
    lines = ["ANCHORLOC_SCORES 1"]
    lines += [f"{100000 + i} 0.0" for i in range(40)]
    scores.write_text("\n".join(lines) + "\n")
    code = _localize(
        workdir,
        "proposed",
        tmp_path / "out",
        extra=["--anchors", str(scores)],
    )
    assert code == 4
    capsys.readouterr()
