import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from activeindex.cli import COMMANDS, build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> train -> add on a small corpus, shared by the query/activate tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["--seed", "1", "--out", str(root / "train"), "gen", "--count", "300", "--size", "32"]) == 0
    assert main(["--seed", "2", "--out", str(root / "refs"), "gen", "--count", "20", "--size", "32"]) == 0
    assert main(["--seed", "1", "--out", str(root / "run"), "train", "--images", str(root / "train")]) == 0
    assert main(["--seed", "1", "--out", str(root / "run"), "add", "--index", str(root / "run/index.aidx"), "--images", str(root / "refs")]) == 0
    return root


def test_gen_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "--seed", "5", "--out", str(tmp_path / name), "gen", "--count", "4", "--size", "24")[0] == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert len(tree_bytes(tmp_path / "a")) == 5


def test_gen_zero_count(tmp_path, capsys):
    code, _, _ = run(capsys, "--out", str(tmp_path / "z"), "gen", "--count", "0")
    assert code == 0
    assert json.loads((tmp_path / "z/manifest.json").read_text())["images"] == []


def test_query_reconstruction_is_found_first(pipeline, capsys):
    code, out, _ = run(capsys, "query", "--index", str(pipeline / "run/index.aidx"), "--reconstruct", "4", "--k", "3")
    assert code == 0
    assert out.splitlines()[0] == "4 0.0"


def test_query_by_image_and_vector(pipeline, tmp_path, capsys):
    code, out, _ = run(capsys, "--seed", "1", "query", "--index", str(pipeline / "run/index.aidx"), "--image", str(pipeline / "refs/000006.ppm"))
    assert code == 0 and out.splitlines()[0].split()[0] == "6"
    np.save(tmp_path / "v.npy", np.full(64, np.nan))
    code, _, err = run(capsys, "query", "--index", str(pipeline / "run/index.aidx"), "--vector", str(tmp_path / "v.npy"))
    assert code == 4 and "[feature]" in err


def test_activate_alpha_zero_round_trips(pipeline, tmp_path, capsys):
    code, _, _ = run(capsys, "--seed", "1", "--out", str(tmp_path / "act"), "activate",
                     "--index", str(pipeline / "run/index.aidx"), "--images", str(pipeline / "refs"), "--alpha", "0", "--steps", "2")
    assert code == 0
    for i in range(20):
        assert filecmp.cmp(pipeline / f"refs/{i:06d}.ppm", tmp_path / f"act/{i:06d}.ppm", shallow=False)


def test_activate_batch_manifest_with_overrides(pipeline, tmp_path, capsys):
    batch = [
        {"path": str(pipeline / "refs/000001.ppm"), "id": 1},
        {"path": str(pipeline / "refs/000002.ppm"), "id": 2, "overrides": {"alpha": 0}},
    ]
    (tmp_path / "batch.json").write_text(json.dumps(batch))
    code, _, _ = run(capsys, "--seed", "1", "--out", str(tmp_path / "b"), "activate",
                     "--index", str(pipeline / "run/index.aidx"), "--batch", str(tmp_path / "batch.json"), "--steps", "3")
    assert code == 0
    rows = (tmp_path / "b/activation.csv").read_text().splitlines()
    assert rows[0] == "id,psnr,linf,loss_before,loss_after" and len(rows) == 3
    echo = json.loads((tmp_path / "b/activation.json").read_text())
    assert [e["config"]["alpha"] for e in echo["images"]] == [3.0, 0.0]
    assert filecmp.cmp(pipeline / "refs/000002.ppm", tmp_path / "b/000002.ppm", shallow=False)
    assert not filecmp.cmp(pipeline / "refs/000001.ppm", tmp_path / "b/000001.ppm", shallow=False)


def test_activate_is_idempotent(pipeline, tmp_path, capsys):
    for name in ("x", "y"):
        run(capsys, "--seed", "1", "--out", str(tmp_path / name), "activate",
            "--index", str(pipeline / "run/index.aidx"), "--images", str(pipeline / "refs"), "--steps", "2")
    assert tree_bytes(tmp_path / "x") == tree_bytes(tmp_path / "y")


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "gen": {"count": 3, "size": 20}}))
    run(capsys, "--config", str(cfg), "--out", str(tmp_path / "a"), "gen")
    run(capsys, "--config", str(cfg), "--out", str(tmp_path / "b"), "gen", "--count", "2")
    ma = json.loads((tmp_path / "a/manifest.json").read_text())
    mb = json.loads((tmp_path / "b/manifest.json").read_text())
    assert (ma["count"], ma["seed"], ma["size"]) == (3, 3, 20)
    assert (mb["count"], mb["seed"]) == (2, 3)


def test_config_file_errors(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{oops")
    assert run(capsys, "--config", str(tmp_path / "bad.json"), "gen")[0] == 3
    (tmp_path / "unk.json").write_text('{"gen": {"colour": 1}}')
    code, _, err = run(capsys, "--config", str(tmp_path / "unk.json"), "gen")
    assert code == 2 and "colour" in err


def test_error_exit_codes(pipeline, tmp_path, capsys):
    code, _, err = run(capsys, "query", "--index", str(tmp_path / "none.aidx"), "--reconstruct", "1")
    assert code == 5 and "[load]" in err
    (tmp_path / "bad.aidx").write_bytes((pipeline / "run/index.aidx").read_bytes()[:40])
    code, _, err = run(capsys, "query", "--index", str(tmp_path / "bad.aidx"), "--reconstruct", "1")
    assert code == 3 and "offset" in err
    code, _, _ = run(capsys, "train")
    assert code == 2
    (tmp_path / "file").write_text("x")
    code, _, _ = run(capsys, "--out", str(tmp_path / "file/sub"), "gen", "--count", "1")
    assert code == 5


def test_unknown_flags_are_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--bogus"])
    assert exc.value.code == 2


@pytest.mark.parametrize("cmd", sorted(COMMANDS))
def test_help_documents_every_flag(cmd, capsys):
    parser = build_parser()
    with pytest.raises(SystemExit) as exc:
        parser.parse_args([cmd, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    sub = parser._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text


def test_eval_writes_report(tmp_path, capsys):
    code, out, _ = run(capsys, "--seed", "2", "--out", str(tmp_path / "rep"), "eval",
                       "--image-size", "32", "--train-count", "300", "--reference-count", "40",
                       "--positive-count", "8", "--negative-count", "10", "--suite", "blur:1,rotate:90", "--steps", "3")
    assert code == 0 and "passive: mean R@1" in out
    for name in ("report.json", "report.csv", "pr_curve.csv", "timing.json"):
        assert (tmp_path / "rep" / name).exists()
    config = json.loads((tmp_path / "rep/report.json").read_text())["config"]
    assert config["seed"] == 2 and config["activation"]["steps"] == 3


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "activeindex.cli", "--out", str(tmp_path), "gen", "--count", "1", "--size", "16"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    res = subprocess.run([sys.executable, "-m", "activeindex.cli", "query"], capture_output=True, text=True)
    assert res.returncode == 2 and "error [" in res.stderr
