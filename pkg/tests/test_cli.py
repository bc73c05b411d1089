from pathlib import Path

import pytest

from lafite import config
from lafite.cli import main

TINY = """\
[run]
seed = 3

[data]
samples_per_class = 12
test_per_class = 8

[denoiser]
base_channels = 4

[train]
steps = 20
batch_size = 8

[tune]
tau_values = 50, 200
k_values = 1, 3
"""


def run_pipeline(root: Path, cfg: Path) -> None:
    d = root / "data"
    c = ["--config", str(cfg), "--threads", "1"]
    model = ["--checkpoint", str(root / "ckpt"), "--bank", str(root / "bank")]
    steps = [
        ["datagen", *c, "--out", str(d)],
        ["train", *c, "--train", str(d / "train.tsv"), "--out", str(root / "ckpt")],
        ["bank", *c, "--train", str(d / "train.tsv"), "--out", str(root / "bank")],
        ["tune", *c, "--train", str(d / "train.tsv"), *model, "--out", str(root / "tune")],
        ["eval", *c, "--manifest", str(d / "test.tsv"), *model, "--tuned", str(root / "tune"), "--out", str(root / "eval")],
        ["reconstruct", *c, "--manifest", str(d / "test.tsv"), *model, "--tau", "50", "--out", str(root / "rec")],
        ["heatmap", *c, "--manifest", str(d / "test.tsv"), *model, "--tuned", str(root / "tune"), "--out", str(root / "maps")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv[0]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.cfg"
    cfg.write_text(TINY)
    run_pipeline(base / "a", cfg)
    run_pipeline(base / "b", cfg)
    return base / "a", base / "b"


def _files(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_reruns_are_byte_identical(runs):
    a, b = runs
    files = _files(a)
    assert files == _files(b)
    assert len(files) > 100
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_outputs_present(runs):
    a, _ = runs
    assert (a / "ckpt" / "checkpoint.tsv").exists()
    assert (a / "bank" / "coreset.laft").exists()
    assert (a / "tune" / "tuned.tsv").read_text().startswith("tau\t")
    assert len(list((a / "maps" / "per_image").glob("*.pgm"))) == 24
    assert len(list((a / "maps" / "per_category").glob("*.pgm"))) == 24
    assert len(list((a / "rec" / "rec").glob("*.laft"))) == 24


def test_eval_reports_both_ablation_arms(runs):
    a, _ = runs
    rows = [l.split("\t") for l in (a / "eval" / "report.tsv").read_text().splitlines()[1:]]
    for metric in ("det_auroc", "det_aupr", "loc_auroc", "loc_aupro"):
        assert {r[1] for r in rows if r[0] == metric} == {"with_editing", "without_editing"}


def test_effective_config_is_echoed(runs):
    a, _ = runs
    for sub in ("data", "ckpt", "eval"):
        cfg = config.load(a / sub / "config.cfg")
        assert cfg.seed == 3 and cfg.train.steps == 20


def test_seed_flag_changes_data(tmp_path):
    assert main(["datagen", "--seed", "1", "--out", str(tmp_path / "x")]) == 0
    assert main(["datagen", "--seed", "2", "--out", str(tmp_path / "y")]) == 0
    a = (tmp_path / "x" / "train" / "train_c0_00000.laft").read_bytes()
    b = (tmp_path / "y" / "train" / "train_c0_00000.laft").read_bytes()
    assert a != b
    assert config.load(tmp_path / "y" / "config.cfg").seed == 2


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[diffusion]\ntau = 5000\n")
    assert main(["datagen", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "diffusion.tau" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    assert main(["train", "--train", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "o")]) == 3
    assert "--train" in capsys.readouterr().err
    assert main(["eval", "--manifest", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "o")]) == 3
