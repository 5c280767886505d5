"""Trainer plumbing and command-line interface (tiny budgets only)."""

import os

import numpy as np
import pytest

from diclflow.cli import (main, make_parser, build_config, _normalize_flags,
                          _parse_dataset_spec)
from diclflow.data import write_png
from diclflow.training import (RunConfig, evaluate_model, make_dataset,
                               run_ablation, train, write_ablation_csv)


def tiny(**kw):
    base = dict(seed=3, size=(64, 64), head="dot", iters=2, batch_size=1,
                pool_size=3, heldout_size=2, eval_every=1, max_mag=6.0)
    base.update(kw)
    return RunConfig(**base)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(loss_weights=(1.0, 0.5))
    with pytest.raises(ValueError):
        RunConfig(size=(0, 64))
    with pytest.raises(ValueError):
        RunConfig(lr_decay=0.0)
    with pytest.raises(ValueError):
        RunConfig(lr_decay=1.5)
    with pytest.raises(ValueError):
        RunConfig(ema=1.0)


def test_make_dataset_deterministic_and_mixed():
    a = make_dataset(1, ("translation", "smooth"), 4, (64, 64), 6.0)
    b = make_dataset(1, ("translation", "smooth"), 4, (64, 64), 6.0)
    assert len(a) == 4
    for s, t in zip(a, b):
        assert np.array_equal(s.img1, t.img1)
    c = make_dataset(2, ("translation",), 4, (64, 64), 6.0)
    assert not np.array_equal(a[0].img1, c[0].img1)


def test_train_writes_artifacts(tmp_path):
    cfg = tiny(out_dir=str(tmp_path / "run"))
    result = train(cfg)
    assert result["diverged"] is None
    assert os.path.exists(result["curve"])
    assert os.path.exists(result["best_checkpoint"])
    assert os.path.exists(result["final_checkpoint"])
    lines = open(result["curve"]).read().strip().splitlines()
    assert lines[0].startswith("iteration,loss")
    assert len(lines) == cfg.iters + 1
    assert np.isfinite(result["best_epe"])


def test_train_rerun_is_bit_identical(tmp_path):
    r1 = train(tiny(out_dir=str(tmp_path / "a")))
    r2 = train(tiny(out_dir=str(tmp_path / "b")))
    assert open(r1["curve"], "rb").read() == open(r2["curve"], "rb").read()


def test_evaluate_model_outputs(tmp_path):
    cfg = tiny(out_dir=str(tmp_path / "run"))
    result = train(cfg)
    heldout = result["heldout"]
    e, f, med = evaluate_model(result["model"], heldout)
    assert np.isfinite(e) and 0.0 <= f <= 1.0 and 0.0 <= med <= 1.0


def test_ablation_rows_and_csv(tmp_path):
    cfg = tiny(out_dir=str(tmp_path / "ab"), iters=1)
    rows = run_ablation(cfg, heads=("dot", "cosine"))
    assert [r[0] for r in rows] == ["dot", "cosine"]
    csv_path = tmp_path / "ablation.csv"
    write_ablation_csv(csv_path, rows)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "head,heldout_epe,note"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# command line


def test_parser_rejects_unknown_head():
    parser = make_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["train", "--head", "magic"])
    args = parser.parse_args(["train", "--head", "reduced-dicl"])
    assert args.head == "reduced-dicl"


def test_config_file_and_flag_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("seed = 5\nlr = 0.01  # comment\nhead = dot\n"
                        "size = 64x64\ndap = off\n")
    parser = make_parser()
    args = parser.parse_args(["train", "--config", str(cfg_file),
                              "--lr", "0.02"])
    _normalize_flags(args)
    config = build_config(args)
    assert config.seed == 5
    assert config.lr == 0.02          # flag wins over file
    assert config.head == "dot"
    assert config.dap is False


def test_config_file_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("not a pair\n")
    parser = make_parser()
    args = parser.parse_args(["train", "--config", str(bad)])
    with pytest.raises(ValueError):
        build_config(args)
    bad.write_text("volume = 11\n")
    with pytest.raises(ValueError):
        build_config(args)


def test_dataset_spec_parsing():
    spec = _parse_dataset_spec("kind=smooth,count=3,seed=9,size=64x128,mag=4")
    assert spec == {"kind": "smooth", "count": 3, "seed": 9,
                    "size": (64, 128), "mag": 4.0}
    with pytest.raises(ValueError):
        _parse_dataset_spec("planet=mars")


def test_cli_bench(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--K", "64", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "kind,params,param_ratio,memory_elements,memory_ratio"
    assert len(lines) == 4
    assert lines[1].startswith("conv4d,%d," % (81 * 64 * 64))


def test_cli_train_eval_infer_pipeline(tmp_path, capsys):
    out_dir = tmp_path / "run"
    rc = main(["train", "--seed", "3", "--head", "dot", "--iters", "2",
               "--batch-size", "1", "--eval-every", "1", "--size", "64x64",
               "--out-dir", str(out_dir)])
    assert rc == 0
    ckpt = str(out_dir / "final.npz")

    eval_csv = tmp_path / "eval.csv"
    rc = main(["eval", ckpt, "--data", "kind=translation,count=2,seed=4",
               "--out", str(eval_csv)])
    assert rc == 0
    lines = eval_csv.read_text().strip().splitlines()
    assert lines[0] == "sample,epe,fl_all,dpeak_median"
    assert lines[-1].startswith("aggregate")

    rng = np.random.default_rng(0)
    img = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
    write_png(tmp_path / "f1.png", img)
    write_png(tmp_path / "f2.png", img)
    rc = main(["infer", ckpt, str(tmp_path / "f1.png"),
               str(tmp_path / "f2.png"), str(tmp_path / "out")])
    assert rc == 0
    assert (tmp_path / "out.flo").exists()
    assert (tmp_path / "out_color.png").exists()


def test_cli_error_exit_code(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing.npz")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
