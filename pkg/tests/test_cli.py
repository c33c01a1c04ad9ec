import csv
import statistics

import numpy as np
import pytest

from opensetseg import cli
from opensetseg.config import ConfigError, defaults, dump_run_config, load_run_config
from opensetseg.trainer import MODES, init_state, load_checkpoint

TINY = [
    "scene.height=24", "scene.width=24", "scene.size_min=5", "scene.size_max=8",
    "scene.objects_min=2", "scene.objects_max=3",
    "scene.num_source=6", "scene.num_target=6", "scene.num_eval=3",
    "trainer.steps=3", "trainer.width=4", "morph.crop_size=16",
]


def run(tmp_path, *argv, extra=()):
    args = list(argv) + ["--out", str(tmp_path)]
    for item in TINY + list(extra):
        args += ["--override", item]
    return cli.main(args)


# -- config -------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    rc = load_run_config()
    path = tmp_path / "cfg.ini"
    path.write_text(dump_run_config(rc, {"note": "comment lines are ignored"}))
    assert load_run_config(path) == rc
    text = dump_run_config(rc)
    for section, values in defaults().items():
        assert f"[{section}]" in text
        for key in values:
            assert f"\n{key} = " in text


def test_config_overrides_and_file(tmp_path):
    path = tmp_path / "cfg.ini"
    path.write_text("[trainer]\nsteps = 7\nmode = head_expansion\n[run]\nseeds = 4, 5\n")
    rc = load_run_config(path, ["trainer.steps=9", "decon.temperature=0.2"])
    assert rc.trainer.steps == 9 and rc.trainer.mode == "head_expansion"
    assert rc.trainer.decon.temperature == 0.2
    assert rc.seeds == (4, 5)
    assert rc.archive == rc.out / "benchmark"


@pytest.mark.parametrize("item", ["nosuch.key=1", "trainer.nosuch=1", "trainer.steps=many", "trainer.steps"])
def test_config_structural_errors(item):
    with pytest.raises(ConfigError):
        load_run_config(overrides=[item])


@pytest.mark.parametrize("item", ["trainer.mode=magic", "trainer.tau_p=1.5", "morph.crop_size=100", "run.jobs=0"])
def test_config_value_errors(item):
    with pytest.raises(ValueError) as info:
        load_run_config(overrides=[item])
    assert not isinstance(info.value, ConfigError)


# -- exit codes -----------------------------------------------------------------

def test_exit_usage(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["fly"])
    assert info.value.code == 1
    assert run(tmp_path, "generate", extra=["scene.bogus=1"]) == 1


def test_exit_io(tmp_path):
    assert run(tmp_path, "train", extra=[f"run.archive={tmp_path / 'missing'}"]) == 2


def test_exit_validation(tmp_path):
    names = ",".join(load_run_config().scene.class_names)
    extra = ["scene.allow_stuff_private=true", f"scene.private_classes={names}"]
    assert run(tmp_path, "generate", extra=extra) == 3


# -- commands -------------------------------------------------------------------

def test_generate_is_reproducible(tmp_path, capsys):
    assert run(tmp_path / "a", "generate") == 0
    assert run(tmp_path / "b", "generate") == 0
    first, second = capsys.readouterr().out.splitlines()
    assert first.split()[0] == second.split()[0]
    root_a, root_b = tmp_path / "a" / "benchmark", tmp_path / "b" / "benchmark"
    files = sorted(p.relative_to(root_a) for p in root_a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(root_b) for p in root_b.rglob("*") if p.is_file())
    for f in files:
        assert (root_a / f).read_bytes() == (root_b / f).read_bytes()


def test_train_eval_is_byte_identical(tmp_path):
    reports = []
    assert run(tmp_path, "generate") == 0
    for _ in range(2):
        assert run(tmp_path, "train", "--mode", "bus_full", "--seed", "3") == 0
        assert run(tmp_path, "eval", "--mode", "bus_full", "--seed", "3") == 0
        d = tmp_path / "bus_full" / "seed3"
        reports.append(((d / "report.json").read_bytes(), (d / "report.csv").read_bytes(), (d / "model.ckpt").read_bytes()))
    assert reports[0] == reports[1]
    for name in ("config.ini", "log.csv", "curve.svg"):
        assert (d / name).stat().st_size > 0
    assert len(list((d / "vis").glob("*.ppm"))) == 3


def test_zero_lr_checkpoint_equals_init(tmp_path):
    assert run(tmp_path, "generate") == 0
    assert run(tmp_path, "train", "--mode", "head_expansion", extra=["trainer.steps=1", "trainer.lr=0"]) == 0
    state, cfg, cs, _ = load_checkpoint(tmp_path / "head_expansion" / "seed0" / "model.ckpt")
    init = init_state(cfg.net_shape(cs), cfg.seed)
    np.testing.assert_array_equal(state.student, init.student)
    np.testing.assert_array_equal(state.teacher, init.student)


def test_eval_rejects_mismatched_class_space(tmp_path):
    assert run(tmp_path, "generate") == 0
    assert run(tmp_path, "train", "--mode", "head_expansion") == 0
    ckpt = tmp_path / "head_expansion" / "seed0" / "model.ckpt"
    rc = load_run_config()
    other = rc.scene.thing_classes[0]
    extra = [f"scene.private_classes={other}", f"run.archive={tmp_path / 'other'}"]
    assert run(tmp_path, "generate", extra=extra) == 0
    assert run(tmp_path, "eval", "--checkpoint", str(ckpt), "--report-dir", str(tmp_path / "x"), extra=extra) == 3


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_ablate_summary_matches_runs(tmp_path, capsys):
    assert run(tmp_path, "ablate", "--seeds", "0,1") == 0
    runs = read_csv(tmp_path / "ablation" / "runs.csv")
    summary = read_csv(tmp_path / "ablation" / "summary.csv")
    assert len(runs) == 2 * len(MODES) and len(summary) == len(MODES)
    assert [r["mode"] for r in summary] == list(MODES)
    for row in summary:
        mine = [r for r in runs if r["mode"] == row["mode"]]
        assert row["runs"] == "2"
        for key in ("common", "private", "h_score"):
            vals = [float(r[key]) for r in mine]
            assert float(row[f"{key}_mean"]) == pytest.approx(statistics.mean(vals), abs=0.006)
            assert float(row[f"{key}_std"]) == pytest.approx(statistics.stdev(vals), abs=0.006)
    assert "H" in capsys.readouterr().out
