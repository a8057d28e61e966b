import json
import shutil

import pytest
import yaml

from idiomctx.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main

from conftest import TOY_TEST, TOY_TRAIN


@pytest.fixture
def config(tmp_path):
    train = tmp_path / "train.csv"
    test = tmp_path / "test.csv"
    shutil.copyfile(TOY_TRAIN, train)
    shutil.copyfile(TOY_TEST, test)
    raw = {
        "data": {"train": "train.csv", "dev": "train.csv", "test": "train.csv",
                 "label_values": {"1": "idiomatic", "0": "non_idiomatic"}},
        "encoder": {"name": "toy", "hidden_size": 16, "layers": 1, "heads": 2, "ff_size": 32},
        "training": {"seeds": [42], "epochs": 10, "lr": 1e-3, "train_batch": 4, "max_len": 96},
        "output_dir": "out",
        "ablation": {"variants": ["Full", "A", "B"]},
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_train_writes_run_directory(config, capsys):
    assert main(["train", str(config)]) == EXIT_OK
    out = config.parent / "out"
    lines = (out / "seed_42" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["epoch"] for x in lines] == list(range(1, 11))
    for name in ("config.yaml", "report.tsv", "summary.json", "runs.jsonl", "dev_curves.png"):
        assert (out / name).stat().st_size > 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_runs"] == 1 and "test" in summary
    snap = yaml.safe_load((out / "config.yaml").read_text())
    assert snap["data"]["train"] == str(config.parent / "train.csv")
    assert "seed 42" in capsys.readouterr().out


def test_fixed_epoch_selection(config):
    assert main(["train", str(config), "--set", "training.selection=fixed_epoch:9",
                 "--set", "training.storage_constrained=true"]) == EXIT_OK
    run = json.loads((config.parent / "out" / "runs.jsonl").read_text().splitlines()[0])
    assert run["selected_checkpoint_id"].endswith("epoch9")
    assert (config.parent / "out" / "seed_42" / "checkpoints" / "seed42-epoch9.pt").exists()


@pytest.mark.parametrize("override", ["variant=G", "training.epochs=0", "nonsense=1", "overall=median",
                                      "data.train=missing.csv", "training.selection=latest"])
def test_invalid_config_exit_1(config, override, capsys):
    assert main(["train", str(config), "--set", override]) == EXIT_INVALID
    assert "invalid config" in capsys.readouterr().err


def test_missing_label_values(config):
    raw = yaml.safe_load(config.read_text())
    del raw["data"]["label_values"]
    config.write_text(yaml.safe_dump(raw))
    assert main(["train", str(config)]) == EXIT_INVALID


def test_bad_arguments_exit_1():
    assert main(["train"]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID


def test_predict_and_evaluate(config, tmp_path, capsys):
    assert main(["train", str(config), "--set", "training.epochs=3"]) == EXIT_OK
    ckpt = next((config.parent / "out" / "seed_42" / "checkpoints").glob("*.pt"))
    sub1, sub2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    test = str(config.parent / "test.csv")
    assert main(["predict", str(ckpt), test, str(sub1), "--config", str(config)]) == EXIT_OK
    assert main(["predict", str(ckpt), test, str(sub2)]) == EXIT_OK
    lines = sub1.read_text().splitlines()
    assert lines[0] == "ID,Language,Setting,Label" and len(lines) == 5
    assert sub1.read_bytes() == sub2.read_bytes()
    capsys.readouterr()
    assert main(["evaluate", str(ckpt), str(config.parent / "train.csv"), "--config", str(config)]) == EXIT_OK
    header, row = capsys.readouterr().out.splitlines()
    assert header == "Model / Lang.\tEnglish\tPortuguese\tGalician\tOverall"
    assert row.startswith(ckpt.stem) and len(row.split("\t")) == 5


def test_predict_corrupted_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"\x00garbage")
    out = tmp_path / "sub.csv"
    assert main(["predict", str(bad), str(TOY_TEST), str(out)]) == EXIT_RUNTIME
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_predict_fingerprint_mismatch(config, tmp_path):
    assert main(["train", str(config), "--set", "training.epochs=1"]) == EXIT_OK
    ckpt = next((config.parent / "out").rglob("*.pt"))
    out = tmp_path / "sub.csv"
    rc = main(["predict", str(ckpt), str(TOY_TEST), str(out), "--config", str(config),
               "--set", "form_mode=original"])
    assert rc == EXIT_RUNTIME and not out.exists()


def test_ablate_three_variants(config):
    assert main(["ablate", str(config), "--set", "training.epochs=2"]) == EXIT_OK
    out = config.parent / "out"
    rows = (out / "comparison.tsv").read_text().splitlines()[1:]
    assert {r.split("\t")[1] for r in rows} == {"Full", "A", "B"}
    assert (out / "comparison.png").stat().st_size > 0
    assert (out / "comparison_pivot.tsv").exists() and (out / "comparison_plot.tsv").exists()
    assert (out / "variant_A" / "summary.json").exists()


def test_ablate_all_variants_five_seeds(config):
    rc = main(["ablate", str(config), "--set", "training.epochs=1",
               "--set", "training.seeds=[42,360,2578,5925,9463]",
               "--set", "ablation.variants=[Full,A,B,C,D,E,F]"])
    assert rc == EXIT_OK
    rows = [r.split("\t") for r in (config.parent / "out" / "comparison.tsv").read_text().splitlines()[1:]]
    test_rows = [r for r in rows if r[2] == "test"]
    assert {r[1] for r in test_rows} == {"Full", "A", "B", "C", "D", "E", "F"}
    assert all(r[3] == "5" for r in test_rows)


def test_ablate_form_modes(config):
    rc = main(["ablate", str(config), "--set", "training.epochs=1", "--set", "ablation={form_modes: [inflectional, original]}"])
    assert rc == EXIT_OK
    pivot = (config.parent / "out" / "comparison_pivot.tsv").read_text().splitlines()
    assert pivot[0] == "setting\tgroup\tdev\ttest" and len(pivot) == 3


def test_ablate_empty_list(config):
    assert main(["ablate", str(config), "--set", "ablation.variants=[]"]) == EXIT_INVALID


def test_ablate_requires_section(config):
    raw = yaml.safe_load(config.read_text())
    del raw["ablation"]
    config.write_text(yaml.safe_dump(raw))
    assert main(["ablate", str(config)]) == EXIT_INVALID
