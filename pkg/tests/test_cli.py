import os
import xml.etree.ElementTree as ET

import pytest

from sakit.cli import build_parser, main, resolve_config


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_usage_errors_exit_1(capsys):
    code, _, err = run(capsys, "definitely-not-a-command")
    assert code == 1
    code, _, err = run(capsys, "flops")  # missing --preset
    assert code == 1 and "preset" in err
    code, _, err = run(capsys, "bench", "--preset", "cifar-n1", "--repeats", "0")
    assert code == 1 and "repeats" in err
    code, _, _ = run(capsys)
    assert code == 1


def test_flops_command_prints_total(capsys):
    code, out, _ = run(capsys, "flops", "--preset", "resnet50")
    assert code == 0
    assert "4.089 G" in out


def test_flops_scalenet_with_shipped_plan(capsys, tmp_path):
    csv = tmp_path / "blocks.csv"
    code, out, _ = run(capsys, "flops", "--preset", "resnet50",
                       "--plan", "scalenet50", "--out", str(csv))
    assert code == 0
    assert "3.869 G" in out
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "k,scale,channels,unit_cost,subtotal,budget,utilization"
    assert len(lines) > 16


def test_build_writes_spec_and_snapshot(capsys, tmp_path):
    out_file = tmp_path / "net.netspec"
    code, out, _ = run(capsys, "build", "--preset", "cifar-n1",
                       "--allocation", "even", "--out", str(out_file))
    assert code == 0 and out_file.exists()
    assert (tmp_path / "config.resolved.txt").exists()
    text = out_file.read_text()
    assert text.startswith("network ")
    snapshot = (tmp_path / "config.resolved.txt").read_text()
    assert "command=build" in snapshot and "preset=cifar-n1" in snapshot


def test_rf_command(capsys, tmp_path):
    csv = tmp_path / "rf.csv"
    code, out, _ = run(capsys, "rf", "--preset", "resnet50",
                       "--plan", "scalenet50", "--out", str(csv))
    assert code == 0
    lines = csv.read_text().strip().splitlines()
    assert lines[0] == "block_index,min_rf,max_rf"
    assert len(lines) == 17


def test_report_emits_csv_and_wellformed_svg(capsys, tmp_path):
    code, out, _ = run(capsys, "report", "--plan", "scalenet50",
                       "--preset", "resnet50", "--out-dir", str(tmp_path))
    assert code == 0
    for name in ("proportions.csv", "proportions.svg", "rf.csv", "rf.svg"):
        assert (tmp_path / name).exists(), name
    for svg in ("proportions.svg", "rf.svg"):
        root = ET.parse(tmp_path / svg).getroot()
        assert root.tag.endswith("svg")
    rows = (tmp_path / "proportions.csv").read_text().strip().splitlines()
    assert rows[0] == "k,scale,channels,proportion"
    # block-1 shares of 62,9,5,12
    k, s, ch, frac = rows[1].split(",")
    assert (k, s, ch) == ("1", "1", "62")
    assert abs(float(frac) - 62 / 88) < 1e-6


def test_allocate_command_round_trip(capsys, tmp_path):
    imp = tmp_path / "importances.csv"
    bud = tmp_path / "budgets.csv"
    imp.write_text("k,scale,channel,gamma,abs_gamma,unit_cost\n"
                   "1,1,0,0.9,0.9,4\n1,1,1,0.8,0.8,4\n1,2,0,0.7,0.7,1\n"
                   "1,2,1,0.6,0.6,1\n1,4,0,0.5,0.5,1\n")
    bud.write_text("k,budget\n1,9\n")
    plan_path = tmp_path / "plan.txt"
    code, out, _ = run(capsys, "allocate", "--importances", str(imp),
                       "--budgets", str(bud), "--b", "0", "--scales", "1,2,4",
                       "--out", str(plan_path))
    assert code == 0
    text = plan_path.read_text()
    # scan by importance: 4+4 fits, 1 fits, the last two would exceed 9
    assert "1: 2,1,0" in text
    assert "budget 1: 9" in text


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck", "--max-entries", "10")
    assert code == 0
    assert "max relative error" in out


def test_bench_command(capsys):
    code, out, _ = run(capsys, "bench", "--preset", "cifar-n1", "--batch", "2",
                       "--repeats", "2", "--warmup", "1")
    assert code == 0
    assert "mean" in out and "GMACs" in out


def test_train_and_eval_commands(capsys, tmp_path):
    out_dir = tmp_path / "run"
    code, out, _ = run(capsys, "train", "--preset", "cifar-n1",
                       "--dataset", "synthetic", "--classes", "6",
                       "--per-class", "6", "--val-per-class", "3",
                       "--epochs", "1", "--batch", "8", "--lr", "0.05",
                       "--seed", "5", "--deterministic",
                       "--out-dir", str(out_dir))
    assert code == 0, out
    assert (out_dir / "final.sanc").exists()
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "config.resolved.txt").exists()
    code, out, _ = run(capsys, "eval", "--checkpoint", str(out_dir / "final.sanc"),
                       "--dataset", "synthetic", "--classes", "6",
                       "--val-per-class", "3", "--seed", "5")
    assert code == 0
    assert "top1 error" in out


def test_runtime_failure_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "missing.sanc"),
                       "--dataset", "synthetic")
    assert code == 2
    assert "error" in err


def test_config_precedence_env_flag_file(tmp_path, monkeypatch):
    parser = build_parser()
    cfg_file = tmp_path / "conf.txt"
    cfg_file.write_text("seed=1\nepochs=3\n")
    args = parser.parse_args(["train", "--config", str(cfg_file), "--seed", "2"])
    cfg = resolve_config("train", args)
    assert cfg["seed"] == 2        # flag beats file
    assert cfg["epochs"] == 3      # file beats default
    monkeypatch.setenv("SAKIT_SEED", "7")
    cfg = resolve_config("train", args)
    assert cfg["seed"] == 7        # env beats flag
    monkeypatch.setenv("SAKIT_NOT_A_KEY", "1")
    from sakit.cli import UsageError
    with pytest.raises(UsageError, match="NOT_A_KEY"):
        resolve_config("train", args)


def test_unknown_config_file_key_rejected(tmp_path):
    parser = build_parser()
    cfg_file = tmp_path / "conf.txt"
    cfg_file.write_text("frobnicate=1\n")
    args = parser.parse_args(["flops", "--preset", "resnet50",
                              "--config", str(cfg_file)])
    from sakit.cli import UsageError
    with pytest.raises(UsageError, match="frobnicate"):
        resolve_config("flops", args)


def test_pipeline_matches_manual_stage_composition(tmp_path):
    """pipeline == train-seed; allocate; build; retrain, given one seed."""
    from sakit.allocator import (ProjectionConfig, extract_importance,
                                 plan_from_results, project_network, run_pipeline)
    from sakit.data import synthetic_dataset
    from sakit.flops import network_flops
    from sakit.presets import build_cifar_resnet, build_scalenet, build_seed
    from sakit.training import TrainConfig, train

    classes, per = 4, 5
    train_ds = synthetic_dataset(classes, per, 32, seed=3, split="train")
    val_ds = synthetic_dataset(classes, 2, 32, seed=3, split="val")
    base = build_cifar_resnet(1, num_classes=classes, in_channels=1)
    cfg = TrainConfig(epochs=1, batch_size=8, lr=0.05, seed=3, deterministic=True)

    result = run_pipeline(base, [1, 2, 4], train_ds, val_ds, cfg,
                          ProjectionConfig(0.0), out_dir=tmp_path / "p")

    seed_spec = build_seed(base, [1, 2, 4])
    seed_res = train(seed_spec, train_ds, val_ds, cfg)
    records = extract_importance(seed_res.tensors(), seed_spec)
    budgets = {k: b.budget for k, b in network_flops(seed_spec).budgets.items()}
    plan = plan_from_results(project_network(records, budgets), [1, 2, 4],
                             budgets=budgets)
    assert plan.rows == result.plan.rows
    final_res = train(build_scalenet(base, result.plan), train_ds, val_ds, cfg)
    assert final_res.metrics == result.final_metrics


def test_scalenet_preset_alias(capsys):
    code, out, _ = run(capsys, "flops", "--preset", "scalenet50")
    assert code == 0
    assert "3.869 G" in out
    code, out, _ = run(capsys, "rf", "--preset", "scalenet50",
                       "--out", os.devnull)
    assert code == 0


def test_pipeline_command_end_to_end(capsys, tmp_path):
    code, out, _ = run(capsys, "pipeline", "--preset", "cifar-n1",
                       "--dataset", "synthetic", "--classes", "4",
                       "--per-class", "4", "--val-per-class", "2",
                       "--epochs", "1", "--batch", "8", "--lr", "0.05",
                       "--seed", "3", "--deterministic",
                       "--out-dir", str(tmp_path))
    assert code == 0, out
    for name in ("seed.netspec", "seed.sanc", "importances.csv", "budgets.csv",
                 "plan.txt", "final.netspec", "final.sanc", "seed_metrics.csv",
                 "final_metrics.csv", "proportions.csv", "proportions.svg",
                 "rf.csv", "rf.svg", "config.resolved.txt"):
        assert (tmp_path / name).exists(), name
    assert "final val top1" in out


def test_even_plan_proportions_are_uniform():
    from sakit.presets import build_cifar_resnet, even_allocation
    from sakit.report import plan_proportions

    base = build_cifar_resnet(1, num_classes=10)
    plan = even_allocation(base, [1, 2, 4])
    for _k, counts, fracs in plan_proportions(plan):
        for f in fracs:
            assert abs(f - 1 / 3) <= 1 / sum(counts)  # exact up to remainders
