from dataclasses import replace

import numpy as np
import pytest

from pnsrisk.cli import (
    ConfigError,
    ExperimentSpec,
    config_hash,
    main,
    normalize_config,
    parse_config,
    parse_train_config,
    run_repro,
    serialize_config,
    serialize_train_config,
)
from pnsrisk.synth import SynthConfig, generate, read_csv
from pnsrisk.train import TrainConfig

CAT_LEGS_SCM = """\
# deterministic-on-one-side cause
c_values 0 1
u_values 0 1
u_probs 0.5 0.5
c_probs 0.5 0.5
y 1 0 1
y 1 1 1
y 0 0 0
y 0 1 1
"""

SMALL_TRAIN = """\
total_steps = 10
batch_size = 16
rep_dim = 4
hidden = 8, 6
max_every = 5
"""


class TestFlatConfig:
    def test_defaults_from_empty_file(self):
        assert parse_train_config("") == TrainConfig()

    def test_round_trip(self):
        cfg = parse_train_config(SMALL_TRAIN)
        assert cfg.total_steps == 10
        assert cfg.hidden == (8, 6)
        assert parse_train_config(serialize_train_config(cfg)) == cfg

    def test_comments_and_blanks_ignored(self):
        cfg = parse_train_config("# intro\n\nlam = 0.5  # inline\n")
        assert cfg.lam == 0.5

    def test_unknown_key_names_key_and_line(self):
        with pytest.raises(ConfigError, match=r"line 2: unknown key 'lr'"):
            parse_train_config("lam = 0.5\nlr = 1.0\n")

    def test_missing_equals_gives_line(self):
        with pytest.raises(ConfigError, match="line 1: expected key = value"):
            parse_train_config("just words\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate key 'lam'"):
            parse_train_config("lam = 0.5\nlam = 0.6\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_train_config("total_steps = soon\n")

    def test_optional_float_and_bool(self):
        cfg = parse_train_config("fixed_var = none\nadversary_kl = false\n")
        assert cfg.fixed_var is None and cfg.adversary_kl is False
        cfg = parse_train_config("fixed_var = 0.001\n")
        assert cfg.fixed_var == 0.001
        with pytest.raises(ConfigError, match="true or false"):
            parse_train_config("adversary_kl = yes\n")


class TestExperimentSpec:
    def test_minimal_file_applies_defaults(self):
        spec = parse_config("[grid]\nseed = 3\n")
        assert spec.name == "experiment"
        assert spec.synth == SynthConfig()
        assert spec.train == TrainConfig()
        assert spec.grid() == [(spec.train.delta, spec.train.lam,
                                spec.train.variant, 3)]

    def test_grid_cross_product(self):
        spec = parse_config(
            "[grid]\ndelta = 0.5, 1.1\nvariant = casn, casn_minus_m\n"
            "seed = 0, 1\n")
        assert len(spec.grid()) == 8
        assert len(set(spec.grid())) == 8

    def test_empty_grid_list(self):
        spec = parse_config("[grid]\nseed =\n")
        assert spec.grid() == []

    def test_round_trip_is_normalization(self):
        messy = (
            "# comment\n[experiment]\nname = demo\n\n[synth]\n  s = 0.7\n"
            "[train]\ntotal_steps = 5\n[grid]\nseed = 1,2\n"
            "[acceptance]\ndcor_sn_min = 0.75\n")
        normalized = normalize_config(messy)
        assert serialize_config(parse_config(messy)) == normalized
        assert normalize_config(normalized) == normalized
        spec = parse_config(normalized)
        assert spec.name == "demo" and spec.synth.s == 0.7
        assert spec.dcor_sn_min == 0.75 and spec.ablation_margin is None

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section 'model'"):
            parse_config("[model]\nrep_dim = 4\n")

    def test_unknown_key_in_section(self):
        with pytest.raises(ConfigError, match=r"line 2: unknown key 'width'"):
            parse_config("[synth]\nwidth = 3\n")

    def test_key_outside_section(self):
        with pytest.raises(ConfigError, match="outside any section"):
            parse_config("seed = 0\n")

    def test_repeated_section(self):
        with pytest.raises(ConfigError, match="repeated section"):
            parse_config("[grid]\n[train]\n[grid]\n")

    def test_duplicate_grid_value(self):
        with pytest.raises(ConfigError, match="duplicate values"):
            parse_config("[grid]\nseed = 0, 0\n")

    def test_hash_ignores_formatting(self):
        a = config_hash(normalize_config("[grid]\nseed = 1\n"))
        b = config_hash(normalize_config("# x\n[grid]\n\nseed =  1\n"))
        assert a == b


def test_synth_writes_csv_config_and_sidecar(tmp_path):
    out = tmp_path / "data.csv"
    assert main(["synth", "--d", "2", "--s", "0.3", "--n", "40",
                 "--seed", "7", "--out", str(out)]) == 0
    data = read_csv(out)
    want = generate(SynthConfig(d=2, s=0.3, n_train=40, seed=7), 40)
    assert np.array_equal(data.x, want.x) and np.array_equal(data.y, want.y)
    assert (tmp_path / "data.csv.config").exists()
    digest = (tmp_path / "data.csv.sha256").read_text().strip()
    assert len(digest) == 64


def test_oracle_prints_report(tmp_path, capsys):
    scm_path = tmp_path / "scm.txt"
    scm_path.write_text(CAT_LEGS_SCM)
    assert main(["oracle", "--scm", str(scm_path), "--c", "1",
                 "--cbar", "0", "--y", "1"]) == 0
    out = capsys.readouterr().out
    assert "pn = 0.5" in out and "ps = 1.0" in out
    assert "pns = 0.5" in out and "monotone = true" in out


def test_oracle_bad_file_is_clean_error(tmp_path, capsys):
    scm_path = tmp_path / "scm.txt"
    scm_path.write_text("c_values 0 1\nbogus 3\n")
    assert main(["oracle", "--scm", str(scm_path), "--c", "1",
                 "--cbar", "0"]) == 2
    assert "error:" in capsys.readouterr().err


def test_bounds_all_hold(tmp_path):
    out = tmp_path / "bounds.csv"
    assert main(["bounds", "--out", str(out), "--instances", "5",
                 "--seed", "1"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "instance_id,lhs,rhs,beta_inf,eta,holds"
    assert len(lines) == 11
    assert all(line.endswith("true") for line in lines[1:])
    deviation = [l for l in lines[1:] if l.startswith("deviation-")]
    assert deviation and all(l.split(",")[3] == "" for l in deviation)
    assert (tmp_path / "bounds.csv.sha256").exists()


def test_train_then_eval_round_trip(tmp_path, capsys):
    data_csv = tmp_path / "data.csv"
    main(["synth", "--d", "2", "--s", "0.2", "--n", "64", "--seed", "3",
          "--out", str(data_csv)])
    config = tmp_path / "train.cfg"
    config.write_text(SMALL_TRAIN + "seed = 5\ndelta = 0.9\n")
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(config), "--data", str(data_csv),
                 "--out", str(run_dir)]) == 0
    for name in ("model.ckpt", "trace.csv", "risk.csv", "config.txt",
                 "trace.csv.sha256", "risk.csv.sha256"):
        assert (run_dir / name).exists()
    trace_lines = (run_dir / "trace.csv").read_text().splitlines()
    assert trace_lines[0] == "step,sf,m,kl_c,kl_cbar,hinge"
    assert len(trace_lines) == 11

    eval_csv = tmp_path / "eval.csv"
    assert main(["eval", "--checkpoint", str(run_dir / "model.ckpt"),
                 "--data", str(data_csv), "--out", str(eval_csv)]) == 0
    header, row = eval_csv.read_text().splitlines()
    assert header == "delta,s,seed,dcor_sn,dcor_sf,dcor_nc,dcor_sp,accuracy"
    cells = row.split(",")
    assert cells[0] == "0.9" and cells[1] == "0.2" and cells[2] == "5"
    assert all(0.0 <= float(v) <= 1.0 for v in cells[3:7])


def test_train_divergence_is_reported(tmp_path, capsys):
    data_csv = tmp_path / "data.csv"
    main(["synth", "--d", "2", "--n", "64", "--out", str(data_csv)])
    config = tmp_path / "train.cfg"
    config.write_text("total_steps = 300\nbatch_size = 16\nrep_dim = 4\n"
                      "hidden = 8, 6\nlr_min = 1e18\n")
    assert main(["train", "--config", str(config), "--data", str(data_csv),
                 "--out", str(tmp_path / "run")]) == 1
    assert "diverged" in capsys.readouterr().err


REPRO_SPEC = """\
[experiment]
name = smoke

[synth]
d = 2
s = 0.2
n_train = 96
n_eval = 48
seed = 1

[train]
total_steps = 8
batch_size = 16
rep_dim = 4
hidden = 8, 6
max_every = 4

[grid]
delta = 0.9
variant = casn, casn_minus_m
seed = 0, 1
"""


class TestRepro:
    def test_empty_grid_is_vacuous_pass(self, tmp_path, capsys):
        spec_file = tmp_path / "spec.txt"
        spec_file.write_text("[grid]\nseed =\n")
        assert main(["repro", "--spec", str(spec_file),
                     "--out", str(tmp_path / "out")]) == 0
        out = capsys.readouterr().out
        assert "PASS runs_completed" in out
        summary = (tmp_path / "out" / "summary.csv").read_text().splitlines()
        assert len(summary) == 1  # header only

    def test_grid_summary_shape_and_ablation_blank(self, tmp_path, capsys):
        spec_file = tmp_path / "spec.txt"
        spec_file.write_text(REPRO_SPEC)
        out_dir = tmp_path / "out"
        assert main(["repro", "--spec", str(spec_file),
                     "--out", str(out_dir)]) == 0
        summary = (out_dir / "summary.csv").read_text().splitlines()
        assert summary[0] == ("delta,lam,variant,seeds,dcor_sn,dcor_sf,"
                              "dcor_nc,dcor_sp,accuracy,sf,m")
        assert len(summary) == 3
        full = next(l for l in summary[1:] if ",casn," in l)
        ablated = next(l for l in summary[1:] if "casn_minus_m" in l)
        assert full.split(",")[3] == "2"
        assert ablated.endswith(",")  # no m value for the ablation
        assert full.split(",")[-1] != ""
        runs = (out_dir / "runs.csv").read_text().splitlines()
        assert len(runs) == 5
        assert (out_dir / "runs" / "delta0.9_lam0.01_casn_seed1"
                / "model.ckpt").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        spec = parse_config(REPRO_SPEC)
        run_repro(spec, tmp_path / "a")
        run_repro(spec, tmp_path / "b")
        for name in ("summary.csv", "runs.csv", "spec.txt"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes()), name

    def test_aborted_run_fails_pipeline(self, tmp_path, capsys):
        spec = parse_config(REPRO_SPEC)
        bad = ExperimentSpec(
            name=spec.name, synth=spec.synth,
            train=replace(spec.train, lr_min=1e18, total_steps=200),
            grid_delta=(0.9,), grid_variant=("casn",), grid_seed=(0,))
        assert run_repro(bad, tmp_path / "out") is False
        out = capsys.readouterr().out
        assert "FAIL runs_completed" in out
        assert (tmp_path / "out" / "aborted.csv").exists()

    def test_hard_check_gates_exit(self, tmp_path, capsys):
        spec_file = tmp_path / "spec.txt"
        spec_file.write_text(REPRO_SPEC + "\n[acceptance]\ndcor_sn_min = 1.5\n")
        assert main(["repro", "--spec", str(spec_file),
                     "--out", str(tmp_path / "out")]) == 1
        assert "FAIL dcor_sn_min" in capsys.readouterr().out

    def test_soft_check_reports_without_gating(self, tmp_path, capsys):
        spec_file = tmp_path / "spec.txt"
        # an impossible soft margin: full model must beat ablation by >= 2
        spec_file.write_text(REPRO_SPEC
                             + "\n[acceptance]\nablation_margin = -2.0\n")
        code = main(["repro", "--spec", str(spec_file),
                     "--out", str(tmp_path / "out")])
        out = capsys.readouterr().out
        assert "ablation_margin (soft)" in out
        assert code == 0
