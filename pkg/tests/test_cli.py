"""Command-line front end: exit codes, artifacts, replay, audits, ablations."""

import json

import pytest

from collapselab.cli import main
from collapselab.config import ExperimentConfig
from collapselab.policy import PolicyParams, save_checkpoint
from collapselab.rollout import write_rollout_log
from collapselab.trainer import replay_metrics
from util import fake_batch, tiny_spec

TINY_CFG = """
[env]
kind = contextual_target

[policy]
num_prompts = 4
reasoning_len = 1
vocab_size = 2
num_actions = 4
init_scale = 0.5

[train]
iterations = 4
group_size = 4
learning_rate = 0.5
eval_prompts = 16
eval_every = 2
early_stop = false
log_rollouts = false
"""

COLLAPSING_CFG = """
[run]
seed = 3

[env]
kind = contextual_target
targets = 1,3

[policy]
num_prompts = 2
reasoning_len = 1
vocab_size = 2
num_actions = 4
init_scale = 0.0

[train]
iterations = 400
group_size = 8
learning_rate = 5.0
lambda_kl = 0.0
lambda_ent = 0.0
eval_prompts = 128
eval_every = 1
early_stop = true
success_floor = 0.0
log_rollouts = false
"""


def write_cfg(tmp_path, text, name="tiny.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# -- train -----------------------------------------------------------------------


def test_train_writes_run_dir(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY_CFG)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists()
    assert (out / "summary.json").exists()
    assert (out / "resolved.cfg").exists()
    assert (out / "checkpoints" / "final.json").exists()
    assert len(replay_metrics(out / "metrics.csv")) == 4
    assert str(out) in capsys.readouterr().out


def test_train_overrides_reach_resolved_config(tmp_path):
    cfg = write_cfg(tmp_path, TINY_CFG)
    out = tmp_path / "run"
    code = main(["train", "--config", cfg, "--out", str(out),
                 "--set", "filter.strategy=top_p", "--set", "filter.rho=0.7",
                 "--seed", "12"])
    assert code == 0
    resolved = ExperimentConfig.from_file(out / "resolved.cfg")
    assert resolved.get("filter", "strategy") == "top_p"
    assert resolved.get("filter", "rho") == 0.7
    assert resolved.seed() == 12


def test_train_rejects_bad_values(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY_CFG)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "x"),
                 "--set", "filter.rho=1.5"]) == 1
    assert "filter.rho" in capsys.readouterr().err
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "y"),
                 "--threads", "0"]) == 1
    assert "--threads" in capsys.readouterr().err


def test_usage_errors_exit_one_not_two(capsys):
    assert main(["trian"]) == 1
    err = capsys.readouterr().err
    assert "error:" in err and "usage" in err.lower()


def test_missing_config_file_reports_cleanly(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 1
    assert "error:" in capsys.readouterr().err


def test_early_stop_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, COLLAPSING_CFG, name="hot.cfg")
    code = main(["train", "--config", cfg, "--out", str(tmp_path / "hot")])
    assert code == 2
    assert "rv_collapse" in capsys.readouterr().out


def test_default_out_dir_from_env(tmp_path, monkeypatch):
    base = tmp_path / "stash"
    monkeypatch.setenv("COLLAPSE_LAB_OUT", str(base))
    cfg = write_cfg(tmp_path, TINY_CFG, name="baseline.cfg")
    assert main(["train", "--config", cfg]) == 0
    assert (base / "baseline-s0" / "metrics.csv").exists()


def test_thread_flag_never_changes_results(tmp_path):
    cfg = write_cfg(tmp_path, TINY_CFG)
    outs = []
    for threads, name in (("1", "a"), ("4", "b")):
        out = tmp_path / name
        assert main(["train", "--config", cfg, "--out", str(out),
                     "--threads", threads]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


# -- diagnose --------------------------------------------------------------------


@pytest.fixture()
def logged_run(tmp_path):
    cfg = write_cfg(tmp_path, TINY_CFG.replace("iterations = 4", "iterations = 3")
                    .replace("log_rollouts = false",
                             "log_rollouts = true\ncheckpoint_every = 1"))
    out = tmp_path / "logged"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return out


def test_diagnose_reproduces_training_panel(logged_run, tmp_path, capsys):
    doc_path = tmp_path / "diag.json"
    code = main(["diagnose", "--log", str(logged_run / "rollouts"),
                 "--checkpoint", str(logged_run / "checkpoints"),
                 "--out", str(doc_path)])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == json.loads(doc_path.read_text())
    records = replay_metrics(logged_run / "metrics.csv")
    assert [r["iter"] for r in doc["rows"]] == [r.iteration for r in records]
    for row, rec in zip(doc["rows"], records):
        for col in ("ret", "ret_acc", "mi_est", "mi_seq", "mi_z", "mi_z_ema",
                    "h_cond", "h_marg", "rv_mean"):
            assert abs(row[col] - getattr(rec, col)) <= 1e-12


def test_diagnose_single_pair(logged_run, capsys):
    code = main(["diagnose",
                 "--log", str(logged_run / "rollouts" / "iter_00001.jsonl"),
                 "--checkpoint", str(logged_run / "checkpoints" / "iter_00001.json")])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["rows"]) == 1 and doc["rows"][0]["iter"] == 1


def test_diagnose_corrupt_log_names_the_line(logged_run, tmp_path, capsys):
    log = logged_run / "rollouts" / "iter_00000.jsonl"
    lines = log.read_text().splitlines()
    lines[1] = '{"broken":'
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    code = main(["diagnose", "--log", str(bad),
                 "--checkpoint", str(logged_run / "checkpoints" / "iter_00000.json")])
    assert code == 1
    err = capsys.readouterr().err
    assert "error:" in err and "2" in err


def test_diagnose_refuses_seedless_logs(tmp_path, capsys):
    batch = fake_batch([[0.0, 1.0], [1.0, 0.0]], seed=None)
    log = tmp_path / "anon.jsonl"
    write_rollout_log(batch, log)
    ckpt = tmp_path / "params.json"
    save_checkpoint(PolicyParams.zeros(tiny_spec(P=2, L=1, V=2, A=4)), ckpt)
    assert main(["diagnose", "--log", str(log), "--checkpoint", str(ckpt)]) == 1
    assert "seed" in capsys.readouterr().err


def test_diagnose_missing_checkpoint_pair(logged_run, tmp_path, capsys):
    lonely = tmp_path / "ckpts"
    lonely.mkdir()
    assert main(["diagnose", "--log", str(logged_run / "rollouts"),
                 "--checkpoint", str(lonely)]) == 1
    assert "missing checkpoint" in capsys.readouterr().err


# -- verify ----------------------------------------------------------------------


def test_verify_subset_passes_and_reports(tmp_path, capsys):
    out = tmp_path / "audit.json"
    code = main(["verify", "--suite", "g3,l1_decomp", "--trials", "50",
                 "--out", str(out)])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc == json.loads(out.read_text())
    assert doc["passed"] is True
    assert [r["name"] for r in doc["results"]] == ["g3", "l1_decomp"]
    assert all(r["pass"] and r["trials"] == 50 for r in doc["results"])


def test_verify_unknown_audit_lists_choices(capsys):
    assert main(["verify", "--suite", "bogus"]) == 1
    err = capsys.readouterr().err
    assert "bogus" in err and "g3" in err


# -- ablate ----------------------------------------------------------------------


def test_ablate_quartile_produces_four_arms(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TINY_CFG)
    out = tmp_path / "abl"
    code = main(["ablate", "quartile", "--config", cfg, "--out", str(out)])
    assert code == 0
    doc = json.loads((out / "comparison.json").read_text())
    assert doc["kind"] == "quartile"
    assert set(doc["arms"]) == {"q1", "q2", "q3", "q4"}
    assert doc["seeds"] == [0]
    for name in ("q1", "q2", "q3", "q4"):
        assert (out / name / "metrics.csv").exists()
    assert json.loads(capsys.readouterr().out) == doc


def test_ablate_filter_compare_arms_and_seeds(tmp_path):
    cfg = write_cfg(tmp_path, TINY_CFG)
    out = tmp_path / "fc"
    code = main(["ablate", "filter_compare", "--config", cfg, "--out", str(out),
                 "--seeds", "0,1"])
    assert code == 0
    doc = json.loads((out / "comparison.json").read_text())
    assert set(doc["arms"]) == {"none", "top_p", "top_k", "min_p"}
    assert doc["seeds"] == [0, 1]
    assert all(arm["runs"] == 2 for arm in doc["arms"].values())


def test_ablate_noise_sweep_levels(tmp_path):
    cfg = write_cfg(tmp_path, TINY_CFG)
    out = tmp_path / "ns"
    code = main(["ablate", "noise_sweep", "--config", cfg, "--out", str(out),
                 "--levels", "0.0,0.5"])
    assert code == 0
    doc = json.loads((out / "comparison.json").read_text())
    assert doc["noise_key"] == "env.reward_noise_sigma"
    assert [e["level"] for e in doc["levels"]] == [0.0, 0.5]
    for entry in doc["levels"]:
        assert set(entry["arms"]) == {"top_p", "none"}
