import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from sap_ecc import library as libmod
from sap_ecc.catalog import catalog_get
from sap_ecc.channel import q_function
from sap_ecc.cli import cli
from sap_ecc.config import RunConfig, config_from_dict, load_config, with_overrides
from sap_ecc.decoder import load_checkpoint
from sap_ecc.errors import FormatError, ValidationError
from sap_ecc.gf2 import permute_columns, write_alist
from sap_ecc.masks import StructuredMask

SMALL = {
    "codes": ["HAMMING_7_4"],
    "seed": 1,
    "arch": {"layers": 1, "heads_per_layer": 2, "d_model": 8, "d_ffn": 8},
    "train": {"epochs": 2, "steps_per_epoch": 10, "batch_size": 16},
    "prune": {"calib_frames": 64},
    "recover": {"epochs": 1, "steps_per_epoch": 5, "batch_size": 16},
    "eval": {"snr_db": [3.0], "min_frames": 300, "min_errors": 0},
}


@pytest.fixture
def env(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "out"
    runner = CliRunner()

    def run(*args, out_dir=out):
        return runner.invoke(cli, ["--out-dir", str(out_dir), *args], catch_exceptions=False)

    return run, cfg, out, tmp_path


@pytest.fixture
def trained(env):
    run, cfg, out, _ = env
    res = run("train", "--config", str(cfg))
    assert res.exit_code == 0, res.output
    return env


def test_config_defaults_and_paths():
    cfg = RunConfig()
    assert cfg.train_config().total_steps == 2000 and cfg.recovery_config().rank == 8
    assert cfg.library.K == 20 and cfg.library.tau == 0.5 and cfg.prune.target_ratio == 0.4
    with pytest.raises(ValidationError, match="recover.rank"):
        config_from_dict({"recover": {"rank": 0}})
    with pytest.raises(ValidationError, match="arch.width"):
        config_from_dict({"arch": {"width": 3}})
    assert with_overrides(cfg, {"train.epochs": 3, "seed": None}).train.epochs == 3
    assert cfg.config_hash() != with_overrides(cfg, {"seed": 1}).config_hash()


def test_yaml_and_json_configs(tmp_path):
    (tmp_path / "a.yaml").write_text("seed: 4\ntrain:\n  epochs: 2\n")
    (tmp_path / "b.json").write_text('{"seed": 4, "train": {"epochs": 2}}')
    a, b = load_config(tmp_path / "a.yaml"), load_config(tmp_path / "b.json")
    assert a == b and a.config_hash() == b.config_hash()
    (tmp_path / "c.yaml").write_text("seed: [")
    with pytest.raises(FormatError):
        load_config(tmp_path / "c.yaml")


def test_train_outputs_and_determinism(trained):
    run, cfg, out, tmp = trained
    lines = (out / "train_loss.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and lines[1] == "# seed=1"
    assert lines[2] == "epoch,loss" and len(lines) == 3 + 2
    first = (out / "checkpoint.json").read_bytes()
    out2 = tmp / "again"
    assert run("train", "--config", str(cfg), out_dir=out2).exit_code == 0
    assert (out2 / "checkpoint.json").read_bytes() == first


def test_output_dir_from_environment(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    target = tmp_path / "from_env"
    res = CliRunner().invoke(cli, ["train", "--config", str(cfg)], env={"SAP_OUTPUT_DIR": str(target)})
    assert res.exit_code == 0 and (target / "checkpoint.json").exists()


def test_validation_exit_codes(env, tmp_path):
    run, cfg, out, _ = env
    res = run("train")
    assert res.exit_code == 2 and "codes" in res.output
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochs": 0}}))
    res = run("train", "--config", str(bad), "--code", "HAMMING_7_4")
    assert res.exit_code == 2 and "train.epochs" in res.output
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    res = run("prune", "--config", str(cfg), "--checkpoint", str(broken))
    assert res.exit_code == 4


def test_prune_sweep_and_zero(trained):
    run, cfg, out, _ = trained
    res = run("prune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"), "--ratio", "0.2", "--ratio", "0.4", "--ratio", "0.6")
    assert res.exit_code == 0, res.output
    for tag in ("20", "40", "60"):
        rep = json.loads((out / f"report_{tag}.json").read_text())
        target = int(tag) / 100
        assert target - 1e-12 <= rep["flops_reduction"] <= target + rep["max_unit_flops_fraction"] + 1e-12
        assert rep["flops_full"] > rep["flops_pruned"]
    assert run("prune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"), "--ratio", "0").exit_code == 0
    assert StructuredMask.from_json((out / "mask_0.json").read_text()).is_full
    y = np.random.default_rng(0).normal(1, 0.7, (20, 7))
    pcm = catalog_get("HAMMING_7_4").pcm
    a = load_checkpoint(out / "checkpoint.json").logits_for(pcm, y)
    b = load_checkpoint(out / "pruned_0.json").logits_for(pcm, y)
    assert np.array_equal(a, b)


def test_prune_with_given_mask(trained):
    run, cfg, out, _ = trained
    run("prune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"))
    res = run("prune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"), "--use-mask", str(out / "mask_40.json"))
    assert res.exit_code == 0
    assert (out / "pruned_mask.json").read_text() == (out / "pruned_40.json").read_text()


def test_sap_reuse_permuted_and_create(trained):
    run, cfg, out, tmp = trained
    lib_path = tmp / "lib.json"
    ck = str(out / "checkpoint.json")
    assert run("sap", "--config", str(cfg), "--library", str(lib_path), "--checkpoint", ck).exit_code == 2
    first = json.loads(run("sap", "--config", str(cfg), "--library", str(lib_path), "--checkpoint", ck, "--create-new").output)
    assert first["decision"] == "CREATED" and first["library_size"] == 1
    again = json.loads(run("sap", "--config", str(cfg), "--library", str(lib_path), "--checkpoint", ck).output)
    assert again["decision"] == "REUSED" and again["kappa"] == 1.0
    h = catalog_get("HAMMING_7_4").pcm
    perm_file = tmp / "perm.alist"
    perm_file.write_text(write_alist(permute_columns(h, [3, 0, 6, 1, 5, 2, 4])))
    permuted = json.loads(run("sap", "--config", str(cfg), "--code", str(perm_file), "--library", str(lib_path), "--checkpoint", ck).output)
    assert permuted["decision"] == "REUSED" and abs(permuted["kappa"] - 1) <= 1e-9
    far = json.loads(run("sap", "--config", str(cfg), "--code", "LDPC_48_24", "--library", str(lib_path), "--checkpoint", ck).output)
    assert far["decision"] == "CREATED" and far["kappa"] < 0.5
    assert len(libmod.load(lib_path)) == 2


def test_recover_gamma_zero_rank_sweep_and_merge(trained):
    run, cfg, out, _ = trained
    run("prune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"), "--ratio", "0.2")
    res = run("recover", "--config", str(cfg), "--pruned", str(out / "pruned_20.json"), "--gamma", "0", "--rank", "1", "--rank", "2", "--rank", "4", "--merge")
    assert res.exit_code == 0, res.output
    for r in (1, 2, 4):
        assert (out / f"adapters_r{r}.json").exists() and (out / f"recover_r{r}.csv").exists()
    res = run("recover", "--config", str(cfg), "--pruned", str(out / "pruned_20.json"))
    assert res.exit_code == 2 and "teacher" in res.output
    run("eval", "--config", str(cfg), "--model", str(out / "pruned_20.json"), "--adapters", str(out / "adapters_r2.json"), "--name", "adapted")
    run("eval", "--config", str(cfg), "--model", str(out / "merged_r2.json"), "--name", "merged")
    a = (out / "adapted.csv").read_text().splitlines()[-1].split(",")
    b = (out / "merged.csv").read_text().splitlines()[-1].split(",")
    assert abs(float(a[1]) - float(b[1])) <= 1e-3


def test_eval_hard_matches_q_and_is_deterministic(env):
    run, cfg, out, _ = env
    args = ("eval", "--config", str(cfg), "--code", "LDPC_24_12", "--model", "hard", "--snr", "0", "--frames", "5000")
    assert run(*args).exit_code == 0
    first = (out / "eval.csv").read_text()
    run(*args)
    assert (out / "eval.csv").read_text() == first
    lines = first.splitlines()
    assert lines[0].startswith("# config_hash=") and lines[1] == "# seed=1"
    assert lines[4] == "ebn0_db,ber,fer,frames,bit_errors,seed,neg_ln_ber"
    ber = float(lines[5].split(",")[1])
    se = math.sqrt(ber * (1 - ber) / (5000 * 24))
    assert abs(ber - float(q_function(1.0))) < 3 * se


def test_eval_bp_and_neural_share_noise(trained):
    run, cfg, out, _ = trained
    assert run("eval", "--config", str(cfg), "--model", "bp", "--name", "bp").exit_code == 0
    assert run("eval", "--config", str(cfg), "--model", str(out / "checkpoint.json"), "--name", "nn").exit_code == 0
    bp = (out / "bp.csv").read_text().splitlines()
    nn = (out / "nn.csv").read_text().splitlines()
    assert bp[0] == nn[0] and bp[-1].split(",")[3] == nn[-1].split(",")[3]
    assert run("eval", "--config", str(cfg), "--model", "bp", "--adapters", str(out / "checkpoint.json")).exit_code == 2


def test_correlate_with_given_backbones(trained):
    run, cfg, out, _ = trained
    ck = str(out / "checkpoint.json")
    res = run("correlate", "--config", str(cfg), "--pair", "HAMMING_7_4,PERM:1", "--pair", "HAMMING_7_4,BCH_15_5", "--pair", "BCH_15_7,RREF", "--backbone", ck, "--backbone", ck)
    assert res.exit_code == 0, res.output
    lines = (out / "correlation.csv").read_text().splitlines()
    assert lines[2].split(",")[-2:] == ["jaccard_seed1", "jaccard_seed2"]
    perm_row = lines[3].split(",")
    assert perm_row[1] == "perm" and float(perm_row[5]) == pytest.approx(1.0, abs=1e-9)
    assert "rho_adjacency" in res.output
    res = run("correlate", "--config", str(cfg), "--pair", "HAMMING_7_4,RREF", "--backbone", ck)
    assert res.exit_code == 2
    assert run("correlate", "--pair", "bad").exit_code == 2


def test_library_add_and_show(trained):
    run, cfg, out, tmp = trained
    run("prune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.json"))
    lib_path = tmp / "lib.json"
    assert run("library", "add", "--library", str(lib_path), "--code", "BCH_15_7", "--mask", str(out / "mask_40.json")).exit_code == 2
    res = run("library", "add", "--library", str(lib_path), "--code", "BCH_15_7", "--mask", str(out / "mask_40.json"), "--create-new")
    assert res.exit_code == 0 and "1 entries" in res.output
    run("library", "add", "--library", str(lib_path), "--code", "HAMMING_7_4", "--mask", str(out / "mask_40.json"), "--label", "ham")
    shown = run("library", "show", "--library", str(lib_path)).output
    assert "BCH_15_7" in shown and "ham" in shown and "K=20" in shown
