import json
import os
import time

import pytest

from genimg.cli import main

SYNTH = ["--n", "400", "--n-snps", "300", "--n-rare", "40", "--n-genes", "8", "--p-img", "16"]
TRAIN = ["--epochs", "3", "--hidden-width", "16", "--repr-dim", "16", "--proj-dim", "8", "--raw-every", "10"]


def run(*args):
    return main([str(a) for a in args])


def files(directory, skip=("config.resolved.json",)):
    out = {}
    for root, _, names in os.walk(directory):
        for name in names:
            if name not in skip:
                path = os.path.join(root, name)
                with open(path, "rb") as fh:
                    out[os.path.relpath(path, directory)] = fh.read()
    return out


def summary(directory):
    with open(os.path.join(directory, "summary.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data, pre = root / "data", root / "pre"
    assert run("synth", "--out", data, "--seed", 7, *SYNTH) == 0
    assert run("pretrain", "--data", data, "--out", pre, *TRAIN) == 0
    return root, data, pre


def test_synth_manifest_and_determinism(tmp_path, pipeline):
    _, data, _ = pipeline
    expected = {"images.tsv", "genotypes.tsv", "positions.tsv", "burden_annotation.tsv", "truth.json",
                "summary.json", "config.resolved.json"}
    assert expected <= set(os.listdir(data))
    assert os.listdir(data / "pgs_weights")
    assert run("synth", "--out", tmp_path / "again", "--seed", 7, *SYNTH) == 0
    assert files(data) == files(tmp_path / "again")


def test_synth_bad_n_exits_config_error(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "x", "--n", 0) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('seed = 3\n[synth]\nn = 50\nn_snps = 40\nn_rare = 0\nn_genes = 0\np_img = 8\n')
    assert run("synth", "--config", cfg, "--out", tmp_path / "a", "--n", 60) == 0
    resolved = json.loads((tmp_path / "a" / "config.resolved.json").read_text())["config"]
    assert resolved["n"] == 60 and resolved["n_snps"] == 40 and resolved["seed"] == 3
    assert run("synth", "--config", tmp_path / "nope.toml", "--out", tmp_path / "b") == 2


def test_pretrain_outputs_and_determinism(tmp_path, pipeline):
    _, data, pre = pipeline
    assert {"checkpoint.json", "loss_trace.tsv", "summary.json"} <= set(os.listdir(pre))
    assert summary(pre)["data_fingerprint"] == summary(data)["data_fingerprint"]
    assert run("pretrain", "--data", data, "--out", tmp_path / "p2", *TRAIN) == 0
    assert files(pre) == files(tmp_path / "p2")


def test_missing_inputs_exit_data_error(tmp_path, capsys):
    assert run("pretrain", "--data", tmp_path / "absent", "--out", tmp_path / "o") == 3
    assert "expected" in capsys.readouterr().err


def test_stale_checkpoint_detected(tmp_path, pipeline):
    _, _, pre = pipeline
    other = tmp_path / "other"
    assert run("synth", "--out", other, "--seed", 8, *SYNTH) == 0
    code = run("assoc", "--data", other, "--checkpoint", pre / "checkpoint.json", "--out", tmp_path / "a")
    assert code == 3


def test_assoc_outputs_and_determinism(tmp_path, pipeline):
    _, data, pre = pipeline
    args = ["--data", data, "--checkpoint", pre / "checkpoint.json", "--clump-p1", 1e-4, "--clump-p2", 1e-4]
    assert run("assoc", *args, "--out", tmp_path / "a1") == 0
    assert run("assoc", *args, "--out", tmp_path / "a2", "--threads", 3) == 0
    assert {"sumstats.tsv", "clumps.tsv", "manhattan.svg"} <= set(os.listdir(tmp_path / "a1"))
    assert files(tmp_path / "a1") == files(tmp_path / "a2")
    header = (tmp_path / "a1" / "sumstats.tsv").read_text().splitlines()[1].split("\t")
    assert header[:3] == ["snp_id", "chrom", "pos"] and header[-2:] == ["p_agg", "clump_id"]


def test_scheme_equivalence_on_complete_data(tmp_path, pipeline):
    _, data, _ = pipeline
    reports = []
    for scheme in ("inner", "outer"):
        pre = tmp_path / f"pre_{scheme}"
        assert run("pretrain", "--data", data, "--out", pre, "--scheme", scheme, *TRAIN) == 0
        out = tmp_path / f"assoc_{scheme}"
        assert run("assoc", "--data", data, "--checkpoint", pre / "checkpoint.json", "--out", out,
                   "--clump-p1", 1e-4, "--clump-p2", 1e-4) == 0
        reports.append((out / "clumps.tsv").read_bytes())
    assert reports[0] == reports[1]


def test_explain_steps_and_outputs(tmp_path, pipeline):
    _, data, pre = pipeline
    gaps = {}
    for steps in (32, 256):
        out = tmp_path / f"exp{steps}"
        assert run("explain", "--data", data, "--checkpoint", pre / "checkpoint.json", "--out", out,
                   "--b-ref", 16, "--ig-steps", steps, "--n-explain", 3) == 0
        gaps[steps] = summary(out)["completeness_gap_mean"]
    assert gaps[256] < gaps[32]
    meta = json.loads((tmp_path / "exp32" / "attributions.json").read_text())
    assert meta["ig_steps"] == 32 and meta["baseline"] == "zeros" and meta["reference_fingerprint"]
    assert {"attributions_raw.tsv", "attributions_pgs.tsv", "attributions_burden.tsv"} <= set(
        os.listdir(tmp_path / "exp32"))


def test_eval_and_report(tmp_path, pipeline):
    root, data, pre = pipeline
    out = root / "eval"
    assert run("eval", "--data", data, "--checkpoint", pre / "checkpoint.json", "--out", out) == 0
    assert "r2" in summary(out)
    assert run("eval", "--data", data, "--checkpoint", pre / "checkpoint.json", "--out", tmp_path / "e",
               "--label", "height") == 2
    assert run("report", "--run", root, "--out", tmp_path / "rep") == 0
    stages = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert {"data", "pre", "eval"} <= set(stages)
    assert run("report", "--run", tmp_path / "empty_run", "--out", tmp_path / "rep2") == 3


def test_desk_pipeline_on_default_dataset_under_ten_minutes(tmp_path):
    preset = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "desk.toml")
    data, ck = tmp_path / "data", tmp_path / "pre" / "checkpoint.json"
    t0 = time.perf_counter()
    assert run("synth", "--config", preset, "--out", data) == 0
    assert run("pretrain", "--config", preset, "--data", data, "--out", tmp_path / "pre") == 0
    assert run("explain", "--config", preset, "--data", data, "--checkpoint", ck, "--out", tmp_path / "explain") == 0
    assert run("assoc", "--config", preset, "--data", data, "--checkpoint", ck, "--out", tmp_path / "assoc") == 0
    assert run("eval", "--config", preset, "--data", data, "--checkpoint", ck, "--out", tmp_path / "eval") == 0
    assert run("report", "--run", tmp_path, "--out", tmp_path / "report") == 0
    assert time.perf_counter() - t0 < 600
    assert len(summary(tmp_path / "assoc")["planted_recovered"]) >= 2
