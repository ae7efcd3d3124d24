"""Config parsing, lineage hashing, CLI, and pipeline artifact contracts."""

import dataclasses
import hashlib
import json
import shutil
from pathlib import Path

import pytest

from rexeval.cli import main
from rexeval.config import (CorpusSpec, MetricSettings, ModelSpec, RunConfig,
                            Seeds, apply_overrides, lineage_hash, load_config)
from rexeval.pipeline import model_seed
from rexeval.report import EvaluationReport, verify_against_audit

MICRO_INI = """\
[corpus]
users = 20 ; inline comments are allowed
items = 12
aspects = 3
reviews_per_user = 10
splits = 0.7 0.1 0.2

[seeds]
corpus = 5
model = 6
eval = 7

[metrics]
metrics = air mrr_ae tlae entail gm_f1 cnll rmse
k = 3
n_explanations = 30
air_mode = ground-truth
tlae_mode = both
audit = true

[model:oracle]
kind = oracle
note = reads the generator state

[model:random]
kind = random

[model:tiny]
kind = transformer
embed_dim = 16
ffn_dim = 32
layers = 1
heads = 2
max_len = 24
epochs = 2
batch_size = 32
lr = 3e-3
"""


@pytest.fixture(scope="module")
def micro_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.ini"
    path.write_text(MICRO_INI, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def micro_config(micro_ini):
    return load_config(micro_ini)


def _cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def staged_dir(micro_ini, tmp_path_factory):
    out = tmp_path_factory.mktemp("staged") / "run"
    for stage in ("gen-corpus", "train", "generate", "evaluate", "report"):
        assert _cli(stage, "--config", micro_ini, "--out", out, "--quiet") == 0
    return out


@pytest.fixture(scope="module")
def runall_dir(micro_ini, tmp_path_factory):
    out = tmp_path_factory.mktemp("all") / "run"
    assert _cli("run-all", "--config", micro_ini, "--out", out, "--quiet") == 0
    return out


def _tree(root, drop=("timing.txt",)) -> dict:
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in drop}


# ----------------------------------------------------------------------
# configuration parsing


def test_load_config_full_ini(micro_config):
    config = micro_config
    assert config.corpus == CorpusSpec(users=20, items=12, aspects=3,
                                       reviews_per_user=10, splits=(0.7, 0.1, 0.2))
    assert config.seeds == Seeds(corpus=5, model=6, eval=7)
    assert config.metrics.metrics == ("air", "mrr_ae", "tlae", "entail",
                                      "gm_f1", "cnll", "rmse")
    assert (config.metrics.k, config.metrics.n_explanations) == (3, 30)
    assert config.metrics.tlae_mode == "both"
    assert config.metrics.audit is True
    assert config.out_dir == "runs/out"
    assert [m.name for m in config.models] == ["oracle", "random", "tiny"]
    assert config.model("oracle").note == "reads the generator state"
    assert not config.model("random").trainable
    tiny = config.model("tiny")
    assert tiny.trainable
    assert tiny.option_dict["embed_dim"] == 16
    assert tiny.option_dict["lr"] == 3e-3
    assert tiny.options == tuple(sorted(tiny.options))
    assert config.selected is None and config.active_models == config.models


def test_load_config_defaults_and_output_section(tmp_path):
    path = tmp_path / "mini.ini"
    path.write_text("[output]\ndir = somewhere/else\n", encoding="utf-8")
    config = load_config(path)
    assert config.out_dir == "somewhere/else"
    assert config.models == (ModelSpec("oracle", "oracle"),)
    assert config.corpus == CorpusSpec()


@pytest.mark.parametrize("ini, message", [
    ("[corpus]\nusers = twenty\n", "cannot parse"),
    ("[corpus]\nbogus = 1\n", "unknown key"),
    ("[corpus]\nsplits = 0.5 0.5\n", "three ratios"),
    ("[seeds]\nfoo = 1\n", "unknown key"),
    ("[metrics]\nbogus = 1\n", "unknown key"),
    ("[output]\npath = x\n", "unknown key"),
    ("[extra]\n", "unknown section"),
    ("[model:]\nkind = oracle\n", "needs a name"),
    ("[model:m]\nkind =\n", "missing 'kind'"),
    ("[model:m]\nkind = mystery\n", "unknown model kind"),
    ("[model:m]\nkind = transformer\nwidgets = 3\n", "unknown key 'widgets'"),
    ("[model:has space]\nkind = oracle\n", "may only use"),
])
def test_load_config_rejections(tmp_path, ini, message):
    path = tmp_path / "bad.ini"
    path.write_text(ini, encoding="utf-8")
    with pytest.raises(ValueError, match=message):
        load_config(path)


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown metric"):
        MetricSettings(metrics=("air", "magic"))
    with pytest.raises(ValueError, match="air_mode"):
        MetricSettings(air_mode="telepathy")
    with pytest.raises(ValueError, match="tlae_mode"):
        MetricSettings(tlae_mode="telepathy")
    with pytest.raises(ValueError, match="k must be"):
        MetricSettings(k=0)
    with pytest.raises(ValueError, match="n_explanations"):
        MetricSettings(n_explanations=0)
    with pytest.raises(ValueError, match="unknown model kind"):
        ModelSpec("m", "mystery")
    with pytest.raises(ValueError, match="may only use"):
        ModelSpec("two words", "oracle")
    with pytest.raises(ValueError, match="roster is empty"):
        RunConfig(models=())
    twice = (ModelSpec("m", "oracle"), ModelSpec("m", "random"))
    with pytest.raises(ValueError, match="duplicate model names"):
        RunConfig(models=twice)
    with pytest.raises(ValueError, match="unknown model\\(s\\) selected"):
        RunConfig(selected=("ghost",))
    with pytest.raises(ValueError, match="empty model selection"):
        RunConfig(selected=())


def test_lineage_hash_covers_artifacts_only(micro_config):
    base = micro_config
    ref = lineage_hash(base)
    # evaluation-time knobs never change the hash
    assert lineage_hash(dataclasses.replace(base, out_dir="elsewhere")) == ref
    assert lineage_hash(dataclasses.replace(base, selected=("oracle",))) == ref
    assert lineage_hash(dataclasses.replace(
        base, metrics=MetricSettings(k=99, audit=True))) == ref
    assert lineage_hash(dataclasses.replace(base, seeds=Seeds(5, 6, 999))) == ref
    # anything shaping corpus or checkpoints does
    assert lineage_hash(dataclasses.replace(base, seeds=Seeds(50, 6, 7))) != ref
    assert lineage_hash(dataclasses.replace(base, seeds=Seeds(5, 60, 7))) != ref
    assert lineage_hash(dataclasses.replace(
        base, corpus=dataclasses.replace(base.corpus, users=21))) != ref
    resized = tuple(
        ModelSpec(m.name, m.kind,
                  tuple((k, 24 if k == "embed_dim" else v) for k, v in m.options),
                  m.note)
        for m in base.models)
    assert lineage_hash(dataclasses.replace(base, models=resized)) != ref
    # display notes are cosmetic
    renoted = tuple(ModelSpec(m.name, m.kind, m.options, "different note")
                    for m in base.models)
    assert lineage_hash(dataclasses.replace(base, models=renoted)) == ref


def test_apply_overrides(micro_config):
    config = apply_overrides(micro_config, out_dir="o", seed_eval=42,
                             models="oracle,tiny", metrics="air, rmse",
                             k=7, n_explanations=9, air_mode="both",
                             tlae_mode="model-rating", audit=True)
    assert config.out_dir == "o"
    assert config.seeds == Seeds(corpus=5, model=6, eval=42)
    assert config.selected == ("oracle", "tiny")
    assert [m.name for m in config.active_models] == ["oracle", "tiny"]
    assert config.metrics.metrics == ("air", "rmse")
    assert (config.metrics.k, config.metrics.n_explanations) == (7, 9)
    assert config.metrics.air_mode == "both"
    untouched = apply_overrides(micro_config)
    assert untouched == micro_config
    with pytest.raises(ValueError, match="no names parsed"):
        apply_overrides(micro_config, models=",")
    with pytest.raises(ValueError, match="unknown model"):
        apply_overrides(micro_config, models="ghost")


def test_model_seed_is_name_keyed():
    assert model_seed(6, "tiny") == model_seed(6, "tiny")
    assert model_seed(6, "tiny") != model_seed(6, "oracle")
    assert model_seed(6, "tiny") != model_seed(7, "tiny")
    assert 0 <= model_seed(6, "tiny") < 2 ** 32


# ----------------------------------------------------------------------
# pipeline artifacts


def test_staged_stages_match_run_all_bytes(staged_dir, runall_dir):
    staged = _tree(staged_dir)
    assert staged  # the run produced artifacts
    assert staged == _tree(runall_dir)
    # only the end-to-end runner writes the timing sidecar
    assert not (staged_dir / "timing.txt").exists()
    assert (runall_dir / "timing.txt").exists()


def test_run_all_reruns_identically(micro_ini, runall_dir, tmp_path):
    again = tmp_path / "again"
    assert _cli("run-all", "--config", micro_ini, "--out", again, "--quiet") == 0
    assert _tree(again) == _tree(runall_dir)


def test_artifact_layout_and_meta(runall_dir, micro_config):
    meta = json.loads((runall_dir / "meta.json").read_text(encoding="utf-8"))
    assert meta["config_hash"] == lineage_hash(micro_config)
    digest = hashlib.sha256((runall_dir / "corpus.tsv").read_bytes()).hexdigest()
    assert meta["corpus_fingerprint"] == digest
    assert meta["counts"] == {"train": 140, "validation": 20, "test": 40,
                              "vocab": meta["counts"]["vocab"]}
    for rel in ("world.json", "checkpoints/tiny.ckpt", "train_logs/tiny.json",
                "gens/oracle.tsv", "gens/random.tsv", "gens/tiny.tsv",
                "audit/tiny/tlae_gold.tsv", "results.json",
                "report.json", "report.txt"):
        assert (runall_dir / rel).exists(), rel
    report = EvaluationReport.load(runall_dir / "results.json")
    assert report.config_hash == lineage_hash(micro_config)
    assert [row.model for row in report.rows] == ["oracle", "random", "tiny"]
    assert report.row("oracle").privileged and not report.row("tiny").privileged
    assert report.settings["pool"] == 30


def test_every_reported_cell_survives_audit_recomputation(runall_dir):
    report = EvaluationReport.load(runall_dir / "results.json")
    checked = verify_against_audit(report, runall_dir / "audit")
    assert len(checked) == sum(len(row.cells) for row in report.rows)
    assert {key for _, key, _, _ in checked} >= {"air", "mrr_ae", "tlae",
                                                 "tlae_gold", "entail",
                                                 "gm_f1", "cnll", "rmse"}


def test_report_text_is_a_marked_table(runall_dir):
    text = (runall_dir / "report.txt").read_text(encoding="utf-8")
    assert "AIR↑" in text and "TLAE-gold↓" in text
    assert "oracle (privileged)" in text
    assert "*" in text
    assert "note oracle: reads the generator state" in text


def test_report_subcommand_prints_the_table(micro_ini, runall_dir, capsys):
    assert _cli("report", "--config", micro_ini, "--out", runall_dir, "--quiet") == 0
    out = capsys.readouterr().out
    assert out.startswith("explanation faithfulness and coherence report")


def test_selection_and_generated_air_mode(micro_ini, runall_dir, tmp_path):
    target = tmp_path / "sel"
    shutil.copytree(runall_dir, target)
    assert _cli("evaluate", "--config", micro_ini, "--out", target,
                "--models", "oracle,random", "--air-mode", "both",
                "--metrics", "air entail rmse", "--quiet") == 0
    report = EvaluationReport.load(target / "results.json")
    assert [row.model for row in report.rows] == ["oracle", "random"]
    assert sorted(report.row("oracle").cells) == ["air", "air_generated",
                                                  "entail", "rmse"]
    assert report.row("oracle").cells["air_generated"].value == 100.0
    # a selection is an evaluation view: artifacts keep their lineage
    assert report.config_hash == EvaluationReport.load(
        runall_dir / "results.json").config_hash
    checked = verify_against_audit(report, target / "audit")
    assert {key for _, key, _, _ in checked} == {"air", "air_generated",
                                                 "entail", "rmse"}


# ----------------------------------------------------------------------
# stage guards


def test_stage_order_and_tamper_guards(micro_ini, tmp_path, capsys):
    out = tmp_path / "guarded"

    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet") == 1
    assert "no corpus artifacts" in capsys.readouterr().err
    assert _cli("gen-corpus", "--config", micro_ini, "--out", out, "--quiet") == 0
    assert _cli("report", "--config", micro_ini, "--out", out, "--quiet") == 1
    assert "no evaluation results" in capsys.readouterr().err

    corpus_path = out / "corpus.tsv"
    pristine = corpus_path.read_bytes()
    corpus_path.write_bytes(pristine + b"4\t9\t5\tpositive\tfood\ttest\tgreat food\n")
    assert _cli("train", "--config", micro_ini, "--out", out, "--quiet") == 1
    assert "fingerprint mismatch" in capsys.readouterr().err
    corpus_path.write_bytes(pristine)

    assert _cli("train", "--config", micro_ini, "--out", out, "--quiet",
                "--seed-corpus", "99") == 1
    assert "config hash mismatch" in capsys.readouterr().err

    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet") == 1
    assert "missing checkpoint for 'tiny'" in capsys.readouterr().err


def test_generation_pool_alignment_guards(micro_ini, tmp_path, capsys):
    out = tmp_path / "aligned"
    assert _cli("gen-corpus", "--config", micro_ini, "--out", out, "--quiet") == 0
    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet",
                "--models", "oracle", "--metrics", "entail rmse") == 1
    assert "missing generations for 'oracle'" in capsys.readouterr().err
    assert _cli("generate", "--config", micro_ini, "--out", out, "--quiet",
                "--models", "oracle", "--n-explanations", "4") == 0

    # a larger pool than the stored generations cannot be evaluated
    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet",
                "--models", "oracle", "--metrics", "entail rmse",
                "--n-explanations", "12") == 1
    assert "pool needs 12" in capsys.readouterr().err

    # a smaller pool is a prefix of them and works as-is
    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet",
                "--models", "oracle", "--metrics", "entail rmse",
                "--n-explanations", "3") == 0
    report = EvaluationReport.load(out / "results.json")
    assert report.row("oracle").cells["rmse"].count == 3

    gens_path = out / "gens" / "oracle.tsv"
    lines = gens_path.read_text(encoding="utf-8").splitlines(keepends=True)
    gens_path.write_text("".join([lines[0], lines[2], lines[1], *lines[3:]]),
                         encoding="utf-8")
    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet",
                "--models", "oracle", "--metrics", "entail rmse",
                "--n-explanations", "4") == 1
    assert "do not align" in capsys.readouterr().err

    gens_path.write_text("".join(
        ["# config deadbeef\n", lines[1], lines[2], *lines[3:]]), encoding="utf-8")
    assert _cli("evaluate", "--config", micro_ini, "--out", out, "--quiet",
                "--models", "oracle", "--metrics", "entail rmse",
                "--n-explanations", "4") == 1
    assert "different configuration" in capsys.readouterr().err


def test_cli_usage_and_config_errors(tmp_path, capsys):
    assert _cli("run-all", "--config", tmp_path / "missing.ini") == 1
    assert "error:" in capsys.readouterr().err
    assert _cli("run-all", "--models", "", "--out", tmp_path) == 1
    assert "no names parsed" in capsys.readouterr().err
    for argv in (["bogus-command"], ["run-all", "--bogus"], []):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
        capsys.readouterr()
