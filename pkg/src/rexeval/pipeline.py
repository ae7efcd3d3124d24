"""Config-driven evaluation pipeline over a fixed artifact layout.

Five stages, each resumable from the run directory alone: gen-corpus,
train, generate, evaluate, report. Every stage revalidates the lineage
hash stored in meta.json, so artifacts produced under one configuration
abort any stage invoked under another instead of silently mixing runs.
All artifacts are written deterministically (seeded generators, hex or
repr floats, sorted keys); wall-clock timing goes to a sidecar file
that is not part of the run's identity.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import shutil
import time
from pathlib import Path

from .config import RunConfig, lineage_hash
from .corpus import build_corpus, generate_world, load_corpus, load_world, save_corpus, save_world
from .lexicon import load_lexicon
from .metrics import (
    AuditWriter,
    BigramLM,
    air,
    cnll_metric,
    entail_metric,
    gm_f1_metric,
    mrr_ae,
    rmse_metric,
    tlae,
    train_aux_regressor,
    train_cooccurrence_embeddings,
)
from .models import (
    OracleModel,
    RandomScorer,
    RecurrentArch,
    RecurrentModel,
    TransformerArch,
    TransformerModel,
    UnigramModel,
    model_from_checkpoint,
    strip_reserved,
)
from .nn import CHECKPOINT_MAGIC, save_checkpoint
from .report import EvaluationReport, ModelRow, format_table
from .training import TrainConfig, train_model

CORPUS_FILE = "corpus.tsv"
WORLD_FILE = "world.json"
META_FILE = "meta.json"
CKPT_DIR = "checkpoints"
TRAIN_LOG_DIR = "train_logs"
GEN_DIR = "gens"
AUDIT_DIR = "audit"
RESULTS_FILE = "results.json"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
TIMING_FILE = "timing.txt"

STAGES = ("gen-corpus", "train", "generate", "evaluate", "report")

_TRAIN_KEYS = ("epochs", "batch_size", "lr", "rating_weight", "clip_norm", "patience")


class StageError(RuntimeError):
    """Pipeline failure attributed to the stage that detected it."""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"[{stage}] {reason}")
        self.stage = stage
        self.reason = reason


@contextlib.contextmanager
def _stage_errors(stage: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def model_seed(base: int, name: str) -> int:
    """Per-model seed tied to the model's name, not its roster position,
    so selecting or reordering models never changes anyone's stream."""
    digest = hashlib.blake2b(f"{base}:{name}".encode(), digest_size=4)
    return int.from_bytes(digest.digest(), "big")


# ----------------------------------------------------------------------
# artifact loading


def _read_meta(config: RunConfig, stage: str) -> dict:
    path = Path(config.out_dir) / META_FILE
    if not path.exists():
        raise StageError(stage, f"no corpus artifacts in {config.out_dir}; "
                                "run the gen-corpus stage first")
    meta = json.loads(path.read_text(encoding="utf-8"))
    expected = lineage_hash(config)
    found = meta.get("config_hash", "")
    if found != expected:
        raise StageError(stage, "config hash mismatch: run directory holds artifacts for "
                                f"{found[:12]}.. but this configuration hashes to "
                                f"{expected[:12]}..; regenerate or use another --out")
    return meta


def _load_corpus_artifacts(config: RunConfig, stage: str):
    out = Path(config.out_dir)
    meta = _read_meta(config, stage)
    corpus_path = out / CORPUS_FILE
    if not corpus_path.exists():
        raise StageError(stage, f"{CORPUS_FILE} missing from {config.out_dir}; "
                                "run the gen-corpus stage first")
    if _sha256_file(corpus_path) != meta["corpus_fingerprint"]:
        raise StageError(stage, f"{CORPUS_FILE} was modified after generation "
                                "(fingerprint mismatch); rerun the gen-corpus stage")
    lexicon = load_lexicon(config.corpus.lexicon_path)
    corpus = load_corpus(corpus_path, lexicon)
    world_path = out / WORLD_FILE
    if world_path.exists():
        corpus.world = load_world(world_path, lexicon)
    return corpus, lexicon, meta


def _id_bounds(corpus) -> tuple[int, int]:
    if corpus.world is not None:
        return corpus.world.num_users, corpus.world.num_items
    users = items = 0
    for _, review in corpus.all_reviews():
        users = max(users, review.user + 1)
        items = max(items, review.item + 1)
    return users, items


# ----------------------------------------------------------------------
# model construction


def _split_options(spec) -> tuple[dict, dict]:
    """Partition a trainable model's options into architecture and
    training keyword arguments."""
    arch_fields = (TransformerArch if spec.kind == "transformer"
                   else RecurrentArch).__dataclass_fields__
    arch: dict = {}
    train: dict = {}
    for key, value in spec.options:
        if key in arch_fields:
            arch[key] = value
        elif key in _TRAIN_KEYS:
            train[key] = value
        else:
            raise ValueError(f"model '{spec.name}': option '{key}' does not apply "
                             f"to kind '{spec.kind}'")
    return arch, train


def build_model(spec, config: RunConfig, corpus, lexicon):
    """Construct an untrained model for one roster entry."""
    seed = model_seed(config.seeds.model, spec.name)
    if spec.kind == "oracle":
        if spec.options:
            raise ValueError(f"model '{spec.name}': oracle takes no options")
        if corpus.world is None:
            raise ValueError(f"model '{spec.name}': the oracle needs a generated "
                             "corpus with a saved world")
        return OracleModel(corpus.world)
    if spec.kind == "random":
        if spec.options:
            raise ValueError(f"model '{spec.name}': random takes no options")
        return RandomScorer(seed, corpus.vocab)
    if spec.kind == "unigram":
        extra = [k for k, _ in spec.options if k != "alpha"]
        if extra:
            raise ValueError(f"model '{spec.name}': unigram only accepts 'alpha', "
                             f"got {', '.join(extra)}")
        return UnigramModel.fit(corpus, alpha=spec.option_dict.get("alpha", 0.1))
    num_users, num_items = _id_bounds(corpus)
    arch_opts, _ = _split_options(spec)
    if spec.kind == "transformer":
        return TransformerModel(TransformerArch(**arch_opts), corpus.vocab,
                                num_users, num_items, seed, lexicon=lexicon)
    return RecurrentModel(RecurrentArch(**arch_opts), corpus.vocab,
                          num_users, num_items, seed)


def _checkpoint_header(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        return json.loads(fh.readline())


def _materialize_models(config: RunConfig, corpus, lexicon, stage: str) -> dict:
    """Build untrainable models and load trained ones from checkpoints."""
    out = Path(config.out_dir)
    expected = lineage_hash(config)
    models = {}
    for spec in config.active_models:
        if not spec.trainable:
            models[spec.name] = build_model(spec, config, corpus, lexicon)
            continue
        path = out / CKPT_DIR / f"{spec.name}.ckpt"
        if not path.exists():
            raise StageError(stage, f"missing checkpoint for '{spec.name}'; "
                                    "run the train stage first")
        header = _checkpoint_header(path)
        if header.get("config_hash") != expected:
            raise StageError(stage, f"checkpoint for '{spec.name}' was trained under "
                                    "a different configuration; rerun the train stage")
        models[spec.name] = model_from_checkpoint(path, corpus.vocab, lexicon)
    return models


# ----------------------------------------------------------------------
# stages


def stage_gen_corpus(config: RunConfig, log=None):
    out = Path(config.out_dir)
    with _stage_errors("gen-corpus"):
        out.mkdir(parents=True, exist_ok=True)
        spec = config.corpus
        lexicon = load_lexicon(spec.lexicon_path)
        corpus_path = out / CORPUS_FILE
        world_path = out / WORLD_FILE
        if spec.external_path is not None:
            corpus = load_corpus(spec.external_path, lexicon)
            if Path(spec.external_path).resolve() != corpus_path.resolve():
                shutil.copyfile(spec.external_path, corpus_path)
            world_path.unlink(missing_ok=True)
        else:
            world = generate_world(spec.users, spec.items, spec.aspects,
                                   config.seeds.corpus, lexicon,
                                   spec.affinity_gain, spec.offtopic_rate)
            corpus = build_corpus(world, spec.reviews_per_user, spec.splits,
                                  seed=config.seeds.corpus)
            save_corpus(corpus, corpus_path)
            save_world(world, world_path)
        meta = {
            "config_hash": lineage_hash(config),
            "corpus_fingerprint": _sha256_file(corpus_path),
            "seeds": {"corpus": config.seeds.corpus, "model": config.seeds.model,
                      "eval": config.seeds.eval},
            "counts": {"train": len(corpus.train), "validation": len(corpus.validation),
                       "test": len(corpus.test), "vocab": len(corpus.vocab)},
        }
        _write_json(out / META_FILE, meta)
    if log:
        log(f"[gen-corpus] {meta['counts']['train']}/{meta['counts']['validation']}/"
            f"{meta['counts']['test']} reviews (vocab {meta['counts']['vocab']})")
    return corpus


def stage_train(config: RunConfig, log=None) -> dict:
    out = Path(config.out_dir)
    histories: dict[str, list] = {}
    with _stage_errors("train"):
        corpus, lexicon, _ = _load_corpus_artifacts(config, "train")
        ckpt_dir = out / CKPT_DIR
        log_dir = out / TRAIN_LOG_DIR
        ckpt_dir.mkdir(exist_ok=True)
        log_dir.mkdir(exist_ok=True)
        for spec in config.active_models:
            if not spec.trainable:
                continue
            seed = model_seed(config.seeds.model, spec.name)
            model = build_model(spec, config, corpus, lexicon)
            _, train_opts = _split_options(spec)
            tconfig = TrainConfig(seed=seed, **train_opts)
            prefixed = (lambda m: log(f"[train] {spec.name}: {m}")) if log else None
            history = train_model(model, corpus, tconfig, log=prefixed)
            save_checkpoint(ckpt_dir / f"{spec.name}.ckpt", model.store, seed,
                            lineage_hash(config), extra={"model": model.architecture_header()})
            _write_json(log_dir / f"{spec.name}.json",
                        {"config_hash": lineage_hash(config), "history": history})
            histories[spec.name] = history
    return histories


def _evaluation_pool(config: RunConfig, corpus) -> list:
    return corpus.test[:min(config.metrics.n_explanations, len(corpus.test))]


def stage_generate(config: RunConfig, log=None) -> dict:
    out = Path(config.out_dir)
    generations: dict[str, list] = {}
    with _stage_errors("generate"):
        corpus, lexicon, _ = _load_corpus_artifacts(config, "generate")
        models = _materialize_models(config, corpus, lexicon, "generate")
        pool = _evaluation_pool(config, corpus)
        if not pool:
            raise StageError("generate", "empty test split: nothing to explain")
        gen_dir = out / GEN_DIR
        gen_dir.mkdir(exist_ok=True)
        for spec in config.active_models:
            model = models[spec.name]
            rows = []
            for review in pool:
                if model.conditions_on_aspect:
                    rating = model.predict_rating(review.user, review.item,
                                                  aspect=review.aspect)
                    tokens = model.generate(review.user, review.item, aspect=review.aspect)
                else:
                    rating = model.predict_rating(review.user, review.item)
                    tokens = model.generate(review.user, review.item)
                rows.append((review.user, review.item, float(rating), tokens))
            with open(gen_dir / f"{spec.name}.tsv", "w", encoding="utf-8") as fh:
                fh.write(f"# config {lineage_hash(config)}\n")
                for user, item, rating, tokens in rows:
                    fh.write(f"{user}\t{item}\t{rating!r}\t{' '.join(tokens)}\n")
            generations[spec.name] = rows
            if log:
                log(f"[generate] {spec.name}: {len(rows)} explanations")
    return generations


def _read_generations(path: Path, pool, config: RunConfig, name: str) -> list:
    if not path.exists():
        raise StageError("evaluate", f"missing generations for '{name}'; "
                                     "run the generate stage first")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("# config "):
                if line.removeprefix("# config ") != lineage_hash(config):
                    raise StageError("evaluate", f"generations for '{name}' were produced "
                                                 "under a different configuration; rerun "
                                                 "the generate stage")
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise StageError("evaluate", f"{path}:{lineno}: expected 4 fields")
            rows.append((int(fields[0]), int(fields[1]), float(fields[2]),
                         tuple(fields[3].split())))
    if len(rows) < len(pool):
        raise StageError("evaluate", f"generations for '{name}' cover {len(rows)} pairs "
                                     f"but the pool needs {len(pool)}; rerun the "
                                     "generate stage")
    for row, review in zip(rows, pool):
        if (row[0], row[1]) != (review.user, review.item):
            raise StageError("evaluate", f"generations for '{name}' do not align with "
                                         "the evaluation pool; rerun the generate stage")
    return rows[:len(pool)]


def stage_evaluate(config: RunConfig, log=None) -> EvaluationReport:
    out = Path(config.out_dir)
    settings = config.metrics
    with _stage_errors("evaluate"):
        corpus, lexicon, meta = _load_corpus_artifacts(config, "evaluate")
        models = _materialize_models(config, corpus, lexicon, "evaluate")
        pool = _evaluation_pool(config, corpus)
        if not pool:
            raise StageError("evaluate", "empty test split: nothing to evaluate")

        needs_gens = (bool({"tlae", "entail", "gm_f1", "cnll", "rmse"} & set(settings.metrics))
                      or ("air" in settings.metrics and settings.air_mode != "ground-truth"))
        gens = {}
        if needs_gens:
            for spec in config.active_models:
                gens[spec.name] = _read_generations(out / GEN_DIR / f"{spec.name}.tsv",
                                                    pool, config, spec.name)

        regressor = None
        if "tlae" in settings.metrics:
            reg_log = (lambda m: log(f"[evaluate] {m}")) if log else None
            regressor = train_aux_regressor(corpus, embed_dim=settings.embed_dim,
                                            seed=config.seeds.eval, log=reg_log)
            if log:
                log(f"[evaluate] regressor validation mse {regressor.validation_mse:.4f}")
        table = (train_cooccurrence_embeddings(corpus, dim=settings.embed_dim)
                 if "gm_f1" in settings.metrics else None)
        lm = BigramLM.fit(corpus) if "cnll" in settings.metrics else None

        rows = []
        for spec in config.active_models:
            model = models[spec.name]
            gen_rows = gens.get(spec.name)
            stripped = ([strip_reserved(tokens) for _, _, _, tokens in gen_rows]
                        if gen_rows is not None else None)
            cells: dict = {}

            def add_cell(key: str, compute) -> None:
                audit = AuditWriter() if settings.audit else None
                cells[key] = compute(audit)
                if audit is not None:
                    cell_dir = out / AUDIT_DIR / spec.name
                    cell_dir.mkdir(parents=True, exist_ok=True)
                    audit.dump(cell_dir / f"{key}.tsv")

            for metric in settings.metrics:
                if metric == "air":
                    if settings.air_mode in ("ground-truth", "both"):
                        add_cell("air", lambda a: air(
                            model, pool, lexicon, source="ground-truth", audit=a))
                    if settings.air_mode in ("generated", "both"):
                        add_cell("air_generated", lambda a: air(
                            model, pool, lexicon, texts=stripped, source="generated",
                            name="air_generated", audit=a))
                elif metric == "mrr_ae":
                    add_cell("mrr_ae", lambda a: mrr_ae(
                        model, pool, lexicon, k=settings.k, seed=config.seeds.eval,
                        audit=a))
                elif metric == "tlae":
                    if settings.tlae_mode in ("model-rating", "both"):
                        instances = [(u, i, tokens, rating)
                                     for u, i, rating, tokens in gen_rows]
                        add_cell("tlae", lambda a, inst=instances: tlae(
                            regressor, inst, target="model-rating", audit=a))
                    if settings.tlae_mode in ("gold-rating", "both"):
                        instances = [(row[0], row[1], row[3], review.rating)
                                     for row, review in zip(gen_rows, pool)]
                        add_cell("tlae_gold", lambda a, inst=instances: tlae(
                            regressor, inst, target="gold-rating", name="tlae_gold",
                            audit=a))
                elif metric == "entail":
                    instances = [(row[0], row[1], row[3], review.tokens)
                                 for row, review in zip(gen_rows, pool)]
                    add_cell("entail", lambda a, inst=instances: entail_metric(
                        inst, lexicon, audit=a))
                elif metric == "gm_f1":
                    instances = [(row[0], row[1], row[3], review.tokens)
                                 for row, review in zip(gen_rows, pool)]
                    add_cell("gm_f1", lambda a, inst=instances: gm_f1_metric(
                        inst, table, audit=a))
                elif metric == "cnll":
                    instances = [(row[0], row[1], row[3], review.tokens)
                                 for row, review in zip(gen_rows, pool)]
                    add_cell("cnll", lambda a, inst=instances: cnll_metric(
                        inst, lm, weight=settings.cnll_weight, audit=a))
                elif metric == "rmse":
                    instances = [(row[0], row[1], row[2], review.rating)
                                 for row, review in zip(gen_rows, pool)]
                    add_cell("rmse", lambda a, inst=instances: rmse_metric(inst, audit=a))

            rows.append(ModelRow(model=spec.name,
                                 privileged=bool(getattr(model, "privileged", False)),
                                 note=spec.note, cells=cells))
            if log:
                summary = " ".join(f"{k}={c.value:.3f}" for k, c in cells.items())
                log(f"[evaluate] {spec.name}: {summary}")

        report = EvaluationReport(
            config_hash=meta["config_hash"],
            corpus_fingerprint=meta["corpus_fingerprint"],
            seeds={"corpus": config.seeds.corpus, "model": config.seeds.model,
                   "eval": config.seeds.eval},
            settings={
                "metrics": ",".join(settings.metrics),
                "k": settings.k,
                "pool": len(pool),
                "air_mode": settings.air_mode,
                "tlae_mode": settings.tlae_mode,
                "cnll_weight": settings.cnll_weight,
                "embed_dim": settings.embed_dim,
            },
            regressor_validation_mse=(regressor.validation_mse
                                      if regressor is not None else None),
            rows=rows,
        )
        report.save(out / RESULTS_FILE)
    return report


def stage_report(config: RunConfig, log=None) -> EvaluationReport:
    out = Path(config.out_dir)
    with _stage_errors("report"):
        _read_meta(config, "report")
        results_path = out / RESULTS_FILE
        if not results_path.exists():
            raise StageError("report", "no evaluation results; run the evaluate stage first")
        report = EvaluationReport.load(results_path)
        if report.config_hash != lineage_hash(config):
            raise StageError("report", "results.json belongs to a different configuration; "
                                       "rerun the evaluate stage")
        report.save(out / REPORT_JSON)
        (out / REPORT_TXT).write_text(format_table(report), encoding="utf-8")
    if log:
        log(f"[report] wrote {REPORT_JSON} and {REPORT_TXT}")
    return report


def run_pipeline(config: RunConfig, log=None) -> EvaluationReport:
    """All five stages in order, plus a timing sidecar."""
    started = time.perf_counter()
    stage_gen_corpus(config, log)
    stage_train(config, log)
    stage_generate(config, log)
    stage_evaluate(config, log)
    report = stage_report(config, log)
    report.wall_time_seconds = time.perf_counter() - started
    (Path(config.out_dir) / TIMING_FILE).write_text(
        f"wall_time_seconds {report.wall_time_seconds:.3f}\n", encoding="utf-8")
    return report
