"""Run configuration: one INI file drives the whole pipeline.

Sections: [corpus] for the synthetic generator (or an external TSV),
[seeds] for the three named seed streams, [metrics] for evaluation
knobs, [output] for the run directory, and one [model:NAME] section per
roster entry. The lineage hash covers exactly the sections that shape
artifacts on disk (corpus spec, corpus/model seeds, model roster), so
evaluation-only overrides never orphan a corpus or checkpoint.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass

VALID_METRICS = ("air", "mrr_ae", "tlae", "entail", "gm_f1", "cnll", "rmse")
AIR_MODES = ("ground-truth", "generated", "both")
TLAE_MODES = ("model-rating", "gold-rating", "both")
MODEL_KINDS = ("oracle", "random", "unigram", "transformer", "recurrent")
TRAINABLE_KINDS = ("transformer", "recurrent")

# every recognised [model:*] key with its parser; "note" is free text
_MODEL_OPTION_TYPES = {
    "embed_dim": int, "ffn_dim": int, "layers": int, "heads": int,
    "max_len": int, "rating_hidden": int, "hidden_dim": int,
    "use_aspect": "bool", "alpha": float,
    "epochs": int, "batch_size": int, "lr": float, "rating_weight": float,
    "clip_norm": float, "patience": int,
}


@dataclass(frozen=True)
class CorpusSpec:
    users: int = 200
    items: int = 100
    aspects: int = 8
    reviews_per_user: int = 40
    affinity_gain: float = 2.4
    offtopic_rate: float = 0.25
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lexicon_path: str | None = None
    external_path: str | None = None  # pre-built TSV; skips generation

    @property
    def total_reviews(self) -> int:
        return self.users * self.reviews_per_user


@dataclass(frozen=True)
class Seeds:
    corpus: int = 11
    model: int = 17
    eval: int = 29


@dataclass(frozen=True)
class MetricSettings:
    metrics: tuple[str, ...] = VALID_METRICS
    k: int = 100
    n_explanations: int = 10000
    air_mode: str = "ground-truth"
    tlae_mode: str = "model-rating"
    cnll_weight: float = 0.5
    embed_dim: int = 32
    audit: bool = False

    def __post_init__(self):
        for m in self.metrics:
            if m not in VALID_METRICS:
                raise ValueError(f"unknown metric '{m}' (known: {', '.join(VALID_METRICS)})")
        if self.air_mode not in AIR_MODES:
            raise ValueError(f"air_mode must be one of {', '.join(AIR_MODES)}")
        if self.tlae_mode not in TLAE_MODES:
            raise ValueError(f"tlae_mode must be one of {', '.join(TLAE_MODES)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_explanations < 1:
            raise ValueError("n_explanations must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    options: tuple[tuple[str, object], ...] = ()
    note: str = ""

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}' (known: {', '.join(MODEL_KINDS)})")
        if not re.fullmatch(r"[A-Za-z0-9._-]+", self.name):
            raise ValueError(f"model name '{self.name}' may only use letters, digits, "
                             "dot, dash and underscore")

    @property
    def option_dict(self) -> dict:
        return dict(self.options)

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE_KINDS


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusSpec = CorpusSpec()
    seeds: Seeds = Seeds()
    metrics: MetricSettings = MetricSettings()
    models: tuple[ModelSpec, ...] = (ModelSpec("oracle", "oracle"),)
    out_dir: str = "runs/out"
    # names to actually run; None means the whole roster. A selection is an
    # evaluation-time view, so it never enters the lineage hash.
    selected: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.models:
            raise ValueError("model roster is empty")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError("duplicate model names in roster")
        if self.selected is not None:
            missing = [s for s in self.selected if s not in names]
            if missing:
                raise ValueError(f"unknown model(s) selected: {', '.join(missing)}")
            if not self.selected:
                raise ValueError("empty model selection")

    @property
    def active_models(self) -> tuple[ModelSpec, ...]:
        if self.selected is None:
            return self.models
        by_name = {spec.name: spec for spec in self.models}
        return tuple(by_name[name] for name in self.selected)

    def model(self, name: str) -> ModelSpec:
        for spec in self.models:
            if spec.name == name:
                return spec
        raise KeyError(f"no model named '{name}' in the roster")


def _parse_value(section: str, key: str, raw: str, kind):
    try:
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ValueError(f"[{section}] {key}: cannot parse '{raw}'") from None


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh, source=str(path))

    corpus_kwargs: dict = {}
    if parser.has_section("corpus"):
        section = parser["corpus"]
        for key in section:
            if key in ("users", "items", "aspects", "reviews_per_user"):
                corpus_kwargs[key] = _parse_value("corpus", key, section[key], int)
            elif key in ("affinity_gain", "offtopic_rate"):
                corpus_kwargs[key] = _parse_value("corpus", key, section[key], float)
            elif key == "splits":
                parts = section[key].split()
                if len(parts) != 3:
                    raise ValueError("[corpus] splits: expected three ratios")
                corpus_kwargs["splits"] = tuple(
                    _parse_value("corpus", key, p, float) for p in parts)
            elif key == "lexicon":
                corpus_kwargs["lexicon_path"] = section[key].strip() or None
            elif key == "path":
                corpus_kwargs["external_path"] = section[key].strip() or None
            else:
                raise ValueError(f"[corpus] unknown key '{key}'")

    seed_kwargs: dict = {}
    if parser.has_section("seeds"):
        for key in parser["seeds"]:
            if key not in ("corpus", "model", "eval"):
                raise ValueError(f"[seeds] unknown key '{key}'")
            seed_kwargs[key] = _parse_value("seeds", key, parser["seeds"][key], int)

    metric_kwargs: dict = {}
    if parser.has_section("metrics"):
        section = parser["metrics"]
        for key in section:
            if key == "metrics":
                metric_kwargs["metrics"] = tuple(
                    m.strip() for m in section[key].replace(",", " ").split())
            elif key in ("k", "n_explanations", "embed_dim"):
                metric_kwargs[key] = _parse_value("metrics", key, section[key], int)
            elif key == "cnll_weight":
                metric_kwargs[key] = _parse_value("metrics", key, section[key], float)
            elif key in ("air_mode", "tlae_mode"):
                metric_kwargs[key] = section[key].strip()
            elif key == "audit":
                metric_kwargs[key] = _parse_value("metrics", key, section[key], "bool")
            else:
                raise ValueError(f"[metrics] unknown key '{key}'")

    out_dir = "runs/out"
    if parser.has_section("output"):
        for key in parser["output"]:
            if key != "dir":
                raise ValueError(f"[output] unknown key '{key}'")
            out_dir = parser["output"]["dir"].strip()

    models: list[ModelSpec] = []
    for section_name in parser.sections():
        if not section_name.startswith("model:"):
            if section_name not in ("corpus", "seeds", "metrics", "output"):
                raise ValueError(f"unknown section [{section_name}]")
            continue
        name = section_name[len("model:"):].strip()
        if not name:
            raise ValueError("model section needs a name: [model:NAME]")
        section = parser[section_name]
        kind = section.get("kind", "").strip()
        if not kind:
            raise ValueError(f"[{section_name}] missing 'kind'")
        options = []
        note = ""
        for key in section:
            if key == "kind":
                continue
            if key == "note":
                note = section[key].strip()
                continue
            if key not in _MODEL_OPTION_TYPES:
                raise ValueError(f"[{section_name}] unknown key '{key}'")
            options.append((key, _parse_value(
                section_name, key, section[key], _MODEL_OPTION_TYPES[key])))
        models.append(ModelSpec(name, kind, tuple(sorted(options)), note))

    return RunConfig(
        corpus=CorpusSpec(**corpus_kwargs),
        seeds=Seeds(**seed_kwargs),
        metrics=MetricSettings(**metric_kwargs),
        models=tuple(models) if models else RunConfig().models,
        out_dir=out_dir,
    )


def lineage_hash(config: RunConfig) -> str:
    """Hash of everything that shapes on-disk artifacts.

    Covers the corpus spec, the corpus and model seeds, and the model
    roster (minus display notes). Metric settings and the eval seed are
    excluded so evaluation overrides can rerun against existing corpora
    and checkpoints.
    """
    corpus = config.corpus
    parts = [
        "corpus",
        str(corpus.users), str(corpus.items), str(corpus.aspects),
        str(corpus.reviews_per_user), repr(corpus.affinity_gain),
        repr(corpus.offtopic_rate),
        " ".join(repr(s) for s in corpus.splits),
        corpus.lexicon_path or "-", corpus.external_path or "-",
        "seeds", str(config.seeds.corpus), str(config.seeds.model),
        "models",
    ]
    for spec in config.models:
        parts.append(spec.name)
        parts.append(spec.kind)
        for key, value in spec.options:
            parts.append(f"{key}={value!r}")
    return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()


def apply_overrides(config: RunConfig, *, out_dir=None, seed_corpus=None,
                    seed_model=None, seed_eval=None, models=None, metrics=None,
                    k=None, n_explanations=None, air_mode=None, tlae_mode=None,
                    audit=None) -> RunConfig:
    """Apply CLI-level overrides, returning a new config."""
    seeds = config.seeds
    if seed_corpus is not None or seed_model is not None or seed_eval is not None:
        seeds = Seeds(
            corpus=seeds.corpus if seed_corpus is None else seed_corpus,
            model=seeds.model if seed_model is None else seed_model,
            eval=seeds.eval if seed_eval is None else seed_eval,
        )
    selected = config.selected
    if models is not None:
        wanted = [m.strip() for m in models.split(",") if m.strip()]
        if not wanted:
            raise ValueError("--models given but no names parsed")
        selected = tuple(wanted)
    settings = config.metrics
    updates: dict = {}
    if metrics is not None:
        updates["metrics"] = tuple(m.strip() for m in metrics.replace(",", " ").split())
    if k is not None:
        updates["k"] = k
    if n_explanations is not None:
        updates["n_explanations"] = n_explanations
    if air_mode is not None:
        updates["air_mode"] = air_mode
    if tlae_mode is not None:
        updates["tlae_mode"] = tlae_mode
    if audit is not None:
        updates["audit"] = audit
    if updates:
        settings = dataclasses.replace(settings, **updates)
    return dataclasses.replace(
        config, seeds=seeds, metrics=settings, selected=selected,
        out_dir=out_dir if out_dir is not None else config.out_dir)
