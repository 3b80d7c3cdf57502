"""Batch pipeline: ingest -> blacklist -> stats -> plan -> train -> audit ->
attack -> report, driven by one INI configuration file and one master seed.

Every stage reads only artifacts written by earlier stages, writes its outputs
deterministically (fixed float formatting, sorted iteration, no timestamps),
and refreshes a manifest of content digests, so re-running any stage with
unchanged inputs is byte-identical.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import MembershipSplit, identifier_mia, k_extractability, loss_mia
from .corpus import Corpus, Vocabulary, build_vocabulary, ingest_corpus, segment_corpus, write_records
from .evalmetrics import (
    LeakReport,
    UtilityReport,
    audit_causal,
    audit_masked,
    bleu,
    privacy_scores,
    rouge,
)
from .identify import (
    Blacklist,
    TaggerRules,
    build_bipartite_graph,
    build_blacklist,
    export_annotations,
    identifier_stats,
    indirect_identifiers,
    pseudonymize,
    tag_direct,
)
from .maskplan import Objective, Protection, Scheme, epoch_plan_fn, plan_causal, plan_masked, write_plan
from .seeds import derive_seed
from .synthcorpus import SynthSpec, generate as synth_generate
from .tinylm import Checkpoint, DpConfig, ModelConfig, TrainConfig, init_model, train

STAGES = ("synth", "ingest", "blacklist", "stats", "plan", "train", "audit", "attack", "report")

TRADEOFF_HEADER = (
    "scheme,epoch,objective,mask_accuracy,token_accuracy,bleu,rouge_1,rouge_2,rouge_l,"
    "privacy,direct_privacy,indirect_privacy,leaked,audited"
)
MIA_HEADER = "scheme,epoch,attack,auc,tpr_at_1pct_fpr,precision,recall,f1,excluded"
EXTRACT_HEADER = "scheme,epoch,k_prefix,fraction,evaluated,skipped"
SPLIT_HEADER = "patient_id,member"
LOSSES_HEADER = "epoch,mean_loss"


class ConfigError(ValueError):
    """Configuration is invalid; carries every violation found."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class StageError(RuntimeError):
    """A stage cannot run, usually because an upstream artifact is missing."""


@dataclass(frozen=True)
class PipelineConfig:
    output_dir: Path
    master_seed: int
    schemes: tuple[Scheme, ...]
    milestones: tuple[int, ...]
    corpus_source: str
    corpus_format: str  # records | directory | synth
    min_count: int
    synth: SynthSpec | None
    k: int
    n_max: int
    tagger_rules_path: str
    embed_dim: int
    hidden_dim: int
    context_length: int
    epochs: int
    batch_size: int
    learning_rate: float
    mask_rate: float
    dp: DpConfig | None
    prefix_lengths: tuple[int, ...]
    gen_length: int
    k_prefix: int
    member_fraction: float

    def to_dict(self) -> dict:
        return {
            "output_dir": str(self.output_dir),
            "master_seed": self.master_seed,
            "schemes": [s.name for s in self.schemes],
            "milestones": list(self.milestones),
            "corpus_source": self.corpus_source,
            "corpus_format": self.corpus_format,
            "min_count": self.min_count,
            "synth": None if self.synth is None else vars(self.synth),
            "k": self.k,
            "n_max": self.n_max,
            "tagger_rules_path": self.tagger_rules_path,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "context_length": self.context_length,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "mask_rate": self.mask_rate,
            "dp": None if self.dp is None else vars(self.dp),
            "prefix_lengths": list(self.prefix_lengths),
            "gen_length": self.gen_length,
            "k_prefix": self.k_prefix,
            "member_fraction": self.member_fraction,
        }


def load_config(path: str | Path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    violations: list[str] = []
    if not read:
        raise ConfigError([f"config file not found: {path}"])

    def get(section, key, default=None, cast=str):
        try:
            raw = parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            if default is None:
                violations.append(f"missing [{section}] {key}")
                return None
            return default
        try:
            return cast(raw)
        except (TypeError, ValueError):
            violations.append(f"[{section}] {key}: cannot parse {raw!r}")
            return default

    def int_list(raw):
        return tuple(int(x) for x in str(raw).replace(",", " ").split())

    output_dir = get("pipeline", "output_dir")
    master_seed = get("pipeline", "master_seed", cast=int)
    schemes_raw = get("pipeline", "schemes", default="masked-none")
    milestones = get("pipeline", "milestones", default="4 8 16 32 64", cast=int_list)
    schemes: tuple[Scheme, ...] = ()
    try:
        schemes = tuple(
            Scheme.parse(tok) for tok in str(schemes_raw).replace(",", " ").split()
        )
    except ValueError as exc:
        violations.append(str(exc))

    corpus_format = get("corpus", "format", default="records")
    corpus_source = get("corpus", "source", default="")
    min_count = get("corpus", "min_count", default=1, cast=int)
    synth = None
    if parser.has_section("synth"):
        try:
            synth = SynthSpec(
                patients=get("synth", "patients", default=20, cast=int),
                docs_per_patient=get("synth", "docs_per_patient", default=2, cast=int),
                min_words=get("synth", "min_words", default=40, cast=int),
                max_words=get("synth", "max_words", default=70, cast=int),
                shared_vocab=get("synth", "shared_vocab", default=100, cast=int),
                planted_per_patient=get("synth", "planted_per_patient", default=3, cast=int),
                entities_per_patient=get("synth", "entities_per_patient", default=3, cast=int),
                planted_repeats=get("synth", "planted_repeats", default=2, cast=int),
                entity_repeats=get("synth", "entity_repeats", default=2, cast=int),
                seed=get("synth", "seed", default=master_seed or 0, cast=int),
            )
        except ValueError as exc:
            violations.append(f"[synth] {exc}")

    milestones = tuple(sorted(milestones)) if milestones else ()
    epochs = get("train", "epochs", default=max(milestones or (1,)), cast=int)
    dp_clip = get("train", "dp_clip", default="", cast=str)
    dp_noise = get("train", "dp_noise", default="", cast=str)
    dp = None
    if dp_clip or dp_noise:
        try:
            dp = DpConfig(clip_norm=float(dp_clip), noise_multiplier=float(dp_noise or 0.0))
        except ValueError as exc:
            violations.append(f"[train] dp settings: {exc}")

    config = None
    if not violations:
        config = PipelineConfig(
            output_dir=Path(str(output_dir)),
            master_seed=int(master_seed),
            schemes=schemes,
            milestones=milestones,
            corpus_source=str(corpus_source),
            corpus_format=str(corpus_format),
            min_count=int(min_count),
            synth=synth,
            k=get("blacklist", "k", default=2, cast=int),
            n_max=get("blacklist", "n_max", default=1, cast=int),
            tagger_rules_path=get("blacklist", "tagger_rules", default=""),
            embed_dim=get("model", "embed_dim", default=48, cast=int),
            hidden_dim=get("model", "hidden_dim", default=96, cast=int),
            context_length=get("model", "context_length", default=64, cast=int),
            epochs=int(epochs),
            batch_size=get("train", "batch_size", default=4, cast=int),
            learning_rate=get("train", "learning_rate", default=1e-4, cast=float),
            mask_rate=get("train", "mask_rate", default=0.15, cast=float),
            dp=dp,
            prefix_lengths=get("audit", "prefix_lengths", default="8", cast=int_list),
            gen_length=get("audit", "gen_length", default=30, cast=int),
            k_prefix=get("audit", "k_prefix", default=8, cast=int),
            member_fraction=get("attack", "member_fraction", default=0.5, cast=float),
        )
        violations.extend(validate_config(config))
    if violations:
        raise ConfigError(violations)
    return config


def validate_config(cfg: PipelineConfig) -> list[str]:
    out = []
    if not cfg.schemes:
        out.append("[pipeline] schemes must name at least one scheme")
    if not cfg.milestones:
        out.append("[pipeline] milestones must not be empty")
    elif list(cfg.milestones) != sorted(cfg.milestones):
        out.append("[pipeline] milestones must be ascending")
    if cfg.milestones and max(cfg.milestones) > cfg.epochs:
        out.append("[train] epochs must cover the last milestone")
    if cfg.corpus_format not in ("records", "directory", "synth"):
        out.append(f"[corpus] unknown format {cfg.corpus_format!r}")
    if cfg.corpus_format == "synth" and cfg.synth is None:
        out.append("[synth] section required when corpus format is synth")
    if cfg.corpus_format != "synth" and not cfg.corpus_source:
        out.append("[corpus] source path required")
    if cfg.corpus_format != "synth" and cfg.corpus_source and not Path(cfg.corpus_source).exists():
        out.append(f"[corpus] source does not exist: {cfg.corpus_source}")
    if cfg.tagger_rules_path and not Path(cfg.tagger_rules_path).exists():
        out.append(f"[blacklist] tagger_rules does not exist: {cfg.tagger_rules_path}")
    if cfg.k < 2:
        out.append("[blacklist] k must be >= 2")
    if cfg.n_max < 1:
        out.append("[blacklist] n_max must be >= 1")
    if not 0.0 < cfg.mask_rate < 1.0:
        out.append("[train] mask_rate must lie strictly between 0 and 1")
    if cfg.learning_rate <= 0:
        out.append("[train] learning_rate must be > 0")
    if not 0.0 < cfg.member_fraction <= 1.0:
        out.append("[attack] member_fraction must lie in (0, 1]")
    if cfg.context_length < 2:
        out.append("[model] context_length must be >= 2")
    return out


# ---------------------------------------------------------------------------
# Artifact paths and helpers
# ---------------------------------------------------------------------------


class Artifacts:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.synth_corpus = self.root / "synth" / "corpus.jsonl"
        self.synth_rules = self.root / "synth" / "rules.json"
        self.truth_tags = self.root / "synth" / "truth_tags.csv"
        self.truth_indirect = self.root / "synth" / "truth_indirect.txt"
        self.documents = self.root / "corpus" / "documents.jsonl"
        self.vocab = self.root / "corpus" / "vocab.txt"
        self.split = self.root / "corpus" / "split.csv"
        self.tags = self.root / "blacklist" / "tags.csv"
        self.blacklist = self.root / "blacklist" / "blacklist.tsv"
        self.pseudonymized = self.root / "blacklist" / "pseudonymized.jsonl"
        self.stats_per_patient = self.root / "stats" / "per_patient.csv"
        self.stats_degree = self.root / "stats" / "word_degree_cdf.csv"
        self.plans = self.root / "plans"
        self.checkpoints = self.root / "checkpoints"
        self.audits = self.root / "audits"
        self.audit_summary = self.root / "audits" / "summary.csv"
        self.attacks = self.root / "attacks"
        self.attack_summary = self.root / "attacks" / "summary.csv"
        self.extractability = self.root / "attacks" / "extractability.csv"
        self.report_dir = self.root / "report"
        self.manifest = self.root / "manifest.json"

    def plan_path(self, scheme: Scheme) -> Path:
        return self.plans / f"{scheme.name}.plan"

    def checkpoint_path(self, scheme: Scheme, epoch: int) -> Path:
        return self.checkpoints / scheme.name / f"ep{epoch}.ckpt"

    def losses_path(self, scheme: Scheme) -> Path:
        return self.checkpoints / scheme.name / "losses.csv"

    def leaks_path(self, scheme: Scheme, epoch: int) -> Path:
        return self.audits / f"{scheme.name}.ep{epoch}.leaks"

    def roc_path(self, scheme: Scheme) -> Path:
        return self.attacks / f"loss_mia.{scheme.name}.roc.csv"


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise StageError(f"missing artifact {path}; run the {produced_by!r} stage first")
    return path


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _update_manifest(cfg: PipelineConfig, art: Artifacts) -> None:
    entries = {}
    for path in sorted(art.root.rglob("*")):
        if path.is_file() and path != art.manifest:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            entries[path.relative_to(art.root).as_posix()] = digest
    # the output location is implied by where the manifest lives; leaving it
    # out keeps identically-seeded runs byte-identical wherever they land
    resolved = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    payload = json.dumps(
        {"config": resolved, "artifacts": entries}, sort_keys=True, indent=2
    )
    _write_text(art.manifest, payload + "\n")


# ---------------------------------------------------------------------------
# Stage implementations
# ---------------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig, art: Artifacts) -> None:
    if cfg.synth is None:
        raise StageError("synth stage requires a [synth] config section")
    result = synth_generate(cfg.synth)
    art.synth_corpus.parent.mkdir(parents=True, exist_ok=True)
    write_records(result.corpus, art.synth_corpus)
    _write_text(
        art.synth_rules,
        json.dumps(result.rules.to_json_dict(), sort_keys=True, indent=2) + "\n",
    )
    export_annotations(result.tags, art.truth_tags)
    _write_text(
        art.truth_indirect,
        "".join(" ".join(g) + "\n" for g in sorted(result.indirect_truth)),
    )


def _load_train_corpus(cfg: PipelineConfig, art: Artifacts) -> tuple[Corpus, Corpus]:
    """(full corpus, member training corpus) from the ingest artifacts."""
    full = ingest_corpus(_require(art.documents, "ingest"))
    members = {
        row.split(",")[0]
        for row in art.split.read_text().splitlines()[1:]
        if row.endswith(",1")
    }
    return full, full.restrict(members)


def stage_ingest(cfg: PipelineConfig, art: Artifacts) -> None:
    if cfg.corpus_format == "synth":
        source, fmt = _require(art.synth_corpus, "synth"), "records"
    else:
        source, fmt = Path(cfg.corpus_source), cfg.corpus_format
    corpus = ingest_corpus(source, fmt)
    art.documents.parent.mkdir(parents=True, exist_ok=True)
    write_records(corpus, art.documents)
    vocab = build_vocabulary(corpus, min_count=cfg.min_count, extra_tokens=("x",))
    vocab.save(art.vocab)
    patients = corpus.patients
    rng = np.random.default_rng(derive_seed(cfg.master_seed, "split"))
    order = rng.permutation(len(patients))
    n_members = max(1, round(cfg.member_fraction * len(patients))) if patients else 0
    members = {patients[i] for i in order[:n_members]}
    rows = [SPLIT_HEADER] + [f"{p},{int(p in members)}" for p in patients]
    _write_text(art.split, "\n".join(rows) + "\n")


def _load_rules(cfg: PipelineConfig, art: Artifacts) -> TaggerRules:
    if cfg.tagger_rules_path:
        path = Path(cfg.tagger_rules_path)
    elif art.synth_rules.exists():
        path = art.synth_rules
    else:
        raise StageError(
            "no tagger rules: set [blacklist] tagger_rules or run the 'synth' stage"
        )
    return TaggerRules.from_json_dict(json.loads(path.read_text(encoding="utf-8")))


def stage_blacklist(cfg: PipelineConfig, art: Artifacts) -> None:
    _, train_corpus = _load_train_corpus(cfg, art)
    rules = _load_rules(cfg, art)
    tags = tag_direct(train_corpus, rules)
    graph = build_bipartite_graph(train_corpus, cfg.n_max)
    indirect = indirect_identifiers(graph, cfg.k)
    blacklist = build_blacklist(tags, indirect, train_corpus, cfg.k, cfg.n_max, rules.description)
    art.blacklist.parent.mkdir(parents=True, exist_ok=True)
    export_annotations(tags, art.tags)
    blacklist.save(art.blacklist)
    write_records(pseudonymize(train_corpus, tags), art.pseudonymized)


def stage_stats(cfg: PipelineConfig, art: Artifacts) -> None:
    _, train_corpus = _load_train_corpus(cfg, art)
    blacklist = Blacklist.load(_require(art.blacklist, "blacklist"))
    report = identifier_stats(train_corpus, blacklist)
    _write_text(art.stats_per_patient, report.per_patient_csv())
    _write_text(art.stats_degree, report.degree_cdf_csv())


def _scheme_sequences(cfg: PipelineConfig, art: Artifacts, scheme: Scheme):
    _, train_corpus = _load_train_corpus(cfg, art)
    if scheme.protection is Protection.PSEUDO:
        train_corpus = ingest_corpus(_require(art.pseudonymized, "blacklist"))
    vocab = Vocabulary.load(_require(art.vocab, "ingest"))
    seqs = segment_corpus(train_corpus, vocab, cfg.context_length, cfg.context_length - 1)
    return seqs, vocab


def stage_plan(cfg: PipelineConfig, art: Artifacts) -> None:
    blacklist = Blacklist.load(_require(art.blacklist, "blacklist"))
    art.plans.mkdir(parents=True, exist_ok=True)
    for scheme in cfg.schemes:
        seqs, _ = _scheme_sequences(cfg, art, scheme)
        if scheme.objective is Objective.MASKED:
            plan = plan_masked(
                seqs,
                blacklist,
                scheme.protection,
                mask_rate=cfg.mask_rate,
                seed=derive_seed(cfg.master_seed, "plan", scheme.name, 1),
            )
        else:
            plan = plan_causal(seqs, blacklist, scheme.protection)
        write_plan(plan, blacklist.digest(), art.plan_path(scheme))


def stage_train(cfg: PipelineConfig, art: Artifacts) -> None:
    blacklist = Blacklist.load(_require(art.blacklist, "blacklist"))
    for scheme in cfg.schemes:
        _require(art.plan_path(scheme), "plan")
        seqs, vocab = _scheme_sequences(cfg, art, scheme)
        attention = "bidirectional" if scheme.objective is Objective.MASKED else "causal"
        model_cfg = ModelConfig(
            vocab_size=len(vocab),
            embed_dim=cfg.embed_dim,
            context_length=cfg.context_length,
            hidden_dim=cfg.hidden_dim,
            attention=attention,
            seed=derive_seed(cfg.master_seed, "init", scheme.objective.value),
        )
        train_cfg = TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            seed=derive_seed(cfg.master_seed, "train", scheme.name),
            dp=cfg.dp,
        )
        fn = epoch_plan_fn(
            seqs, blacklist, scheme, cfg.mask_rate, cfg.master_seed, cfg.context_length
        )
        provenance = {
            "scheme": scheme.name,
            "master_seed": cfg.master_seed,
            "blacklist_digest": blacklist.digest(),
        }
        checkpoints, losses = train(
            model_cfg, init_model(model_cfg), fn, train_cfg, cfg.milestones, provenance
        )
        for ck in checkpoints:
            path = art.checkpoint_path(scheme, ck.provenance["epoch"])
            path.parent.mkdir(parents=True, exist_ok=True)
            ck.save(path)
        rows = [LOSSES_HEADER] + [f"{e + 1},{_fmt(loss)}" for e, loss in enumerate(losses)]
        _write_text(art.losses_path(scheme), "\n".join(rows) + "\n")


def _utility_generation(
    ck: Checkpoint, corpus: Corpus, vocab: Vocabulary, prefix: int, gen_length: int
):
    """Mean BLEU / ROUGE of greedy continuations against the true text."""
    from .corpus import BOS_ID, tokenize
    from .tinylm import generate as lm_generate

    bleus, r1s, r2s, rls = [], [], [], []
    for doc in corpus.documents:
        words = [w.normal for w in tokenize(doc.text)]
        if len(words) < prefix + 2:
            continue
        ids = [BOS_ID] + [vocab.id_of(w) for w in words]
        reference = words[prefix : prefix + gen_length]
        if not reference:
            continue
        gen = lm_generate(ck, ids[: prefix + 1], min(gen_length, len(reference)))
        candidate = [vocab.token_of(t) for t in gen]
        bleus.append(bleu(candidate, reference))
        for variant, acc in ((1, r1s), (2, r2s), ("L", rls)):
            score = rouge(candidate, reference, variant)
            if score is not None:
                acc.append(score)
    mean = lambda xs: float(np.mean(xs)) if xs else None
    return mean(bleus), mean(r1s), mean(r2s), mean(rls)


def stage_audit(cfg: PipelineConfig, art: Artifacts) -> None:
    _, train_corpus = _load_train_corpus(cfg, art)
    vocab = Vocabulary.load(_require(art.vocab, "ingest"))
    blacklist = Blacklist.load(_require(art.blacklist, "blacklist"))
    rows = [TRADEOFF_HEADER]
    art.audits.mkdir(parents=True, exist_ok=True)
    for scheme in cfg.schemes:
        for epoch in cfg.milestones:
            ck = Checkpoint.load(_require(art.checkpoint_path(scheme, epoch), "train"))
            if scheme.objective is Objective.MASKED:
                report, accuracy = audit_masked(ck, train_corpus, vocab, blacklist)
                utility = UtilityReport(mask_accuracy=accuracy)
            else:
                report, accuracy = audit_causal(
                    ck, train_corpus, vocab, blacklist,
                    prefix_lengths=cfg.prefix_lengths, gen_length=cfg.gen_length,
                )
                b, r1, r2, rl = _utility_generation(
                    ck, train_corpus, vocab, cfg.prefix_lengths[0], cfg.gen_length
                )
                utility = UtilityReport(
                    token_accuracy=accuracy, bleu=b, rouge_1=r1, rouge_2=r2, rouge_l=rl
                )
            _write_text(art.leaks_path(scheme, epoch), report.serialize_lines())
            scores = privacy_scores(report)
            rows.append(
                ",".join(
                    [
                        scheme.name,
                        str(epoch),
                        scheme.objective.value,
                        _fmt(utility.mask_accuracy),
                        _fmt(utility.token_accuracy),
                        _fmt(utility.bleu),
                        _fmt(utility.rouge_1),
                        _fmt(utility.rouge_2),
                        _fmt(utility.rouge_l),
                        _fmt(scores.privacy),
                        _fmt(scores.direct),
                        _fmt(scores.indirect),
                        str(len(report.leaked_entries())),
                        str(len(report.audited_entries())),
                    ]
                )
            )
    _write_text(art.audit_summary, "\n".join(rows) + "\n")


def _load_split(cfg: PipelineConfig, art: Artifacts) -> MembershipSplit:
    full = ingest_corpus(_require(art.documents, "ingest"))
    members, non_members = set(), set()
    for row in _require(art.split, "ingest").read_text().splitlines()[1:]:
        patient, flag = row.rsplit(",", 1)
        (members if flag == "1" else non_members).add(patient)
    if not non_members:
        raise StageError(
            "attack stage needs non-member patients; lower [attack] member_fraction"
        )
    return MembershipSplit(frozenset(members), frozenset(non_members), full)


def stage_attack(cfg: PipelineConfig, art: Artifacts) -> None:
    split = _load_split(cfg, art)
    vocab = Vocabulary.load(_require(art.vocab, "ingest"))
    rules = _load_rules(cfg, art)
    full = split.auxiliary
    adversary_blacklist = build_blacklist(
        tag_direct(full, rules),
        indirect_identifiers(build_bipartite_graph(full, cfg.n_max), cfg.k),
        full,
        cfg.k,
        cfg.n_max,
        rules.description + " (adversary)",
    )
    final = cfg.milestones[-1]
    rows = [MIA_HEADER]
    extract_rows = [EXTRACT_HEADER]
    art.attacks.mkdir(parents=True, exist_ok=True)
    _, train_corpus = _load_train_corpus(cfg, art)
    blacklist = Blacklist.load(_require(art.blacklist, "blacklist"))
    for scheme in cfg.schemes:
        ck = Checkpoint.load(_require(art.checkpoint_path(scheme, final), "train"))
        loss_result = loss_mia(ck, vocab, split)
        roc_rows = ["fpr,tpr"] + [f"{_fmt(x)},{_fmt(y)}" for x, y in loss_result.roc.points]
        _write_text(art.roc_path(scheme), "\n".join(roc_rows) + "\n")
        rows.append(
            ",".join(
                [
                    scheme.name, str(final), "loss_mia",
                    _fmt(loss_result.auc), _fmt(loss_result.roc.tpr_at[0.01]),
                    _fmt(loss_result.precision), _fmt(loss_result.recall),
                    _fmt(loss_result.f1), str(len(loss_result.excluded)),
                ]
            )
        )
        leaks = art.leaks_path(scheme, final)
        report = _read_leak_report(_require(leaks, "audit"), blacklist)
        id_result = identifier_mia(report, adversary_blacklist, split)
        rows.append(
            ",".join(
                [
                    scheme.name, str(final), "identifier_mia",
                    _fmt(id_result.auc), "",
                    _fmt(id_result.precision), _fmt(id_result.recall),
                    _fmt(id_result.f1), "0",
                ]
            )
        )
        if scheme.objective is Objective.CAUSAL:
            ext = k_extractability(ck, train_corpus, vocab, blacklist, cfg.k_prefix)
            extract_rows.append(
                f"{scheme.name},{final},{cfg.k_prefix},{_fmt(ext.fraction)},"
                f"{ext.evaluated},{ext.skipped}"
            )
    _write_text(art.attack_summary, "\n".join(rows) + "\n")
    if len(extract_rows) > 1:
        _write_text(art.extractability, "\n".join(extract_rows) + "\n")


def _read_leak_report(path: Path, blacklist: Blacklist) -> LeakReport:
    """Rebuild a leak report from its line serialization.

    The audited set is reconstructed as every blacklist entry, which is a
    superset of what the audit saw; identifier matching only consults the
    leaked set, so attack results are unaffected.
    """
    lines = path.read_text(encoding="utf-8").splitlines()
    header = dict(part.split("=", 1) for part in lines[0][1:].strip().split("\t"))
    leaked: dict = {}
    for line in lines[1:]:
        gram_str, _, _, doc_id, pos = line.split("\t")
        gram = tuple(gram_str.split(" "))
        leaked.setdefault(gram, []).append((doc_id, int(pos)))
    return LeakReport(
        scheme=header.get("scheme", ""),
        epoch=int(header.get("epoch", 0)),
        checkpoint_digest=header.get("checkpoint", ""),
        audited=dict(blacklist.flags),
        leaked={g: tuple(v) for g, v in leaked.items()},
    )


def stage_report(cfg: PipelineConfig, art: Artifacts) -> None:
    audit_summary = _require(art.audit_summary, "audit")
    art.report_dir.mkdir(parents=True, exist_ok=True)
    (art.report_dir / "tradeoff.csv").write_bytes(audit_summary.read_bytes())
    if art.attack_summary.exists():
        (art.report_dir / "mia_summary.csv").write_bytes(art.attack_summary.read_bytes())
    for roc in sorted(art.attacks.glob("*.roc.csv")) if art.attacks.exists() else []:
        (art.report_dir / roc.name).write_bytes(roc.read_bytes())
    for stats in (art.stats_per_patient, art.stats_degree):
        if stats.exists():
            (art.report_dir / stats.name).write_bytes(stats.read_bytes())


_STAGE_FNS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "blacklist": stage_blacklist,
    "stats": stage_stats,
    "plan": stage_plan,
    "train": stage_train,
    "audit": stage_audit,
    "attack": stage_attack,
    "report": stage_report,
}


def run(cfg: PipelineConfig, stages: tuple[str, ...] = STAGES) -> None:
    """Run the requested stages in canonical order, refreshing the manifest
    after each one."""
    unknown = [s for s in stages if s not in STAGES]
    if unknown:
        raise ConfigError([f"unknown stage: {s}" for s in unknown])
    art = Artifacts(cfg.output_dir)
    art.root.mkdir(parents=True, exist_ok=True)
    for stage in STAGES:
        if stage not in stages:
            continue
        if stage == "synth" and cfg.corpus_format != "synth" and cfg.synth is None:
            continue
        _STAGE_FNS[stage](cfg, art)
        _update_manifest(cfg, art)
