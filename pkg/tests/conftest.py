import time

import pytest

from privlm.corpus import build_vocabulary, segment_corpus
from privlm.identify import (
    build_bipartite_graph,
    build_blacklist,
    indirect_identifiers,
    tag_direct,
)
from privlm.maskplan import Objective, Protection, Scheme, epoch_plan_fn
from privlm.tinylm import ModelConfig, TrainConfig, init_model, train
from privlm.evalmetrics import audit_causal, audit_masked, privacy_scores
from privlm.seeds import derive_seed
from privlm.synthcorpus import SynthSpec, generate


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(number, description): acceptance criterion; prints a "
        "pass/fail line when the test finishes",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        number, description = marker.args
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\n[criterion {number:02d}] {verdict} - {description}", flush=True)


# ---------------------------------------------------------------------------
# Shared expensive fixtures for the trend criteria
# ---------------------------------------------------------------------------

TREND_SEEDS = (101, 202, 303)
MILESTONES = (4, 8, 16, 32, 64)
CONTEXT = 64


def build_assets(spec: SynthSpec, n_max: int):
    """Corpus, ground truth, blacklist, vocabulary and training sequences."""
    result = generate(spec)
    corpus = result.corpus
    tags = tag_direct(corpus, result.rules)
    graph = build_bipartite_graph(corpus, n_max)
    blacklist = build_blacklist(
        tags, indirect_identifiers(graph, 2), corpus, 2, n_max, result.rules.description
    )
    vocab = build_vocabulary(corpus, 1, extra_tokens=("x",))
    seqs = segment_corpus(corpus, vocab, CONTEXT, CONTEXT - 1)
    return result, corpus, blacklist, vocab, seqs


def train_scheme(scheme, seqs, blacklist, vocab, *, epochs, milestones, lr, seed,
                 embed_dim=48, hidden_dim=96, batch_size=4, mask_rate=0.15):
    attention = "bidirectional" if scheme.objective is Objective.MASKED else "causal"
    model_cfg = ModelConfig(
        vocab_size=len(vocab), embed_dim=embed_dim, context_length=CONTEXT,
        hidden_dim=hidden_dim, attention=attention,
        seed=derive_seed(seed, "init", scheme.objective.value),
    )
    fn = epoch_plan_fn(seqs, blacklist, scheme, mask_rate, seed, CONTEXT)
    train_cfg = TrainConfig(
        epochs=epochs, batch_size=batch_size, learning_rate=lr,
        seed=derive_seed(seed, "train", scheme.name),
    )
    checkpoints, losses = train(
        model_cfg, init_model(model_cfg), fn, train_cfg, milestones,
        {"scheme": scheme.name, "seed": seed},
    )
    return checkpoints, losses


@pytest.fixture(scope="session")
def masked_trend_runs():
    """Masked NONE vs FULL on the default synthetic corpus, three seeds.

    Returns per-seed milestone audits plus the seed-101 assets (for the plan
    exclusion scan) and the wall-clock time per seed.
    """
    runs = {}
    assets_101 = None
    for seed in TREND_SEEDS:
        started = time.time()
        spec = SynthSpec(seed=seed)  # the default synthetic corpus
        result, corpus, blacklist, vocab, seqs = build_assets(spec, n_max=1)
        if seed == TREND_SEEDS[0]:
            assets_101 = (result, corpus, blacklist, vocab, seqs)
        per_protection = {}
        for protection in (Protection.NONE, Protection.FULL):
            scheme = Scheme(Objective.MASKED, protection)
            checkpoints, _ = train_scheme(
                scheme, seqs, blacklist, vocab,
                epochs=64, milestones=MILESTONES, lr=0.3, seed=seed,
            )
            audits = []
            for ck in checkpoints:
                report, accuracy = audit_masked(ck, corpus, vocab, blacklist)
                audits.append(
                    (ck.provenance["epoch"], privacy_scores(report).privacy, accuracy)
                )
            per_protection[protection] = audits
        runs[seed] = {"audits": per_protection, "elapsed": time.time() - started}
    return {"runs": runs, "assets_101": assets_101}


@pytest.fixture(scope="session")
def causal_overfit_runs():
    """Causal NONE vs FULL trained 200 epochs on a 20-document corpus with an
    order-3 blacklist; used by the regurgitation and n-gram criteria."""
    spec = SynthSpec(
        patients=10, docs_per_patient=2, min_words=30, max_words=50,
        shared_vocab=80, planted_per_patient=3, entities_per_patient=3,
        planted_repeats=2, entity_repeats=1, seed=17,
    )
    result, corpus, blacklist, vocab, seqs = build_assets(spec, n_max=3)
    out = {"planted": result.indirect_truth, "blacklist": blacklist,
           "corpus": corpus, "vocab": vocab}
    for protection in (Protection.NONE, Protection.FULL):
        scheme = Scheme(Objective.CAUSAL, protection)
        checkpoints, _ = train_scheme(
            scheme, seqs, blacklist, vocab, epochs=200, milestones=[200],
            lr=0.5, seed=17,
        )
        report, accuracy = audit_causal(
            checkpoints[0], corpus, vocab, blacklist,
            prefix_lengths=(4, 8), gen_length=40,
        )
        out[protection] = {
            "checkpoint": checkpoints[0], "report": report, "token_accuracy": accuracy,
        }
    return out


MIA_SEEDS = (11, 22, 33)
MIA_MILESTONES = (8, 40, 200)


@pytest.fixture(scope="session")
def mia_split_runs():
    """Member/non-member corpora for the low-cost MIA criterion: per seed,
    identifier-MIA results against the unprotected and the fully protected
    causal checkpoints, plus the unprotected scheme's per-milestone F1."""
    import numpy as np

    from privlm.attacks import MembershipSplit, identifier_mia

    runs = {}
    for seed in MIA_SEEDS:
        spec = SynthSpec(
            patients=20, docs_per_patient=2, min_words=30, max_words=50,
            shared_vocab=80, planted_per_patient=3, entities_per_patient=3,
            planted_repeats=2, entity_repeats=1, seed=seed,
        )
        result = generate(spec)
        full_corpus = result.corpus
        patients = full_corpus.patients
        order = np.random.default_rng(derive_seed(seed, "split")).permutation(len(patients))
        members = frozenset(patients[i] for i in order[:10])
        non_members = frozenset(patients[i] for i in order[10:])
        train_corpus = full_corpus.restrict(members)
        tags = tag_direct(train_corpus, result.rules)
        blacklist = build_blacklist(
            tags, indirect_identifiers(build_bipartite_graph(train_corpus, 1), 2),
            train_corpus, 2, 1,
        )
        vocab = build_vocabulary(full_corpus, 1, extra_tokens=("x",))
        seqs = segment_corpus(train_corpus, vocab, CONTEXT, CONTEXT - 1)
        adversary_blacklist = build_blacklist(
            tag_direct(full_corpus, result.rules),
            indirect_identifiers(build_bipartite_graph(full_corpus, 1), 2),
            full_corpus, 2, 1,
        )
        split = MembershipSplit(members, non_members, full_corpus)
        per_protection = {}
        for protection in (Protection.NONE, Protection.FULL):
            scheme = Scheme(Objective.CAUSAL, protection)
            checkpoints, _ = train_scheme(
                scheme, seqs, blacklist, vocab, epochs=200,
                milestones=MIA_MILESTONES, lr=0.5, seed=seed,
            )
            results = []
            for ck in checkpoints:
                report, _ = audit_causal(
                    ck, train_corpus, vocab, blacklist,
                    prefix_lengths=(4, 8), gen_length=40,
                )
                results.append(
                    (ck.provenance["epoch"], identifier_mia(report, adversary_blacklist, split))
                )
            per_protection[protection] = results
        runs[seed] = per_protection
    return runs
