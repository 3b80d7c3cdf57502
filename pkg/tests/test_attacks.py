import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privlm.corpus import Corpus, Document, build_vocabulary, segment_corpus
from privlm.identify import Blacklist
from privlm.maskplan import Objective, Protection, Scheme, epoch_plan_fn
from privlm.tinylm import Checkpoint, ModelConfig, TrainConfig, init_model, train
from privlm.evalmetrics import LeakReport
from privlm.attacks import (
    MembershipSplit,
    identifier_mia,
    k_extractability,
    loss_mia,
    roc_curve,
)

EMPTY_BL = Blacklist(2, 1, "", {("nosuchword",): (True, False)})


def brute_force_auc(scores):
    """Mann-Whitney oracle: P(member outranks non-member), ties half."""
    members = [s for s, m in scores if m]
    non_members = [s for s, m in scores if not m]
    total = 0.0
    for m in members:
        for n in non_members:
            total += 1.0 if m > n else (0.5 if m == n else 0.0)
    return total / (len(members) * len(non_members))


class TestRocCurve:
    def test_perfect_separation(self):
        result = roc_curve([(1.0, True), (0.0, False)])
        assert result.auc == pytest.approx(1.0)

    def test_swapped_labels(self):
        result = roc_curve([(0.0, True), (1.0, False)])
        assert result.auc == pytest.approx(0.0)

    def test_identical_scores_auc_half(self):
        result = roc_curve([(0.5, True), (0.5, False), (0.5, True), (0.5, False)])
        assert result.auc == pytest.approx(0.5)

    def test_hand_picked_with_tie(self):
        scores = [(3.0, True), (2.0, True), (2.0, False), (1.5, True), (1.0, False), (0.5, False)]
        result = roc_curve(scores)
        assert result.auc == pytest.approx(brute_force_auc(scores), abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_curve([(1.0, True), (2.0, True)])

    def test_points_monotone(self):
        rng = np.random.default_rng(0)
        scores = [(float(rng.normal()), bool(rng.integers(2))) for _ in range(50)]
        scores.append((0.0, True))
        scores.append((0.0, False))
        result = roc_curve(scores)
        xs = [p[0] for p in result.points]
        ys = [p[1] for p in result.points]
        assert xs == sorted(xs) and ys == sorted(ys)
        assert result.points[0] == (0.0, 0.0) and result.points[-1] == (1.0, 1.0)

    def test_tpr_at_fpr_interpolated(self):
        scores = [(4.0, True), (3.0, True), (2.0, False), (1.0, False)]
        result = roc_curve(scores, fpr_targets=(0.01, 0.5))
        assert result.tpr_at[0.01] == pytest.approx(1.0)
        assert result.tpr_at[0.5] == pytest.approx(1.0)

    @given(
        st.lists(
            st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=200
        ).filter(lambda s: any(m for _, m in s) and any(not m for _, m in s))
    )
    @settings(max_examples=150, deadline=None)
    def test_auc_equals_mann_whitney(self, int_scores):
        scores = [(float(s), m) for s, m in int_scores]
        result = roc_curve(scores)
        assert result.auc == pytest.approx(brute_force_auc(scores), abs=1e-9)

    def test_null_distribution(self):
        aucs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            scores = [(float(rng.normal()), i < 50) for i in range(100)]
            aucs.append(roc_curve(scores).auc)
        assert all(0.35 <= a <= 0.65 for a in aucs)


@pytest.fixture(scope="module")
def split_setup():
    docs = []
    texts = {
        "m1": "uniqalpha uniqbeta story one two three four five",
        "m2": "uniqgamma uniqdelta tale two three four five six",
        "n1": "uniqzeta uniqeta story one two three four five",
        "n2": "uniqtheta uniqiota tale two three four five six",
    }
    for patient, text in texts.items():
        docs.append(Document(f"doc-{patient}", patient, text))
    aux = Corpus.from_documents(docs)
    split = MembershipSplit(frozenset({"m1", "m2"}), frozenset({"n1", "n2"}), aux)
    flags = {}
    for text in texts.values():
        for w in text.split():
            if w.startswith("uniq"):
                flags[(w,)] = (False, True)
    adv_bl = Blacklist(2, 1, "adversary", flags)
    return split, adv_bl


class TestIdentifierMia:
    def test_empty_leak_report(self, split_setup):
        split, adv_bl = split_setup
        report = LeakReport("causal-none", 4, "d", {("uniqalpha",): (False, True)}, {})
        result = identifier_mia(report, adv_bl, split)
        assert result.recall == 0.0
        assert result.precision is None
        assert result.f1 is None

    def test_one_identifier_per_member_leaked(self, split_setup):
        split, adv_bl = split_setup
        audited = {("uniqalpha",): (False, True), ("uniqgamma",): (False, True)}
        leaked = {g: (("doc", 0),) for g in audited}
        report = LeakReport("causal-none", 4, "d", audited, leaked)
        result = identifier_mia(report, adv_bl, split)
        assert result.recall == pytest.approx(1.0)
        assert result.precision == pytest.approx(1.0)

    def test_patient_without_identifiers_predicted_non_member(self, split_setup):
        split, adv_bl = split_setup
        aux = Corpus.from_documents(
            list(split.auxiliary.documents) + [Document("doc-m3", "m3", "plain shared words")]
        )
        bigger = MembershipSplit(split.members | {"m3"}, split.non_members, aux)
        report = LeakReport("causal-none", 4, "d", {("uniqalpha",): (False, True)},
                            {("uniqalpha",): (("doc", 0),)})
        result = identifier_mia(report, adv_bl, bigger)
        assert result.predictions["m3"] is False
        assert result.recall == pytest.approx(1 / 3)

    def test_disjoint_split_required(self):
        docs = [Document("d", "p", "text")]
        with pytest.raises(ValueError):
            MembershipSplit(frozenset({"p"}), frozenset({"p"}), Corpus.from_documents(docs))

    def test_auxiliary_must_cover_patients(self):
        docs = [Document("d", "p", "text")]
        with pytest.raises(ValueError):
            MembershipSplit(frozenset({"p"}), frozenset({"q"}), Corpus.from_documents(docs))


@pytest.fixture(scope="module")
def member_overfit():
    member_text = "red green blue yellow purple orange pink brown"
    docs = [
        Document("dm", "member", member_text),
        Document("dn", "outsider", "cold warm cool tepid hot frozen boiling mild"),
    ]
    aux = Corpus.from_documents(docs)
    vocab = build_vocabulary(aux)
    train_corpus = aux.restrict(["member"])
    seqs = segment_corpus(train_corpus, vocab, 16, 15)
    cfg = ModelConfig(vocab_size=len(vocab), embed_dim=16, context_length=16,
                      hidden_dim=24, attention="causal", seed=0)
    fn = epoch_plan_fn(seqs, EMPTY_BL, Scheme(Objective.CAUSAL, Protection.NONE), 0.15, 0, 16)
    tc = TrainConfig(epochs=200, batch_size=1, learning_rate=0.5, seed=1)
    cks, _ = train(cfg, init_model(cfg), fn, tc, [200], {"scheme": "causal-none"})
    return cks[0], vocab, aux


class TestLossMia:

    def test_member_scores_higher(self, member_overfit):
        ck, vocab, aux = member_overfit
        split = MembershipSplit(frozenset({"member"}), frozenset({"outsider"}), aux)
        result = loss_mia(ck, vocab, split)
        assert result.scores["member"] > result.scores["outsider"]
        assert result.auc == pytest.approx(1.0)
        assert result.predictions["member"] and not result.predictions["outsider"]

    def test_patient_with_no_tokens_excluded(self, member_overfit):
        ck, vocab, aux = member_overfit
        bigger = Corpus.from_documents(
            list(aux.documents) + [Document("de", "empty", "")]
        )
        split = MembershipSplit(
            frozenset({"member"}), frozenset({"outsider", "empty"}), bigger
        )
        result = loss_mia(ck, vocab, split)
        assert result.excluded == ("empty",)
        assert "empty" not in result.scores

    def test_masked_objective_pseudo_likelihood(self, member_overfit):
        _, vocab, aux = member_overfit
        cfg = ModelConfig(vocab_size=len(vocab), embed_dim=8, context_length=16,
                          hidden_dim=8, attention="bidirectional", seed=1)
        ck = Checkpoint(init_model(cfg), cfg, {"scheme": "masked-none", "epoch": 1})
        split = MembershipSplit(frozenset({"member"}), frozenset({"outsider"}), aux)
        result = loss_mia(ck, vocab, split)
        assert set(result.scores) == {"member", "outsider"}
        assert all(np.isfinite(list(result.scores.values())))


@pytest.fixture(scope="module")
def overfit():
    # each document carries one identifier occurrence at word index 7, so an
    # 8-token prefix (BOS + 7 words) lines up exactly with a training window
    docs = [
        Document(f"d{i}", "p", f"open{i} note{i} start marker alpha beta gamma uniqueword end tail{i}")
        for i in range(3)
    ]
    corpus = Corpus.from_documents(docs)
    vocab = build_vocabulary(corpus)
    seqs = segment_corpus(corpus, vocab, 32, 31)
    cfg = ModelConfig(vocab_size=len(vocab), embed_dim=16, context_length=32,
                      hidden_dim=24, attention="causal", seed=0)
    fn = epoch_plan_fn(seqs, EMPTY_BL, Scheme(Objective.CAUSAL, Protection.NONE), 0.15, 0, 32)
    tc = TrainConfig(epochs=300, batch_size=1, learning_rate=0.5, seed=2)
    cks, _ = train(cfg, init_model(cfg), fn, tc, [300], {"scheme": "causal-none"})
    bl = Blacklist(2, 1, "", {("uniqueword",): (False, True)})
    return cks[0], corpus, vocab, bl


class TestKExtractability:

    def test_eight_token_prefix_extracts_overfit_occurrences(self, overfit):
        ck, corpus, vocab, bl = overfit
        result = k_extractability(ck, corpus, vocab, bl, k_prefix=8)
        assert result.evaluated == 3 and result.skipped == 0
        assert result.fraction >= 0.9

    def test_untrained_model_not_extractable(self, overfit):
        _, corpus, vocab, bl = overfit
        cfg = ModelConfig(vocab_size=len(vocab), embed_dim=8, context_length=32,
                          hidden_dim=8, attention="causal", seed=9)
        ck = Checkpoint(init_model(cfg), cfg, {"scheme": "causal-none", "epoch": 0})
        result = k_extractability(ck, corpus, vocab, bl, k_prefix=8)
        assert result.fraction == 0.0

    def test_prefix_longer_than_any_context_skips_all(self, overfit):
        ck, corpus, vocab, bl = overfit
        result = k_extractability(ck, corpus, vocab, bl, k_prefix=30)
        assert result.fraction is None
        assert result.skipped == result.evaluated + result.skipped > 0

    def test_requires_causal(self, overfit):
        _, corpus, vocab, bl = overfit
        cfg = ModelConfig(vocab_size=len(vocab), embed_dim=8, context_length=16,
                          hidden_dim=8, attention="bidirectional", seed=1)
        ck = Checkpoint(init_model(cfg), cfg, {"scheme": "masked-none", "epoch": 0})
        with pytest.raises(ValueError):
            k_extractability(ck, corpus, vocab, bl, k_prefix=2)
