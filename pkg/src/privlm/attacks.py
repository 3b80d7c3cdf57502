"""Membership-inference attacks and the k-token extraction probe.

Membership granularity is the patient: an attack scores or classifies every
patient of a member/non-member split using the adversary's auxiliary corpus.
Higher scores mean more member-like.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence as Seq

import numpy as np

from .corpus import BOS_ID, MASK_ID, Corpus, Vocabulary, segment, tokenize
from .evalmetrics import LeakReport, VocabularyMismatchError
from .identify import Blacklist, NGram, entry_occurrences
from .tinylm import Checkpoint, forward_hidden, generate, slot_cross_entropy


@dataclass(frozen=True)
class MembershipSplit:
    members: frozenset[str]
    non_members: frozenset[str]
    auxiliary: Corpus

    def __post_init__(self) -> None:
        if self.members & self.non_members:
            raise ValueError("member and non-member sets must be disjoint")
        known = set(self.auxiliary.patients)
        missing = (self.members | self.non_members) - known
        if missing:
            raise ValueError(f"auxiliary corpus lacks patients: {sorted(missing)[:3]}")


@dataclass(frozen=True)
class RocResult:
    points: tuple[tuple[float, float], ...]  # (FPR, TPR), FPR ascending
    auc: float
    tpr_at: Mapping[float, float]


@dataclass(frozen=True)
class AttackResult:
    scores: Mapping[str, float]
    predictions: Mapping[str, bool]
    roc: RocResult | None
    precision: float | None
    recall: float | None
    f1: float | None
    excluded: tuple[str, ...] = ()

    @property
    def auc(self) -> float | None:
        return self.roc.auc if self.roc else None


def roc_curve(
    scores: Seq[tuple[float, bool]], fpr_targets: Seq[float] = (0.01,)
) -> RocResult:
    """Threshold sweep over the distinct scores, ties grouped.

    AUC is the trapezoidal area, which with grouped ties equals the
    Mann-Whitney probability that a random member outranks a random
    non-member (ties counted half). TPR at each requested FPR is linearly
    interpolated along the curve.
    """
    n_pos = sum(1 for _, m in scores if m)
    n_neg = len(scores) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs at least one member and one non-member")
    by_score: dict[float, list[bool]] = defaultdict(list)
    for s, m in scores:
        by_score[s].append(m)
    points = [(0.0, 0.0)]
    tp = fp = 0
    for s in sorted(by_score, reverse=True):
        flags = by_score[s]
        tp += sum(flags)
        fp += len(flags) - sum(flags)
        points.append((fp / n_neg, tp / n_pos))
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    tpr_at = {t: _interp_tpr(points, t) for t in fpr_targets}
    return RocResult(points=tuple(points), auc=auc, tpr_at=tpr_at)


def _interp_tpr(points: Seq[tuple[float, float]], target_fpr: float) -> float:
    best = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if x0 <= target_fpr <= x1:
            if x1 == x0:
                best = max(best, y1)
            else:
                best = max(best, y0 + (y1 - y0) * (target_fpr - x0) / (x1 - x0))
        elif x1 <= target_fpr:
            best = max(best, y1)
    return best


def _prf(
    predictions: Mapping[str, bool], members: frozenset[str]
) -> tuple[float | None, float | None, float | None]:
    tp = sum(1 for p, flag in predictions.items() if flag and p in members)
    fp = sum(1 for p, flag in predictions.items() if flag and p not in members)
    fn = sum(1 for p, flag in predictions.items() if not flag and p in members)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Loss-threshold MIA
# ---------------------------------------------------------------------------


def _patient_mean_loss(
    checkpoint: Checkpoint, vocab: Vocabulary, docs, causal: bool
) -> tuple[float, int]:
    """Mean per-token loss over a patient's documents under the checkpoint's
    objective: next-token cross-entropy when causal, one-word-at-a-time
    pseudo-likelihood when bidirectional.
    """
    ctx = checkpoint.config.context_length
    total = 0.0
    count = 0
    for doc in docs:
        for seq in segment(doc, vocab, ctx, stride=ctx - 1):
            L = len(seq)
            if L < 2:
                continue
            if causal:
                inputs = np.asarray(seq.token_ids[: L - 1], dtype=np.int64)
                hidden, _ = forward_hidden(checkpoint.params, inputs, causal=True)
                logits = hidden[0] @ checkpoint.params.w_out
                losses = slot_cross_entropy(logits, np.asarray(seq.token_ids[1:]))
                total += float(losses.sum())
                count += L - 1
            else:
                base = np.asarray(seq.token_ids, dtype=np.int64)
                probes = np.repeat(base[None, :], L - 1, axis=0)
                rows = np.arange(L - 1)
                probes[rows, rows + 1] = MASK_ID
                hidden, _ = forward_hidden(checkpoint.params, probes, causal=False)
                logits = hidden[rows, rows + 1] @ checkpoint.params.w_out
                losses = slot_cross_entropy(logits, base[1:])
                total += float(losses.sum())
                count += L - 1
    return total, count


def loss_mia(
    checkpoint: Checkpoint, vocab: Vocabulary, split: MembershipSplit
) -> AttackResult:
    """Score each patient by the negative mean per-token loss of their
    auxiliary documents; sweep thresholds into a ROC. The prediction flags
    use the Youden-optimal threshold (max TPR - FPR, ties to the stricter
    threshold).
    """
    if checkpoint.config.vocab_size != len(vocab):
        raise VocabularyMismatchError("checkpoint and vocabulary disagree")
    causal = checkpoint.causal
    scores: dict[str, float] = {}
    excluded: list[str] = []
    for patient in sorted(split.members | split.non_members):
        total, count = _patient_mean_loss(
            checkpoint, vocab, split.auxiliary.docs_of(patient), causal
        )
        if count == 0:
            excluded.append(patient)
            continue
        scores[patient] = -total / count
    labeled = [(scores[p], p in split.members) for p in sorted(scores)]
    roc = roc_curve(labeled)
    threshold = _youden_threshold(labeled)
    predictions = {p: scores[p] >= threshold for p in sorted(scores)}
    precision, recall, f1 = _prf(predictions, split.members)
    return AttackResult(
        scores=scores,
        predictions=predictions,
        roc=roc,
        precision=precision,
        recall=recall,
        f1=f1,
        excluded=tuple(excluded),
    )


def _youden_threshold(labeled: Seq[tuple[float, bool]]) -> float:
    n_pos = sum(1 for _, m in labeled if m)
    n_neg = len(labeled) - n_pos
    best_j = -np.inf
    best_t = np.inf
    tp = fp = 0
    by_score: dict[float, list[bool]] = defaultdict(list)
    for s, m in labeled:
        by_score[s].append(m)
    for s in sorted(by_score, reverse=True):
        tp += sum(by_score[s])
        fp += len(by_score[s]) - sum(by_score[s])
        j = tp / n_pos - fp / n_neg
        if j > best_j:
            best_j, best_t = j, s
    return best_t


# ---------------------------------------------------------------------------
# Low-cost identifier MIA
# ---------------------------------------------------------------------------


def identifier_mia(
    leak_report: LeakReport, adversary_blacklist: Blacklist, split: MembershipSplit
) -> AttackResult:
    """Predict a patient as a member when at least one of the identifiers the
    adversary attributes to them appears in the leak report. A patient's
    identifiers are the adversary-blacklist entries occurring in their
    auxiliary documents; a patient without identifiers is predicted
    non-member and counted normally.
    """
    leaked = set(leak_report.leaked)
    identifiers: dict[str, set[NGram]] = defaultdict(set)
    for patient in sorted(split.members | split.non_members):
        for doc in split.auxiliary.docs_of(patient):
            normals = [w.normal for w in tokenize(doc.text)]
            identifiers[patient].update(entry_occurrences(adversary_blacklist, normals))
    predictions = {
        p: bool(identifiers[p] & leaked)
        for p in sorted(split.members | split.non_members)
    }
    precision, recall, f1 = _prf(predictions, split.members)
    scores = {p: 1.0 if flag else 0.0 for p, flag in predictions.items()}
    return AttackResult(
        scores=scores,
        predictions=predictions,
        roc=None,
        precision=precision,
        recall=recall,
        f1=f1,
    )


# ---------------------------------------------------------------------------
# k-extractability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractabilityResult:
    fraction: float | None  # absent when nothing could be evaluated
    evaluated: int
    skipped: int


def k_extractability(
    checkpoint: Checkpoint,
    corpus: Corpus,
    vocab: Vocabulary,
    blacklist: Blacklist,
    k_prefix: int,
) -> ExtractabilityResult:
    """Fraction of blacklisted-entry occurrences reproduced verbatim by greedy
    generation from the k_prefix tokens immediately preceding the occurrence.
    Occurrences with fewer than k_prefix preceding tokens are skipped and
    counted.
    """
    if not checkpoint.causal:
        raise ValueError("k_extractability requires a causal checkpoint")
    if k_prefix < 1:
        raise ValueError("k_prefix must be >= 1")
    extracted = 0
    evaluated = 0
    skipped = 0
    for doc in corpus.documents:
        words = tokenize(doc.text)
        normals = [w.normal for w in words]
        ids = [BOS_ID] + [vocab.id_of(w) for w in normals]
        for gram, spans in sorted(entry_occurrences(blacklist, normals).items()):
            for start, end in spans:
                # token position of the first word of the occurrence is start+1
                lo = start + 1 - k_prefix
                if lo < 0:
                    skipped += 1
                    continue
                prefix = ids[lo : start + 1]
                gen = generate(checkpoint, prefix, end - start)
                produced = [
                    vocab.token_of(t) for t in gen if not vocab.is_special(t)
                ]
                produced = [w for w in produced if not punctuation_or_none(w)]
                evaluated += 1
                if tuple(produced[: len(gram)]) == gram and len(produced) >= len(gram):
                    extracted += 1
    fraction = extracted / evaluated if evaluated else None
    return ExtractabilityResult(fraction=fraction, evaluated=evaluated, skipped=skipped)


def punctuation_or_none(normal: str | None) -> bool:
    return normal is None or not any(c.isalnum() for c in normal)
