"""Utility metrics (mask/token accuracy, BLEU, ROUGE) and privacy metrics
(leak reports, Privacy / Direct Privacy / Indirect Privacy) from model audits.

Leak semantics, fixed once for the whole toolkit:
  * probe leaks: a top-1 prediction (of a masked probe or of a next-token
    slot) equal to an order-1 blacklist entry leaks that entry;
  * generation leaks: an entry of any order leaks when its n-gram appears
    contiguously in model-emitted text (punctuation-filtered for order >= 2,
    prompt prefixes excluded).
Any probed position counts, correct place or elsewhere.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence as Seq

import numpy as np

from .corpus import BOS_ID, MASK_ID, Corpus, Vocabulary, segment, tokenize
from .identify import (
    Blacklist,
    NGram,
    cover_words,
    entry_occurrences,
    punctuation_normal,
)
from .tinylm import Checkpoint, forward_hidden, generate

Location = tuple[str, int]


class VocabularyMismatchError(ValueError):
    """Checkpoint and vocabulary disagree on the token space."""


@dataclass(frozen=True)
class LeakReport:
    scheme: str
    epoch: int
    checkpoint_digest: str
    audited: Mapping[NGram, tuple[bool, bool]]  # entries present in the corpus
    leaked: Mapping[NGram, tuple[Location, ...]]

    def __post_init__(self) -> None:
        stray = set(self.leaked) - set(self.audited)
        if stray:
            raise ValueError(f"leaked entries outside the audited set: {sorted(stray)[:3]}")

    def audited_entries(self, flag: str | None = None, order: int | None = None) -> list[NGram]:
        out = []
        for gram, (d, ind) in self.audited.items():
            if flag == "direct" and not d:
                continue
            if flag == "indirect" and not ind:
                continue
            if order is not None and len(gram) != order:
                continue
            out.append(gram)
        return sorted(out)

    def leaked_entries(self, flag: str | None = None, order: int | None = None) -> list[NGram]:
        return [g for g in self.audited_entries(flag, order) if g in self.leaked]

    def serialize_lines(self) -> str:
        lines = [
            f"# scheme={self.scheme}\tepoch={self.epoch}\tcheckpoint={self.checkpoint_digest}"
        ]
        for gram in sorted(self.leaked):
            d, ind = self.audited[gram]
            for doc_id, pos in self.leaked[gram]:
                lines.append(f"{' '.join(gram)}\t{int(d)}\t{int(ind)}\t{doc_id}\t{pos}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PrivacyScores:
    privacy: float | None
    direct: float | None
    indirect: float | None


def privacy_scores(report: LeakReport) -> PrivacyScores:
    """Privacy = 1 - leaked/audited; per-flag scores restrict both sides to
    entries carrying the flag. A flag with zero audited entries is absent.
    """

    def score(flag: str | None) -> float | None:
        audited = report.audited_entries(flag)
        if not audited:
            return None
        leaked = report.leaked_entries(flag)
        return 1.0 - len(leaked) / len(audited)

    return PrivacyScores(privacy=score(None), direct=score("direct"), indirect=score("indirect"))


@dataclass(frozen=True)
class UtilityReport:
    mask_accuracy: float | None = None
    token_accuracy: float | None = None
    bleu: float | None = None
    rouge_1: float | None = None
    rouge_2: float | None = None
    rouge_l: float | None = None

    def __post_init__(self) -> None:
        for name, value in vars(self).items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of [0, 1]: {value}")


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------


def _check_vocab(checkpoint: Checkpoint, vocab: Vocabulary) -> None:
    if checkpoint.config.vocab_size != len(vocab):
        raise VocabularyMismatchError(
            f"checkpoint vocab {checkpoint.config.vocab_size} != vocabulary {len(vocab)}"
        )


def _audited_entries(
    corpus: Corpus, blacklist: Blacklist, max_order: int | None = None
) -> dict[NGram, tuple[bool, bool]]:
    present: dict[NGram, tuple[bool, bool]] = {}
    for doc in corpus.documents:
        normals = [w.normal for w in tokenize(doc.text)]
        for gram in entry_occurrences(blacklist, normals):
            if max_order is not None and len(gram) > max_order:
                continue
            present[gram] = blacklist.flags[gram]
    return present


def audit_masked(
    checkpoint: Checkpoint, corpus: Corpus, vocab: Vocabulary, blacklist: Blacklist
) -> tuple[LeakReport, float]:
    """Mask every word occurrence of the corpus one word group per probe and
    record top-1 predictions. An order-1 entry leaks when it is predicted at
    any probe; mask accuracy is measured over non-blacklisted probes only.
    """
    if checkpoint.causal:
        raise ValueError("audit_masked requires a bidirectional checkpoint")
    _check_vocab(checkpoint, vocab)
    ctx = checkpoint.config.context_length
    audited = _audited_entries(corpus, blacklist, max_order=1)
    leaked: dict[NGram, list[Location]] = defaultdict(list)
    correct = 0
    total = 0
    for doc in corpus.documents:
        words = tokenize(doc.text)
        covered = cover_words(blacklist, [w.normal for w in words])
        for seq in segment(doc, vocab, ctx, stride=ctx - 1):
            group_positions: dict[int, list[int]] = defaultdict(list)
            for pos in range(1, len(seq)):
                group_positions[seq.word_indices[pos]].append(pos)
            groups = sorted(group_positions)
            base = np.asarray(seq.token_ids, dtype=np.int64)
            probes = np.repeat(base[None, :], len(groups), axis=0)
            for row, w in enumerate(groups):
                probes[row, group_positions[w]] = MASK_ID
            hidden, _ = forward_hidden(checkpoint.params, probes, causal=False)
            for row, w in enumerate(groups):
                preds = [
                    int(np.argmax(hidden[row, pos] @ checkpoint.params.w_out))
                    for pos in group_positions[w]
                ]
                if not (covered[w][0] or covered[w][1]):
                    total += 1
                    truth = [seq.token_ids[pos] for pos in group_positions[w]]
                    correct += int(preds == truth)
                for pred in preds:
                    if vocab.is_special(pred):
                        continue
                    entry = (vocab.token_of(pred),)
                    if entry in audited:
                        leaked[entry].append((doc.doc_id, w))
    report = LeakReport(
        scheme=str(checkpoint.provenance.get("scheme", "")),
        epoch=int(checkpoint.provenance.get("epoch", 0)),
        checkpoint_digest=checkpoint.digest(),
        audited=audited,
        leaked={g: tuple(locs) for g, locs in leaked.items()},
    )
    accuracy = correct / total if total else 0.0
    return report, accuracy


def _decode_normals(ids: Seq[int], vocab: Vocabulary) -> list[str | None]:
    """Generated ids as normalized words; specials decode to None."""
    return [None if vocab.is_special(i) else vocab.token_of(int(i)) for i in ids]


def _scan_generation(
    decoded: list[str | None],
    blacklist: Blacklist,
    audited: Mapping[NGram, tuple[bool, bool]],
    doc_id: str,
    leaked: dict[NGram, list[Location]],
) -> None:
    for offset, w in enumerate(decoded):
        if w is None:
            continue
        entry = (w,)
        if entry in audited:
            leaked[entry].append((doc_id, offset))
    if blacklist.n_max >= 2:
        clean = [(i, w) for i, w in enumerate(decoded) if w is not None and not punctuation_normal(w)]
        for n in range(2, blacklist.n_max + 1):
            for i in range(len(clean) - n + 1):
                gram = tuple(w for _, w in clean[i : i + n])
                if gram in audited:
                    leaked[gram].append((doc_id, clean[i][0]))


def audit_causal(
    checkpoint: Checkpoint,
    corpus: Corpus,
    vocab: Vocabulary,
    blacklist: Blacklist,
    prefix_lengths: Seq[int] = (8,),
    gen_length: int = 30,
) -> tuple[LeakReport, float]:
    """Top-1 next-token accuracy over the corpus plus greedy generations from
    each document prefix. Next-token probe predictions leak order-1 entries;
    generations leak any entry appearing contiguously in emitted text.
    """
    if not checkpoint.causal:
        raise ValueError("audit_causal requires a causal checkpoint")
    _check_vocab(checkpoint, vocab)
    ctx = checkpoint.config.context_length
    audited = _audited_entries(corpus, blacklist)
    leaked: dict[NGram, list[Location]] = defaultdict(list)
    correct = 0
    total = 0
    for doc in corpus.documents:
        for seq in segment(doc, vocab, ctx, stride=ctx - 1):
            L = len(seq)
            if L < 2:
                continue
            inputs = np.asarray(seq.token_ids[: L - 1], dtype=np.int64)
            hidden, _ = forward_hidden(checkpoint.params, inputs, causal=True)
            logits = hidden[0] @ checkpoint.params.w_out
            preds = np.argmax(logits, axis=-1)
            targets = np.asarray(seq.token_ids[1:], dtype=np.int64)
            correct += int((preds == targets).sum())
            total += len(targets)
            for slot, pred in enumerate(preds):
                if vocab.is_special(int(pred)):
                    continue
                entry = (vocab.token_of(int(pred)),)
                if entry in audited:
                    leaked[entry].append((doc.doc_id, seq.word_indices[slot + 1]))
        if gen_length > 0:
            words = tokenize(doc.text)
            ids = [BOS_ID] + [vocab.id_of(w.normal) for w in words]
            for p in prefix_lengths:
                if p < 1 or p + 1 > len(ids) or p + 1 > ctx:
                    continue
                gen = generate(checkpoint, ids[: p + 1], gen_length)
                _scan_generation(_decode_normals(gen, vocab), blacklist, audited, doc.doc_id, leaked)
    report = LeakReport(
        scheme=str(checkpoint.provenance.get("scheme", "")),
        epoch=int(checkpoint.provenance.get("epoch", 0)),
        checkpoint_digest=checkpoint.digest(),
        audited=audited,
        leaked={g: tuple(locs) for g, locs in leaked.items()},
    )
    return report, (correct / total if total else 0.0)


# ---------------------------------------------------------------------------
# Text-similarity metrics
# ---------------------------------------------------------------------------


def _ngram_counts(tokens: Seq[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Seq[Hashable], reference: Seq[Hashable], max_n: int = 4) -> float:
    """Geometric mean of clipped n-gram precisions (n = 1..max_n, zero counts
    smoothed by add-one on the numerator) times the brevity penalty
    exp(min(0, 1 - |reference| / |candidate|)).
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if len(candidate) == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = _ngram_counts(candidate, n)
        ref = _ngram_counts(reference, n)
        clipped = sum(min(c, ref[g]) for g, c in cand.items())
        denom = max(1, len(candidate) - n + 1)
        if clipped == 0:
            clipped = 1
        log_sum += math.log(clipped / denom)
    brevity = math.exp(min(0.0, 1.0 - len(reference) / len(candidate)))
    return brevity * math.exp(log_sum / max_n)


def rouge(candidate: Seq[Hashable], reference: Seq[Hashable], variant: int | str) -> float | None:
    """ROUGE-n recall (clipped n-gram overlap over reference n-gram count) or
    ROUGE-L (LCS length over reference length). Empty reference is undefined
    and reported as None.
    """
    if len(reference) == 0:
        return None
    if variant in (1, 2, "1", "2"):
        n = int(variant)
        ref = _ngram_counts(reference, n)
        if not ref:
            return None
        cand = _ngram_counts(candidate, n)
        overlap = sum(min(c, cand[g]) for g, c in ref.items())
        return overlap / sum(ref.values())
    if str(variant).upper() == "L":
        return _lcs_length(candidate, reference) / len(reference)
    raise ValueError(f"unknown ROUGE variant: {variant!r}")


def _lcs_length(a: Seq[Hashable], b: Seq[Hashable]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]
