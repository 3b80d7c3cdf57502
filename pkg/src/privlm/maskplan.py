"""Per-epoch masking and target plans for masked and causal objectives.

Protective plans never select blacklisted words as loss-bearing targets.
Sampling is per word (whole-word groups of token positions); the sampler is a
seeded shuffle so plans are reproducible and per-sequence seed derivation
makes parallel generation equal serial generation bit for bit.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence as Seq

import numpy as np

from .corpus import MASK_ID, PAD_ID, Sequence
from .identify import Blacklist, cover_words
from .seeds import derive_seed


class PlanMismatchError(ValueError):
    """A plan does not fit the sequence it is applied to."""


class Objective(enum.Enum):
    MASKED = "masked"
    CAUSAL = "causal"


class Protection(enum.Enum):
    NONE = "none"
    PSEUDO = "pseudo"
    DIRECT_ONLY = "direct"
    INDIRECT_ONLY = "indirect"
    FULL = "full"


@dataclass(frozen=True)
class Scheme:
    """A language-modeling objective paired with a protection level."""

    objective: Objective
    protection: Protection

    @property
    def name(self) -> str:
        return f"{self.objective.value}-{self.protection.value}"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        try:
            obj_str, prot_str = name.strip().split("-", 1)
            return cls(Objective(obj_str), Protection(prot_str))
        except ValueError as exc:
            raise ValueError(f"unknown scheme name: {name!r}") from exc


ALL_SCHEMES = tuple(
    Scheme(obj, prot) for obj in Objective for prot in Protection
)


@dataclass(frozen=True)
class PlanEntry:
    position: int
    replacement_id: int
    target_id: int
    in_loss: bool


@dataclass(frozen=True)
class MaskPlan:
    scheme: Scheme
    seed: int
    per_sequence: tuple[tuple[PlanEntry, ...], ...]

    def __post_init__(self) -> None:
        for entries in self.per_sequence:
            positions = [e.position for e in entries]
            if positions != sorted(set(positions)):
                raise ValueError("plan positions must be strictly increasing")

    def loss_bearing(self) -> Iterable[tuple[int, PlanEntry]]:
        for s, entries in enumerate(self.per_sequence):
            for e in entries:
                if e.in_loss:
                    yield s, e


def _eligible_flags(flags: tuple[bool, bool], protection: Protection) -> bool:
    direct, indirect = flags
    if protection in (Protection.NONE, Protection.PSEUDO):
        return True
    if protection is Protection.DIRECT_ONLY:
        return not direct
    if protection is Protection.INDIRECT_ONLY:
        return not indirect
    return not (direct or indirect)


def eligible_words(
    sequence: Sequence, blacklist: Blacklist, protection: Protection
) -> set[int]:
    """Word indices within one sequence that the protection allows as targets.

    Coverage is matched against the words visible in this sequence; plan
    builders use document-wide coverage (see _coverage_by_sequence) so
    n-gram occurrences straddling window boundaries are still excluded.
    """
    normals = list(sequence.normals[1:])
    flags = cover_words(blacklist, normals)
    return {
        sequence.word_indices[pos + 1]
        for pos, f in enumerate(flags)
        if _eligible_flags(f, protection)
    }


def _coverage_by_sequence(
    sequences: Seq[Sequence], blacklist: Blacklist
) -> list[dict[int, tuple[bool, bool]]]:
    """Document-level blacklist coverage mapped back onto each sequence.

    Word lists are rebuilt per document from the sequences' word-index maps;
    with tiling windows this reconstructs the full document, so occurrences
    spanning two windows are covered on both sides.
    """
    by_doc: dict[str, dict[int, str]] = defaultdict(dict)
    for seq in sequences:
        for pos in range(1, len(seq)):
            by_doc[seq.doc_id][seq.word_indices[pos]] = seq.normals[pos]
    coverage_of_doc: dict[str, dict[int, tuple[bool, bool]]] = {}
    for doc_id, words in by_doc.items():
        order = sorted(words)
        flags = cover_words(blacklist, [words[i] for i in order])
        coverage_of_doc[doc_id] = dict(zip(order, flags))
    out = []
    for seq in sequences:
        cov = coverage_of_doc[seq.doc_id]
        out.append({w: cov[w] for w in seq.word_indices[1:]})
    return out


def plan_masked(
    sequences: Seq[Sequence],
    blacklist: Blacklist,
    protection: Protection,
    mask_rate: float = 0.15,
    seed: int = 0,
) -> MaskPlan:
    """Sample ceil(mask_rate * |eligible words|) eligible words per sequence;
    every token of a chosen word becomes a MASK-replaced, loss-bearing target.
    Re-invoking with a new epoch seed re-samples.
    """
    if not 0.0 < mask_rate < 1.0:
        raise ValueError("mask_rate must lie strictly between 0 and 1")
    coverage = _coverage_by_sequence(sequences, blacklist)
    per_sequence: list[tuple[PlanEntry, ...]] = []
    for s, seq in enumerate(sequences):
        positions_of_word: dict[int, list[int]] = defaultdict(list)
        for pos in range(1, len(seq)):
            positions_of_word[seq.word_indices[pos]].append(pos)
        eligible = sorted(
            w for w, f in coverage[s].items() if _eligible_flags(f, protection)
        )
        entries: list[PlanEntry] = []
        if eligible:
            m = math.ceil(mask_rate * len(eligible))
            rng = np.random.default_rng(derive_seed(seed, "seq", s))
            chosen = [eligible[i] for i in rng.permutation(len(eligible))[:m]]
            for w in chosen:
                for pos in positions_of_word[w]:
                    entries.append(PlanEntry(pos, MASK_ID, seq.token_ids[pos], True))
            entries.sort(key=lambda e: e.position)
        per_sequence.append(tuple(entries))
    return MaskPlan(
        scheme=Scheme(Objective.MASKED, protection), seed=seed, per_sequence=tuple(per_sequence)
    )


def plan_causal(
    sequences: Seq[Sequence], blacklist: Blacklist, protection: Protection
) -> MaskPlan:
    """Every position t >= 1 becomes a target. Under a protective scheme a
    blacklisted target is flagged out of loss with PAD as its replacement;
    the true token still re-enters the context for later positions (a causal
    model never attends to a position when predicting it, so the padding view
    and the loss mask coincide).
    """
    coverage = _coverage_by_sequence(sequences, blacklist)
    per_sequence: list[tuple[PlanEntry, ...]] = []
    for s, seq in enumerate(sequences):
        entries = []
        for pos in range(1, len(seq)):
            ok = _eligible_flags(coverage[s][seq.word_indices[pos]], protection)
            entries.append(
                PlanEntry(
                    position=pos,
                    replacement_id=seq.token_ids[pos] if ok else PAD_ID,
                    target_id=seq.token_ids[pos],
                    in_loss=ok,
                )
            )
        per_sequence.append(tuple(entries))
    return MaskPlan(
        scheme=Scheme(Objective.CAUSAL, protection), seed=0, per_sequence=tuple(per_sequence)
    )


# ---------------------------------------------------------------------------
# Training examples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingExample:
    """Fixed-length arrays for one sequence under one plan.

    length counts the real (non-padding) input positions; has_target marks
    slots carrying a target at all, in_loss the subset used by the loss.
    """

    input_ids: np.ndarray
    target_ids: np.ndarray
    has_target: np.ndarray
    in_loss: np.ndarray
    length: int
    objective: Objective

    def __post_init__(self) -> None:
        if not (self.in_loss & ~self.has_target).sum() == 0:
            raise ValueError("in_loss slots must be target slots")


def apply_plan(
    sequence: Sequence,
    entries: Seq[PlanEntry],
    objective: Objective,
    context_length: int,
) -> TrainingExample:
    """Materialize one plan row as model-ready arrays.

    Masked: inputs with MASK substitutions, targets only at planned positions.
    Causal: shifted-target layout (slot j predicts position j + 1) with the
    plan's loss mask.
    """
    L = len(sequence)
    if L > context_length:
        raise PlanMismatchError("sequence longer than context length")
    ids = np.full(context_length, PAD_ID, dtype=np.int64)
    ids[:L] = sequence.token_ids
    positions = [e.position for e in entries]
    if any(p <= 0 or p >= L for p in positions):
        raise PlanMismatchError("plan position outside sequence")
    if sorted(set(positions)) != positions:
        raise PlanMismatchError("plan positions must be strictly increasing")
    for e in entries:
        if e.target_id != sequence.token_ids[e.position]:
            raise PlanMismatchError("plan target does not match sequence token")

    target = np.zeros(context_length, dtype=np.int64)
    has_target = np.zeros(context_length, dtype=bool)
    in_loss = np.zeros(context_length, dtype=bool)

    if objective is Objective.MASKED:
        inputs = ids.copy()
        for e in entries:
            if e.replacement_id != MASK_ID:
                raise PlanMismatchError("masked plans must replace with MASK")
            inputs[e.position] = MASK_ID
            target[e.position] = e.target_id
            has_target[e.position] = True
            in_loss[e.position] = e.in_loss
        return TrainingExample(inputs, target, has_target, in_loss, L, objective)

    if {e.position for e in entries} != set(range(1, L)):
        raise PlanMismatchError("causal plan must cover every position >= 1")
    inputs = np.full(context_length, PAD_ID, dtype=np.int64)
    inputs[: L - 1] = sequence.token_ids[: L - 1]
    loss_of = {e.position: e.in_loss for e in entries}
    for pos in range(1, L):
        target[pos - 1] = sequence.token_ids[pos]
        has_target[pos - 1] = True
        in_loss[pos - 1] = loss_of[pos]
    return TrainingExample(inputs, target, has_target, in_loss, L - 1, objective)


def plan_examples(
    sequences: Seq[Sequence], plan: MaskPlan, context_length: int
) -> list[TrainingExample]:
    if len(sequences) != len(plan.per_sequence):
        raise PlanMismatchError("plan and sequence list lengths differ")
    return [
        apply_plan(seq, entries, plan.scheme.objective, context_length)
        for seq, entries in zip(sequences, plan.per_sequence)
    ]


def epoch_plan_fn(
    sequences: Seq[Sequence],
    blacklist: Blacklist,
    scheme: Scheme,
    mask_rate: float,
    master_seed: int,
    context_length: int,
) -> Callable[[int], list[TrainingExample]]:
    """Per-epoch example provider: masked schemes re-sample each epoch with a
    derived seed, causal schemes reuse one deterministic plan.
    """
    if scheme.objective is Objective.CAUSAL:
        plan = plan_causal(sequences, blacklist, scheme.protection)
        examples = plan_examples(sequences, plan, context_length)
        return lambda epoch: examples

    def make(epoch: int) -> list[TrainingExample]:
        plan = plan_masked(
            sequences,
            blacklist,
            scheme.protection,
            mask_rate=mask_rate,
            seed=derive_seed(master_seed, "plan", scheme.name, epoch),
        )
        return plan_examples(sequences, plan, context_length)

    return make


# ---------------------------------------------------------------------------
# Plan files
# ---------------------------------------------------------------------------


def write_plan(plan: MaskPlan, blacklist_digest: str, path: str | Path) -> None:
    lines = [f"# scheme={plan.scheme.name}\tseed={plan.seed}\tblacklist_digest={blacklist_digest}"]
    for s, entries in enumerate(plan.per_sequence):
        for e in entries:
            lines.append(f"{s},{e.position},{e.replacement_id},{e.target_id},{int(e.in_loss)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_plan(path: str | Path) -> tuple[MaskPlan, str]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [l for l in text.split("\n") if l]
    if not lines or not lines[0].startswith("#"):
        raise ValueError("plan file missing header")
    header = dict(
        part.split("=", 1) for part in lines[0][1:].strip().split("\t") if "=" in part
    )
    rows: dict[int, list[PlanEntry]] = defaultdict(list)
    for line in lines[1:]:
        s, pos, rep, tgt, in_loss = line.split(",")
        rows[int(s)].append(PlanEntry(int(pos), int(rep), int(tgt), in_loss == "1"))
    n_seq = max(rows) + 1 if rows else 0
    per_sequence = tuple(tuple(rows.get(s, [])) for s in range(n_seq))
    plan = MaskPlan(
        scheme=Scheme.parse(header["scheme"]), seed=int(header["seed"]), per_sequence=per_sequence
    )
    return plan, header.get("blacklist_digest", "")
