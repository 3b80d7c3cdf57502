"""Deterministic synthetic multi-patient corpus with planted identifiers.

Each patient's documents mix Zipf-distributed shared-vocabulary words with
per-patient unique tokens (indirect ground truth) and tagged entities
(direct ground truth). The bundled rule set recovers every planted entity,
and planted unique tokens are disjoint across patients and absent from the
shared vocabulary, so recall checks have exact answers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Document
from .identify import DirectTag, IdentifierCategory, NGram, TaggerRules
from .seeds import derive_seed

# Entity surfaces are single alphanumeric words so a tag always covers one
# word and survives tokenization unchanged.
_ENTITY_CYCLE = (
    IdentifierCategory.DOCTOR,
    IdentifierCategory.DATE,
    IdentifierCategory.ID,
    IdentifierCategory.PHONE,
)


@dataclass(frozen=True)
class SynthSpec:
    patients: int = 50
    docs_per_patient: int = 2
    min_words: int = 80
    max_words: int = 150
    shared_vocab: int = 150
    planted_per_patient: int = 3
    entities_per_patient: int = 3
    planted_repeats: int = 2  # occurrences of each planted token per document
    entity_repeats: int = 2  # occurrences of each entity per document
    seed: int = 0
    zipf_exponent: float = 1.1
    # Shared text follows a seeded Markov chain with Zipf-like marginals:
    # with probability markov_alpha the walk moves to one of markov_branch
    # fixed successors of the current word, else it jumps to a fresh Zipf
    # draw. Plain iid text has no learnable context; recurring collocations
    # are what give corpus text (and its identifiers) predictable structure.
    markov_alpha: float = 0.7
    markov_branch: int = 2
    structure_seed: int | None = None  # shared-text structure; defaults to seed

    def __post_init__(self) -> None:
        if self.patients < 1 or self.docs_per_patient < 1:
            raise ValueError("need at least one patient and one document each")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("document length bounds out of order")
        if self.shared_vocab < 1:
            raise ValueError("shared_vocab must be >= 1")
        if min(self.planted_per_patient, self.entities_per_patient) < 0:
            raise ValueError("planted counts must be >= 0")
        if min(self.planted_repeats, self.entity_repeats) < 1:
            raise ValueError("repeat counts must be >= 1")
        slots = (self.planted_per_patient > 0) * self.planted_repeats + (
            self.entities_per_patient > 0
        ) * self.entity_repeats
        if slots > self.min_words + 1:
            raise ValueError("too many planted phrases for the shortest document")


@dataclass(frozen=True)
class SynthResult:
    corpus: Corpus
    tags: tuple[DirectTag, ...]
    indirect_truth: frozenset[NGram]
    rules: TaggerRules
    spec: SynthSpec = field(repr=False, default=SynthSpec())


def _patient_id(p: int) -> str:
    return f"p{p:03d}"


def _planted_token(p: int, j: int) -> str:
    return f"zq{p:03d}{chr(ord('a') + j % 26)}{j // 26 if j >= 26 else ''}"


def _entity_surface(category: IdentifierCategory, p: int) -> str:
    if category is IdentifierCategory.DOCTOR:
        return f"doctis{p:03d}"
    if category is IdentifierCategory.DATE:
        return str(19500101 + p * 3607)
    if category is IdentifierCategory.ID:
        return f"id{1000 + p}"
    if category is IdentifierCategory.PHONE:
        return f"555{1000 + p}"
    raise ValueError(f"no synthetic surface for category {category}")


def default_tagger_rules(spec: SynthSpec) -> TaggerRules:
    """Rule set matching exactly the planted entity shapes."""
    doctors = tuple(
        _entity_surface(IdentifierCategory.DOCTOR, p)
        for p in range(spec.patients)
        if spec.entities_per_patient > 0
    )
    return TaggerRules(
        patterns={
            IdentifierCategory.DATE: (r"\b\d{8}\b",),
            IdentifierCategory.ID: (r"\bid\d{4}\b",),
            IdentifierCategory.PHONE: (r"\b555\d{4}\b",),
        },
        dictionaries={IdentifierCategory.DOCTOR: doctors},
        description=f"synthetic rule set (patients={spec.patients}, seed={spec.seed})",
    )


def generate(spec: SynthSpec) -> SynthResult:
    """Build the corpus with ground truth, fully deterministic per seed."""
    shared = [f"w{i:03d}" for i in range(spec.shared_vocab)]
    weights = 1.0 / np.arange(1, spec.shared_vocab + 1) ** spec.zipf_exponent
    weights /= weights.sum()
    structure_rng = np.random.default_rng(
        derive_seed(spec.structure_seed if spec.structure_seed is not None else spec.seed,
                    "structure")
    )
    successors = structure_rng.choice(
        spec.shared_vocab, size=(spec.shared_vocab, spec.markov_branch), p=weights
    )

    documents: list[Document] = []
    tags: list[DirectTag] = []
    indirect: set[NGram] = set()

    for p in range(spec.patients):
        patient = _patient_id(p)
        rng = np.random.default_rng(derive_seed(spec.seed, "patient", p))
        planted = [_planted_token(p, j) for j in range(spec.planted_per_patient)]
        indirect.update((tok,) for tok in planted)
        entities = [
            (cat, _entity_surface(cat, p))
            for cat in (
                _ENTITY_CYCLE[j % len(_ENTITY_CYCLE)]
                for j in range(spec.entities_per_patient)
            )
        ]
        # Planted material recurs as contiguous phrases, the way a unique
        # term cluster or a report header recurs in real patient documents;
        # the recurring local context is what a model can latch onto.
        phrases: list[list[tuple[str, IdentifierCategory | None]]] = []
        if planted:
            phrases += [[(tok, None) for tok in planted]] * spec.planted_repeats
        if entities:
            phrases += [[(surface, cat) for cat, surface in entities]] * spec.entity_repeats
        for d in range(spec.docs_per_patient):
            doc_id = f"{patient}d{d}"
            n_body = int(rng.integers(spec.min_words, spec.max_words + 1))
            state = int(rng.choice(spec.shared_vocab, p=weights))
            body = []
            for _ in range(n_body):
                body.append(shared[state])
                if rng.random() < spec.markov_alpha:
                    state = int(successors[state, rng.integers(spec.markov_branch)])
                else:
                    state = int(rng.choice(spec.shared_vocab, p=weights))
            slots = sorted(
                int(s) for s in rng.choice(n_body + 1, size=len(phrases), replace=False)
            ) if phrases else []
            words: list[str] = []
            pending = list(zip(slots, phrases))
            tagged_positions: list[tuple[int, IdentifierCategory]] = []
            for i in range(n_body + 1):
                while pending and pending[0][0] == i:
                    _, phrase = pending.pop(0)
                    for surface, cat in phrase:
                        if cat is not None:
                            tagged_positions.append((len(words), cat))
                        words.append(surface)
                if i < n_body:
                    words.append(body[i])
                    if (i + 1) % 12 == 0:
                        words.append(".")
            text = " ".join(words)
            documents.append(Document(doc_id, patient, text))
            for pos, cat in tagged_positions:
                tags.append(DirectTag(doc_id, pos, pos + 1, cat))

    return SynthResult(
        corpus=Corpus.from_documents(documents),
        tags=tuple(sorted(tags, key=lambda t: (t.doc_id, t.start_word))),
        indirect_truth=frozenset(indirect),
        rules=default_tagger_rules(spec),
        spec=spec,
    )
