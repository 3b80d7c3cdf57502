"""Identifier detection: rule tagger for direct identifiers, patient/n-gram
bipartite graph for indirect identifiers, blacklist assembly and statistics.

An n-gram is written as a tuple of normalized words. Windows of order >= 2
are taken over the punctuation-filtered word sequence, so "smith , jones"
contributes the bigram ("smith", "jones") but never ("smith", ",").
"""

from __future__ import annotations

import csv
import enum
import hashlib
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence as Seq

from .corpus import Corpus, Document, Word, tokenize

NGram = tuple[str, ...]


class TaggerConfigError(ValueError):
    """A tagger rule set is malformed (bad regex, unknown category)."""


class IdentifierCategory(enum.Enum):
    PATIENT_NAME = 0
    DOCTOR = 1
    HOSPITAL = 2
    LOCATION = 3
    DATE = 4
    ID = 5
    PHONE = 6
    AGE = 7


@dataclass(frozen=True)
class DirectTag:
    """A tagged word range [start_word, end_word) in one document."""

    doc_id: str
    start_word: int
    end_word: int
    category: IdentifierCategory

    def __post_init__(self) -> None:
        if self.end_word <= self.start_word or self.start_word < 0:
            raise ValueError("tag word range must be non-empty and non-negative")


@dataclass(frozen=True)
class TaggerRules:
    """Per-category regex patterns (matched on raw text) and dictionaries of
    normalized words or phrases (matched on consecutive words).
    """

    patterns: Mapping[IdentifierCategory, tuple[str, ...]] = field(default_factory=dict)
    dictionaries: Mapping[IdentifierCategory, tuple[str, ...]] = field(default_factory=dict)
    description: str = "rule tagger"

    def compiled(self) -> dict[IdentifierCategory, list[re.Pattern[str]]]:
        out: dict[IdentifierCategory, list[re.Pattern[str]]] = {}
        for cat, pats in self.patterns.items():
            compiled = []
            for pat in pats:
                try:
                    compiled.append(re.compile(pat))
                except re.error as exc:
                    raise TaggerConfigError(
                        f"invalid pattern for category {cat.name}: {pat!r} ({exc})"
                    ) from exc
            out[cat] = compiled
        return out

    def to_json_dict(self) -> dict:
        return {
            "description": self.description,
            "patterns": {c.name: list(p) for c, p in sorted(self.patterns.items(), key=lambda kv: kv[0].value)},
            "dictionaries": {c.name: list(d) for c, d in sorted(self.dictionaries.items(), key=lambda kv: kv[0].value)},
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TaggerRules":
        def cat(name: str) -> IdentifierCategory:
            try:
                return IdentifierCategory[name]
            except KeyError as exc:
                raise TaggerConfigError(f"unknown identifier category: {name!r}") from exc

        return cls(
            patterns={cat(k): tuple(v) for k, v in data.get("patterns", {}).items()},
            dictionaries={cat(k): tuple(v) for k, v in data.get("dictionaries", {}).items()},
            description=data.get("description", "rule tagger"),
        )


def tag_direct(corpus: Corpus, rules: TaggerRules) -> list[DirectTag]:
    """All maximal non-overlapping matches of the rule set.

    Overlaps resolve by longest match, then earliest start, then category
    order as declared in IdentifierCategory.
    """
    compiled = rules.compiled()
    tags: list[DirectTag] = []
    for doc in corpus.documents:
        words = tokenize(doc.text)
        candidates: set[tuple[int, int, IdentifierCategory]] = set()
        for cat, pats in compiled.items():
            for pat in pats:
                for m in pat.finditer(doc.text):
                    covered = [
                        w.word_index for w in words if w.start < m.end() and w.end > m.start()
                    ]
                    if covered:
                        candidates.add((covered[0], covered[-1] + 1, cat))
        for cat, phrases in rules.dictionaries.items():
            for phrase in phrases:
                parts = tuple(phrase.casefold().split())
                if not parts:
                    continue
                for i in range(len(words) - len(parts) + 1):
                    if all(words[i + k].normal == parts[k] for k in range(len(parts))):
                        candidates.add((i, i + len(parts), cat))
        chosen: list[tuple[int, int, IdentifierCategory]] = []
        taken: set[int] = set()
        for start, end, cat in sorted(
            candidates, key=lambda c: (-(c[1] - c[0]), c[0], c[2].value)
        ):
            if any(i in taken for i in range(start, end)):
                continue
            taken.update(range(start, end))
            chosen.append((start, end, cat))
        tags.extend(
            DirectTag(doc.doc_id, start, end, cat)
            for start, end, cat in sorted(chosen, key=lambda c: (c[0], c[1]))
        )
    return tags


# ---------------------------------------------------------------------------
# Bipartite patient/n-gram graph
# ---------------------------------------------------------------------------


@dataclass
class BipartiteGraph:
    """Edges between patients and the n-grams used in their documents,
    with per-(patient, n-gram) occurrence counts.
    """

    n_max: int
    patients_of: dict[NGram, set[str]] = field(default_factory=dict)
    occurrences: dict[NGram, Counter] = field(default_factory=dict)

    def add(self, gram: NGram, patient_id: str, count: int = 1) -> None:
        self.patients_of.setdefault(gram, set()).add(patient_id)
        self.occurrences.setdefault(gram, Counter())[patient_id] += count

    def grams(self, order: int | None = None) -> list[NGram]:
        grams = self.patients_of.keys()
        if order is not None:
            grams = (g for g in grams if len(g) == order)
        return sorted(grams)

    def degree(self, gram: NGram) -> int:
        return len(self.patients_of.get(gram, ()))


def punctuation_normal(normal: str) -> bool:
    """True for words carrying no letter or digit (single punctuation chars)."""
    return not any(c.isalnum() for c in normal)


def filtered_view(normals: Seq[str]) -> tuple[list[str], list[int]]:
    """Non-punctuation normals and their indices in the raw word sequence."""
    kept, idx = [], []
    for i, w in enumerate(normals):
        if not punctuation_normal(w):
            kept.append(w)
            idx.append(i)
    return kept, idx


def doc_ngrams(normals: Seq[str], n_max: int) -> Counter:
    """Counter of all n-gram occurrences of orders 1..n_max in one document.

    Order 1 includes punctuation words; orders >= 2 slide over the
    punctuation-filtered sequence.
    """
    counts: Counter[NGram] = Counter()
    for w in normals:
        counts[(w,)] += 1
    if n_max >= 2:
        kept, _ = filtered_view(normals)
        for n in range(2, n_max + 1):
            for i in range(len(kept) - n + 1):
                counts[tuple(kept[i : i + n])] += 1
    return counts


def build_bipartite_graph(corpus: Corpus, n_max: int) -> BipartiteGraph:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    graph = BipartiteGraph(n_max=n_max)
    for doc in corpus.documents:
        normals = [w.normal for w in tokenize(doc.text)]
        for gram, count in doc_ngrams(normals, n_max).items():
            graph.add(gram, doc.patient_id, count)
    return graph


def indirect_identifiers(graph: BipartiteGraph, k: int) -> set[NGram]:
    """Every stored n-gram used by fewer than k patients."""
    if k < 2:
        raise ValueError("k must be >= 2")
    return {g for g, pats in graph.patients_of.items() if len(pats) < k}


# ---------------------------------------------------------------------------
# Blacklist
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Blacklist:
    """Normalized n-grams flagged direct and/or indirect."""

    k: int
    n_max: int
    tagger: str
    flags: Mapping[NGram, tuple[bool, bool]]  # gram -> (direct, indirect)

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        for gram, (direct, indirect) in self.flags.items():
            if not (direct or indirect):
                raise ValueError(f"entry without any flag: {gram}")
            if not 1 <= len(gram) <= self.n_max:
                raise ValueError(f"entry order out of range: {gram}")

    def __contains__(self, gram: NGram) -> bool:
        return gram in self.flags

    def __len__(self) -> int:
        return len(self.flags)

    def entries(self, order: int | None = None) -> list[NGram]:
        grams = self.flags.keys()
        if order is not None:
            grams = (g for g in grams if len(g) == order)
        return sorted(grams)

    def is_direct(self, gram: NGram) -> bool:
        return self.flags.get(gram, (False, False))[0]

    def is_indirect(self, gram: NGram) -> bool:
        return self.flags.get(gram, (False, False))[1]

    def serialize(self) -> str:
        lines = [f"#\tk={self.k}\tn_max={self.n_max}\ttagger={self.tagger}"]
        for gram in self.entries():
            d, ind = self.flags[gram]
            lines.append(f"{' '.join(gram)}\t{int(d)}\t{int(ind)}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def parse(cls, text: str) -> "Blacklist":
        lines = [l for l in text.split("\n") if l]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("blacklist file missing header line")
        header = dict(
            part.split("=", 1) for part in lines[0].split("\t")[1:] if "=" in part
        )
        flags: dict[NGram, tuple[bool, bool]] = {}
        for line in lines[1:]:
            gram_str, d, ind = line.split("\t")
            flags[tuple(gram_str.split(" "))] = (d == "1", ind == "1")
        return cls(
            k=int(header["k"]),
            n_max=int(header["n_max"]),
            tagger=header.get("tagger", ""),
            flags=flags,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Blacklist":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def build_blacklist(
    tags: Iterable[DirectTag],
    indirect: Iterable[NGram],
    corpus: Corpus,
    k: int,
    n_max: int,
    tagger_description: str = "rule tagger",
) -> Blacklist:
    """Union the tagger output and the indirect set into one blacklist.

    Every word covered by a tag is blacklisted individually; a multi-word tag
    additionally contributes the full covered n-gram (punctuation-filtered)
    when its order fits under n_max. An entry may carry both flags.
    """
    direct_grams: set[NGram] = set()
    words_by_doc: dict[str, list[Word]] = {}
    for tag in tags:
        words = words_by_doc.setdefault(tag.doc_id, tokenize(corpus.document(tag.doc_id).text))
        if tag.end_word > len(words):
            raise ValueError(f"tag range beyond document words: {tag}")
        covered = words[tag.start_word : tag.end_word]
        for w in covered:
            direct_grams.add((w.normal,))
        full = tuple(w.normal for w in covered if not w.is_punctuation)
        if 2 <= len(full) <= n_max:
            direct_grams.add(full)
    flags: dict[NGram, tuple[bool, bool]] = {}
    for gram in direct_grams:
        flags[gram] = (True, False)
    for gram in indirect:
        d, _ = flags.get(gram, (False, False))
        flags[gram] = (d, True)
    return Blacklist(k=k, n_max=n_max, tagger=tagger_description, flags=flags)


# ---------------------------------------------------------------------------
# Blacklist matching against word sequences
# ---------------------------------------------------------------------------


def entry_occurrences(
    blacklist: Blacklist, normals: Seq[str]
) -> dict[NGram, list[tuple[int, int]]]:
    """Occurrences of blacklist entries in one word sequence.

    Returns half-open raw word index spans. Orders >= 2 are matched over the
    punctuation-filtered sequence; the span covers the raw range from first
    to last matched word.
    """
    found: dict[NGram, list[tuple[int, int]]] = defaultdict(list)
    for i, w in enumerate(normals):
        if (w,) in blacklist:
            found[(w,)].append((i, i + 1))
    if blacklist.n_max >= 2:
        kept, raw_idx = filtered_view(normals)
        for n in range(2, blacklist.n_max + 1):
            for i in range(len(kept) - n + 1):
                gram = tuple(kept[i : i + n])
                if gram in blacklist:
                    found[gram].append((raw_idx[i], raw_idx[i + n - 1] + 1))
    return dict(found)


def cover_words(blacklist: Blacklist, normals: Seq[str]) -> list[tuple[bool, bool]]:
    """Per-word (direct, indirect) coverage flags.

    A word is covered when it is itself an order-1 entry or lies on an
    occurrence of a higher-order entry (punctuation between the matched words
    stays uncovered).
    """
    flags = [[False, False] for _ in normals]
    for i, w in enumerate(normals):
        entry = (w,)
        if entry in blacklist:
            d, ind = blacklist.flags[entry]
            flags[i][0] |= d
            flags[i][1] |= ind
    if blacklist.n_max >= 2:
        kept, raw_idx = filtered_view(normals)
        for n in range(2, blacklist.n_max + 1):
            for i in range(len(kept) - n + 1):
                gram = tuple(kept[i : i + n])
                if gram in blacklist:
                    d, ind = blacklist.flags[gram]
                    for j in range(i, i + n):
                        flags[raw_idx[j]][0] |= d
                        flags[raw_idx[j]][1] |= ind
    return [(d, ind) for d, ind in flags]


def pseudonymize(corpus: Corpus, tags: Iterable[DirectTag]) -> Corpus:
    """Replace every tagged word with the surface "X", one per covered word;
    untagged text is byte-identical and document structure is unchanged.
    """
    covered: dict[str, set[int]] = defaultdict(set)
    for tag in tags:
        covered[tag.doc_id].update(range(tag.start_word, tag.end_word))
    docs = []
    for doc in corpus.documents:
        hit = covered.get(doc.doc_id)
        if not hit:
            docs.append(doc)
            continue
        words = tokenize(doc.text)
        pieces = []
        cursor = 0
        for w in words:
            pieces.append(doc.text[cursor : w.start])
            pieces.append("X" if w.word_index in hit else w.surface)
            cursor = w.end
        pieces.append(doc.text[cursor:])
        docs.append(Document(doc.doc_id, doc.patient_id, "".join(pieces)))
    return Corpus.from_documents(docs)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

PER_PATIENT_HEADER = ["patient_id", "direct_identifiers", "indirect_identifiers", "total_words"]
DEGREE_CDF_HEADER = ["degree", "distinct_word_fraction", "word_occurrence_fraction"]


@dataclass(frozen=True)
class StatsReport:
    """Tabular identifier statistics: per-patient counts and the cumulative
    distribution of patient-sharing degree over distinct words and over word
    occurrences.
    """

    per_patient: tuple[tuple[str, int, int, int], ...]
    degree_cdf: tuple[tuple[int, float, float], ...]

    def per_patient_csv(self) -> str:
        lines = [",".join(PER_PATIENT_HEADER)]
        lines += [f"{p},{d},{i},{w}" for p, d, i, w in self.per_patient]
        return "\n".join(lines) + "\n"

    def degree_cdf_csv(self) -> str:
        lines = [",".join(DEGREE_CDF_HEADER)]
        lines += [f"{d},{df:.10g},{of:.10g}" for d, df, of in self.degree_cdf]
        return "\n".join(lines) + "\n"


def identifier_stats(corpus: Corpus, blacklist: Blacklist) -> StatsReport:
    per_patient = []
    for patient in corpus.patients:
        direct_entries: set[NGram] = set()
        indirect_entries: set[NGram] = set()
        total_words = 0
        for doc in corpus.docs_of(patient):
            normals = [w.normal for w in tokenize(doc.text)]
            total_words += len(normals)
            for gram in entry_occurrences(blacklist, normals):
                d, ind = blacklist.flags[gram]
                if d:
                    direct_entries.add(gram)
                if ind:
                    indirect_entries.add(gram)
        per_patient.append((patient, len(direct_entries), len(indirect_entries), total_words))

    patients_of_word: dict[str, set[str]] = defaultdict(set)
    occurrences: Counter[str] = Counter()
    for doc in corpus.documents:
        for w in tokenize(doc.text):
            patients_of_word[w.normal].add(doc.patient_id)
            occurrences[w.normal] += 1
    degree_rows: list[tuple[int, float, float]] = []
    if patients_of_word:
        total_distinct = len(patients_of_word)
        total_occ = sum(occurrences.values())
        max_degree = len(corpus.patients)
        cum_distinct = 0
        cum_occ = 0
        by_degree: dict[int, list[str]] = defaultdict(list)
        for word, pats in patients_of_word.items():
            by_degree[len(pats)].append(word)
        for degree in range(1, max_degree + 1):
            for word in by_degree.get(degree, ()):
                cum_distinct += 1
                cum_occ += occurrences[word]
            degree_rows.append((degree, cum_distinct / total_distinct, cum_occ / total_occ))
    return StatsReport(per_patient=tuple(per_patient), degree_cdf=tuple(degree_rows))


# ---------------------------------------------------------------------------
# External tagger exchange
# ---------------------------------------------------------------------------

ANNOTATION_HEADER = ["doc_id", "start_word", "end_word", "category"]


def export_annotations(tags: Iterable[DirectTag], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for tag in sorted(tags, key=lambda t: (t.doc_id, t.start_word, t.end_word)):
            writer.writerow([tag.doc_id, tag.start_word, tag.end_word, tag.category.name])


def import_annotations(path: str | Path) -> list[DirectTag]:
    tags = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ANNOTATION_HEADER:
            raise ValueError(f"annotation file must start with header {ANNOTATION_HEADER}")
        for row in reader:
            if not row:
                continue
            doc_id, start, end, cat = row
            try:
                category = IdentifierCategory[cat]
            except KeyError as exc:
                raise ValueError(f"unknown category in annotations: {cat!r}") from exc
            tags.append(DirectTag(doc_id, int(start), int(end), category))
    return tags
