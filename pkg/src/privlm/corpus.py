"""Word-level corpus handling: ingestion, tokenization, vocabulary, segmentation.

Documents are keyed by patient so downstream identifier analysis can reason
about which patient uses which words. Tokenization is a fixed Unicode-aware
splitter (letter/digit runs with internal apostrophes, single punctuation
characters); every stage of the pipeline sees the same words.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

PAD_ID, MASK_ID, UNK_ID, BOS_ID = 0, 1, 2, 3
PAD_TOKEN, MASK_TOKEN, UNK_TOKEN, BOS_TOKEN = "<pad>", "<mask>", "<unk>", "<bos>"
SPECIAL_TOKENS = (PAD_TOKEN, MASK_TOKEN, UNK_TOKEN, BOS_TOKEN)
NUM_SPECIALS = len(SPECIAL_TOKENS)

_APOSTROPHES = ("'", "’")


class IngestError(ValueError):
    """A corpus source file or directory tree violates the record contract."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    patient_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")


@dataclass(frozen=True)
class Word:
    """One token of a document: surface form, case-folded form, char span."""

    surface: str
    normal: str
    start: int
    end: int  # half-open char offset within the document text
    word_index: int

    @property
    def is_punctuation(self) -> bool:
        return not any(c.isalnum() for c in self.normal)


@dataclass(frozen=True)
class Corpus:
    """Documents in stable doc_id order plus a patient index."""

    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for doc in self.documents:
            if doc.doc_id in seen:
                raise IngestError(f"duplicate doc_id: {doc.doc_id!r}")
            seen.add(doc.doc_id)
        ordered = tuple(sorted(self.documents, key=lambda d: d.doc_id))
        object.__setattr__(self, "documents", ordered)

    @classmethod
    def from_documents(cls, docs: Iterable[Document]) -> "Corpus":
        return cls(tuple(docs))

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def patients(self) -> tuple[str, ...]:
        return tuple(sorted({d.patient_id for d in self.documents}))

    def docs_of(self, patient_id: str) -> tuple[Document, ...]:
        return tuple(d for d in self.documents if d.patient_id == patient_id)

    def document(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise KeyError(doc_id)

    def restrict(self, patients: Iterable[str]) -> "Corpus":
        keep = set(patients)
        return Corpus(tuple(d for d in self.documents if d.patient_id in keep))


def tokenize(text: str) -> list[Word]:
    """Split text into words: maximal letter/digit runs (apostrophes joining
    two alphanumeric characters stay inside the run), single punctuation
    characters, no whitespace words. Spans are half-open char offsets, so the
    original non-whitespace text is reconstructible.
    """
    words: list[Word] = []
    n = len(text)
    i = 0
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c.isalnum():
            j = i + 1
            while j < n:
                if text[j].isalnum():
                    j += 1
                elif (
                    text[j] in _APOSTROPHES
                    and j + 1 < n
                    and text[j + 1].isalnum()
                    and text[j - 1].isalnum()
                ):
                    j += 1
                else:
                    break
            surface = text[i:j]
        else:
            j = i + 1
            surface = text[i:j]
        words.append(
            Word(
                surface=surface,
                normal=surface.casefold(),
                start=i,
                end=j,
                word_index=len(words),
            )
        )
        i = j
    return words


def tokenize_document(doc: Document) -> list[Word]:
    return tokenize(doc.text)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def ingest_corpus(path: str | Path, fmt: str = "records") -> Corpus:
    """Read a corpus from disk.

    fmt="records": one JSON object per line with doc_id, patient_id, text.
    fmt="directory": tree shaped <root>/<patient_id>/<doc_id>.txt.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"corpus source does not exist: {path}")
    if fmt == "records":
        return _ingest_records(path)
    if fmt == "directory":
        return _ingest_directory(path)
    raise IngestError(f"unknown corpus format: {fmt!r}")


def _ingest_records(path: Path) -> Corpus:
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise IngestError(f"{path}:{lineno}: record is not an object")
            for key in ("doc_id", "patient_id", "text"):
                if key not in record:
                    raise IngestError(f"{path}:{lineno}: record missing field {key!r}")
                if not isinstance(record[key], str):
                    raise IngestError(f"{path}:{lineno}: field {key!r} is not a string")
            if not record["doc_id"] or not record["patient_id"]:
                raise IngestError(f"{path}:{lineno}: doc_id and patient_id must be non-empty")
            docs.append(Document(record["doc_id"], record["patient_id"], record["text"]))
    return Corpus.from_documents(docs)


def _ingest_directory(root: Path) -> Corpus:
    docs: list[Document] = []
    for patient_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for doc_path in sorted(patient_dir.glob("*.txt")):
            docs.append(
                Document(doc_path.stem, patient_dir.name, doc_path.read_text(encoding="utf-8"))
            )
    return Corpus.from_documents(docs)


def write_records(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus in the line-delimited record format."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            fh.write(
                json.dumps(
                    {"doc_id": doc.doc_id, "patient_id": doc.patient_id, "text": doc.text},
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection. Ids 0..3 are reserved (PAD, MASK, UNK, BOS);
    corpus token at index i gets id 4 + i.
    """

    tokens: tuple[str, ...]
    _ids: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in SPECIAL_TOKENS:
                raise ValueError(f"token collides with a reserved special: {tok!r}")
            if tok in ids:
                raise ValueError(f"duplicate vocabulary token: {tok!r}")
            ids[tok] = NUM_SPECIALS + i
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return NUM_SPECIALS + len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if 0 <= token_id < NUM_SPECIALS:
            return SPECIAL_TOKENS[token_id]
        idx = token_id - NUM_SPECIALS
        if 0 <= idx < len(self.tokens):
            return self.tokens[idx]
        raise KeyError(token_id)

    def is_special(self, token_id: int) -> bool:
        return 0 <= token_id < NUM_SPECIALS

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
        return cls(tokens)


def build_vocabulary(
    corpus: Corpus, min_count: int = 1, extra_tokens: Iterable[str] = ()
) -> Vocabulary:
    """Vocabulary over normalized words with frequency >= min_count.

    Id assignment is deterministic: frequency descending, then lexicographic.
    extra_tokens not already present are appended in sorted order (used by the
    pipeline to guarantee the pseudonymization replacement token exists).
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for doc in corpus.documents:
        counts.update(w.normal for w in tokenize(doc.text))
    kept = [tok for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    for tok in sorted(set(extra_tokens)):
        if tok not in kept:
            kept.append(tok)
    return Vocabulary(tuple(kept))


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sequence:
    """A BOS-prefixed window of token ids over one document.

    word_indices maps each token position to the word ordinal in the source
    document (-1 at BOS); normals carries the normalized word per position
    ("" at BOS) so plan construction can match blacklist entries even for
    words the vocabulary mapped to UNK.
    """

    doc_id: str
    patient_id: str
    token_ids: tuple[int, ...]
    word_indices: tuple[int, ...]
    normals: tuple[str, ...]

    def __post_init__(self) -> None:
        if not (len(self.token_ids) == len(self.word_indices) == len(self.normals)):
            raise ValueError("sequence fields must be aligned")
        if not self.token_ids or self.token_ids[0] != BOS_ID:
            raise ValueError("sequence must start with BOS")

    def __len__(self) -> int:
        return len(self.token_ids)


def segment(
    doc: Document, vocab: Vocabulary, context_length: int, stride: int
) -> list[Sequence]:
    """Cut a document into BOS-prefixed sliding windows of encoded words.

    Each window holds at most context_length - 1 words after the BOS token;
    the last window may be shorter; windows never cross document boundaries.
    """
    if context_length < 2:
        raise ValueError("context_length must be >= 2")
    if not (1 <= stride <= context_length):
        raise ValueError("stride must satisfy 1 <= stride <= context_length")
    words = tokenize(doc.text)
    capacity = context_length - 1
    sequences: list[Sequence] = []
    start = 0
    while start < len(words):
        window = words[start : start + capacity]
        sequences.append(
            Sequence(
                doc_id=doc.doc_id,
                patient_id=doc.patient_id,
                token_ids=(BOS_ID,) + tuple(vocab.id_of(w.normal) for w in window),
                word_indices=(-1,) + tuple(w.word_index for w in window),
                normals=("",) + tuple(w.normal for w in window),
            )
        )
        if start + capacity >= len(words):
            break
        start += stride
    return sequences


def segment_corpus(
    corpus: Corpus, vocab: Vocabulary, context_length: int, stride: int
) -> list[Sequence]:
    """Segment every document, in stable document order."""
    out: list[Sequence] = []
    for doc in corpus.documents:
        out.extend(segment(doc, vocab, context_length, stride))
    return out
