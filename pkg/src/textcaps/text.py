"""Document tokenization, embedding tables, and fixed-shape input encoding.

Documents are split into a sentence/word grid, truncated to the first
``n_s`` sentences and ``n_w`` words per sentence, and embedded into a
dense block with an accompanying padding mask. Out-of-vocabulary tokens
map to the table's OOV vector (all zeros by default) so they stay
gradient-inert.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .tensor import Tensor

SENTENCE_TERMINATORS = ".!?;"


class DatasetError(ValueError):
    """Base class for dataset / embedding file failures."""


class InvalidEncodingError(DatasetError):
    pass


class MalformedLineError(DatasetError):
    pass


class BadLabelError(DatasetError):
    pass


class EmbeddingFileError(DatasetError):
    pass


class RaggedLineError(EmbeddingFileError):
    pass


class UnparseableNumberError(EmbeddingFileError):
    pass


class EmptyEmbeddingsError(EmbeddingFileError):
    pass


@dataclass
class Document:
    raw_text: str
    sentences: List[List[str]]
    label: int

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise BadLabelError(f"label must be 0 or 1, got {self.label!r}")


def _strip_edge_punct(token: str) -> str:
    start, stop = 0, len(token)
    while start < stop and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while stop > start and unicodedata.category(token[stop - 1]).startswith("P"):
        stop -= 1
    return token[start:stop]


def tokenize(raw_text: str) -> List[List[str]]:
    """Split text into sentences of word tokens.

    Sentences break at '.', '!', '?', ';' (the terminator is consumed).
    Within a sentence the text is lowercased, words are split on
    whitespace runs, punctuation is stripped from token edges, and empty
    sentences are dropped. Diacritics are preserved.
    """
    sentences: List[List[str]] = []
    segment_tokens: List[str] = []
    current: List[str] = []

    def flush_segment() -> None:
        if segment_tokens:
            sentences.append(list(segment_tokens))
            segment_tokens.clear()

    text = raw_text.lower()
    for ch in text + SENTENCE_TERMINATORS[0]:
        if ch in SENTENCE_TERMINATORS or ch.isspace():
            if current:
                token = _strip_edge_punct("".join(current))
                if token:
                    segment_tokens.append(token)
                current.clear()
            if ch in SENTENCE_TERMINATORS:
                flush_segment()
        else:
            current.append(ch)
    return sentences


@dataclass
class EmbeddingTable:
    """Token -> fixed-length vector map with an out-of-vocabulary fallback."""

    dimension: int
    entries: Dict[str, np.ndarray]
    oov_vector: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.oov_vector is None:
            self.oov_vector = np.zeros(self.dimension)

    def lookup(self, token: str) -> np.ndarray:
        return self.entries.get(token, self.oov_vector)

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def load_embeddings(path) -> EmbeddingTable:
    """Load a word2vec-text-format embedding table.

    The file may start with a "vocab_count dimension" header line; otherwise
    the dimension is inferred from the first data line. Duplicate tokens keep
    their first occurrence and the OOV vector is all zeros.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError as exc:
        raise InvalidEncodingError(f"{path}: not valid UTF-8: {exc}") from exc

    entries: Dict[str, np.ndarray] = {}
    dimension = None
    first_data = True
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split(" ")
        if first_data and len(fields) == 2:
            try:
                int(fields[0]), int(fields[1])
            except ValueError:
                pass
            else:
                dimension = int(fields[1])
                first_data = False
                continue
        token, raw_values = fields[0], fields[1:]
        try:
            vector = np.array([float(v) for v in raw_values])
        except ValueError as exc:
            raise UnparseableNumberError(
                f"line {lineno}: cannot parse embedding values: {exc}") from exc
        if dimension is None:
            dimension = len(raw_values)
            if dimension == 0:
                raise RaggedLineError(f"line {lineno}: token without values")
        if len(raw_values) != dimension:
            raise RaggedLineError(
                f"line {lineno}: expected {dimension} values, found {len(raw_values)}")
        first_data = False
        if token not in entries:
            entries[token] = vector
    if dimension is None or not entries:
        raise EmptyEmbeddingsError(f"{path}: no embedding vectors found")
    return EmbeddingTable(dimension=dimension, entries=entries)


@dataclass
class EncodedDoc:
    """Embedded n_s x n_w x E_d block with its padding mask."""

    block: Tensor
    mask: Tensor
    label: int


def encode_document(doc: Document, table: EmbeddingTable, n_s: int, n_w: int) -> EncodedDoc:
    """Embed a document into a fixed n_s x n_w x E_d block.

    Keeps the first n_s sentences and first n_w words per sentence; missing
    positions are zero vectors with mask 0.
    """
    if n_s < 1 or n_w < 1:
        raise ValueError(f"n_s and n_w must be >= 1, got {n_s}, {n_w}")
    block = np.zeros((n_s, n_w, table.dimension))
    mask = np.zeros((n_s, n_w))
    for si, sentence in enumerate(doc.sentences[:n_s]):
        for wi, token in enumerate(sentence[:n_w]):
            block[si, wi] = table.lookup(token)
            mask[si, wi] = 1.0
    return EncodedDoc(block=Tensor(block), mask=Tensor(mask), label=doc.label)


def encode_batch(
    docs: Sequence[Document],
    table: EmbeddingTable,
    n_s: int,
    n_w: int,
    threads: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Encode documents into a (batch, n_s * n_w, E_d) block plus labels.

    The grid is flattened in reading order; results are identical for any
    thread count because documents are independent.
    """
    t = n_s * n_w

    def one(doc: Document) -> np.ndarray:
        return encode_document(doc, table, n_s, n_w).block.values.reshape(t, table.dimension)

    if threads > 1 and len(docs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(one, docs))
    else:
        blocks = [one(doc) for doc in docs]
    labels = np.array([doc.label for doc in docs], dtype=np.int64)
    if not blocks:
        return np.zeros((0, t, table.dimension)), labels
    return np.stack(blocks), labels


def read_dataset(path) -> List[Document]:
    """Read a JSON Lines dataset with "text" (string) and "label" (0/1) fields."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except UnicodeDecodeError as exc:
        raise InvalidEncodingError(f"{path}: not valid UTF-8: {exc}") from exc

    docs: List[Document] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLineError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
            raise MalformedLineError(
                f"line {lineno}: expected an object with 'text' and 'label'")
        text, label = obj["text"], obj["label"]
        if not isinstance(text, str):
            raise MalformedLineError(f"line {lineno}: 'text' must be a string")
        if not isinstance(label, int) or isinstance(label, bool) or label not in (0, 1):
            raise BadLabelError(f"line {lineno}: 'label' must be 0 or 1, got {label!r}")
        docs.append(Document(raw_text=text, sentences=tokenize(text), label=label))
    return docs


def render_document(sentences: Sequence[Sequence[str]]) -> str:
    """Serialize a sentence/token grid back to dataset text."""
    return " ".join(" ".join(sentence) + "." for sentence in sentences)


def write_dataset(path, docs: Sequence[Document]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps({"text": doc.raw_text, "label": doc.label},
                                ensure_ascii=False) + "\n")
