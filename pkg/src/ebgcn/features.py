"""Node features: TF-IDF over a capped vocabulary, or precomputed embeddings."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cascade import Dataset

log = logging.getLogger(__name__)

MAX_TERMS = 5000
_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on anything non-alphanumeric, drop 1-character tokens."""
    return [tok for tok in _TOKEN.findall(text.lower()) if len(tok) >= 2]


def smoothed_idf(df: int, n_docs: int) -> float:
    return math.log((1 + n_docs) / (1 + df)) + 1.0


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    df: tuple[int, ...]
    n_docs: int

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")
        if len(self.df) != len(self.terms):
            raise ValueError("df must have one entry per term")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})
        object.__setattr__(self, "_idf", np.array([smoothed_idf(d, self.n_docs) for d in self.df]))

    def __len__(self):
        return len(self.terms)

    @property
    def index(self) -> dict[str, int]:
        return self._index

    @property
    def idf(self) -> np.ndarray:
        return self._idf

    def to_json(self) -> str:
        return json.dumps({"terms": list(self.terms), "df": list(self.df), "N": self.n_docs})

    @classmethod
    def from_json(cls, s: str) -> Vocabulary:
        d = json.loads(s)
        return cls(tuple(d["terms"]), tuple(int(x) for x in d["df"]), int(d["N"]))


def fit_vocabulary(texts: Iterable[str], max_terms: int = MAX_TERMS) -> Vocabulary:
    """Keep the ``max_terms`` terms with the highest per-document tf-idf.

    A term's score is its largest raw-count tf times smoothed idf over all
    documents; ties go to the lexicographically smaller term. Columns are
    ordered lexicographically.
    """
    docs = [Counter(tokenize(t)) for t in texts]
    n_docs = len(docs)
    if not any(docs):
        raise ValueError("cannot fit a vocabulary: every text is empty after tokenization")
    df: Counter = Counter()
    max_tf: dict[str, int] = {}
    for doc in docs:
        df.update(doc.keys())
        for term, cnt in doc.items():
            if cnt > max_tf.get(term, 0):
                max_tf[term] = cnt
    scored = sorted(max_tf, key=lambda t: (-max_tf[t] * smoothed_idf(df[t], n_docs), t))
    keep = sorted(scored[:max_terms])
    return Vocabulary(tuple(keep), tuple(df[t] for t in keep), n_docs)


def transform(vocab: Vocabulary, texts: Sequence[str], dtype=np.float64) -> np.ndarray:
    """L2-normalized tf-idf rows; empty or out-of-vocabulary texts give zero rows."""
    out = np.zeros((len(texts), len(vocab)), dtype=dtype)
    index = vocab.index
    idf = vocab.idf
    for i, text in enumerate(texts):
        for term, cnt in Counter(tokenize(text)).items():
            j = index.get(term)
            if j is not None:
                out[i, j] = cnt * idf[j]
        norm = np.linalg.norm(out[i])
        if norm > 0:
            out[i] /= norm
    return out


def claim_features(vocab: Vocabulary, dataset: Dataset, dtype=np.float64) -> list[np.ndarray]:
    return [transform(vocab, [nd.text for nd in c.nodes], dtype) for c in dataset.claims]


def read_embeddings(path) -> dict[str, np.ndarray]:
    """Parse ``uid<TAB>v1 v2 ... vd`` lines; all vectors must share one dimension."""
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'uid<TAB>values'")
            uid, values = line.split("\t", 1)
            try:
                vec = np.array([float(v) for v in values.split()], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValueError(f"{path}:{lineno}: vector for {uid!r} has dimension {vec.size}, expected {dim}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{lineno}: non-finite vector entry")
            table[uid] = vec
    if dim is None:
        raise ValueError(f"{path}: no embeddings")
    return table


def write_embeddings(path, table: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, vec in table.items():
            fh.write(uid + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def load_embeddings(path, dataset: Dataset, dtype=np.float64) -> tuple[list[np.ndarray], int]:
    """Per-claim feature matrices from an embedding file.

    Returns the matrices (rows in node order) and the number of nodes whose
    uid had no vector; those rows are zero.
    """
    table = read_embeddings(path)
    dim = next(iter(table.values())).size
    missing = 0
    mats = []
    for claim in dataset.claims:
        m = np.zeros((claim.n, dim), dtype=dtype)
        for i, nd in enumerate(claim.nodes):
            vec = table.get(nd.uid)
            if vec is None:
                missing += 1
            else:
                m[i] = vec
        mats.append(m)
    if missing:
        log.warning("%d node(s) had no embedding; using zero rows", missing)
    return mats, missing
