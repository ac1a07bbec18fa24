"""Data model and ingestion for labeled sets of user writings.

A corpus file is UTF-8 JSON lines, one user per line:

    {"user_id": "u1", "label": "RISK", "writings": ["first post", ...]}

Labels are ``RISK`` (positive) and ``NO_RISK``; ``label`` may be omitted
for files that only feed prediction. The synthetic generator emits the
same format plus a sidecar JSON file naming the planted marker token, so
ground truth stays recoverable without the real (restricted) data.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

RISK = 1
NO_RISK = 0
LABEL_NAMES = {RISK: "RISK", NO_RISK: "NO_RISK"}
LABEL_VALUES = {"RISK": RISK, "NO_RISK": NO_RISK}

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusFormatError(ValueError):
    """A corpus file violated the one-JSON-record-per-line contract."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace with punctuation separated out."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class RawRecord:
    """One user as loaded from disk: label plus raw writing strings."""

    user_id: str
    label: int | None
    texts: list[str]


@dataclass
class UserRecord:
    """A labeled set of writings in token-id form; the unit of classification."""

    user_id: str
    label: int | None
    writings: list[list[int]]

    @property
    def is_degenerate(self) -> bool:
        # No usable writings: excluded from training, scored NO_RISK at eval.
        return len(self.writings) == 0


@dataclass
class SplitSpec:
    """Stratified train/validation/test proportions plus the shuffle seed."""

    train_ratio: float = 0.9
    validation_fraction: float = 0.1
    seed: int = 0


def load_corpus(path, require_label: bool = True) -> list[RawRecord]:
    """Parse a JSON-lines corpus file, preserving file order.

    Malformed lines and unknown labels raise :class:`CorpusFormatError`
    naming the offending line number (1-based).
    """
    records: list[RawRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON record ({err.msg})") from err
            if not isinstance(obj, dict) or "user_id" not in obj or "writings" not in obj:
                raise CorpusFormatError(f"{path}:{lineno}: record needs 'user_id' and 'writings'")
            label_name = obj.get("label")
            if label_name is None:
                if require_label:
                    raise CorpusFormatError(f"{path}:{lineno}: missing 'label'")
                label = None
            else:
                if label_name not in LABEL_VALUES:
                    raise CorpusFormatError(f"{path}:{lineno}: unknown label {label_name!r}")
                label = LABEL_VALUES[label_name]
            writings = obj["writings"]
            if not isinstance(writings, list) or not all(isinstance(w, str) for w in writings):
                raise CorpusFormatError(f"{path}:{lineno}: 'writings' must be an array of strings")
            records.append(RawRecord(str(obj["user_id"]), label, list(writings)))
    return records


def save_corpus(records: Iterable[RawRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict = {"user_id": rec.user_id}
            if rec.label is not None:
                obj["label"] = LABEL_NAMES[rec.label]
            obj["writings"] = rec.texts
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


class Vocab:
    """Dense 0-based token ids with reserved PAD and UNK entries."""

    def __init__(self, tokens: Sequence[str], counts: Sequence[int] | None = None):
        self.id_to_token: list[str] = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts: list[int] = [0, 0] + (list(counts) if counts is not None else [0] * len(tokens))

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def n_reserved(self) -> int:
        return len(RESERVED_TOKENS)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        unk = UNK_ID
        lookup = self.token_to_id
        return [lookup.get(t, unk) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def build_vocab(records: Iterable[RawRecord], max_size: int = 40000) -> Vocab:
    """Keep the ``max_size`` most frequent tokens; ties break by first occurrence.

    Text is lowercased and punctuation-split by :func:`tokenize` before
    counting. Everything outside the kept set encodes to UNK.
    """
    if max_size < 1:
        raise ValueError("max_size must be at least 1")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    position = 0
    seen_any = False
    for rec in records:
        seen_any = True
        for text in rec.texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
                if tok not in first_seen:
                    first_seen[tok] = position
                    position += 1
    if not seen_any:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))[:max_size]
    return Vocab(ranked, [counts[t] for t in ranked])


def encode_corpus(records: Iterable[RawRecord], vocab: Vocab) -> list[UserRecord]:
    """Tokenize and id-encode every writing; empty writings are dropped.

    A user whose writings all tokenize empty comes out degenerate rather
    than raising, so callers can exclude it from training explicitly.
    """
    encoded = []
    for rec in records:
        writings = [ids for text in rec.texts if (ids := vocab.encode(tokenize(text)))]
        encoded.append(UserRecord(rec.user_id, rec.label, writings))
    return encoded


def preprocess_user(
    record: UserRecord,
    max_len: int = 66,
    sample_k: int = 30,
    rng: np.random.Generator | None = None,
) -> UserRecord:
    """Trim writings to their first ``max_len`` tokens and sample at most
    ``sample_k`` distinct writings without replacement.

    Sampling is fresh on every call (pass the epoch's generator); with
    ``rng=None`` the selection is the deterministic first-``sample_k`` in
    original order, the evaluation-time convention. Degenerate records
    pass through unchanged.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if sample_k < 1:
        raise ValueError("sample_k must be at least 1")
    if record.is_degenerate:
        return record
    m = len(record.writings)
    if m <= sample_k:
        chosen = range(m)
    elif rng is None:
        chosen = range(sample_k)
    else:
        chosen = np.sort(rng.choice(m, size=sample_k, replace=False))
    return replace(record, writings=[record.writings[i][:max_len] for i in chosen])


def split_stratified(
    records: Sequence[UserRecord], spec: SplitSpec
) -> tuple[list[UserRecord], list[UserRecord], list[UserRecord]]:
    """Disjoint, exhaustive (train, validation, test) partitions that keep
    per-label proportions within one user, deterministically per seed."""
    if not 0 < spec.train_ratio < 1:
        raise ValueError("train_ratio must lie strictly between 0 and 1")
    if not 0 <= spec.validation_fraction < 1:
        raise ValueError("validation_fraction must lie in [0, 1)")
    labels = {rec.label for rec in records}
    if labels != {RISK, NO_RISK}:
        raise ValueError("stratified split needs both labels present")
    rng = np.random.default_rng(spec.seed)
    train: list[UserRecord] = []
    validation: list[UserRecord] = []
    test: list[UserRecord] = []
    for label in (RISK, NO_RISK):
        group = [rec for rec in records if rec.label == label]
        order = rng.permutation(len(group))
        n_test = round(len(group) * (1.0 - spec.train_ratio))
        n_valid = round((len(group) - n_test) * spec.validation_fraction)
        test.extend(group[i] for i in order[:n_test])
        validation.extend(group[i] for i in order[n_test : n_test + n_valid])
        train.extend(group[i] for i in order[n_test + n_valid :])
    return train, validation, test


@dataclass
class SyntheticTruth:
    """Ground-truth description for a generated corpus."""

    marker_token: str
    rule: str
    positive_user_ids: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "marker_token": self.marker_token,
                "rule": self.rule,
                "positive_user_ids": self.positive_user_ids,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "SyntheticTruth":
        obj = json.loads(text)
        return SyntheticTruth(obj["marker_token"], obj["rule"], list(obj["positive_user_ids"]))


def generate_synthetic(
    n_users: int,
    positive_fraction: float,
    marker_rate: float,
    vocab_size: int,
    rng: np.random.Generator,
    writings_range: tuple[int, int] = (10, 40),
    length_range: tuple[int, int] = (5, 15),
    marker_token: str = "xmarker",
) -> tuple[list[RawRecord], SyntheticTruth]:
    """Corpus whose labels are recoverable by marker presence.

    Each positive user's writing contains ``marker_token`` once, at a
    random position, with probability ``marker_rate``; negative users
    never contain it. The filler vocabulary is ``vocab_size`` synthetic
    words drawn uniformly. Exactly ``round(n_users * positive_fraction)``
    users are positive.
    """
    if n_users == 0:
        return [], SyntheticTruth(marker_token, "any writing contains the marker token")
    if not 0.0 < positive_fraction < 1.0:
        raise ValueError("positive_fraction must lie strictly between 0 and 1")
    if not 0.0 < marker_rate <= 1.0:
        raise ValueError("marker_rate must lie in (0, 1]")
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    words = [f"w{i:04d}" for i in range(vocab_size)]
    n_positive = round(n_users * positive_fraction)
    labels = [RISK] * n_positive + [NO_RISK] * (n_users - n_positive)
    order = rng.permutation(n_users)

    records: list[RawRecord] = []
    truth = SyntheticTruth(marker_token, "any writing contains the marker token")
    for i in range(n_users):
        label = labels[order[i]]
        user_id = f"user{i:05d}"
        n_writings = int(rng.integers(writings_range[0], writings_range[1] + 1))
        texts = []
        for _ in range(n_writings):
            length = int(rng.integers(length_range[0], length_range[1] + 1))
            tokens = [words[j] for j in rng.integers(0, vocab_size, size=length)]
            if label == RISK and rng.random() < marker_rate:
                tokens[int(rng.integers(0, length))] = marker_token
            texts.append(" ".join(tokens))
        if label == RISK:
            truth.positive_user_ids.append(user_id)
        records.append(RawRecord(user_id, label, texts))
    return records, truth


def marker_oracle(records: Sequence[RawRecord], marker_token: str) -> list[int]:
    """Label each record RISK iff any writing contains the marker token."""
    predictions = []
    for rec in records:
        hit = any(marker_token in tokenize(text) for text in rec.texts)
        predictions.append(RISK if hit else NO_RISK)
    return predictions
