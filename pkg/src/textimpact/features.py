"""Simple text statistics: counts, lengths and type-token ratio.

Token rule: lowercase the text, split on Unicode whitespace, strip leading and
trailing ASCII punctuation (``string.punctuation``) from each piece and drop
pieces that become empty. Sentences are the non-empty segments between runs
of ``.``, ``!`` or ``?``; a text without terminal punctuation is one sentence.
"""

from __future__ import annotations

import csv
import re
import string
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import DuplicateId, EmptyText, TextImpactError

PREFIX = "txt_"
_SENTENCE_END = re.compile(r"[.!?]+")


@dataclass(frozen=True)
class TextFeatures:
    word_count: int
    sentence_count: int
    words_per_sentence: float
    avg_word_length: float
    type_token_ratio: float

    def as_columns(self) -> dict[str, float]:
        return {PREFIX + k: v for k, v in asdict(self).items()}


FEATURE_COLUMNS = tuple(PREFIX + name for name in TextFeatures.__dataclass_fields__)


def tokenize(text: str) -> list[str]:
    tokens = (piece.strip(string.punctuation) for piece in text.lower().split())
    return [t for t in tokens if t]


def count_sentences(text: str) -> int:
    segments = [s for s in _SENTENCE_END.split(text) if tokenize(s)]
    return max(1, len(segments))


def extract_features(text: str) -> TextFeatures:
    if not text or not text.strip():
        raise EmptyText("text is empty")
    tokens = tokenize(text)
    if not tokens:
        raise EmptyText("text contains no word tokens")
    n_sent = count_sentences(text)
    return TextFeatures(
        word_count=len(tokens),
        sentence_count=n_sent,
        words_per_sentence=len(tokens) / n_sent,
        avg_word_length=sum(map(len, tokens)) / len(tokens),
        type_token_ratio=len(set(tokens)) / len(tokens),
    )


def extract_corpus(
    source: str | Path,
    id_rule: str = "stem",
    id_column: str = "id",
    text_column: str = "text",
    pattern: str = "*.txt",
) -> list[tuple[str, TextFeatures]]:
    """Features for every document under ``source``, sorted by id.

    A directory yields one document per file matching ``pattern`` with the id
    taken from the file stem (``id_rule="stem"``) or full name (``"name"``).
    A delimited file yields one document per row from ``id_column`` and
    ``text_column``.
    """
    source = Path(source)
    docs: dict[str, str] = {}
    try:
        if source.is_dir():
            if id_rule not in ("stem", "name"):
                raise TextImpactError(f"id_rule must be 'stem' or 'name', got {id_rule!r}")
            for f in sorted(source.glob(pattern)):
                doc_id = f.stem if id_rule == "stem" else f.name
                if doc_id in docs:
                    raise DuplicateId(f"duplicate document id {doc_id!r} ({f.name})")
                docs[doc_id] = f.read_text(encoding="utf-8")
        elif source.is_file():
            with open(source, newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                missing = {id_column, text_column} - set(reader.fieldnames or [])
                if missing:
                    raise TextImpactError(f"{source.name}: missing column(s) {sorted(missing)}")
                for row in reader:
                    doc_id = row[id_column]
                    if doc_id in docs:
                        raise DuplicateId(f"duplicate document id {doc_id!r}")
                    docs[doc_id] = row[text_column]
        else:
            raise FileNotFoundError(f"no such file or directory: {source}")
    except UnicodeDecodeError as exc:
        raise OSError(f"cannot decode {source} as UTF-8: {exc}") from exc
    return [(doc_id, extract_features(docs[doc_id])) for doc_id in sorted(docs)]


def write_feature_table(rows: list[tuple[str, TextFeatures]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *FEATURE_COLUMNS])
        for doc_id, feats in rows:
            w.writerow([doc_id, *(repr(v) if isinstance(v, float) else v for v in feats.as_columns().values())])


def merge_into_csv(rows: list[tuple[str, TextFeatures]], experiment_csv: str | Path, out_path: str | Path, id_column: str = "id") -> None:
    """Append ``txt_*`` columns to an experiment file, matching on id.

    Every experiment id needs features and every feature row an experiment id.
    """
    feats = dict(rows)
    with open(experiment_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        data = list(reader)
    if id_column not in header:
        raise TextImpactError(f"experiment file has no {id_column!r} column")
    clash = [c for c in FEATURE_COLUMNS if c in header]
    if clash:
        raise TextImpactError(f"experiment file already has column {clash[0]!r}")
    exp_ids = [r[id_column] for r in data]
    orphans = [i for i in exp_ids if i not in feats] + sorted(set(feats) - set(exp_ids))
    if orphans:
        raise TextImpactError(f"id {orphans[0]!r} has no match between features and experiment")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + list(FEATURE_COLUMNS))
        for r in data:
            extra = feats[r[id_column]].as_columns().values()
            w.writerow([r[c] for c in header] + [repr(v) if isinstance(v, float) else v for v in extra])
