"""Seed/test datasets as line-delimited JSON, and the synthetic generator.

Generated questions are a stopword template plus ``QUESTION_TOKENS`` content
words whose mock-embedding buckets are all distinct.  Seed vocabulary lives
in buckets ``SEED_BUCKETS`` and novel-query vocabulary in ``NOVEL_BUCKETS``,
so a novel query is exactly orthogonal to every seed under the mock
embedder.  Paraphrases shuffle the content words and swap the stopword
template, which leaves the mock embedding unchanged.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import InvalidFraction, InvalidRecord, IoFailure
from ..providers import MOCK_DIM, STOPWORDS, mock_answer, token_bucket

CATEGORIES = (
    ("python", "Basics of Python Programming"),
    ("network", "Technical Support Related to Network"),
    ("shipping", "Questions Related to Order and Shipping"),
    ("shopping", "Customer Shopping QA"),
)

SEED_BUCKETS = range(0, MOCK_DIM // 2)
NOVEL_BUCKETS = range(MOCK_DIM // 2, MOCK_DIM)
QUESTION_TOKENS = 8
WORDS_PER_BUCKET = 6

TEMPLATES = (
    "how do i",
    "what is the",
    "can you",
    "why does my",
    "where can i",
    "how can we",
    "what should i do with",
)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

SEEDS_FILE = "seeds.jsonl"
TESTS_FILE = "tests.jsonl"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True)
class SeedRecord:
    id: str
    category: str
    question: str
    answer: str


@dataclass(frozen=True)
class TestRecord:
    id: str
    category: str
    query: str
    source_id: Optional[str] = None

    __test__ = False  # keep pytest from collecting this as a test class


# -- jsonl io --------------------------------------------------------------


def write_jsonl(path: Union[str, Path], records: Iterable) -> int:
    n = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(asdict(rec), ensure_ascii=False, sort_keys=False) + "\n")
                n += 1
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return n


def _iter_json_lines(path: Union[str, Path]):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidRecord(f"not valid JSON ({exc.msg})", lineno) from exc
            if not isinstance(obj, dict):
                raise InvalidRecord("record must be a JSON object", lineno)
            yield lineno, obj


def _text_field(obj: dict, key: str, lineno: int, optional: bool = False) -> Optional[str]:
    value = obj.get(key)
    if value is None and optional:
        return None
    if not isinstance(value, str) or not value.strip():
        raise InvalidRecord(f"field {key!r} must be a non-empty string", lineno)
    return value


def read_seeds(path: Union[str, Path]) -> List[SeedRecord]:
    seen = set()
    out = []
    for lineno, obj in _iter_json_lines(path):
        rec = SeedRecord(
            id=_text_field(obj, "id", lineno),
            category=_text_field(obj, "category", lineno),
            question=_text_field(obj, "question", lineno),
            answer=_text_field(obj, "answer", lineno),
        )
        if rec.id in seen:
            raise InvalidRecord(f"duplicate id {rec.id!r}", lineno)
        seen.add(rec.id)
        out.append(rec)
    return out


def read_tests(path: Union[str, Path], seed_ids: Optional[Iterable[str]] = None) -> List[TestRecord]:
    known = set(seed_ids) if seed_ids is not None else None
    seen = set()
    out = []
    for lineno, obj in _iter_json_lines(path):
        rec = TestRecord(
            id=_text_field(obj, "id", lineno),
            category=_text_field(obj, "category", lineno),
            query=_text_field(obj, "query", lineno),
            source_id=_text_field(obj, "source_id", lineno, optional=True),
        )
        if rec.id in seen:
            raise InvalidRecord(f"duplicate id {rec.id!r}", lineno)
        if known is not None and rec.source_id is not None and rec.source_id not in known:
            raise InvalidRecord(f"source_id {rec.source_id!r} names no seed record", lineno)
        seen.add(rec.id)
        out.append(rec)
    return out


# -- synthetic generation --------------------------------------------------


def _pseudo_word(rng: np.random.Generator, syllables: int = 3) -> str:
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(syllables)
    )


def _vocabulary(rng: np.random.Generator, buckets: range, taken: set) -> Dict[int, List[str]]:
    """WORDS_PER_BUCKET fresh words for every bucket in ``buckets``."""
    vocab: Dict[int, List[str]] = {b: [] for b in buckets}
    missing = len(buckets) * WORDS_PER_BUCKET
    while missing:
        word = _pseudo_word(rng)
        if word in taken or word in STOPWORDS:
            continue
        b = token_bucket(word)
        if b in vocab and len(vocab[b]) < WORDS_PER_BUCKET:
            vocab[b].append(word)
            taken.add(word)
            missing -= 1
    return vocab


def _compose(words: Sequence[str], template: str) -> str:
    return f"{template} {' '.join(words)}?"


def _draw_question(
    rng: np.random.Generator, vocab: Dict[int, List[str]], used: set
) -> Tuple[List[str], str]:
    buckets = sorted(vocab)
    while True:
        chosen = tuple(sorted(rng.choice(buckets, size=QUESTION_TOKENS, replace=False).tolist()))
        if chosen in used:
            continue
        used.add(chosen)
        words = [vocab[b][rng.integers(WORDS_PER_BUCKET)] for b in chosen]
        rng.shuffle(words)
        template = TEMPLATES[rng.integers(len(TEMPLATES))]
        return words, _compose(words, template)


def paraphrase(rng: np.random.Generator, question: str) -> str:
    """Shuffle content words, swap the stopword template, maybe add a stopword."""
    tokens = question.rstrip("?").split()
    content = [t for t in tokens if t not in STOPWORDS]
    original = list(content)
    while len(content) > 1 and content == original:
        rng.shuffle(content)
    template = TEMPLATES[rng.integers(len(TEMPLATES))]
    words = list(content)
    if rng.random() < 0.5:
        extra = sorted(STOPWORDS)[rng.integers(len(STOPWORDS))]
        words.insert(int(rng.integers(len(words) + 1)), extra)
    return _compose(words, template)


def _fractions(p: Union[float, Sequence[float]]) -> List[float]:
    fr = [float(p)] * len(CATEGORIES) if np.isscalar(p) else [float(x) for x in p]
    if len(fr) != len(CATEGORIES):
        raise InvalidFraction(f"need 1 or {len(CATEGORIES)} paraphrase fractions, got {len(fr)}")
    for x in fr:
        if not 0.0 <= x <= 1.0 or x != x:
            raise InvalidFraction(f"paraphrase fraction {x} outside [0, 1]")
    return fr


def generate_synthetic(
    seeds_per_category: int,
    tests_per_category: int,
    paraphrase_fraction: Union[float, Sequence[float]],
    seed: int = 0,
) -> Tuple[List[SeedRecord], List[TestRecord]]:
    """Four-category synthetic corpus.

    Each category gets exactly ``round(p * tests_per_category)`` paraphrase
    tests (positions drawn uniformly), each built from a uniformly chosen
    seed of the same category; the rest are novel questions.  Tests are
    shuffled across categories.
    """
    fractions = _fractions(paraphrase_fraction)
    if seeds_per_category < 0 or tests_per_category < 0:
        raise ValueError("counts must be non-negative")
    rng = np.random.default_rng(seed)
    taken: set = set()
    seed_used: set = set()
    novel_used: set = set()
    seeds: List[SeedRecord] = []
    tests: List[TestRecord] = []

    for (slug, name), frac in zip(CATEGORIES, fractions):
        seed_vocab = _vocabulary(rng, SEED_BUCKETS, taken)
        novel_vocab = _vocabulary(rng, NOVEL_BUCKETS, taken)
        cat_seeds = []
        for i in range(seeds_per_category):
            _, q = _draw_question(rng, seed_vocab, seed_used)
            cat_seeds.append(SeedRecord(f"{slug}-s{i:04d}", name, q, mock_answer(q)))
        seeds.extend(cat_seeds)

        n_para = int(round(frac * tests_per_category)) if cat_seeds else 0
        para_slots = set(rng.choice(tests_per_category, size=n_para, replace=False).tolist())
        for i in range(tests_per_category):
            tid = f"{slug}-t{i:04d}"
            if i in para_slots:
                src = cat_seeds[int(rng.integers(len(cat_seeds)))]
                tests.append(TestRecord(tid, name, paraphrase(rng, src.question), src.id))
            else:
                _, q = _draw_question(rng, novel_vocab, novel_used)
                tests.append(TestRecord(tid, name, q, None))

    order = rng.permutation(len(tests))
    return seeds, [tests[i] for i in order]


def paraphrase_counts(tests: Iterable[TestRecord]) -> Dict[str, Dict[str, int]]:
    out: Dict[str, Dict[str, int]] = {}
    for t in tests:
        c = out.setdefault(t.category, {"tests": 0, "paraphrases": 0})
        c["tests"] += 1
        c["paraphrases"] += t.source_id is not None
    return out


def write_dataset(
    out_dir: Union[str, Path],
    seeds: Sequence[SeedRecord],
    tests: Sequence[TestRecord],
    meta: Optional[dict] = None,
) -> Dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    paths = {"seeds": out / SEEDS_FILE, "tests": out / TESTS_FILE, "manifest": out / MANIFEST_FILE}
    write_jsonl(paths["seeds"], seeds)
    write_jsonl(paths["tests"], tests)
    manifest = dict(meta or {})
    manifest["seeds"] = len(seeds)
    manifest["tests"] = len(tests)
    manifest["categories"] = paraphrase_counts(tests)
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths
