"""Data model and text I/O for embeddings, trial lists, and score files.

All formats are line oriented, space separated UTF-8 text:

    embeddings:  <utt-id> <speaker-id> <v1> ... <vl>
    trials:      <enroll-id> <test-id> [target|nontarget]
    scores:      <enroll-id> <test-id> <score>

Floats are written with 17 significant digits, which round-trips IEEE
64-bit values exactly. Loaded sets are immutable after construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCorpusError,
    DuplicateIdError,
    MissingReferenceError,
    NumericError,
    ParseError,
    ShapeError,
)


def fmt_float(x: float) -> str:
    """Render one float as decimal text that parses back bit-exactly."""
    return format(float(x), ".17g")


class TrialLabel(enum.Enum):
    """Hypothesis tag of a trial; enum values are the on-disk tokens."""

    SAME = "target"
    DIFFERENT = "nontarget"


_LABEL_FROM_TOKEN = {label.value: label for label in TrialLabel}


@dataclass(frozen=True)
class Trial:
    enroll_id: str
    test_id: str
    label: TrialLabel | None = None


class EmbeddingSet:
    """Immutable labeled collection of fixed-dimension embedding vectors."""

    def __init__(self, ids, speakers, vectors):
        vectors = np.array(vectors, dtype=np.float64)
        ids = [str(u) for u in ids]
        speakers = [str(s) for s in speakers]
        if vectors.ndim != 2:
            raise ShapeError(f"expected a 2-D vector matrix, got shape {vectors.shape}")
        n, dim = vectors.shape
        if n < 1 or dim < 1:
            raise ShapeError("need at least one vector of dimension >= 1")
        if len(ids) != n or len(speakers) != n:
            raise ShapeError(
                f"{len(ids)} ids / {len(speakers)} speakers for {n} vectors"
            )
        if not np.all(np.isfinite(vectors)):
            raise NumericError("embedding vectors must be finite")
        seen = set()
        for utt in ids:
            if utt in seen:
                raise DuplicateIdError(f"duplicate utterance id {utt!r}")
            seen.add(utt)
        vectors.setflags(write=False)
        self.ids = ids
        self.speakers = speakers
        self.vectors = vectors
        self._row = {utt: k for k, utt in enumerate(ids)}

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, utt_id: str) -> int:
        try:
            return self._row[utt_id]
        except KeyError:
            raise MissingReferenceError(f"unknown utterance id {utt_id!r}") from None

    def vector(self, utt_id: str) -> np.ndarray:
        return self.vectors[self.row(utt_id)]

    def speaker_codes(self) -> np.ndarray:
        """Integer speaker code per utterance (codes follow sorted labels)."""
        return np.unique(np.asarray(self.speakers), return_inverse=True)[1]

    def subset(self, indices) -> "EmbeddingSet":
        indices = np.asarray(indices, dtype=int)
        return EmbeddingSet(
            [self.ids[k] for k in indices],
            [self.speakers[k] for k in indices],
            self.vectors[indices],
        )

    def subset_by_speakers(self, keep) -> "EmbeddingSet":
        keep = set(keep)
        indices = [k for k, s in enumerate(self.speakers) if s in keep]
        if not indices:
            raise DegenerateCorpusError("speaker subset selects no utterances")
        return self.subset(indices)


@dataclass
class TrialList:
    """Ordered list of trials; order in the file is order in memory."""

    trials: list[Trial]

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def __getitem__(self, k):
        return self.trials[k]

    def index_arrays(self, embeddings: EmbeddingSet):
        """Row indices of (enroll, test) utterances in `embeddings`."""
        enroll = np.array([embeddings.row(t.enroll_id) for t in self.trials], dtype=int)
        test = np.array([embeddings.row(t.test_id) for t in self.trials], dtype=int)
        return enroll, test

    def labels(self) -> np.ndarray | None:
        """Per-trial 1/0 labels, or None if any trial is unlabeled."""
        if any(t.label is None for t in self.trials):
            return None
        return np.array(
            [1 if t.label is TrialLabel.SAME else 0 for t in self.trials], dtype=np.int8
        )


@dataclass
class ScoreSet:
    """One real-valued score per trial."""

    trials: TrialList
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or len(self.scores) != len(self.trials):
            raise ShapeError(
                f"{len(self.scores)} scores for {len(self.trials)} trials"
            )
        if not np.all(np.isfinite(self.scores)):
            raise NumericError("scores must be finite")

    def __len__(self) -> int:
        return len(self.trials)

    def with_labels(self, trials: TrialList) -> "ScoreSet":
        """Attach labels from a trial list with identical (enroll, test) order."""
        if len(trials) != len(self.trials):
            raise MissingReferenceError(
                f"{len(trials)} trials cannot label {len(self.trials)} scores"
            )
        for k, (mine, theirs) in enumerate(zip(self.trials, trials)):
            if (mine.enroll_id, mine.test_id) != (theirs.enroll_id, theirs.test_id):
                raise MissingReferenceError(
                    f"trial {k}: score pair ({mine.enroll_id}, {mine.test_id}) does "
                    f"not match trial pair ({theirs.enroll_id}, {theirs.test_id})"
                )
        return ScoreSet(TrialList(list(trials.trials)), self.scores.copy())


def load_embeddings(path) -> EmbeddingSet:
    """Parse an embedding file; dimension is inferred from the first record."""
    ids, speakers, rows = [], [], []
    seen = set()
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise ParseError(
                    f"{path}:{lineno}: expected '<utt> <speaker> <v1> ...', "
                    f"got {len(tokens)} fields"
                )
            utt, speaker = tokens[0], tokens[1]
            try:
                values = [float(tok) for tok in tokens[2:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric vector value") from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ParseError(
                    f"{path}:{lineno}: dimension {len(values)} != {dim} "
                    f"of the first record"
                )
            if utt in seen:
                raise DuplicateIdError(f"{path}:{lineno}: duplicate utterance id {utt!r}")
            seen.add(utt)
            ids.append(utt)
            speakers.append(speaker)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no embedding records")
    return EmbeddingSet(ids, speakers, np.array(rows, dtype=np.float64))


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt, speaker, vec in zip(embeddings.ids, embeddings.speakers, embeddings.vectors):
            fh.write(f"{utt} {speaker} " + " ".join(fmt_float(v) for v in vec) + "\n")


def load_trials(path, embeddings: EmbeddingSet | None = None, validate: bool = True) -> TrialList:
    """Parse a trial file; ids are checked against `embeddings` when given."""
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) not in (2, 3):
                raise ParseError(
                    f"{path}:{lineno}: expected '<enroll> <test> [label]', "
                    f"got {len(tokens)} fields"
                )
            label = None
            if len(tokens) == 3:
                try:
                    label = _LABEL_FROM_TOKEN[tokens[2]]
                except KeyError:
                    raise ParseError(
                        f"{path}:{lineno}: bad label token {tokens[2]!r} "
                        f"(expected 'target' or 'nontarget')"
                    ) from None
            if embeddings is not None and validate:
                for utt in tokens[:2]:
                    if utt not in embeddings._row:
                        raise MissingReferenceError(
                            f"{path}:{lineno}: unknown utterance id {utt!r}"
                        )
            trials.append(Trial(tokens[0], tokens[1], label))
    return TrialList(trials)


def save_trials(trials: TrialList, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            tail = f" {t.label.value}" if t.label is not None else ""
            fh.write(f"{t.enroll_id} {t.test_id}{tail}\n")


def save_scores(scores: ScoreSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trial, score in zip(scores.trials, scores.scores):
            fh.write(f"{trial.enroll_id} {trial.test_id} {fmt_float(score)}\n")


def load_scores(path) -> ScoreSet:
    """Parse a score file; trials come back unlabeled."""
    trials, values = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected '<enroll> <test> <score>', "
                    f"got {len(tokens)} fields"
                )
            try:
                values.append(float(tokens[2]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric score") from None
            trials.append(Trial(tokens[0], tokens[1]))
    return ScoreSet(TrialList(trials), np.array(values, dtype=np.float64))


def sample_pair_indices(speaker_codes, n_same: int, n_diff: int, rng):
    """Sample utterance index pairs for trials or training batches.

    Same-speaker pairs are uniform over all unordered pairs of distinct
    utterances sharing a speaker; different-speaker pairs are uniform over
    ordered cross-speaker pairs (rejection sampling). Deterministic given
    the generator state.
    """
    codes = np.asarray(speaker_codes)
    n = codes.size
    parts_i, parts_j, parts_y = [], [], []
    if n_same > 0:
        firsts, seconds = [], []
        for code in np.unique(codes):
            idx = np.flatnonzero(codes == code)
            if idx.size >= 2:
                a, b = np.triu_indices(idx.size, k=1)
                firsts.append(idx[a])
                seconds.append(idx[b])
        if not firsts:
            raise DegenerateCorpusError(
                "no speaker has two utterances; cannot form same-speaker pairs"
            )
        pool_i = np.concatenate(firsts)
        pool_j = np.concatenate(seconds)
        pick = rng.integers(0, pool_i.size, size=n_same)
        parts_i.append(pool_i[pick])
        parts_j.append(pool_j[pick])
        parts_y.append(np.ones(n_same, dtype=np.int8))
    if n_diff > 0:
        if np.unique(codes).size < 2:
            raise DegenerateCorpusError(
                "need at least two speakers for different-speaker pairs"
            )
        got_i, got_j = [], []
        remaining = n_diff
        while remaining > 0:
            a = rng.integers(0, n, size=remaining)
            b = rng.integers(0, n, size=remaining)
            ok = codes[a] != codes[b]
            got_i.append(a[ok])
            got_j.append(b[ok])
            remaining -= int(ok.sum())
        parts_i.append(np.concatenate(got_i))
        parts_j.append(np.concatenate(got_j))
        parts_y.append(np.zeros(n_diff, dtype=np.int8))
    if not parts_i:
        raise DegenerateCorpusError("requested an empty pair sample")
    return (
        np.concatenate(parts_i),
        np.concatenate(parts_j),
        np.concatenate(parts_y),
    )
