"""Alignment and perceptual scorers, the score table, and the score cache.

The analytic scorers are exact stand-ins used with the Gaussian
backbone: alignment is the signed projection onto the concept direction
and perceptual distance is a dimension-normalized euclidean norm. Real
scorers (CLIP-class alignment, LPIPS-class distance) live behind the
wire protocol.

Scores are cached content-addressed on disk because calibration
re-scores the same samples across stages; the cache key is the scorer
name plus a hash of the tensor payload (and prompt text for alignment).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import ConceptTriplet, LatentTensor, SweepResult, tensor_content_hash
from .errors import ConfigError, ProtocolError, ShapeMismatch
from .protocol import AdapterConnection

CACHE_DIR_ENV_VAR = "FSL_CACHE_DIR"


# ---------------------------------------------------------------------------
# Analytic scorers
# ---------------------------------------------------------------------------

def projection_alignment(
    sample: LatentTensor,
    role: int,
    base_mean: np.ndarray,
    direction: np.ndarray,
    a_max: float = 1.0,
) -> float:
    """Signed projection of (sample - base_mean) onto the unit direction.

    role is +1 for the positive prompt and -1 for the negative one; the
    result is clamped to [-a_max, a_max].
    """
    base_mean = np.asarray(base_mean, dtype=np.float64).reshape(-1)
    direction = np.asarray(direction, dtype=np.float64).reshape(-1)
    values = sample.values.astype(np.float64)
    if values.size != base_mean.size or base_mean.size != direction.size:
        raise ShapeMismatch(
            f"sample dim {values.size} vs mean dim {base_mean.size} vs "
            f"direction dim {direction.size}"
        )
    unit = direction / np.linalg.norm(direction)
    value = float(role) * float((values - base_mean) @ unit)
    return float(np.clip(value, -a_max, a_max))


class ProjectionAlignmentScorer:
    """Alignment oracle for the analytic backbone."""

    def __init__(
        self,
        triplet: ConceptTriplet,
        base_mean: np.ndarray,
        direction: np.ndarray,
        a_max: float = 1.0,
        name: str = "projection",
    ):
        if a_max <= 0:
            raise ConfigError("a_max must be positive")
        self.name = name
        self.a_max = float(a_max)
        self._triplet = triplet
        self._base_mean = np.asarray(base_mean, dtype=np.float64).reshape(-1)
        self._direction = np.asarray(direction, dtype=np.float64).reshape(-1)

    def align(self, sample: LatentTensor, text: str) -> float:
        if text == self._triplet.positive_prompt:
            role = +1
        elif text == self._triplet.negative_prompt:
            role = -1
        else:
            raise ConfigError(f"projection scorer knows no prompt {text!r}")
        return projection_alignment(sample, role, self._base_mean, self._direction, self.a_max)


def euclidean_perceptual(a: LatentTensor, b: LatentTensor) -> float:
    """Dimension-normalized euclidean distance ||a - b||_2 / sqrt(dim)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"tensor shapes differ: {a.shape} vs {b.shape}")
    diff = a.values.astype(np.float64) - b.values.astype(np.float64)
    return float(np.linalg.norm(diff) / np.sqrt(diff.size))


class EuclideanPerceptualScorer:
    """Perceptual-distance oracle for the analytic backbone."""

    name = "euclidean"

    def distance(self, a: LatentTensor, b: LatentTensor) -> float:
        return euclidean_perceptual(a, b)


# ---------------------------------------------------------------------------
# External scorers
# ---------------------------------------------------------------------------

class ExternalAlignmentScorer:
    """Alignment scorer served by an adapter; a_max is the adapter's claim."""

    def __init__(self, connection: AdapterConnection, name: str = "external-align"):
        self._conn = connection
        self.name = name
        self.a_max = 1.0

    def align(self, sample: LatentTensor, text: str) -> float:
        score, a_max = self._conn.align(sample.values, sample.shape, text)
        self.a_max = a_max
        return score


class ExternalPerceptualScorer:
    def __init__(self, connection: AdapterConnection, name: str = "external-distance"):
        self._conn = connection
        self.name = name

    def distance(self, a: LatentTensor, b: LatentTensor) -> float:
        return self._conn.distance(a.values, a.shape, b.values, b.shape)


def external_score(connection: AdapterConnection, kind: str, payload: dict):
    """Raw scorer request: kind "align" needs tensor+text, "distance" two tensors."""
    if kind == "align":
        return connection.align(payload["tensor"].values, payload["tensor"].shape, payload["text"])
    if kind == "distance":
        a, b = payload["tensor_a"], payload["tensor_b"]
        return connection.distance(a.values, a.shape, b.values, b.shape)
    raise ProtocolError(f"unknown scorer kind {kind!r}")


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

class ScoreCache:
    """Content-addressed on-disk store: one JSON file per key.

    Reads are lock-free; writes are serialized per process. Counters are
    exposed so tests can assert that repeated scoring is free.
    """

    def __init__(self, directory: Optional[str] = None):
        if directory is None:
            directory = os.environ.get(CACHE_DIR_ENV_VAR)
        if directory is None:
            raise ConfigError(
                f"ScoreCache needs a directory (argument or {CACHE_DIR_ENV_VAR})"
            )
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._write_lock = threading.Lock()

    @staticmethod
    def align_key(scorer_name: str, sample: LatentTensor, text: str) -> str:
        h = hashlib.blake2b(digest_size=20)
        h.update(scorer_name.encode())
        h.update(b"|align|")
        h.update(tensor_content_hash(sample).encode())
        h.update(b"|")
        h.update(text.encode())
        return h.hexdigest()

    @staticmethod
    def distance_key(scorer_name: str, a: LatentTensor, b: LatentTensor) -> str:
        h = hashlib.blake2b(digest_size=20)
        h.update(scorer_name.encode())
        h.update(b"|dist|")
        h.update(tensor_content_hash(a).encode())
        h.update(b"|")
        h.update(tensor_content_hash(b).encode())
        return h.hexdigest()

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, key + ".json")

    def get(self, key: str):
        path = self._path(key)
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                self.hits += 1
                return json.load(fh)
        self.misses += 1
        return None

    def put(self, key: str, value: dict) -> None:
        path = self._path(key)
        with self._write_lock:
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(value, fh, sort_keys=True)
            os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Score table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreRecord:
    eta: float
    a_pos: float
    a_neg: float
    dist: float


@dataclass(frozen=True)
class ScoreTable:
    """Per-scale alignments and distances for one sweep."""

    records: Tuple[ScoreRecord, ...]
    aligner_name: str
    perceptual_name: str
    a_max: float
    aspect: str = "default"

    def __post_init__(self):
        etas = [r.eta for r in self.records]
        if len(set(etas)) != len(etas):
            raise ConfigError("duplicate eta in score table")
        if 0.0 in etas:
            zero = next(r for r in self.records if r.eta == 0.0)
            if abs(zero.dist) > 1e-6:
                raise ConfigError(f"distance at eta=0 must be 0, got {zero.dist}")
        if self.a_max <= 0:
            raise ConfigError("a_max must be positive")

    @property
    def etas(self) -> Tuple[float, ...]:
        return tuple(r.eta for r in self.records)

    def record_for(self, eta: float) -> ScoreRecord:
        for r in self.records:
            if r.eta == eta:
                return r
        raise KeyError(eta)

    def to_dict(self) -> dict:
        return {
            "records": [
                {"eta": r.eta, "a_pos": r.a_pos, "a_neg": r.a_neg, "dist": r.dist}
                for r in self.records
            ],
            "aligner": self.aligner_name,
            "perceptual": self.perceptual_name,
            "a_max": self.a_max,
            "aspect": self.aspect,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreTable":
        records = tuple(
            ScoreRecord(float(r["eta"]), float(r["a_pos"]), float(r["a_neg"]), float(r["dist"]))
            for r in d["records"]
        )
        return cls(
            records=records,
            aligner_name=d["aligner"],
            perceptual_name=d["perceptual"],
            a_max=float(d["a_max"]),
            aspect=d.get("aspect", "default"),
        )


def _cached_align(aligner, sample: LatentTensor, text: str, cache: Optional[ScoreCache]):
    if cache is None:
        return aligner.align(sample, text), getattr(aligner, "a_max", 1.0)
    key = ScoreCache.align_key(aligner.name, sample, text)
    hit = cache.get(key)
    if hit is not None:
        return float(hit["score"]), float(hit["a_max"])
    score = aligner.align(sample, text)
    a_max = getattr(aligner, "a_max", 1.0)
    cache.put(key, {"score": score, "a_max": a_max})
    return score, a_max


def _cached_distance(perceptual, a: LatentTensor, b: LatentTensor, cache: Optional[ScoreCache]):
    if cache is None:
        return perceptual.distance(a, b)
    key = ScoreCache.distance_key(perceptual.name, a, b)
    hit = cache.get(key)
    if hit is not None:
        return float(hit["score"])
    score = perceptual.distance(a, b)
    cache.put(key, {"score": score})
    return score


def score_sweep(
    sweep: SweepResult,
    aligner,
    perceptual,
    cache: Optional[ScoreCache] = None,
    aspect: str = "default",
) -> ScoreTable:
    """Score every sample of a sweep against both prompts and the neutral.

    With a cache attached, a second identical invocation issues zero
    scorer calls. Scorer failures are annotated with the offending eta.
    """
    neutral = sweep.neutral_sample
    records: List[ScoreRecord] = []
    a_max = getattr(aligner, "a_max", 1.0)
    for eta in sweep.grid.scales:
        sample = sweep.samples[eta]
        try:
            a_pos, a_max = _cached_align(aligner, sample, sweep.triplet.positive_prompt, cache)
            a_neg, _ = _cached_align(aligner, sample, sweep.triplet.negative_prompt, cache)
            dist = 0.0 if eta == 0.0 else _cached_distance(perceptual, sample, neutral, cache)
        except Exception as exc:
            exc.args = (f"eta={eta}: {exc}",)
            raise
        records.append(ScoreRecord(eta=eta, a_pos=a_pos, a_neg=a_neg, dist=dist))
    return ScoreTable(
        records=tuple(records),
        aligner_name=aligner.name,
        perceptual_name=perceptual.name,
        a_max=a_max,
        aspect=aspect,
    )
