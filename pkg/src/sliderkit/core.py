"""Domain types, deterministic randomness, and serialization.

Everything here is immutable after construction and safe to share across
threads. Random draws come from a counter-based generator keyed by
(seed, stream_key), so any draw can be reproduced in isolation and
parallel schedules cannot change results.

JSON schemas (all maps, keys sorted on output):

    ConceptTriplet  {"concept_name", "base_prompt", "positive_prompt",
                     "negative_prompt"}
    ScaleGrid       {"scales": [float, ...], "zero_inserted": bool}
    SliderConfig    {"total_steps", "branch_step", "guidance",
                     "schedule_kind", "sampler_kind", "sigma_min",
                     "sigma_max", "rho", "s_churn", "guidance_mode"}
    LatentTensor    {"shape": [int, ...], "dtype": "f32le",
                     "data": base64(little-endian f32, row-major)}
    SweepResult     {"triplet", "grid", "seed", "config",
                     "samples": {repr(eta): LatentTensor, ...}}

The LatentTensor binary form is an 8-byte little-endian element count
followed by the little-endian IEEE-754 f32 payload in row-major order.
"""

from __future__ import annotations

import base64
import json
import math
import struct
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import BadConfig, ConfigError, NonFiniteScale, ShapeMismatch

SCHEDULE_KINDS = ("vp_discrete", "karras_sigma")
SAMPLER_KINDS = ("euler", "heun")
GUIDANCE_MODES = ("score_space", "embedding_space")

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

def _mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer (pure Python, wraps)."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _stream_base(seed: int, stream_key: Tuple[int, int, int]) -> int:
    h = seed & _MASK64
    for component in stream_key:
        h = _mix64(h ^ (int(component) & _MASK64))
    return h


def _uniform_u64(seed: int, stream_key: Tuple[int, int, int], n: int) -> np.ndarray:
    """n independent 64-bit words, a pure function of (seed, key, counter)."""
    base = _stream_base(seed, stream_key)
    counter = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(base) + counter * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RngStream:
    """A reproducible Gaussian stream addressed by (seed, stream_key).

    stream_key is (scale index, step index, draw index). Identical
    addresses always produce identical draws; distinct addresses are
    decorrelated by the counter-based mixing.
    """

    seed: int
    stream_key: Tuple[int, int, int] = (0, 0, 0)

    def derive(self, scale_index: int, step_index: int, draw_index: int) -> "RngStream":
        return RngStream(self.seed, (scale_index, step_index, draw_index))

    def gaussian(self, n: int) -> np.ndarray:
        return gaussian_draw(self, n)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stream_key": list(self.stream_key)}

    @classmethod
    def from_dict(cls, d: dict) -> "RngStream":
        return cls(int(d["seed"]), tuple(int(v) for v in d["stream_key"]))


def gaussian_draw(rng: RngStream, n: int) -> np.ndarray:
    """n standard-normal float64 variates via Box-Muller on counter words.

    Bit-reproducible for a given (seed, stream_key, n); the first k draws
    of a longer request equal a shorter request's draws.
    """
    if n < 1:
        raise ConfigError(f"gaussian_draw needs n >= 1, got {n}")
    pairs = (n + 1) // 2
    words = _uniform_u64(rng.seed, rng.stream_key, 2 * pairs)
    # Pair i consumes counter words 2i and 2i+1, so the first k draws of
    # a longer request match a shorter one. u1 in (0, 1] keeps log finite.
    u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:n]


# ---------------------------------------------------------------------------
# Concept and grid types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConceptTriplet:
    """The (base, positive, negative) prompt triple defining one direction."""

    base_prompt: str
    positive_prompt: str
    negative_prompt: str
    concept_name: str

    def __post_init__(self):
        for name in ("base_prompt", "positive_prompt", "negative_prompt"):
            if not getattr(self, name):
                raise ConfigError(f"ConceptTriplet.{name} must be non-empty")
        if self.positive_prompt == self.negative_prompt:
            raise ConfigError("positive and negative prompts must differ")

    def to_dict(self) -> dict:
        return {
            "concept_name": self.concept_name,
            "base_prompt": self.base_prompt,
            "positive_prompt": self.positive_prompt,
            "negative_prompt": self.negative_prompt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptTriplet":
        return cls(
            base_prompt=d["base_prompt"],
            positive_prompt=d["positive_prompt"],
            negative_prompt=d["negative_prompt"],
            concept_name=d["concept_name"],
        )


@dataclass(frozen=True)
class ScaleGrid:
    """Strictly increasing guidance scales containing exactly one zero."""

    scales: Tuple[float, ...]
    zero_inserted: bool = False

    def __post_init__(self):
        s = self.scales
        if not s:
            raise ConfigError("ScaleGrid must be non-empty")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigError("ScaleGrid scales must be strictly increasing")
        if sum(1 for v in s if v == 0.0) != 1:
            raise ConfigError("ScaleGrid must contain exactly one 0 entry")

    @property
    def eta_min(self) -> float:
        return self.scales[0]

    @property
    def eta_max(self) -> float:
        return self.scales[-1]

    def nonzero(self) -> Tuple[float, ...]:
        return tuple(v for v in self.scales if v != 0.0)

    def to_dict(self) -> dict:
        return {"scales": list(self.scales), "zero_inserted": self.zero_inserted}

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleGrid":
        return cls(tuple(d["scales"]), bool(d.get("zero_inserted", False)))


def validate_grid(scales: Sequence[float]) -> ScaleGrid:
    """Sort, deduplicate exact duplicates, and insert 0 if absent.

    Near-duplicates are kept (user intent is ambiguous); negative zero is
    normalized to +0.0 so the mandatory-zero rule is unambiguous.
    """
    if len(scales) == 0:
        raise ConfigError("scale list must be non-empty")
    values = [float(v) for v in scales]
    if any(not math.isfinite(v) for v in values):
        raise NonFiniteScale(f"non-finite scale in {values!r}")
    values = [0.0 if v == 0.0 else v for v in values]
    unique = sorted(set(values))
    zero_inserted = 0.0 not in unique
    if zero_inserted:
        unique = sorted(unique + [0.0])
    return ScaleGrid(tuple(unique), zero_inserted=zero_inserted)


# ---------------------------------------------------------------------------
# Sampler configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SliderConfig:
    """Everything the sweep orchestration is parameterized by.

    Defaults follow the image setup (50 discrete steps, branch at 15,
    guidance 7.5); the sigma-schedule fields default to the audio setup
    (sigma in [0.3, 500], rho 3) and only matter for karras_sigma.
    """

    total_steps: int = 50
    branch_step: int = 15
    guidance: float = 7.5
    schedule_kind: str = "vp_discrete"
    sampler_kind: str = "euler"
    sigma_min: float = 0.3
    sigma_max: float = 500.0
    rho: float = 3.0
    s_churn: float = 0.0
    guidance_mode: str = "score_space"

    def __post_init__(self):
        if self.total_steps < 1:
            raise BadConfig(f"total_steps must be positive, got {self.total_steps}")
        if not 0 <= self.branch_step < self.total_steps:
            raise BadConfig(
                f"branch_step must lie in [0, {self.total_steps}), got {self.branch_step}"
            )
        if self.guidance < 0:
            raise BadConfig("guidance must be nonnegative")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise BadConfig(f"unknown schedule_kind {self.schedule_kind!r}")
        if self.sampler_kind not in SAMPLER_KINDS:
            raise BadConfig(f"unknown sampler_kind {self.sampler_kind!r}")
        if not (0 < self.sigma_min < self.sigma_max):
            raise BadConfig("need 0 < sigma_min < sigma_max")
        if self.rho <= 0:
            raise BadConfig("rho must be positive")
        if self.s_churn < 0:
            raise BadConfig("s_churn must be nonnegative")
        if self.guidance_mode not in GUIDANCE_MODES:
            raise BadConfig(f"unknown guidance_mode {self.guidance_mode!r}")

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "branch_step": self.branch_step,
            "guidance": self.guidance,
            "schedule_kind": self.schedule_kind,
            "sampler_kind": self.sampler_kind,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "rho": self.rho,
            "s_churn": self.s_churn,
            "guidance_mode": self.guidance_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SliderConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# Tensors
# ---------------------------------------------------------------------------

class LatentTensor:
    """A finite float32 tensor, row-major, with an explicit shape.

    The shape is opaque to the math core; arithmetic treats the payload
    as a flat vector so the engine stays modality-agnostic.
    """

    __slots__ = ("shape", "values")

    def __init__(self, shape: Sequence[int], values: np.ndarray):
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ConfigError(f"shape entries must be positive, got {shape}")
        values = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
        if int(np.prod(shape)) != values.size:
            raise ShapeMismatch(
                f"shape {shape} implies {int(np.prod(shape))} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError("LatentTensor values must be finite")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)
        values.setflags(write=False)

    def __setattr__(self, name, value):
        raise AttributeError("LatentTensor is immutable")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "LatentTensor":
        array = np.asarray(array, dtype=np.float32)
        return cls(array.shape if array.ndim else (1,), array.reshape(-1))

    @property
    def size(self) -> int:
        return self.values.size

    def to_bytes(self) -> bytes:
        """Binary form: u64le element count + f32le payload, row-major."""
        payload = self.values.astype("<f4", copy=False).tobytes()
        return struct.pack("<Q", self.values.size) + payload

    @classmethod
    def from_bytes(cls, blob: bytes, shape: Sequence[int] | None = None) -> "LatentTensor":
        if len(blob) < 8:
            raise ConfigError("tensor blob shorter than its length header")
        (count,) = struct.unpack("<Q", blob[:8])
        payload = blob[8:]
        if len(payload) != 4 * count:
            raise ConfigError(
                f"tensor blob declares {count} elements but carries {len(payload)} bytes"
            )
        values = np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True)
        return cls(shape if shape is not None else (count,), values)

    def to_dict(self) -> dict:
        data = base64.b64encode(self.values.astype("<f4", copy=False).tobytes())
        return {"shape": list(self.shape), "dtype": "f32le", "data": data.decode("ascii")}

    @classmethod
    def from_dict(cls, d: dict) -> "LatentTensor":
        if d.get("dtype") != "f32le":
            raise ConfigError(f"unsupported tensor dtype {d.get('dtype')!r}")
        raw = base64.b64decode(d["data"])
        values = np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)
        return cls(tuple(d["shape"]), values)

    def bit_equal(self, other: "LatentTensor") -> bool:
        return self.shape == other.shape and self.values.tobytes() == other.values.tobytes()

    def __repr__(self):
        return f"LatentTensor(shape={self.shape}, size={self.size})"


# ---------------------------------------------------------------------------
# Sweep results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    """The family of samples generated by one slider sweep (one seed)."""

    triplet: ConceptTriplet
    grid: ScaleGrid
    seed: int
    samples: Dict[float, LatentTensor]
    config: SliderConfig

    def __post_init__(self):
        missing = [eta for eta in self.grid.scales if eta not in self.samples]
        extra = [eta for eta in self.samples if eta not in self.grid.scales]
        if missing or extra:
            raise ConfigError(
                f"samples must cover the grid exactly (missing {missing}, extra {extra})"
            )

    @property
    def neutral_sample(self) -> LatentTensor:
        return self.samples[0.0]

    def to_dict(self) -> dict:
        return {
            "triplet": self.triplet.to_dict(),
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "config": self.config.to_dict(),
            "samples": {repr(eta): t.to_dict() for eta, t in self.samples.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        samples = {float(k): LatentTensor.from_dict(v) for k, v in d["samples"].items()}
        return cls(
            triplet=ConceptTriplet.from_dict(d["triplet"]),
            grid=ScaleGrid.from_dict(d["grid"]),
            seed=int(d["seed"]),
            samples=samples,
            config=SliderConfig.from_dict(d["config"]),
        )


def dumps(obj) -> str:
    """Canonical JSON for any core type: sorted keys, no whitespace drift."""
    return json.dumps(obj.to_dict(), sort_keys=True, separators=(",", ":"))


def tensor_content_hash(tensor: LatentTensor) -> str:
    """Stable content address of a tensor (shape + payload bytes)."""
    import hashlib

    h = hashlib.blake2b(digest_size=20)
    h.update(repr(tensor.shape).encode())
    h.update(tensor.values.tobytes())
    return h.hexdigest()
