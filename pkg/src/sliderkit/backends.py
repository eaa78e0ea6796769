"""Denoiser backends behind one evaluator interface.

AnalyticBackbone is a closed-form Gaussian denoiser used as an exact
test oracle: the conditional score of a Gaussian is available in closed
form, so sweep outcomes are exactly predictable. ExternalDenoiser speaks
the wire protocol to a real model served by an adapter process.

Analytic noise prediction (single Gaussian, data x0 ~ N(m, data_std^2)):

    t-form:     eps = sigma_t * (x - alpha_t * m) / s2,
                s2  = alpha_t^2 * data_std^2 + sigma_t^2
    sigma-form: eps = sigma * (x - m) / (data_std^2 + sigma^2)

Both are evaluated in float32 with a fixed operation order so a remote
mock adapter can reproduce them bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError, ProtocolError, ShapeMismatch, UnknownCondition
from .protocol import AdapterConnection
from .sampler import GuidanceRequest, StepPosition, cfg_combine

UNCOND_ID = "__uncond__"


def analytic_epsilon_f32(
    x: np.ndarray, mean: np.ndarray, alpha: float, sigma: float, data_std: float
) -> np.ndarray:
    """Canonical float32 evaluation of the Gaussian noise prediction.

    The operation order here is a wire contract: mock adapters replicate
    it verbatim so dual-path sweeps agree bit for bit.
    """
    s2 = alpha * alpha * data_std * data_std + sigma * sigma
    coeff = sigma / s2
    return ((x - np.float32(alpha) * mean) * np.float32(coeff)).astype(np.float32)


def te_condition(
    e_neutral: np.ndarray, e_pos: np.ndarray, e_neg: np.ndarray, scale: float
) -> np.ndarray:
    """Embedding-space interpolation e_neutral + scale * (e_pos - e_neg)."""
    e_neutral = np.asarray(e_neutral, dtype=np.float32)
    e_pos = np.asarray(e_pos, dtype=np.float32)
    e_neg = np.asarray(e_neg, dtype=np.float32)
    if not (e_neutral.shape == e_pos.shape == e_neg.shape):
        raise ShapeMismatch(
            f"embedding shapes differ: {e_neutral.shape}, {e_pos.shape}, {e_neg.shape}"
        )
    if scale == 0.0:
        return e_neutral
    return e_neutral + np.float32(scale) * (e_pos - e_neg)


# ---------------------------------------------------------------------------
# Analytic backbone
# ---------------------------------------------------------------------------

Components = Tuple[Tuple[float, np.ndarray], ...]


def _as_components(mean_spec) -> Components:
    """Normalize a mean spec (vector, or [(weight, vector), ...]) to components."""
    if isinstance(mean_spec, (list, tuple)) and mean_spec and isinstance(
        mean_spec[0], (list, tuple)
    ):
        comps = []
        total = 0.0
        for weight, mean in mean_spec:
            weight = float(weight)
            if weight <= 0:
                raise ConfigError("mixture weights must be positive")
            total += weight
            comps.append((weight, np.asarray(mean, dtype=np.float32).reshape(-1)))
        return tuple((w / total, m) for w, m in comps)
    mean = np.asarray(mean_spec, dtype=np.float32).reshape(-1)
    return ((1.0, mean),)


@dataclass(frozen=True)
class AnalyticBackboneSpec:
    """Geometry of the Gaussian test distribution.

    prompt_means maps prompt text to the conditional mean (a vector, or a
    list of (weight, vector) mixture components). embedding_matrix and
    embedding_offset define the affine embedding -> mean map used when
    conditions are registered by embedding; without them the embedding is
    taken as the mean itself.
    """

    dimension: int
    base_mean: np.ndarray
    concept_direction: np.ndarray
    data_std: float
    prompt_means: Dict[str, object] = field(default_factory=dict)
    prompt_embeddings: Dict[str, np.ndarray] = field(default_factory=dict)
    uncond_mean: Optional[np.ndarray] = None
    embedding_matrix: Optional[np.ndarray] = None
    embedding_offset: Optional[np.ndarray] = None

    def __post_init__(self):
        base = np.asarray(self.base_mean, dtype=np.float32).reshape(-1)
        direction = np.asarray(self.concept_direction, dtype=np.float32).reshape(-1)
        if base.size != self.dimension or direction.size != self.dimension:
            raise ConfigError("base_mean and concept_direction must match dimension")
        if float(np.linalg.norm(direction)) == 0.0:
            raise ConfigError("concept_direction must be nonzero")
        if self.data_std < 0:
            raise ConfigError("data_std must be nonnegative")
        object.__setattr__(self, "base_mean", base)
        object.__setattr__(self, "concept_direction", direction)
        if self.uncond_mean is not None:
            uncond = np.asarray(self.uncond_mean, dtype=np.float32).reshape(-1)
            if uncond.size != self.dimension:
                raise ConfigError("uncond_mean must match dimension")
            object.__setattr__(self, "uncond_mean", uncond)

    @classmethod
    def for_triplet(
        cls,
        triplet,
        base_mean,
        direction,
        data_std: float,
        uncond_mean=None,
        prompt_embeddings: Optional[Dict[str, np.ndarray]] = None,
        embedding_matrix=None,
        embedding_offset=None,
    ) -> "AnalyticBackboneSpec":
        base = np.asarray(base_mean, dtype=np.float32).reshape(-1)
        v = np.asarray(direction, dtype=np.float32).reshape(-1)
        means = {
            triplet.base_prompt: base,
            triplet.positive_prompt: base + v,
            triplet.negative_prompt: base - v,
        }
        return cls(
            dimension=base.size,
            base_mean=base,
            concept_direction=v,
            data_std=float(data_std),
            prompt_means=means,
            prompt_embeddings=dict(prompt_embeddings or {}),
            uncond_mean=uncond_mean,
            embedding_matrix=embedding_matrix,
            embedding_offset=embedding_offset,
        )

    def mean_for_embedding(self, embedding: np.ndarray) -> np.ndarray:
        e = np.asarray(embedding, dtype=np.float32).reshape(-1)
        if self.embedding_matrix is None:
            if e.size != self.dimension:
                raise ShapeMismatch(
                    f"embedding of size {e.size} cannot stand in for a mean of "
                    f"dimension {self.dimension} without an embedding map"
                )
            return e
        matrix = np.asarray(self.embedding_matrix, dtype=np.float32)
        mean = matrix @ e
        if self.embedding_offset is not None:
            mean = mean + np.asarray(self.embedding_offset, dtype=np.float32)
        return mean.astype(np.float32)


def analytic_epsilon(
    spec: AnalyticBackboneSpec,
    x: np.ndarray,
    components: Components,
    position: StepPosition,
) -> np.ndarray:
    """Exact noise prediction for a (mixture of) Gaussian(s).

    Mixtures use responsibility-weighted component means; the single
    component path is the canonical float32 formula.
    """
    x = np.asarray(x, dtype=np.float32)
    alpha = position.alpha
    sigma = position.sigma
    if len(components) == 1:
        return analytic_epsilon_f32(x, components[0][1], alpha, sigma, spec.data_std)
    s2 = alpha * alpha * spec.data_std * spec.data_std + sigma * sigma
    xf = x.reshape(-1).astype(np.float64)
    log_resp = []
    for weight, mean in components:
        delta = xf - alpha * mean.astype(np.float64)
        log_resp.append(np.log(weight) - float(delta @ delta) / (2.0 * s2))
    log_resp = np.asarray(log_resp)
    log_resp -= log_resp.max()
    resp = np.exp(log_resp)
    resp /= resp.sum()
    blended = np.zeros(spec.dimension, dtype=np.float64)
    for r, (_, mean) in zip(resp, components):
        blended += r * mean.astype(np.float64)
    eps = sigma * (xf - alpha * blended) / s2
    return eps.astype(np.float32).reshape(x.shape)


class AnalyticBackbone:
    """Denoiser whose conditional score is closed-form (the test oracle)."""

    supports_cfg = True
    supports_embedding_space = True

    def __init__(self, spec: AnalyticBackboneSpec):
        self.spec = spec
        self._conditions: Dict[str, Components] = {}
        self._embeddings: Dict[str, np.ndarray] = {}
        uncond = spec.uncond_mean if spec.uncond_mean is not None else spec.base_mean
        self._conditions[UNCOND_ID] = _as_components(uncond)

    @property
    def latent_shape(self) -> Tuple[int, ...]:
        return (self.spec.dimension,)

    def register_condition(
        self, condition_id: str, text: Optional[str] = None, embedding=None
    ) -> None:
        if text is not None:
            if text not in self.spec.prompt_means:
                raise UnknownCondition(f"no analytic mean bound to prompt {text!r}")
            self._conditions[condition_id] = _as_components(self.spec.prompt_means[text])
            if text in self.spec.prompt_embeddings:
                self._embeddings[condition_id] = np.asarray(
                    self.spec.prompt_embeddings[text], dtype=np.float32
                ).reshape(-1)
        elif embedding is not None:
            e = np.asarray(embedding, dtype=np.float32).reshape(-1)
            self._conditions[condition_id] = _as_components(self.spec.mean_for_embedding(e))
            self._embeddings[condition_id] = e
        else:
            raise UnknownCondition("register_condition needs text or embedding")

    def embedding_for(self, condition_id: str) -> np.ndarray:
        if condition_id not in self._embeddings:
            raise UnknownCondition(f"no embedding registered for {condition_id!r}")
        return self._embeddings[condition_id]

    def _components(self, condition_id: str) -> Components:
        if condition_id not in self._conditions:
            raise UnknownCondition(f"condition {condition_id!r} is not registered")
        return self._conditions[condition_id]

    def predict(self, request: GuidanceRequest) -> np.ndarray:
        cond = self._components(request.condition_id)
        eps_text = analytic_epsilon(self.spec, request.latent, cond, request.position)
        if not request.cfg_enabled:
            return eps_text
        eps_uncond = analytic_epsilon(
            self.spec, request.latent, self._conditions[UNCOND_ID], request.position
        )
        return cfg_combine(eps_uncond, eps_text, request.guidance)


# ---------------------------------------------------------------------------
# External backbone
# ---------------------------------------------------------------------------

class ExternalDenoiser:
    """Engine-side client for a denoiser served over the wire protocol."""

    supports_cfg = True
    supports_embedding_space = True

    def __init__(self, connection: AdapterConnection):
        self._conn = connection
        self._registered: Dict[str, Optional[np.ndarray]] = {}
        shape = connection.hello_info.get("latent_shape")
        if shape is None:
            raise ProtocolError("adapter hello_ack did not declare latent_shape")
        self._latent_shape = tuple(int(s) for s in shape)

    @property
    def latent_shape(self) -> Tuple[int, ...]:
        return self._latent_shape

    @property
    def uncond_prompt(self) -> str:
        return str(self._conn.hello_info.get("uncond_prompt", ""))

    def register_condition(
        self, condition_id: str, text: Optional[str] = None, embedding=None
    ) -> None:
        self._conn.register_condition(condition_id, text=text, embedding=embedding)
        if embedding is not None:
            self._registered[condition_id] = np.asarray(embedding, dtype=np.float32).reshape(-1)
        else:
            self._registered[condition_id] = None

    def embedding_for(self, condition_id: str) -> np.ndarray:
        embedding = self._registered.get(condition_id)
        if embedding is None:
            raise UnknownCondition(
                f"condition {condition_id!r} has no engine-side embedding; the wire "
                "protocol cannot fetch encoder outputs"
            )
        return embedding

    def predict(self, request: GuidanceRequest) -> np.ndarray:
        if request.condition_id not in self._registered:
            raise UnknownCondition(f"condition {request.condition_id!r} is not registered")
        x = np.asarray(request.latent, dtype=np.float32)
        flat = self._conn.epsilon(
            x.reshape(-1),
            x.shape if x.ndim else (1,),
            request.condition_id,
            request.position.kind,
            request.position.value,
            cfg_enabled=request.cfg_enabled,
            guidance=request.guidance,
        )
        return flat.reshape(x.shape)


def external_predict(connection: AdapterConnection, request: GuidanceRequest) -> np.ndarray:
    """One-shot noise prediction over an established connection."""
    x = np.asarray(request.latent, dtype=np.float32)
    flat = connection.epsilon(
        x.reshape(-1),
        x.shape if x.ndim else (1,),
        request.condition_id,
        request.position.kind,
        request.position.value,
        cfg_enabled=request.cfg_enabled,
        guidance=request.guidance,
    )
    return flat.reshape(x.shape)
