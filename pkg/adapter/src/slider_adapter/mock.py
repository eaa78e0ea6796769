"""Mock model: closed-form Gaussian denoiser plus fixed score tables.

The noise prediction replicates the engine's canonical float32
evaluation operation for operation, so sweeps driven through this
adapter agree bit for bit with the engine's in-process analytic
backbone:

    t-form:     eps = (x - f32(alpha) * mean) * f32(sigma / s2),
                s2  = alpha^2 * data_std^2 + sigma^2
    sigma-form: alpha = 1

Classifier-free guidance mirrors the engine's combination including its
short-circuits for guidance 0 and 1.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

VP_BETA_START = 1e-4
VP_BETA_END = 0.02


def analytic_epsilon_f32(x, mean, alpha, sigma, data_std):
    # Contract math: keep in lockstep with the engine's formula.
    s2 = alpha * alpha * data_std * data_std + sigma * sigma
    coeff = sigma / s2
    return ((x - np.float32(alpha) * mean) * np.float32(coeff)).astype(np.float32)


def cfg_combine(eps_uncond, eps_text, guidance):
    if guidance == 1.0:
        return eps_text
    if guidance == 0.0:
        return eps_uncond
    return eps_uncond + float(guidance) * (eps_text - eps_uncond)


class MockModel:
    def __init__(
        self,
        dimension: int = 4,
        data_std: float = 1.0,
        base_mean=None,
        direction=None,
        uncond_mean=None,
        prompt_means: Optional[Dict[str, np.ndarray]] = None,
        align_table: Optional[Dict[str, float]] = None,
        align_default: float = 0.25,
        a_max: float = 1.0,
        schedule_steps: int = 50,
    ):
        self.dimension = dimension
        self.data_std = float(data_std)
        base = (
            np.zeros(dimension, dtype=np.float32)
            if base_mean is None
            else np.asarray(base_mean, dtype=np.float32)
        )
        self.base_mean = base
        self.direction = (
            None if direction is None else np.asarray(direction, dtype=np.float32)
        )
        self.uncond_mean = (
            base if uncond_mean is None else np.asarray(uncond_mean, dtype=np.float32)
        )
        self.prompt_means = dict(prompt_means or {})
        self.align_table = dict(align_table or {})
        self.align_default = float(align_default)
        self.a_max = float(a_max)
        self._conditions: Dict[str, np.ndarray] = {}
        # vp schedule for t-form requests, matching the engine defaults.
        betas = np.linspace(VP_BETA_START, VP_BETA_END, schedule_steps, dtype=np.float64)
        alpha_bar = np.cumprod(1.0 - betas)
        self._alphas = np.sqrt(alpha_bar)
        self._sigmas = np.sqrt(1.0 - alpha_bar)

    @property
    def latent_shape(self):
        return (self.dimension,)

    def register(self, condition_id: str, text: Optional[str] = None, embedding=None):
        if text is not None:
            if text in self.prompt_means:
                mean = np.asarray(self.prompt_means[text], dtype=np.float32)
            else:
                # Unbound prompts condition on the base mean so conformance
                # probes with arbitrary text still get answers.
                mean = self.base_mean
            self._conditions[condition_id] = mean
        elif embedding is not None:
            e = np.asarray(embedding, dtype=np.float32).reshape(-1)
            if e.size != self.dimension:
                raise ValueError(
                    f"embedding of size {e.size} cannot condition a {self.dimension}-d model"
                )
            self._conditions[condition_id] = e
        else:
            raise ValueError("register needs text or embedding")

    def _coeffs(self, step_kind: str, step_value: float):
        if step_kind == "sigma":
            return 1.0, float(step_value)
        if step_kind == "t":
            t = int(round(step_value))
            if not 0 <= t < self._alphas.size:
                raise ValueError(f"t index {t} outside schedule of {self._alphas.size} steps")
            return float(self._alphas[t]), float(self._sigmas[t])
        raise ValueError(f"unknown step kind {step_kind!r}")

    def epsilon(self, x, condition_id, step_kind, step_value, cfg_enabled, guidance):
        mean = self._conditions[condition_id]
        alpha, sigma = self._coeffs(step_kind, step_value)
        eps_text = analytic_epsilon_f32(x, mean, alpha, sigma, self.data_std)
        if not cfg_enabled:
            return eps_text
        eps_uncond = analytic_epsilon_f32(x, self.uncond_mean, alpha, sigma, self.data_std)
        return cfg_combine(eps_uncond, eps_text, guidance)

    def align(self, x, text):
        return self.align_table.get(text, self.align_default), self.a_max

    def distance(self, a, b):
        if a.size != b.size:
            raise ValueError(f"distance operands differ in size: {a.size} vs {b.size}")
        diff = a.astype(np.float64) - b.astype(np.float64)
        return float(np.linalg.norm(diff) / np.sqrt(diff.size))
