"""Noise schedules, guidance arithmetic, integrators, and sweep orchestration.

The sweep runs a shared prefix under the base condition, copies the
latent at the branch step, and continues one branch per scale with the
guided noise prediction

    eps_mod = eps_base + mu * (eps_pos - eps_neg)

where the base term is classifier-free-guided and the positive/negative
terms are single conditioned passes. Noise draws are keyed by step only
(never by branch), so the guidance term is the only cross-scale
difference and branches may execute in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConceptTriplet,
    LatentTensor,
    RngStream,
    ScaleGrid,
    SliderConfig,
    SweepResult,
    gaussian_draw,
)
from .errors import BadConfig, NonFiniteState, ShapeMismatch, SweepExecutionError

VP_BETA_START = 1e-4
VP_BETA_END = 0.02


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepPosition:
    """Where in the trajectory a noise prediction is requested.

    kind "t" carries a discrete diffusion-time index plus the resolved
    (alpha, sigma) pair; kind "sigma" carries the noise level directly
    (alpha is 1 by convention).
    """

    kind: str
    value: float
    alpha: float
    sigma: float


@dataclass(frozen=True)
class GuidanceRequest:
    """One noise-prediction request against a registered condition."""

    latent: np.ndarray
    condition_id: str
    position: StepPosition
    cfg_enabled: bool = False
    guidance: float = 0.0

    def __post_init__(self):
        if self.cfg_enabled and self.guidance < 0:
            raise BadConfig("guidance must be >= 0 when CFG is enabled")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients for one of the two supported schedule families.

    vp_discrete: alphas/sigmas indexed by diffusion time t (t=0 cleanest),
    alpha_t^2 + sigma_t^2 = 1. karras_sigma: sigmas has length T+1,
    strictly decreasing from sigma_max to sigma_min, with a final 0.
    """

    kind: str
    total_steps: int
    alphas: Optional[np.ndarray] = None
    sigmas: Optional[np.ndarray] = None

    def position(self, step: int) -> StepPosition:
        """Evaluation position for sampler step `step` (0 = noisiest)."""
        if not 0 <= step < self.total_steps:
            raise BadConfig(f"step {step} outside [0, {self.total_steps})")
        if self.kind == "vp_discrete":
            t = self.total_steps - 1 - step
            return self.position_vp(t)
        sigma = float(self.sigmas[step])
        return StepPosition(kind="sigma", value=sigma, alpha=1.0, sigma=sigma)

    def position_vp(self, t: int) -> StepPosition:
        return StepPosition(
            kind="t", value=float(t), alpha=float(self.alphas[t]), sigma=float(self.sigmas[t])
        )

    def initial_scale(self) -> float:
        """Multiplier applied to the standard-normal initial latent."""
        if self.kind == "karras_sigma":
            return float(self.sigmas[0])
        return 1.0


def build_schedule(config: SliderConfig) -> NoiseSchedule:
    """Construct the schedule named by the config.

    karras_sigma uses sigma_i = (smax^(1/rho) + (i/(T-1)) * (smin^(1/rho)
    - smax^(1/rho)))^rho for i < T and sigma_T = 0. vp_discrete uses a
    linear beta ramp with cumulative-product alphas.
    """
    T = config.total_steps
    if T < 2:
        raise BadConfig(f"schedules need total_steps >= 2, got {T}")
    if config.schedule_kind == "karras_sigma":
        inv_rho = 1.0 / config.rho
        ramp = np.arange(T, dtype=np.float64) / (T - 1)
        sigmas = (
            config.sigma_max ** inv_rho
            + ramp * (config.sigma_min ** inv_rho - config.sigma_max ** inv_rho)
        ) ** config.rho
        sigmas = np.append(sigmas, 0.0)
        if np.any(np.diff(sigmas) >= 0):
            raise BadConfig("karras sigmas are not strictly decreasing")
        return NoiseSchedule(kind="karras_sigma", total_steps=T, sigmas=sigmas)

    betas = np.linspace(VP_BETA_START, VP_BETA_END, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    alphas = np.sqrt(alpha_bar)
    sigmas = np.sqrt(1.0 - alpha_bar)
    if np.any(np.diff(alphas) >= 0) or np.any(np.diff(sigmas) <= 0):
        raise BadConfig("vp schedule is not monotone")
    return NoiseSchedule(kind="vp_discrete", total_steps=T, alphas=alphas, sigmas=sigmas)


# ---------------------------------------------------------------------------
# Guidance arithmetic
# ---------------------------------------------------------------------------

def _check_shapes(*arrays: np.ndarray) -> None:
    first = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != first:
            raise ShapeMismatch(f"operand shapes differ: {first} vs {a.shape}")


def cfg_combine(eps_uncond: np.ndarray, eps_text: np.ndarray, guidance: float) -> np.ndarray:
    """Classifier-free guidance: eps_uncond + g * (eps_text - eps_uncond)."""
    _check_shapes(eps_uncond, eps_text)
    if guidance == 1.0:
        return eps_text
    if guidance == 0.0:
        return eps_uncond
    return eps_uncond + float(guidance) * (eps_text - eps_uncond)


def guided_epsilon(
    eps_base: np.ndarray, eps_pos: np.ndarray, eps_neg: np.ndarray, scale: float
) -> np.ndarray:
    """Concept-direction combination eps_base + scale * (eps_pos - eps_neg).

    scale == 0 returns eps_base itself (bit-identical), so the neutral
    branch is exactly the unguided trajectory.
    """
    _check_shapes(eps_base, eps_pos, eps_neg)
    if scale == 0.0:
        return eps_base
    return eps_base + float(scale) * (eps_pos - eps_neg)


# ---------------------------------------------------------------------------
# Integrators
# ---------------------------------------------------------------------------

DenoiseFn = Callable[[np.ndarray, StepPosition], np.ndarray]


def _assert_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite state after step {step} (divergence)")


def _vp_step_from(
    schedule: NoiseSchedule, x: np.ndarray, eps: np.ndarray, t: int
) -> np.ndarray:
    """One deterministic vp step from diffusion time t to t-1 (or to clean)."""
    alpha_t = float(schedule.alphas[t])
    sigma_t = float(schedule.sigmas[t])
    if t == 0:
        alpha_prev, sigma_prev = 1.0, 0.0
    else:
        alpha_prev = float(schedule.alphas[t - 1])
        sigma_prev = float(schedule.sigmas[t - 1])
    x0_hat = (x - sigma_t * eps) / alpha_t
    return alpha_prev * x0_hat + sigma_prev * eps


def integrator_step(
    denoise: DenoiseFn,
    x: np.ndarray,
    step: int,
    schedule: NoiseSchedule,
    sampler_kind: str,
    rng: Optional[RngStream] = None,
    s_churn: float = 0.0,
) -> np.ndarray:
    """Advance the latent by one step of the requested integrator.

    The same `denoise` evaluator feeds both Heun sub-steps; the final
    step to zero noise falls back to a single Euler evaluation because
    the corrector would need a positive noise level. Churn perturbations
    apply to the sigma schedule only (the discrete vp path is
    deterministic) and draw through the supplied stream so reruns and
    parallel branches see identical noise.
    """
    if not 0 <= step < schedule.total_steps:
        raise BadConfig(f"step {step} outside [0, {schedule.total_steps})")
    if schedule.kind == "vp_discrete":
        t = schedule.total_steps - 1 - step
        eps = denoise(x, schedule.position_vp(t))
        if sampler_kind == "heun" and t > 0:
            x_pred = _vp_step_from(schedule, x, eps, t)
            eps2 = denoise(x_pred, schedule.position_vp(t - 1))
            eps = 0.5 * (eps + eps2)
        out = _vp_step_from(schedule, x, eps, t)
        _assert_finite(out, step)
        return out

    sigma = float(schedule.sigmas[step])
    sigma_next = float(schedule.sigmas[step + 1])
    sigma_hat = sigma
    if s_churn > 0.0:
        gamma = min(s_churn / schedule.total_steps, 2.0 ** 0.5 - 1.0)
        if gamma > 0.0:
            sigma_hat = sigma * (1.0 + gamma)
            if rng is None:
                raise BadConfig("churn requires an RngStream")
            noise = gaussian_draw(rng, x.size).astype(np.float32).reshape(x.shape)
            x = x + noise * float((sigma_hat ** 2 - sigma ** 2) ** 0.5)
    pos = StepPosition(kind="sigma", value=sigma_hat, alpha=1.0, sigma=sigma_hat)
    d = denoise(x, pos)
    dt = sigma_next - sigma_hat
    if sigma_next == 0.0 or sampler_kind == "euler":
        out = x + d * dt
    else:
        x_pred = x + d * dt
        pos_next = StepPosition(kind="sigma", value=sigma_next, alpha=1.0, sigma=sigma_next)
        d2 = denoise(x_pred, pos_next)
        out = x + (0.5 * dt) * (d + d2)
    _assert_finite(out, step)
    return out


# ---------------------------------------------------------------------------
# Sweep orchestration
# ---------------------------------------------------------------------------

_BASE = "base"
_POS = "pos"
_NEG = "neg"


def _initial_latent(denoiser, schedule: NoiseSchedule, seed: int) -> np.ndarray:
    shape = tuple(denoiser.latent_shape)
    n = int(np.prod(shape))
    z = gaussian_draw(RngStream(seed, (0, 0, 0)), n).astype(np.float32).reshape(shape)
    scale = schedule.initial_scale()
    return z if scale == 1.0 else z * float(scale)


def _register_triplet(denoiser, triplet: ConceptTriplet) -> None:
    denoiser.register_condition(_BASE, text=triplet.base_prompt)
    denoiser.register_condition(_POS, text=triplet.positive_prompt)
    denoiser.register_condition(_NEG, text=triplet.negative_prompt)


def _neutral_denoise(denoiser, guidance: float) -> DenoiseFn:
    def fn(x: np.ndarray, pos: StepPosition) -> np.ndarray:
        return denoiser.predict(
            GuidanceRequest(x, _BASE, pos, cfg_enabled=True, guidance=guidance)
        )

    return fn


def _guided_denoise(denoiser, guidance: float, scale: float) -> DenoiseFn:
    def fn(x: np.ndarray, pos: StepPosition) -> np.ndarray:
        eps_base = denoiser.predict(
            GuidanceRequest(x, _BASE, pos, cfg_enabled=True, guidance=guidance)
        )
        eps_pos = denoiser.predict(GuidanceRequest(x, _POS, pos))
        eps_neg = denoiser.predict(GuidanceRequest(x, _NEG, pos))
        return guided_epsilon(eps_base, eps_pos, eps_neg, scale)

    return fn


def _embedding_denoise(denoiser, condition_id: str) -> DenoiseFn:
    # Embedding-space guidance conditions on the interpolated embedding
    # with a single unguided pass; amplifying it with CFG would scale the
    # concept shift by the guidance factor.
    def fn(x: np.ndarray, pos: StepPosition) -> np.ndarray:
        return denoiser.predict(GuidanceRequest(x, condition_id, pos))

    return fn


def _run_branch(
    denoise: DenoiseFn,
    x: np.ndarray,
    start: int,
    schedule: NoiseSchedule,
    config: SliderConfig,
    seed: int,
    scale: float,
) -> np.ndarray:
    for i in range(start, schedule.total_steps):
        try:
            # Churn keys never depend on the branch, so every scale sees
            # the same stochastic perturbation.
            rng = RngStream(seed, (0, i, 1))
            x = integrator_step(
                denoise, x, i, schedule, config.sampler_kind, rng=rng, s_churn=config.s_churn
            )
        except (NonFiniteState,) as exc:
            raise SweepExecutionError(
                f"scale={scale} step={i}: {exc}", scale=scale, step=i
            ) from exc
        except Exception as exc:
            if isinstance(exc, (BadConfig, ShapeMismatch)):
                raise
            raise SweepExecutionError(
                f"scale={scale} step={i}: {exc}", scale=scale, step=i
            ) from exc
    return x


def _branch_denoise(denoiser, config: SliderConfig, scale: float, scale_index: int) -> DenoiseFn:
    if scale == 0.0:
        # The neutral branch never touches the positive/negative
        # conditions, so it is bit-identical to a plain guided run.
        return _neutral_denoise(denoiser, config.guidance)
    if config.guidance_mode == "embedding_space":
        e_neutral = denoiser.embedding_for(_BASE)
        e_pos = denoiser.embedding_for(_POS)
        e_neg = denoiser.embedding_for(_NEG)
        from .backends import te_condition

        e_mod = te_condition(e_neutral, e_pos, e_neg, scale)
        condition_id = f"mod{scale_index}"
        denoiser.register_condition(condition_id, embedding=e_mod)
        return _embedding_denoise(denoiser, condition_id)
    return _guided_denoise(denoiser, config.guidance, scale)


def run_slider_sweep(
    denoiser,
    triplet: ConceptTriplet,
    grid: ScaleGrid,
    config: SliderConfig,
    seed: int,
) -> SweepResult:
    """Generate one sample per grid scale, sharing the pre-branch prefix.

    Steps [0, branch_step) run once under the base condition with CFG;
    the latent is then copied per scale and steps [branch_step, T) run
    with the guided prediction. The eta=0 branch is bit-identical to a
    run that never branches.
    """
    schedule = build_schedule(config)
    _register_triplet(denoiser, triplet)
    x = _initial_latent(denoiser, schedule, seed)
    neutral = _neutral_denoise(denoiser, config.guidance)
    for i in range(config.branch_step):
        rng = RngStream(seed, (0, i, 1))
        x = integrator_step(
            neutral, x, i, schedule, config.sampler_kind, rng=rng, s_churn=config.s_churn
        )
    samples: Dict[float, LatentTensor] = {}
    for scale_index, scale in enumerate(grid.scales):
        denoise = _branch_denoise(denoiser, config, scale, scale_index)
        terminal = _run_branch(
            denoise, x.copy(), config.branch_step, schedule, config, seed, scale
        )
        samples[scale] = LatentTensor(terminal.shape, terminal.reshape(-1))
    return SweepResult(triplet=triplet, grid=grid, seed=seed, samples=samples, config=config)


@dataclass(frozen=True)
class ComposedSweepResult:
    """Samples over the scale product of several concept directions."""

    triplets: Tuple[ConceptTriplet, ...]
    scale_lists: Tuple[Tuple[float, ...], ...]
    seed: int
    config: SliderConfig
    samples: Dict[Tuple[float, ...], LatentTensor]


def compose_sweep(
    denoiser,
    triplets: Sequence[ConceptTriplet],
    scale_lists: Sequence[Sequence[float]],
    mode: str,
    config: SliderConfig,
    seed: int,
):
    """Joint control over several directions.

    concatenate: merge the positive (and negative) prompts into a single
    triplet and run an ordinary 1-D sweep over the first scale list.
    additive: eps_base + sum_j mu_j * (eps_pos_j - eps_neg_j) over the
    cartesian product of the per-direction scale lists.
    """
    if len(triplets) < 2:
        raise BadConfig("compose_sweep needs at least two triplets")
    if mode == "concatenate":
        joined = ConceptTriplet(
            base_prompt=triplets[0].base_prompt,
            positive_prompt=" ".join(t.positive_prompt for t in triplets),
            negative_prompt=" ".join(t.negative_prompt for t in triplets),
            concept_name="+".join(t.concept_name for t in triplets),
        )
        from .core import validate_grid

        return run_slider_sweep(denoiser, joined, validate_grid(scale_lists[0]), config, seed)
    if mode != "additive":
        raise BadConfig(f"unknown composition mode {mode!r}")
    if len(scale_lists) != len(triplets):
        raise BadConfig("additive mode needs one scale list per triplet")

    denoiser.register_condition(_BASE, text=triplets[0].base_prompt)
    pairs = []
    for j, triplet in enumerate(triplets):
        denoiser.register_condition(f"{_POS}{j}", text=triplet.positive_prompt)
        denoiser.register_condition(f"{_NEG}{j}", text=triplet.negative_prompt)
        pairs.append((f"{_POS}{j}", f"{_NEG}{j}"))

    schedule = build_schedule(config)
    x = _initial_latent(denoiser, schedule, seed)
    neutral = _neutral_denoise(denoiser, config.guidance)
    for i in range(config.branch_step):
        rng = RngStream(seed, (0, i, 1))
        x = integrator_step(
            neutral, x, i, schedule, config.sampler_kind, rng=rng, s_churn=config.s_churn
        )

    def make_denoise(mus: Tuple[float, ...]) -> DenoiseFn:
        active = [(mu, pos_id, neg_id) for mu, (pos_id, neg_id) in zip(mus, pairs) if mu != 0.0]
        if not active:
            return neutral

        def fn(xc: np.ndarray, pos: StepPosition) -> np.ndarray:
            eps = denoiser.predict(
                GuidanceRequest(xc, _BASE, pos, cfg_enabled=True, guidance=config.guidance)
            )
            for mu, pos_id, neg_id in active:
                eps_p = denoiser.predict(GuidanceRequest(xc, pos_id, pos))
                eps_n = denoiser.predict(GuidanceRequest(xc, neg_id, pos))
                eps = eps + float(mu) * (eps_p - eps_n)
            return eps

        return fn

    import itertools

    samples: Dict[Tuple[float, ...], LatentTensor] = {}
    for mus in itertools.product(*[tuple(float(v) for v in lst) for lst in scale_lists]):
        denoise = make_denoise(mus)
        terminal = _run_branch(
            denoise, x.copy(), config.branch_step, schedule, config, seed, mus[0]
        )
        samples[mus] = LatentTensor(terminal.shape, terminal.reshape(-1))
    return ComposedSweepResult(
        triplets=tuple(triplets),
        scale_lists=tuple(tuple(float(v) for v in lst) for lst in scale_lists),
        seed=seed,
        config=config,
        samples=samples,
    )
