"""Real model bindings: a text-conditioned diffusion pipeline plus
embedding scorers, loaded lazily (torch/diffusers/transformers are only
imported when real mode is requested).

The engine's branch step k is a scheduler index; this wrapper maps a
t-form step value onto the wrapped scheduler's timestep at that index
after `set_timesteps(schedule_steps)`. Pipelines with other indexing
conventions need their own subclass; document the mapping per model.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np


class RealModel:
    def __init__(
        self,
        model_id: str,
        aligner_id: Optional[str] = None,
        perceptual_id: Optional[str] = None,
        schedule_steps: int = 50,
        a_max: float = 1.0,
        device: Optional[str] = None,
    ):
        try:
            import torch
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:  # pragma: no cover - heavyweight deps
            raise RuntimeError(
                f"real mode needs torch and diffusers installed: {exc}"
            )
        self._torch = torch
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.pipe = StableDiffusionPipeline.from_pretrained(model_id)
        self.pipe.to(self.device)
        self.pipe.scheduler.set_timesteps(schedule_steps, device=self.device)
        self._timesteps = self.pipe.scheduler.timesteps
        self.schedule_steps = schedule_steps
        self.a_max = a_max
        self._conditions: Dict[str, "object"] = {}
        self._aligner = None
        if aligner_id:
            from transformers import CLIPModel, CLIPProcessor  # pragma: no cover

            self._aligner = (
                CLIPModel.from_pretrained(aligner_id).to(self.device),
                CLIPProcessor.from_pretrained(aligner_id),
            )
        self._perceptual_id = perceptual_id
        sample_size = self.pipe.unet.config.sample_size
        channels = self.pipe.unet.config.in_channels
        self.latent_shape = (channels, sample_size, sample_size)

    def _encode_prompt(self, text: str):
        tokenizer = self.pipe.tokenizer
        tokens = tokenizer(
            text,
            padding="max_length",
            max_length=tokenizer.model_max_length,
            truncation=True,
            return_tensors="pt",
        )
        with self._torch.no_grad():
            return self.pipe.text_encoder(tokens.input_ids.to(self.device))[0]

    def register(self, condition_id: str, text: Optional[str] = None, embedding=None):
        if text is not None:
            self._conditions[condition_id] = self._encode_prompt(text)
        elif embedding is not None:
            e = self._torch.as_tensor(np.asarray(embedding, dtype=np.float32))
            self._conditions[condition_id] = e.reshape(1, -1, self.pipe.text_encoder.config.hidden_size).to(self.device)
        else:
            raise ValueError("register needs text or embedding")
        if "__uncond__" not in self._conditions:
            self._conditions["__uncond__"] = self._encode_prompt("")

    def _timestep_for(self, step_kind: str, step_value: float):
        if step_kind == "t":
            index = int(round(step_value))
            # Engine t-form counts diffusion time (0 = cleanest); the
            # scheduler's timesteps run noisiest-first.
            position = self.schedule_steps - 1 - index
            if not 0 <= position < len(self._timesteps):
                raise ValueError(f"t index {index} outside the scheduler range")
            return self._timesteps[position]
        raise ValueError("the diffusion pipeline serves t-form steps only")

    def epsilon(self, x, condition_id, step_kind, step_value, cfg_enabled, guidance):
        torch = self._torch
        cond = self._conditions[condition_id]
        timestep = self._timestep_for(step_kind, step_value)
        latents = torch.as_tensor(x.reshape((1,) + tuple(self.latent_shape))).to(self.device)
        with torch.no_grad():
            if cfg_enabled:
                uncond = self._conditions["__uncond__"]
                stacked = torch.cat([latents, latents])
                embeds = torch.cat([uncond, cond])
                noise = self.pipe.unet(stacked, timestep, encoder_hidden_states=embeds).sample
                eps_uncond, eps_text = noise.chunk(2)
                eps = eps_uncond + guidance * (eps_text - eps_uncond)
            else:
                eps = self.pipe.unet(latents, timestep, encoder_hidden_states=cond).sample
        return eps.reshape(-1).cpu().numpy().astype(np.float32)

    def align(self, x, text):  # pragma: no cover - needs model weights
        if self._aligner is None:
            raise ValueError("no aligner model configured (--aligner)")
        raise NotImplementedError(
            "alignment on raw latents requires a VAE decode path; supply a "
            "scorer-specific adapter for the target modality"
        )

    def distance(self, a, b):  # pragma: no cover - needs model weights
        raise NotImplementedError(
            "perceptual distance requires a modality-specific model; supply a "
            "scorer-specific adapter"
        )
