"""Stylizer backends.

LatentStubBackend is the always-available reference: a deterministic
multi-step transform with the same shape as the neural pipeline (encode to a
compact latent, iterate seeded denoising steps, decode, honor the spatial
condition).  It exists so protocol conformance, seed determinism and step
scaling can be verified bit-for-bit on any machine.

DiffusionBackend wraps a pretrained latent-diffusion image-to-image pipeline
with edge-map conditioning, a compact latent autoencoder, a consistency
sampler for few-step inference and a style adapter.  It needs torch,
diffusers and local model assets; constructing it without them raises
BackendUnavailable and callers fall back to the stub explicitly.
"""

from __future__ import annotations

import time

import numpy as np

from .protocol import JobTimings, StyleJob

_M64 = (1 << 64) - 1


class BackendUnavailable(RuntimeError):
    """Requested backend cannot run in this environment."""


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _noise_plane(seed: int, tag: int, width: int, height: int) -> np.ndarray:
    """Deterministic plane in [-1, 1), keyed by (seed, tag, x, y) only."""
    base = np.uint64(_mix64_int((seed ^ (tag * 0x9E3779B97F4A7C15)) & _M64))
    xs = _mix64(base ^ np.arange(width, dtype=np.uint64))
    words = _mix64(xs[None, :] ^ np.arange(height, dtype=np.uint64)[:, None])
    return (words >> np.uint64(11)).astype(np.float64) / float(1 << 53) * 2.0 - 1.0


class LatentStubBackend:
    """Deterministic latent-space stylizer; one unit of work per step."""

    name = "latent-stub"
    LATENT_SCALE = 8

    def __init__(self, grain: float = 12.0):
        self.grain = grain

    def stylize(self, job: StyleJob) -> tuple[np.ndarray, JobTimings]:
        t0 = time.monotonic_ns()
        h, w = job.rgb.shape[:2]
        s = self.LATENT_SCALE
        pad_h, pad_w = (-h) % s, (-w) % s
        rgb = np.pad(job.rgb, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
        latent = (
            rgb.astype(np.float64)
            .reshape(rgb.shape[0] // s, s, rgb.shape[1] // s, s, 3)
            .mean(axis=(1, 3))
        )
        t1 = time.monotonic_ns()

        lh, lw = latent.shape[:2]
        grain_acc = np.zeros((rgb.shape[0], rgb.shape[1]))
        for step in range(job.steps):
            damp = job.strength / (step + 1.0)
            latent = latent + 20.0 * damp * _noise_plane(job.seed, step, lw, lh)[:, :, None]
            latent = _box3(latent)
            grain_acc += _noise_plane(job.seed, 1000 + step, rgb.shape[1], rgb.shape[0])
        grain_acc /= job.steps
        t2 = time.monotonic_ns()

        up = np.repeat(np.repeat(latent, s, axis=0), s, axis=1)
        toned = 255.0 * (rgb.astype(np.float64) / 255.0) ** 0.9
        out = 0.45 * up + 0.55 * toned + self.grain * job.strength * grain_acc[:, :, None]
        out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)[:h, :w]
        edge = job.condition == 255
        out[edge] = job.rgb[edge]
        t3 = time.monotonic_ns()
        return out, JobTimings(t1 - t0, t2 - t1, t3 - t2, t3 - t0)


def _box3(plane: np.ndarray) -> np.ndarray:
    padded = np.pad(plane, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(plane)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy : dy + plane.shape[0], dx : dx + plane.shape[1]]
    return acc / 9.0


class DiffusionBackend:
    """Edge-conditioned img2img over a pretrained latent diffusion model.

    Assets are resolved from model_dir: the base checkpoint, a canny
    conditioning net, a consistency-distilled adapter enabling 1-4 step
    sampling, a compact latent autoencoder, and optionally a style adapter.
    Every request re-seeds its own generator, which is what makes repeated
    requests reproducible within the framework's determinism limits.
    """

    name = "diffusion"

    def __init__(
        self,
        model_dir: str,
        device: str = "cuda",
        prompt: str = "photorealistic racetrack, asphalt, grass, clear sky",
        conditioning_scale: float = 0.8,
    ):
        try:
            import torch
            from diffusers import (
                AutoencoderTiny,
                ControlNetModel,
                LCMScheduler,
                StableDiffusionControlNetImg2ImgPipeline,
            )
        except ImportError as exc:
            raise BackendUnavailable(f"diffusion backend needs torch+diffusers: {exc}") from None

        self._torch = torch
        self.device = device
        self.prompt = prompt
        self.conditioning_scale = conditioning_scale
        controlnet = ControlNetModel.from_pretrained(
            f"{model_dir}/controlnet-canny", torch_dtype=torch.float16
        )
        pipe = StableDiffusionControlNetImg2ImgPipeline.from_pretrained(
            f"{model_dir}/base",
            controlnet=controlnet,
            torch_dtype=torch.float16,
            safety_checker=None,
        )
        pipe.vae = AutoencoderTiny.from_pretrained(
            f"{model_dir}/taesd", torch_dtype=torch.float16
        )
        pipe.scheduler = LCMScheduler.from_config(pipe.scheduler.config)
        pipe.load_lora_weights(f"{model_dir}/lcm-lora")
        try:
            pipe.load_lora_weights(f"{model_dir}/style-lora")
        except (OSError, ValueError):
            pass  # style adapter is optional
        self.pipe = pipe.to(device)
        if hasattr(torch, "use_deterministic_algorithms"):
            torch.use_deterministic_algorithms(True, warn_only=True)

    def stylize(self, job: StyleJob) -> tuple[np.ndarray, JobTimings]:
        from PIL import Image

        torch = self._torch
        t0 = time.monotonic_ns()
        image = Image.fromarray(job.rgb)
        control = Image.fromarray(np.stack([job.condition] * 3, axis=2))
        generator = torch.Generator(device=self.device).manual_seed(job.seed)
        t1 = time.monotonic_ns()
        result = self.pipe(
            prompt=self.prompt,
            image=image,
            control_image=control,
            num_inference_steps=job.steps,
            strength=job.strength,
            controlnet_conditioning_scale=self.conditioning_scale,
            guidance_scale=1.0,
            generator=generator,
            output_type="np",
        ).images[0]
        t2 = time.monotonic_ns()
        out = np.clip(np.floor(result * 255.0 + 0.5), 0, 255).astype(np.uint8)
        if out.shape != job.rgb.shape:
            out = np.array(Image.fromarray(out).resize((job.rgb.shape[1], job.rgb.shape[0])))
        edge = job.condition == 255
        out[edge] = job.rgb[edge]
        t3 = time.monotonic_ns()
        return out, JobTimings(t1 - t0, t2 - t1, t3 - t2, t3 - t0)


def make_backend(kind: str, **kwargs):
    if kind == "stub":
        return LatentStubBackend()
    if kind == "diffusion":
        return DiffusionBackend(**kwargs)
    raise ValueError(f"unknown backend {kind!r}")
