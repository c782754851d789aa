"""A small conditional denoising-diffusion backend on 2-D Gaussian-mixture
data, runnable on CPU in seconds.

Mixture components play the role of concepts. Each component has one
canonical prompt plus alias prompts whose embeddings are unrelated vectors;
the pretrained denoiser maps them to the same component only because it was
trained that way. That mirrors how a text-to-image model ties synonyms to
one visual concept, so erasure, coref transfer, and retention can all be
measured end to end without a GPU.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .embedding import EmbeddingVector

DEFAULT_COMPONENTS = 4
DEFAULT_ALIASES = 15
DEFAULT_TIMESTEPS = 100


@dataclass
class ToyMixture:
    """K isotropic Gaussian components in the plane."""

    means: np.ndarray  # (K, 2)
    sigma: float = 0.3

    @classmethod
    def default(cls, n_components: int = DEFAULT_COMPONENTS, radius: float = 4.0) -> "ToyMixture":
        angles = 2.0 * np.pi * np.arange(n_components) / n_components + np.pi / n_components
        means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return cls(means=means)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def sample(self, component: int, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.means[component] + self.sigma * rng.standard_normal((n, 2))

    def nearest_component(self, point: np.ndarray) -> int:
        deltas = self.means - np.asarray(point, dtype=np.float64)[None, :]
        return int(np.argmin((deltas**2).sum(axis=1)))


class ToyTextEncoder:
    """Prompt vocabulary for the toy world.

    ``component-k`` is the canonical prompt of component k;
    ``component-k/alias-j`` are its aliases. Every prompt maps to a fixed
    unit vector drawn independently at construction, so aliases share no
    geometric structure with their canonical prompt. Unknown strings fall
    back to a content-hashed vector, which keeps arbitrary dataset records
    encodable for smoke runs.
    """

    def __init__(
        self,
        n_components: int = DEFAULT_COMPONENTS,
        n_aliases: int = DEFAULT_ALIASES,
        cond_dim: int = 16,
        seed: int = 7,
    ):
        self.n_components = n_components
        self.n_aliases = n_aliases
        self.cond_dim = cond_dim
        self.seed = seed
        self.encoder_id = f"toy-{n_components}x{n_aliases}-d{cond_dim}-s{seed}"
        self.pooling = "toy"
        rng = np.random.default_rng(seed)
        self.vocab: dict[str, np.ndarray] = {}
        self._component_of: dict[str, int] = {}
        for k in range(n_components):
            canonical = self.canonical_prompt(k)
            self.vocab[canonical] = self._unit(rng)
            self._component_of[canonical] = k
            for j in range(1, n_aliases + 1):
                alias = self.alias_prompt(k, j)
                self.vocab[alias] = self._unit(rng)
                self._component_of[alias] = k
        self.null_vector = self._unit(rng)

    @staticmethod
    def canonical_prompt(component: int) -> str:
        return f"component-{component}"

    @staticmethod
    def alias_prompt(component: int, alias: int) -> str:
        return f"component-{component}/alias-{alias}"

    def _unit(self, rng: np.random.Generator) -> np.ndarray:
        v = rng.standard_normal(self.cond_dim)
        return v / np.linalg.norm(v)

    def _hash_vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return self._unit(rng)

    def component_of(self, prompt: str) -> int | None:
        return self._component_of.get(prompt)

    def known_prompts(self) -> list[str]:
        return list(self.vocab)

    def _vector(self, text: str) -> np.ndarray:
        if text == "":
            return self.null_vector
        if text in self.vocab:
            return self.vocab[text]
        return self._hash_vector(text)

    def encode_pooled(self, text: str) -> EmbeddingVector:
        return EmbeddingVector(self._vector(text).copy(), normalized=True)

    def encode_sequence(self, text: str) -> np.ndarray:
        return self._vector(text)[None, :].copy()


class ToyCrossAttention(nn.Module):
    """Single-query cross-attention from latent features to the prompt
    tokens; K and V projections are bias-free, matching the layout the
    cross_attention_kv parameter scope expects."""

    def __init__(self, hidden: int, cond_dim: int):
        super().__init__()
        self.to_q = nn.Linear(hidden, hidden, bias=False)
        self.to_k = nn.Linear(cond_dim, hidden, bias=False)
        self.to_v = nn.Linear(cond_dim, hidden, bias=False)
        self.to_out = nn.Linear(hidden, hidden)
        self.scale = hidden**-0.5

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        # h: (B, H); cond: (B, L, D)
        q = self.to_q(h).unsqueeze(1)
        k = self.to_k(cond)
        v = self.to_v(cond)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        return self.to_out((attn @ v).squeeze(1))


class ToyDenoiser(nn.Module):
    def __init__(self, cond_dim: int = 16, hidden: int = 96, time_features: int = 8):
        super().__init__()
        self.time_features = time_features
        self.input_proj = nn.Linear(2 + 2 * time_features, hidden)
        self.attn = ToyCrossAttention(hidden, cond_dim)
        self.mid = nn.Linear(hidden, hidden)
        self.attn2 = ToyCrossAttention(hidden, cond_dim)
        self.body = nn.Sequential(nn.SiLU(), nn.Linear(hidden, hidden), nn.SiLU())
        self.output_proj = nn.Linear(hidden, 2)
        freqs = torch.exp(torch.linspace(0.0, math.log(200.0), time_features))
        self.register_buffer("freqs", freqs)

    def forward(self, x: torch.Tensor, t_frac: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        # x: (B, 2); t_frac: (B,) in [0, 1]; cond: (B, L, D)
        phases = t_frac[:, None] * self.freqs[None, :]
        temb = torch.cat([torch.sin(phases), torch.cos(phases)], dim=1)
        h = self.input_proj(torch.cat([x, temb], dim=1))
        h = h + self.attn(h, cond)
        h = torch.nn.functional.silu(self.mid(h))
        h = h + self.attn2(h, cond)
        return self.output_proj(self.body(h))


CHECKPOINT_FORMAT = "toy-diffusion-v1"


class ToyDiffusionBackend:
    """Conditional DDPM over the toy mixture.

    Parameters are passed explicitly to predict_noise as a name->tensor
    mapping (functional style), so a frozen reference copy and a tuned copy
    can share the single module instance.
    """

    def __init__(
        self,
        encoder: ToyTextEncoder,
        mixture: ToyMixture | None = None,
        timesteps: int = DEFAULT_TIMESTEPS,
        hidden: int = 96,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        self.encoder = encoder
        self.mixture = mixture or ToyMixture.default(encoder.n_components)
        self.timesteps = timesteps
        self.hidden = hidden
        self.seed = seed
        self.dtype = dtype
        torch.manual_seed(seed)
        self.model = ToyDenoiser(cond_dim=encoder.cond_dim, hidden=hidden).to(dtype)
        self.model.requires_grad_(False)

        betas = torch.linspace(1e-3, 0.2, timesteps, dtype=dtype)
        alphas = 1.0 - betas
        self.betas = betas
        self.alphas = alphas
        self.alpha_bars = torch.cumprod(alphas, dim=0)
        self.null_cond = torch.from_numpy(encoder.encode_sequence("")).to(dtype)

    def spec(self) -> dict:
        """Construction arguments, for manifests and checkpoint sidecars."""
        return {
            "kind": "toy",
            "n_components": self.encoder.n_components,
            "n_aliases": self.encoder.n_aliases,
            "cond_dim": self.encoder.cond_dim,
            "encoder_seed": self.encoder.seed,
            "timesteps": self.timesteps,
            "hidden": self.hidden,
            "seed": self.seed,
        }

    # -- parameter handling -------------------------------------------------

    def init_params(self) -> dict[str, torch.Tensor]:
        """Detached clone of the current weights."""
        return {name: p.detach().clone() for name, p in self.model.named_parameters()}

    def parameter_groups(self) -> dict[str, list[str]]:
        kv, other = [], []
        for name, _ in self.model.named_parameters():
            if ".to_k." in name or ".to_v." in name:
                kv.append(name)
            else:
                other.append(name)
        return {"cross_attention_kv": kv, "other": other}

    # -- forward passes -----------------------------------------------------

    def _conditioning(self, cond) -> torch.Tensor:
        if cond is None:
            return self.null_cond
        if isinstance(cond, np.ndarray):
            cond = torch.from_numpy(cond)
        return cond.to(self.dtype)

    def predict_noise(
        self,
        params: dict[str, torch.Tensor],
        x_t: torch.Tensor,
        t: int,
        cond=None,
    ) -> torch.Tensor:
        if not 0 <= t < self.timesteps:
            raise ValueError(f"timestep {t} outside schedule of length {self.timesteps}")
        x_t = x_t.to(self.dtype)
        if x_t.ndim != 2 or x_t.shape[1] != 2:
            raise ValueError(f"latent must have shape (B, 2), got {tuple(x_t.shape)}")
        c = self._conditioning(cond)
        if c.ndim == 2:
            c = c.unsqueeze(0).expand(x_t.shape[0], -1, -1)
        t_frac = torch.full((x_t.shape[0],), t / self.timesteps, dtype=self.dtype)
        return torch.func.functional_call(self.model, params, (x_t, t_frac, c))

    # -- sampling -----------------------------------------------------------

    def _reverse_step(
        self,
        params: dict[str, torch.Tensor],
        x: torch.Tensor,
        s: int,
        cond,
        generator: torch.Generator,
        guidance_scale: float = 1.0,
    ) -> torch.Tensor:
        eps = self.predict_noise(params, x, s, cond)
        if guidance_scale != 1.0 and cond is not None:
            eps_uncond = self.predict_noise(params, x, s, None)
            eps = eps_uncond + guidance_scale * (eps - eps_uncond)
        beta = self.betas[s]
        alpha = self.alphas[s]
        alpha_bar = self.alpha_bars[s]
        mean = (x - beta / torch.sqrt(1.0 - alpha_bar) * eps) / torch.sqrt(alpha)
        if s == 0:
            return mean
        noise = torch.randn(x.shape, generator=generator, dtype=self.dtype)
        return mean + torch.sqrt(beta) * noise

    @torch.no_grad()
    def generate_latent(
        self,
        params: dict[str, torch.Tensor],
        cond,
        t: int,
        generator: torch.Generator,
        batch: int = 1,
        guidance_scale: float = 1.0,
    ) -> torch.Tensor:
        """Partially denoise pure noise down to timestep t under the given
        conditioning; t == timesteps-1 returns pure noise."""
        if not 0 <= t < self.timesteps:
            raise ValueError(f"timestep {t} outside schedule of length {self.timesteps}")
        x = torch.randn((batch, 2), generator=generator, dtype=self.dtype)
        for s in range(self.timesteps - 1, t, -1):
            x = self._reverse_step(params, x, s, cond, generator, guidance_scale)
        return x

    @torch.no_grad()
    def sample(
        self,
        params: dict[str, torch.Tensor],
        cond,
        generator: torch.Generator,
        batch: int = 1,
        guidance_scale: float = 3.0,
    ) -> torch.Tensor:
        """Full reverse walk to a clean sample, with classifier-free
        guidance sharpening conditional adherence by default."""
        x = torch.randn((batch, 2), generator=generator, dtype=self.dtype)
        for s in range(self.timesteps - 1, -1, -1):
            x = self._reverse_step(params, x, s, cond, generator, guidance_scale)
        return x

    # -- checkpoints ----------------------------------------------------------

    def save_checkpoint(self, path: str, params: dict[str, torch.Tensor]) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "spec": self.spec(),
            "params": {name: p.detach().clone() for name, p in params.items()},
        }
        torch.save(payload, path)

    def load_checkpoint(self, path: str) -> dict[str, torch.Tensor]:
        payload = torch.load(path, weights_only=True)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a toy checkpoint: {path}")
        return {name: p.to(self.dtype) for name, p in payload["params"].items()}

    # -- pretraining ----------------------------------------------------------

    def training_prompts(self, component: int) -> list[str]:
        enc = self.encoder
        return [enc.canonical_prompt(component)] + [
            enc.alias_prompt(component, j) for j in range(1, enc.n_aliases + 1)
        ]

    def pretrain(
        self,
        steps: int = 2500,
        batch_size: int = 256,
        lr: float = 2e-3,
        uncond_prob: float = 0.1,
        seed: int | None = None,
    ) -> None:
        """Fit the denoiser to the mixture, conditioning each sample on a
        randomly chosen prompt of its component (or the null prompt)."""
        seed = self.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        generator = torch.Generator().manual_seed(seed)
        prompts = {
            k: [torch.from_numpy(self.encoder.encode_sequence(p)).to(self.dtype) for p in self.training_prompts(k)]
            for k in range(self.mixture.n_components)
        }
        self.model.requires_grad_(True)
        optimizer = torch.optim.Adam(self.model.parameters(), lr=lr)
        n_comp = self.mixture.n_components
        for _ in range(steps):
            components = rng.integers(0, n_comp, size=batch_size)
            x0 = np.stack([self.mixture.sample(int(k), 1, rng)[0] for k in components])
            x0 = torch.from_numpy(x0).to(self.dtype)
            conds = []
            for k in components:
                if rng.uniform() < uncond_prob:
                    conds.append(self.null_cond)
                else:
                    options = prompts[int(k)]
                    conds.append(options[int(rng.integers(0, len(options)))])
            cond = torch.stack(conds)
            t = torch.randint(0, self.timesteps, (batch_size,), generator=generator)
            noise = torch.randn(x0.shape, generator=generator, dtype=self.dtype)
            alpha_bar = self.alpha_bars[t][:, None]
            x_t = torch.sqrt(alpha_bar) * x0 + torch.sqrt(1.0 - alpha_bar) * noise
            t_frac = t.to(self.dtype) / self.timesteps
            pred = self.model(x_t, t_frac, cond)
            loss = ((pred - noise) ** 2).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        self.model.requires_grad_(False)


_PRETRAINED_CACHE: dict[tuple, ToyDiffusionBackend] = {}


def _disk_cache_path(key: tuple) -> str:
    base = os.environ.get(
        "CRCE_TOY_CACHE_DIR",
        os.path.join(os.path.expanduser("~"), ".cache", "crce"),
    )
    name = "toy-" + "-".join(str(k) for k in key) + ".pt"
    return os.path.join(base, name)


def pretrained_toy_world(
    seed: int = 0,
    n_components: int = DEFAULT_COMPONENTS,
    n_aliases: int = DEFAULT_ALIASES,
    timesteps: int = DEFAULT_TIMESTEPS,
    pretrain_steps: int = 2500,
) -> tuple[ToyDiffusionBackend, ToyTextEncoder]:
    """Deterministically pretrained backend+encoder, cached per process and
    on disk (sweep subprocesses load instead of re-training).

    The cached backend's own weights are never mutated by erasure runs
    (training operates on parameter clones), so sharing is safe.
    """
    key = (seed, n_components, n_aliases, timesteps, pretrain_steps)
    if key not in _PRETRAINED_CACHE:
        encoder = ToyTextEncoder(n_components=n_components, n_aliases=n_aliases)
        backend = ToyDiffusionBackend(encoder, timesteps=timesteps, seed=seed)
        cache_path = _disk_cache_path(key)
        if os.path.exists(cache_path):
            state = torch.load(cache_path, weights_only=True)
            backend.model.load_state_dict(state)
        else:
            backend.pretrain(steps=pretrain_steps)
            os.makedirs(os.path.dirname(cache_path), exist_ok=True)
            tmp_path = cache_path + f".tmp{os.getpid()}"
            torch.save(backend.model.state_dict(), tmp_path)
            os.replace(tmp_path, cache_path)
        _PRETRAINED_CACHE[key] = backend
    backend = _PRETRAINED_CACHE[key]
    return backend, backend.encoder


def backend_from_spec(spec: dict) -> tuple[ToyDiffusionBackend, ToyTextEncoder]:
    """Rebuild the toy world recorded in a checkpoint sidecar."""
    if spec.get("kind") != "toy":
        raise ValueError(f"unknown backend kind {spec.get('kind')!r}")
    return pretrained_toy_world(
        seed=spec.get("seed", 0),
        n_components=spec.get("n_components", DEFAULT_COMPONENTS),
        n_aliases=spec.get("n_aliases", DEFAULT_ALIASES),
        timesteps=spec.get("timesteps", DEFAULT_TIMESTEPS),
        pretrain_steps=spec.get("pretrain_steps", 2500),
    )


class ToyPromptSampler:
    """Evaluator-side generator: a checkpoint bound to the toy backend.

    generate(prompt, seed) denoises one point; per-seed generators keep the
    output independent of evaluation order. Images carry their id so
    fixture-backed judges can key on metadata.
    """

    def __init__(self, backend: ToyDiffusionBackend, params: dict[str, torch.Tensor]):
        self.backend = backend
        self.params = params

    def generate(self, prompt: str, seed: int) -> dict:
        from .evaluator import prompt_hash

        cond = self.backend.encoder.encode_sequence(prompt)
        generator = torch.Generator().manual_seed(seed)
        x0 = self.backend.sample(self.params, cond, generator)
        return {
            "id": f"{prompt_hash(prompt)}/{seed}",
            "prompt": prompt,
            "point": x0.squeeze(0).cpu().numpy(),
        }


class ToyComponentJudge:
    """Binary concept judge for toy images: answers yes when the generated
    point lies nearest the component named in the judge prompt."""

    def __init__(self, backend: ToyDiffusionBackend):
        self.mixture = backend.mixture
        self.encoder = backend.encoder
        # Longest prompts first so "component-0" never shadows an alias.
        self._prompts = sorted(self.encoder.known_prompts(), key=len, reverse=True)

    def _concept_component(self, judge_prompt: str) -> int:
        for prompt in self._prompts:
            if f"same concept as {prompt}." in judge_prompt:
                component = self.encoder.component_of(prompt)
                if component is not None:
                    return component
        raise ValueError(f"judge prompt names no toy concept: {judge_prompt!r}")

    def __call__(self, image, judge_prompt: str) -> str:
        point = image["point"] if isinstance(image, dict) else image
        component = self._concept_component(judge_prompt)
        return "yes" if self.mixture.nearest_component(point) == component else "no"


def build_toy_record(encoder: ToyTextEncoder, target_component: int = 0):
    """An approved ConceptRecord over the toy vocabulary: 15 aliases of the
    target component as corefs, aliases of the next two components as
    retains, split 10/5. Lets the full dataset->train->evaluate pipeline run
    on the toy world."""
    from .dataset import ConceptEntry, ConceptRecord

    if encoder.n_aliases < 15:
        raise ValueError("toy encoder needs at least 15 aliases per component")
    ladder = ["Very High", "Very High", "High", "High", "High", "Normal", "Normal", "Normal", "Low", "Low"]
    test_ladder = ["Very High", "Low", "Low", "Low", "Very Low"]

    corefs = [encoder.alias_prompt(target_component, j) for j in range(1, 16)]
    retain_a = (target_component + 1) % encoder.n_components
    retain_b = (target_component + 2) % encoder.n_components
    retains = [encoder.canonical_prompt(retain_a), encoder.canonical_prompt(retain_b)]
    retains += [encoder.alias_prompt(retain_a, j) for j in range(1, 8)]
    retains += [encoder.alias_prompt(retain_b, j) for j in range(1, 7)]

    def entries(texts, labels):
        return [ConceptEntry(text=t, certainty=c) for t, c in zip(texts, labels)]

    return ConceptRecord(
        target=encoder.canonical_prompt(target_component),
        category="object",
        state="approved",
        revision=1,
        coref_train=entries(corefs[:10], ladder),
        coref_test=entries(corefs[10:], test_ladder),
        retain_train=entries(retains[:10], ladder),
        retain_test=entries(retains[10:], test_ladder),
    )


def save_toy_dataset(path: str, encoder: ToyTextEncoder, target_component: int = 0) -> None:
    from .dataset import CorefConceptDataset, save_dataset

    record = build_toy_record(encoder, target_component)
    save_dataset(CorefConceptDataset(concepts=[record]), path)


def mixture_report(mixture: ToyMixture) -> str:
    return json.dumps(
        {"means": mixture.means.tolist(), "sigma": mixture.sigma}, indent=2
    )
