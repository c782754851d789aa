"""Certainty-weighted erasure training.

The loss has three parts sharing one latent and timestep per iteration:
an anchor-matching term that steers the tuned model away from the target
concept, a coref term pulling each sampled coreferential prompt toward the
same anchor, and a retain term pinning sampled retain prompts to the frozen
model's predictions. Coref and retain contributions are scaled by their
certainty weights and averaged over the per-step sample counts M and N.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .dataset import ConceptRecord, certainty_to_weight
from .embedding import sphere_sample

VARIANTS = ("crce", "crce_fixed", "crce_sphere", "esd_only")
CERTAINTY_MODES = ("llm", "uniform_one", "noise")
NOISE_SIDES = ("coref", "retain", "both")
PARAM_SCOPES = ("cross_attention_kv", "full")
OPTIMIZERS = ("sgd", "adam")

WEIGHT_FLOOR = 0.05  # perturbed certainty weights are clamped to [0.05, 1]


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    """Training aborts on the first non-finite loss; silently skipping the
    step would break reproducibility."""

    def __init__(self, step: int, description: str):
        self.step = step
        self.description = description
        super().__init__(f"non-finite loss at step {step}: {description}")


@dataclass
class ErasureConfig:
    eta: float = 1.0
    iterations: int = 500
    learning_rate: float = 1e-5
    M: int = 5
    N: int = 3
    variant: str = "crce"
    certainty_mode: str = "llm"
    noise_sigma: float = 0.0
    noise_side: str = "both"
    param_scope: str = "cross_attention_kv"
    sphere_radius: float = 0.0
    seed: int = 0
    optimizer: str = "sgd"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.certainty_mode not in CERTAINTY_MODES:
            raise ConfigError(f"unknown certainty_mode {self.certainty_mode!r}")
        if self.noise_side not in NOISE_SIDES:
            raise ConfigError(f"unknown noise_side {self.noise_side!r}")
        if self.param_scope not in PARAM_SCOPES:
            raise ConfigError(f"unknown param_scope {self.param_scope!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.M < 0 or self.N < 0:
            raise ConfigError("M and N must be non-negative")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.variant == "crce_sphere" and self.sphere_radius <= 0:
            raise ConfigError("variant crce_sphere requires sphere_radius > 0")
        if self.certainty_mode == "noise" and self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ErasureConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class WeightedPrompt:
    text: str
    weight: float


@dataclass
class ErasurePromptSet:
    """What one erasure run actually consumes: the target prompt and the
    training-side coref/retain prompts with their certainty weights."""

    target: str
    corefs: list[WeightedPrompt]
    retains: list[WeightedPrompt]

    @classmethod
    def from_record(cls, record: ConceptRecord) -> "ErasurePromptSet":
        if record.state != "approved":
            raise ValueError(
                f"record {record.target!r} is {record.state!r}; only approved records train"
            )
        return cls(
            target=record.target,
            corefs=[
                WeightedPrompt(e.text, certainty_to_weight(e.certainty))
                for e in record.coref_train
            ],
            retains=[
                WeightedPrompt(e.text, certainty_to_weight(e.certainty))
                for e in record.retain_train
            ],
        )


@dataclass
class NoiseBatch:
    x_t: torch.Tensor
    t: int
    target_cond: torch.Tensor
    coref_conds: list[tuple[torch.Tensor, float]]
    retain_conds: list[tuple[torch.Tensor, float]]
    coref_ids: list[str] = field(default_factory=list)
    retain_ids: list[str] = field(default_factory=list)

    def describe(self) -> str:
        return json.dumps(
            {
                "t": self.t,
                "coref_ids": self.coref_ids,
                "coref_weights": [w for _, w in self.coref_conds],
                "retain_ids": self.retain_ids,
                "retain_weights": [w for _, w in self.retain_conds],
                "x_t": self.x_t.detach().cpu().tolist(),
            }
        )


@dataclass
class LossBreakdown:
    esd_term: torch.Tensor
    coref_term: torch.Tensor
    retain_term: torch.Tensor
    total: torch.Tensor

    def floats(self) -> tuple[float, float, float, float]:
        return (
            float(self.esd_term.detach()),
            float(self.coref_term.detach()),
            float(self.retain_term.detach()),
            float(self.total.detach()),
        )


def compute_anchor(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, eta: float) -> torch.Tensor:
    """Negatively guided prediction the tuned model is steered toward:
    eps_uncond - eta * (eps_cond - eps_uncond)."""
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(
            f"shape mismatch: {tuple(eps_uncond.shape)} vs {tuple(eps_cond.shape)}"
        )
    return eps_uncond - eta * (eps_cond - eps_uncond)


def esd_loss(eps_tuned: torch.Tensor, anchor: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance, summed over all tensor elements."""
    if eps_tuned.shape != anchor.shape:
        raise ValueError(
            f"shape mismatch: {tuple(eps_tuned.shape)} vs {tuple(anchor.shape)}"
        )
    return ((eps_tuned - anchor) ** 2).sum()


def crce_loss(
    batch: NoiseBatch,
    tuned_params: dict[str, torch.Tensor],
    frozen_params: dict[str, torch.Tensor],
    backend,
    eta: float,
) -> LossBreakdown:
    """Full three-term loss on one batch.

    The coref term compares the tuned model's prediction for each coref
    against the anchor computed for the original target; the retain term
    compares tuned and frozen predictions under the same latent and
    timestep. Empty coref/retain lists contribute exact zeros.
    """
    x_t, t = batch.x_t, batch.t
    with torch.no_grad():
        eps_uncond = backend.predict_noise(frozen_params, x_t, t, None)
        eps_target = backend.predict_noise(frozen_params, x_t, t, batch.target_cond)
        anchor = compute_anchor(eps_uncond, eps_target, eta)

    esd_term = esd_loss(
        backend.predict_noise(tuned_params, x_t, t, batch.target_cond), anchor
    )

    zero = torch.zeros((), dtype=esd_term.dtype)
    coref_term = zero
    if batch.coref_conds:
        acc = zero
        for cond, weight in batch.coref_conds:
            acc = acc + weight * esd_loss(
                backend.predict_noise(tuned_params, x_t, t, cond), anchor
            )
        coref_term = acc / len(batch.coref_conds)

    retain_term = zero
    if batch.retain_conds:
        acc = zero
        for cond, weight in batch.retain_conds:
            with torch.no_grad():
                frozen_pred = backend.predict_noise(frozen_params, x_t, t, cond)
            acc = acc + weight * esd_loss(
                backend.predict_noise(tuned_params, x_t, t, cond), frozen_pred
            )
        retain_term = acc / len(batch.retain_conds)

    total = esd_term + coref_term + retain_term
    return LossBreakdown(esd_term, coref_term, retain_term, total)


# --- Batch sampling --------------------------------------------------------


def _subset(items: Sequence, count: int, rng: random.Random, side: str) -> list[int]:
    if count > len(items):
        raise ValueError(
            f"cannot sample {count} {side} prompts without replacement from {len(items)}"
        )
    return sorted(rng.sample(range(len(items)), count))


def _step_weights(
    base: list[float],
    side: str,
    config: ErasureConfig,
    weight_rng: np.random.Generator,
) -> list[float]:
    if config.certainty_mode == "uniform_one":
        return [1.0 for _ in base]
    if config.certainty_mode == "llm":
        return list(base)
    # noise mode: the perturbed side gets additive uniform noise on
    # [-sigma, sigma] clamped to [WEIGHT_FLOOR, 1]; the other side (unless
    # "both") is held flat at 1.
    if config.noise_side != "both" and side != config.noise_side:
        return [1.0 for _ in base]
    sigma = config.noise_sigma
    out = []
    for w in base:
        noise = weight_rng.uniform(-sigma, sigma) if sigma > 0 else 0.0
        out.append(float(min(1.0, max(WEIGHT_FLOOR, w + noise))))
    return out


def _to_cond(encoder, text: str, backend) -> torch.Tensor:
    return torch.from_numpy(np.asarray(encoder.encode_sequence(text))).to(backend.dtype)


def sample_batch(
    prompts: ErasurePromptSet,
    config: ErasureConfig,
    encoder,
    backend,
    tuned_params: dict[str, torch.Tensor],
    rng: random.Random,
    generator: torch.Generator,
    weight_rng: np.random.Generator,
    fixed_subset: tuple[list[int], list[int]] | None = None,
) -> NoiseBatch:
    """Draw one training batch.

    crce resamples coref/retain subsets uniformly without replacement each
    step; crce_fixed reuses the subset passed in (drawn once at step 0);
    crce_sphere replaces coref conditionings with ball samples around the
    target conditioning at weight 1; esd_only drops both extra terms. The
    latent is produced by partially denoising with the tuned model
    conditioned on the target, at a timestep drawn uniformly from the
    schedule.
    """
    t = rng.randrange(backend.timesteps)
    m = 0 if config.variant == "esd_only" else config.M
    n = 0 if config.variant == "esd_only" else config.N

    target_cond = _to_cond(encoder, prompts.target, backend)

    coref_conds: list[tuple[torch.Tensor, float]] = []
    coref_ids: list[str] = []
    retain_conds: list[tuple[torch.Tensor, float]] = []
    retain_ids: list[str] = []

    if config.variant == "crce_sphere":
        flat = target_cond.reshape(-1).cpu().numpy()
        for i in range(m):
            draw = sphere_sample(flat, config.sphere_radius, weight_rng)
            cond = torch.from_numpy(draw.reshape(tuple(target_cond.shape))).to(backend.dtype)
            coref_conds.append((cond, 1.0))
            coref_ids.append(f"sphere:{i}")
        if n > 0:
            retain_idx = (
                fixed_subset[1] if fixed_subset is not None else _subset(prompts.retains, n, rng, "retain")
            )
            base = [prompts.retains[i].weight for i in retain_idx]
            weights = _step_weights(base, "retain", config, weight_rng)
            for i, w in zip(retain_idx, weights):
                retain_conds.append((_to_cond(encoder, prompts.retains[i].text, backend), w))
                retain_ids.append(prompts.retains[i].text)
    else:
        if fixed_subset is not None:
            coref_idx, retain_idx = fixed_subset
        else:
            coref_idx = _subset(prompts.corefs, m, rng, "coref") if m > 0 else []
            retain_idx = _subset(prompts.retains, n, rng, "retain") if n > 0 else []
        coref_weights = _step_weights(
            [prompts.corefs[i].weight for i in coref_idx], "coref", config, weight_rng
        )
        retain_weights = _step_weights(
            [prompts.retains[i].weight for i in retain_idx], "retain", config, weight_rng
        )
        for i, w in zip(coref_idx, coref_weights):
            coref_conds.append((_to_cond(encoder, prompts.corefs[i].text, backend), w))
            coref_ids.append(prompts.corefs[i].text)
        for i, w in zip(retain_idx, retain_weights):
            retain_conds.append((_to_cond(encoder, prompts.retains[i].text, backend), w))
            retain_ids.append(prompts.retains[i].text)

    for _, w in coref_conds + retain_conds:
        if not 0.0 < w <= 1.0:
            raise ValueError(f"batch weight {w} outside (0, 1]")

    x_t = backend.generate_latent(tuned_params, target_cond, t, generator)
    return NoiseBatch(
        x_t=x_t,
        t=t,
        target_cond=target_cond,
        coref_conds=coref_conds,
        retain_conds=retain_conds,
        coref_ids=coref_ids,
        retain_ids=retain_ids,
    )


def draw_fixed_subset(
    prompts: ErasurePromptSet, config: ErasureConfig, rng: random.Random
) -> tuple[list[int], list[int]]:
    m = 0 if config.variant == "esd_only" else config.M
    n = 0 if config.variant == "esd_only" else config.N
    coref_idx = _subset(prompts.corefs, m, rng, "coref") if m > 0 else []
    retain_idx = _subset(prompts.retains, n, rng, "retain") if n > 0 else []
    return coref_idx, retain_idx


# --- Parameter scoping -------------------------------------------------------


def apply_param_scope(backend, scope: str) -> set[str]:
    """Names of the trainable parameters under the given scope; everything
    else stays frozen."""
    groups = backend.parameter_groups()
    all_names = [name for names in groups.values() for name in names]
    if scope == "full":
        return set(all_names)
    if scope == "cross_attention_kv":
        kv = groups.get("cross_attention_kv")
        if not kv:
            raise ConfigError(
                "backend exposes no cross_attention_kv parameter group; "
                "cannot apply cross-attention scope"
            )
        return set(kv)
    raise ConfigError(f"unknown param_scope {scope!r}")


# --- Training loop -----------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    t: int
    esd: float
    coref: float
    retain: float
    total: float
    coref_ids: list[str]
    retain_ids: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingLog:
    steps: list[StepRecord]
    rng_digest: str = ""
    final_loss: float = 0.0

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for record in self.steps:
                handle.write(json.dumps(record.to_dict()) + "\n")


def _rng_digest(rng: random.Random, generator: torch.Generator, weight_rng: np.random.Generator) -> str:
    h = hashlib.sha256()
    h.update(repr(rng.getstate()).encode())
    h.update(generator.get_state().numpy().tobytes())
    h.update(json.dumps(weight_rng.bit_generator.state, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def checkpoint_digest(params: dict[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].detach().cpu().numpy().tobytes())
    return h.hexdigest()


def run_training(
    prompts: ErasurePromptSet,
    config: ErasureConfig,
    backend,
    encoder,
) -> tuple[dict[str, torch.Tensor], TrainingLog]:
    """Run the full erasure loop and return (final parameters, log).

    The frozen reference copy is snapshotted from the backend at entry; the
    tuned copy starts equal. The whole trajectory is a function of
    (config.seed, backend weights, encoder), so identical runs produce
    identical checkpoints.
    """
    config.validate()
    rng = random.Random(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    weight_rng = np.random.default_rng(config.seed)

    frozen = backend.init_params()
    trainable = apply_param_scope(backend, config.param_scope)
    tuned = {
        name: p.clone().requires_grad_(name in trainable) for name, p in frozen.items()
    }
    train_tensors = [tuned[name] for name in sorted(trainable)]
    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(train_tensors, lr=config.learning_rate)
    else:
        optimizer = torch.optim.SGD(train_tensors, lr=config.learning_rate)

    fixed_subset = None
    if config.variant == "crce_fixed":
        fixed_subset = draw_fixed_subset(prompts, config, rng)

    steps: list[StepRecord] = []
    final_loss = 0.0
    for step in range(config.iterations):
        batch = sample_batch(
            prompts,
            config,
            encoder,
            backend,
            tuned,
            rng,
            generator,
            weight_rng,
            fixed_subset=fixed_subset,
        )
        breakdown = crce_loss(batch, tuned, frozen, backend, config.eta)
        if not torch.isfinite(breakdown.total):
            raise NonFiniteLossError(step, batch.describe())
        optimizer.zero_grad()
        breakdown.total.backward()
        optimizer.step()
        esd, coref, retain, total = breakdown.floats()
        final_loss = total
        steps.append(
            StepRecord(
                step=step,
                t=batch.t,
                esd=esd,
                coref=coref,
                retain=retain,
                total=total,
                coref_ids=batch.coref_ids,
                retain_ids=batch.retain_ids,
            )
        )

    log = TrainingLog(
        steps=steps,
        rng_digest=_rng_digest(rng, generator, weight_rng),
        final_loss=final_loss,
    )
    checkpoint = {name: p.detach().clone() for name, p in tuned.items()}
    return checkpoint, log


def save_checkpoint(
    path: str,
    params: dict[str, torch.Tensor],
    backend,
    manifest: dict,
) -> None:
    """Backend-native weights plus a JSON sidecar describing the run."""
    backend.save_checkpoint(path, params)
    with open(path + ".manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)


def load_checkpoint_manifest(path: str) -> dict:
    with open(path + ".manifest.json", "r", encoding="utf-8") as handle:
        return json.load(handle)


# --- Numerical verification ---------------------------------------------------


def gradient_check(
    loss_fn,
    params: dict[str, torch.Tensor],
    epsilon: float = 1e-4,
    rng: random.Random | None = None,
    coords_per_tensor: int = 4,
) -> float:
    """Compare analytic gradients of loss_fn(params) against central finite
    differences on a random subset of coordinates; returns the worst
    relative error. Run the backend in float64 for meaningful bounds."""
    rng = rng or random.Random(0)
    work = {name: p.detach().clone().requires_grad_(True) for name, p in params.items()}
    loss = loss_fn(work)
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, list(work.values()), allow_unused=True)
    else:  # constant loss: every gradient is zero
        grads = [None] * len(work)
    grad_map = {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(work.items(), grads)
    }

    frozen = {name: p.detach().clone() for name, p in work.items()}
    max_rel = 0.0
    with torch.no_grad():
        for name, p in frozen.items():
            flat = p.reshape(-1)
            count = min(coords_per_tensor, flat.numel())
            indices = rng.sample(range(flat.numel()), count)
            for idx in indices:
                original = float(flat[idx])
                flat[idx] = original + epsilon
                up = float(loss_fn(frozen))
                flat[idx] = original - epsilon
                down = float(loss_fn(frozen))
                flat[idx] = original
                numeric = (up - down) / (2.0 * epsilon)
                analytic = float(grad_map[name].reshape(-1)[idx])
                scale = max(abs(analytic), abs(numeric), 1.0)
                max_rel = max(max_rel, abs(analytic - numeric) / scale)
    return max_rel
