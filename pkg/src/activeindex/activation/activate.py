"""Perceptually-bounded image optimisation towards an index target.

The image is parameterised as ``I = I_o + alpha * H(I_o) * tanh(delta)`` where
``H`` is the JND map of the original, so every pixel stays within
``alpha * H`` of the original whatever ``delta`` becomes. ``delta`` starts at
zero and follows Adam on ``L_f(f(I), target) + lambda * L_i(I, I_o)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from activeindex.activation.adam import AdamState, adam_step
from activeindex.activation.jnd import jnd_map
from activeindex.activation.losses import LOSS_KINDS, Target, indexation_loss, make_target
from activeindex.errors import InvalidArgumentError, NotFoundError
from activeindex.extractor.network import ExtractorWeights, forward
from activeindex.imagelab.image import Image
from activeindex.imagelab.quality import QualityStats, quality_stats
from activeindex.imagelab.transforms import DIFFERENTIABLE_KINDS, TransformSpec, transform_vjp
from activeindex.seeding import rng_for

IDENTITY = TransformSpec("identity")

DEFAULT_EOT_POOL = (
    TransformSpec("blur", 1.0),
    TransformSpec("rotate", 5.0),
    TransformSpec("rotate", -5.0),
    TransformSpec("brightness", 0.8),
    TransformSpec("contrast", 0.8),
    TransformSpec("center_crop", 0.8),
)


@dataclass(frozen=True)
class EotConfig:
    samples: int = 8
    pool: tuple[TransformSpec, ...] = DEFAULT_EOT_POOL
    seed: int = 0

    def validate(self) -> EotConfig:
        if self.samples < 1:
            raise InvalidArgumentError("EoT needs at least one sample (the identity)")
        if self.samples > 1 and not self.pool:
            raise InvalidArgumentError("EoT transform pool is empty")
        for t in self.pool:
            t.validate()
            if t.kind not in DIFFERENTIABLE_KINDS:
                raise InvalidArgumentError(f"transform {t.kind!r} cannot be used for EoT (no gradient)")
        return self

    def to_dict(self) -> dict:
        return {"samples": self.samples, "pool": [t.to_dict() for t in self.pool], "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> EotConfig:
        pool = tuple(TransformSpec.from_dict(t) for t in d.get("pool", [t.to_dict() for t in DEFAULT_EOT_POOL]))
        return cls(int(d.get("samples", 8)), pool, int(d.get("seed", 0))).validate()


@dataclass(frozen=True)
class ActivationConfig:
    alpha: float = 3.0
    lam: float = 1.0
    lr: float = 1.0
    steps: int = 10
    loss_kind: str = "ivfpq"
    eot: EotConfig | None = None

    def validate(self) -> ActivationConfig:
        if not self.alpha >= 0:
            raise InvalidArgumentError(f"alpha must be >= 0, got {self.alpha}")
        if self.steps < 0:
            raise InvalidArgumentError(f"steps must be >= 0, got {self.steps}")
        if not self.lr > 0:
            raise InvalidArgumentError(f"lr must be > 0, got {self.lr}")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"unknown loss kind {self.loss_kind!r}")
        if self.eot is not None:
            self.eot.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambda": self.lam,
            "lr": self.lr,
            "steps": self.steps,
            "loss_kind": self.loss_kind,
            "eot": None if self.eot is None else self.eot.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ActivationConfig:
        base = cls()
        eot = d.get("eot")
        return cls(
            alpha=float(d.get("alpha", base.alpha)),
            lam=float(d.get("lambda", base.lam)),
            lr=float(d.get("lr", base.lr)),
            steps=int(d.get("steps", base.steps)),
            loss_kind=str(d.get("loss_kind", base.loss_kind)),
            eot=None if eot is None else EotConfig.from_dict(eot),
        ).validate()


# speed/accuracy trade-off: one large step instead of ten small ones
FAST_PRESET = ActivationConfig(steps=1, lr=10.0)


@dataclass
class ActivationResult:
    activated: Image
    loss_trace: list[tuple[float, float]]
    quality: QualityStats
    feature_before: np.ndarray
    feature_after: np.ndarray
    total_trace: list[float] = field(default_factory=list)


def image_loss(pixels: np.ndarray, original: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared difference on the [0, 1] intensity scale, and its gradient in pixel units."""
    scale = pixels.size * 255.0**2
    diff = pixels - original
    return float(np.sum(diff * diff) / scale), 2.0 * diff / scale


def _views(eot: EotConfig | None, key: int, step: int) -> list[TransformSpec]:
    if eot is None or eot.samples == 1:
        return [IDENTITY]
    rng = rng_for(eot.seed, "eot", key, step)
    picks = rng.integers(0, len(eot.pool), size=eot.samples - 1)
    return [IDENTITY] + [eot.pool[i] for i in picks.tolist()]


def _feature_loss_and_grad(weights, pixels, targets, eot, keys, step):
    """Average indexation loss over each image's views and its gradient w.r.t. the image pixels."""
    n = len(targets)
    jobs = []  # (image index, transformed pixels, vjp, weight)
    for b in range(n):
        views = _views(eot, keys[b], step)
        for spec in views:
            out, vjp = transform_vjp(pixels[b], spec)
            jobs.append((b, out, vjp, 1.0 / len(views)))
    groups: dict[tuple, list[int]] = {}
    for j, (_, out, _, _) in enumerate(jobs):
        groups.setdefault(out.shape, []).append(j)

    lf = np.zeros(n)
    grad = np.zeros_like(pixels)
    for members in groups.values():
        tape = forward(weights, np.stack([jobs[j][1] for j in members]))
        upstream = np.empty_like(tape.features)
        for row, j in enumerate(members):
            b, _, _, w = jobs[j]
            value, g = indexation_loss(tape.features[row], targets[b])
            lf[b] += w * value
            upstream[row] = w * g
        pix_grads = tape.backward(upstream)
        for row, j in enumerate(members):
            b, _, vjp, _ = jobs[j]
            grad[b] += vjp(pix_grads[row])
    return lf, grad


def activate_images(
    originals: list[Image],
    weights: ExtractorWeights,
    targets: list[Target],
    config: ActivationConfig,
    keys: list[int] | None = None,
) -> list[ActivationResult]:
    """Activate a batch of same-sized images; ``keys`` seed each image's EoT draws."""
    config.validate()
    if not originals:
        return []
    if len(targets) != len(originals):
        raise InvalidArgumentError("one target per image is required")
    shape = originals[0].shape
    if any(im.shape != shape for im in originals):
        raise InvalidArgumentError("activate_images needs images of identical size")
    keys = list(range(len(originals))) if keys is None else list(keys)

    orig = np.stack([im.data for im in originals])
    amp = config.alpha * np.stack([jnd_map(im) for im in originals])
    state = AdamState(np.zeros_like(orig))
    traces: list[list[tuple[float, float]]] = [[] for _ in originals]
    totals: list[list[float]] = [[] for _ in originals]
    feature_before = forward(weights, orig).features

    for step in range(config.steps):
        delta = state.params
        t = np.tanh(delta)
        pixels = orig + amp * t
        lf, grad_pix = _feature_loss_and_grad(weights, pixels, targets, config.eot, keys, step)
        for b in range(len(originals)):
            li, gi = image_loss(pixels[b], orig[b])
            traces[b].append((float(lf[b]), li))
            totals[b].append(float(lf[b]) + config.lam * li)
            grad_pix[b] += config.lam * gi
        grad_delta = grad_pix * amp * (1.0 - t * t)
        adam_step(state, grad_delta, config.lr)

    final = np.clip(orig + amp * np.tanh(state.params), 0.0, 255.0)
    feature_after = forward(weights, final).features
    results = []
    for b, im in enumerate(originals):
        activated = Image.from_array(final[b])
        results.append(
            ActivationResult(
                activated=activated,
                loss_trace=traces[b],
                quality=quality_stats(im, activated),
                feature_before=feature_before[b],
                feature_after=feature_after[b],
                total_trace=totals[b],
            )
        )
    return results


def _target_for(index, vid: int, config: ActivationConfig) -> Target:
    if vid not in index:
        raise NotFoundError(f"id {vid} is not in the index")
    return make_target(index, vid, config.loss_kind)


def activate(original: Image, weights: ExtractorWeights, index, vid: int, config: ActivationConfig = ActivationConfig()) -> ActivationResult:
    """Activate one already-indexed image; the index is only read."""
    return activate_images([original], weights, [_target_for(index, vid, config)], config, keys=[vid])[0]


def activate_eot(original: Image, weights: ExtractorWeights, index, vid: int, config: ActivationConfig) -> ActivationResult:
    """Like ``activate`` but averages the feature loss over sampled transforms (identity always included)."""
    if config.eot is None:
        raise InvalidArgumentError("activate_eot needs config.eot")
    return activate(original, weights, index, vid, config)


def activate_many(
    originals: list[Image],
    weights: ExtractorWeights,
    index,
    ids: list[int],
    config: ActivationConfig = ActivationConfig(),
    batch_size: int = 32,
) -> list[ActivationResult]:
    """Activate many images in fixed-size chunks of equal-sized images, preserving input order."""
    if len(originals) != len(ids):
        raise InvalidArgumentError("one id per image is required")
    targets = [_target_for(index, vid, config) for vid in ids]
    results: list[ActivationResult | None] = [None] * len(originals)
    by_shape: dict[tuple, list[int]] = {}
    for i, im in enumerate(originals):
        by_shape.setdefault(im.shape, []).append(i)
    for members in by_shape.values():
        for s in range(0, len(members), batch_size):
            chunk = members[s : s + batch_size]
            out = activate_images(
                [originals[i] for i in chunk], weights, [targets[i] for i in chunk], config, [ids[i] for i in chunk]
            )
            for i, r in zip(chunk, out):
                results[i] = r
    return results


def with_overrides(config: ActivationConfig, **overrides) -> ActivationConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None}).validate()
