"""End-to-end desk experiment: train, add, optionally activate, transform, search, score.

Stages: corpus generation and feature extraction, index training, adding
references, activating the positive queries (active mode only), then for each
transform of the suite: transform, extract, search, metrics. Every random
choice is derived from ``config.seed`` through ``seeding``, so two runs with the
same config give identical reports.
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from activeindex.activation.activate import ActivationConfig, ActivationResult, activate_many
from activeindex.errors import ActiveIndexError, InvalidArgumentError
from activeindex.evalharness.metrics import PrPoint, best_pairs, micro_ap_from_pairs
from activeindex.evalharness.report import EvalReport, QualitySummary, TransformRow
from activeindex.extractor.network import ExtractorWeights, extract_batch, init_weights
from activeindex.extractor.weightfile import load_weights
from activeindex.imagelab.corpus import generate_image, load_corpus_dir
from activeindex.imagelab.image import Image
from activeindex.imagelab.ppm import write_ppm
from activeindex.imagelab.quality import quality_stats
from activeindex.imagelab.transforms import DEFAULT_SUITE, TransformSpec, apply_transform
from activeindex.index.presets import build_index, get_preset, search
from activeindex.seeding import derive_seed, rng_for

log = logging.getLogger(__name__)

MODES = ("passive", "active")


class StageError(ActiveIndexError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    image_size: int = 96
    train_count: int = 10000
    reference_count: int = 10000
    positive_count: int = 500
    negative_count: int = 2000
    preset: str = "ivfpq"
    nprobe: int | None = None  # None: the preset's own value
    k: int = 10
    modes: tuple[str, ...] = MODES
    activation: ActivationConfig | None = None  # None: defaults with the preset's loss
    suite: tuple[TransformSpec, ...] = DEFAULT_SUITE
    tau_steps: int = 0  # 0: report every observed threshold
    reference_dir: str | None = None
    weights_path: str | None = None
    out_dir: str | None = None
    save_images: bool = False
    threads: int = 1
    batch_size: int = 64

    def validate(self) -> ExperimentConfig:
        preset = get_preset(self.preset)
        for name in ("train_count", "reference_count", "positive_count", "negative_count"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        if self.positive_count > self.reference_count:
            raise InvalidArgumentError("positive queries must be a subset of the references")
        if self.image_size < 16:
            raise InvalidArgumentError("image_size must be >= 16")
        if self.k < 1 or self.effective_nprobe < 1:
            raise InvalidArgumentError("k and nprobe must be >= 1")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise InvalidArgumentError(f"modes must be a non-empty subset of {MODES}")
        if not self.suite:
            raise InvalidArgumentError("transform suite is empty")
        for t in self.suite:
            t.validate()
        act = self.resolved_activation()
        if act.loss_kind != preset.loss_kind:
            raise InvalidArgumentError(f"loss {act.loss_kind!r} does not match index preset {preset.name!r}")
        if self.threads < 1 or self.batch_size < 1:
            raise InvalidArgumentError("threads and batch_size must be >= 1")
        return self

    @property
    def effective_nprobe(self) -> int:
        return get_preset(self.preset).nprobe if self.nprobe is None else self.nprobe

    def resolved_activation(self) -> ActivationConfig:
        if self.activation is not None:
            return self.activation.validate()
        return ActivationConfig(loss_kind=get_preset(self.preset).loss_kind)

    def positive_ids(self) -> list[int]:
        rng = rng_for(self.seed, "queries")
        return sorted(rng.choice(self.reference_count, self.positive_count, replace=False).tolist())

    def to_dict(self) -> dict:
        """Echo of every field except the output directory and thread count, which do not affect results."""
        return {
            "seed": self.seed,
            "image_size": self.image_size,
            "train_count": self.train_count,
            "reference_count": self.reference_count,
            "positive_count": self.positive_count,
            "negative_count": self.negative_count,
            "preset": self.preset,
            "nprobe": self.effective_nprobe,
            "k": self.k,
            "modes": list(self.modes),
            "activation": self.resolved_activation().to_dict(),
            "suite": [t.to_dict() for t in self.suite],
            "tau_steps": self.tau_steps,
            "reference_dir": self.reference_dir,
            "weights_path": self.weights_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown experiment config fields: {sorted(unknown)}")
        kw = dict(d)
        if "modes" in kw:
            kw["modes"] = tuple(kw["modes"])
        if "suite" in kw:
            kw["suite"] = tuple(
                TransformSpec.parse(t) if isinstance(t, str) else TransformSpec.from_dict(t) for t in kw["suite"]
            )
        if kw.get("activation") is not None:
            act = dict(kw["activation"])
            act.setdefault("loss_kind", get_preset(kw.get("preset", cls.preset)).loss_kind)
            kw["activation"] = ActivationConfig.from_dict(act)
        return cls(**kw).validate()


# ---------------------------------------------------------------------------
# feature cache shared by experiments in one process


def weights_digest(weights: ExtractorWeights) -> str:
    h = hashlib.sha256(weights.params.tobytes())
    h.update(f"{weights.seed}/{weights.input_resolution}/{weights.feature_dim}".encode())
    return h.hexdigest()[:16]


@dataclass
class FeatureCache:
    """In-memory store of features that do not depend on the index or the mode."""

    entries: dict = field(default_factory=dict)

    def get(self, key, compute):
        if key not in self.entries:
            self.entries[key] = compute()
        return self.entries[key]


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # map keeps input order


def _chunks(n: int, size: int) -> list[range]:
    return [range(s, min(n, s + size)) for s in range(0, n, size)]


def _role_seed(config: ExperimentConfig, role: str) -> int:
    return derive_seed(config.seed, role)


def _generated_features(weights, seed: int, count: int, size: int, batch: int, threads: int) -> np.ndarray:
    def run(rows):
        return extract_batch(weights, [generate_image(seed, i, size) for i in rows], batch)

    parts = _pmap(run, _chunks(count, batch), threads)
    return np.concatenate(parts) if parts else np.zeros((0, weights.feature_dim))


def _references(config: ExperimentConfig) -> list[Image] | None:
    if config.reference_dir is None:
        return None
    pairs = load_corpus_dir(config.reference_dir)
    ids = [i for i, _ in pairs]
    if ids != list(range(len(ids))):
        raise InvalidArgumentError("ingested reference ids must be 0..n-1 in order")
    if len(pairs) != config.reference_count:
        raise InvalidArgumentError(f"reference_dir holds {len(pairs)} images, config says {config.reference_count}")
    return [im for _, im in pairs]


def _reference_image(config, refs, i: int) -> Image:
    if refs is not None:
        return refs[i]
    return generate_image(_role_seed(config, "reference"), i, config.image_size)


def _transformed_features(weights, images, spec: TransformSpec, batch: int, threads: int) -> np.ndarray:
    def run(rows):
        return extract_batch(weights, [apply_transform(images[i], spec) for i in rows], batch)

    return np.concatenate(_pmap(run, _chunks(len(images), batch), threads))


def _negative_features(config, weights, threads) -> dict[str, np.ndarray]:
    """Features of every negative query under every suite transform, generating each image once."""
    seed = _role_seed(config, "negative")
    out = {t.label: np.empty((config.negative_count, weights.feature_dim)) for t in config.suite}

    def run(rows):
        ims = [generate_image(seed, i, config.image_size) for i in rows]
        return rows, {t.label: extract_batch(weights, [apply_transform(im, t) for im in ims]) for t in config.suite}

    for rows, feats in _pmap(run, _chunks(config.negative_count, config.batch_size), threads):
        for label, f in feats.items():
            out[label][rows.start : rows.stop] = f
    return out


def _decimate(curve: list[PrPoint], steps: int) -> list[PrPoint]:
    if steps <= 0 or len(curve) <= steps:
        return curve
    keep = np.unique(np.linspace(0, len(curve) - 1, steps).round().astype(int))
    return [curve[i] for i in keep]


class _Stage:
    def __init__(self, name: str, timing: dict):
        self.name = name
        self.timing = timing

    def __enter__(self):
        log.info("stage %s", self.name)
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timing[self.name] = self.timing.get(self.name, 0.0) + time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class ExperimentArtifacts:
    """Objects produced along the way, for callers that want more than the report."""

    weights: ExtractorWeights
    index: object
    positive_ids: list[int]
    activations: list[ActivationResult] = field(default_factory=list)


def run_experiment(config: ExperimentConfig, cache: FeatureCache | None = None, artifacts: bool = False):
    """Run the configured experiment; returns the ``EvalReport`` (and artifacts on request)."""
    config = config.validate()
    cache = FeatureCache() if cache is None else cache
    timing: dict[str, float] = {}
    threads = config.threads
    preset = get_preset(config.preset)
    nprobe = config.effective_nprobe

    with _Stage("extractor", timing):
        weights = load_weights(config.weights_path) if config.weights_path else init_weights(config.seed)
        wkey = weights_digest(weights)

    with _Stage("corpus", timing):
        size = config.image_size
        refs = _references(config)
        train = cache.get(
            ("train", wkey, config.seed, config.train_count, size),
            lambda: _generated_features(
                weights, _role_seed(config, "train"), config.train_count, size, config.batch_size, threads
            ),
        )
        if refs is None:
            ref_feats = cache.get(
                ("reference", wkey, config.seed, config.reference_count, size),
                lambda: _generated_features(
                    weights, _role_seed(config, "reference"), config.reference_count, size, config.batch_size, threads
                ),
            )
        else:
            ref_feats = extract_batch(weights, refs, config.batch_size)
        suite_key = tuple(t.label for t in config.suite)
        negatives = cache.get(
            ("negative", wkey, config.seed, config.negative_count, size, suite_key, refs is None),
            lambda: _negative_features(config, weights, threads),
        )
        pos_ids = config.positive_ids()
        pos_images = [_reference_image(config, refs, i) for i in pos_ids]

    with _Stage("train", timing):
        index = build_index(preset, train, derive_seed(config.seed, "index"))

    with _Stage("add", timing):
        index.add_batch(ref_feats, range(config.reference_count))
        truth_cells = index.assign(ref_feats[pos_ids]) if hasattr(index, "assign") else None

    with _Stage("negatives", timing):
        neg_pairs = {}
        for t in config.suite:
            res = [search(index, q, config.k, nprobe) for q in negatives[t.label]]
            neg_pairs[t.label] = best_pairs(res)

    rows: list[TransformRow] = []
    curves: dict[str, list[PrPoint]] = {}
    quality = None
    activations: list[ActivationResult] = []
    for mode in config.modes:
        if mode == "active":
            with _Stage("activate", timing):
                activations = activate_many(
                    pos_images, weights, index, pos_ids, config.resolved_activation(), batch_size=32
                )
                queries = [r.activated for r in activations]
                quality = QualitySummary.from_stats([quality_stats(a, b) for a, b in zip(pos_images, queries)])
        else:
            queries = pos_images

        with _Stage(f"query-{mode}", timing):
            pooled_d, pooled_c = [], []
            for t in config.suite:
                feats = _transformed_features(weights, queries, t, config.batch_size, threads)
                res = [search(index, q, config.k, nprobe) for q in feats]
                hits = np.array([r.top_id == i for r, i in zip(res, pos_ids)])
                pd, pc = best_pairs(res, pos_ids)
                nd, nc = neg_pairs[t.label]
                d = np.concatenate([pd, nd])
                c = np.concatenate([pc, nc])
                ap, curve = micro_ap_from_pairs(d, c, len(pos_ids))
                pooled_d.append(d)
                pooled_c.append(c)
                p_f = None if truth_cells is None else float(np.mean(index.assign(feats) != truth_cells))
                rows.append(
                    TransformRow(
                        mode=mode,
                        transform=t.label,
                        recall_at_1=float(hits.mean()),
                        micro_ap=ap,
                        p_f=p_f,
                        max_recall=max((p.recall for p in curve), default=0.0),
                        n_positive=len(pos_ids),
                        n_negative=config.negative_count,
                    )
                )
                curves[f"{mode}/{t.label}"] = _decimate(curve, config.tau_steps)
            ap_all, curve_all = micro_ap_from_pairs(
                np.concatenate(pooled_d), np.concatenate(pooled_c), len(pos_ids) * len(config.suite)
            )
            curves[f"{mode}/all"] = _decimate(curve_all, config.tau_steps)
            rows.append(
                TransformRow(
                    mode=mode,
                    transform="all",
                    recall_at_1=float(np.mean([r.recall_at_1 for r in rows if r.mode == mode and r.transform != "all"])),
                    micro_ap=ap_all,
                    p_f=None
                    if truth_cells is None
                    else float(np.mean([r.p_f for r in rows if r.mode == mode and r.transform != "all"])),
                    max_recall=max((p.recall for p in curve_all), default=0.0),
                    n_positive=len(pos_ids) * len(config.suite),
                    n_negative=config.negative_count * len(config.suite),
                )
            )

    report = EvalReport(config=config.to_dict(), nprobe=nprobe, rows=rows, curves=curves, quality=quality, timing=timing)
    if config.out_dir is not None:
        with _Stage("report", timing):
            report.write(config.out_dir)
            if config.save_images and activations:
                img_dir = Path(config.out_dir) / "activated"
                img_dir.mkdir(parents=True, exist_ok=True)
                for vid, r in zip(pos_ids, activations):
                    write_ppm(img_dir / f"{vid:06d}.ppm", r.activated)
    if artifacts:
        return report, ExperimentArtifacts(weights, index, pos_ids, activations)
    return report


def with_config(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None}).validate()
