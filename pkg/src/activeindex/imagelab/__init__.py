"""Images, the procedural corpus, query transforms and quality metrics."""

from activeindex.imagelab.corpus import generate_corpus, generate_image, load_corpus_dir, write_corpus
from activeindex.imagelab.image import Image
from activeindex.imagelab.ppm import decode_ppm, encode_ppm, read_ppm, write_ppm
from activeindex.imagelab.quality import PSNR_CAP_DB, QualityStats, linf, psnr, quality_stats
from activeindex.imagelab.transforms import DEFAULT_SUITE, TransformSpec, apply_transform, transform_vjp

__all__ = [
    "DEFAULT_SUITE",
    "Image",
    "PSNR_CAP_DB",
    "QualityStats",
    "TransformSpec",
    "apply_transform",
    "decode_ppm",
    "encode_ppm",
    "generate_corpus",
    "generate_image",
    "linf",
    "load_corpus_dir",
    "psnr",
    "quality_stats",
    "read_ppm",
    "transform_vjp",
    "write_corpus",
    "write_ppm",
]
