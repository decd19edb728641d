"""Command-line front end: ``activeindex <command> [flags]``.

Commands map one-to-one onto library operations::

    gen       write a procedural PPM corpus plus manifest.json
    train     extract features of a training corpus and train an index
    add       add a corpus to a trained index (ids from its manifest)
    activate  activate indexed images and write the results as PPM
    query     search the index with an image, a vector or a stored reconstruction
    eval      run the passive/active experiment and write the report files

Settings come from (lowest to highest priority) built-in defaults, the
``--config`` JSON file (top-level keys, then a section named after the
command) and explicit flags.

Exit codes: 0 success, 2 usage / invalid argument, 3 malformed file,
4 numeric failure, 5 I/O (missing or unwritable files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from activeindex import __version__
from activeindex.activation.activate import ActivationConfig, EotConfig, activate_many
from activeindex.activation.losses import indexation_loss, make_target
from activeindex.errors import (
    ActiveIndexError,
    CorruptIndexError,
    FormatError,
    InvalidArgumentError,
    NotFoundError,
    NumericError,
)
from activeindex.evalharness.experiment import ExperimentConfig, StageError, run_experiment
from activeindex.evalharness.report import recall_bound_report
from activeindex.extractor.network import extract, extract_batch, init_weights
from activeindex.extractor.weightfile import load_weights, save_weights
from activeindex.imagelab.corpus import load_corpus_dir, write_corpus
from activeindex.imagelab.ppm import read_ppm, write_ppm
from activeindex.imagelab.transforms import TransformSpec
from activeindex.index.presets import PRESETS, build_index, get_preset, search
from activeindex.index.serialize import load_index, save_index
from activeindex.seeding import derive_seed

log = logging.getLogger("activeindex")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4
EXIT_IO = 5

INDEX_FILE = "index.aidx"
WEIGHTS_FILE = "extractor.aixw"

# defaults for every setting a command reads; the config file and flags override these
DEFAULTS = {
    "seed": 0,
    "threads": None,  # None: available parallelism
    "out": None,
    "verbose": 0,
    "gen": {"count": 100, "size": 96},
    "train": {"images": None, "preset": "ivfpq", "weights": None},
    "add": {"index": None, "images": None, "weights": None},
    "activate": {
        "index": None,
        "images": None,
        "batch": None,
        "weights": None,
        "alpha": 3.0,
        "lam": 1.0,
        "lr": 1.0,
        "steps": 10,
        "loss_kind": None,  # None: matches the index family
        "eot_samples": 1,
        "batch_size": 32,
    },
    "query": {"index": None, "weights": None, "image": None, "vector": None, "reconstruct": None, "k": 10, "nprobe": None},
    "eval": {
        "preset": "ivfpq",
        "nprobe": None,
        "image_size": 96,
        "train_count": 10000,
        "reference_count": 10000,
        "positive_count": 500,
        "negative_count": 2000,
        "k": 10,
        "modes": None,
        "suite": None,
        "tau_steps": 0,
        "reference_dir": None,
        "weights": None,
        "save_images": False,
        "batch_size": 64,
        "alpha": None,
        "lam": None,
        "lr": None,
        "steps": None,
        "eot_samples": None,
    },
}


class CommandError(ActiveIndexError):
    """Failure inside a command, tagged with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(str(cause))
        self.stage = stage
        self.cause = cause


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, CommandError) and isinstance(exc, Exception):
            raise CommandError(self.name, exc) from exc
        return False


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS  # only explicit flags land in the namespace
    p = argparse.ArgumentParser(prog="activeindex", description="Active indexing: ANN indexes plus image activation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file with settings (top-level keys and per-command sections)")
    p.add_argument("--seed", type=int, default=S, help="global seed (default 0)")
    p.add_argument("--threads", type=_positive_int, default=S, help="worker pool size (default: available CPUs)")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=S, help="log one line per stage (-vv for debug)")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    g = sub.add_parser("gen", help="write a procedural PPM corpus", description="Write COUNT images plus manifest.json to --out.")
    g.add_argument("--count", type=_count, default=S, help="number of images (default 100)")
    g.add_argument("--size", type=_positive_int, default=S, help="image side in pixels (default 96)")

    t = sub.add_parser("train", help="train an index on a corpus", description=f"Writes {INDEX_FILE} and {WEIGHTS_FILE} to --out.")
    t.add_argument("--images", default=S, help="training corpus directory (required)")
    t.add_argument("--preset", choices=sorted(PRESETS), default=S, help="index geometry (default ivfpq)")
    t.add_argument("--weights", default=S, help="extractor weight file (default: initialised from --seed)")

    a = sub.add_parser("add", help="add a corpus to an index", description=f"Writes the grown index to --out/{INDEX_FILE}.")
    a.add_argument("--index", default=S, help="input index file (required)")
    a.add_argument("--images", default=S, help="corpus directory; ids come from its manifest (required)")
    a.add_argument("--weights", default=S, help="extractor weight file (default: initialised from --seed)")

    ac = sub.add_parser(
        "activate",
        help="activate indexed images",
        description="Writes activated PPMs, activation.csv and activation.json to --out.",
    )
    ac.add_argument("--index", default=S, help="index holding the images (required)")
    ac.add_argument("--images", default=S, help="corpus directory of indexed images")
    ac.add_argument(
        "--batch",
        default=S,
        help='JSON list of {"path", "id", "overrides"} entries (alternative to --images)',
    )
    ac.add_argument("--weights", default=S, help="extractor weight file (default: initialised from --seed)")
    _activation_flags(ac)
    ac.add_argument("--batch-size", dest="batch_size", type=_positive_int, default=S, help="images per optimisation batch")

    q = sub.add_parser("query", help="search the index", description="Prints one 'id distance' line per hit.")
    q.add_argument("--index", default=S, help="index file (required)")
    q.add_argument("--weights", default=S, help="extractor weight file (default: initialised from --seed)")
    src = q.add_mutually_exclusive_group()
    src.add_argument("--image", default=S, help="query image (PPM)")
    src.add_argument("--vector", default=S, help="query feature (.npy, or whitespace-separated text)")
    src.add_argument("--reconstruct", type=int, default=S, help="use the stored reproduction value of this id")
    q.add_argument("--k", type=_positive_int, default=S, help="number of hits (default 10)")
    q.add_argument("--nprobe", type=_positive_int, default=S, help="cells to probe (default: preset value, 1)")

    e = sub.add_parser("eval", help="run the passive/active experiment", description="Writes report.json, report.csv, pr_curve.csv, timing.json.")
    e.add_argument("--preset", choices=sorted(PRESETS), default=S, help="index geometry (default ivfpq)")
    e.add_argument("--nprobe", type=_positive_int, default=S, help="cells to probe (default: the preset's)")
    e.add_argument("--image-size", dest="image_size", type=_positive_int, default=S, help="generated image side (default 96)")
    e.add_argument("--train-count", dest="train_count", type=_positive_int, default=S, help="training images (default 10000)")
    e.add_argument("--reference-count", dest="reference_count", type=_positive_int, default=S, help="indexed images (default 10000)")
    e.add_argument("--positive-count", dest="positive_count", type=_positive_int, default=S, help="queried references (default 500)")
    e.add_argument("--negative-count", dest="negative_count", type=_positive_int, default=S, help="non-indexed queries (default 2000)")
    e.add_argument("--k", type=_positive_int, default=S, help="candidates per query (default 10)")
    e.add_argument("--modes", default=S, help="comma list of passive,active")
    e.add_argument("--suite", default=S, help="comma list of transforms, e.g. blur:2,rotate:90")
    e.add_argument("--tau-steps", dest="tau_steps", type=_count, default=S, help="decimate reported PR curves (0: all points)")
    e.add_argument("--reference-dir", dest="reference_dir", default=S, help="use a corpus directory as references")
    e.add_argument("--weights", default=S, help="extractor weight file (default: initialised from --seed)")
    e.add_argument("--save-images", dest="save_images", action="store_true", default=S, help="write activated PPMs")
    e.add_argument("--batch-size", dest="batch_size", type=_positive_int, default=S, help="extraction batch size")
    _activation_flags(e)
    return p


def _activation_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--alpha", type=float, default=S, help="JND scaling (default 3)")
    p.add_argument("--lambda", dest="lam", type=float, default=S, help="weight of the image loss (default 1)")
    p.add_argument("--lr", type=float, default=S, help="Adam step size in pixel units (default 1)")
    p.add_argument("--steps", type=_count, default=S, help="optimisation steps (default 10)")
    if p.prog.endswith("activate"):
        p.add_argument("--loss", dest="loss_kind", default=S, help="indexation loss (default: the index family)")
    p.add_argument("--eot-samples", dest="eot_samples", type=_positive_int, default=S, help="EoT samples (1: no EoT)")


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file {path} is not valid JSON: {exc.msg}", exc.pos) from exc
    if not isinstance(data, dict):
        raise FormatError(f"config file {path} must hold a JSON object")
    return data


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags into one flat dict."""
    cmd = args.command
    globals_ = ("seed", "threads", "out", "verbose")
    allowed = set(globals_) | set(DEFAULTS[cmd])
    settings = {k: DEFAULTS[k] for k in globals_}
    settings.update(DEFAULTS[cmd])
    if args.config:
        data = _load_config_file(args.config)
        section = data.get(cmd, {})
        if not isinstance(section, dict):
            raise FormatError(f"config section {cmd!r} must be a JSON object")
        top = {k: v for k, v in data.items() if k not in DEFAULTS or not isinstance(DEFAULTS[k], dict)}
        for layer in (top, section):
            for k, v in layer.items():
                key = "lam" if k == "lambda" else k.replace("-", "_")
                if key not in allowed:
                    raise InvalidArgumentError(f"unknown setting {k!r} for command {cmd!r} in {args.config}")
                settings[key] = v
    for k, v in vars(args).items():
        if k not in ("command", "config"):
            settings[k] = v
    if settings["threads"] is None:
        settings["threads"] = os.cpu_count() or 1
    return settings


# ---------------------------------------------------------------------------
# shared helpers


def _require(settings: dict, key: str, flag: str) -> str:
    if settings.get(key) in (None, ""):
        raise InvalidArgumentError(f"{flag} is required")
    return settings[key]


def _out_dir(settings: dict, default: str) -> Path:
    out = Path(settings["out"] or default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _weights(settings: dict):
    path = settings.get("weights")
    return load_weights(path) if path else init_weights(int(settings["seed"]))


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _corpus(path: str) -> list:
    items = load_corpus_dir(_existing(path, "corpus directory"))
    if not items:
        raise InvalidArgumentError(f"no images in {path}")
    return items


# ---------------------------------------------------------------------------
# commands


def cmd_gen(settings: dict) -> int:
    out = _out_dir(settings, "corpus")
    with _Stage("gen"):
        manifest = write_corpus(out, int(settings["seed"]), int(settings["count"]), int(settings["size"]))
    print(manifest)
    return EXIT_OK


def cmd_train(settings: dict) -> int:
    out = _out_dir(settings, "run")
    with _Stage("load"):
        weights = _weights(settings)
        items = _corpus(_require(settings, "images", "--images"))
    with _Stage("extract"):
        feats = extract_batch(weights, [im for _, im in items])
    with _Stage("train"):
        index = build_index(get_preset(settings["preset"]), feats, derive_seed(int(settings["seed"]), "index"))
    with _Stage("write"):
        save_index(index, out / INDEX_FILE)
        save_weights(weights, out / WEIGHTS_FILE)
    print(out / INDEX_FILE)
    return EXIT_OK


def cmd_add(settings: dict) -> int:
    out = _out_dir(settings, "run")
    with _Stage("load"):
        index = load_index(_existing(_require(settings, "index", "--index"), "index file"))
        weights = _weights(settings)
        items = _corpus(_require(settings, "images", "--images"))
    with _Stage("extract"):
        feats = extract_batch(weights, [im for _, im in items])
    with _Stage("add"):
        index.add_batch(feats, [i for i, _ in items])
    with _Stage("write"):
        save_index(index, out / INDEX_FILE)
    print(out / INDEX_FILE)
    return EXIT_OK


def _activation_config(settings: dict, family: str, overrides: dict | None = None) -> ActivationConfig:
    s = dict(settings)
    for k, v in (overrides or {}).items():
        key = "lam" if k == "lambda" else k
        if key not in ("alpha", "lam", "lr", "steps", "loss_kind", "eot_samples"):
            raise InvalidArgumentError(f"unknown activation override {k!r}")
        s[key] = v
    samples = int(s.get("eot_samples") or 1)
    return ActivationConfig(
        alpha=float(s["alpha"]),
        lam=float(s["lam"]),
        lr=float(s["lr"]),
        steps=int(s["steps"]),
        loss_kind=s.get("loss_kind") or family,
        eot=None if samples <= 1 else EotConfig(samples=samples, seed=int(settings["seed"])),
    ).validate()


def _batch_entries(path: str) -> list[tuple[Path, int, dict]]:
    p = _existing(path, "batch manifest")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"batch manifest {p} is not valid JSON: {exc.msg}", exc.pos) from exc
    if isinstance(data, dict):
        data = data.get("images")
    if not isinstance(data, list):
        raise FormatError(f"batch manifest {p} must be a list of entries")
    entries = []
    for e in data:
        try:
            img = Path(e["path"])
            entries.append((img if img.is_absolute() else p.parent / img, int(e["id"]), dict(e.get("overrides") or {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad batch entry {e!r}: {exc}") from exc
    return entries


def cmd_activate(settings: dict) -> int:
    out = _out_dir(settings, "activated")
    with _Stage("load"):
        index = load_index(_existing(_require(settings, "index", "--index"), "index file"))
        weights = _weights(settings)
        if settings.get("batch"):
            entries = [(path, vid, ov, read_ppm(_existing(path, "image"))) for path, vid, ov in _batch_entries(settings["batch"])]
        else:
            images = _require(settings, "images", "--images or --batch")
            entries = [(None, vid, {}, im) for vid, im in _corpus(images)]
        family = getattr(index, "kind", "ivfpq")
        configs = [_activation_config(settings, family, ov) for _, _, ov, _ in entries]
    results = [None] * len(entries)
    with _Stage("activate"):
        groups: dict[ActivationConfig, list[int]] = {}
        for i, c in enumerate(configs):
            groups.setdefault(c, []).append(i)
        for cfg, members in groups.items():
            res = activate_many(
                [entries[i][3] for i in members], weights, index, [entries[i][1] for i in members], cfg,
                batch_size=int(settings["batch_size"]),
            )
            for i, r in zip(members, res):
                results[i] = r
    with _Stage("write"):
        buf = []
        for (_, vid, _, _), r, cfg in zip(entries, results, configs):
            write_ppm(out / f"{vid:06d}.ppm", r.activated)
            # indexation loss of the original and of the written (rounded) image
            target = make_target(index, vid, cfg.loss_kind)
            before = indexation_loss(r.feature_before, target)[0]
            after = indexation_loss(extract(weights, r.activated), target)[0]
            buf.append([vid, repr(r.quality.psnr_db), repr(r.quality.linf), repr(before), repr(after)])
        with open(out / "activation.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "psnr", "linf", "loss_before", "loss_after"])
            w.writerows(buf)
        echo = {
            "seed": int(settings["seed"]),
            "index": str(settings["index"]),
            "images": [{"id": vid, "config": c.to_dict()} for (_, vid, _, _), c in zip(entries, configs)],
        }
        (out / "activation.json").write_text(json.dumps(echo, indent=1, sort_keys=True) + "\n")
    print(out / "activation.csv")
    return EXIT_OK


def _read_vector(path: str) -> np.ndarray:
    p = _existing(path, "vector file")
    if p.suffix == ".npy":
        try:
            return np.load(p, allow_pickle=False).astype(np.float64).ravel()
        except ValueError as exc:
            raise FormatError(f"cannot read {p}: {exc}") from exc
    try:
        return np.array(p.read_text().split(), dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"cannot parse vector file {p}: {exc}") from exc


def cmd_query(settings: dict) -> int:
    with _Stage("load"):
        index = load_index(_existing(_require(settings, "index", "--index"), "index file"))
    with _Stage("feature"):
        if settings.get("image"):
            vec = extract(_weights(settings), read_ppm(_existing(settings["image"], "query image")))
        elif settings.get("vector"):
            vec = _read_vector(settings["vector"])
        elif settings.get("reconstruct") is not None:
            if not hasattr(index, "reconstruct"):
                raise InvalidArgumentError("this index has no reproduction values (LSH)")
            vec = index.reconstruct(int(settings["reconstruct"]))
        else:
            raise InvalidArgumentError("one of --image, --vector or --reconstruct is required")
        if not np.all(np.isfinite(vec)):
            raise NumericError("query vector has non-finite entries")
    with _Stage("search"):
        nprobe = settings.get("nprobe") or 1
        res = search(index, vec, int(settings["k"]), int(nprobe))
    for vid, d in zip(res.ids.tolist(), res.distances.tolist()):
        print(f"{vid} {float(d)!r}")
    return EXIT_OK


def eval_config(settings: dict) -> ExperimentConfig:
    """Experiment config from merged CLI settings."""
    preset = get_preset(settings["preset"])
    act = None
    act_keys = ("alpha", "lam", "lr", "steps", "eot_samples")
    if any(settings.get(k) is not None for k in act_keys):
        base = ActivationConfig(loss_kind=preset.loss_kind)
        samples = int(settings.get("eot_samples") or 1)
        act = ActivationConfig(
            alpha=base.alpha if settings.get("alpha") is None else float(settings["alpha"]),
            lam=base.lam if settings.get("lam") is None else float(settings["lam"]),
            lr=base.lr if settings.get("lr") is None else float(settings["lr"]),
            steps=base.steps if settings.get("steps") is None else int(settings["steps"]),
            loss_kind=preset.loss_kind,
            eot=None if samples <= 1 else EotConfig(samples=samples, seed=int(settings["seed"])),
        )
    kw = {}
    if settings.get("modes"):
        modes = settings["modes"]
        kw["modes"] = tuple(m.strip() for m in modes.split(",")) if isinstance(modes, str) else tuple(modes)
    if settings.get("suite"):
        suite = settings["suite"]
        items = suite.split(",") if isinstance(suite, str) else suite
        kw["suite"] = tuple(
            TransformSpec.parse(t.strip()) if isinstance(t, str) else TransformSpec.from_dict(t) for t in items
        )
    return ExperimentConfig(
        seed=int(settings["seed"]),
        image_size=int(settings["image_size"]),
        train_count=int(settings["train_count"]),
        reference_count=int(settings["reference_count"]),
        positive_count=int(settings["positive_count"]),
        negative_count=int(settings["negative_count"]),
        preset=preset.name,
        nprobe=settings.get("nprobe"),
        k=int(settings["k"]),
        activation=act,
        tau_steps=int(settings["tau_steps"]),
        reference_dir=settings.get("reference_dir"),
        weights_path=settings.get("weights"),
        out_dir=str(settings["out"] or "report"),
        save_images=bool(settings["save_images"]),
        threads=int(settings["threads"]),
        batch_size=int(settings["batch_size"]),
        **kw,
    ).validate()


def cmd_eval(settings: dict) -> int:
    with _Stage("config"):
        config = eval_config(settings)
        _out_dir({"out": config.out_dir}, "report")
    try:
        report = run_experiment(config)
    except StageError as exc:
        raise CommandError(exc.stage, exc.__cause__ or exc) from exc
    for mode in report.modes():
        print(f"{mode}: mean R@1 {report.mean_recall(mode):.4f}  pooled uAP {report.pooled_micro_ap(mode):.4f}")
    if report.nprobe == 1 and "passive" in report.modes() and report.row("passive", "all").p_f is not None:
        bad = [t for t, (ok, _) in recall_bound_report(report).items() if not ok]
        print("recall bound: " + ("holds for every transform" if not bad else "violated for " + ", ".join(bad)))
    print(Path(config.out_dir) / "report.json")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "add": cmd_add,
    "activate": cmd_activate,
    "query": cmd_query,
    "eval": cmd_eval,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (FormatError, CorruptIndexError, json.JSONDecodeError)):
        return EXIT_FORMAT
    if isinstance(exc, (NumericError, ArithmeticError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, NotFoundError)):
        return EXIT_IO
    if isinstance(exc, (InvalidArgumentError, ValueError, KeyError, TypeError)):
        return EXIT_USAGE
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = "config"
    try:
        settings = resolve_settings(args)
        level = logging.WARNING - 10 * int(settings.get("verbose") or 0)
        logging.basicConfig(level=max(level, logging.DEBUG), format="%(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](settings)
    except CommandError as exc:
        stage, cause = exc.stage, exc.cause
    except (ActiveIndexError, OSError, ValueError) as exc:
        cause = exc
    msg = cause.strerror if isinstance(cause, OSError) and cause.filename and cause.strerror else str(cause)
    if isinstance(cause, OSError) and cause.filename:
        msg = f"{msg}: {cause.filename}"
    print(f"activeindex {args.command}: error [{stage}]: {msg}", file=sys.stderr)
    return exit_code_for(cause)


if __name__ == "__main__":
    sys.exit(main())
