"""Evaluation reports and their JSON / CSV files.

``report.json`` holds everything that is a function of the config (so two
runs with the same config give identical bytes). Wall-clock timings vary from
run to run and go to a separate ``timing.json``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from activeindex.errors import FormatError, InvalidArgumentError
from activeindex.evalharness.metrics import PrPoint, recall_bound_check
from activeindex.imagelab.quality import QualityStats


@dataclass(frozen=True)
class TransformRow:
    mode: str
    transform: str  # suite label, or "all" for the pooled row
    recall_at_1: float
    micro_ap: float
    p_f: float | None  # None for indexes without a coarse quantizer
    max_recall: float
    n_positive: int
    n_negative: int


@dataclass(frozen=True)
class QualitySummary:
    count: int
    psnr_mean: float
    psnr_std: float
    linf_mean: float
    linf_max: float

    @classmethod
    def from_stats(cls, stats: list[QualityStats]) -> QualitySummary:
        if not stats:
            raise InvalidArgumentError("no quality stats to summarise")
        p = np.array([s.psnr_db for s in stats])
        li = np.array([s.linf for s in stats])
        return cls(len(stats), float(p.mean()), float(p.std()), float(li.mean()), float(li.max()))


@dataclass
class EvalReport:
    config: dict
    nprobe: int
    rows: list[TransformRow]
    curves: dict[str, list[PrPoint]] = field(default_factory=dict)
    quality: QualitySummary | None = None
    timing: dict[str, float] = field(default_factory=dict)

    def row(self, mode: str, transform: str) -> TransformRow:
        for r in self.rows:
            if r.mode == mode and r.transform == transform:
                return r
        raise KeyError(f"no row for mode={mode!r} transform={transform!r}")

    def transforms(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.transform != "all" and r.transform not in seen:
                seen.append(r.transform)
        return seen

    def modes(self) -> list[str]:
        return list(dict.fromkeys(r.mode for r in self.rows))

    def mean_recall(self, mode: str) -> float:
        return self.row(mode, "all").recall_at_1

    def pooled_micro_ap(self, mode: str) -> float:
        return self.row(mode, "all").micro_ap

    # -- serialisation -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "activeindex-report/1",
            "config": self.config,
            "nprobe": self.nprobe,
            "rows": [asdict(r) for r in self.rows],
            "quality": None if self.quality is None else asdict(self.quality),
            "curves": {k: [[p.tau, p.precision, p.recall] for p in v] for k, v in self.curves.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        try:
            rows = [TransformRow(**r) for r in d["rows"]]
            curves = {k: [PrPoint(precision=p, recall=r, tau=t) for t, p, r in v] for k, v in d.get("curves", {}).items()}
            quality = None if d.get("quality") is None else QualitySummary(**d["quality"])
            return cls(config=d["config"], nprobe=int(d["nprobe"]), rows=rows, curves=curves, quality=quality)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed report: {exc}") from exc

    @classmethod
    def load(cls, path) -> EvalReport:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"report is not valid JSON: {exc.msg}", exc.pos) from exc

    def rows_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["mode", "transform", "recall_at_1", "micro_ap", "p_f", "max_recall", "n_positive", "n_negative",
             "psnr_mean", "psnr_std", "linf_mean", "linf_max"]
        )
        for r in self.rows:
            q = self.quality if r.mode == "active" else None
            w.writerow(
                [r.mode, r.transform, _fmt(r.recall_at_1), _fmt(r.micro_ap), _fmt(r.p_f), _fmt(r.max_recall),
                 r.n_positive, r.n_negative]
                + ([_fmt(q.psnr_mean), _fmt(q.psnr_std), _fmt(q.linf_mean), _fmt(q.linf_max)] if q else ["", "", "", ""])
            )
        return buf.getvalue()

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "transform", "tau", "precision", "recall"])
        for key, points in self.curves.items():
            mode, transform = key.split("/", 1)
            for p in points:
                w.writerow([mode, transform, _fmt(p.tau), _fmt(p.precision), _fmt(p.recall)])
        return buf.getvalue()

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.csv").write_text(self.rows_csv())
        (out / "pr_curve.csv").write_text(self.curves_csv())
        (out / "timing.json").write_text(json.dumps(self.timing, indent=1, sort_keys=True) + "\n")
        return out / "report.json"


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def recall_bound_report(report: EvalReport, mode: str = "passive") -> dict[str, tuple[bool, float]]:
    """Check max recall <= 1 - p_f + 3 sqrt(p_f (1 - p_f) / n) for every transform of one mode.

    Only meaningful for single-probe runs; other probe counts are rejected.
    """
    if report.nprobe != 1:
        raise InvalidArgumentError(f"the recall bound needs a single-probe report, got nprobe={report.nprobe}")
    out = {}
    for r in report.rows:
        if r.mode != mode or r.transform == "all":
            continue
        if r.p_f is None:
            raise InvalidArgumentError("report has no p_f estimates (index without coarse quantizer)")
        out[r.transform] = recall_bound_check(r.max_recall, r.p_f, r.n_positive, report.nprobe)
    return out

