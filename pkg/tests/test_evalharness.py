import json
import math

import numpy as np
import pytest

from activeindex.errors import FormatError, InvalidArgumentError
from activeindex.evalharness import (
    EvalReport,
    ExperimentConfig,
    FeatureCache,
    QualitySummary,
    StageError,
    TransformRow,
    best_pairs,
    decomposition_check,
    decomposition_relative,
    ivf_failure_rate,
    micro_ap,
    micro_ap_from_pairs,
    recall_at_1,
    recall_bound,
    recall_bound_check,
    recall_bound_report,
    run_experiment,
    with_config,
)
from activeindex.imagelab import TransformSpec
from activeindex.index import SearchResult, train_ivfflat

# -- micro AP ---------------------------------------------------------------


def enumerate_ap(dist, correct, n_pos):
    """Hand enumeration: for each distinct threshold, count declared and correct pairs."""
    ap, prev_recall = 0.0, 0.0
    for tau in sorted(set(dist)):
        declared = [c for d, c in zip(dist, correct) if d <= tau]
        tp = sum(declared)
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / len(declared)
        prev_recall = recall
    return ap


def test_micro_ap_small_hand_case():
    # sorted: 0.1 T, 0.2 F, 0.3 T, 0.4 F  with 3 positives (one never matched)
    ap, curve = micro_ap_from_pairs([0.3, 0.1, 0.4, 0.2], [True, True, False, False], 3)
    assert ap == pytest.approx(1 / 3 * 1.0 + 1 / 3 * 2 / 3)
    assert [(p.tau, p.precision, p.recall) for p in curve] == [
        (0.1, 1.0, 1 / 3),
        (0.2, 0.5, 1 / 3),
        (0.3, 2 / 3, 2 / 3),
        (0.4, 0.5, 2 / 3),
    ]


def test_micro_ap_groups_ties():
    # a tie between a correct and a wrong pair enters together: precision 1/2, not 1
    ap, curve = micro_ap_from_pairs([1.0, 1.0], [True, False], 1)
    assert ap == 0.5 and len(curve) == 1


def test_micro_ap_matches_enumeration(rng):
    for _ in range(20):
        n = int(rng.integers(1, 40))
        dist = rng.integers(0, 8, size=n).astype(float)  # many ties
        correct = rng.random(n) < 0.5
        n_pos = int(correct.sum()) + int(rng.integers(0, 3))
        if n_pos == 0:
            continue
        ap, _ = micro_ap_from_pairs(dist, correct, n_pos)
        assert ap == pytest.approx(enumerate_ap(dist.tolist(), correct.tolist(), n_pos), abs=1e-12)


def test_micro_ap_edge_cases():
    assert micro_ap_from_pairs([], [], 2) == (0.0, [])
    assert micro_ap_from_pairs([0.5, 0.6], [True, True], 2)[0] == 1.0
    with pytest.raises(InvalidArgumentError):
        micro_ap_from_pairs([1.0], [True], 0)
    with pytest.raises(InvalidArgumentError):
        micro_ap_from_pairs([1.0], [True, False], 1)


def test_best_pairs_skips_empty_results():
    res = [
        SearchResult(np.array([4, 2]), np.array([0.1, 0.2])),
        SearchResult.empty(),
        SearchResult(np.array([3]), np.array([0.5])),
    ]
    d, c = best_pairs(res, [4, 0, 9])
    assert d.tolist() == [0.1, 0.5] and c.tolist() == [True, False]
    d, c = best_pairs(res)
    assert not c.any()


def test_index_level_metrics(rng):
    x = rng.normal(size=(200, 8))
    index = train_ivfflat(x, 1)
    index.add_batch(x[:50], range(50))
    assert recall_at_1(index, x[:50], range(50)) == 1.0
    ap, _ = micro_ap(index, x[:10] + 1e-3, range(10), x[100:120])
    assert 0 < ap <= 1
    with pytest.raises(InvalidArgumentError):
        recall_at_1(index, x[:0], [])


# -- bounds and identities --------------------------------------------------


def test_recall_bound_values():
    assert recall_bound(0.0, 10) == 1.0
    assert recall_bound(0.25, 100) == pytest.approx(0.75 + 3 * math.sqrt(0.25 * 0.75 / 100))
    ok, margin = recall_bound_check(0.8, 0.3, 5000)
    assert not ok and margin < 0
    with pytest.raises(InvalidArgumentError):
        recall_bound_check(0.5, 0.1, 10, nprobe=2)


def test_decomposition_identity(rng):
    for _ in range(100):
        x, xh, q = rng.normal(size=(3, 16))
        assert decomposition_check(x, xh, q) < 1e-12
        assert decomposition_relative(x, xh, q) < 1e-14
    with pytest.raises(InvalidArgumentError):
        decomposition_check(np.zeros(2), np.zeros(3), np.zeros(2))


def test_ivf_failure_rate(rng):
    x = rng.normal(size=(300, 4))
    index = train_ivfflat(x, 6, seed=0)
    assert ivf_failure_rate(index, x, x) == 0.0
    rate = ivf_failure_rate(index, x, x + rng.normal(0, 1.0, size=x.shape))
    assert 0 < rate < 1


# -- reports ----------------------------------------------------------------


def sample_report():
    rows = [
        TransformRow("passive", "blur_2", 0.5, 0.25, 0.3, 0.6, 10, 20),
        TransformRow("passive", "all", 0.5, 0.25, 0.3, 0.6, 10, 20),
        TransformRow("active", "blur_2", 0.7, 0.45, 0.1, 0.8, 10, 20),
        TransformRow("active", "all", 0.7, 0.45, 0.1, 0.8, 10, 20),
    ]
    from activeindex.evalharness import PrPoint

    curves = {"passive/blur_2": [PrPoint(1.0, 0.1, 0.2)], "active/blur_2": [PrPoint(0.5, 0.2, 0.3)]}
    return EvalReport({"seed": 1}, 1, rows, curves, QualitySummary(10, 33.0, 1.0, 20.0, 30.0), {"total": 1.0})


def test_report_round_trip_and_files(tmp_path):
    rep = sample_report()
    rep.write(tmp_path)
    back = EvalReport.load(tmp_path / "report.json")
    assert back.to_json() == rep.to_json()
    assert back.mean_recall("active") == 0.7 and back.pooled_micro_ap("passive") == 0.25
    assert back.transforms() == ["blur_2"] and back.modes() == ["passive", "active"]
    assert "timing" not in json.loads((tmp_path / "report.json").read_text())
    assert json.loads((tmp_path / "timing.json").read_text()) == {"total": 1.0}
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0].startswith("mode,transform,recall_at_1") and len(lines) == 5
    assert (tmp_path / "pr_curve.csv").read_text().splitlines()[1] == "passive,blur_2,0.2,1.0,0.1"


def test_report_rejects_malformed(tmp_path):
    (tmp_path / "r.json").write_text("{not json")
    with pytest.raises(FormatError):
        EvalReport.load(tmp_path / "r.json")
    with pytest.raises(FormatError):
        EvalReport.from_dict({"rows": [{"mode": "x"}]})


def test_recall_bound_report():
    res = recall_bound_report(sample_report())
    assert res["blur_2"][0]
    rep = sample_report()
    rep.nprobe = 4
    with pytest.raises(InvalidArgumentError):
        recall_bound_report(rep)


# -- experiment runner ------------------------------------------------------

TINY = ExperimentConfig(
    image_size=32,
    train_count=300,
    reference_count=60,
    positive_count=10,
    negative_count=12,
    suite=(TransformSpec("blur", 1.0), TransformSpec("rotate", 90.0)),
)


def test_config_validation_and_round_trip():
    d = TINY.to_dict()
    assert "out_dir" not in d and "threads" not in d
    again = ExperimentConfig.from_dict({k: v for k, v in d.items() if k != "activation"})
    assert again.to_dict() == d
    for bad in (
        dict(positive_count=100),
        dict(modes=("sideways",)),
        dict(preset="nope"),
        dict(image_size=8),
        dict(suite=()),
    ):
        with pytest.raises(InvalidArgumentError):
            with_config(TINY, **bad)
    with pytest.raises(InvalidArgumentError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_positive_ids_are_seeded():
    assert TINY.positive_ids() == TINY.positive_ids()
    assert len(set(TINY.positive_ids())) == 10
    assert with_config(TINY, seed=1).positive_ids() != TINY.positive_ids()


def test_tiny_experiment_is_deterministic(tmp_path):
    cache = FeatureCache()
    a = run_experiment(with_config(TINY, out_dir=str(tmp_path / "a"), save_images=True), cache)
    b = run_experiment(with_config(TINY, out_dir=str(tmp_path / "b"), save_images=True, threads=3))
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    ims = sorted(p.name for p in (tmp_path / "a" / "activated").iterdir())
    assert len(ims) == 10
    for name in ims:
        assert (tmp_path / "a" / "activated" / name).read_bytes() == (tmp_path / "b" / "activated" / name).read_bytes()
    assert a.modes() == ["passive", "active"]
    assert set(a.transforms()) == {"blur_1", "rotate_90"}
    assert a.quality is not None and a.quality.count == 10
    assert b.row("passive", "all").n_positive == 20


def test_stage_errors_name_the_stage(tmp_path):
    with pytest.raises(StageError) as err:
        run_experiment(with_config(TINY, weights_path=str(tmp_path / "missing.aixw")))
    assert err.value.stage == "extractor"
    with pytest.raises(StageError) as err:
        run_experiment(with_config(TINY, reference_dir=str(tmp_path)))
    assert err.value.stage == "corpus"


def test_identity_full_probe_matches_oracle_scan():
    from activeindex.extractor import extract_batch, init_weights
    from activeindex.imagelab import apply_transform, generate_image
    from activeindex.seeding import derive_seed

    cfg = with_config(TINY, preset="ivf", nprobe=64, modes=("passive",), suite=(TransformSpec("identity"),))
    report = run_experiment(cfg)
    w = init_weights(cfg.seed)
    refs = [generate_image(derive_seed(cfg.seed, "reference"), i, cfg.image_size) for i in range(cfg.reference_count)]
    db = extract_batch(w, refs).astype(np.float32).astype(np.float64)
    ids = cfg.positive_ids()
    q = extract_batch(w, [apply_transform(refs[i], TransformSpec("identity")) for i in ids])
    d = ((q[:, None, :] - db[None]) ** 2).sum(-1)
    oracle = float(np.mean([np.lexsort((np.arange(len(db)), row))[0] == i for row, i in zip(d, ids)]))
    assert report.row("passive", "identity").recall_at_1 == oracle
