from __future__ import annotations

import csv
import io
import json
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from elicit.errors import (
    DegenerateVariance,
    ProviderUnreachable,
    UndefinedMetric,
    UndefinedScore,
    ValidationFailure,
)
from elicit.evaluation import (
    ConfusionMatrix,
    LabeledNeedDataset,
    PricingModel,
    agreement_fscore,
    benchmark_json,
    classification_metrics,
    cost_estimate,
    format_usd,
    matrices_csv,
    pooled_t_test,
    precision,
    recall,
    reconstructed_predictions,
    replay_responder,
    run_latent_benchmark,
)
from elicit.gateway import TokenUsage
from elicit.mock import MockProvider
from elicit.models import ClassificationMode
from elicit.needs import LatentCriteria

from conftest import make_gateway

Z, C, COT = ClassificationMode.zero_shot, ClassificationMode.criteria, ClassificationMode.criteria_cot
PUBLISHED = {Z: (0.7273, 0.8000, 0.7619), C: (1.0000, 0.8500, 0.9189), COT: (0.9500, 0.9500, 0.9500)}
MATRICES = {Z: ConfusionMatrix(16, 6, 4, 14), C: ConfusionMatrix(17, 0, 3, 20), COT: ConfusionMatrix(19, 1, 1, 19)}


def rounded(m):
    return tuple(round(x, 4) for x in (m.precision, m.recall, m.f1))


def test_agreement_fscore():
    assert agreement_fscore(109, 21, 24) == pytest.approx(0.8289, abs=1e-4)
    assert round(agreement_fscore(109, 21, 24), 2) == 0.83
    assert agreement_fscore(10, 0, 0) == 1.0
    assert agreement_fscore(0, 5, 5) == 0.0
    with pytest.raises(UndefinedScore):
        agreement_fscore(0, 0, 0)
    with pytest.raises(ValidationFailure):
        agreement_fscore(-1, 0, 3)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_agreement_symmetric(tp, fp, fn):
    if 2 * tp + fp + fn:
        assert agreement_fscore(tp, fp, fn) == agreement_fscore(tp, fn, fp)


@pytest.mark.parametrize("mode", [Z, C, COT])
def test_table_rows(mode):
    assert rounded(classification_metrics(MATRICES[mode])) == PUBLISHED[mode]


def test_reconstruction_is_unique():
    """Enumerate every matrix over a 20/20 split; each published row has one solution."""
    for mode, row in PUBLISHED.items():
        hits = []
        for tp in range(21):
            for fp in range(21):
                cm = ConfusionMatrix(tp, fp, 20 - tp, 20 - fp)
                m = classification_metrics(cm)
                if m.f1 is not None and rounded(m) == row:
                    hits.append(cm)
        assert hits == [MATRICES[mode]]


@given(st.integers(1, 50), st.integers(0, 50), st.integers(1, 50), st.integers(0, 50), st.integers(0, 50))
def test_metrics_ignore_tn(tp, fp, fn, tn1, tn2):
    assert classification_metrics(ConfusionMatrix(tp, fp, fn, tn1)) == classification_metrics(
        ConfusionMatrix(tp, fp, fn, tn2))


def test_undefined_metrics_reported_per_metric():
    with pytest.raises(UndefinedMetric):
        precision(ConfusionMatrix(0, 0, 3, 5))
    with pytest.raises(UndefinedMetric):
        recall(ConfusionMatrix(0, 2, 0, 5))
    m = classification_metrics(ConfusionMatrix(0, 0, 3, 5))
    assert m.precision is None and m.recall == 0.0 and m.f1 is None and m.undefined == ("precision", "f1")
    with pytest.raises(ValidationFailure):
        ConfusionMatrix(-1, 0, 0, 0)


def test_from_predictions():
    cm = ConfusionMatrix.from_predictions([True, True, False, False], [True, False, True, False])
    assert cm == ConfusionMatrix(1, 1, 1, 1)


def test_pooled_t_test():
    t, df = pooled_t_test(10.875, 2.322, 20, 8.825, 3.201, 20)
    assert t == pytest.approx(2.318, abs=1e-3) and df == 38
    # independent recomputation from the definition
    sp = ((19 * 2.322**2 + 19 * 3.201**2) / 38) ** 0.5
    assert t == pytest.approx((10.875 - 8.825) / (sp * (2 / 20) ** 0.5), rel=1e-12)
    assert pooled_t_test(5, 1, 10, 5, 1, 10) == (0.0, 18)
    with pytest.raises(ValidationFailure):
        pooled_t_test(1, 1, 1, 1, 1, 5)
    with pytest.raises(DegenerateVariance):
        pooled_t_test(3, 0, 5, 3, 0, 5)
    assert pooled_t_test(4, 0, 5, 3, 0, 5)[0] == float("inf")


@given(st.floats(-100, 100), st.floats(0.1, 10), st.integers(2, 50), st.floats(-100, 100), st.floats(0.1, 10),
       st.integers(2, 50))
def test_t_antisymmetric(m1, s1, n1, m2, s2, n2):
    assert pooled_t_test(m1, s1, n1, m2, s2, n2)[0] == pytest.approx(-pooled_t_test(m2, s2, n2, m1, s1, n1)[0])


def test_t_against_scipy():
    from scipy.stats import ttest_ind_from_stats

    ref = ttest_ind_from_stats(10.875, 2.322, 20, 8.825, 3.201, 20, equal_var=True).statistic
    assert pooled_t_test(10.875, 2.322, 20, 8.825, 3.201, 20)[0] == pytest.approx(ref, rel=1e-12)


# -- dataset and benchmark --------------------------------------------------------------


def test_bundled_dataset_split():
    ds = LabeledNeedDataset.bundled()
    assert len(ds.entries) == 40 and sum(ds.gold) == 20
    texts = [e.text for e in ds.entries]
    assert len(set(texts)) == 40
    assert any("field of view" in t for t in texts[:20])


def test_dataset_validation(tmp_path):
    with pytest.raises(ValueError):
        LabeledNeedDataset.from_json("[]")
    with pytest.raises(ValueError):
        LabeledNeedDataset.from_json('[{"text": " ", "latent": true}]')
    p = tmp_path / "d.json"
    p.write_text('[{"text": "x", "latent": false}]')
    assert LabeledNeedDataset.load(p).gold == [False]


def test_reconstructed_predictions_give_matrices():
    gold = LabeledNeedDataset.bundled().gold
    for mode, preds in reconstructed_predictions().items():
        assert ConfusionMatrix.from_predictions(gold, preds) == MATRICES[mode]


def test_benchmark_replay_reproduces_table():
    ds = LabeledNeedDataset.bundled()
    mock = MockProvider(0, replay_responder(ds, reconstructed_predictions()))
    res = run_latent_benchmark(make_gateway(mock, max_in_flight=8), ds, [Z, C, COT], LatentCriteria.default())
    for mode in (Z, C, COT):
        assert res[mode].matrix == MATRICES[mode]
        assert res[mode].matrix.total == 40
        assert rounded(res[mode].metrics) == PUBLISHED[mode]
    assert len(res[Z].misclassified) == 10 and len(res[COT].misclassified) == 2
    assert all(m["reasoning"] for m in res[COT].misclassified)
    assert len(mock.calls) == 120 and all(c["temperature"] == 0.0 for c in mock.calls)
    out = json.loads(benchmark_json(res))
    assert out["criteria"]["matrix"] == {"tp": 17, "fp": 0, "fn": 3, "tn": 20}
    rows = list(csv.DictReader(io.StringIO(matrices_csv(res))))
    assert [r["f1"] for r in rows] == ["0.7619", "0.9189", "0.9500"]


def test_single_entry_benchmark():
    for gold, expected in ((True, ConfusionMatrix(1, 0, 0, 0)), (False, ConfusionMatrix(0, 0, 0, 1))):
        ds = LabeledNeedDataset.from_json(json.dumps([{"text": "a need", "latent": gold}]))
        mock = MockProvider(0, replay_responder(ds, {Z: [gold]}))
        assert run_latent_benchmark(make_gateway(mock), ds, [Z])[Z].matrix == expected


def test_benchmark_requires_criteria(gw):
    with pytest.raises(ValidationFailure):
        run_latent_benchmark(gw, LabeledNeedDataset.bundled(), [C])


def test_provider_error_voids_only_its_mode():
    ds = LabeledNeedDataset.bundled()
    replay = replay_responder(ds, reconstructed_predictions())

    def script(call):
        if call["key"] == "benchmark:criteria:00003":
            return ProviderUnreachable("down")
        return replay(call)

    res = run_latent_benchmark(make_gateway(MockProvider(0, script)), ds, [Z, C, COT], LatentCriteria.default())
    assert res[C].matrix is None and "down" in res[C].error
    assert res[Z].matrix == MATRICES[Z] and res[COT].matrix == MATRICES[COT]
    assert ",,,," in matrices_csv(res)


# -- cost ------------------------------------------------------------------------------


def test_cost_examples():
    p = PricingModel()
    assert cost_estimate(TokenUsage(1_000_000, 1_000_000), p) == Decimal("40")
    assert cost_estimate(TokenUsage(0, 80_000), p) == Decimal("2.4")
    assert format_usd(cost_estimate(TokenUsage(0, 80_000), p)) == "2.40"
    assert format_usd(cost_estimate(TokenUsage(0, 0), p)) == "0.00"


@given(st.lists(st.tuples(st.integers(0, 10**7), st.integers(0, 10**7)), max_size=20))
def test_cost_additive(entries):
    p = PricingModel(input_price_per_1m=Decimal("2.5"), output_price_per_1m=Decimal("7"))
    usages = [TokenUsage(a, b) for a, b in entries]
    assert cost_estimate(TokenUsage.total(usages), p) == sum((cost_estimate(u, p) for u in usages), Decimal(0))


def test_pricing_nonnegative():
    with pytest.raises(ValueError):
        PricingModel(input_price_per_1m=Decimal("-1"))
