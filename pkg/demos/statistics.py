"""Agreement F-score, confusion-matrix metrics, pooled t-test and cost arithmetic."""

from __future__ import annotations

from decimal import Decimal

from elicit import (
    ConfusionMatrix,
    PricingModel,
    TokenUsage,
    agreement_fscore,
    classification_metrics,
    cost_estimate,
    pooled_t_test,
)


def main() -> None:
    print(f"rater agreement F = {agreement_fscore(109, 21, 24):.4f}")
    for label, cm in (("zero_shot", ConfusionMatrix(16, 6, 4, 14)), ("criteria", ConfusionMatrix(17, 0, 3, 20)),
                      ("criteria_cot", ConfusionMatrix(19, 1, 1, 19))):
        m = classification_metrics(cm)
        print(f"{label:<13} P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}")
    t, df = pooled_t_test(10.875, 2.322, 20, 8.825, 3.201, 20)
    print(f"pooled t = {t:.3f} on {df} df")
    pricing = PricingModel(input_price_per_1m=Decimal(10), output_price_per_1m=Decimal(30))
    print(f"1M in + 1M out costs ${cost_estimate(TokenUsage(1_000_000, 1_000_000), pricing):.2f}")


if __name__ == "__main__":
    main()
