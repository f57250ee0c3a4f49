"""Replay the reconstructed classification verdicts through the benchmark runner."""

from __future__ import annotations

from elicit import Gateway, LabeledNeedDataset, LatentCriteria, MockProvider, run_latent_benchmark
from elicit.evaluation import matrices_csv, reconstructed_predictions, replay_responder


def main() -> None:
    ds = LabeledNeedDataset.bundled()
    mock = MockProvider(0, replay_responder(ds, reconstructed_predictions()))
    results = run_latent_benchmark(Gateway(mock), ds, ["zero_shot", "criteria", "criteria_cot"],
                                   LatentCriteria.default())
    print(matrices_csv(results), end="")
    cot = results[next(iter(m for m in results if m.value == "criteria_cot"))]
    for miss in cot.misclassified:
        print(f"\ncriteria_cot missed #{miss['index']} (gold latent={miss['gold']}): {miss['text']}")


if __name__ == "__main__":
    main()
