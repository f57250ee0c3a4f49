"""Run the staged pipeline, break it mid-way, resume it, then price the ledger."""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from elicit import MockProvider, load_config, resume, run_pipeline
from elicit.errors import StageFailed
from elicit.mock import MALFORMED
from elicit.pipeline import ledger_cost


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        cfg = load_config(output_dir=str(Path(tmp) / "run"), seed=5, overrides=["generation.n=8"])
        broken = MockProvider(5, lambda c: MALFORMED if c["key"].startswith("interviews:00003") else None)
        try:
            run_pipeline(cfg, provider=broken)
        except StageFailed as exc:
            print(f"first attempt stopped: {exc}")
        manifest = json.loads((cfg.output_dir / "manifest.json").read_text())
        print("stage status:", manifest["stage_status"])

        out = resume(cfg.output_dir)
        manifest = json.loads((out / "manifest.json").read_text())
        print("after resume:", manifest["stage_status"])
        print((out / "report.md").read_text().split("## Needs by agent")[0])

        cost = ledger_cost(out)
        print(f"{cost.calls} calls, {cost.chat_usage.input_tokens} input and "
              f"{cost.chat_usage.output_tokens} output tokens, about ${cost.cost:.2f}")


if __name__ == "__main__":
    main()
