"""Generate a population of simulated users with each strategy (mock provider)."""

from __future__ import annotations

from elicit import Gateway, GenerationRequest, MockProvider, generate_agents
from elicit.models import Origin
from elicit.prompts import tent_brief


def main() -> None:
    brief = tent_brief()
    for strategy, factor in ((Origin.serial, None), (Origin.parallel, None), (Origin.parallel_filtered, 2.0)):
        gw = Gateway(MockProvider(seed=1), max_in_flight=4)
        req = GenerationRequest(brief=brief, n=6, strategy=strategy, overgeneration_factor=factor, seed=1)
        agents = generate_agents(gw, req)
        print(f"{strategy.value}: {len(agents)} agents, {len(gw.ledger.entries)} calls")
        for a in agents[:3]:
            print(f"  {a.name}: {a.description[:70]}")


if __name__ == "__main__":
    main()
