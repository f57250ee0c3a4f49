from __future__ import annotations

import pytest

from elicit.gateway import Gateway, ProviderConfig, RetryPolicy
from elicit.mock import MockProvider
from elicit.prompts import tent_brief


def make_gateway(provider=None, *, max_attempts: int = 3, on_violation: str = "reprompt_with_error",
                 max_in_flight: int = 4) -> Gateway:
    provider = provider if provider is not None else MockProvider(0)
    return Gateway(provider, ProviderConfig(), RetryPolicy(max_attempts, on_violation, ()),
                   max_in_flight=max_in_flight, sleep=lambda s: None)


@pytest.fixture
def brief():
    return tent_brief()


@pytest.fixture
def mock():
    return MockProvider(0)


@pytest.fixture
def gw(mock):
    return make_gateway(mock)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.report_line(i))
