"""Deterministic offline provider.

Chat replies are filled from the requested JSON schema and phrase pools.
Each reply is a pure function of (seed, full prompt, request key, attempt),
so concurrent fan-out cannot change any output. Embeddings are a hashed
bag-of-words projection of the text onto the unit sphere: identical texts
give identical vectors and texts sharing words land close together.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import threading
from collections import deque
from typing import Any, Callable, Mapping, Sequence

from .gateway import Completion, ProviderConfig, TokenUsage

MALFORMED = '{"this is": not valid json'

_QUALIFIERS = [
    "Young", "Retired", "Solo", "Seasoned", "Novice", "Urban", "Rural", "Coastal", "Alpine",
    "Desert", "Budget", "Elderly", "Visually Impaired", "Wheelchair-using", "Night-shift",
    "Left-handed", "Expedition", "Weekend", "Remote", "Arctic", "Tropical", "Minimalist",
]
_ROLES = [
    "Backpacker", "Photographer", "Field Researcher", "Festival-goer", "Scout Leader",
    "Hunter", "Parent", "Rock Climber", "Cyclist", "Teacher", "Volunteer", "Nomad",
    "Birdwatcher", "Paramedic", "Fisher", "Runner", "Surveyor", "Kayaker", "Musician",
    "Geologist", "Ranger", "Student", "Carpenter", "Astronomer",
]
_ACTIVITIES = [
    "travels long distances on foot", "works outdoors before sunrise", "carries heavy equipment",
    "moves camp every day", "hosts large groups", "operates alone in remote places",
    "has limited grip strength", "needs quiet for recording sound", "sets up in strong wind",
    "relies on public transport", "stays for weeks at one site", "uses the product in the dark",
]
_CONDITIONS = [
    "in freezing temperatures", "in heavy rain", "on rocky ground", "in deep sand",
    "at high altitude", "in dense forest", "on a tight budget", "with small children",
    "with a service dog", "near the coastline", "in extreme heat", "after long shifts",
]
_ACTIONS = [
    "unpacked the {p} and laid out the parts", "tried to assemble the frame",
    "secured the {p} against the wind", "adjusted the ventilation openings",
    "moved gear inside the {p}", "packed the {p} back into its bag",
    "searched for the entrance in low light", "repaired a small tear",
]
_OBSERVATIONS = [
    "the parts were easy to identify", "the fabric felt lighter than expected",
    "the clips were stiff and small", "condensation built up quickly",
    "the instructions assumed two people", "the colors made it easy to orient",
]
_CHALLENGES = [
    "needed more strength than I have", "took far longer than planned",
    "could not see the small connectors", "the stakes would not hold in the ground",
    "had to ask someone else for help", "the bag was too tight to close",
]
_NEEDS = [
    "a {p} that sets itself up without poles",
    "oversized pull tabs that work with gloves",
    "a built-in light that guides assembly step by step",
    "a floor that resists tears from sharp rocks",
    "modular panels that join several units together",
    "an anchoring system that adapts to wind",
    "a lighter packed weight",
    "a lower price for the same quality",
]
_THEMES = [
    "Service and Field Work", "Outdoor Recreation", "Adventure and Exploration",
    "Family Activities", "Accessibility", "Extreme Environments", "Budget Travel",
]

_TOKEN = re.compile(r"[a-z0-9]+")
_PRODUCT = re.compile(r"^Product:\s*(.+)$", re.M)


def _digest(*parts: Any) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, ensure_ascii=False, sort_keys=True).encode())
        h.update(b"\x00")
    return h.digest()


class MockProvider:
    """Offline provider with optional scripted responses.

    ``script`` is one of:

    * an ordered sequence of canned replies served to successive chat calls;
    * a mapping from response-schema title to such a sequence;
    * a responder ``f(call) -> reply`` given the call record (``key``,
      ``attempt``, ``schema``, ``messages``). Unlike the queue forms it does
      not depend on call order, so it stays deterministic under fan-out.

    A reply may be a string (served verbatim), a dict (JSON-encoded), ``None``
    (fall through to the template filler) or an exception instance (raised).
    """

    def __init__(
        self,
        seed: int = 0,
        script: Sequence[Any] | Mapping[str, Sequence[Any]] | Callable[[dict], Any] | None = None,
        *,
        embedding_dim: int = 64,
    ) -> None:
        self.seed = seed
        self.provider_id = f"mock:{seed}"
        self.embedding_dim = embedding_dim
        self._lock = threading.Lock()
        self.calls: list[dict[str, Any]] = []
        self.embed_calls: list[list[str]] = []
        self._responder = script if callable(script) else None
        if script is None or self._responder is not None:
            self._global: deque | None = None
            self._by_schema: dict[str, deque] = {}
        elif isinstance(script, Mapping):
            self._global = None
            self._by_schema = {k: deque(v) for k, v in script.items()}
        else:
            self._global = deque(script)
            self._by_schema = {}

    # -- scripting -----------------------------------------------------------

    def _next_scripted(self, title: str) -> tuple[bool, Any]:
        with self._lock:
            queue = self._global if self._global is not None else self._by_schema.get(title)
            if queue:
                return True, queue.popleft()
        return False, None

    def calls_for(self, schema_title: str) -> list[dict[str, Any]]:
        with self._lock:
            return [c for c in self.calls if c["schema"] == schema_title]

    # -- provider protocol ---------------------------------------------------

    def complete(
        self,
        messages: list[dict[str, str]],
        *,
        config: ProviderConfig,
        temperature: float,
        schema: dict[str, Any],
        key: str,
        attempt: int,
    ) -> Completion:
        title = schema.get("title", "")
        call = {"messages": [dict(m) for m in messages], "schema": title, "key": key, "attempt": attempt,
                "temperature": temperature}
        with self._lock:
            self.calls.append(call)
        if self._responder is not None:
            entry = self._responder(call)
            hit = True
        else:
            hit, entry = self._next_scripted(title)
        if hit and isinstance(entry, BaseException):
            raise entry
        if hit and entry is not None:
            text = entry if isinstance(entry, str) else json.dumps(entry, ensure_ascii=False)
        else:
            rng = random.Random(_digest(self.seed, messages, key, attempt))
            prompt = "\n".join(m["content"] for m in messages)
            text = json.dumps(_Filler(rng, prompt, schema).value(schema, title, ""), ensure_ascii=False)
        n_in = sum(len(m["content"]) for m in messages) // 4
        return Completion(text, TokenUsage(n_in, len(text) // 4))

    def embed(self, texts: list[str], *, config: ProviderConfig) -> tuple[list[list[float]], TokenUsage]:
        with self._lock:
            self.embed_calls.append(list(texts))
        rows = [hashed_embedding(t, self.embedding_dim) for t in texts]
        return rows, TokenUsage(sum(len(t) for t in texts) // 4, 0)


def _token_vector(token: str, dim: int) -> list[float]:
    rng = random.Random(_digest("tok", token))
    return [rng.gauss(0.0, 1.0) for _ in range(dim)]


def hashed_embedding(text: str, dim: int = 64) -> list[float]:
    tokens = _TOKEN.findall(text.lower()) or [text]
    acc = [0.0] * dim
    for tok in tokens:
        for i, x in enumerate(_token_vector(tok, dim)):
            acc[i] += x
    norm = math.sqrt(sum(x * x for x in acc)) or 1.0
    return [x / norm for x in acc]


class _Filler:
    """Builds a schema-valid value from phrase pools."""

    def __init__(self, rng: random.Random, prompt: str, schema: dict[str, Any]) -> None:
        self.rng = rng
        self.prompt = prompt
        self.defs = schema.get("$defs", {})
        m = _PRODUCT.search(prompt)
        self.product = m.group(1).strip() if m else "product"
        self.used_names: set[str] = set()

    def _resolve(self, node: dict[str, Any]) -> dict[str, Any]:
        while "$ref" in node:
            node = self.defs[node["$ref"].rsplit("/", 1)[-1]]
        if "anyOf" in node:
            node = next(n for n in node["anyOf"] if n.get("type") != "null")
            return self._resolve(node)
        return node

    def value(self, node: dict[str, Any], title: str, field: str) -> Any:
        node = self._resolve(node)
        kind = node.get("type")
        if kind == "object":
            sub_title = node.get("title", title)
            return {
                name: self.value(prop, sub_title, name)
                for name, prop in node.get("properties", {}).items()
            }
        if kind == "array":
            lo = node.get("minItems", 0 if field == "needs" else 1)
            hi = node.get("maxItems", max(lo, 3))
            n = self.rng.randint(lo, hi)
            return [self.value(node["items"], title, field) for _ in range(n)]
        if kind == "boolean":
            return self.rng.random() < 0.5
        if kind == "integer":
            return self.rng.randint(node.get("minimum", 0), node.get("maximum", 10))
        if kind == "number":
            return self.rng.random()
        return self.text(title, field)

    def _pick(self, pool: Sequence[str]) -> str:
        return self.rng.choice(pool).replace("{p}", self.product)

    def _name(self) -> str:
        combos = [f"{q} {r}" for q in _QUALIFIERS for r in _ROLES]
        start = self.rng.randrange(len(combos))
        step = 1 + self.rng.randrange(len(combos) - 1)
        while math.gcd(step, len(combos)) != 1:
            step += 1
        for i in range(len(combos)):
            cand = combos[(start + i * step) % len(combos)]
            if cand not in self.used_names and cand not in self.prompt:
                self.used_names.add(cand)
                return cand
        raise RuntimeError("mock name pool exhausted")

    def text(self, title: str, field: str) -> str:
        p = self.product
        if field == "name":
            return self._name()
        if field == "description":
            return f"Someone who {self._pick(_ACTIVITIES)} {self._pick(_CONDITIONS)} and uses a {p} there."
        if field == "reasoning" and title.startswith("Latent"):
            return (
                "Compared the need against the excluded categories and asked whether it changes "
                f"the {p} design or reveals a new usage insight."
            )
        if field == "reasoning":
            return f"Covers users who face conditions {self._pick(_CONDITIONS)}."
        if field == "action":
            return self._pick(_ACTIONS).capitalize() + "."
        if field == "observation":
            return self._pick(_OBSERVATIONS).capitalize() + "."
        if field == "challenge":
            return self._pick(_CHALLENGES).capitalize() + "."
        if field == "answer":
            return (
                f"Given my experience {self._pick(_CONDITIONS)}, I would want "
                f"{self._pick(_NEEDS)} and {self._pick(_NEEDS)}."
            )
        if field == "needs":
            return f"I need {self._pick(_NEEDS)}."
        if field == "themes":
            return self._pick(_THEMES)
        return f"{field or 'value'} {self.rng.randrange(10**6)}"
