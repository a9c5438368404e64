"""Negative query generation via an LLM client, with a static fallback.

Negative queries name concepts that co-occur with the target and would
otherwise leak into its query embedding ("waves" for a surfboard, "food"
for a fork). The LLM prompt carries those two pairs as in-context examples;
responses are cached on disk keyed by (model id, label) so repeated runs
are deterministic and offline.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Protocol

import requests

from ..errors import FormatError, RetrievalError
from ..images import sha256_text

PROMPT_TEMPLATE = """You name visual concepts that commonly appear around an object in photos
but are not the object itself. Answer with {count} short concept name(s),
one per line, nothing else.

Object: surfboard
Concepts: waves

Object: fork
Concepts: food

Object: {label}
Concepts:"""

# Known co-occurrence pairs; generic distractor concepts pad the rest.
STATIC_NEGATIVES: dict[str, list[str]] = {
    "surfboard": ["waves"],
    "fork": ["food"],
}
GENERIC_NEGATIVES = [
    "background",
    "scenery",
    "texture",
    "pattern",
    "shadows",
    "sky",
    "grass",
    "road",
    "water",
    "wall",
]


class LLMClient(Protocol):
    model_id: str

    def complete(self, prompt: str) -> str: ...


class HttpLLMClient:
    """Minimal chat-completions client for an OpenAI-style endpoint."""

    def __init__(self, endpoint: str, model_id: str = "default", api_key: str | None = None,
                 session=None, timeout: float = 30.0):
        self.endpoint = endpoint
        self.model_id = model_id
        self._api_key = api_key
        self._session = session or requests.Session()
        self._timeout = timeout

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        try:
            resp = self._session.post(self.endpoint, json=payload, headers=headers,
                                      timeout=self._timeout)
            resp.raise_for_status()
            doc = resp.json()
        except requests.RequestException as exc:
            raise RetrievalError(f"LLM endpoint unreachable: {exc}") from exc
        except ValueError as exc:
            raise FormatError(f"LLM returned non-JSON payload: {exc}", raw=resp.text) from exc
        try:
            return doc["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise FormatError("unexpected LLM response shape", raw=json.dumps(doc)) from exc


class StaticLLMClient:
    """Deterministic offline stand-in built from the fallback tables."""

    model_id = "static-fallback"

    def complete(self, prompt: str) -> str:
        match = re.findall(r"Object:\s*(.+)", prompt)
        label = match[-1].strip() if match else ""
        table = STATIC_NEGATIVES.get(label.lower(), [])
        pool = table + [g for g in GENERIC_NEGATIVES if g.lower() != label.lower()]
        return "\n".join(pool)


class ResponseCache:
    """On-disk cache of raw LLM responses keyed by (model id, label)."""

    def __init__(self, cache_dir: str | Path):
        self._root = Path(cache_dir) / "llm"

    def _path(self, model_id: str, label: str) -> Path:
        return self._root / model_id.replace("/", "_") / f"{sha256_text(label)}.json"

    def get(self, model_id: str, label: str) -> str | None:
        path = self._path(model_id, label)
        if not path.exists():
            return None
        return json.loads(path.read_text())["response"]

    def put(self, model_id: str, label: str, response: str) -> None:
        path = self._path(model_id, label)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"label": label, "response": response}, sort_keys=True) + "\n")
        tmp.replace(path)


def _parse_concepts(raw: str) -> list[str]:
    text = raw.strip()
    items: list[str] = []
    try:
        parsed = json.loads(text)
        if isinstance(parsed, list):
            items = [str(x) for x in parsed]
    except ValueError:
        pass
    if not items:
        for line in text.splitlines():
            items.extend(part.strip(" \t-*\"'.") for part in line.split(","))
    return [it for it in (i.strip() for i in items) if it]


def generate_negative_queries(
    label: str,
    count: int,
    client: LLMClient | None = None,
    cache: ResponseCache | None = None,
    allow_fallback: bool = True,
) -> list[str]:
    """Return ``count`` distinct negative query strings for ``label``.

    None of them equals the label (case-insensitively). The response cache,
    when provided, makes the result deterministic and network-free on
    repeat calls. With no client, the static fallback is used unless
    disabled, in which case a retrieval error is raised.
    """
    if not label.strip():
        raise ValueError("label must be non-empty")
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []

    if client is None:
        if not allow_fallback:
            raise RetrievalError("no LLM client configured and fallback disabled")
        client = StaticLLMClient()

    raw = cache.get(client.model_id, label) if cache else None
    if raw is None:
        prompt = PROMPT_TEMPLATE.format(label=label, count=count)
        raw = client.complete(prompt)
        if cache:
            cache.put(client.model_id, label, raw)

    concepts = _parse_concepts(raw)
    if not concepts:
        raise FormatError(f"could not parse any concept from LLM output for '{label}'", raw=raw)

    result: list[str] = []
    seen: set[str] = {label.strip().lower()}
    for concept in concepts:
        low = concept.lower()
        if low in seen:
            continue
        seen.add(low)
        result.append(concept)
        if len(result) == count:
            return result

    if allow_fallback:
        for concept in GENERIC_NEGATIVES:
            if concept.lower() in seen:
                continue
            seen.add(concept.lower())
            result.append(concept)
            if len(result) == count:
                return result
    raise FormatError(
        f"LLM yielded {len(result)} usable concepts for '{label}', needed {count}", raw=raw
    )
