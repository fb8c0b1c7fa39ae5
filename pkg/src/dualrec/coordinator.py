"""Resource allocation between the two agents.

Two coordinators share one interface (``decide(summary) -> AllocationDecision``):
a deterministic rule cascade, and a client for any chat-completion HTTP
endpoint that falls back to the rule cascade whenever the model misbehaves.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Protocol

import httpx

from .domain import ObjectiveVector

log = logging.getLogger(__name__)

ALPHA_MIN = 0.3
ALPHA_MAX = 0.9
PROMPT_VERSION = "coordinator_v1"

ENV_URL = "DUALREC_LLM_URL"
ENV_MODEL = "DUALREC_LLM_MODEL"
ENV_API_KEY = "DUALREC_LLM_API_KEY"


@dataclass(frozen=True)
class OptimizationSummary:
    generation: int
    t_max: int
    epsilon: float
    feasibility_rate: float
    hv_exploit: float
    hv_explore: float
    hv_improvement: float
    avg_violation: float
    best_objectives: ObjectiveVector
    current_alpha: float


@dataclass(frozen=True)
class AllocationDecision:
    alpha: float
    rationale: str
    source: str  # "rule" | "llm" | "llm-fallback"


def clamp_alpha(alpha: float, lo: float = ALPHA_MIN, hi: float = ALPHA_MAX) -> float:
    return round(min(hi, max(lo, alpha)), 6)


def rule_based_alpha(summary: OptimizationSummary) -> AllocationDecision:
    """Priority cascade: feasibility alarm, late stagnation, then phase schedule."""
    progress = summary.generation / summary.t_max
    if summary.feasibility_rate < 0.8:
        return AllocationDecision(
            0.55,
            f"Feasibility {summary.feasibility_rate:.0%} is below 80%; prioritizing exploration "
            "to discover constraint-satisfying regions.",
            "rule",
        )
    if summary.hv_improvement < 0.01 and progress > 0.5:
        return AllocationDecision(
            clamp_alpha(summary.current_alpha - 0.15),
            "Hypervolume has stagnated; increasing exploration to escape local optima.",
            "rule",
        )
    if progress <= 0.3:
        alpha, phase = 0.60, "early"
    elif progress <= 0.7:
        alpha, phase = 0.72, "middle"
    else:
        alpha, phase = 0.80, "late"
    return AllocationDecision(
        alpha, f"Constraint satisfaction is stable; applying the {phase}-phase exploitation share.", "rule"
    )


class Coordinator(Protocol):
    def decide(self, summary: OptimizationSummary) -> AllocationDecision: ...


class RuleBasedCoordinator:
    def decide(self, summary: OptimizationSummary) -> AllocationDecision:
        return rule_based_alpha(summary)


@dataclass(frozen=True)
class LLMEndpoint:
    url: str = "http://localhost:11434/v1/chat/completions"
    model: str = "qwen2.5:14b"
    temperature: float = 0.0
    max_tokens: int = 200
    timeout: float = 10.0
    api_key: str | None = field(default=None, repr=False)

    @classmethod
    def from_env(cls, **overrides) -> "LLMEndpoint":
        """Build from config values, letting environment variables win for URL, model and key."""
        base = cls(**overrides)
        return cls(
            url=os.environ.get(ENV_URL, base.url),
            model=os.environ.get(ENV_MODEL, base.model),
            temperature=base.temperature,
            max_tokens=base.max_tokens,
            timeout=base.timeout,
            api_key=os.environ.get(ENV_API_KEY, base.api_key),
        )


def load_prompt(version: str = PROMPT_VERSION) -> tuple[str, Template]:
    text = resources.files("dualrec.prompts").joinpath(f"{version}.txt").read_text(encoding="utf-8")
    system, user = text.split("\n---\n", 1)
    return system.strip(), Template(user)


def render_prompt(summary: OptimizationSummary, version: str = PROMPT_VERSION) -> list[dict]:
    system, template = load_prompt(version)
    best = summary.best_objectives
    user = template.substitute(
        generation=summary.generation,
        t_max=summary.t_max,
        epsilon=f"{summary.epsilon:.6g}",
        feasibility_rate=f"{summary.feasibility_rate:.4f}",
        avg_violation=f"{summary.avg_violation:.4f}",
        hv_exploit=f"{summary.hv_exploit:.5f}",
        hv_explore=f"{summary.hv_explore:.5f}",
        hv_improvement=f"{summary.hv_improvement:.4f}",
        best_relevance=f"{best.relevance:.4f}",
        best_diversity=f"{best.diversity:.4f}",
        best_novelty=f"{best.novelty:.4f}",
        current_alpha=f"{summary.current_alpha:.2f}",
    )
    return [{"role": "system", "content": system}, {"role": "user", "content": user}]


class CoordinatorResponseError(ValueError):
    pass


def parse_allocation(content: str) -> tuple[float, str]:
    """Strictly parse ``{"alpha": number, "rationale": string}``; raise on anything else."""
    try:
        obj = json.loads(content.strip())
    except (json.JSONDecodeError, AttributeError) as exc:
        raise CoordinatorResponseError(f"response is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CoordinatorResponseError("response is not a JSON object")
    alpha = obj.get("alpha")
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not math.isfinite(alpha):
        raise CoordinatorResponseError(f"alpha {alpha!r} is not a number")
    if not 0.0 <= alpha <= 1.0:
        raise CoordinatorResponseError(f"alpha {alpha} outside [0, 1]")
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        raise CoordinatorResponseError("rationale is not a string")
    return float(alpha), rationale


def _request_content(client: httpx.Client, endpoint: LLMEndpoint, messages: list[dict]) -> str:
    body = {
        "model": endpoint.model,
        "messages": messages,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    }
    headers = {"Authorization": f"Bearer {endpoint.api_key}"} if endpoint.api_key else {}
    for attempt in range(2):
        try:
            resp = client.post(endpoint.url, json=body, headers=headers, timeout=endpoint.timeout)
            break
        except httpx.TransportError as exc:
            if attempt == 1:
                raise
            log.info("coordinator transport error (%s); retrying once", exc)
    resp.raise_for_status()
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise CoordinatorResponseError(f"unexpected response shape: {exc!r}") from None


def llm_alpha(
    summary: OptimizationSummary,
    endpoint: LLMEndpoint,
    client: httpx.Client | None = None,
) -> AllocationDecision:
    """Ask the model for alpha; any failure degrades to the rule cascade."""
    owned = client is None
    client = client or httpx.Client()
    try:
        content = _request_content(client, endpoint, render_prompt(summary))
        alpha, rationale = parse_allocation(content)
    except (httpx.HTTPError, CoordinatorResponseError) as exc:
        log.warning("coordinator fallback at generation %d: %s", summary.generation, exc)
        fallback = rule_based_alpha(summary)
        return AllocationDecision(fallback.alpha, fallback.rationale, "llm-fallback")
    finally:
        if owned:
            client.close()
    return AllocationDecision(clamp_alpha(alpha), rationale, "llm")


class LLMCoordinator:
    def __init__(self, endpoint: LLMEndpoint | None = None, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint or LLMEndpoint.from_env()
        self._client = httpx.Client(transport=transport)

    def decide(self, summary: OptimizationSummary) -> AllocationDecision:
        return llm_alpha(summary, self.endpoint, self._client)

    def close(self):
        self._client.close()


def scripted_transport(responses: list) -> httpx.MockTransport:
    """Mock chat-completion server replaying canned message contents in order (cycling).

    Dict entries are JSON-encoded; strings are sent verbatim as the message content.
    """
    state = {"i": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        item = responses[state["i"] % len(responses)]
        state["i"] += 1
        content = item if isinstance(item, str) else json.dumps(item)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})

    return httpx.MockTransport(handler)

