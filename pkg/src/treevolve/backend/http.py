"""Adapter for OpenAI-compatible text-completion servers (vLLM, SGLang, ...)."""

from __future__ import annotations

import logging
import math
import os
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import httpx
from tenacity import (
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    wait_random_exponential,
)

from treevolve.backend.base import (
    BackendConfigError,
    BackendError,
    BackendUnavailable,
    GenerationRequest,
    ScoreRequest,
    truncate_at_stop,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "TREEVOLVE_API_KEY"


class _Retryable(BackendError):
    pass


@dataclass
class HttpConfig:
    base_url: str = ""
    model: str = ""
    api_key: str | None = None
    max_in_flight: int = 8
    max_retries: int = 3
    timeout: float = 120.0
    backoff_initial: float = 0.5
    backoff_max: float = 30.0
    # wraps prompts as chat turns, e.g. "<user>{user}</user><assistant>{assistant}"
    chat_template: str | None = None
    # option letter -> token id(s); needed to translate first-token restrictions
    first_token_ids: dict[str, Any] = field(default_factory=dict)
    first_token_bias: float = 100.0
    score_model: str | None = None
    score_mapping: str = "classify"  # or "completion"
    score_output: str = "prob"  # or "logit"
    positive_token: str = "+"
    negative_token: str = "-"


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class HttpBackend:
    """Generator and Scorer over HTTP with an in-flight cap and retries."""

    def __init__(
        self,
        config: HttpConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] | None = None,
    ):
        if not config.base_url or not config.model:
            raise BackendConfigError("http backend needs base_url and model")
        if config.max_in_flight < 1 or config.max_retries < 0:
            raise BackendConfigError("max_in_flight must be >= 1 and max_retries >= 0")
        if config.score_mapping not in ("classify", "completion"):
            raise BackendConfigError(f"unknown score_mapping {config.score_mapping!r}")
        if config.score_output not in ("prob", "logit"):
            raise BackendConfigError(f"unknown score_output {config.score_output!r}")
        self.config = config
        api_key = os.environ.get(API_KEY_ENV) or config.api_key
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._count_lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0
        self._warned_bias = False

    def close(self) -> None:
        self._client.close()

    # -- transport -----------------------------------------------------------

    def _post_once(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        with self._slots:
            with self._count_lock:
                self.in_flight += 1
                self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                resp = self._client.post(path, json=payload)
            except httpx.TransportError as exc:
                raise _Retryable(f"transport error: {exc}") from exc
            finally:
                with self._count_lock:
                    self.in_flight -= 1
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Retryable(f"server returned {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"server rejected request ({resp.status_code}): {resp.text[:200]}")
        return resp.json()

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        kwargs: dict[str, Any] = {}
        if self._sleep is not None:
            kwargs["sleep"] = self._sleep
        retrying = Retrying(
            retry=retry_if_exception_type(_Retryable),
            stop=stop_after_attempt(self.config.max_retries + 1),
            wait=wait_random_exponential(
                multiplier=self.config.backoff_initial, max=self.config.backoff_max
            ),
            reraise=False,
            **kwargs,
        )
        try:
            return retrying(self._post_once, path, payload)
        except RetryError as exc:
            cause = exc.last_attempt.exception()
            raise BackendUnavailable(
                f"{path} failed after {self.config.max_retries + 1} attempts: {cause}"
            ) from cause

    # -- generation ----------------------------------------------------------

    def _wire_prompt(self, req: GenerationRequest) -> str:
        tmpl = self.config.chat_template
        if tmpl is None or req.assistant_start is None:
            return req.prompt
        parts = {
            "{user}": req.prompt[: req.assistant_start],
            "{assistant}": req.prompt[req.assistant_start :],
        }
        # one pass, so slot names inside the prompt text are never substituted
        return re.sub(r"\{user\}|\{assistant\}", lambda m: parts[m.group(0)], tmpl)

    def completion_payload(self, req: GenerationRequest) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "model": self.config.model,
            "prompt": self._wire_prompt(req),
            "n": req.n,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_new_tokens,
        }
        if req.stop:
            payload["stop"] = list(req.stop)
        if req.seed is not None:
            payload["seed"] = req.seed
        if req.allowed_first_tokens:
            bias = {}
            for tok in sorted(req.allowed_first_tokens):
                ids = self.config.first_token_ids.get(tok)
                if ids is None:
                    continue
                for tid in ids if isinstance(ids, list) else [ids]:
                    bias[str(tid)] = self.config.first_token_bias
            if bias:
                payload["logit_bias"] = bias
            elif not self._warned_bias:
                log.warning("no first_token_ids configured; answer restriction not sent")
                self._warned_bias = True
        return payload

    def generate(self, req: GenerationRequest) -> list[str]:
        data = self._post("/completions", self.completion_payload(req))
        try:
            choices = sorted(data["choices"], key=lambda c: c.get("index", 0))
            texts = [c["text"] for c in choices]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        if len(texts) != req.n:
            raise BackendError(f"asked for {req.n} completions, got {len(texts)}")
        return [truncate_at_stop(t, req.stop) for t in texts]

    # -- scoring -------------------------------------------------------------

    def _normalize(self, raw: Any, logit: bool | None = None) -> float:
        """Map a server score to [0, 1]; the last class is the positive one."""
        if logit is None:
            logit = self.config.score_output == "logit"
        if isinstance(raw, list):
            if logit and len(raw) > 1:
                m = max(raw)
                exps = [math.exp(x - m) for x in raw]
                return exps[-1] / sum(exps)
            raw = raw[-1]
        x = float(raw)
        if logit:
            x = _sigmoid(x)
        return min(1.0, max(0.0, x))

    def _score_input(self, req: ScoreRequest) -> str:
        return f"{req.prompt}\n\n{req.prefix}"

    def score_steps(self, reqs: Sequence[ScoreRequest]) -> list[float]:
        if not reqs:
            return []
        model = self.config.score_model or self.config.model
        if self.config.score_mapping == "classify":
            data = self._post(
                "/classify", {"model": model, "input": [self._score_input(r) for r in reqs]}
            )
            try:
                rows = sorted(data["data"], key=lambda d: d.get("index", 0))
                raws = [(d["probs"], None) if "probs" in d else (d["logits"], True) for d in rows]
            except (KeyError, TypeError) as exc:
                raise BackendError(f"malformed classify response: {exc}") from exc
            if len(raws) != len(reqs):
                raise BackendError("classify response length mismatch")
            return [self._normalize(r, logit) for r, logit in raws]
        return [self._score_by_completion(model, r) for r in reqs]

    def _score_by_completion(self, model: str, req: ScoreRequest) -> float:
        payload = {
            "model": model,
            "prompt": self._score_input(req),
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": 20,
        }
        data = self._post("/completions", payload)
        try:
            top = data["choices"][0]["logprobs"]["top_logprobs"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed logprob response: {exc}") from exc
        pos = top.get(self.config.positive_token)
        neg = top.get(self.config.negative_token)
        if pos is None and neg is None:
            return 0.5
        if pos is None:
            return 0.0
        if neg is None:
            return 1.0
        return _sigmoid(pos - neg)


def http_adapter(config: HttpConfig, **kwargs: Any) -> HttpBackend:
    return HttpBackend(config, **kwargs)
