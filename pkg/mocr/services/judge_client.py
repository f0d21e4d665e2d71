# mocr/services/judge_client.py
"""
Vision-language judge over HTTP.

Wire shape is the usual chat-completion convention: POST {model, messages}
to base_url + path, read choices[0].message.content. Timeouts, connection
errors, 429 and 5xx are retried with exponential backoff (Retry-After honoured);
401/403 and other 4xx fail immediately.
"""
from __future__ import annotations

import asyncio
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable, Dict, Optional

import httpx

from mocr.errors import (
    ConfigError,
    CredentialError,
    JudgeError,
    PermanentJudgeError,
    TransportError,
    UnparseableVerdictError,
)
from mocr.prompting import JudgeRequest, JudgeResponse, PromptTemplate, parse_verdict_details, render_prompt

logger = logging.getLogger(__name__)

Sleep = Callable[[float], Awaitable[None]]

DEFAULT_API_KEY_ENV = "MOCR_JUDGE_API_KEY"


@dataclass(frozen=True)
class JudgeEndpointConfig:
    base_url: str = "https://api.openai.com"
    path: str = "/v1/chat/completions"
    model: str = "gpt-4o"
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 1.0
    max_in_flight: int = 8
    rate: float = 0.0  # requests per second, 0 = unlimited
    api_key: Optional[str] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ConfigError(f"judge timeout must be > 0 (got {self.timeout})")
        if self.max_retries < 0:
            raise ConfigError(f"judge max retries must be >= 0 (got {self.max_retries})")
        if self.max_in_flight < 1:
            raise ConfigError(f"judge in-flight limit must be >= 1 (got {self.max_in_flight})")
        if self.backoff_base < 0 or self.rate < 0:
            raise ConfigError("judge backoff base and rate must be >= 0")

    def token(self) -> str:
        return self.api_key or os.getenv(self.api_key_env, "")


class TokenBucket:
    """Request-rate limiter shared by every caller of one client."""

    def __init__(
        self,
        rate: float,
        capacity: float = 1.0,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Sleep = asyncio.sleep,
    ) -> None:
        self.rate = rate
        self.capacity = capacity
        self.tokens = capacity
        self._clock = clock
        self._sleep = sleep
        self._stamp = clock()
        self._lock = asyncio.Lock()

    async def acquire(self) -> None:
        if self.rate <= 0:
            return
        async with self._lock:
            while True:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                await self._sleep((1.0 - self.tokens) / self.rate)


def _retry_after(response: httpx.Response) -> Optional[float]:
    value = response.headers.get("Retry-After")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def _message_text(body: Any) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        return "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return content or ""


class HttpJudge:
    """Shareable across concurrent battles; retry state lives in each call."""

    def __init__(
        self,
        config: JudgeEndpointConfig,
        template: PromptTemplate,
        *,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        sleep: Sleep = asyncio.sleep,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.config = config
        self.template = template
        self._transport = transport
        self._sleep = sleep
        self._client: Optional[httpx.AsyncClient] = None
        self._slots = asyncio.Semaphore(config.max_in_flight)
        self._bucket = TokenBucket(config.rate, clock=clock, sleep=sleep)

    def _http(self) -> httpx.AsyncClient:
        if self._client is None:
            self._client = httpx.AsyncClient(
                base_url=self.config.base_url,
                timeout=self.config.timeout,
                transport=self._transport,
            )
        return self._client

    async def aclose(self) -> None:
        if self._client is not None:
            await self._client.aclose()
            self._client = None

    async def __aenter__(self) -> "HttpJudge":
        return self

    async def __aexit__(self, *exc) -> None:
        await self.aclose()

    def payload(self, request: JudgeRequest) -> Dict[str, Any]:
        return {
            "model": self.config.model,
            "messages": render_prompt(self.template, request),
            "temperature": 0,
        }

    async def _post(self, body: Dict[str, Any], token: str) -> httpx.Response:
        async with self._slots:
            await self._bucket.acquire()
            return await self._http().post(
                self.config.path,
                json=body,
                headers={"Authorization": f"Bearer {token}"},
            )

    async def judge(self, request: JudgeRequest) -> JudgeResponse:
        token = self.config.token()
        if not token:
            raise CredentialError(f"judge credentials missing: set {self.config.api_key_env}")
        body = self.payload(request)

        delay = 0.0
        last: Optional[JudgeError] = None
        attempts = 0
        for attempt in range(self.config.max_retries + 1):
            attempts = attempt + 1
            wait_hint: Optional[float] = None
            try:
                response = await self._post(body, token)
            except httpx.TimeoutException as e:
                last = TransportError(f"judge request timed out: {e}", attempts=attempts)
            except httpx.TransportError as e:
                last = TransportError(f"judge connection failed: {type(e).__name__}: {e}", attempts=attempts)
            else:
                status = response.status_code
                if status in (401, 403):
                    raise CredentialError(f"judge rejected credentials (HTTP {status})", attempts=attempts)
                if status == 429 or status >= 500:
                    wait_hint = _retry_after(response)
                    last = TransportError(f"judge returned HTTP {status}", attempts=attempts, raw=response.text)
                elif status >= 400:
                    raise PermanentJudgeError(f"judge returned HTTP {status}", attempts=attempts, raw=response.text)
                else:
                    try:
                        raw = _message_text(response.json())
                    except (ValueError, KeyError, IndexError, TypeError, AttributeError):
                        last = UnparseableVerdictError(
                            "judge response is not a chat completion", attempts=attempts, raw=response.text
                        )
                    else:
                        try:
                            verdict, reason = parse_verdict_details(raw)
                        except UnparseableVerdictError as e:
                            last = UnparseableVerdictError(str(e), attempts=attempts, raw=raw)
                        else:
                            return JudgeResponse(raw=raw, verdict=verdict, explanation=reason, attempts=attempts)

            if attempt == self.config.max_retries:
                break
            # nondecreasing: exponential step, stretched by Retry-After when the server asks
            delay = max(delay, self.config.backoff_base * (2 ** attempt), wait_hint or 0.0)
            logger.warning("judge attempt %d failed (%s); retrying in %.2fs", attempts, last, delay)
            await self._sleep(delay)

        assert last is not None
        last.attempts = attempts
        if isinstance(last, UnparseableVerdictError):
            raise last
        raise TransportError(f"judge failed after {attempts} attempt(s): {last}", attempts=attempts, raw=last.raw)
