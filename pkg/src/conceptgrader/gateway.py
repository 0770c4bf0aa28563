"""Send rendered prompts to vision-language-model backends.

Three backend kinds share one request path:

* ``http_chat``: an OpenAI-style ``/chat/completions`` endpoint, images sent
  inline as base64 data URLs;
* ``mock``: deterministic replies computed from the triplet's ground truth;
* ``replay``: answers only from a recorded cassette.

A ``Gateway`` wraps one backend with an in-run cache keyed by request hash
(concurrent identical requests share a single call), an optional cassette in
record or replay mode, and retry with exponential backoff for transient
transport failures.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

import httpx

from .dataset import Dataset, Scenario, Triplet
from .errors import CassetteMissError, ConfigError, CredentialError, TransportError
from .prompts import RenderedPrompt, build_prompt

log = logging.getLogger(__name__)

BACKEND_KINDS = ("http_chat", "mock", "replay")
MOCK_RULES = ("echo", "truth_plus_one", "boxed", "no_score", "constant")

# caption-style reply with no score in it, as weaker models sometimes produce
NO_SCORE_TEXT = (
    "<start of description> A hand-drawn sketch of two arrows joined tip to tail, "
    "with a third arrow closing the triangle. <end of description>"
)


@dataclass(frozen=True)
class BackendConfig:
    backend_id: str
    kind: str = "mock"
    model: str = ""
    endpoint: str | None = None
    token_env: str | None = None
    temperature: float = 0.0
    max_tokens: int | None = None
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0
    parallelism: int = 4
    rule: str = "echo"  # mock only; "constant:<k>" for a fixed reply

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(f"backend {self.backend_id!r}: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.backend_id:
            out.append("backend id is empty")
        if self.kind not in BACKEND_KINDS:
            out.append(f"kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if self.parallelism < 1:
            out.append("parallelism must be >= 1")
        if self.max_retries < 0:
            out.append("max_retries must be >= 0")
        if self.temperature < 0:
            out.append("temperature must be >= 0")
        if self.backoff_base < 0:
            out.append("backoff_base must be >= 0")
        if self.kind == "http_chat" and not self.endpoint:
            out.append("http_chat backend needs an endpoint")
        if self.kind == "mock" and self.rule.split(":")[0] not in MOCK_RULES:
            out.append(f"unknown mock rule {self.rule!r}")
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BackendConfig:
        d = dict(d)
        if "id" in d:
            d["backend_id"] = d.pop("id")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown backend config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class CompletionResult:
    triplet: Triplet | None
    backend_id: str
    scenario: str
    raw_text: str
    request_hash: str
    latency: float = field(default=0.0, compare=False)
    from_cache: bool = False
    from_cassette: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        """Serializable form.  Latency is left out so reruns compare equal."""
        d: dict[str, Any] = {
            "backend_id": self.backend_id,
            "scenario": self.scenario,
            "request_hash": self.request_hash,
            "raw_text": self.raw_text,
            "error": self.error,
        }
        if self.triplet is not None:
            d.update(self.triplet.to_dict())
        return d


def _scenario_name(s: Scenario | str) -> str:
    return s.value if isinstance(s, Scenario) else str(s)


def request_hash(config: BackendConfig, prompt: RenderedPrompt) -> str:
    payload = [
        config.backend_id,
        config.model,
        _scenario_name(prompt.scenario),
        prompt.text,
        [ref.sha256 for ref in prompt.attachments],
        float(config.temperature),
    ]
    blob = json.dumps(payload, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def send(self, prompt: RenderedPrompt, images: list[bytes]) -> str: ...


class MockBackend:
    """Replies depend only on (triplet, scenario, rule).

    Rules: ``echo`` returns the ground truth as a tag, ``truth_plus_one``
    adds one and clips at 5, ``boxed`` answers in ``\\boxed{k}`` form,
    ``no_score`` emits a description with no number, ``constant:<k>``
    always tags ``k``.  OCR requests get ``OCR:<first 8 hex of image hash>``.
    """

    def __init__(self, rule: str = "echo", ground_truth: Mapping[Triplet, int] | None = None):
        self.rule = rule
        self.ground_truth = dict(ground_truth or {})

    def send(self, prompt: RenderedPrompt, images: list[bytes]) -> str:
        if _scenario_name(prompt.scenario) == "ocr":
            return "OCR:" + (prompt.attachments[0].sha256[:8] if prompt.attachments else "")
        name, _, arg = self.rule.partition(":")
        if name == "constant":
            return f"<Score>{int(arg)}</Score>"
        if name == "no_score":
            return NO_SCORE_TEXT
        truth = self.ground_truth.get(prompt.triplet) if prompt.triplet else None
        if truth is None:
            return "No ground truth is available for this item."
        if name == "echo":
            return f"<Score>{truth}</Score>"
        if name == "truth_plus_one":
            return f"<Score>{min(truth + 1, 5)}</Score>"
        if name == "boxed":
            return f"The answer shows strong work. \\boxed{{{truth}}}"
        raise ConfigError(f"unknown mock rule {self.rule!r}")


class _RetryableStatus(Exception):
    pass


class HttpChatBackend:
    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.token_env:
            token = os.environ.get(self.config.token_env, "")
            if not token:
                raise CredentialError(
                    f"backend {self.config.backend_id}: environment variable "
                    f"{self.config.token_env} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def payload(self, prompt: RenderedPrompt, images: list[bytes]) -> dict[str, Any]:
        content: list[dict[str, Any]] = [{"type": "text", "text": prompt.text}]
        for ref, data in zip(prompt.attachments, images):
            mime = mimetypes.guess_type(ref.path)[0] or "application/octet-stream"
            url = f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"
            content.append({"type": "image_url", "image_url": {"url": url}})
        body: dict[str, Any] = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": content}],
        }
        if self.config.max_tokens is not None:
            body["max_tokens"] = self.config.max_tokens
        return body

    def send(self, prompt: RenderedPrompt, images: list[bytes]) -> str:
        cfg = self.config
        headers = self._headers()
        body = self.payload(prompt, images)
        last: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(cfg.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._client.post(cfg.endpoint, json=body, headers=headers)
                if resp.status_code in (401, 403):
                    raise CredentialError(
                        f"backend {cfg.backend_id}: authentication rejected ({resp.status_code})"
                    )
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise _RetryableStatus(f"HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise TransportError(
                        f"backend {cfg.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}"
                    )
                return _extract_text(resp.json())
            except (httpx.TransportError, _RetryableStatus) as exc:
                last = exc
                log.debug("backend %s attempt %d failed: %r", cfg.backend_id, attempt + 1, exc)
        raise TransportError(
            f"backend {cfg.backend_id}: failed after {cfg.max_retries + 1} attempt(s): {last}"
        )


def _extract_text(data: Any) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"unexpected response shape: {str(data)[:200]}") from exc
    if isinstance(content, list):  # content-part lists from some servers
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return content or ""


class Cassette:
    """JSON-lines store of ``{request_hash, raw_text, metadata}``.

    Entries are written sorted by hash so a recording is reproducible no
    matter what order requests finished in.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, dict[str, Any]] = {}
        if self.path.is_file():
            with open(self.path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        entry = json.loads(line)
                        self._entries[entry["request_hash"]] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, request_hash: object) -> bool:
        return request_hash in self._entries

    def get(self, request_hash: str) -> str:
        with self._lock:
            entry = self._entries.get(request_hash)
        if entry is None:
            raise CassetteMissError(request_hash)
        return entry["raw_text"]

    def put(self, request_hash: str, raw_text: str, metadata: Mapping[str, Any]) -> None:
        with self._lock:
            self._entries[request_hash] = {
                "request_hash": request_hash,
                "raw_text": raw_text,
                "metadata": dict(metadata),
            }

    def save(self) -> None:
        with self._lock:
            lines = [
                json.dumps(self._entries[h], sort_keys=True, ensure_ascii=False)
                for h in sorted(self._entries)
            ]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def make_backend(config: BackendConfig, dataset: Dataset | None = None) -> Backend | None:
    if config.kind == "mock":
        return MockBackend(config.rule, dataset.ground_truth if dataset else None)
    if config.kind == "http_chat":
        return HttpChatBackend(config)
    return None  # replay has no live backend


class Gateway:
    """One backend plus cache, cassette and retry policy.

    ``mode`` is ``"live"`` (no cassette), ``"record"`` (call the backend and
    store every reply) or ``"replay"`` (cassette only).  ``kind="replay"``
    forces replay.  The cache lives as long as the gateway.
    """

    def __init__(
        self,
        config: BackendConfig,
        dataset: Dataset | None = None,
        *,
        backend: Backend | None = None,
        cassette: Cassette | str | Path | None = None,
        mode: str = "live",
    ):
        if config.kind == "replay":
            mode = "replay"
        if mode not in ("live", "record", "replay"):
            raise ConfigError(f"unknown gateway mode {mode!r}")
        if mode in ("record", "replay") and cassette is None:
            raise ConfigError(f"mode {mode!r} needs a cassette path")
        self.config = config
        self.dataset = dataset
        self.mode = mode
        self.cassette = Cassette(cassette) if isinstance(cassette, (str, Path)) else cassette
        self.backend = backend if backend is not None else (
            None if mode == "replay" else make_backend(config, dataset)
        )
        if self.backend is None and mode != "replay":
            raise ConfigError(f"backend {config.backend_id!r} has no live implementation")
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        self._inflight: dict[str, Future[str]] = {}
        self.calls = 0  # live backend calls actually made

    def _images(self, prompt: RenderedPrompt) -> list[bytes]:
        if not prompt.attachments:
            return []
        if self.dataset is None:
            raise ConfigError("image attachments need a dataset root to read from")
        return [ref.resolve(self.dataset.root).read_bytes() for ref in prompt.attachments]

    def _fetch(self, prompt: RenderedPrompt, rh: str) -> tuple[str, bool]:
        if self.mode == "replay":
            return self.cassette.get(rh), True
        with self._lock:
            self.calls += 1
        text = self.backend.send(prompt, self._images(prompt))
        if self.mode == "record":
            self.cassette.put(
                rh,
                text,
                {
                    "backend_id": self.config.backend_id,
                    "model": self.config.model,
                    "scenario": _scenario_name(prompt.scenario),
                },
            )
        return text, False

    def complete(self, prompt: RenderedPrompt) -> CompletionResult:
        """Return the backend's reply, consulting cache and cassette first."""
        rh = request_hash(self.config, prompt)
        start = time.perf_counter()
        with self._lock:
            if rh in self._cache:
                cached = self._cache[rh]
                owner = False
                fut = None
            elif rh in self._inflight:
                cached, owner, fut = None, False, self._inflight[rh]
            else:
                cached, owner = None, True
                fut = Future()
                self._inflight[rh] = fut

        from_cassette = False
        from_cache = cached is not None
        if cached is not None:
            text = cached
        elif not owner:
            text = fut.result()  # re-raises the owner's error
            from_cache = True
        else:
            try:
                text, from_cassette = self._fetch(prompt, rh)
            except BaseException as exc:
                with self._lock:
                    del self._inflight[rh]
                fut.set_exception(exc)
                raise
            with self._lock:
                self._cache[rh] = text
                del self._inflight[rh]
            fut.set_result(text)

        return CompletionResult(
            triplet=prompt.triplet,
            backend_id=self.config.backend_id,
            scenario=_scenario_name(prompt.scenario),
            raw_text=text,
            request_hash=rh,
            latency=time.perf_counter() - start,
            from_cache=from_cache,
            from_cassette=from_cassette or (from_cache and self.mode == "replay"),
        )

    def run_batch(
        self,
        triplets: Iterable[Triplet],
        scenario: Scenario,
        dataset: Dataset | None = None,
        parallelism: int | None = None,
        prompt_fn: Callable[[Scenario, Triplet, Dataset], RenderedPrompt] = build_prompt,
    ) -> list[CompletionResult]:
        """Score every triplet; results come back in canonical triplet order.

        Failures (transport, cassette miss, prompt config) are embedded in
        the result's ``error`` field instead of aborting the batch.
        """
        dataset = dataset or self.dataset
        if dataset is None:
            raise ConfigError("run_batch needs a dataset")
        scenario = Scenario(scenario)
        ordered = sorted(triplets)
        workers = parallelism or self.config.parallelism

        def one(t: Triplet) -> CompletionResult:
            try:
                prompt = prompt_fn(scenario, t, dataset)
            except Exception as exc:
                return CompletionResult(t, self.config.backend_id, scenario.value, "", "", error=repr(exc))
            try:
                return self.complete(prompt)
            except Exception as exc:
                return CompletionResult(
                    t,
                    self.config.backend_id,
                    scenario.value,
                    "",
                    request_hash(self.config, prompt),
                    error=f"{type(exc).__name__}: {exc}",
                )

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, ordered))
        failed = sum(1 for r in results if not r.ok)
        log.info(
            "batch %s/%s: %d triplets, %d failed, %d live calls",
            self.config.backend_id,
            scenario.value,
            len(results),
            failed,
            self.calls,
        )
        return results

    def close(self) -> None:
        if self.mode == "record" and self.cassette is not None:
            self.cassette.save()

    def __enter__(self) -> Gateway:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def complete(prompt: RenderedPrompt, config: BackendConfig, dataset: Dataset | None = None, **kw: Any) -> CompletionResult:
    """One-shot convenience wrapper; use a ``Gateway`` to share the cache."""
    with Gateway(config, dataset, **kw) as gw:
        return gw.complete(prompt)


def run_batch(
    triplets: Iterable[Triplet],
    scenario: Scenario,
    config: BackendConfig,
    dataset: Dataset,
    **kw: Any,
) -> list[CompletionResult]:
    with Gateway(config, dataset, **kw) as gw:
        return gw.run_batch(triplets, scenario, dataset)
