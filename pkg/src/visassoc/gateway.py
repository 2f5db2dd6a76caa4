"""Uniform client layer over external model services.

Requests are content-addressed: the digest of (backend id, prompt, image
bytes digest, generation params) keys both the response cache and the replay
backend, so an entire pipeline run is reproducible offline from a recorded
cache.  ``Gateway.submit`` preserves request order, consults the cache before
dispatch, retries transient failures with exponential backoff, and turns
terminal failures into error records instead of raising.
"""

import base64
import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx


class GatewayError(Exception):
    """Terminal backend failure; not retried."""


class TransportError(GatewayError):
    """Transient transport failure; retried with backoff."""


class RateLimitError(TransportError):
    """Rate-limit signal; retried with backoff."""


class ReplayMissError(GatewayError):
    """Replay backend has no entry for a digest.  Never falls through to the
    network: offline runs must stay offline."""

    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"replay cache has no entry for digest {digest}")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 1000
    n: int = 1


def vision_params() -> GenerationParams:
    """Defaults for vision-language calls (captioning)."""
    return GenerationParams(temperature=0.7, top_p=0.9, max_tokens=150, n=1)


def text_params() -> GenerationParams:
    """Defaults for text-only association mining calls."""
    return GenerationParams(temperature=1.0, top_p=1.0, max_tokens=1000, n=1)


@dataclass(frozen=True)
class ModelRequest:
    backend_id: str
    prompt: str
    image_uri: str | None = None
    params: GenerationParams = field(default_factory=GenerationParams)


@dataclass(frozen=True)
class ModelResponse:
    text: str
    request_digest: str
    cached: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _image_digest(image_uri: str | None) -> str | None:
    """Digest of the image bytes when the uri is a readable local file,
    otherwise of the uri string itself (remote images at request-build time)."""
    if image_uri is None:
        return None
    path = Path(image_uri)
    if path.is_file():
        return hashlib.sha256(path.read_bytes()).hexdigest()
    return hashlib.sha256(("uri:" + image_uri).encode("utf-8")).hexdigest()


def request_digest(request: ModelRequest) -> str:
    """Stable content digest of a logical request."""
    payload = {
        "backend": request.backend_id,
        "prompt": request.prompt,
        "image": _image_digest(request.image_uri),
        "params": [
            request.params.temperature,
            request.params.top_p,
            request.params.max_tokens,
            request.params.n,
        ],
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend(Protocol):
    backend_id: str

    def complete(self, request: ModelRequest) -> str: ...


class ReplayBackend:
    """Answers solely from a digest-keyed fixture; missing digests are hard
    errors so tests never silently go online.

    The digest covers the backend id, so a replay fixture recorded from a
    live backend carries that identity in its meta line and this backend
    impersonates it; request digests then match the recording exactly.
    """

    def __init__(
        self,
        fixture: str | Path | Mapping[str, str],
        backend_id: str | None = None,
    ):
        if isinstance(fixture, (str, Path)):
            meta, self._responses = _load_digest_jsonl(fixture)
            self.backend_id = backend_id or meta.get("backend_id", "replay")
        else:
            self._responses = dict(fixture)
            self.backend_id = backend_id or "replay"

    def __len__(self) -> int:
        return len(self._responses)

    def complete(self, request: ModelRequest) -> str:
        digest = request_digest(request)
        try:
            return self._responses[digest]
        except KeyError:
            raise ReplayMissError(digest) from None


class RecordingBackend:
    """Tees every completed request into a digest->text JSONL so a live run
    can later be replayed offline."""

    def __init__(self, inner: Backend, path: str | Path):
        self._inner = inner
        self._path = Path(path)
        self._lock = threading.Lock()
        if self._path.exists() and self._path.stat().st_size > 0:
            _, existing = _load_digest_jsonl(self._path)
            self._seen = set(existing)
        else:
            self._seen = set()
            with open(self._path, "w", encoding="utf-8") as fh:
                fh.write(
                    json.dumps({"meta": {"backend_id": inner.backend_id}}) + "\n"
                )

    @property
    def backend_id(self) -> str:
        return self._inner.backend_id

    def complete(self, request: ModelRequest) -> str:
        text = self._inner.complete(request)
        digest = request_digest(request)
        with self._lock:
            if digest not in self._seen:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(
                        json.dumps(
                            {"digest": digest, "text": text}, ensure_ascii=False
                        )
                        + "\n"
                    )
                self._seen.add(digest)
        return text


def _load_digest_jsonl(path: str | Path) -> tuple[dict, dict[str, str]]:
    meta: dict = {}
    responses: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "meta" in obj:
                meta.update(obj["meta"])
            else:
                responses[obj["digest"]] = obj["text"]
    return meta, responses


class HttpBackend:
    """Adapter for chat-completion-style HTTP/JSON endpoints.

    Local image files are inlined as base64 data URLs; other uris pass
    through.  429 maps to RateLimitError, 5xx and transport failures to
    TransportError, other 4xx to terminal GatewayError.
    """

    def __init__(
        self,
        backend_id: str,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        text_role: str = "user",
        client: httpx.Client | None = None,
    ):
        self.backend_id = backend_id
        self._endpoint = endpoint
        self._model = model
        self._api_key = api_key
        self._timeout = timeout
        self._text_role = text_role
        self._client = client or httpx.Client(timeout=timeout)

    def _messages(self, request: ModelRequest) -> list[dict]:
        if request.image_uri is None:
            return [{"role": self._text_role, "content": request.prompt}]
        path = Path(request.image_uri)
        if path.is_file():
            suffix = path.suffix.lstrip(".").lower() or "png"
            encoded = base64.b64encode(path.read_bytes()).decode("ascii")
            url = f"data:image/{suffix};base64,{encoded}"
        else:
            url = request.image_uri
        return [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": request.prompt},
                    {"type": "image_url", "image_url": {"url": url}},
                ],
            }
        ]

    def complete(self, request: ModelRequest) -> str:
        body = {
            "model": self._model,
            "messages": self._messages(request),
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_tokens,
            "n": request.params.n,
        }
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            response = self._client.post(self._endpoint, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code == 429:
            raise RateLimitError(f"rate limited by {self._endpoint}")
        if response.status_code >= 500:
            raise TransportError(f"{self._endpoint} returned {response.status_code}")
        if response.status_code >= 400:
            raise GatewayError(
                f"{self._endpoint} returned {response.status_code}: {response.text}"
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc


class ResponseCache:
    """Append-only digest->text cache file (JSONL of digest, text, timestamp).

    Concurrent readers share the in-memory map; appends are serialized.
    """

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = (
            _load_digest_jsonl(self._path)[1] if self._path.exists() else {}
        )

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, digest: str) -> str | None:
        return self._entries.get(digest)

    def put(self, digest: str, text: str) -> None:
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = text
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"digest": digest, "text": text, "timestamp": time.time()},
                        ensure_ascii=False,
                    )
                    + "\n"
                )


@dataclass(frozen=True)
class GatewayPolicy:
    max_in_flight: int = 4
    retries: int = 2
    backoff: float = 0.25


class Gateway:
    """Batching front end over one backend, with optional response cache.

    Successful responses are also memoized in-process for the life of the
    gateway, so one logical request dispatches at most once per run even
    without a persistent cache file.
    """

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        policy: GatewayPolicy | None = None,
    ):
        self.backend = backend
        self.cache = cache
        self.policy = policy or GatewayPolicy()
        self._memo: dict[str, str] = {}
        self._memo_lock = threading.Lock()

    def one(self, request: ModelRequest) -> ModelResponse:
        return self.submit([request])[0]

    def submit(
        self,
        requests: Sequence[ModelRequest],
        policy: GatewayPolicy | None = None,
    ) -> list[ModelResponse]:
        """Responses in request order.

        Identical logical requests within a batch dispatch at most once; all
        occurrences after the first are marked cached.  A slot that still
        fails after retries gets an error record; other slots are unaffected.
        ``policy`` overrides the gateway default for this batch.
        """
        policy = policy or self.policy
        digests = [request_digest(r) for r in requests]
        results: list[ModelResponse | None] = [None] * len(requests)

        pending: dict[str, ModelRequest] = {}
        first_index: dict[str, int] = {}
        for i, (req, digest) in enumerate(zip(requests, digests)):
            known = self._lookup(digest)
            if known is not None:
                results[i] = ModelResponse(known, digest, cached=True)
            elif digest not in first_index:
                first_index[digest] = i
                pending[digest] = req

        if pending:
            ordered = list(pending.items())
            workers = max(1, min(policy.max_in_flight, len(ordered)))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                completed = list(
                    pool.map(
                        lambda item: self._call_with_retries(*item, policy=policy),
                        ordered,
                    )
                )
            by_digest = {r.request_digest: r for r in completed}
            for digest, response in by_digest.items():
                if response.ok:
                    self._remember(digest, response.text)
        else:
            by_digest = {}

        for i, digest in enumerate(digests):
            if results[i] is not None:
                continue
            response = by_digest[digest]
            if i == first_index[digest]:
                results[i] = response
            else:
                results[i] = ModelResponse(
                    response.text, digest, cached=response.ok, error=response.error
                )
        return results  # type: ignore[return-value]

    def _lookup(self, digest: str) -> str | None:
        with self._memo_lock:
            text = self._memo.get(digest)
        if text is None and self.cache is not None:
            text = self.cache.get(digest)
        return text

    def _remember(self, digest: str, text: str) -> None:
        with self._memo_lock:
            self._memo[digest] = text
        if self.cache is not None:
            self.cache.put(digest, text)

    def _call_with_retries(
        self, digest: str, request: ModelRequest, policy: GatewayPolicy | None = None
    ) -> ModelResponse:
        policy = policy or self.policy
        last_error: Exception | None = None
        for attempt in range(policy.retries + 1):
            try:
                text = self.backend.complete(request)
                return ModelResponse(text, digest)
            except (RateLimitError, TransportError) as exc:
                last_error = exc
                if attempt < policy.retries:
                    time.sleep(policy.backoff * (2**attempt))
            except GatewayError as exc:
                return ModelResponse("", digest, error=str(exc))
        return ModelResponse(
            "", digest, error=f"{type(last_error).__name__}: {last_error}"
        )
