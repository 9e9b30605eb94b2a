"""Teacher LLM gateway: chat-completion providers, response cache, bounded fan-out."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

from .errors import EmptyReasoning, ProviderError
from .prompts import TeacherPrompt

log = logging.getLogger(__name__)

POSITIVE = "positive"
PERTURBED = "perturbed"


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    max_new_tokens: int = 256
    n_samples: int = 5

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class ReasoningCandidate:
    text: str
    source: str
    candidate_index: int
    prompt_hash: str


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ContentCache:
    """Content-addressed JSON cache; in-memory when ``root`` is None.

    Disk writes go to a temp file in the same directory and are renamed into
    place, so a crashed run never leaves a truncated entry.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._mem: dict = {}
        self._lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        with self._lock:
            if key in self._mem:
                return self._mem[key]
        if self.root is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        value = json.loads(path.read_text(encoding="utf-8"))
        with self._lock:
            self._mem[key] = value
        return value

    def put(self, key: str, value) -> None:
        with self._lock:
            self._mem[key] = value
        if self.root is None:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(value, fh, ensure_ascii=False)
        os.replace(tmp, path)


# ------------------------------------------------------------- providers


def _default_mock_text(instruction: str, user: str, index: int) -> str:
    return f"R{index}"


class MockProvider:
    """Deterministic offline provider.

    ``responder(instruction, user_content, index) -> str`` produces sample
    ``index``; ``fail(instruction, user_content) -> bool`` simulates outages.
    """

    supports_n = True

    def __init__(self, responder: Callable | None = None, provider_id: str = "mock",
                 fail: Callable | None = None):
        self.responder = responder or _default_mock_text
        self.provider_id = provider_id
        self.fail = fail
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, instruction: str, user: str, *, temperature: float, max_tokens: int,
                 n: int = 1) -> list:
        with self._lock:
            self.calls += 1
        if self.fail is not None and self.fail(instruction, user):
            raise ProviderError("mock provider failure")
        return [self.responder(instruction, user, i) for i in range(n)]


class HttpChatProvider:
    """OpenAI-style chat-completion endpoint with bounded exponential backoff."""

    def __init__(self, url: str, api_key: str | None = None, model: str = "gpt-3.5-turbo",
                 supports_n: bool = True, attempts: int = 3, backoff: float = 1.0,
                 timeout: float = 120.0, session=None, sleep=time.sleep):
        if not url:
            raise ProviderError("teacher endpoint URL is not configured")
        self.url = url
        self.api_key = api_key
        self.model = model
        self.supports_n = supports_n
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self.session = session or requests.Session()
        self.sleep = sleep
        self.provider_id = f"http:{model}@{url}"

    @classmethod
    def from_env(cls, **kw) -> "HttpChatProvider":
        return cls(
            os.environ.get("ROS_TEACHER_URL", ""),
            os.environ.get("ROS_TEACHER_KEY"),
            os.environ.get("ROS_TEACHER_MODEL", "gpt-3.5-turbo"),
            **kw,
        )

    def _post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for attempt in range(self.attempts):
            try:
                resp = self.session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProviderError(f"non-JSON response from {self.url}") from exc
                last = ProviderError(f"HTTP {resp.status_code}: {resp.text[:500]}")
                if resp.status_code < 500 and resp.status_code != 429:
                    raise last
            if attempt < self.attempts - 1:
                self.sleep(self.backoff * 2 ** attempt * (1 + random.random()))
        raise ProviderError(f"request failed after {self.attempts} attempts: {last}")

    def complete(self, instruction: str, user: str, *, temperature: float, max_tokens: int,
                 n: int = 1) -> list:
        messages = [{"role": "system", "content": instruction}, {"role": "user", "content": user}]

        def call(k):
            data = self._post({
                "model": self.model, "messages": messages,
                "temperature": temperature, "max_tokens": max_tokens, "n": k,
            })
            try:
                return [c["message"]["content"] or "" for c in data["choices"]]
            except (KeyError, TypeError) as exc:
                raise ProviderError(f"malformed completion payload: {data!r:.300}") from exc

        if self.supports_n:
            out = call(n)
            if len(out) < n:
                # Endpoint ignored n; top up sequentially.
                for _ in range(n - len(out)):
                    out.extend(call(1))
            return out[:n]
        return [call(1)[0] for _ in range(n)]


# --------------------------------------------------------------- gateway


class Teacher:
    def __init__(self, provider, cache: ContentCache | None = None):
        self.provider = provider
        self.cache = cache if cache is not None else ContentCache()

    def cache_key(self, prompt: TeacherPrompt, params: GenerationParams) -> str:
        blob = json.dumps(
            [prompt.text, params.temperature, params.max_new_tokens, self.provider.provider_id],
            ensure_ascii=False,
        )
        return sha256_hex(blob)

    def _request(self, prompt, params, n):
        return [t.strip() for t in self.provider.complete(
            prompt.instruction, prompt.input,
            temperature=params.temperature, max_tokens=params.max_new_tokens, n=n,
        )]

    def generate(self, prompt: TeacherPrompt, params: GenerationParams,
                 source: str = POSITIVE, index_offset: int = 0) -> list:
        """Return exactly ``params.n_samples`` trimmed candidates, cached per prompt."""
        n = params.n_samples
        key = self.cache_key(prompt, params)
        hit = self.cache.get(key)
        if hit is not None and len(hit["texts"]) >= n:
            texts = hit["texts"][:n]
        else:
            texts = self._request(prompt, params, n)
            for k, t in enumerate(texts):
                if not t:
                    retry = self._request(prompt, params, 1)
                    if not retry or not retry[0]:
                        raise EmptyReasoning(f"empty completion for prompt {key[:12]}")
                    texts[k] = retry[0]
            self.cache.put(key, {"texts": texts})
        phash = sha256_hex(prompt.text)
        return [ReasoningCandidate(t, source, index_offset + i, phash) for i, t in enumerate(texts)]


@dataclass(frozen=True)
class QueryJob:
    key: tuple
    positive: TeacherPrompt
    perturbed: tuple


@dataclass
class CandidateSet:
    key: tuple
    positives: list = field(default_factory=list)
    perturbed: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return not self.positives or not self.perturbed


def generate_batch(teacher: Teacher, jobs: Sequence[QueryJob], params: GenerationParams,
                   parallelism: int = 4) -> tuple:
    """Fan out every positive and perturbed prompt with at most ``parallelism`` in flight.

    Returns ``(candidate_sets, failures)`` with candidate sets in job order and
    ``failures`` a list of ``{"key", "errors"}`` records.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    single = GenerationParams(params.temperature, params.max_new_tokens, 1)
    tasks = []
    for qi, job in enumerate(jobs):
        tasks.append((qi, POSITIVE, 0, job.positive, params))
        for pi, p in enumerate(job.perturbed):
            tasks.append((qi, PERTURBED, pi, p, single))

    def run(task):
        qi, source, idx, prompt, prm = task
        try:
            return task, teacher.generate(prompt, prm, source, index_offset=idx), None
        except ProviderError as exc:
            return task, None, exc

    results = [CandidateSet(job.key) for job in jobs]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        outcomes = list(pool.map(run, tasks))
    for (qi, source, idx, _, _), cands, exc in outcomes:
        cs = results[qi]
        if exc is not None:
            cs.errors.append(f"{source}[{idx}]: {exc}")
        elif source == POSITIVE:
            cs.positives = cands
        else:
            cs.perturbed.extend(cands)
    failures = [{"key": list(cs.key), "errors": cs.errors} for cs in results if cs.failed]
    for f in failures:
        log.warning("teacher generation failed for %s: %s", f["key"], f["errors"])
    return results, failures
