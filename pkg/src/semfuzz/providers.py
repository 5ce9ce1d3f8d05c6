"""Remote provider clients: generation and embedding over HTTP, with disk
caches so repeated prompts and token streams never leave the machine twice.

Both providers degrade by raising ProviderError; callers fall back to the
offline paths (grammar mutator, hashing embedder) and the campaign keeps
running.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from semfuzz.errors import ProviderError
from semfuzz.semantic import EMBED_DIM

GENERATE_TIMEOUT_S = 10.0
EMBED_TIMEOUT_S = 2.0


class DiskCache:
    """Filesystem cache: concurrent readers, atomic single-writer per key."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def get(self, key: str) -> bytes | None:
        path = self.root / key
        try:
            return path.read_bytes()
        except OSError:
            return None

    def put(self, key: str, payload: bytes) -> None:
        tmp = self.root / f".{key}.{os.getpid()}.tmp"
        tmp.write_bytes(payload)
        os.replace(tmp, self.root / key)


def _post_json(url: str, payload: dict, timeout: float) -> dict:
    body = json.dumps(payload).encode()
    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            raw = response.read()
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise ProviderError(f"provider request to {url} failed: {exc}") from exc
    try:
        decoded = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProviderError(f"provider at {url} returned non-JSON payload") from exc
    if not isinstance(decoded, dict):
        raise ProviderError(f"provider at {url} returned non-object payload")
    return decoded


def _endpoint(base: str, path: str) -> str:
    return base if base.endswith(path) else base.rstrip("/") + path


class HttpGenerationProvider:
    """Client for the remote mutation model.

    POST /generate with {prompt, temperature, k}; response {candidates:
    [base64]}.  Responses are cached by hash of rendered prompt, temperature,
    and k.
    """

    origin = "provider"

    def __init__(self, endpoint: str, cache_dir: str | Path | None = None, timeout: float = GENERATE_TIMEOUT_S):
        self.url = _endpoint(endpoint, "/generate")
        self.timeout = timeout
        self.cache = DiskCache(cache_dir) if cache_dir is not None else None
        self.queries = 0

    def _cache_key(self, req) -> str:
        material = f"{req.prompt.rendered}|{req.temperature}|{req.k}".encode()
        return hashlib.blake2b(material, digest_size=16).hexdigest()

    def generate(self, req, seed: bytes) -> list[bytes]:
        self.queries += 1
        key = self._cache_key(req)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return [base64.b64decode(c) for c in json.loads(hit)]

        decoded = _post_json(
            self.url,
            {"prompt": req.prompt.rendered, "temperature": req.temperature, "k": req.k},
            self.timeout,
        )
        candidates = decoded.get("candidates")
        if not isinstance(candidates, list):
            raise ProviderError("generation response missing 'candidates' list")
        try:
            out = [base64.b64decode(c, validate=True) for c in candidates]
        except (ValueError, TypeError) as exc:
            raise ProviderError(f"generation response contained invalid base64: {exc}") from exc

        if self.cache is not None:
            self.cache.put(key, json.dumps([base64.b64encode(c).decode() for c in out]).encode())
        return out


class HttpEmbeddingProvider:
    """Client for the remote embedding model.

    POST /embed with {tokens}; response {vector: [float x 768]}.  Cached by
    token-stream hash.
    """

    def __init__(self, endpoint: str, cache_dir: str | Path | None = None, timeout: float = EMBED_TIMEOUT_S):
        self.url = _endpoint(endpoint, "/embed")
        self.timeout = timeout
        self.cache = DiskCache(cache_dir) if cache_dir is not None else None
        self.queries = 0

    def embed(self, tokens: tuple[str, ...]) -> np.ndarray:
        self.queries += 1
        key = hashlib.blake2b("\x1f".join(tokens).encode(), digest_size=16).hexdigest()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return np.frombuffer(hit, dtype=np.float64).copy()

        decoded = _post_json(self.url, {"tokens": list(tokens)}, self.timeout)
        vector = decoded.get("vector")
        if not isinstance(vector, list) or len(vector) != EMBED_DIM:
            raise ProviderError(f"embedding response must carry a {EMBED_DIM}-float 'vector'")
        try:
            out = np.asarray(vector, dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise ProviderError(f"embedding response not numeric: {exc}") from exc

        if self.cache is not None:
            self.cache.put(key, out.tobytes())
        return out
