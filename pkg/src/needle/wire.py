"""Adapter wire protocol: transports, PNG codecs, canonical JSON.

Embedders and generators are reached through the same tiny HTTP contract
(POST /v1/embed, POST /v1/generate, GET /v1/info). Besides real HTTP, the
transport layer resolves ``world:`` endpoints to in-process mock adapters so
the whole pipeline runs without any network or model dependency.
"""
from __future__ import annotations

import base64
import json
import threading
from typing import Any, Protocol
from urllib.parse import parse_qsl, urlsplit

import cv2
import numpy as np

from .errors import AdapterError, ConfigError, DecodeError


def canonical_json(obj: Any) -> bytes:
    """Stable UTF-8 JSON: sorted keys, compact separators, repr floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def encode_png(image: np.ndarray) -> bytes:
    """Encode an RGB (H,W,3) or grayscale (H,W) uint8 array as PNG bytes."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("raster must be uint8")
    if arr.ndim == 3:
        arr = arr[:, :, ::-1]  # cv2 writes BGR input as RGB in the file
    ok, buf = cv2.imencode(".png", arr)
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to RGB (H,W,3) or grayscale (H,W) uint8."""
    arr = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise DecodeError("undecodable image bytes")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = arr[:, :, ::-1].copy()
    return arr


def encode_png_b64(image: np.ndarray) -> str:
    return base64.b64encode(encode_png(image)).decode("ascii")


def decode_png_b64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise DecodeError(f"invalid base64 image payload: {exc}") from exc
    return decode_png(raw)


class InProcessAdapter(Protocol):
    """Object form of the wire protocol, used by mocks and the `call:` scheme."""

    def info(self) -> dict: ...

    def handle(self, path: str, payload: dict) -> dict: ...


class AdapterTransport(Protocol):
    def post(self, endpoint: str, path: str, payload: dict) -> dict: ...

    def get(self, endpoint: str, path: str) -> dict: ...


class HttpTransport:
    """Blocking HTTP client for real adapter endpoints."""

    def __init__(self, timeout: float = 60.0):
        self._timeout = timeout

    def post(self, endpoint: str, path: str, payload: dict) -> dict:
        import httpx

        resp = httpx.post(endpoint.rstrip("/") + path, json=payload, timeout=self._timeout)
        if resp.status_code != 200:
            raise AdapterError(f"HTTP {resp.status_code} from {endpoint}{path}: {resp.text[:200]}")
        return resp.json()

    def get(self, endpoint: str, path: str) -> dict:
        import httpx

        resp = httpx.get(endpoint.rstrip("/") + path, timeout=self._timeout)
        if resp.status_code != 200:
            raise AdapterError(f"HTTP {resp.status_code} from {endpoint}{path}: {resp.text[:200]}")
        return resp.json()


class InProcessTransport:
    """Routes endpoint strings to registered in-process adapters."""

    def __init__(self, adapters: dict[str, InProcessAdapter] | None = None):
        self._adapters = dict(adapters or {})

    def register(self, endpoint: str, adapter: InProcessAdapter) -> None:
        self._adapters[endpoint] = adapter

    def _resolve(self, endpoint: str) -> InProcessAdapter:
        try:
            return self._adapters[endpoint]
        except KeyError:
            raise ConfigError(f"no in-process adapter registered for {endpoint!r}") from None

    def post(self, endpoint: str, path: str, payload: dict) -> dict:
        return self._resolve(endpoint).handle(path, payload)

    def get(self, endpoint: str, path: str) -> dict:
        if path == "/v1/info":
            return self._resolve(endpoint).info()
        return self._resolve(endpoint).handle(path, {})


def _build_world_adapter(endpoint: str) -> InProcessAdapter:
    # Local import: simlab sits above this module in the dependency order.
    from .simlab.mocks import adapter_from_endpoint

    return adapter_from_endpoint(endpoint)


class RoutingTransport:
    """Default transport: http(s) goes over the network, world: stays local.

    ``world:`` endpoints describe a deterministic mock adapter backed by a
    synthetic-world file, e.g.
    ``world:data/world.json?kind=embedder&id=emb-a&sigma=0.05``.
    Instantiated mocks are cached per endpoint string.
    """

    def __init__(self):
        self._http = HttpTransport()
        self._local = InProcessTransport()
        self._lock = threading.Lock()

    def _dispatch(self, endpoint: str) -> AdapterTransport:
        scheme = urlsplit(endpoint).scheme
        if scheme in ("http", "https"):
            return self._http
        if scheme == "world":
            with self._lock:
                if endpoint not in self._local._adapters:
                    self._local.register(endpoint, _build_world_adapter(endpoint))
            return self._local
        raise ConfigError(f"unsupported adapter endpoint {endpoint!r}")

    def post(self, endpoint: str, path: str, payload: dict) -> dict:
        return self._dispatch(endpoint).post(endpoint, path, payload)

    def get(self, endpoint: str, path: str) -> dict:
        return self._dispatch(endpoint).get(endpoint, path)


_DEFAULT_TRANSPORT: RoutingTransport | None = None
_DEFAULT_LOCK = threading.Lock()


def default_transport() -> RoutingTransport:
    global _DEFAULT_TRANSPORT
    with _DEFAULT_LOCK:
        if _DEFAULT_TRANSPORT is None:
            _DEFAULT_TRANSPORT = RoutingTransport()
        return _DEFAULT_TRANSPORT


def parse_endpoint_params(endpoint: str) -> tuple[str, dict[str, str]]:
    """Split a non-HTTP endpoint into its path part and query parameters."""
    parts = urlsplit(endpoint)
    return parts.path, dict(parse_qsl(parts.query))
