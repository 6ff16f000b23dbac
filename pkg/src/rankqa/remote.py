"""Minimal JSON-over-HTTP client shared by the remote scorer and extractor."""

from __future__ import annotations

import json
import socket
import threading
import urllib.error
import urllib.request
from urllib.parse import urlsplit

from .errors import EndpointUnreachable, ProtocolError, RemoteTimeout, TransportError


class JsonClient:
    """POSTs JSON documents to ``{endpoint}{path}``.

    At most ``max_in_flight`` requests run at once across all threads sharing
    the client.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def post(self, path: str, payload: dict) -> dict:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint + path,
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with self._slots:
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    status = resp.status
                    raw = resp.read()
            except urllib.error.HTTPError as exc:
                raise TransportError(f"{self.endpoint}{path} returned HTTP {exc.code}") from exc
            except (socket.timeout, TimeoutError) as exc:
                raise RemoteTimeout(f"{self.endpoint}{path} timed out after {self.timeout}s") from exc
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                    raise RemoteTimeout(f"{self.endpoint}{path} timed out after {self.timeout}s") from exc
                raise TransportError(f"{self.endpoint}{path}: {exc.reason}") from exc
            except (OSError, ValueError) as exc:
                raise TransportError(f"{self.endpoint}{path}: {exc}") from exc
        if status != 200:
            raise TransportError(f"{self.endpoint}{path} returned HTTP {status}")
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"response from {self.endpoint}{path} is not JSON") from exc
        if not isinstance(doc, dict):
            raise ProtocolError("response must be a JSON object")
        return doc

    def probe(self) -> None:
        """Open and close a TCP connection; raises EndpointUnreachable on failure."""
        check_reachable(self.endpoint, self.timeout)


def check_reachable(endpoint: str, timeout: float = 5.0) -> None:
    parts = urlsplit(endpoint)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise EndpointUnreachable(f"{endpoint!r} is not an http(s) URL")
    port = parts.port or (443 if parts.scheme == "https" else 80)
    try:
        with socket.create_connection((parts.hostname, port), timeout=timeout):
            pass
    except OSError as exc:
        raise EndpointUnreachable(f"cannot connect to {endpoint}: {exc}") from exc


def as_number(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if value != value or value in (float("inf"), float("-inf")):
        raise ProtocolError(f"{what} must be finite, got {value!r}")
    return value
