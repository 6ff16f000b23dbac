"""Stub scorer/extractor HTTP servers implementing the remote wire protocols.

Used by the test suite and handy for trying the pipeline without a model
server::

    python -m rankqa.stubs --port 8765 --scorer length --extractor whole
"""

from __future__ import annotations

import argparse
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable


# Score handlers receive (query, candidates) and return the response document.
def zeros(query, candidates):
    return {"scores": [0.0] * len(candidates)}


def lengths(query, candidates):
    return {"scores": [float(len(c["text"])) for c in candidates]}


def overlap(query, candidates):
    terms = set(query.lower().split())
    return {"scores": [float(len(terms & set(c["text"].lower().split()))) for c in candidates]}


def short(query, candidates):
    return {"scores": [0.0] * max(len(candidates) - 1, 0)}


def non_numeric(query, candidates):
    return {"scores": ["high"] * len(candidates)}


# Extract handlers receive (query, context).
def whole(query, context):
    return {"begin": 0, "end": len(context), "score": 1.0}


def first_word(query, context):
    end = len(context.split(" ", 1)[0])
    return {"begin": 0, "end": end, "score": 0.5}


def inverted(query, context):
    return {"begin": 2, "end": 1, "score": 1.0}


def overflow(query, context):
    return {"begin": 0, "end": len(context) + 5, "score": 1.0}


SCORERS = {"zeros": zeros, "length": lengths, "overlap": overlap, "short": short, "non_numeric": non_numeric}
EXTRACTORS = {"whole": whole, "first_word": first_word, "inverted": inverted, "overflow": overflow}


class StubServer:
    """Background HTTP server answering ``/v1/score`` and ``/v1/extract``.

    ``delay`` sleeps before every response (timeout tests); ``status``
    forces a non-200 reply; ``raw`` replaces the body with literal bytes.
    Every request body is appended to ``requests``.
    """

    def __init__(self, scorer: Callable | None = zeros, extractor: Callable | None = whole,
                 host: str = "127.0.0.1", port: int = 0, delay: float = 0.0,
                 status: int = 200, raw: bytes | None = None):
        self.scorer = scorer
        self.extractor = extractor
        self.delay = delay
        self.status = status
        self.raw = raw
        self.requests: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._httpd = ThreadingHTTPServer((host, port), self._handler())
        self._httpd.daemon_threads = True
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def calls(self, path: str = "/v1/score") -> int:
        with self._lock:
            return sum(1 for p, _ in self.requests if p == path)

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length).decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    self._reply(400, {"error": "invalid JSON"})
                    return
                with server._lock:
                    server.requests.append((self.path, body))
                if server.delay:
                    time.sleep(server.delay)
                if self.path == "/v1/score" and server.scorer is not None:
                    doc = server.scorer(body.get("query", ""), body.get("candidates", []))
                elif self.path == "/v1/extract" and server.extractor is not None:
                    doc = server.extractor(body.get("query", ""), body.get("context", ""))
                else:
                    self._reply(404, {"error": f"no handler for {self.path}"})
                    return
                self._reply(server.status, doc)

            def _reply(self, status, doc):
                payload = server.raw if server.raw is not None else json.dumps(doc).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        return Handler

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description="Serve the stub scorer/extractor protocols.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--scorer", choices=sorted(SCORERS), default="overlap")
    parser.add_argument("--extractor", choices=sorted(EXTRACTORS), default="whole")
    parser.add_argument("--delay", type=float, default=0.0)
    args = parser.parse_args(argv)
    server = StubServer(SCORERS[args.scorer], EXTRACTORS[args.extractor], args.host, args.port, args.delay)
    print(f"serving on {server.url}", flush=True)
    try:
        server._httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._httpd.server_close()


if __name__ == "__main__":
    main()
