"""HTTP service for the blinded annotation study.

Endpoints:
    GET  /api/assignment?annotator=<id>   next blinded item or a done marker
    POST /api/ratings                     store one rating (201/409/422)
    GET  /api/stats                       means, kappa, rank tests
    GET  /charts/<file>                   study chart images
    GET  /, /assets/*                     static UI bundle (when built)

The rating store serializes writes; handlers run in one thread each, so two
annotators can work concurrently without stepping on each other.
"""

from __future__ import annotations

import json
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .humaneval import (
    AnnotationItem,
    DuplicateRating,
    IncompleteScores,
    RatingStore,
    Study,
    UnknownAnnotator,
    next_assignment,
    study_stats,
    submit_positional_rating,
)

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}

_PLACEHOLDER_PAGE = b"""<!doctype html>
<html><head><meta charset="utf-8"><title>annotation service</title></head>
<body><h1>Annotation service is running</h1>
<p>No UI bundle is installed. The API endpoints under /api/ are live.</p>
</body></html>
"""


def _assignment_payload(item: AnnotationItem) -> dict:
    return {
        "done": False,
        "item_id": item.item_id,
        "chart_url": f"/charts/{item.chart_image}",
        "responses": list(item.responses),
        "axes": list(item.axes),
        "progress": {"done": item.position, "total": item.total},
    }


def make_handler(study: Study, store: RatingStore, charts_dir: Path, ui_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        server_version = "chartkit-anno/0.1"

        def log_message(self, fmt: str, *args) -> None:  # keep stdout clean
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_file(self, path: Path) -> None:
            data = path.read_bytes()
            self.send_response(200)
            ctype = _CONTENT_TYPES.get(path.suffix.lower(), "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _serve_static(self, root: Path, rel: str) -> None:
            target = (root / rel).resolve()
            if not str(target).startswith(str(root.resolve())) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            self._send_file(target)

        def do_GET(self) -> None:  # noqa: N802 (http.server casing)
            parsed = urlparse(self.path)
            route = parsed.path
            if route == "/api/assignment":
                params = parse_qs(parsed.query)
                annotator = params.get("annotator", [""])[0]
                try:
                    item = next_assignment(study, store, annotator)
                except UnknownAnnotator as exc:
                    self._send_json(404, {"error": str(exc)})
                    return
                if item is None:
                    total = len(study.items)
                    self._send_json(200, {"done": True, "progress": {"done": total, "total": total}})
                else:
                    self._send_json(200, _assignment_payload(item))
            elif route == "/api/stats":
                self._send_json(200, study_stats(study, store))
            elif route.startswith("/charts/"):
                self._serve_static(charts_dir, route[len("/charts/") :])
            elif ui_dir is not None and route.startswith("/assets/"):
                self._serve_static(ui_dir / "assets", route[len("/assets/") :])
            elif route in ("/", "/index.html"):
                index = ui_dir / "index.html" if ui_dir is not None else None
                if index is not None and index.is_file():
                    self._send_file(index)
                else:
                    self.send_response(200)
                    self.send_header("Content-Type", "text/html; charset=utf-8")
                    self.send_header("Content-Length", str(len(_PLACEHOLDER_PAGE)))
                    self.end_headers()
                    self.wfile.write(_PLACEHOLDER_PAGE)
            else:
                self._send_json(404, {"error": "not found"})

        def do_POST(self) -> None:  # noqa: N802
            if urlparse(self.path).path != "/api/ratings":
                self._send_json(404, {"error": "not found"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                item_id = payload["item_id"]
                annotator_id = payload["annotator_id"]
                scores = payload["scores"]
            except (ValueError, KeyError, TypeError):
                self._send_json(400, {"error": "malformed rating payload"})
                return
            try:
                submit_positional_rating(
                    study,
                    store,
                    annotator_id,
                    item_id,
                    scores,
                    timestamp=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                )
            except UnknownAnnotator as exc:
                self._send_json(404, {"error": str(exc)})
            except KeyError as exc:
                self._send_json(404, {"error": str(exc)})
            except DuplicateRating as exc:
                self._send_json(409, {"error": str(exc)})
            except IncompleteScores as exc:
                self._send_json(422, {"error": str(exc)})
            else:
                self._send_json(201, {"ok": True, "stored": len(store)})

    return Handler


def create_server(
    study_dir: str | Path,
    port: int = 0,
    host: str = "127.0.0.1",
    ui_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    """Build the service around a study directory; port 0 picks a free port."""
    study_dir = Path(study_dir)
    study = Study.load(study_dir)
    store = RatingStore(study_dir / "ratings.jsonl")
    handler = make_handler(
        study,
        store,
        charts_dir=study_dir / "charts",
        ui_dir=Path(ui_dir) if ui_dir is not None else None,
    )
    server = ThreadingHTTPServer((host, port), handler)
    server.study = study  # type: ignore[attr-defined]
    server.store = store  # type: ignore[attr-defined]
    return server
