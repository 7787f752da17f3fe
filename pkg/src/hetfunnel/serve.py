"""Read-only local server for a report document and the explorer UI."""

from __future__ import annotations

import http.server
import os
import sys
from functools import partial

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".map": "application/json; charset=utf-8",
}


class ReportHandler(http.server.BaseHTTPRequestHandler):
    """GET /report serves the report document; other paths serve UI assets."""

    report_path: str = ""
    ui_dir: str | None = None

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_bytes(self, payload: bytes, content_type: str):
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Cache-Control", "no-store")
        self.end_headers()
        self.wfile.write(payload)

    def _not_found(self):
        body = b"not found\n"
        self.send_response(404)
        self.send_header("Content-Type", "text/plain; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802 (stdlib naming)
        path = self.path.split("?", 1)[0]
        if path == "/report":
            try:
                with open(self.report_path, "rb") as fh:
                    payload = fh.read()
            except OSError:
                self._not_found()
                return
            self._send_bytes(payload, "application/json; charset=utf-8")
            return
        if self.ui_dir is None:
            self._not_found()
            return
        if path == "/":
            path = "/index.html"
        rel = os.path.normpath(path.lstrip("/"))
        if rel.startswith(".."):
            self._not_found()
            return
        full = os.path.join(self.ui_dir, rel)
        if not os.path.isfile(full):
            self._not_found()
            return
        ext = os.path.splitext(full)[1].lower()
        with open(full, "rb") as fh:
            self._send_bytes(fh.read(), _CONTENT_TYPES.get(ext, "application/octet-stream"))


def make_server(report_path: str, port: int, ui_dir: str | None = None):
    handler = partial(_bound_handler, report_path=report_path, ui_dir=ui_dir)
    try:
        return http.server.ThreadingHTTPServer(("127.0.0.1", port), handler)
    except OSError as exc:
        print(f"error: cannot bind port {port}: {exc}", file=sys.stderr)
        raise SystemExit(1) from None


def _bound_handler(*args, report_path: str, ui_dir: str | None, **kwargs):
    handler_cls = type(
        "BoundReportHandler",
        (ReportHandler,),
        {"report_path": report_path, "ui_dir": ui_dir},
    )
    return handler_cls(*args, **kwargs)


def serve_forever(report_path: str, port: int, ui_dir: str | None = None):
    server = make_server(report_path, port, ui_dir)
    host, bound_port = server.server_address[:2]
    print(f"serving report on http://{host}:{bound_port}/report (ui: {ui_dir or 'none'})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
