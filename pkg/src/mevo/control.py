"""Local HTTP control surface for a running peer.

Plain JSON over loopback, unauthenticated - the daemon half of the
split between the streaming engine and whatever UI drives it.  Every
mutation is validated synchronously (a 4xx means nothing changed) and
applied at the next audio-cycle boundary, so an accepted change is
live well inside one telemetry period.

    GET  /status             session, peers, counters, config echo
    GET  /telemetry/latest   most recent 1 Hz sample batch
    GET  /telemetry/stream   the same, as server-sent events
    POST /buffer             {"percentile": p} and/or
                             {"max_target_frames": n}
    POST /metronome          {"enabled": bool} and/or {"bpm": x}
    POST /routing            {"source": s, "bus": b, "gain": g}
    POST /session/stop       {}

Errors are {"error": {"code": ..., "message": ...}}; codes are listed
in docs/control-api.md and are part of the contract.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .audio import ConfigError

MAX_BODY_BYTES = 64 * 1024
SSE_KEEPALIVE_S = 2.0


def _telemetry_payload(handle) -> dict:
    """Caller holds handle.lock."""
    rows = handle.latest_rows or []
    engine = handle.engine
    met = engine.config.metronome
    cfg = engine._desired_buffer
    return {
        "t_s": rows[0].t_s if rows else None,
        "streams": [asdict(r) for r in rows],
        "metronome": {
            "enabled": met.enabled,
            "bpm": met.bpm,
            "beats_per_bar": met.beats_per_bar,
            "owner": met.owner_peer_id,
        },
        "buffer_config": {
            "percentile": cfg.percentile,
            "max_target_frames": cfg.max_target_frames,
        },
        "routing": {
            source: dict(row)
            for source, row in engine.config.routing.gains.items()
        },
    }


class ControlHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "mevo-control"

    # the session handle rides on the server object ("handle" itself
    # is taken: BaseHTTPRequestHandler.handle drives request parsing)
    @property
    def session(self):
        return self.server.session_handle

    def log_message(self, fmt, *args):
        pass

    # ---- plumbing ----------------------------------------------------

    def _send_json(self, code: int, obj: dict):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, err_code: str, message: str):
        self._send_json(code, {"error": {"code": err_code,
                                         "message": message}})

    def _read_body(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            raise ValueError("body too large")
        raw = self.rfile.read(length) if length else b"{}"
        doc = json.loads(raw.decode("utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("body must be a JSON object")
        return doc

    def _check_fields(self, doc, allowed):
        extra = set(doc) - allowed
        if extra:
            raise ConfigError("unknown field %s" % ", ".join(sorted(extra)))

    # ---- routes ------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        handle = self.session
        if self.path == "/status":
            with handle.lock:
                body = handle.engine.status(handle.now_us())
            self._send_json(200, body)
        elif self.path == "/telemetry/latest":
            with handle.lock:
                body = _telemetry_payload(handle)
            self._send_json(200, body)
        elif self.path == "/telemetry/stream":
            self._stream()
        else:
            self._error(404, "not_found", "no such path: %s" % self.path)

    def _stream(self):
        handle = self.session
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        last_sent = None
        try:
            while handle.running():
                with handle.lock:
                    if handle.latest_rows is None or (
                            handle.latest_rows is last_sent):
                        handle.latest_cond.wait(SSE_KEEPALIVE_S)
                    if handle.latest_rows is last_sent:
                        payload = None      # timeout: keep the pipe warm
                    else:
                        last_sent = handle.latest_rows
                        payload = _telemetry_payload(handle)
                if payload is None:
                    self.wfile.write(b": keepalive\n\n")
                else:
                    data = json.dumps(payload)
                    self.wfile.write(b"data: " + data.encode("utf-8")
                                     + b"\n\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_POST(self):
        handle = self.session
        try:
            doc = self._read_body()
        except (ValueError, UnicodeDecodeError) as exc:
            self._error(400, "invalid_json", str(exc))
            return
        try:
            if self.path == "/buffer":
                self._check_fields(doc, {"percentile", "max_target_frames"})
                if not doc:
                    raise ConfigError("nothing to change")
                with handle.lock:
                    cfg = handle.engine.request_buffer_change(
                        percentile=doc.get("percentile"),
                        max_target_frames=doc.get("max_target_frames"))
                self._send_json(200, {
                    "percentile": cfg.percentile,
                    "max_target_frames": cfg.max_target_frames,
                })
            elif self.path == "/metronome":
                self._check_fields(doc, {"enabled", "bpm"})
                if not doc:
                    raise ConfigError("nothing to change")
                if "enabled" in doc and not isinstance(doc["enabled"], bool):
                    raise ConfigError("enabled must be a boolean")
                if "bpm" in doc and not isinstance(doc["bpm"], (int, float)):
                    raise ConfigError("bpm must be a number")
                with handle.lock:
                    met = handle.engine.request_metronome_change(
                        enabled=doc.get("enabled"), bpm=doc.get("bpm"))
                self._send_json(200, {"enabled": met.enabled,
                                      "bpm": met.bpm})
            elif self.path == "/routing":
                self._check_fields(doc, {"source", "bus", "gain"})
                for key in ("source", "bus", "gain"):
                    if key not in doc:
                        raise ConfigError("missing field %s" % key)
                if not isinstance(doc["gain"], (int, float)) or isinstance(
                        doc["gain"], bool):
                    raise ConfigError("gain must be a number")
                with handle.lock:
                    handle.engine.request_routing_change(
                        doc["source"], doc["bus"], doc["gain"])
                self._send_json(200, {"source": doc["source"],
                                      "bus": doc["bus"],
                                      "gain": float(doc["gain"])})
            elif self.path == "/session/stop":
                with handle.lock:
                    handle.engine.request_stop()
                self._send_json(200, {"stopping": True})
            else:
                self._error(404, "not_found", "no such path: %s" % self.path)
        except ConfigError as exc:
            self._error(400, "invalid_value", str(exc))


def start_control_server(handle, port: int):
    """Bind and serve in a daemon thread; returns (server, bound port).

    Port 0 asks the OS for an ephemeral port, which is what tests use.
    """
    server = ThreadingHTTPServer(("127.0.0.1", port), ControlHandler)
    server.daemon_threads = True
    server.session_handle = handle
    thread = threading.Thread(
        target=server.serve_forever, name="mevo-control", daemon=True)
    thread.start()
    return server, server.server_address[1]
