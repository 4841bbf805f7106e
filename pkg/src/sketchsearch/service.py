"""HTTP drawing sessions: submit strokes, get updated top-k photos per stroke.

The model and gallery are loaded once and shared read-only. Sessions are
independent and append-only; requests within one session are serialized by a
per-session lock. A human's stroke count does not line up with the training
grid of T rendering steps, so strokes map to a step estimate via a reference
stroke budget: after stroke_count strokes the step is
min(T-1, ceil(T * stroke_count / budget) - 1), which sends stroke j of a
budget-of-S drawing to the rendering step whose point prefix is exactly j
strokes when strokes carry equal point counts, and the complete drawing to
step T-1.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import mimetypes
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import quote, unquote

import matplotlib.image
import numpy as np

from .model import StageEmbedder, assign_stage, embed_sketch
from .retrieval import Gallery, rank_all

log = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def not_found(message: str) -> ServiceError:
    return ServiceError(404, "not_found", message)


def invalid(message: str) -> ServiceError:
    return ServiceError(400, "invalid_request", message)


@dataclass
class Session:
    session_id: str
    target_id: str | None
    created: float
    strokes: list[np.ndarray] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def stroke_count(self) -> int:
        return len(self.strokes)


def _parse_stroke(raw) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) < 2:
        raise invalid("stroke needs at least 2 points")
    points = []
    for i, pt in enumerate(raw):
        if (
            not isinstance(pt, (list, tuple))
            or len(pt) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in pt)
        ):
            raise invalid(f"stroke point {i} must be an [x, y] number pair")
        x, y = float(pt[0]), float(pt[1])
        if not (np.isfinite(x) and np.isfinite(y) and 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise invalid(f"stroke point {i} outside [0, 1]")
        points.append((x, y))
    return np.array(points, dtype=float)


class RetrievalService:
    """Session store plus the per-stroke retrieval pipeline."""

    def __init__(
        self,
        model: StageEmbedder,
        gallery: Gallery,
        stroke_budget: int,
        fingerprint: str = "unknown",
    ):
        if model.extractor is None:
            raise ValueError(
                "checkpoint lacks a raster feature extractor; the service needs one "
                "to featurize live strokes"
            )
        if stroke_budget < 1:
            raise ValueError(f"stroke budget must be >= 1, got {stroke_budget}")
        self.model = model
        self.gallery = gallery
        self.stroke_budget = stroke_budget
        self.fingerprint = fingerprint
        self._sessions: dict[str, Session] = {}
        self._store_lock = threading.Lock()

    # -- sessions ----------------------------------------------------------

    def create_session(self, target_id: str | None = None) -> dict:
        if target_id is not None and target_id not in self.gallery.ids:
            raise not_found(f"unknown target photo {target_id!r}")
        session = Session(session_id=secrets.token_hex(8), target_id=target_id, created=time.time())
        with self._store_lock:
            self._sessions[session.session_id] = session
        return {
            "session_id": session.session_id,
            "target_id": target_id,
            "T": self.model.T,
            "k": self.model.k,
            "stroke_budget": self.stroke_budget,
        }

    def _session(self, session_id: str) -> Session:
        with self._store_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise not_found(f"unknown session {session_id!r}")
        return session

    def delete_session(self, session_id: str) -> None:
        with self._store_lock:
            if self._sessions.pop(session_id, None) is None:
                raise not_found(f"unknown session {session_id!r}")

    def step_estimate(self, stroke_count: int) -> int:
        T = self.model.T
        step = -(-T * stroke_count // self.stroke_budget) - 1  # ceil - 1
        return min(T - 1, max(0, step))

    def submit_stroke(self, session_id: str, raw_stroke, k_req: int = 10) -> dict:
        if not isinstance(k_req, int) or isinstance(k_req, bool) or k_req < 1:
            raise invalid(f"k must be a positive integer, got {k_req!r}")
        session = self._session(session_id)
        with session.lock:
            session.strokes.append(_parse_stroke(raw_stroke))
            step = self.step_estimate(session.stroke_count)
            stage = assign_stage(step, self.model.T, self.model.k)
            feature = self.model.extractor.features_for(session.strokes)
            query = embed_sketch(feature, step, self.model)
            distances, order = rank_all(query, self.gallery)
            top = [
                {
                    "photo_id": self.gallery.ids[i],
                    "distance": float(distances[i]),
                    "rank": pos + 1,
                }
                for pos, i in enumerate(order[: min(k_req, self.gallery.n)])
            ]
            response = {
                "step": step,
                "stage": stage,
                "stroke_count": session.stroke_count,
                "topk": top,
            }
            if session.target_id is not None:
                true_idx = self.gallery.index_of(session.target_id)
                response["true_rank"] = int(np.nonzero(order == true_idx)[0][0]) + 1
            return response

    # -- gallery and health ------------------------------------------------

    def gallery_listing(self) -> list[dict]:
        return [
            {"photo_id": pid, "thumbnail_ref": f"/gallery/{quote(pid, safe='')}/image"}
            for pid in self.gallery.ids
        ]

    def thumbnail_png(self, photo_id: str) -> bytes:
        if photo_id not in self.gallery.ids:
            raise not_found(f"unknown photo {photo_id!r}")
        return identicon_png(photo_id)

    def health(self) -> dict:
        return {
            "status": "ok",
            "model_fingerprint": self.fingerprint,
            "n": self.gallery.n,
            "k": self.model.k,
            "T": self.model.T,
        }


def identicon_png(photo_id: str, cells: int = 5, scale: int = 16) -> bytes:
    """Deterministic placeholder glyph for feature-only galleries."""
    digest = hashlib.sha256(photo_id.encode("utf-8")).digest()
    bits = np.unpackbits(np.frombuffer(digest, dtype=np.uint8))
    half = (cells + 1) // 2
    pattern = bits[: cells * half].reshape(cells, half).astype(bool)
    grid = np.concatenate([pattern, pattern[:, ::-1][:, cells % 2 :]], axis=1)
    fg = np.array([digest[-3], digest[-2], digest[-1]], dtype=float) / 255.0 * 0.6 + 0.2
    rgb = np.where(grid[..., None], fg, 0.96)
    rgb = np.kron(rgb, np.ones((scale, scale, 1)))
    rgb = np.pad(rgb, ((scale, scale), (scale, scale), (0, 0)), constant_values=0.96)
    buf = io.BytesIO()
    matplotlib.image.imsave(buf, rgb, format="png")
    return buf.getvalue()


ROUTES = [
    ("POST", re.compile(r"^/sessions$"), "create_session"),
    ("POST", re.compile(r"^/sessions/([^/]+)/strokes$"), "submit_stroke"),
    ("DELETE", re.compile(r"^/sessions/([^/]+)$"), "delete_session"),
    ("GET", re.compile(r"^/gallery$"), "gallery"),
    ("GET", re.compile(r"^/gallery/([^/]+)/image$"), "thumbnail"),
    ("GET", re.compile(r"^/health$"), "health"),
]


class _Handler(BaseHTTPRequestHandler):
    service: RetrievalService
    static_dir: Path | None = None
    protocol_version = "HTTP/1.1"

    # -- plumbing ----------------------------------------------------------

    def log_message(self, fmt, *args):  # route handler noise through logging
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send_json(self, obj, status: int = 200) -> None:
        blob = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _send_error_json(self, err: ServiceError) -> None:
        self._send_json({"code": err.code, "message": err.message}, status=err.status)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise invalid(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise invalid("request body must be a JSON object")
        return body

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0]
        try:
            for verb, pattern, name in ROUTES:
                if verb != method:
                    continue
                match = pattern.match(path)
                if match:
                    getattr(self, f"_route_{name}")(*[unquote(g) for g in match.groups()])
                    return
            if method == "GET" and self.static_dir is not None:
                self._serve_static(path)
                return
            raise not_found(f"no route for {method} {path}")
        except ServiceError as err:
            self._send_error_json(err)
        except Exception as exc:  # pragma: no cover - defensive
            log.exception("unhandled error on %s %s", method, path)
            self._send_error_json(ServiceError(500, "server_error", str(exc)))

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")

    # -- routes --------------------------------------------------------------

    def _route_create_session(self) -> None:
        body = self._read_body()
        target = body.get("target_id")
        if target is not None and not isinstance(target, str):
            raise invalid("target_id must be a string")
        self._send_json(self.service.create_session(target), status=201)

    def _route_submit_stroke(self, session_id: str) -> None:
        body = self._read_body()
        if "stroke" not in body:
            raise invalid("body needs a 'stroke' field")
        k_req = body.get("k", 10)
        self._send_json(self.service.submit_stroke(session_id, body["stroke"], k_req))

    def _route_delete_session(self, session_id: str) -> None:
        self.service.delete_session(session_id)
        self.send_response(204)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _route_gallery(self) -> None:
        self._send_json(self.service.gallery_listing())

    def _route_thumbnail(self, photo_id: str) -> None:
        blob = self.service.thumbnail_png(photo_id)
        self.send_response(200)
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _route_health(self) -> None:
        self._send_json(self.service.health())

    def _serve_static(self, path: str) -> None:
        rel = unquote(path).lstrip("/") or "index.html"
        base = self.static_dir.resolve()
        target = (base / rel).resolve()
        if base not in target.parents and target != base:
            raise not_found("path escapes the static directory")
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            raise not_found(f"no static file {rel!r}")
        blob = target.read_bytes()
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)


def build_server(
    service: RetrievalService, port: int, static_dir: str | Path | None = None
) -> ThreadingHTTPServer:
    handler = type(
        "BoundHandler",
        (_Handler,),
        {"service": service, "static_dir": Path(static_dir) if static_dir else None},
    )
    return ThreadingHTTPServer(("0.0.0.0", port), handler)
