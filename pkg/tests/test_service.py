import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from sketchsearch.features import FeatureVector, GridExtractor
from sketchsearch.model import StageEmbedder
from sketchsearch.retrieval import build_gallery
from sketchsearch.service import RetrievalService, build_server

GRID = GridExtractor(grid=4, bins=2, width=64, height=64)  # H = 32


def make_service(n_photos=8, k=2, T=6, seed=0, stroke_budget=3):
    rng = np.random.default_rng(seed)
    H, D = GRID.dim, 4
    model = StageEmbedder(
        H=H, D=D, k=k, T=T,
        base_map=rng.standard_normal((D, H)) / np.sqrt(H),
        stage_maps=[rng.standard_normal((D, H)) / np.sqrt(H) for _ in range(k)],
        extractor=GRID,
    )
    photos = [FeatureVector(f"ph{i}", rng.standard_normal(H)) for i in range(n_photos)]
    gallery = build_gallery(photos, model)
    return RetrievalService(model, gallery, stroke_budget=stroke_budget, fingerprint="test-fp")


@pytest.fixture()
def server(tmp_path):
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<html><body>canvas</body></html>")
    (static / "app.js").write_text("console.log('hi')")
    srv = build_server(make_service(), port=0, static_dir=static)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()
    thread.join(timeout=5)


def http(method, url, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method)
    if data is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            blob = resp.read()
            ctype = resp.headers.get("Content-Type", "")
            return resp.status, json.loads(blob) if ctype.startswith("application/json") and blob else blob
    except urllib.error.HTTPError as err:
        blob = err.read()
        return err.code, json.loads(blob) if blob else {}


def stroke(x0, y0, x1, y1, points=4):
    ts = np.linspace(0, 1, points)
    return [[float(x0 + t * (x1 - x0)), float(y0 + t * (y1 - y0))] for t in ts]


def test_create_and_submit_stroke(server):
    status, created = http("POST", f"{server}/sessions", {})
    assert status == 201 and created["session_id"]
    assert created["T"] == 6 and created["k"] == 2
    sid = created["session_id"]
    status, resp = http("POST", f"{server}/sessions/{sid}/strokes", {"stroke": stroke(0, 0, 1, 1), "k": 5})
    assert status == 200
    assert resp["stroke_count"] == 1
    assert 0 <= resp["step"] < 6
    assert resp["stage"] in (0, 1)
    assert len(resp["topk"]) == 5
    assert [e["rank"] for e in resp["topk"]] == [1, 2, 3, 4, 5]
    dists = [e["distance"] for e in resp["topk"]]
    assert dists == sorted(dists)
    assert "true_rank" not in resp


def test_topk_capped_at_gallery_size(server):
    _, created = http("POST", f"{server}/sessions", {})
    _, resp = http("POST", f"{server}/sessions/{created['session_id']}/strokes",
                   {"stroke": stroke(0, 0, 1, 1), "k": 50})
    assert len(resp["topk"]) == 8


def test_practice_mode_reports_true_rank(server):
    status, created = http("POST", f"{server}/sessions", {"target_id": "ph3"})
    assert status == 201
    _, resp = http("POST", f"{server}/sessions/{created['session_id']}/strokes",
                   {"stroke": stroke(0.2, 0.2, 0.8, 0.8)})
    assert 1 <= resp["true_rank"] <= 8


def test_unknown_target_is_404(server):
    status, body = http("POST", f"{server}/sessions", {"target_id": "nope"})
    assert status == 404 and body["code"] == "not_found"


def test_invalid_strokes_rejected(server):
    _, created = http("POST", f"{server}/sessions", {})
    sid = created["session_id"]
    status, body = http("POST", f"{server}/sessions/{sid}/strokes", {"stroke": [[0.5, 0.5]]})
    assert status == 400 and body["code"] == "invalid_request"
    status, body = http("POST", f"{server}/sessions/{sid}/strokes",
                        {"stroke": [[0.5, 0.5], [1.5, 0.5]]})
    assert status == 400
    status, body = http("POST", f"{server}/sessions/{sid}/strokes",
                        {"stroke": stroke(0, 0, 1, 1), "k": 0})
    assert status == 400


def test_unknown_session_is_404(server):
    status, body = http("POST", f"{server}/sessions/deadbeef/strokes", {"stroke": stroke(0, 0, 1, 1)})
    assert status == 404


def test_delete_session_then_404(server):
    _, created = http("POST", f"{server}/sessions", {})
    sid = created["session_id"]
    status, _ = http("DELETE", f"{server}/sessions/{sid}")
    assert status == 204
    status, _ = http("DELETE", f"{server}/sessions/{sid}")
    assert status == 404


def test_gallery_listing_and_thumbnails(server):
    status, listing = http("GET", f"{server}/gallery")
    assert status == 200 and len(listing) == 8
    entry = listing[0]
    assert entry["photo_id"] == "ph0"
    status, blob = http("GET", f"{server}{entry['thumbnail_ref']}")
    assert status == 200 and blob.startswith(b"\x89PNG")
    status, _ = http("GET", f"{server}/gallery/ghost/image")
    assert status == 404


def test_health_reports_model(server):
    status, body = http("GET", f"{server}/health")
    assert status == 200
    assert body == {"status": "ok", "model_fingerprint": "test-fp", "n": 8, "k": 2, "T": 6}
    # Reads are idempotent.
    assert http("GET", f"{server}/health")[1] == body


def test_static_files_served(server):
    status, blob = http("GET", f"{server}/")
    assert status == 200 and b"canvas" in blob
    status, blob = http("GET", f"{server}/app.js")
    assert status == 200 and b"console" in blob
    status, _ = http("GET", f"{server}/missing.js")
    assert status == 404


def test_session_isolation(server):
    # Interleaved strokes in two sessions give the same responses as a single
    # session drawing the same strokes back to back.
    s1 = http("POST", f"{server}/sessions", {})[1]["session_id"]
    s2 = http("POST", f"{server}/sessions", {})[1]["session_id"]
    strokes = [stroke(0, 0, 1, 0), stroke(0, 0.5, 1, 0.5), stroke(0, 1, 1, 1)]
    inter = {s1: [], s2: []}
    for st in strokes:
        for sid in (s1, s2):
            inter[sid].append(http("POST", f"{server}/sessions/{sid}/strokes", {"stroke": st})[1])
    assert inter[s1] == inter[s2]
    s3 = http("POST", f"{server}/sessions", {})[1]["session_id"]
    solo = [http("POST", f"{server}/sessions/{s3}/strokes", {"stroke": st})[1] for st in strokes]
    assert solo == inter[s1]


def test_service_requires_raster_extractor():
    rng = np.random.default_rng(0)
    model = StageEmbedder(H=4, D=2, k=1, T=3,
                          base_map=rng.standard_normal((2, 4)),
                          stage_maps=[rng.standard_normal((2, 4))])
    photos = [FeatureVector(f"p{i}", rng.standard_normal(4)) for i in range(3)]
    gallery = build_gallery(photos, model)
    with pytest.raises(ValueError, match="extractor"):
        RetrievalService(model, gallery, stroke_budget=3)


def test_step_estimate_mapping():
    service = make_service(T=6, stroke_budget=6)
    # Stroke j of a budget-of-6 drawing lands on step j-1; extra strokes clamp.
    assert [service.step_estimate(j) for j in range(1, 9)] == [0, 1, 2, 3, 4, 5, 5, 5]
