from __future__ import annotations

import json
import threading
from urllib.error import HTTPError
from urllib.request import Request, urlopen

import pytest

from chartkit.humaneval import RatingStore, Study, study_stats
from chartkit.server import create_server

from conftest import JUDGE_MODEL_NAMES, make_study_dir


@pytest.fixture
def service(study_dir):
    server = create_server(study_dir, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    yield f"http://{host}:{port}", server
    server.shutdown()
    server.server_close()


def get(base: str, path: str):
    with urlopen(f"{base}{path}") as resp:
        return resp.status, resp.read()


def get_json(base: str, path: str):
    status, body = get(base, path)
    return status, json.loads(body)


def post_json(base: str, path: str, payload: dict):
    req = Request(
        f"{base}{path}",
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except HTTPError as err:
        return err.code, json.loads(err.read())


def full_scores():
    return {
        "response_1": {"Informativeness": 4, "Factual Correctness": 4, "Structure": 4},
        "response_2": {"Informativeness": 3, "Factual Correctness": 3, "Structure": 3},
    }


class TestAssignmentEndpoint:
    def test_payload_shape(self, service):
        base, _ = service
        status, body = get_json(base, "/api/assignment?annotator=anno-1")
        assert status == 200
        assert body["done"] is False
        assert set(body) == {"done", "item_id", "chart_url", "responses", "axes", "progress"}
        assert len(body["responses"]) == 2
        assert body["axes"] == ["Informativeness", "Factual Correctness", "Structure"]
        assert body["progress"] == {"done": 0, "total": 10}

    def test_unknown_annotator(self, service):
        base, _ = service
        try:
            with urlopen(f"{base}/api/assignment?annotator=intruder") as resp:
                status = resp.status
        except HTTPError as err:
            status = err.code
        assert status == 404

    def test_chart_served(self, service):
        base, _ = service
        _, body = get_json(base, "/api/assignment?annotator=anno-1")
        status, data = get(base, body["chart_url"])
        assert status == 200
        assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_path_traversal_blocked(self, service):
        base, _ = service
        try:
            with urlopen(f"{base}/charts/%2e%2e/config.json") as resp:
                status = resp.status
        except HTTPError as err:
            status = err.code
        assert status == 404


class TestRatingsEndpoint:
    def test_submit_and_duplicate(self, service):
        base, server = service
        _, item = get_json(base, "/api/assignment?annotator=anno-1")
        payload = {"item_id": item["item_id"], "annotator_id": "anno-1", "scores": full_scores()}
        status, body = post_json(base, "/api/ratings", payload)
        assert status == 201 and body["ok"] is True
        status, body = post_json(base, "/api/ratings", payload)
        assert status == 409

    def test_incomplete_scores_422(self, service):
        base, _ = service
        _, item = get_json(base, "/api/assignment?annotator=anno-1")
        scores = full_scores()
        del scores["response_1"]["Structure"]
        status, _ = post_json(
            base,
            "/api/ratings",
            {"item_id": item["item_id"], "annotator_id": "anno-1", "scores": scores},
        )
        assert status == 422

    def test_malformed_400(self, service):
        base, _ = service
        status, _ = post_json(base, "/api/ratings", {"nonsense": True})
        assert status == 400

    def test_unknown_item_404(self, service):
        base, _ = service
        status, _ = post_json(
            base,
            "/api/ratings",
            {"item_id": "item-999", "annotator_id": "anno-1", "scores": full_scores()},
        )
        assert status == 404


class TestFullDrive:
    def drive(self, base: str, annotator: str) -> int:
        submitted = 0
        while True:
            _, body = get_json(base, f"/api/assignment?annotator={annotator}")
            if body["done"]:
                return submitted
            status, _ = post_json(
                base,
                "/api/ratings",
                {"item_id": body["item_id"], "annotator_id": annotator, "scores": full_scores()},
            )
            assert status == 201
            submitted += 1

    def test_two_annotators_to_completion(self, service, study_dir):
        base, server = service
        assert self.drive(base, "anno-1") == 10
        assert self.drive(base, "anno-2") == 10
        _, body = get_json(base, "/api/assignment?annotator=anno-1")
        assert body["done"] is True

        ratings_file = study_dir / "ratings.jsonl"
        assert len(ratings_file.read_text().splitlines()) == 20

        _, stats = get_json(base, "/api/stats")
        assert stats["n_ratings"] == 20 and stats["complete"] is True

        # endpoint output equals the library-side computation on the same records
        study = Study.load(study_dir)
        store = RatingStore(ratings_file)
        assert stats == json.loads(json.dumps(study_stats(study, store)))

    def test_no_model_identity_in_any_payload(self, service):
        base, _ = service
        blobs = []
        for annotator in ("anno-1", "anno-2"):
            _, body = get_json(base, f"/api/assignment?annotator={annotator}")
            blobs.append(json.dumps(body))
        _, stats = get_json(base, "/api/stats")
        blobs.append(json.dumps(stats))
        _, index = get(base, "/")
        blobs.append(index.decode("utf-8", "replace"))
        for needle in JUDGE_MODEL_NAMES.values():
            for blob in blobs:
                assert needle not in blob

    def test_placeholder_index_without_ui(self, service):
        base, _ = service
        status, body = get(base, "/")
        assert status == 200
        assert b"No UI bundle" in body


class TestRestartConsistency:
    def test_ratings_survive_restart(self, study_dir):
        server = create_server(study_dir, port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        base = f"http://{server.server_address[0]}:{server.server_address[1]}"
        _, item = get_json(base, "/api/assignment?annotator=anno-1")
        post_json(
            base,
            "/api/ratings",
            {"item_id": item["item_id"], "annotator_id": "anno-1", "scores": full_scores()},
        )
        server.shutdown()
        server.server_close()

        revived = create_server(study_dir, port=0)
        thread = threading.Thread(target=revived.serve_forever, daemon=True)
        thread.start()
        base = f"http://{revived.server_address[0]}:{revived.server_address[1]}"
        _, body = get_json(base, "/api/assignment?annotator=anno-1")
        assert body["progress"]["done"] == 1
        status, _ = post_json(
            base,
            "/api/ratings",
            {"item_id": item["item_id"], "annotator_id": "anno-1", "scores": full_scores()},
        )
        assert status == 409  # duplicate across restarts
        revived.shutdown()
        revived.server_close()
