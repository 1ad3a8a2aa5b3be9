from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from detloop.cli import main as cli_main
from detloop.loop import STATE_FILENAME, AnnotationSource, load_state
from detloop.server import create_app

from loop_fixtures import write_workspace_inputs


@pytest.fixture(scope="session")
def golden_workspace(tmp_path_factory) -> Path:
    """Loop workspace stepped to the first awaiting-review checkpoint."""
    base = tmp_path_factory.mktemp("server-golden")
    config_path = write_workspace_inputs(base / "inputs")
    workdir = base / "run"
    assert cli_main(["loop", "init", "--config", str(config_path), "--workdir", str(workdir)]) == 0
    assert cli_main(["loop", "step", "--workdir", str(workdir)]) == 0
    return workdir


@pytest.fixture()
def workspace(golden_workspace, tmp_path) -> Path:
    # Each test mutates its own copy of the checkpointed workspace.
    workdir = tmp_path / "run"
    shutil.copytree(golden_workspace, workdir)
    return workdir


@pytest.fixture()
def client(workspace) -> TestClient:
    return TestClient(create_app(workspace))


def accept_all(client: TestClient, frame_id: str, request_id: str | None = None) -> dict:
    frame = client.get(f"/api/frames/{frame_id}").json()
    decisions = [{"detection_index": d["index"], "action": "accept"} for d in frame["detections"]]
    response = client.post(
        f"/api/frames/{frame_id}/review",
        json={"request_id": request_id or f"req-{frame_id}", "decisions": decisions},
    )
    assert response.status_code == 200, response.text
    return response.json()


class TestStateAndPending:
    def test_state_summary(self, client):
        state = client.get("/api/state").json()
        assert state["phase"] == "awaiting-review"
        assert state["iteration"] == 0
        assert state["training_size"] == 40
        assert state["pending"]["frames"]

    def test_pending_is_the_human_fraction(self, client, workspace):
        loop_state = load_state(workspace / STATE_FILENAME)
        response = client.get("/api/iterations/0/pending")
        assert response.status_code == 200
        assert response.json()["frames"] == list(loop_state.pending.human_frames)

    def test_pending_for_wrong_iteration_is_404(self, client):
        assert client.get("/api/iterations/5/pending").status_code == 404

    def test_frame_payload_shape(self, client):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        frame = client.get(f"/api/frames/{frames[0]}").json()
        assert frame["pending_review"] is True
        assert frame["reviewed"] is False
        for det in frame["detections"]:
            assert {"index", "class", "score", "bbox"} <= set(det)

    def test_unknown_frame_is_404(self, client):
        assert client.get("/api/frames/nope").status_code == 404


class TestReviewFlow:
    def test_accept_all_then_finalize_builds_human_manifest(self, client, workspace):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        before = load_state(workspace / STATE_FILENAME)
        staged = {fid: before.pending.payload[fid] for fid in frames}

        for frame_id in frames:
            accept_all(client, frame_id)
        # Reviews alone never touch the training set or the iteration index;
        # only finalize transitions the loop.
        mid = load_state(workspace / STATE_FILENAME)
        assert mid.iteration == before.iteration
        assert mid.training == before.training
        assert mid.unlabeled == before.unlabeled
        response = client.post("/api/iterations/0/finalize")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "finalized"
        assert body["training_size"] == 48
        assert body["next_iteration"] == 1

        after = load_state(workspace / STATE_FILENAME)
        added = {e.frame_id: e for e in after.training.entries}
        for frame_id in frames:
            assert added[frame_id].source is AnnotationSource.HUMAN
            annotations = after.annotations[frame_id]
            assert [(a.class_id, a.bbox) for a in annotations] == [
                (d.class_id, d.bbox) for d in staged[frame_id]]

    def test_relabel_propagates_into_training_annotations(self, client, workspace):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        target = None
        for frame_id in frames:
            if client.get(f"/api/frames/{frame_id}").json()["detections"]:
                target = frame_id
                break
        assert target is not None
        payload = client.get(f"/api/frames/{target}").json()["detections"]
        decisions = [{"detection_index": d["index"], "action": "accept"} for d in payload[1:]]
        decisions.append({"detection_index": payload[0]["index"], "action": "relabel", "class": "rivet"})
        response = client.post(f"/api/frames/{target}/review",
                               json={"request_id": "relabel-1", "decisions": decisions})
        assert response.status_code == 200
        for frame_id in frames:
            if frame_id != target:
                accept_all(client, frame_id)
        assert client.post("/api/iterations/0/finalize").status_code == 200

        after = load_state(workspace / STATE_FILENAME)
        classes = sorted(a.class_id for a in after.annotations[target])
        assert "rivet" in classes

    def test_rejection_removes_detection_from_annotations(self, client, workspace):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        target = next(f for f in frames if client.get(f"/api/frames/{f}").json()["detections"])
        payload = client.get(f"/api/frames/{target}").json()["detections"]
        decisions = [{"detection_index": payload[0]["index"], "action": "reject"}]
        decisions += [{"detection_index": d["index"], "action": "accept"} for d in payload[1:]]
        assert client.post(f"/api/frames/{target}/review",
                           json={"request_id": "reject-1", "decisions": decisions}).status_code == 200
        for frame_id in frames:
            if frame_id != target:
                accept_all(client, frame_id)
        client.post("/api/iterations/0/finalize")
        after = load_state(workspace / STATE_FILENAME)
        assert len(after.annotations[target]) == len(payload) - 1


class TestIdempotency:
    def test_double_submit_same_request_id_is_a_noop(self, client, workspace):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        first = accept_all(client, frames[0], request_id="fixed-id")
        second = accept_all(client, frames[0], request_id="fixed-id")
        assert first == second
        state = load_state(workspace / STATE_FILENAME)
        assert state.pending.reviews[frames[0]].request_id == "fixed-id"

    def test_new_request_id_replaces_previous_review(self, client, workspace):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        target = next(f for f in frames if client.get(f"/api/frames/{f}").json()["detections"])
        accept_all(client, target, request_id="first")
        payload = client.get(f"/api/frames/{target}").json()["detections"]
        decisions = [{"detection_index": d["index"], "action": "reject"} for d in payload]
        response = client.post(f"/api/frames/{target}/review",
                               json={"request_id": "second", "decisions": decisions})
        assert response.status_code == 200
        state = load_state(workspace / STATE_FILENAME)
        assert state.pending.reviews[target].request_id == "second"
        assert all(d.action.value == "reject" for d in state.pending.reviews[target].decisions)

    def test_finalize_retry_is_idempotent(self, client):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        for frame_id in frames:
            accept_all(client, frame_id)
        first = client.post("/api/iterations/0/finalize").json()
        retry = client.post("/api/iterations/0/finalize").json()
        assert first["status"] == retry["status"] == "finalized"
        assert first["training_size"] == retry["training_size"]


class TestCliServerInterleaving:
    def test_cli_ingest_sees_reviews_stored_through_the_service(self, client, workspace, tmp_path):
        # One frame reviewed over HTTP, the rest ingested from a file: the
        # CLI must pick up the service's review from disk and advance.
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        accept_all(client, frames[0])

        reviews_path = tmp_path / "rest.jsonl"
        with open(reviews_path, "w") as handle:
            for frame_id in frames[1:]:
                detections = client.get(f"/api/frames/{frame_id}").json()["detections"]
                handle.write(json.dumps({
                    "frame_id": frame_id,
                    "request_id": f"file-{frame_id}",
                    "decisions": [{"detection_index": d["index"], "action": "accept"}
                                  for d in detections],
                }) + "\n")
        assert cli_main(["loop", "ingest-reviews", "--workdir", str(workspace),
                         "--reviews", str(reviews_path)]) == 0

        state = load_state(workspace / STATE_FILENAME)
        assert state.iteration == 1
        assert state.pending is None
        assert {e.frame_id for e in state.training.entries} >= set(frames)


class TestErrorPaths:
    def test_finalize_with_unreviewed_frames_is_409_with_ids(self, client):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        accept_all(client, frames[0])
        response = client.post("/api/iterations/0/finalize")
        assert response.status_code == 409
        assert sorted(response.json()["detail"]["unreviewed"]) == sorted(frames[1:])

    def test_malformed_review_is_400_with_diagnostics(self, client):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        response = client.post(f"/api/frames/{frames[0]}/review",
                               json={"request_id": "x", "decisions": [{"action": "accept"}]})
        assert response.status_code == 400
        assert "detection_index" in json.dumps(response.json())

    def test_incomplete_decisions_are_400(self, client):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        target = next(f for f in frames if client.get(f"/api/frames/{f}").json()["detections"])
        response = client.post(f"/api/frames/{target}/review",
                               json={"request_id": "x", "decisions": []})
        assert response.status_code == 400
        assert "missing decisions" in response.json()["detail"]

    def test_unknown_action_is_400(self, client):
        frames = client.get("/api/iterations/0/pending").json()["frames"]
        response = client.post(
            f"/api/frames/{frames[0]}/review",
            json={"request_id": "x", "decisions": [{"detection_index": 0, "action": "explode"}]})
        assert response.status_code == 400

    def test_review_for_non_pending_frame_is_404(self, client):
        response = client.post("/api/frames/999999/review",
                               json={"request_id": "x", "decisions": []})
        assert response.status_code == 404
