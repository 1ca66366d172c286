import base64
import hashlib
import json
import threading

from fastapi.testclient import TestClient

from altar import canonical
from tests.conftest import make_app
from tests.test_model import FIG_CONFIG


def create_run(client, name="get_movie", config=None, **extra):
    body = {"experiment_name": name, "config": config or dict(FIG_CONFIG), **extra}
    response = client.post("/api/runs", json=body)
    assert response.status_code == 200, response.text
    return response.json()["run_id"]


class TestCreateRun:
    def test_fresh_store_counts_from_one(self, client):
        assert create_run(client) == 1
        assert create_run(client) == 2

    def test_run_document_shape(self, client, clock):
        run_id = create_run(client)
        doc = client.get(f"/api/runs/{run_id}").json()
        assert doc["experiment"]["name"] == "get_movie"
        assert doc["config"] == FIG_CONFIG
        assert doc["status"] == "RUNNING"
        assert doc["start_time"] == "2025-01-23T12:00:00.000Z"
        assert doc["heartbeat"] == doc["start_time"]
        assert doc["stale"] is False
        assert doc["artifacts"] == []
        assert doc["metric_names"] == []
        assert doc["host"]["hostname"]

    def test_explicit_host_and_sources(self, client):
        run_id = create_run(
            client,
            host={"hostname": "rig-1", "os_name": "Linux"},
            sources=[["main.py", "ab" * 32]],
        )
        doc = client.get(f"/api/runs/{run_id}").json()
        assert doc["host"]["hostname"] == "rig-1"
        assert doc["host"]["os_version"] == "unknown"
        assert doc["sources"] == [["main.py", "ab" * 32]]

    def test_missing_experiment_name(self, client):
        response = client.post("/api/runs", json={"config": {}})
        assert response.status_code == 400

    def test_config_validation_maps_to_400(self, client):
        for config in ({"a.b": 1}, {"$set": 1}, {"a": float("nan")}, "flat"):
            body = json.dumps(
                {"experiment_name": "e", "config": config}, allow_nan=True
            )
            response = client.post(
                "/api/runs", content=body, headers={"Content-Type": "application/json"}
            )
            assert response.status_code == 400, config
        error = client.post(
            "/api/runs", json={"experiment_name": "e", "config": {"a.b": 1}}
        ).json()
        assert error["error"] == "KeyInvalid"

    def test_malformed_body(self, client):
        response = client.post(
            "/api/runs", content=b"{oops", headers={"Content-Type": "application/json"}
        )
        assert response.status_code == 400

    def test_parallel_creates_get_distinct_ids(self, client):
        ids = []
        lock = threading.Lock()

        def worker():
            run_id = create_run(client, config={})
            with lock:
                ids.append(run_id)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(ids) == list(range(1, 9))


class TestMetrics:
    def test_batch_appends_in_order(self, client):
        run_id = create_run(client)
        entries = [
            {"name": "Average_fluorescence", "step": 0.0, "value": 17.5},
            {"name": "Average_fluorescence", "step": 0.1, "value": 18.25},
        ]
        response = client.post(f"/api/runs/{run_id}/metrics", json=entries)
        assert response.status_code == 200
        assert response.json() == {"accepted": 2}
        series = client.get(f"/api/runs/{run_id}/metrics/Average_fluorescence").json()
        assert series["steps"] == [0.0, 0.1]
        assert series["values"] == [17.5, 18.25]
        assert len(series["timestamps"]) == 2
        run = client.get(f"/api/runs/{run_id}").json()
        assert run["metric_names"] == ["Average_fluorescence"]

    def test_non_monotonic_step_rejected_batch_atomic(self, client):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/metrics", json=[{"name": "m", "step": 0.1, "value": 1}])
        bad = [
            {"name": "m", "step": 0.2, "value": 2},
            {"name": "m", "step": 0.05, "value": 3},
        ]
        response = client.post(f"/api/runs/{run_id}/metrics", json=bad)
        assert response.status_code == 422
        assert response.json()["error"] == "NonMonotonicStep"
        series = client.get(f"/api/runs/{run_id}/metrics/m").json()
        assert series["steps"] == [0.1]  # nothing from the failed batch landed

    def test_equal_step_rejected(self, client):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/metrics", json=[{"name": "m", "step": 1, "value": 1}])
        response = client.post(
            f"/api/runs/{run_id}/metrics", json=[{"name": "m", "step": 1, "value": 2}]
        )
        assert response.status_code == 422

    def test_independent_series_have_independent_steps(self, client):
        run_id = create_run(client)
        response = client.post(
            f"/api/runs/{run_id}/metrics",
            json=[
                {"name": "a", "step": 5, "value": 1},
                {"name": "b", "step": 1, "value": 1},
            ],
        )
        assert response.status_code == 200

    def test_log_to_finished_run_is_409(self, client):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
        response = client.post(
            f"/api/runs/{run_id}/metrics", json=[{"name": "m", "step": 0, "value": 1}]
        )
        assert response.status_code == 409

    def test_unknown_run_404(self, client):
        response = client.post("/api/runs/99/metrics", json=[{"name": "m", "step": 0, "value": 1}])
        assert response.status_code == 404
        assert client.get("/api/runs/99/metrics/m").status_code == 404

    def test_unknown_metric_404(self, client):
        run_id = create_run(client)
        assert client.get(f"/api/runs/{run_id}/metrics/nope").status_code == 404

    def test_bad_entries_400(self, client):
        run_id = create_run(client)
        for bad in (
            {"name": "", "step": 0, "value": 1},
            {"name": "m", "step": "x", "value": 1},
            {"name": "m", "step": 0, "value": True},
            {"name": "m", "step": 0, "value": 1, "timestamp": "noon"},
            "not a map",
        ):
            response = client.post(f"/api/runs/{run_id}/metrics", json=[bad])
            assert response.status_code == 400, bad
        assert client.post(f"/api/runs/{run_id}/metrics", json={"name": "m"}).status_code == 400


class TestArtifacts:
    def upload(self, client, run_id, name, data, media_type="application/octet-stream"):
        return client.post(
            f"/api/runs/{run_id}/artifacts",
            data={"name": name, "media_type": media_type},
            files={"bytes": (name, data, media_type)},
        )

    def test_small_payload_stored_inline(self, tmp_path, clock):
        app = make_app(tmp_path, clock, large_file_threshold_bytes=100)
        with TestClient(app) as client:
            run_id = create_run(client)
            response = self.upload(client, run_id, "notes.txt", b"x" * 100)
            ref = response.json()
            assert ref["kind"] == "INLINE"
            assert ref["size_bytes"] == 100
            assert ref["content_hash"] == hashlib.sha256(b"x" * 100).hexdigest()
            assert "blob_uid" not in ref
            got = client.get(f"/api/runs/{run_id}/artifacts/notes.txt")
            assert got.content == b"x" * 100

    def test_large_payload_goes_to_blob_store(self, tmp_path, clock):
        app = make_app(tmp_path, clock, large_file_threshold_bytes=100)
        data = b"y" * 101
        with TestClient(app) as client:
            run_id = create_run(client)
            ref = self.upload(client, run_id, "video.bin", data, "video/mp4").json()
            assert ref["kind"] == "BLOB"
            assert ref["blob_uid"] == hashlib.sha256(data).hexdigest()
            assert client.get(f"/api/runs/{run_id}/artifacts/video.bin").content == data
            assert client.get(f"/api/blobs/{ref['blob_uid']}").content == data
        manifest_doc = json.loads(
            next((tmp_path / "data" / "blobs" / "objects").rglob("*.manifest.json")).read_text()
        )
        assert manifest_doc["owners"][0]["config_snapshot"] == FIG_CONFIG
        assert manifest_doc["owners"][0]["original_filename"] == "video.bin"

    def test_duplicate_name_409(self, client):
        run_id = create_run(client)
        assert self.upload(client, run_id, "a.txt", b"1").status_code == 200
        assert self.upload(client, run_id, "a.txt", b"2").status_code == 409

    def test_terminal_run_409(self, client):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
        assert self.upload(client, run_id, "late.txt", b"x").status_code == 409

    def test_unsafe_names_400(self, client):
        run_id = create_run(client)
        for name in ("../escape", "/abs", "a//b", "dir/./x", ""):
            response = self.upload(client, run_id, name, b"x")
            assert response.status_code == 400, name

    def test_nested_relative_names_allowed(self, client):
        run_id = create_run(client)
        assert self.upload(client, run_id, "metrics/a.csv", b"step,value\n").status_code == 200
        got = client.get(f"/api/runs/{run_id}/artifacts/metrics/a.csv")
        assert got.status_code == 200

    def test_unknown_artifact_404(self, client):
        run_id = create_run(client)
        assert client.get(f"/api/runs/{run_id}/artifacts/nope").status_code == 404

    def test_bad_blob_uid(self, client):
        assert client.get("/api/blobs/zz").status_code == 400
        assert client.get(f"/api/blobs/{'0' * 64}").status_code == 404


class TestFinish:
    def test_complete_with_result(self, client):
        run_id = create_run(client)
        response = client.post(
            f"/api/runs/{run_id}/finish", json={"event": "complete", "result": 0.93}
        )
        doc = response.json()
        assert doc["status"] == "COMPLETED"
        assert doc["result"] == 0.93
        assert doc["stop_time"] == "2025-01-23T12:00:00.000Z"

    def test_fail_and_interrupt(self, client):
        for event, status in (("fail", "FAILED"), ("interrupt", "INTERRUPTED")):
            run_id = create_run(client)
            doc = client.post(f"/api/runs/{run_id}/finish", json={"event": event}).json()
            assert doc["status"] == status

    def test_double_finish_409(self, client):
        run_id = create_run(client)
        assert client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"}).status_code == 200
        response = client.post(f"/api/runs/{run_id}/finish", json={"event": "fail"})
        assert response.status_code == 409
        assert response.json()["error"] == "IllegalTransition"

    def test_unknown_event_400(self, client):
        run_id = create_run(client)
        assert client.post(f"/api/runs/{run_id}/finish", json={"event": "explode"}).status_code == 400

    def test_captured_out_truncated_at_cap(self, tmp_path, clock):
        from altar.service import TRUNCATION_MARKER

        app = make_app(tmp_path, clock, captured_out_cap_bytes=1000)
        with TestClient(app) as client:
            run_id = create_run(client)
            doc = client.post(
                f"/api/runs/{run_id}/finish",
                json={"event": "complete", "captured_out": "z" * 2000},
            ).json()
            assert doc["captured_out"] == "z" * 1000 + TRUNCATION_MARKER
            assert len(doc["captured_out"].encode()) == 1000 + len(TRUNCATION_MARKER)

    def test_short_captured_out_untouched(self, client):
        run_id = create_run(client)
        doc = client.post(
            f"/api/runs/{run_id}/finish",
            json={"event": "complete", "captured_out": "all good"},
        ).json()
        assert doc["captured_out"] == "all good"


class TestHeartbeat:
    def test_updates_heartbeat(self, client, clock):
        run_id = create_run(client)
        clock.advance(30)
        response = client.post(f"/api/runs/{run_id}/heartbeat")
        assert response.json() == {"heartbeat": "2025-01-23T12:00:30.000Z"}

    def test_terminal_409(self, client):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
        assert client.post(f"/api/runs/{run_id}/heartbeat").status_code == 409

    def test_stale_flag_follows_clock(self, client, clock):
        run_id = create_run(client)
        assert client.get(f"/api/runs/{run_id}").json()["stale"] is False
        clock.advance(120)
        assert client.get(f"/api/runs/{run_id}").json()["stale"] is False  # exactly at limit
        clock.advance(1)
        assert client.get(f"/api/runs/{run_id}").json()["stale"] is True
        listed = client.get("/api/runs").json()["runs"][0]
        assert listed["stale"] is True
        client.post(f"/api/runs/{run_id}/heartbeat")
        assert client.get(f"/api/runs/{run_id}").json()["stale"] is False

    def test_terminal_runs_never_stale(self, client, clock):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
        clock.advance(10_000)
        assert client.get(f"/api/runs/{run_id}").json()["stale"] is False


class TestQueryEndpoint:
    def test_empty_store(self, client):
        assert client.get("/api/runs").json() == {"total": 0, "runs": []}

    def test_filter_by_experiment_name(self, client):
        create_run(client, name="get_movie")
        create_run(client, name="other")
        response = client.get(
            "/api/runs", params={"filter": json.dumps({"experiment.name": "get_movie"})}
        )
        payload = response.json()
        assert payload["total"] == 1
        assert payload["runs"][0]["run_id"] == 1

    def test_filter_on_config_path(self, client):
        create_run(client, config={"frame_acquisition": {"gain": 10}})
        create_run(client, config={"frame_acquisition": {"gain": 5}})
        payload = client.get(
            "/api/runs",
            params={"filter": json.dumps({"config.frame_acquisition.gain": {"$gte": 10}})},
        ).json()
        assert [r["run_id"] for r in payload["runs"]] == [1]

    def test_sort_skip_limit(self, client):
        for gain in (3, 1, 2):
            create_run(client, config={"gain": gain})
        payload = client.get(
            "/api/runs", params={"sort": "config.gain:desc", "skip": 1, "limit": 1}
        ).json()
        assert payload["total"] == 3
        assert payload["runs"][0]["config"]["gain"] == 2

    def test_bad_params_400(self, client):
        assert client.get("/api/runs", params={"filter": "{oops"}).status_code == 400
        assert client.get("/api/runs", params={"filter": '{"a":{"$like":1}}'}).status_code == 400
        assert client.get("/api/runs", params={"sort": "a:up"}).status_code == 400
        assert client.get("/api/runs", params={"skip": "x"}).status_code == 400
        assert client.get("/api/runs", params={"limit": "100000"}).status_code == 400


class TestExperimentsAndAnnotations:
    def test_experiment_counts(self, client):
        create_run(client, name="b")
        create_run(client, name="a")
        create_run(client, name="b")
        assert client.get("/api/experiments").json() == [
            {"name": "a", "run_count": 1},
            {"name": "b", "run_count": 2},
        ]

    def test_annotate_completed_run(self, client):
        run_id = create_run(client)
        client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
        response = client.post(
            f"/api/runs/{run_id}/annotations",
            json={"author": "ada", "tags": ["good"], "note": "nice plateau"},
        )
        assert response.status_code == 200
        note = response.json()
        assert note["annotation_id"] == 1
        assert note["run_id"] == run_id
        listed = client.get(f"/api/runs/{run_id}/annotations").json()
        assert listed == [note]

    def test_annotation_does_not_touch_run_bytes(self, tmp_path, clock):
        app = make_app(tmp_path, clock)
        journal = tmp_path / "data" / "db" / "runs.jsonl"
        with TestClient(app) as client:
            run_id = create_run(client)
            client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
            before = journal.read_bytes()
            client.post(
                f"/api/runs/{run_id}/annotations", json={"author": "ada", "note": "x"}
            )
            assert journal.read_bytes() == before

    def test_annotation_validation(self, client):
        run_id = create_run(client)
        assert (
            client.post(f"/api/runs/{run_id}/annotations", json={"author": ""}).status_code
            == 400
        )
        assert (
            client.post(
                f"/api/runs/{run_id}/annotations", json={"author": "a", "tags": [1]}
            ).status_code
            == 400
        )
        assert client.post("/api/runs/99/annotations", json={"author": "a"}).status_code == 404


class TestAuth:
    def test_token_guards_api(self, tmp_path, clock):
        app = make_app(tmp_path, clock, auth_token="sesame")
        with TestClient(app) as client:
            assert client.get("/api/runs").status_code == 401
            assert (
                client.get("/api/runs", headers={"Authorization": "Bearer wrong"}).status_code
                == 401
            )
            ok = client.get("/api/runs", headers={"Authorization": "Bearer sesame"})
            assert ok.status_code == 200

    def test_no_token_means_open(self, client):
        assert client.get("/api/runs").status_code == 200


class TestRestart:
    def test_acknowledged_writes_survive_reopen(self, tmp_path, clock):
        app = make_app(tmp_path, clock)
        with TestClient(app) as client:
            run_id = create_run(client)
            client.post(
                f"/api/runs/{run_id}/metrics", json=[{"name": "m", "step": 0, "value": 1}]
            )
            client.post(f"/api/runs/{run_id}/finish", json={"event": "complete"})
        app2 = make_app(tmp_path, clock)
        with TestClient(app2) as client:
            doc = client.get(f"/api/runs/{run_id}").json()
            assert doc["status"] == "COMPLETED"
            assert client.get(f"/api/runs/{run_id}/metrics/m").json()["values"] == [1]
            assert create_run(client) == 2


class TestResponseFormat:
    def test_responses_are_canonical_json(self, client):
        create_run(client)
        raw = client.get("/api/runs/1").content
        parsed = json.loads(raw)
        assert raw.decode() == canonical.dumps(parsed)
