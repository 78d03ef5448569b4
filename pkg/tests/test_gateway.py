"""Event log durability, replay, and the HTTP endpoint contracts."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from codesign.errors import CorruptLog
from codesign.gateway.events import Event, EventLog, log_hash, read_log
from codesign.gateway.service import StateMachine, fold_events, state_hash

from conftest import make_client


class TestEventLog:
    def test_seq_counts_appends(self, tmp_path):
        log = EventLog(tmp_path / "e.jsonl")
        for i in range(5):
            e = log.append("Curated", {"op": "remove", "item_id": f"i{i}"})
            assert e.seq == i + 1
        assert len(log) == 5

    def test_dedup_returns_prior_seq(self, tmp_path):
        log = EventLog(tmp_path / "e.jsonl")
        a = log.append("Curated", {"op": "remove", "item_id": "x"}, dedup_key="k1")
        b = log.append("Curated", {"op": "remove", "item_id": "x"}, dedup_key="k1")
        assert a.seq == b.seq
        assert len(log) == 1

    def test_reload_preserves_events_and_dedup(self, tmp_path):
        path = tmp_path / "e.jsonl"
        log = EventLog(path)
        log.append("Curated", {"op": "remove", "item_id": "x"}, dedup_key="k1")
        log.close()
        again = EventLog(path)
        assert len(again) == 1
        assert again.seen_dedup("k1") == 1

    def test_torn_trailing_write_recovers_to_k_events(self, tmp_path):
        path = tmp_path / "e.jsonl"
        log = EventLog(path)
        for i in range(3):
            log.append("Curated", {"op": "remove", "item_id": f"i{i}"})
        log.close()
        with open(path, "ab") as fh:
            fh.write(b'{"seq": 4, "ts": 1.0, "kind": "Cur')  # crash mid-write
        recovered = EventLog(path)
        assert len(recovered) == 3
        # The torn bytes are gone; appending works cleanly afterwards.
        recovered.append("Curated", {"op": "remove", "item_id": "i3"})
        recovered.close()
        assert len(read_log(path)) == 4

    def test_completed_write_without_ack_recovers_to_k_plus_1(self, tmp_path):
        path = tmp_path / "e.jsonl"
        log = EventLog(path)
        log.append("Curated", {"op": "remove", "item_id": "i0"})
        log.close()
        line = json.dumps(
            {"seq": 2, "ts": 0.0, "kind": "Curated",
             "payload": {"op": "remove", "item_id": "i1"}, "dedup_key": None}
        )
        with open(path, "ab") as fh:
            fh.write(line.encode() + b"\n")
        assert len(read_log(path)) == 2

    def test_interior_corruption_raises_with_seq(self, tmp_path):
        path = tmp_path / "e.jsonl"
        log = EventLog(path)
        log.append("Curated", {"op": "remove", "item_id": "i0"})
        log.append("Curated", {"op": "remove", "item_id": "i1"})
        log.close()
        lines = path.read_bytes().split(b"\n")
        lines[0] = b'{"broken'
        path.write_bytes(b"\n".join(lines))
        with pytest.raises(CorruptLog) as exc:
            read_log(path)
        assert exc.value.seq == 1

    def test_sequence_gap_raises(self, tmp_path):
        path = tmp_path / "e.jsonl"
        e = {"seq": 5, "ts": 0.0, "kind": "Curated", "payload": {}, "dedup_key": None}
        path.write_text(json.dumps(e) + "\n")
        with pytest.raises(CorruptLog) as exc:
            read_log(path)
        assert exc.value.seq == 5

    def test_log_hash_ignores_timestamps(self, tmp_path):
        a = Event(seq=1, ts=1.0, kind="Curated", payload={"op": "remove"}, dedup_key=None)
        b = Event(seq=1, ts=99.0, kind="Curated", payload={"op": "remove"}, dedup_key=None)
        assert log_hash([a]) == log_hash([b])


def scripted_run(data_dir: Path, seed: int = 77, vote_passes: int = 3):
    """A short deterministic workflow touching most endpoints."""
    client, gateway = make_client(data_dir, base_seed=seed, max_rounds=3)
    pid = client.post("/projects", json={}).json()["project_id"]
    client.post(
        f"/projects/{pid}/framing",
        json={"garment_type": "Shirt", "scene": "quiet gallery opening",
              "principle": "minimalist", "strictness": 0.6},
    )
    client.post(f"/projects/{pid}/library/generate", json={"n": 16})
    view = client.post(
        f"/projects/{pid}/sessions",
        json={"user_id": "alice", "gender": "F", "height_cm": 165, "weight_kg": 58},
    ).json()
    sid = view["session_id"]
    first = view["items"][0]["item_id"]
    client.post(
        f"/sessions/{sid}/interactions",
        json={"item_id": first, "polarity": "Like",
              "region": {"x_min": 100, "y_min": 0, "x_max": 170, "y_max": 50,
                         "image_w": 256, "image_h": 256},
              "confirmed_dimensions": [2], "comment": "good collar"},
    )
    for round_pass in range(vote_passes):
        view = client.get(f"/sessions/{sid}/round").json()
        if view["closed"]:
            break
        for i, entry in enumerate(view["items"]):
            if not entry["voted"]:
                client.post(
                    f"/sessions/{sid}/votes",
                    json={"item_id": entry["item_id"],
                          "polarity": "Like" if i % 2 == 0 else "Dislike"},
                )
    client.patch(f"/projects/{pid}/library", json={"ops": [
        {"op": "reorder", "item_id": "i0003", "new_rank": 0}]})
    client.get(f"/projects/{pid}/consensus")
    return client, gateway, pid, sid


class TestApi:
    def test_happy_path_all_2xx(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        tree = client.get(f"/projects/{pid}/tree/2.2")
        assert tree.status_code == 200
        man = client.post(f"/projects/{pid}/manifest/2.2")
        assert man.status_code == 200
        informed = client.post(
            f"/projects/{pid}/informed",
            json={"selection": [[d, 0] for d in range(9)], "n": 2,
                  "manifest_attributes": [[2, 2]]},
        )
        assert informed.status_code == 200
        body = informed.json()
        assert len(body["items"]) == 2
        prompt = body["items"][0]["prompt"]
        assert "For Collar Shape part, with detailed descriptions of V." in prompt
        item_id = body["items"][0]["item_id"]
        saved = client.post(f"/projects/{pid}/items/{item_id}/save")
        assert saved.status_code == 200
        assert item_id in {i["item_id"] for i in saved.json()["items"]}

    def test_get_endpoints_are_side_effect_free(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        svc = gateway.project(pid)
        before = state_hash(svc.state)
        offset_before = svc.offset
        client.get(f"/projects/{pid}/framing")
        client.get(f"/projects/{pid}/library")
        client.get(f"/sessions/{sid}/round")
        client.get(f"/projects/{pid}/consensus")
        client.get(f"/projects/{pid}/palette")
        client.get(f"/projects/{pid}/tree/2.2")
        assert state_hash(svc.state) == before
        assert svc.offset == offset_before

    def test_unknown_project_404_with_code(self, tmp_path):
        client, _ = make_client(tmp_path / "d")
        r = client.get("/projects/nope/consensus")
        assert r.status_code == 404
        assert r.json()["code"] == "UNKNOWN_PROJECT"

    def test_unknown_session_404(self, tmp_path):
        client, _ = make_client(tmp_path / "d")
        assert client.get("/sessions/ghost/round").status_code == 404

    def test_structured_error_body(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        r = client.post(f"/projects/{pid}/informed",
                        json={"selection": [[0, 0]], "n": 1})
        assert r.status_code == 422
        body = r.json()
        assert body["code"] == "INCOMPLETE_SELECTION"
        assert "message" in body and "details" in body

    def test_stale_snapshot_409(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        r = client.patch(
            f"/projects/{pid}/library",
            json={"ops": [{"op": "reorder", "item_id": "i0001", "new_rank": 1}],
                  "expected_offset": 1},
        )
        assert r.status_code == 409
        assert r.json()["code"] == "STALE_SNAPSHOT"

    def test_vote_dedup_key_is_idempotent(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d2", vote_passes=1)
        view = client.get(f"/sessions/{sid}/round").json()
        target = next(e for e in view["items"] if not e["voted"])
        body = {"item_id": target["item_id"], "polarity": "Like", "dedup_key": "once"}
        a = client.post(f"/sessions/{sid}/votes", json=body).json()
        offset_after = gateway.project(pid).offset
        b = client.post(f"/sessions/{sid}/votes", json=body).json()
        assert a["record_id"] == b["record_id"]
        assert gateway.project(pid).offset == offset_after

    def test_attribute_addressing_by_name(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        by_name = client.get(f"/projects/{pid}/tree/Collar Shape:V")
        by_index = client.get(f"/projects/{pid}/tree/2.2")
        assert by_name.status_code == 200
        assert by_name.json()["root"] == by_index.json()["root"]
        assert client.get(f"/projects/{pid}/tree/banana").status_code == 404

    def test_brush_on_unshown_item_404(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d", vote_passes=1)
        r = client.post(
            f"/sessions/{sid}/interactions",
            json={"item_id": "i9999", "polarity": "Like",
                  "region": {"x_min": 0, "y_min": 0, "x_max": 5, "y_max": 5,
                             "image_w": 256, "image_h": 256}},
        )
        assert r.status_code == 404

    def test_invalid_region_rejected(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d", vote_passes=1)
        view = client.get(f"/sessions/{sid}/round").json()
        item = view["items"][0]["item_id"]
        r = client.post(
            f"/sessions/{sid}/interactions",
            json={"item_id": item, "polarity": "Like",
                  "region": {"x_min": 10, "y_min": 0, "x_max": 5, "y_max": 5,
                             "image_w": 256, "image_h": 256}},
        )
        assert r.status_code == 422
        assert r.json()["code"] == "INVALID_REGION"


class TestReplay:
    def test_replay_matches_live_state(self, tmp_path):
        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        svc = gateway.project(pid)
        live = state_hash(svc.state)
        events = read_log(tmp_path / "d" / "projects" / pid / "events.jsonl")
        assert state_hash(fold_events(events)) == live

    def test_replayed_model_weights_match_live(self, tmp_path):
        import numpy as np

        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        svc = gateway.project(pid)
        events = read_log(tmp_path / "d" / "projects" / pid / "events.jsonl")
        replayed = fold_events(events)
        for uid, live_model in svc.state.models.items():
            rep = replayed.models[uid].materialized()
            liv = live_model.materialized()
            for a, b in zip(rep.weights, liv.weights):
                assert np.array_equal(a, b)

    def test_empty_log_is_empty_state(self):
        assert fold_events([]) is None

    def test_prefix_plus_suffix_equals_full(self, tmp_path):
        import numpy as np

        client, gateway, pid, sid = scripted_run(tmp_path / "d")
        events = read_log(tmp_path / "d" / "projects" / pid / "events.jsonl")
        full = state_hash(fold_events(events))
        rng = np.random.default_rng(5)
        cuts = sorted(set(int(c) for c in rng.integers(0, len(events) + 1, size=25)))
        for cut in cuts:
            machine = StateMachine()
            for e in events[:cut]:
                machine.apply(e)
            for e in events[cut:]:
                machine.apply(e)
            assert state_hash(machine.state) == full, f"cut at {cut} diverged"

    def test_mock_mode_is_deterministic_across_runs(self, tmp_path):
        _, _, pid_a, _ = scripted_run(tmp_path / "a", seed=9)
        _, _, pid_b, _ = scripted_run(tmp_path / "b", seed=9)
        ev_a = read_log(tmp_path / "a" / "projects" / pid_a / "events.jsonl")
        ev_b = read_log(tmp_path / "b" / "projects" / pid_b / "events.jsonl")
        assert log_hash(ev_a) == log_hash(ev_b)  # timestamps excluded
        assert state_hash(fold_events(ev_a)) == state_hash(fold_events(ev_b))

    def test_restart_from_disk_resumes(self, tmp_path):
        data_dir = tmp_path / "d"
        client, gateway, pid, sid = scripted_run(data_dir)
        before = state_hash(gateway.project(pid).state)
        client2, gateway2 = make_client(data_dir, base_seed=77, max_rounds=3)
        svc2 = gateway2.project(pid)
        assert state_hash(svc2.state) == before
        # The reopened gateway accepts further commands.
        r = client2.get(f"/projects/{pid}/library")
        assert r.status_code == 200

    def test_derived_files_reconstructible_from_log(self, tmp_path):
        """Blobs can be deleted; replay rebuilds state and mocks regenerate."""
        data_dir = tmp_path / "d"
        client, gateway, pid, sid = scripted_run(data_dir)
        svc = gateway.project(pid)
        before = state_hash(svc.state)
        blob_dir = data_dir / "projects" / pid / "blobs"
        for p in blob_dir.iterdir():
            p.unlink()
        client2, gateway2 = make_client(data_dir, base_seed=77, max_rounds=3)
        assert state_hash(gateway2.project(pid).state) == before
