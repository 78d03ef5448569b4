"""The scripted three-user session used for replay pinning.

Every step is deterministic under mock backends, so the resulting event log
(timestamps aside) and the state hash are frozen constants. The committed
copy lives at tests/data/golden_log.jsonl.
"""

from __future__ import annotations

from pathlib import Path

GOLDEN_SEED = 20250810
GOLDEN_MAX_ROUNDS = 3
GOLDEN_CATALOG = 24

# Frozen outputs of run_golden_script. Regenerate (two runs must agree)
# only on a deliberate event-format change.
GOLDEN_STATE_HASH = "fa09b790f37bef1b30ca7291466ac71d35035f0a0d951a64f2e465c05166cb29"
GOLDEN_LOG_HASH = "6b9b2300de009649cb6294e68f464a8276ce3ee04237ce2fbcd053f8b7bb8b8c"
GOLDEN_EVENT_COUNT = 124

GOLDEN_LOG_PATH = Path(__file__).parent / "data" / "golden_log.jsonl"


def run_golden_script(data_dir: Path):
    """Drive the full workflow: returns (gateway, project_id, log_path)."""
    from conftest import make_client

    client, gateway = make_client(
        data_dir, base_seed=GOLDEN_SEED, max_rounds=GOLDEN_MAX_ROUNDS
    )
    pid = client.post("/projects", json={}).json()["project_id"]
    client.post(
        f"/projects/{pid}/framing",
        json={"garment_type": "Sweater", "scene": "frozen winter cabin",
              "principle": "warm and minimalist", "strictness": 0.7},
    ).raise_for_status()
    client.post(f"/projects/{pid}/library/generate",
                json={"n": GOLDEN_CATALOG}).raise_for_status()
    # Designer curation: one removal, one reorder.
    client.patch(f"/projects/{pid}/library", json={"ops": [
        {"op": "remove", "item_id": "i0005"},
        {"op": "reorder", "item_id": "i0007", "new_rank": 0},
    ]}).raise_for_status()

    profiles = [
        {"user_id": "ana", "gender": "F", "height_cm": 164.0, "weight_kg": 57.0},
        {"user_id": "bo", "gender": "M", "height_cm": 181.0, "weight_kg": 82.0},
        {"user_id": "criss", "gender": "Unspecified"},
    ]
    collar_dim = 2
    for u_index, profile in enumerate(profiles):
        view = client.post(f"/projects/{pid}/sessions", json=profile).json()
        sid = view["session_id"]
        while not view["closed"]:
            items = [e["item_id"] for e in view["items"] if not e["voted"]]
            for j, item_id in enumerate(items):
                num = int(item_id[1:])
                like = (num + u_index + j) % 3 != 0
                if j % 2 == 0:
                    client.post(
                        f"/sessions/{sid}/interactions",
                        json={
                            "item_id": item_id,
                            "polarity": "Like" if like else "Dislike",
                            "region": {"x_min": 90, "y_min": 0, "x_max": 170,
                                       "y_max": 52, "image_w": 256, "image_h": 256},
                            "confirmed_dimensions": [collar_dim],
                            "comment": f"collar note {num}" if j == 0 else None,
                        },
                    ).raise_for_status()
                view = client.post(
                    f"/sessions/{sid}/votes",
                    json={"item_id": item_id,
                          "polarity": "Like" if like else "Dislike",
                          "comment": "keeper" if like and j == 0 else None},
                ).json()

    # Designer analysis: prune a leaf and a garment on the busiest collar.
    svc = gateway.project(pid)
    tree = client.get(f"/projects/{pid}/tree/2.3").json()  # Round collar
    garments = tree["garments"]
    if garments:
        with_votes = [g for g in garments if g["likes"] + g["dislikes"] > 0]
        if with_votes:
            target = with_votes[0]
            vote_leaves = [l for l in target["leaves"] if l["kind"] == "OverallVote"]
            if vote_leaves:
                client.post(
                    f"/projects/{pid}/tree/2.3/prune",
                    json={"node_type": "leaf", "node_id": vote_leaves[0]["record_id"]},
                ).raise_for_status()
        if len(garments) > 1:
            client.post(
                f"/projects/{pid}/tree/2.3/prune",
                json={"node_type": "garment", "node_id": garments[-1]["item_id"]},
            ).raise_for_status()
    client.post(f"/projects/{pid}/manifest/2.3").raise_for_status()

    informed = client.post(
        f"/projects/{pid}/informed",
        json={"selection": [[d, 1] for d in range(9)], "n": 2,
              "manifest_attributes": [[2, 3]]},
    ).json()
    client.post(
        f"/projects/{pid}/items/{informed['items'][0]['item_id']}/save"
    ).raise_for_status()
    log_path = Path(data_dir) / "projects" / pid / "events.jsonl"
    return gateway, pid, log_path
