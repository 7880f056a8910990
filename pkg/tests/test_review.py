
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from novelcap.dataset import CaptionOrigin, CaptionRecord
from novelcap.pipeline import train_baseline, usable_synthetic, warmup_with_synth
from novelcap.review import (apply_verdicts, create_app, effective_statuses,
                             load_verdict_log)
from novelcap.synth import SyntheticPairRecord, Verdict, write_manifest

from test_pipeline import fully_paired_captions, lexicon


def make_records(tmp_path, n=5):
    records = []
    for i in range(n):
        image_path = tmp_path / f"synth_{i}.png"
        target_path = tmp_path / f"target_{i}.png"
        source_path = tmp_path / f"source_{i}.png"
        for path, color in ((image_path, (20 * i, 0, 0)), (target_path, (0, 20 * i, 0)),
                            (source_path, (0, 0, 20 * i))):
            Image.new("RGB", (8, 8), color).save(path, format="PNG")
        image_id = 9000 + i
        records.append(SyntheticPairRecord(
            synth_id=f"{i:016x}",
            image_id=image_id,
            image_path=str(image_path),
            caption=CaptionRecord(image_id, image_id,
                                  tuple("a zebra in a field".split()),
                                  CaptionOrigin.SYNTHETIC),
            source_caption_id=1,
            target_image_id=i,
            target_image_path=str(target_path),
            novel_class_name="zebra",
            candidate_class_name="cow",
            replacements=({"novel_image_id": 100 + i, "novel_instance_id": 1,
                           "novel_image_path": str(source_path),
                           "novel_box": [0, 0, 4, 4],
                           "cand_instance_id": 2, "cand_box": [0, 0, 4, 4]},),
        ))
    return records


@pytest.fixture()
def service(tmp_path):
    records = make_records(tmp_path)
    manifest = tmp_path / "manifest.jsonl"
    write_manifest(records, manifest)
    verdict_log = tmp_path / "verdicts.jsonl"
    app = create_app(manifest, verdict_log)
    return TestClient(app), records, manifest, verdict_log


def test_empty_manifest_gives_empty_page(tmp_path):
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("")
    client = TestClient(create_app(manifest, tmp_path / "v.jsonl"))
    body = client.get("/api/pairs").json()
    assert body["records"] == []
    assert body["next_cursor"] is None


def test_pagination_cursor(service):
    client, records, *_ = service
    body = client.get("/api/pairs", params={"limit": 2}).json()
    assert len(body["records"]) == 2
    assert body["next_cursor"] == body["records"][-1]["synth_id"]
    rest = client.get("/api/pairs",
                      params={"limit": 10, "cursor": body["next_cursor"]}).json()
    assert len(rest["records"]) == 3
    assert rest["next_cursor"] is None
    all_ids = [r["synth_id"] for r in body["records"] + rest["records"]]
    assert all_ids == sorted(r.synth_id for r in records)


def test_status_filter_tracks_verdicts(service):
    client, records, *_ = service
    for rec in records[:2]:
        resp = client.post(f"/api/pairs/{rec.synth_id}/verdict",
                           json={"decision": "accepted", "reviewer": "amy"})
        assert resp.status_code == 204
    accepted = client.get("/api/pairs", params={"status": "accepted"}).json()
    assert {r["synth_id"] for r in accepted["records"]} == {
        records[0].synth_id, records[1].synth_id}
    pending = client.get("/api/pairs", params={"status": "pending"}).json()
    assert len(pending["records"]) == 3
    assert accepted["counts"] == {"pending": 3, "accepted": 2, "rejected": 0}


def test_unknown_synth_id_404(service):
    client, *_ = service
    resp = client.post("/api/pairs/ffffffffffffffff/verdict",
                       json={"decision": "accepted", "reviewer": "amy"})
    assert resp.status_code == 404


def test_bad_params_400(service):
    client, *_ = service
    assert client.get("/api/pairs", params={"limit": 0}).status_code == 400
    assert client.get("/api/pairs", params={"status": "bogus"}).status_code == 400
    assert client.get("/api/pairs", params={"limit": "abc"}).status_code == 400
    resp = client.post("/api/pairs/0000000000000000/verdict",
                       json={"decision": "maybe"})
    assert resp.status_code == 400


def test_undo_via_pending_reset(service):
    """Accept then reset: the record returns to pending, history retained."""
    client, records, _, verdict_log = service
    sid = records[1].synth_id
    client.post(f"/api/pairs/{sid}/verdict", json={"decision": "accepted"})
    client.post(f"/api/pairs/{sid}/verdict", json={"decision": "pending"})
    entries = load_verdict_log(verdict_log)
    assert [e.decision.value for e in entries] == ["accepted", "pending"]
    assert effective_statuses(entries)[sid] is Verdict.PENDING
    pending = client.get("/api/pairs", params={"status": "pending"}).json()
    assert sid in {r["synth_id"] for r in pending["records"]}


def test_accept_then_reject_latest_wins(service):
    client, records, _, verdict_log = service
    sid = records[0].synth_id
    client.post(f"/api/pairs/{sid}/verdict", json={"decision": "accepted"})
    client.post(f"/api/pairs/{sid}/verdict", json={"decision": "rejected"})
    entries = load_verdict_log(verdict_log)
    assert len(entries) == 2
    assert effective_statuses(entries)[sid] is Verdict.REJECTED
    rejected = client.get("/api/pairs", params={"status": "rejected"}).json()
    assert [r["synth_id"] for r in rejected["records"]] == [sid]


def test_verdict_log_replay_oracle(service):
    import random
    client, records, _, verdict_log = service
    rng = random.Random(13)
    expected = {}
    for _ in range(100):
        rec = rng.choice(records)
        decision = rng.choice(["accepted", "rejected"])
        client.post(f"/api/pairs/{rec.synth_id}/verdict",
                    json={"decision": decision, "reviewer": "bot"})
        expected[rec.synth_id] = decision
    statuses = effective_statuses(load_verdict_log(verdict_log))
    assert {sid: v.value for sid, v in statuses.items()} == expected


def test_image_endpoints(service):
    client, records, *_ = service
    sid = records[0].synth_id
    resp = client.get(f"/api/images/{sid}")
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    assert "immutable" in resp.headers["cache-control"]
    assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get(f"/api/images/{sid}", params={"variant": "target"}).status_code == 200
    assert client.get(f"/api/images/{sid}",
                      params={"variant": "source", "index": 0}).status_code == 200
    assert client.get(f"/api/images/{sid}", params={"variant": "bogus"}).status_code == 400
    assert client.get("/api/images/ffffffffffffffff").status_code == 404

    head = client.head(f"/api/images/{sid}")
    assert head.status_code == 200
    assert head.content == b""


def test_missing_image_file_404_with_json_body(service, tmp_path):
    client, records, *_ = service
    import os
    os.unlink(records[2].image_path)
    resp = client.get(f"/api/images/{records[2].synth_id}")
    assert resp.status_code == 404
    assert "error" in resp.json()


def test_rejection_shrinks_warmup_corpus(service):
    """Rejecting exactly one record removes exactly its caption from warm-up."""
    client, records, manifest, verdict_log = service
    from novelcap.synth import read_manifest

    fully = fully_paired_captions()
    before = apply_verdicts(read_manifest(manifest), verdict_log)
    ck = train_baseline(fully, lexicon=lexicon())
    warm_before = warmup_with_synth(ck, before, fully, lexicon=lexicon())

    victim = records[3]
    client.post(f"/api/pairs/{victim.synth_id}/verdict",
                json={"decision": "rejected", "reviewer": "amy"})

    after = apply_verdicts(read_manifest(manifest), verdict_log)
    warm_after = warmup_with_synth(ck, after, fully, lexicon=lexicon())
    assert warm_after.corpus_size == warm_before.corpus_size - 1
    surviving = {r.synth_id for r in usable_synthetic(after)}
    assert surviving == {r.synth_id for r in records} - {victim.synth_id}
