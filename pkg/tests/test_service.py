import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from irspot.attack import AttackConfig, run_attack
from irspot.image import decode_png_bytes, encode_png_bytes, quantize_u8
from irspot.oracle import ReferenceEmbeddingOracle, distance
from irspot.service import create_app
from irspot.spots import PerturbationConfig, SpotParams, synthesize

from conftest import synthetic_face

ORACLE = ReferenceEmbeddingOracle()


def b64png(img) -> str:
    return base64.b64encode(encode_png_bytes(img)).decode()


@pytest.fixture
def client():
    app = create_app(oracle=ReferenceEmbeddingOracle())
    return TestClient(app)


@pytest.fixture
def session(client):
    attacker = synthetic_face(0)
    victim = synthetic_face(2)
    resp = client.post("/sessions", json={"attacker_png": b64png(attacker),
                                          "victim_png": b64png(victim)})
    assert resp.status_code == 200, resp.text
    return client, resp.json(), attacker, victim


class TestCreateSession:
    def test_attacker_equals_victim_zero_loss(self, client):
        face = synthetic_face(0)
        png = b64png(face)
        resp = client.post("/sessions", json={"attacker_png": png,
                                              "victim_png": png})
        assert resp.status_code == 200
        body = resp.json()
        assert body["loss"] == 0.0
        assert body["revision"] == 0

    def test_initial_loss_matches_attack_runner(self, session):
        client, body, attacker, victim = session
        # The service computes the amp=0 objective; the attack runner reports
        # the same number as its initial distance.
        quant_a = quantize_u8(attacker) / 255.0
        quant_v = quantize_u8(victim) / 255.0
        result = run_attack(quant_a, quant_v,
                            AttackConfig(max_iters=0, refine_iters=0), ORACLE)
        assert body["loss"] == pytest.approx(result.initial_distance, abs=1e-12)

    def test_missing_victim_is_400(self, client):
        resp = client.post("/sessions", json={"attacker_png": b64png(synthetic_face(0))})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "malformed"

    def test_bad_png_is_400(self, client):
        resp = client.post("/sessions", json={"attacker_png": "AAAA",
                                              "victim_png": "AAAA"})
        assert resp.status_code == 400

    def test_victim_embedding_accepted(self, client):
        emb = ORACLE.embed(synthetic_face(2))
        resp = client.post("/sessions", json={
            "attacker_png": b64png(synthetic_face(0)),
            "victim_embedding": list(emb.values)})
        assert resp.status_code == 200
        assert resp.json()["loss"] > 0


class TestPutConfig:
    def test_amp_zero_returns_initial_loss(self, session):
        client, body, attacker, _ = session
        sid = body["id"]
        config = {"amp": 0.0, "color_ratio": [0.0852, 0.0533, 0.1521],
                  "spots": [{"px": 50.0, "py": 50.0, "sigma": 5.0, "s": 1.0}]}
        resp = client.put(f"/sessions/{sid}/config", json=config)
        assert resp.status_code == 200
        assert resp.json()["loss"] == body["loss"]
        assert resp.json()["revision"] == 1

    def test_resubmission_same_loss_new_revision(self, session):
        client, body, _, _ = session
        sid = body["id"]
        config = {"amp": 0.5, "spots": [{"px": 60.0, "py": 70.0, "sigma": 6.0,
                                         "s": 1.0}]}
        r1 = client.put(f"/sessions/{sid}/config", json=config).json()
        r2 = client.put(f"/sessions/{sid}/config", json=config).json()
        assert r1["loss"] == r2["loss"]
        assert r2["revision"] == r1["revision"] + 1

    def test_replayed_attack_config_reproduces_best_distance(self, session):
        client, body, attacker, victim = session
        sid = body["id"]
        quant_a = quantize_u8(attacker) / 255.0
        quant_v = quantize_u8(victim) / 255.0
        result = run_attack(quant_a, quant_v,
                            AttackConfig(n_spots=2, max_iters=6, refine_iters=0,
                                         seed=1), ORACLE)
        resp = client.put(f"/sessions/{sid}/config",
                          json=result.best_config.to_dict())
        assert resp.status_code == 200
        assert resp.json()["loss"] == pytest.approx(result.best_distance, abs=1e-9)

    def test_invariant_violation_is_422_with_field(self, session):
        client, body, _, _ = session
        sid = body["id"]
        config = {"amp": 0.5, "spots": [{"px": 60.0, "py": 70.0, "sigma": -1.0,
                                         "s": 1.0}]}
        resp = client.put(f"/sessions/{sid}/config", json=config)
        assert resp.status_code == 422
        err = resp.json()["error"]
        assert err["code"] == "invalid_config"
        assert "sigma" in err["field"]

    def test_unknown_session_404(self, client):
        resp = client.put("/sessions/nope/config",
                          json={"amp": 0, "spots": [{"px": 0, "py": 0, "sigma": 1,
                                                     "s": 0}]})
        assert resp.status_code == 404

    def test_preview_decodes_to_synthesis(self, session):
        client, body, attacker, _ = session
        sid = body["id"]
        config = PerturbationConfig(amp=0.8, spots=(SpotParams(60, 50, 6, 1.2),))
        resp = client.put(f"/sessions/{sid}/config", json=config.to_dict())
        preview = decode_png_bytes(base64.b64decode(resp.json()["preview_png"]))
        expected = quantize_u8(synthesize(quantize_u8(attacker) / 255.0, config)) / 255.0
        assert np.max(np.abs(preview - expected)) < 1e-12


class TestStep:
    def test_zero_steps_is_422(self, session):
        client, body, _, _ = session
        resp = client.post(f"/sessions/{body['id']}/step", json={"n": 0})
        assert resp.status_code == 422

    def test_two_fives_equal_one_ten(self, client):
        attacker = synthetic_face(0)
        victim = synthetic_face(2)
        ids = []
        for _ in range(2):
            resp = client.post("/sessions", json={"attacker_png": b64png(attacker),
                                                  "victim_png": b64png(victim)})
            ids.append(resp.json()["id"])
        start = {"amp": 0.3, "spots": [{"px": 70.0, "py": 60.0, "sigma": 7.0,
                                        "s": 1.0}]}
        for sid in ids:
            client.put(f"/sessions/{sid}/config", json=start)
        t5a = client.post(f"/sessions/{ids[0]}/step", json={"n": 5}).json()
        t5b = client.post(f"/sessions/{ids[0]}/step", json={"n": 5}).json()
        t10 = client.post(f"/sessions/{ids[1]}/step", json={"n": 10}).json()
        assert t5a["trajectory"] + t5b["trajectory"] == t10["trajectory"]
        assert t5b["loss"] == t10["loss"]
        assert t5b["config"] == t10["config"]

    def test_manual_edit_resets_optimizer_state(self, client):
        attacker = synthetic_face(0)
        victim = synthetic_face(2)
        ids = []
        for _ in range(2):
            resp = client.post("/sessions", json={"attacker_png": b64png(attacker),
                                                  "victim_png": b64png(victim)})
            ids.append(resp.json()["id"])
        start = {"amp": 0.3, "spots": [{"px": 70.0, "py": 60.0, "sigma": 7.0,
                                        "s": 1.0}]}
        # Session A: step, then re-submit the SAME config (resets Adam), step.
        client.put(f"/sessions/{ids[0]}/config", json=start)
        client.post(f"/sessions/{ids[0]}/step", json={"n": 5})
        mid = client.get(f"/sessions/{ids[0]}").json()["config"]
        client.put(f"/sessions/{ids[0]}/config", json=mid)
        after_reset = client.post(f"/sessions/{ids[0]}/step", json={"n": 3}).json()
        # Session B: fresh session set directly to the mid config, then step.
        client.put(f"/sessions/{ids[1]}/config", json=mid)
        fresh = client.post(f"/sessions/{ids[1]}/step", json={"n": 3}).json()
        assert after_reset["trajectory"] == fresh["trajectory"]
        assert after_reset["config"] == fresh["config"]


class TestCalibrateEndpoint:
    def test_no_target_is_409(self, session):
        client, body, attacker, _ = session
        resp = client.post(f"/sessions/{body['id']}/calibrate",
                           json={"on_png": b64png(attacker),
                                 "off_png": b64png(attacker)})
        assert resp.status_code == 409

    def test_perfect_case_all_ok(self, client):
        attacker = synthetic_face(0)
        victim = synthetic_face(2)
        target = PerturbationConfig(
            amp=0.6, spots=(SpotParams(60, 50, 6, 1.0), SpotParams(100, 80, 8, 1.2)))
        resp = client.post("/sessions", json={"attacker_png": b64png(attacker),
                                              "victim_png": b64png(victim),
                                              "target": target.to_dict()})
        sid = resp.json()["id"]
        off = quantize_u8(attacker) / 255.0
        on = synthesize(off, target)
        resp = client.post(f"/sessions/{sid}/calibrate",
                           json={"on_png": b64png(on), "off_png": b64png(off)})
        assert resp.status_code == 200
        report = resp.json()
        assert all(s["found"] for s in report["spots"])
        assert all(s["brightness_verdict"] == "ok" for s in report["spots"])
        assert all(s["size_verdict"] == "ok" for s in report["spots"])
        assert report["current_loss"] is not None

    def test_size_mismatch_is_422(self, client):
        attacker = synthetic_face(0)
        target = PerturbationConfig(amp=0.5, spots=(SpotParams(60, 50, 6, 1.0),))
        resp = client.post("/sessions", json={"attacker_png": b64png(attacker),
                                              "victim_png": b64png(synthetic_face(2)),
                                              "target": target.to_dict()})
        sid = resp.json()["id"]
        small = synthetic_face(1, size=80)
        resp = client.post(f"/sessions/{sid}/calibrate",
                           json={"on_png": b64png(small), "off_png": b64png(small)})
        assert resp.status_code == 422

    def test_target_settable_after_creation(self, session):
        client, body, attacker, _ = session
        sid = body["id"]
        target = PerturbationConfig(amp=0.5, spots=(SpotParams(60, 50, 6, 1.0),))
        resp = client.put(f"/sessions/{sid}/target", json=target.to_dict())
        assert resp.status_code == 200
        off = quantize_u8(attacker) / 255.0
        on = synthesize(off, target)
        resp = client.post(f"/sessions/{sid}/calibrate",
                           json={"on_png": b64png(on), "off_png": b64png(off)})
        assert resp.status_code == 200


class TestSessionSemantics:
    def test_get_does_not_mutate(self, session):
        client, body, _, _ = session
        sid = body["id"]
        before = client.get(f"/sessions/{sid}").json()
        again = client.get(f"/sessions/{sid}").json()
        assert before == again
        assert before["revision"] == 0

    def test_revision_never_skips(self, session):
        client, body, _, _ = session
        sid = body["id"]
        config = {"amp": 0.1, "spots": [{"px": 50.0, "py": 50.0, "sigma": 5.0,
                                         "s": 1.0}]}
        revs = [body["revision"]]
        for _ in range(3):
            revs.append(client.put(f"/sessions/{sid}/config", json=config)
                        .json()["revision"])
        revs.append(client.post(f"/sessions/{sid}/step", json={"n": 1})
                    .json()["revision"])
        assert revs == [0, 1, 2, 3, 4]

    def test_history_append_only(self, session):
        client, body, _, _ = session
        sid = body["id"]
        config = {"amp": 0.2, "spots": [{"px": 50.0, "py": 50.0, "sigma": 5.0,
                                         "s": 1.0}]}
        client.put(f"/sessions/{sid}/config", json=config)
        history = client.get(f"/sessions/{sid}").json()["history"]
        assert history[0][0] == 0
        assert [h[0] for h in history] == sorted(h[0] for h in history)

    def test_concurrent_mutations_serialize(self, session):
        from concurrent.futures import ThreadPoolExecutor

        client, body, _, _ = session
        sid = body["id"]

        def mutate(k):
            config = {"amp": 0.01 * k,
                      "spots": [{"px": 50.0, "py": 50.0, "sigma": 5.0, "s": 1.0}]}
            return client.put(f"/sessions/{sid}/config", json=config).json()["revision"]

        with ThreadPoolExecutor(max_workers=4) as pool:
            revisions = sorted(pool.map(mutate, range(8)))
        # Revisions never skip or repeat under concurrent mutation.
        assert revisions == list(range(1, 9))
        assert client.get(f"/sessions/{sid}").json()["revision"] == 8


class TestExpiry:
    def test_idle_sessions_are_purged(self):
        import time

        app = create_app(oracle=ReferenceEmbeddingOracle(), idle_ttl=0.05)
        client = TestClient(app)
        resp = client.post("/sessions", json={
            "attacker_png": b64png(synthetic_face(0)),
            "victim_png": b64png(synthetic_face(2))})
        sid = resp.json()["id"]
        assert client.get(f"/sessions/{sid}").status_code == 200
        time.sleep(0.15)
        assert client.get(f"/sessions/{sid}").status_code == 404


class TestPersistence:
    def test_snapshot_roundtrip(self, tmp_path):
        state = tmp_path / "state"
        app = create_app(oracle=ReferenceEmbeddingOracle(), state_dir=str(state))
        client = TestClient(app)
        resp = client.post("/sessions", json={
            "attacker_png": b64png(synthetic_face(0)),
            "victim_png": b64png(synthetic_face(2))})
        sid = resp.json()["id"]
        config = {"amp": 0.4, "spots": [{"px": 55.0, "py": 45.0, "sigma": 6.0,
                                         "s": 1.1}]}
        put = client.put(f"/sessions/{sid}/config", json=config).json()

        app2 = create_app(oracle=ReferenceEmbeddingOracle(), state_dir=str(state))
        client2 = TestClient(app2)
        got = client2.get(f"/sessions/{sid}")
        assert got.status_code == 200
        body = got.json()
        assert body["revision"] == 1
        assert body["loss"] == put["loss"]
        assert body["config"]["amp"] == 0.4
