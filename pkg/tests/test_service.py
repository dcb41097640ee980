import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from coughscreen.audio import encode_wav
from coughscreen.classifiers import (
    SvmPipeline,
    TransferPipeline,
    build_detector,
    _image_batch,
)
from coughscreen.config import ServiceConfig
from coughscreen.corpus import SynthSpec, synth_clip, synth_corpus
from coughscreen.engine import (
    CML_MC_FILE,
    DETECTOR_FILE,
    DTL_BC_FILE,
    DTL_MC_FILE,
    Engine,
    RecordStore,
)
from coughscreen.neuralnet import TrainConfig, save_network, train
from coughscreen.service import create_app
from coughscreen.svm import save_svm

BINARY_MAP = {"covid19": "covid", "pertussis": "not_covid",
              "bronchitis": "not_covid", "normal": "not_covid"}


@pytest.fixture(scope="session")
def micro_models(tmp_path_factory):
    """Small but functional model set for exercising the service plumbing."""
    root = tmp_path_factory.mktemp("micro_models")
    detect_corpus = synth_corpus(
        SynthSpec(classes=("cough", "not_cough"), per_class=24, seed=31), root / "detect"
    )
    diag_corpus = synth_corpus(
        SynthSpec(classes=("covid19", "pertussis", "bronchitis", "normal"), per_class=10, seed=32),
        root / "diag",
    )
    cache: dict = {}
    images, labels = _image_batch(detect_corpus.samples, ("cough", "not_cough"), cache)
    detector = build_detector(seed=1)
    train(detector, (images, labels),
          TrainConfig(learning_rate=3e-4, batch_size=16, epochs=6, seed=1, dtype="float32"))

    models_dir = root / "models"
    models_dir.mkdir()
    save_network(detector, models_dir / DETECTOR_FILE)

    mc = TransferPipeline(detector, n_classes=4, epochs=4, batch_size=8,
                          learning_rate=1e-4, image_cache=cache, dtype="float32")
    mc.fit(diag_corpus.samples, seed=2)
    save_network(mc.net, models_dir / DTL_MC_FILE)

    bc = TransferPipeline(detector, n_classes=2, epochs=4, batch_size=8,
                          learning_rate=1e-4, image_cache=cache,
                          label_map=BINARY_MAP, dtype="float32")
    bc.fit(diag_corpus.samples, seed=3)
    save_network(bc.net, models_dir / DTL_BC_FILE)

    svm = SvmPipeline()
    svm.fit(diag_corpus.samples, seed=4)
    save_svm(svm.model, models_dir / CML_MC_FILE)
    return {"models_dir": models_dir, "detect_corpus": detect_corpus, "diag_corpus": diag_corpus}


@pytest.fixture()
def engine(micro_models, tmp_path):
    return Engine.load(micro_models["models_dir"], tmp_path / "records.jsonl")


@pytest.fixture()
def client(engine):
    return TestClient(create_app(engine))


def find_clip(engine, label, want_cough: bool, tries=8):
    """A clip the loaded detector routes the desired way."""
    from coughscreen.mediator import AppResult

    for seed in range(tries):
        blob = encode_wav(synth_clip(label, np.random.default_rng([7001, seed])))
        response = engine.screen_clip(blob, persist=False)
        is_cough = response.result is not AppResult.NOT_A_COUGH
        if is_cough == want_cough:
            return blob
    pytest.skip(f"micro detector never routed {label} as cough={want_cough}")


class TestScreen:
    def test_cough_clip_returns_verdict_and_record(self, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        resp = client.post("/v1/screen", content=blob, headers={"content-type": "audio/wav"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["result"] in ("covid_likely", "covid_not_likely", "inconclusive")
        assert body["record_id"]
        assert not body["prompt_rerecord"]
        assert set(body["classifiers"]) == {"dtl_mc", "cml_mc", "dtl_bc"}
        assert len(engine.store.all_records()) == 1

    def test_noise_clip_prompts_rerecord_without_record(self, engine, client):
        blob = find_clip(engine, "not_cough", want_cough=False)
        resp = client.post("/v1/screen", content=blob, headers={"content-type": "audio/wav"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["result"] == "not_a_cough"
        assert body["prompt_rerecord"] is True
        assert body["classifiers"] is None
        assert body["record_id"] is None
        assert engine.store.all_records() == []

    def test_multipart_upload(self, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        resp = client.post("/v1/screen", files={"file": ("cough.wav", blob, "audio/wav")})
        assert resp.status_code == 200

    def test_empty_body_is_400(self, client):
        resp = client.post("/v1/screen", content=b"")
        assert resp.status_code == 400

    def test_malformed_audio_is_400(self, client):
        resp = client.post("/v1/screen", content=b"definitely not wav data")
        assert resp.status_code == 400

    def test_too_short_clip_is_422(self, client):
        from coughscreen.audio import AudioClip

        clip = AudioClip(samples=np.full(4410, 0.3), sample_rate=44100)  # 0.1 s
        resp = client.post("/v1/screen", content=encode_wav(clip))
        assert resp.status_code == 422

    def test_oversize_payload_is_413(self, micro_models, tmp_path):
        engine = Engine.load(micro_models["models_dir"], tmp_path / "r.jsonl")
        config = ServiceConfig(payload_limit_bytes=1000)
        small_client = TestClient(create_app(engine, config))
        resp = small_client.post("/v1/screen", content=b"\x00" * 2000)
        assert resp.status_code == 413

    def test_coarse_location_rounded(self, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        resp = client.post(
            "/v1/screen",
            content=blob,
            headers={"x-coarse-lat": "40.4419", "x-coarse-lon": "-79.9621"},
        )
        assert resp.status_code == 200
        record = engine.store.all_records()[-1]
        assert record["coarse_location"] == [40.4, -80.0]

    def test_record_schema_has_no_identity_or_audio(self, engine, client):
        blob = find_clip(engine, "pertussis", want_cough=True)
        client.post("/v1/screen", content=blob)
        record = engine.store.all_records()[-1]
        allowed = {
            "record_id", "timestamp", "coarse_location", "detector",
            "classifiers", "result", "model_versions",
        }
        assert set(record) == allowed
        flat = json.dumps(record).lower()
        for banned in ("audio", "samples", "name", "email", "phone", "ip"):
            assert f'"{banned}"' not in flat


class TestSession:
    def test_three_coughs_vote(self, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        files = [("files", (f"c{i}.wav", blob, "audio/wav")) for i in range(3)]
        resp = client.post("/v1/screen/session", files=files)
        assert resp.status_code == 200
        body = resp.json()
        assert body["result"] in ("covid_likely", "covid_not_likely", "inconclusive")
        assert body["valid_coughs"] == 3
        assert len(body["clips"]) == 3

    def test_too_few_clips_rejected(self, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        files = [("files", ("c.wav", blob, "audio/wav"))] * 2
        resp = client.post("/v1/screen/session", files=files)
        assert resp.status_code == 422

    def test_noise_reduces_valid_count(self, engine, client):
        cough = find_clip(engine, "covid19", want_cough=True)
        noise = find_clip(engine, "not_cough", want_cough=False)
        files = [
            ("files", ("a.wav", cough, "audio/wav")),
            ("files", ("b.wav", cough, "audio/wav")),
            ("files", ("c.wav", noise, "audio/wav")),
        ]
        resp = client.post("/v1/screen/session", files=files)
        assert resp.status_code == 422
        assert "valid" in resp.json()["error"] or "cough" in resp.json()["error"]


class TestRecordsAndHealth:
    def test_records_listing_and_restart(self, micro_models, tmp_path, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        for _ in range(2):
            client.post("/v1/screen", content=blob)
        resp = client.get("/v1/records")
        assert resp.status_code == 200
        body = resp.json()
        assert body["total"] == 2
        assert len(body["records"]) == 2
        timestamps = [r["timestamp"] for r in body["records"]]
        assert timestamps == sorted(timestamps, reverse=True)

        # restart: a new engine over the same store sees the records
        reloaded = Engine.load(micro_models["models_dir"], engine.store.path)
        assert len(reloaded.store.all_records()) == 2

    def test_time_range_filter(self, engine, client):
        blob = find_clip(engine, "covid19", want_cough=True)
        client.post("/v1/screen", content=blob)
        resp = client.get("/v1/records", params={"from": "2990-01-01T00:00:00"})
        assert resp.json()["total"] == 0
        resp = client.get("/v1/records", params={"to": "2990-01-01T00:00:00"})
        assert resp.json()["total"] == 1

    def test_health_reports_versions(self, client):
        resp = client.get("/v1/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert set(body["versions"]) == {"detector", "dtl_mc", "cml_mc", "dtl_bc"}

    def test_cors_header_present(self, client):
        resp = client.get("/v1/health", headers={"origin": "http://localhost:5173"})
        assert resp.headers.get("access-control-allow-origin") in ("*", "http://localhost:5173")

    def test_missing_models_unloadable(self, tmp_path):
        with pytest.raises(Exception):
            Engine.load(tmp_path, tmp_path / "r.jsonl")


class TestStore:
    def test_append_survives_reopen(self, tmp_path):
        store = RecordStore(tmp_path / "log.jsonl")
        store.append({"record_id": "a", "timestamp": "2026-01-01T00:00:00+00:00"})
        store.append({"record_id": "b", "timestamp": "2026-01-02T00:00:00+00:00"})
        fresh = RecordStore(tmp_path / "log.jsonl")
        assert [r["record_id"] for r in fresh.all_records()] == ["a", "b"]

    def test_query_pagination(self, tmp_path):
        store = RecordStore(tmp_path / "log.jsonl")
        for i in range(7):
            store.append({"record_id": str(i), "timestamp": f"2026-01-0{i + 1}T00:00:00"})
        page1, total = store.query(page=1, page_size=3)
        page2, _ = store.query(page=2, page_size=3)
        assert total == 7
        assert [r["record_id"] for r in page1] == ["6", "5", "4"]
        assert [r["record_id"] for r in page2] == ["3", "2", "1"]


class TestInconclusivePath:
    def test_forced_disagreement_yields_inconclusive(self, micro_models, tmp_path):
        """Pin k1 to covid and k3 to not-covid via doctored classifiers; the
        veto rule must refuse to reconcile them."""
        engine = Engine.load(micro_models["models_dir"], tmp_path / "records.jsonl")
        blob = find_clip(engine, "covid19", want_cough=True)

        from coughscreen.classifiers import BinaryClass, BinaryLabel, DiagnosisClass, DiagnosisLabel
        import coughscreen.engine as engine_mod

        original_mc = engine_mod.classify_mc
        original_bc = engine_mod.classify_bc
        try:
            engine_mod.classify_mc = lambda net, img: DiagnosisLabel(
                DiagnosisClass.COVID19, np.array([1.0, 0, 0, 0]))
            engine_mod.classify_bc = lambda net, img: BinaryLabel(BinaryClass.NOT_COVID, 1.0)
            response = engine.screen_clip(blob)
        finally:
            engine_mod.classify_mc = original_mc
            engine_mod.classify_bc = original_bc
        assert response.result.value == "inconclusive"
