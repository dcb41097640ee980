"""Screening engine shared by the HTTP service and the CLI predict path.

One clip flows decode -> validate -> spectro-image -> detector; only
detected coughs reach the three diagnosis classifiers and the mediator.
Results are persisted as anonymized, coarsely geo-tagged records in an
append-only JSON-lines store (fsynced before the response is returned).
"""

from __future__ import annotations

import hashlib
import json
import os
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .audio import (
    AudioClip,
    SilentInput,
    TooShort,
    ValidationPolicy,
    decode_wav,
    validate_clip,
)
from .classifiers import (
    DIAGNOSIS_ORDER,
    DetectionClass,
    DiagnosisClass,
    DiagnosisLabel,
    classify_bc,
    classify_mc,
    detect,
)
from .dsp import MfccConfig, SpectroConfig, mel_spectrogram, mfcc, to_image
from .features import DEFAULT_PCA_COMPONENTS, feature_vector
from .mediator import AppResult, ClassifierOutputs, mediate, multi_sample_vote
from .neuralnet import Network, load_network
from .svm import SvmModel, load_svm, predict_svm, vote_shares

DETECTOR_FILE = "detector.aicn"
DTL_MC_FILE = "dtl_mc.aicn"
DTL_BC_FILE = "dtl_bc.aicn"
CML_MC_FILE = "cml_mc.svmmodel"


class EngineError(Exception):
    pass


class ModelsNotLoaded(EngineError):
    pass


class InsufficientValidCoughs(EngineError):
    def __init__(self, valid: int, needed: int = 3):
        self.valid = valid
        self.needed = needed
        super().__init__(f"only {valid} valid cough clips, need {needed}")


@dataclass
class RecordStore:
    """Append-only JSON-lines record log; appends are fsynced."""

    path: Path

    def __post_init__(self):
        self.path = Path(self.path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with open(self.path, "a") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def all_records(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def query(self, ts_from=None, ts_to=None, page: int = 1, page_size: int = 50):
        records = self.all_records()
        if ts_from is not None:
            records = [r for r in records if r["timestamp"] >= ts_from]
        if ts_to is not None:
            records = [r for r in records if r["timestamp"] <= ts_to]
        records.sort(key=lambda r: r["timestamp"], reverse=True)
        total = len(records)
        start = (page - 1) * page_size
        return records[start : start + page_size], total


@dataclass
class ScreeningResponse:
    result: AppResult
    prompt_rerecord: bool
    detector: dict
    classifiers: dict | None
    record_id: str | None
    model_versions: dict

    def to_dict(self) -> dict:
        return {
            "result": self.result.value,
            "prompt_rerecord": self.prompt_rerecord,
            "detector": self.detector,
            "classifiers": self.classifiers,
            "record_id": self.record_id,
            "model_versions": self.model_versions,
        }


@dataclass
class Engine:
    detector: Network
    dtl_mc: Network
    dtl_bc: Network
    cml_mc: SvmModel
    store: RecordStore
    spectro_config: SpectroConfig = field(default_factory=SpectroConfig)
    mfcc_config: MfccConfig = field(default_factory=MfccConfig)
    pca_components: int = DEFAULT_PCA_COMPONENTS
    validation_policy: ValidationPolicy = field(default_factory=ValidationPolicy)
    research_audio_dir: Path | None = None  # opt-in clip retention

    @classmethod
    def load(cls, model_dir, store_path, research_audio_dir=None) -> "Engine":
        model_dir = Path(model_dir)
        paths = {
            name: model_dir / name
            for name in (DETECTOR_FILE, DTL_MC_FILE, DTL_BC_FILE, CML_MC_FILE)
        }
        missing = [str(p) for p in paths.values() if not p.exists()]
        if missing:
            raise ModelsNotLoaded(f"missing model files: {missing}")
        return cls(
            detector=load_network(paths[DETECTOR_FILE]),
            dtl_mc=load_network(paths[DTL_MC_FILE]),
            dtl_bc=load_network(paths[DTL_BC_FILE]),
            cml_mc=load_svm(paths[CML_MC_FILE]),
            store=RecordStore(Path(store_path)),
            research_audio_dir=Path(research_audio_dir) if research_audio_dir else None,
        )

    def model_versions(self) -> dict:
        digest = hashlib.sha256()
        for p in self.cml_mc.pairs:
            digest.update(np.ascontiguousarray(p.dual_coef).tobytes())
            digest.update(np.ascontiguousarray(p.support_vectors).tobytes())
        return {
            "detector": self.detector.parameter_hash()[:12],
            "dtl_mc": self.dtl_mc.parameter_hash()[:12],
            "dtl_bc": self.dtl_bc.parameter_hash()[:12],
            "cml_mc": digest.hexdigest()[:12],
        }

    # -- pipeline ----------------------------------------------------------

    def image_for_clip(self, clip: AudioClip) -> np.ndarray:
        return to_image(mel_spectrogram(clip.samples, self.spectro_config))

    def features_for_clip(self, clip: AudioClip) -> np.ndarray:
        return feature_vector(mfcc(clip.samples, self.mfcc_config), self.pca_components)

    def screen_clip(
        self, wav_bytes: bytes, coarse_location=None, persist: bool = True
    ) -> ScreeningResponse:
        clip = validate_clip(decode_wav(wav_bytes), self.validation_policy)
        image = self.image_for_clip(clip)
        detection = detect(self.detector, image)
        versions = self.model_versions()
        if detection.value is DetectionClass.NOT_COUGH:
            return ScreeningResponse(
                result=AppResult.NOT_A_COUGH,
                prompt_rerecord=True,
                detector={"label": detection.value.value, "probability": detection.probability},
                classifiers=None,
                record_id=None,
                model_versions=versions,
            )

        # the three classifiers share no mutable state, so evaluate concurrently
        with ThreadPoolExecutor(max_workers=3) as pool:
            f_mc = pool.submit(classify_mc, self.dtl_mc, image)
            f_svm = pool.submit(self._classify_svm, clip)
            f_bc = pool.submit(classify_bc, self.dtl_bc, image)
            k1 = f_mc.result()
            k2, k2_shares = f_svm.result()
            k3 = f_bc.result()

        verdict = mediate(ClassifierOutputs(k1=k1, k2=k2, k3=k3))
        record_id = uuid.uuid4().hex if persist else None
        classifiers = {
            "dtl_mc": {
                "label": k1.value.value,
                "probabilities": [float(p) for p in k1.probabilities],
            },
            "cml_mc": {
                "label": k2.value.value,
                "probabilities": [float(p) for p in k2_shares],
            },
            "dtl_bc": {"label": k3.value.value, "probability": k3.probability},
        }
        if persist:
            record = {
                "record_id": record_id,
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "coarse_location": _round_location(coarse_location),
                "detector": {
                    "label": detection.value.value,
                    "probability": detection.probability,
                },
                "classifiers": classifiers,
                "result": verdict.value,
                "model_versions": versions,
            }
            self.store.append(record)
            if self.research_audio_dir is not None:
                self.research_audio_dir.mkdir(parents=True, exist_ok=True)
                (self.research_audio_dir / f"{record_id}.wav").write_bytes(wav_bytes)
        return ScreeningResponse(
            result=verdict,
            prompt_rerecord=False,
            detector={"label": detection.value.value, "probability": detection.probability},
            classifiers=classifiers,
            record_id=record_id,
            model_versions=versions,
        )

    def _classify_svm(self, clip: AudioClip):
        feat = self.features_for_clip(clip)
        label_value = predict_svm(self.cml_mc, feat)
        shares = vote_shares(self.cml_mc, feat)
        tokens = [str(getattr(c, "value", c)) for c in self.cml_mc.classes]
        probs = np.zeros(len(DIAGNOSIS_ORDER))
        for idx, cls in enumerate(DIAGNOSIS_ORDER):
            if cls.value in tokens:
                probs[idx] = shares[tokens.index(cls.value)]
        value = DiagnosisClass(str(getattr(label_value, "value", label_value)))
        return DiagnosisLabel(value=value, probabilities=probs), probs

    def screen_session(self, clips: list[bytes], coarse_location=None) -> dict:
        """At least three clips; clips failing validation or detection are
        excluded before the majority vote."""
        if len(clips) < 3:
            raise InsufficientValidCoughs(valid=len(clips))
        responses = []
        excluded = 0
        for blob in clips:
            try:
                responses.append(self.screen_clip(blob, coarse_location))
            except (TooShort, SilentInput):
                excluded += 1
        valid = [r for r in responses if r.result is not AppResult.NOT_A_COUGH]
        if len(valid) < 3:
            raise InsufficientValidCoughs(valid=len(valid))
        verdict = multi_sample_vote([r.result for r in valid])
        return {
            "result": verdict.value,
            "clips": [r.to_dict() for r in responses],
            "valid_coughs": len(valid),
            "excluded": excluded + (len(responses) - len(valid)),
            "model_versions": self.model_versions(),
        }


def _round_location(loc):
    """Coarsen to 0.1 degree so records never carry a precise position."""
    if loc is None:
        return None
    lat, lon = loc
    return [round(float(lat) * 10.0) / 10.0, round(float(lon) * 10.0) / 10.0]
