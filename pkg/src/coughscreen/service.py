"""HTTP JSON API over the screening engine.

POST /v1/screen          raw audio/wav body or multipart "file"
POST /v1/screen/session  multipart, >= 3 "files" entries
GET  /v1/records         ?from=&to=&page= (ISO timestamps, newest first)
GET  /v1/health

Optional headers X-Coarse-Lat / X-Coarse-Lon attach a 0.1-degree location.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .audio import (
    EmptyPayload,
    MalformedContainer,
    SilentInput,
    TooShort,
    UnsupportedEncoding,
)
from .config import ServiceConfig
from .engine import Engine, InsufficientValidCoughs, ModelsNotLoaded

RECORDS_PAGE_SIZE = 50


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _coarse_location(request: Request):
    lat = request.headers.get("x-coarse-lat")
    lon = request.headers.get("x-coarse-lon")
    if lat is None or lon is None:
        return None
    try:
        return (float(lat), float(lon))
    except ValueError:
        return None


def create_app(engine: Engine | None, config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="coughscreen", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[config.cors_origin] if config.cors_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    state = {"engine": engine}

    def current_engine() -> Engine:
        if state["engine"] is None:
            raise ModelsNotLoaded("engine not loaded")
        return state["engine"]

    async def _read_single_payload(request: Request) -> bytes:
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/form-data"):
            form = await request.form()
            upload = form.get("file")
            if upload is None:
                return b""
            return await upload.read()
        return await request.body()

    @app.post("/v1/screen")
    async def screen(request: Request):
        try:
            payload = await _read_single_payload(request)
            if len(payload) > config.payload_limit_bytes:
                return _error(413, "payload exceeds limit")
            if not payload:
                return _error(400, "empty request body")
            response = current_engine().screen_clip(payload, _coarse_location(request))
            return JSONResponse(content=response.to_dict())
        except (MalformedContainer, UnsupportedEncoding, EmptyPayload) as exc:
            return _error(400, str(exc))
        except (TooShort, SilentInput) as exc:
            return _error(422, str(exc))
        except ModelsNotLoaded as exc:
            return _error(503, str(exc))

    @app.post("/v1/screen/session")
    async def screen_session(request: Request):
        try:
            form = await request.form()
            uploads = form.getlist("files")
            blobs = []
            for upload in uploads:
                blob = await upload.read()
                if len(blob) > config.payload_limit_bytes:
                    return _error(413, "payload exceeds limit")
                blobs.append(blob)
            if len(blobs) < 3:
                return _error(422, f"need at least 3 clips, got {len(blobs)}")
            result = current_engine().screen_session(blobs, _coarse_location(request))
            return JSONResponse(content=result)
        except InsufficientValidCoughs as exc:
            return _error(422, str(exc))
        except (MalformedContainer, UnsupportedEncoding, EmptyPayload) as exc:
            return _error(400, str(exc))
        except ModelsNotLoaded as exc:
            return _error(503, str(exc))

    @app.get("/v1/records")
    async def records(request: Request):
        try:
            engine_ = current_engine()
            params = request.query_params
            page = max(int(params.get("page", "1")), 1)
            rows, total = engine_.store.query(
                ts_from=params.get("from"),
                ts_to=params.get("to"),
                page=page,
                page_size=RECORDS_PAGE_SIZE,
            )
            return JSONResponse(
                content={"records": rows, "total": total, "page": page, "page_size": RECORDS_PAGE_SIZE}
            )
        except ModelsNotLoaded as exc:
            return _error(503, str(exc))
        except OSError as exc:
            return _error(503, f"record store unavailable: {exc}")

    @app.get("/v1/health")
    async def health():
        try:
            engine_ = current_engine()
            return JSONResponse(
                content={
                    "status": "ok",
                    "versions": engine_.model_versions(),
                    "records": len(engine_.store.all_records()),
                }
            )
        except ModelsNotLoaded as exc:
            return _error(503, str(exc))

    return app


def serve(config: ServiceConfig) -> None:
    """Load models and run the API under uvicorn (blocking)."""
    import uvicorn

    engine = Engine.load(
        config.model_dir,
        config.store_path,
        research_audio_dir=config.research_audio_dir or None,
    )
    app = create_app(engine, config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
