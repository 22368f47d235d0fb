"""HTTP job service: upload models, run guided-proceduralization jobs
asynchronously, and fetch grammars, previews, and candidate suggestions.

Persistence is plain files under a data directory: models stored
content-addressed by hash, one directory per job, and a single JSON index
guarded by a process-wide lock.  No database.
"""
from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse, Response

from .geometry import DataType, GeometryError, Model
from .grammar import SplitGrammar, derive, grammar_to_json, load_grammar, parse, save_grammar
from .guidance import (
    DEFAULT_BOUNDS,
    DEFAULT_BUDGET,
    DEFAULT_EPSILON,
    PARAM_NAMES,
    VALUE_NAMES,
    GuidanceState,
    ParamVector,
    TargetSpec,
    error as phi_error,
    evaluate,
    optimize,
    suggest_family,
)
from .io import ParseError, load_model, save_obj, save_xyz
from .pipeline import PipelineParams, proceduralize

MAX_UPLOAD_BYTES = 256 * 1024 * 1024
TERMINAL_STATUSES = ("converged", "budget-exhausted", "failed")
_ALLOWED_SUFFIXES = {".obj", ".ply", ".xyz"}


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _bad(status: int, code: str, message: str) -> ServiceError:
    return ServiceError(status, code, message)


class JobStore:
    """File-backed model/job persistence with a single-writer index lock."""

    def __init__(self, data_dir):
        self.root = Path(data_dir)
        self.models_dir = self.root / "models"
        self.jobs_dir = self.root / "jobs"
        self.suggest_dir = self.root / "suggest"
        for d in (self.models_dir, self.jobs_dir, self.suggest_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self.lock = threading.Lock()
        if not self.index_path.exists():
            self._write_index({"jobs": []})

    # -- index ------------------------------------------------------------
    def _read_index(self) -> dict:
        return json.loads(self.index_path.read_text(encoding="utf-8"))

    def _write_index(self, index: dict) -> None:
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")
        tmp.replace(self.index_path)

    # -- models -----------------------------------------------------------
    def put_model(self, data: bytes, filename: str) -> str:
        suffix = Path(filename or "model.obj").suffix.lower() or ".obj"
        if suffix not in _ALLOWED_SUFFIXES:
            raise _bad(400, "unsupported-format",
                       f"unsupported model format '{suffix}'")
        digest = hashlib.sha256(data).hexdigest()[:16]
        model_id = f"{digest}{suffix}"
        path = self.models_dir / model_id
        if not path.exists():
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_bytes(data)
            try:  # reject unparseable uploads before committing them
                load_model(tmp, format_hint=suffix.lstrip("."))
            except (ParseError, GeometryError) as exc:
                tmp.unlink(missing_ok=True)
                raise _bad(400, "parse-error", str(exc)) from exc
            tmp.replace(path)
        return model_id

    def model_path(self, model_id: str) -> Path:
        path = self.models_dir / model_id
        if not path.exists() or path.parent != self.models_dir:
            raise _bad(404, "model-not-found", f"unknown model '{model_id}'")
        return path

    def load_model(self, model_id: str) -> Model:
        path = self.model_path(model_id)
        return load_model(path, format_hint=path.suffix.lstrip("."))

    # -- jobs -------------------------------------------------------------
    def job_dir(self, job_id: str) -> Path:
        return self.jobs_dir / job_id

    def create_job(self, record: dict) -> None:
        with self.lock:
            self.job_dir(record["id"]).mkdir(parents=True, exist_ok=True)
            self._save_job_locked(record)
            index = self._read_index()
            index["jobs"].append(record["id"])
            self._write_index(index)

    def _save_job_locked(self, record: dict) -> None:
        path = self.job_dir(record["id"]) / "job.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(record, indent=1) + "\n", encoding="utf-8")
        tmp.replace(path)

    def load_job(self, job_id: str) -> dict:
        path = self.job_dir(job_id) / "job.json"
        if not path.exists():
            raise _bad(404, "job-not-found", f"unknown job '{job_id}'")
        return json.loads(path.read_text(encoding="utf-8"))

    def update_job(self, job_id: str, **fields) -> dict:
        """Apply fields; status may only move forward."""
        order = {"queued": 0, "running": 1}
        with self.lock:
            record = self.load_job(job_id)
            new_status = fields.get("status")
            if new_status is not None:
                old = record["status"]
                if old in TERMINAL_STATUSES:
                    fields.pop("status")
                elif order.get(new_status, 2) < order.get(old, 2):
                    fields.pop("status")
            record.update(fields)
            record["updatedAt"] = time.time()
            self._save_job_locked(record)
            return record

    def job_ids(self) -> list:
        return list(self._read_index()["jobs"])

    def requeue(self, job_id: str) -> None:
        """Reset an interrupted job to queued (restart recovery only)."""
        with self.lock:
            record = self.load_job(job_id)
            record["status"] = "queued"
            record["updatedAt"] = time.time()
            self._save_job_locked(record)


def _parse_target(body: dict) -> TargetSpec:
    raw = body.get("target")
    if not isinstance(raw, dict) or not raw:
        raise _bad(400, "invalid-target", "body must include a non-empty 'target' object")
    try:
        return TargetSpec(
            targets={k: float(v) for k, v in raw.items()},
            weights={k: float(v) for k, v in (body.get("weights") or {}).items()},
            epsilon=float(body.get("epsilon", DEFAULT_EPSILON)),
        )
    except (GeometryError, TypeError, ValueError) as exc:
        raise _bad(400, "invalid-target", str(exc)) from exc


def _labelled_export(grammar: SplitGrammar, out_path: Path) -> Path:
    """Derive the grammar and write a preview with one flat color per label."""
    d = derive(grammar)
    labels = []
    symbols = {**grammar.terminals, **grammar.nonterminals}
    label_ids = {info.label: i for i, info in
                 enumerate(sorted(symbols.values(), key=lambda s: s.id))}
    for sym, _, _ in d.instances:
        info = symbols[sym]
        if info.geometry is None:
            continue
        n = len(info.geometry)
        labels.extend([label_ids[info.label]] * n)
    if d.model.kind == DataType.MESH:
        out = out_path.with_suffix(".obj")
        save_obj(d.model, out, labels_per_element=labels)
    else:
        out = out_path.with_suffix(".xyz")
        save_xyz(d.model, out)
    return out


class JobRunner:
    """Optimization worker pool; one flag per job for cancellation."""

    def __init__(self, store: JobStore, workers: int | None = None):
        self.store = store
        self.pool = ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 2)
        self.cancel_flags: dict = {}

    def submit(self, job_id: str) -> None:
        self.cancel_flags[job_id] = threading.Event()
        self.pool.submit(self._run, job_id)

    def cancel(self, job_id: str) -> None:
        flag = self.cancel_flags.get(job_id)
        if flag is not None:
            flag.set()

    def _run(self, job_id: str) -> None:
        store = self.store
        try:
            record = store.load_job(job_id)
            store.update_job(job_id, status="running", startedAt=time.time())
            model = store.load_model(record["modelId"])
            target = TargetSpec(
                targets=record["target"],
                weights=record.get("weights") or {},
                epsilon=record.get("epsilon", DEFAULT_EPSILON),
            )
            warm_theta = None
            if record.get("warmFrom"):
                prior = store.load_job(record["warmFrom"])
                theta = prior.get("theta")
                if theta:
                    warm_theta = ParamVector(
                        np.array([theta[n] for n in PARAM_NAMES]))
            flag = self.cancel_flags.get(job_id)
            state = GuidanceState(
                budget=record.get("budget", DEFAULT_BUDGET),
                seed=record.get("seed", 0),
                warm_theta=warm_theta,
                should_stop=flag.is_set if flag is not None else None,
            )
            state = optimize(model, target, state)
            if state.cancelled:
                store.update_job(job_id, status="failed",
                                 error="cancelled before completion")
                return
            job_dir = store.job_dir(job_id)
            if state.best_grammar is not None:
                save_grammar(state.best_grammar, job_dir / "grammar.json")
                # self-contained copy for download: geometry inlined
                (job_dir / "grammar.inline.json").write_text(
                    json.dumps(grammar_to_json(state.best_grammar,
                                               inline_geometry=True),
                               indent=1) + "\n", encoding="utf-8")
            status = "converged" if state.converged else "budget-exhausted"
            store.update_job(
                job_id, status=status,
                finishedAt=time.time(),
                phi=state.best_phi,
                gamma=state.best_values.as_dict() if state.best_values else None,
                theta=state.best_theta.as_dict() if state.best_theta else None,
                evaluations=state.evaluations,
                trace=state.trace,
            )
        except Exception as exc:  # worker must never die silently
            store.update_job(job_id, status="failed", error=str(exc),
                             finishedAt=time.time())
        finally:
            self.cancel_flags.pop(job_id, None)


def create_app(data_dir, workers: int | None = None) -> FastAPI:
    store = JobStore(data_dir)
    runner = JobRunner(store, workers)
    app = FastAPI(title="procgram service")
    app.state.store = store
    app.state.runner = runner

    # jobs interrupted by a previous shutdown resume from the start
    for job_id in store.job_ids():
        record = store.load_job(job_id)
        if record["status"] in ("queued", "running"):
            store.requeue(job_id)
            runner.submit(job_id)

    @app.exception_handler(ServiceError)
    async def _service_error(_req: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"error": {"code": exc.code,
                                               "message": exc.message}})

    @app.exception_handler(Exception)
    async def _unexpected(_req: Request, exc: Exception):
        return JSONResponse(status_code=500,
                            content={"error": {"code": "internal",
                                               "message": str(exc)}})

    @app.get("/api/config")
    def config():
        return {
            "values": list(VALUE_NAMES),
            "epsilon": DEFAULT_EPSILON,
            "budget": DEFAULT_BUDGET,
            "parameters": list(PARAM_NAMES),
            "bounds": {k: list(v) for k, v in DEFAULT_BOUNDS.items()},
        }

    @app.post("/api/models")
    async def upload_model(file: UploadFile):
        data = await file.read()
        if len(data) > MAX_UPLOAD_BYTES:
            raise _bad(413, "too-large",
                       f"upload exceeds {MAX_UPLOAD_BYTES} bytes")
        model_id = store.put_model(data, file.filename or "model.obj")
        return {"modelId": model_id}

    @app.get("/api/models/{model_id}")
    def model_info(model_id: str):
        """Model stats plus the default-parameter grammar values; the UI
        uses gamma0 as slider upper bounds."""
        path = store.model_path(model_id)
        cache = path.with_suffix(path.suffix + ".info.json")
        if cache.exists():
            return json.loads(cache.read_text(encoding="utf-8"))
        model = store.load_model(model_id)
        result = proceduralize(model, PipelineParams(), seed=0)
        gamma0 = evaluate(result.grammar)
        info = {
            "modelId": model_id,
            "kind": model.kind.value,
            "elements": int(len(model.triangles) if model.kind == DataType.MESH
                            else len(model.points)),
            "gamma0": gamma0.as_dict(),
        }
        cache.write_text(json.dumps(info, indent=1) + "\n", encoding="utf-8")
        return info

    @app.post("/api/jobs")
    async def create_job(request: Request):
        body = await request.json()
        model_id = body.get("modelId")
        if not model_id:
            raise _bad(400, "invalid-request", "body must include 'modelId'")
        store.model_path(model_id)  # 404 when unknown
        target = _parse_target(body)
        warm_from = body.get("warmFrom")
        if warm_from:
            store.load_job(warm_from)  # 404 when unknown
        job_id = uuid.uuid4().hex[:12]
        record = {
            "id": job_id,
            "modelId": model_id,
            "target": dict(target.targets),
            "weights": dict(target.weights),
            "epsilon": target.epsilon,
            "budget": int(body.get("budget", DEFAULT_BUDGET)),
            "seed": int(body.get("seed", 0)),
            "warmFrom": warm_from,
            "status": "queued",
            "createdAt": time.time(),
            "updatedAt": time.time(),
        }
        store.create_job(record)
        runner.submit(job_id)
        return {"jobId": job_id}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        return store.load_job(job_id)

    def _finished_grammar_dir(job_id: str) -> Path:
        record = store.load_job(job_id)
        if record["status"] in ("queued", "running"):
            raise _bad(409, "not-finished",
                       f"job '{job_id}' is {record['status']}")
        job_dir = store.job_dir(job_id)
        if record["status"] == "failed" or not (job_dir / "grammar.json").exists():
            raise _bad(409, "no-grammar",
                       f"job '{job_id}' produced no grammar")
        return job_dir

    @app.get("/api/jobs/{job_id}/grammar")
    def get_grammar(job_id: str):
        job_dir = _finished_grammar_dir(job_id)
        return Response((job_dir / "grammar.inline.json").read_bytes(),
                        media_type="application/json")

    @app.get("/api/jobs/{job_id}/preview")
    def get_preview(job_id: str):
        job_dir = _finished_grammar_dir(job_id)
        preview = job_dir / "preview.obj"
        if not preview.exists() and not (job_dir / "preview.xyz").exists():
            grammar = load_grammar(job_dir / "grammar.json")
            preview = _labelled_export(grammar, job_dir / "preview")
        elif not preview.exists():
            preview = job_dir / "preview.xyz"
        return FileResponse(preview, media_type="text/plain")

    @app.post("/api/jobs/{job_id}/refine")
    async def refine(job_id: str, request: Request):
        """New job with fresh targets, warm-started from this job's result."""
        prior = store.load_job(job_id)
        body = await request.json()
        body.setdefault("modelId", prior["modelId"])
        body["warmFrom"] = job_id
        body.setdefault("seed", prior.get("seed", 0))
        body.setdefault("budget", prior.get("budget", DEFAULT_BUDGET))
        return await create_job(request_with_body(request, body))

    def request_with_body(request: Request, body: dict) -> Request:
        async def receive():
            return {"type": "http.request",
                    "body": json.dumps(body).encode("utf-8")}
        return Request(request.scope, receive)

    @app.post("/api/suggest")
    async def suggest(request: Request):
        body = await request.json()
        model_id = body.get("modelId")
        if not model_id:
            raise _bad(400, "invalid-request", "body must include 'modelId'")
        samples = int(body.get("samples", 4))
        seed = int(body.get("seed", 0))
        if samples < 1:
            raise _bad(400, "invalid-request", "samples must be >= 1")
        model = store.load_model(model_id)
        sid = hashlib.sha256(
            f"{model_id}:{samples}:{seed}".encode("utf-8")).hexdigest()[:12]
        out_dir = store.suggest_dir / sid
        listing = out_dir / "candidates.json"
        if not listing.exists():
            candidates = suggest_family(model, samples, seed=seed)
            out_dir.mkdir(parents=True, exist_ok=True)
            entries = []
            for k, (target, grammar, gamma) in enumerate(candidates):
                cdir = out_dir / str(k)
                cdir.mkdir(exist_ok=True)
                save_grammar(grammar, cdir / "grammar.json")
                (cdir / "grammar.inline.json").write_text(
                    json.dumps(grammar_to_json(grammar, inline_geometry=True),
                               indent=1) + "\n", encoding="utf-8")
                _labelled_export(grammar, cdir / "preview")
                entries.append({
                    "index": k,
                    "target": dict(target.targets),
                    "gamma": gamma.as_dict(),
                    "phi": phi_error(gamma, target),
                    "grammar": f"/api/suggest/{sid}/{k}/grammar",
                    "preview": f"/api/suggest/{sid}/{k}/preview",
                })
            listing.write_text(json.dumps({"suggestId": sid,
                                           "candidates": entries},
                                          indent=1) + "\n", encoding="utf-8")
        return json.loads(listing.read_text(encoding="utf-8"))

    @app.get("/api/suggest/{sid}/{index}/grammar")
    def suggest_grammar(sid: str, index: int):
        path = store.suggest_dir / sid / str(index) / "grammar.inline.json"
        if not path.exists():
            raise _bad(404, "candidate-not-found",
                       f"no candidate {index} for suggestion '{sid}'")
        return Response(path.read_bytes(), media_type="application/json")

    @app.get("/api/suggest/{sid}/{index}/preview")
    def suggest_preview(sid: str, index: int):
        cdir = store.suggest_dir / sid / str(index)
        for name in ("preview.obj", "preview.xyz"):
            if (cdir / name).exists():
                return FileResponse(cdir / name, media_type="text/plain")
        raise _bad(404, "candidate-not-found",
                   f"no preview for candidate {index} of '{sid}'")

    return app


def serve(port: int, data_dir, workers: int | None = None) -> None:
    import uvicorn

    app = create_app(data_dir, workers)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
