"""HTTP API serving trajectory ensembles, risk curves and what-if queries.

Computation is stateless: a response depends only on the loaded
checkpoint, the registered series, and the request (seeds included), so
replaying a request log yields byte-identical bodies. Responses are
serialized once, canonically (sorted keys, no whitespace); series ids
are sequential. Every error body carries a machine-readable ``code``,
a human ``message``, and field-level messages for validation failures.

Endpoints: GET /health, PUT /series, GET /series/{id}/ensemble,
GET /series/{id}/risk, POST /series/{id}/query.
"""

from __future__ import annotations

import json
import threading
import time

from fastapi import FastAPI, Request
from fastapi.responses import Response

from . import __version__
from .engine import (EngineConfig, HypotheticalPoint, backward_paths, condition_on_point,
                     ensemble_document, risk_curve, sample_ensemble)
from .errors import (ContractViolation, EmptyWindowError, EnsembleDegenerateError,
                     OdecastError, QueryInfeasibleError, StiffnessError)
from .model import ModelParams
from .series import series_from_document

_JSON = "application/json"


def _canonical(payload: dict, status: int = 200) -> Response:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return Response(content=body, status_code=status, media_type=_JSON)


def _error(status: int, code: str, message: str, **extra) -> Response:
    payload = {"code": code, "message": message}
    payload.update(extra)
    return _canonical(payload, status=status)


def _field_messages(problems: list[str]) -> dict[str, str]:
    """Group validation messages by the field they start with."""
    known = ("times", "values", "mask", "label", "feature_names", "series")
    fields: dict[str, str] = {}
    for p in problems:
        first = p.split()[0] if p.split() else "body"
        key = first if first in known else "body"
        fields[key] = p if key not in fields else fields[key] + "; " + p
    return fields


class _Registry:
    """Series store guarded for exclusive writes; reads copy references."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: dict[str, object] = {}
        self._counter = 0

    def put(self, series) -> str:
        with self._lock:
            self._counter += 1
            sid = f"s-{self._counter:06d}"
            self._items[sid] = series
            return sid

    def get(self, sid: str):
        with self._lock:
            return self._items.get(sid)

    def count(self) -> int:
        with self._lock:
            return len(self._items)


def _parse_number(raw: str, name: str, lo=None, hi=None, integer=False):
    try:
        val = int(raw) if integer else float(raw)
    except ValueError:
        raise ContractViolation(f"{name} must be a number, got {raw!r}")
    if lo is not None and val < lo:
        raise ContractViolation(f"{name} must be >= {lo}")
    if hi is not None and val > hi:
        raise ContractViolation(f"{name} must be <= {hi}")
    return val


def create_app(params: ModelParams, checkpoint_hash: str = "",
               config: EngineConfig | None = None) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    config = config or EngineConfig()
    app = FastAPI(title="odecast", docs_url=None, redoc_url=None, openapi_url=None)
    # The explorer UI is served from its own local origin.
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    registry = _Registry()
    started = time.monotonic()

    def query_params(request: Request, allowed: dict):
        """Validate query strings against an {name: parser} table."""
        unknown = set(request.query_params) - set(allowed)
        if unknown:
            raise ContractViolation(f"unknown query parameters: {', '.join(sorted(unknown))}")
        out = {}
        for name, parse in allowed.items():
            if name in request.query_params:
                out[name] = parse(request.query_params[name])
        return out

    def lookup(sid: str):
        series = registry.get(sid)
        if series is None:
            raise KeyError(sid)
        return series

    @app.get("/health")
    def health():
        return _canonical({
            "status": "ready",
            "version": __version__,
            "checkpoint_hash": checkpoint_hash,
            "series_count": registry.count(),
            "uptime_seconds": round(time.monotonic() - started, 3),
        })

    @app.put("/series")
    async def put_series(request: Request):
        try:
            doc = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            return _error(400, "validation_error", f"body is not valid JSON: {exc}")
        try:
            series = series_from_document(doc)
        except ContractViolation as exc:
            problems = [p.strip() for p in str(exc).split(";")]
            return _error(400, "validation_error", "series document invalid",
                          fields=_field_messages(problems))
        if series.n_features != params.arch.n_features:
            return _error(400, "validation_error",
                          f"series has {series.n_features} features, "
                          f"model expects {params.arch.n_features}",
                          fields={"feature_names": "feature count mismatch"})
        sid = registry.put(series)
        return _canonical({"id": sid})

    @app.get("/series/{sid}/ensemble")
    def get_ensemble(sid: str, request: Request):
        try:
            series = lookup(sid)
        except KeyError:
            return _error(404, "unknown_series", f"no series with id {sid!r}")
        try:
            q = query_params(request, {
                "fraction": lambda r: _parse_number(r, "fraction", lo=1e-9, hi=1.0),
                "k": lambda r: _parse_number(r, "k", lo=1, integer=True),
                "horizon_mult": lambda r: _parse_number(r, "horizon_mult", lo=1.0),
                "seed": lambda r: _parse_number(r, "seed", lo=0, integer=True),
                "theta_hop": lambda r: _parse_number(r, "theta_hop", lo=1e-9),
            })
            cfg = config
            if "theta_hop" in q:
                cfg = EngineConfig(**{**config.__dict__, "theta_hop": q["theta_hop"]})
            ensemble = sample_ensemble(
                series, params, fraction=q.get("fraction", 1.0), k=q.get("k"),
                horizon_mult=q.get("horizon_mult"), seed=q.get("seed", 0), config=cfg)
        except ContractViolation as exc:
            return _error(400, "validation_error", str(exc))
        except EmptyWindowError as exc:
            return _error(422, exc.code, str(exc))
        except EnsembleDegenerateError as exc:
            return _error(422, exc.code, str(exc), dropped=exc.dropped,
                          requested=exc.requested)
        except (OdecastError,) as exc:
            return _error(500, getattr(exc, "code", "error"), str(exc))
        return _canonical(ensemble_document(ensemble, params, series_id=sid))

    @app.get("/series/{sid}/risk")
    def get_risk(sid: str, request: Request):
        try:
            series = lookup(sid)
        except KeyError:
            return _error(404, "unknown_series", f"no series with id {sid!r}")
        try:
            q = query_params(request, {
                "threshold": lambda r: _parse_number(r, "threshold", lo=0.0, hi=1.0),
            })
            threshold = q.get("threshold", config.risk_threshold)
            points, crossing = risk_curve(series, params, threshold=threshold,
                                          rtol=config.rtol, atol=config.atol)
        except ContractViolation as exc:
            return _error(400, "validation_error", str(exc))
        except EmptyWindowError as exc:
            return _error(422, exc.code, str(exc))
        except OdecastError as exc:
            return _error(500, getattr(exc, "code", "error"), str(exc))
        return _canonical({
            "series_id": sid,
            "threshold": threshold,
            "points": [{"duration": d, "probability": p} for d, p in points],
            "first_crossing": crossing,
        })

    @app.post("/series/{sid}/query")
    async def post_query(sid: str, request: Request):
        try:
            series = lookup(sid)
        except KeyError:
            return _error(404, "unknown_series", f"no series with id {sid!r}")
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            return _error(400, "validation_error", f"body is not valid JSON: {exc}")
        try:
            if not isinstance(body, dict) or "point" not in body:
                raise ContractViolation("body must be an object with a 'point' field")
            p = body["point"]
            for key in ("time", "feature", "value", "tolerance"):
                if key not in p:
                    raise ContractViolation(f"point.{key} is required")
            point = HypotheticalPoint(time=float(p["time"]), feature=int(p["feature"]),
                                      value=float(p["value"]),
                                      tolerance=float(p["tolerance"]))
            k = int(body["k"]) if "k" in body else None
            m = int(body["m"]) if "m" in body else None
            seed = int(body.get("seed", 0))
            fraction = float(body.get("fraction", 1.0))
            conditioned = condition_on_point(series, params, point, k=k, m=m,
                                             seed=seed, fraction=fraction, config=config)
            back = backward_paths(conditioned, params, point.time,
                                  rtol=config.rtol, atol=config.atol)
        except (ContractViolation, ValueError, TypeError) as exc:
            return _error(400, "validation_error", str(exc))
        except EmptyWindowError as exc:
            return _error(422, exc.code, str(exc))
        except QueryInfeasibleError as exc:
            return _error(422, exc.code, str(exc), best_distance=exc.best_distance)
        except EnsembleDegenerateError as exc:
            return _error(422, exc.code, str(exc), dropped=exc.dropped,
                          requested=exc.requested)
        except (StiffnessError, OdecastError) as exc:
            return _error(500, getattr(exc, "code", "error"), str(exc))
        doc = ensemble_document(conditioned, params, series_id=sid)
        return _canonical({"conditioned": doc, "backward_paths": back, "seed": seed})

    return app


def serve(params: ModelParams, checkpoint_hash: str, host: str = "127.0.0.1",
          port: int = 8350, config: EngineConfig | None = None) -> None:
    import uvicorn
    app = create_app(params, checkpoint_hash, config)
    uvicorn.run(app, host=host, port=port, log_level="warning")
