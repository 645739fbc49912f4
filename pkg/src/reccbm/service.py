"""Read-only HTTP facade over a loaded checkpoint.

Endpoints (JSON over HTTP/1.1, CORS open):
  GET  /api/model       rubric spec and config summary
  GET  /api/instances   ids of the loaded split
  POST /api/trace       {"id": ...} or {"question", "response", "context"?}
  POST /api/intervene   trace request plus {"overrides": {"<concept>": value}}

Handlers share one immutable model snapshot; requests are stateless and
idempotent. Floats are serialized with Python's shortest round-trip repr, so
clients recover the exact doubles and can verify the logit decomposition.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from reccbm.analysis import build_trace
from reccbm.data import Dataset, GradingInstance
from reccbm.trainer import TrainedModel

logger = logging.getLogger("reccbm.service")


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class ModelService:
    """Request-level logic, separated from HTTP plumbing for direct testing."""

    def __init__(self, model: TrainedModel, dataset: Dataset | None = None,
                 split: str | None = "test"):
        self.model = model
        self.instances: dict[str, GradingInstance] = {}
        self.split = split
        if dataset is not None:
            pool = dataset.split(split) if split and dataset.splits else dataset.instances
            self.instances = {inst.id: inst for inst in pool}

    def model_info(self) -> dict:
        return {
            "spec": self.model.spec.to_dict(),
            "embedding": self.model.embed_cfg.to_dict(),
            "head_mode": self.model.head_mode,
            "train": self.model.train_cfg.to_dict(),
        }

    def instance_ids(self) -> dict:
        return {"split": self.split, "ids": sorted(self.instances)}

    def _resolve(self, body: dict) -> tuple[GradingInstance, bool]:
        if not isinstance(body, dict):
            raise ServiceError(400, "request body must be a JSON object")
        if "id" in body:
            instance_id = body["id"]
            if instance_id not in self.instances:
                raise ServiceError(404, f"unknown instance id {instance_id!r}")
            return self.instances[instance_id], True
        if "response" in body:
            K = self.model.spec.num_concepts
            try:
                return (
                    GradingInstance(
                        id=str(body.get("trace_id", "ad-hoc")),
                        question=str(body.get("question", "")),
                        response=str(body["response"]),
                        context=None if body.get("context") is None else str(body["context"]),
                        concept_labels=(0,) * K,
                        grade=0,
                    ),
                    False,
                )
            except (TypeError, ValueError) as e:
                raise ServiceError(400, f"malformed instance fields: {e}") from e
        raise ServiceError(400, "provide either an instance id or a response text")

    def trace(self, body: dict) -> dict:
        instance, labeled = self._resolve(body)
        try:
            trace = build_trace(instance, self.model, labeled=labeled)
        except ValueError as e:
            raise ServiceError(400, str(e)) from e
        return trace.to_dict()

    def intervene(self, body: dict) -> dict:
        instance, labeled = self._resolve(body)
        K = self.model.spec.num_concepts
        overrides_raw = body.get("overrides", {})
        if not isinstance(overrides_raw, dict):
            raise ServiceError(400, "overrides must be an object")
        overrides: dict[int, float] = {}
        for key, value in overrides_raw.items():
            try:
                idx = int(key)
                val = float(value)
            except (TypeError, ValueError) as e:
                raise ServiceError(400, f"malformed override {key!r}: {value!r}") from e
            if not 0 <= idx < K:
                raise ServiceError(422, f"override concept {idx} outside [0, {K})")
            if not 0.0 <= val <= 1.0:
                raise ServiceError(422, f"override value {val} outside [0, 1]")
            overrides[idx] = val

        try:
            trace = build_trace(instance, self.model, labeled=labeled)
        except ValueError as e:
            raise ServiceError(400, str(e)) from e
        s_mod = np.array([row.s_tilde for row in trace.concepts])
        for idx, val in overrides.items():
            s_mod[idx] = val
        res = self.model.grade_from_scores(s_mod)
        g = res.predicted_grade
        contributions = [float(self.model.latent.task_w[g, k] * res.mu_post[k]) for k in range(K)]
        old_for_new_grade = [
            float(self.model.latent.task_w[g, k] * trace.concepts[k].mu_post) for k in range(K)
        ]
        return {
            "trace": trace.to_dict(),
            "overrides": {str(i): v for i, v in sorted(overrides.items())},
            "s_tilde": [float(v) for v in s_mod],
            "mu_post": [float(v) for v in res.mu_post],
            "logits": [float(v) for v in res.logits],
            "probs": [float(v) for v in res.probs],
            "predicted_grade": g,
            "predicted_bias": float(self.model.latent.task_b[g]),
            "contributions": contributions,
            # change in each concept's pull on the (new) predicted grade's logit
            "contribution_deltas": [c - o for c, o in zip(contributions, old_for_new_grade)],
        }


def _make_handler(service: ModelService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            logger.debug("%s " + fmt, self.address_string(), *args)

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path == "/api/model":
                self._send(200, service.model_info())
            elif self.path == "/api/instances":
                self._send(200, service.instance_ids())
            else:
                self._send(404, {"error": f"no route {self.path}"})

        def do_POST(self):
            if self.path not in ("/api/trace", "/api/intervene"):
                self._send(404, {"error": f"no route {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length) or b"{}")
            except (ValueError, json.JSONDecodeError):
                self._send(400, {"error": "malformed JSON body"})
                return
            try:
                if self.path == "/api/trace":
                    self._send(200, service.trace(body))
                else:
                    self._send(200, service.intervene(body))
            except ServiceError as e:
                self._send(e.status, {"error": e.message})
            except Exception as e:  # pragma: no cover - defensive
                logger.exception("internal error")
                self._send(500, {"error": f"internal error: {e}"})

    return Handler


def make_server(
    model: TrainedModel,
    dataset: Dataset | None = None,
    port: int = 8377,
    split: str | None = "test",
) -> ThreadingHTTPServer:
    service = ModelService(model, dataset, split)
    return ThreadingHTTPServer(("127.0.0.1", port), _make_handler(service))


def run_server(server: ThreadingHTTPServer, in_thread: bool = False):
    """Serve forever, optionally on a daemon thread (used by tests)."""
    if in_thread:
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        return thread
    logger.info("serving on http://%s:%d", *server.server_address)
    server.serve_forever()
