"""Protocol session: frame decoding, dispatch, and error containment.

One session serves one connection. Frames arrive as single-line JSON
objects; any frame field named tensor/tensor_a/tensor_b carries
{"shape": [...], "dtype": "f32le", "data": base64}. A bad frame gets an
error response, never a crash; requests are answered strictly in
arrival order with one response per request_id.
"""

from __future__ import annotations

import base64
import json
from typing import Optional, Tuple

import numpy as np

PROTOCOL_VERSION = "fsl/1"
UNCOND_PROMPT = ""  # classifier-free guidance uses the empty prompt
ECHO_CONDITION = "__echo__"


def decode_tensor(obj) -> Tuple[np.ndarray, Tuple[int, ...]]:
    if not isinstance(obj, dict) or obj.get("dtype") != "f32le":
        raise ValueError("tensor must be an object with dtype f32le")
    raw = base64.b64decode(obj["data"])
    if len(raw) % 4 != 0:
        raise ValueError("tensor payload is not f32-aligned")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)
    shape = tuple(int(s) for s in obj.get("shape", [values.size]))
    if int(np.prod(shape)) != values.size:
        raise ValueError("tensor shape does not match payload")
    return values, shape


def encode_tensor(values: np.ndarray, shape) -> dict:
    arr = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    return {
        "shape": [int(s) for s in shape],
        "dtype": "f32le",
        "data": base64.b64encode(arr.astype("<f4", copy=False).tobytes()).decode("ascii"),
    }


class AdapterSession:
    """Dispatches frames for one connection against a model object.

    The model provides: latent_shape, register(id, text=..., embedding=...),
    epsilon(x, condition_id, step_kind, step_value, cfg_enabled, guidance),
    align(x, text) -> (score, a_max), distance(a, b) -> score.
    """

    def __init__(self, model):
        self.model = model
        self.registered = set()

    def handle_line(self, line: str) -> Optional[str]:
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            return self._error(None, f"malformed frame: {exc}")
        if not isinstance(frame, dict):
            return self._error(None, "frame must be a JSON object")
        kind = frame.get("type")
        handler = getattr(self, f"_on_{kind}", None) if isinstance(kind, str) else None
        if handler is None:
            return self._error(frame.get("request_id"), f"unknown frame type {kind!r}")
        try:
            return handler(frame)
        except Exception as exc:
            return self._error(frame.get("request_id"), str(exc))

    @staticmethod
    def _error(request_id, message: str) -> str:
        return json.dumps({"type": "error", "request_id": request_id, "message": message})

    def _on_hello(self, frame) -> str:
        if frame.get("version") != PROTOCOL_VERSION:
            return self._error(None, f"unsupported protocol version {frame.get('version')!r}")
        return json.dumps(
            {
                "type": "hello_ack",
                "version": PROTOCOL_VERSION,
                "uncond_prompt": UNCOND_PROMPT,
                "latent_shape": [int(s) for s in self.model.latent_shape],
            }
        )

    def _on_register_condition(self, frame) -> Optional[str]:
        cid = frame.get("id")
        if not isinstance(cid, str):
            return self._error(None, "register_condition needs a string id")
        if "text" in frame:
            self.model.register(cid, text=str(frame["text"]))
        elif "embedding" in frame:
            self.model.register(
                cid, embedding=np.asarray(frame["embedding"], dtype=np.float32)
            )
        else:
            return self._error(None, "register_condition needs text or embedding")
        self.registered.add(cid)
        return None  # registrations are not acknowledged

    def _check_finite(self, values: np.ndarray) -> None:
        if not np.all(np.isfinite(values)):
            raise ValueError("tensor payload contains non-finite values")

    def _on_epsilon(self, frame) -> str:
        rid = frame.get("request_id")
        values, shape = decode_tensor(frame.get("tensor"))
        self._check_finite(values)
        cid = frame.get("condition_id")
        if cid == ECHO_CONDITION:
            return json.dumps(
                {"type": "epsilon_result", "request_id": rid,
                 "tensor": encode_tensor(values, shape)}
            )
        if cid not in self.registered:
            raise ValueError(f"condition {cid!r} is not registered")
        step = frame.get("step") or {}
        cfg = frame.get("cfg") or {}
        eps = self.model.epsilon(
            values,
            cid,
            step_kind=step.get("kind", "sigma"),
            step_value=float(step.get("value", 0.0)),
            cfg_enabled=bool(cfg.get("enabled", False)),
            guidance=float(cfg.get("guidance", 0.0)),
        )
        return json.dumps(
            {"type": "epsilon_result", "request_id": rid, "tensor": encode_tensor(eps, shape)}
        )

    def _on_align(self, frame) -> str:
        rid = frame.get("request_id")
        values, _ = decode_tensor(frame.get("tensor"))
        self._check_finite(values)
        score, a_max = self.model.align(values, str(frame.get("text", "")))
        return json.dumps(
            {"type": "align_result", "request_id": rid,
             "score": float(score), "a_max": float(a_max)}
        )

    def _on_distance(self, frame) -> str:
        rid = frame.get("request_id")
        a, _ = decode_tensor(frame.get("tensor_a"))
        b, _ = decode_tensor(frame.get("tensor_b"))
        self._check_finite(a)
        self._check_finite(b)
        return json.dumps(
            {"type": "distance_result", "request_id": rid,
             "score": float(self.model.distance(a, b))}
        )
