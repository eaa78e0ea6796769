"""Newline-delimited JSON wire protocol for external adapters.

Control frames are single JSON objects per line. Any frame field named
"tensor" (or "tensor_a"/"tensor_b") carries

    {"shape": [...], "dtype": "f32le", "data": base64(f32le, row-major)}

Frames spoken by the engine:

    hello {version}                 -> hello_ack {version, uncond_prompt,
                                                  latent_shape?}
    register_condition {id, text|embedding}      (no response)
    epsilon {request_id, tensor, condition_id,
             step: {kind: "t"|"sigma", value},
             cfg: {enabled, guidance}}           -> epsilon_result {request_id, tensor}
    align {request_id, tensor, text}             -> align_result {request_id, score, a_max}
    distance {request_id, tensor_a, tensor_b}    -> distance_result {request_id, score}
    error {request_id, message}                  (any request may fail)

Transport is TCP or a subprocess speaking the same frames on stdio. One
request is in flight per connection; requests are matched to responses
by a per-connection sequence number.
"""

from __future__ import annotations

import base64
import json
import os
import queue
import shlex
import socket
import subprocess
import threading
import time
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ProtocolError, RemoteFailure, TimeoutError, TransportError

PROTOCOL_VERSION = "fsl/1"
DEFAULT_TIMEOUT_SECS = 120.0
TIMEOUT_ENV_VAR = "FSL_TIMEOUT_SECS"


def default_timeout() -> float:
    raw = os.environ.get(TIMEOUT_ENV_VAR)
    if raw is None:
        return DEFAULT_TIMEOUT_SECS
    try:
        return float(raw)
    except ValueError:
        raise ProtocolError(f"{TIMEOUT_ENV_VAR} must be a number, got {raw!r}")


def encode_tensor(values: np.ndarray, shape: Optional[Sequence[int]] = None) -> dict:
    """Encode an f32 array as a wire tensor object (bit-exact)."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if shape is None:
        shape = arr.shape if arr.ndim else (1,)
    data = base64.b64encode(arr.reshape(-1).astype("<f4", copy=False).tobytes())
    return {"shape": [int(s) for s in shape], "dtype": "f32le", "data": data.decode("ascii")}


def decode_tensor(obj: dict) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Decode a wire tensor to (flat f32 array, shape). Does not reject NaN."""
    if not isinstance(obj, dict):
        raise ProtocolError("tensor field must be an object")
    if obj.get("dtype") != "f32le":
        raise ProtocolError(f"unsupported tensor dtype {obj.get('dtype')!r}")
    try:
        raw = base64.b64decode(obj["data"], validate=True)
    except Exception as exc:
        raise ProtocolError(f"bad tensor payload: {exc}")
    shape = tuple(int(s) for s in obj.get("shape", []))
    if len(raw) % 4 != 0:
        raise ProtocolError(f"tensor payload of {len(raw)} bytes is not f32-aligned")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)
    expected = int(np.prod(shape)) if shape else values.size
    if expected != values.size:
        raise ProtocolError(f"shape {shape} does not match payload of {values.size} floats")
    return values, shape


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------

class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}")
        self._file = self._sock.makefile("rb")

    def send_line(self, line: bytes) -> None:
        try:
            self._sock.sendall(line + b"\n")
        except OSError as exc:
            raise TransportError(f"send failed: {exc}")

    def recv_line(self, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        try:
            line = self._file.readline()
        except socket.timeout:
            raise TimeoutError(f"no response within {timeout} s")
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}")
        if not line:
            raise TransportError("connection closed by adapter")
        return line.rstrip(b"\n")

    def close(self) -> None:
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass


class _StdioTransport:
    """Adapter launched as a subprocess; frames travel over its stdio."""

    def __init__(self, command: List[str]):
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise TransportError(f"cannot launch adapter {command!r}: {exc}")
        self._lines: "queue.Queue[Optional[bytes]]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line.rstrip(b"\n"))
        self._lines.put(None)

    def send_line(self, line: bytes) -> None:
        if self._proc.poll() is not None:
            raise TransportError("adapter process has exited")
        try:
            self._proc.stdin.write(line + b"\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"send failed: {exc}")

    def recv_line(self, timeout: float) -> bytes:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no response within {timeout} s")
        if line is None:
            raise TransportError("adapter closed its output")
        return line

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()


# ---------------------------------------------------------------------------
# Connection
# ---------------------------------------------------------------------------

class AdapterConnection:
    """One protocol session with one in-flight request at a time."""

    def __init__(self, transport, timeout: Optional[float] = None):
        self._transport = transport
        self.timeout = default_timeout() if timeout is None else timeout
        self._seq = 0
        self._lock = threading.Lock()
        self.hello_info: dict = {}

    @classmethod
    def connect_tcp(cls, address: str, timeout: Optional[float] = None) -> "AdapterConnection":
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise TransportError(f"TCP address must be HOST:PORT, got {address!r}")
        conn = cls(_TcpTransport(host, int(port), timeout or default_timeout()), timeout)
        conn.handshake()
        return conn

    @classmethod
    def launch(cls, command: str, timeout: Optional[float] = None) -> "AdapterConnection":
        conn = cls(_StdioTransport(shlex.split(command)), timeout)
        conn.handshake()
        return conn

    @classmethod
    def open(cls, target: str, timeout: Optional[float] = None) -> "AdapterConnection":
        """target is either "external:HOST:PORT" or "cmd:<command line>"."""
        if target.startswith("external:"):
            return cls.connect_tcp(target[len("external:"):], timeout)
        if target.startswith("cmd:"):
            return cls.launch(target[len("cmd:"):], timeout)
        raise TransportError(f"adapter target must start with external: or cmd:, got {target!r}")

    def _send(self, frame: dict) -> None:
        self._transport.send_line(json.dumps(frame, sort_keys=True).encode("utf-8"))

    def _recv(self) -> dict:
        line = self._transport.recv_line(self.timeout)
        try:
            obj = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"malformed frame from adapter: {exc}")
        if not isinstance(obj, dict) or "type" not in obj:
            raise ProtocolError("adapter frame is not an object with a type")
        return obj

    def handshake(self) -> dict:
        with self._lock:
            self._send({"type": "hello", "version": PROTOCOL_VERSION})
            ack = self._recv()
        if ack.get("type") != "hello_ack":
            raise ProtocolError(f"expected hello_ack, got {ack.get('type')!r}")
        if ack.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(f"adapter speaks {ack.get('version')!r}, need {PROTOCOL_VERSION}")
        self.hello_info = ack
        return ack

    def register_condition(
        self, condition_id: str, text: Optional[str] = None, embedding=None
    ) -> None:
        frame: dict = {"type": "register_condition", "id": condition_id}
        if text is not None:
            frame["text"] = text
        elif embedding is not None:
            frame["embedding"] = [float(v) for v in np.asarray(embedding).reshape(-1)]
        else:
            raise ProtocolError("register_condition needs text or embedding")
        with self._lock:
            self._send(frame)

    def _request(self, frame: dict, expected: str) -> dict:
        with self._lock:
            self._seq += 1
            request_id = self._seq
            frame = dict(frame, request_id=request_id)
            self._send(frame)
            reply = self._recv()
        if reply.get("request_id") != request_id:
            raise ProtocolError(
                f"response id {reply.get('request_id')} does not match request {request_id}"
            )
        if reply.get("type") == "error":
            raise RemoteFailure(str(reply.get("message", "adapter error")))
        if reply.get("type") != expected:
            raise ProtocolError(f"expected {expected}, got {reply.get('type')!r}")
        return reply

    def epsilon(
        self,
        values: np.ndarray,
        shape: Sequence[int],
        condition_id: str,
        step_kind: str,
        step_value: float,
        cfg_enabled: bool = False,
        guidance: float = 0.0,
    ) -> np.ndarray:
        frame = {
            "type": "epsilon",
            "tensor": encode_tensor(values, shape),
            "condition_id": condition_id,
            "step": {"kind": step_kind, "value": float(step_value)},
            "cfg": {"enabled": bool(cfg_enabled), "guidance": float(guidance)},
        }
        reply = self._request(frame, "epsilon_result")
        out, out_shape = decode_tensor(reply.get("tensor"))
        if out_shape != tuple(int(s) for s in shape):
            raise ProtocolError(f"epsilon shape {out_shape} does not match request {tuple(shape)}")
        return out

    def align(self, values: np.ndarray, shape: Sequence[int], text: str) -> Tuple[float, float]:
        frame = {"type": "align", "tensor": encode_tensor(values, shape), "text": text}
        reply = self._request(frame, "align_result")
        score = reply.get("score")
        a_max = reply.get("a_max", 1.0)
        if not isinstance(score, (int, float)) or not np.isfinite(score):
            raise ProtocolError(f"align score must be finite, got {score!r}")
        if not isinstance(a_max, (int, float)) or not np.isfinite(a_max) or a_max <= 0:
            raise ProtocolError(f"a_max must be positive and finite, got {a_max!r}")
        return float(score), float(a_max)

    def distance(
        self, a: np.ndarray, shape_a: Sequence[int], b: np.ndarray, shape_b: Sequence[int]
    ) -> float:
        frame = {
            "type": "distance",
            "tensor_a": encode_tensor(a, shape_a),
            "tensor_b": encode_tensor(b, shape_b),
        }
        reply = self._request(frame, "distance_result")
        score = reply.get("score")
        if not isinstance(score, (int, float)) or not np.isfinite(score):
            raise ProtocolError(f"distance score must be finite, got {score!r}")
        return float(score)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ConnectionPool:
    """A fixed-size pool of adapter connections for parallel scoring."""

    def __init__(self, target: str, size: int = 1, timeout: Optional[float] = None):
        if size < 1:
            raise ProtocolError("pool size must be >= 1")
        self._target = target
        self._timeout = timeout
        self._free: "queue.Queue[AdapterConnection]" = queue.Queue()
        self._all: List[AdapterConnection] = []
        for _ in range(size):
            conn = AdapterConnection.open(target, timeout)
            self._all.append(conn)
            self._free.put(conn)

    def borrow(self):
        pool = self

        class _Lease:
            def __enter__(self_inner):
                self_inner.conn = pool._free.get()
                return self_inner.conn

            def __exit__(self_inner, *exc):
                pool._free.put(self_inner.conn)

        return _Lease()

    def close(self) -> None:
        for conn in self._all:
            conn.close()
