"""Adapter conformance exercised over raw newline-delimited JSON.

These tests speak the wire protocol directly against a subprocess (or a
TCP socket), with no engine-side client code, so they pin the adapter's
side of the contract independently.
"""

import base64
import json
import re
import socket
import subprocess
import sys

import numpy as np
import pytest


def encode_tensor(values):
    arr = np.ascontiguousarray(values, dtype=np.float32).reshape(-1)
    return {
        "shape": [arr.size],
        "dtype": "f32le",
        "data": base64.b64encode(arr.astype("<f4").tobytes()).decode(),
    }


def decode_tensor(obj):
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f4").astype(np.float32, copy=True)


class AdapterProc:
    def __init__(self, *extra_args):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "slider_adapter", "--mode", "mock",
             "--transport", "stdio", *extra_args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )

    def send(self, frame):
        self.proc.stdin.write(json.dumps(frame) + "\n")
        self.proc.stdin.flush()

    def send_raw(self, line):
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def recv(self):
        line = self.proc.stdout.readline()
        assert line, "adapter closed its output"
        return json.loads(line)

    def rpc(self, frame):
        self.send(frame)
        return self.recv()

    def hello(self):
        return self.rpc({"type": "hello", "version": "fsl/1"})

    def close(self):
        self.proc.stdin.close()
        self.proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def test_handshake_declares_contract():
    with AdapterProc("--dimension", "3") as adapter:
        ack = adapter.hello()
        assert ack["type"] == "hello_ack"
        assert ack["version"] == "fsl/1"
        assert ack["uncond_prompt"] == ""
        assert ack["latent_shape"] == [3]


def test_handshake_rejects_wrong_version():
    with AdapterProc() as adapter:
        reply = adapter.rpc({"type": "hello", "version": "fsl/999"})
        assert reply["type"] == "error"


def test_epsilon_matches_analytic_formula_sigma_form():
    with AdapterProc("--dimension", "2", "--data-std", "1.0") as adapter:
        adapter.hello()
        adapter.send({"type": "register_condition", "id": "c", "text": "anything"})
        x = np.array([3.0, -1.0], dtype=np.float32)
        reply = adapter.rpc(
            {
                "type": "epsilon",
                "request_id": 1,
                "tensor": encode_tensor(x),
                "condition_id": "c",
                "step": {"kind": "sigma", "value": 2.0},
                "cfg": {"enabled": False, "guidance": 0.0},
            }
        )
        assert reply["type"] == "epsilon_result" and reply["request_id"] == 1
        # Unbound prompt conditions on the base mean (zeros):
        # eps = (x - 0) * (sigma / (std^2 + sigma^2)) = x * 0.4.
        expected = (x * np.float32(2.0 / 5.0)).astype(np.float32)
        assert decode_tensor(reply["tensor"]).tobytes() == expected.tobytes()


def test_epsilon_t_form_uses_vp_schedule():
    with AdapterProc("--dimension", "2", "--schedule-steps", "50") as adapter:
        adapter.hello()
        adapter.send({"type": "register_condition", "id": "c", "text": "p"})
        x = np.array([1.0, 2.0], dtype=np.float32)
        reply = adapter.rpc(
            {
                "type": "epsilon",
                "request_id": 1,
                "tensor": encode_tensor(x),
                "condition_id": "c",
                "step": {"kind": "t", "value": 49.0},
                "cfg": {"enabled": False, "guidance": 0.0},
            }
        )
        betas = np.linspace(1e-4, 0.02, 50)
        alpha_bar = np.cumprod(1.0 - betas)
        alpha, sigma = np.sqrt(alpha_bar[49]), np.sqrt(1 - alpha_bar[49])
        s2 = alpha * alpha + sigma * sigma  # data_std = 1
        expected = ((x - np.float32(alpha) * np.zeros(2, dtype=np.float32))
                    * np.float32(sigma / s2)).astype(np.float32)
        assert decode_tensor(reply["tensor"]).tobytes() == expected.tobytes()


def test_prompt_bound_means_and_cfg():
    with AdapterProc(
        "--base-mean", "0,0", "--direction", "0.5,0",
        "--base-prompt", "base", "--positive-prompt", "pos",
        "--negative-prompt", "neg", "--uncond-mean", "1,1",
    ) as adapter:
        adapter.hello()
        for cid, text in (("b", "base"), ("p", "pos"), ("n", "neg")):
            adapter.send({"type": "register_condition", "id": cid, "text": text})
        x = np.array([2.0, 2.0], dtype=np.float32)

        def eps(cid, cfg=False, guidance=0.0):
            reply = adapter.rpc(
                {
                    "type": "epsilon",
                    "request_id": 99,
                    "tensor": encode_tensor(x),
                    "condition_id": cid,
                    "step": {"kind": "sigma", "value": 1.0},
                    "cfg": {"enabled": cfg, "guidance": guidance},
                }
            )
            return decode_tensor(reply["tensor"])

        coeff = np.float32(1.0 / 2.0)  # sigma / (std^2 + sigma^2)
        np.testing.assert_array_equal(eps("b"), (x - 0.0) * coeff)
        np.testing.assert_array_equal(
            eps("p"), (x - np.array([0.5, 0.0], dtype=np.float32)) * coeff
        )
        np.testing.assert_array_equal(
            eps("n"), (x - np.array([-0.5, 0.0], dtype=np.float32)) * coeff
        )
        # CFG blends toward the text prediction past the uncond mean.
        uncond = (x - np.array([1.0, 1.0], dtype=np.float32)) * coeff
        text = (x - np.array([0.5, 0.0], dtype=np.float32)) * coeff
        expected = uncond + 2.0 * (text - uncond)
        np.testing.assert_allclose(eps("p", cfg=True, guidance=2.0), expected, atol=1e-7)


def test_echo_condition_roundtrips_special_floats():
    with AdapterProc() as adapter:
        adapter.hello()
        values = np.array([0.0, -0.0, 1e-45, -1e-45], dtype=np.float32)
        reply = adapter.rpc(
            {
                "type": "epsilon",
                "request_id": 5,
                "tensor": encode_tensor(values),
                "condition_id": "__echo__",
                "step": {"kind": "sigma", "value": 1.0},
                "cfg": {"enabled": False, "guidance": 0.0},
            }
        )
        assert decode_tensor(reply["tensor"]).tobytes() == values.tobytes()


def test_nan_payload_rejected_with_error_frame():
    with AdapterProc() as adapter:
        adapter.hello()
        values = np.array([1.0, np.nan, 2.0, 3.0], dtype=np.float32)
        reply = adapter.rpc(
            {
                "type": "epsilon",
                "request_id": 6,
                "tensor": encode_tensor(values),
                "condition_id": "__echo__",
                "step": {"kind": "sigma", "value": 1.0},
                "cfg": {"enabled": False, "guidance": 0.0},
            }
        )
        assert reply["type"] == "error"
        assert reply["request_id"] == 6


def test_unregistered_condition_and_session_survival():
    with AdapterProc() as adapter:
        adapter.hello()
        reply = adapter.rpc(
            {
                "type": "epsilon",
                "request_id": 7,
                "tensor": encode_tensor(np.zeros(4, dtype=np.float32)),
                "condition_id": "ghost",
                "step": {"kind": "sigma", "value": 1.0},
                "cfg": {"enabled": False, "guidance": 0.0},
            }
        )
        assert reply["type"] == "error" and "ghost" in reply["message"]
        # Malformed input produces an error frame, not a dead session.
        adapter.send_raw("this is not json")
        assert adapter.recv()["type"] == "error"
        adapter.send({"type": "mystery"})
        assert adapter.recv()["type"] == "error"
        # The session still answers well-formed frames afterwards.
        assert adapter.rpc(
            {
                "type": "distance",
                "request_id": 8,
                "tensor_a": encode_tensor(np.ones(2, dtype=np.float32)),
                "tensor_b": encode_tensor(np.ones(2, dtype=np.float32)),
            }
        )["score"] == 0.0


def test_align_uses_fixed_table():
    table = json.dumps({"a burning candle": 0.75})
    with AdapterProc("--align-table", table, "--align-default", "0.1",
                     "--a-max", "2.0") as adapter:
        adapter.hello()
        reply = adapter.rpc(
            {
                "type": "align",
                "request_id": 9,
                "tensor": encode_tensor(np.zeros(4, dtype=np.float32)),
                "text": "a burning candle",
            }
        )
        assert reply["score"] == 0.75 and reply["a_max"] == 2.0
        reply = adapter.rpc(
            {
                "type": "align",
                "request_id": 10,
                "tensor": encode_tensor(np.zeros(4, dtype=np.float32)),
                "text": "unlisted prompt",
            }
        )
        assert reply["score"] == 0.1


def test_distance_is_normalized_euclidean():
    with AdapterProc() as adapter:
        adapter.hello()
        a = np.array([0.0, 0.0], dtype=np.float32)
        b = np.array([3.0, 4.0], dtype=np.float32)
        reply = adapter.rpc(
            {
                "type": "distance",
                "request_id": 11,
                "tensor_a": encode_tensor(a),
                "tensor_b": encode_tensor(b),
            }
        )
        assert reply["score"] == pytest.approx(5.0 / np.sqrt(2.0))


def test_interleaved_requests_answered_in_order():
    with AdapterProc() as adapter:
        adapter.hello()
        for rid in (21, 22, 23):
            adapter.send(
                {
                    "type": "epsilon",
                    "request_id": rid,
                    "tensor": encode_tensor(np.full(2, float(rid), dtype=np.float32)),
                    "condition_id": "__echo__",
                    "step": {"kind": "sigma", "value": 1.0},
                    "cfg": {"enabled": False, "guidance": 0.0},
                }
            )
        replies = [adapter.recv() for _ in range(3)]
        assert [r["request_id"] for r in replies] == [21, 22, 23]
        assert [decode_tensor(r["tensor"])[0] for r in replies] == [21.0, 22.0, 23.0]


def test_embedding_registration_conditions_on_embedding():
    with AdapterProc("--dimension", "2") as adapter:
        adapter.hello()
        adapter.send(
            {"type": "register_condition", "id": "e", "embedding": [1.0, -1.0]}
        )
        x = np.array([2.0, 2.0], dtype=np.float32)
        reply = adapter.rpc(
            {
                "type": "epsilon",
                "request_id": 30,
                "tensor": encode_tensor(x),
                "condition_id": "e",
                "step": {"kind": "sigma", "value": 1.0},
                "cfg": {"enabled": False, "guidance": 0.0},
            }
        )
        expected = ((x - np.array([1.0, -1.0], dtype=np.float32)) * np.float32(0.5)).astype(
            np.float32
        )
        assert decode_tensor(reply["tensor"]).tobytes() == expected.tobytes()


def test_tcp_transport():
    proc = subprocess.Popen(
        [sys.executable, "-m", "slider_adapter", "--mode", "mock",
         "--transport", "tcp:0", "--dimension", "2"],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        banner = proc.stderr.readline()
        match = re.search(r":(\d+)$", banner.strip())
        assert match, f"no port in banner {banner!r}"
        port = int(match.group(1))
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            fh = sock.makefile("rw")
            fh.write(json.dumps({"type": "hello", "version": "fsl/1"}) + "\n")
            fh.flush()
            ack = json.loads(fh.readline())
            assert ack["type"] == "hello_ack"
            assert ack["latent_shape"] == [2]
    finally:
        proc.terminate()
        proc.wait(timeout=5)
