"""Adapter entry point: serve the wire protocol on stdio or TCP.

    slider-adapter --mode mock --transport stdio
    slider-adapter --mode mock --transport tcp:9631
    slider-adapter --mode real --model CompVis/stable-diffusion-v1-4

Mock-mode geometry comes from flags so conformance harnesses and
dual-path tests can pin the exact analytic model being served. Each
connection gets its own session (its own condition registry); requests
on a connection are answered strictly in order.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys

from .mock import MockModel
from .session import AdapterSession


def _parse_vector(text):
    if text is None:
        return None
    return [float(v) for v in text.split(",") if v.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slider-adapter", description=__doc__)
    parser.add_argument("--mode", choices=("mock", "real"), default="mock")
    parser.add_argument("--transport", default="stdio", help="stdio | tcp:PORT")
    parser.add_argument("--model", help="pipeline id for real mode")
    parser.add_argument("--aligner", help="alignment model id for real mode")
    parser.add_argument("--perceptual", help="perceptual model id for real mode")
    parser.add_argument("--schedule-steps", type=int, default=50)
    parser.add_argument("--a-max", type=float, default=1.0)
    # Mock geometry.
    parser.add_argument("--dimension", type=int, default=4)
    parser.add_argument("--data-std", type=float, default=1.0)
    parser.add_argument("--base-mean", help="comma-separated vector")
    parser.add_argument("--direction", help="comma-separated vector")
    parser.add_argument("--uncond-mean", help="comma-separated vector")
    parser.add_argument("--base-prompt")
    parser.add_argument("--positive-prompt")
    parser.add_argument("--negative-prompt")
    parser.add_argument("--align-table", help="JSON object mapping text to score")
    parser.add_argument("--align-default", type=float, default=0.25)
    return parser


def make_model(args):
    if args.mode == "real":
        from .real import RealModel

        if not args.model:
            raise SystemExit("real mode requires --model")
        return RealModel(
            args.model,
            aligner_id=args.aligner,
            perceptual_id=args.perceptual,
            schedule_steps=args.schedule_steps,
            a_max=args.a_max,
        )
    import numpy as np

    base = _parse_vector(args.base_mean)
    direction = _parse_vector(args.direction)
    dimension = len(base) if base is not None else args.dimension
    base_arr = (
        np.zeros(dimension, dtype=np.float32)
        if base is None
        else np.asarray(base, dtype=np.float32)
    )
    prompt_means = {}
    if direction is not None and args.base_prompt:
        v = np.asarray(direction, dtype=np.float32)
        prompt_means[args.base_prompt] = base_arr
        if args.positive_prompt:
            prompt_means[args.positive_prompt] = base_arr + v
        if args.negative_prompt:
            prompt_means[args.negative_prompt] = base_arr - v
    return MockModel(
        dimension=dimension,
        data_std=args.data_std,
        base_mean=base_arr,
        direction=direction,
        uncond_mean=_parse_vector(args.uncond_mean),
        prompt_means=prompt_means,
        align_table=json.loads(args.align_table) if args.align_table else None,
        align_default=args.align_default,
        a_max=args.a_max,
        schedule_steps=args.schedule_steps,
    )


def serve_stdio(make_session) -> None:
    session = make_session()
    for raw in sys.stdin.buffer:
        line = raw.decode("utf-8", errors="replace").rstrip("\n")
        if not line.strip():
            continue
        reply = session.handle_line(line)
        if reply is not None:
            sys.stdout.write(reply + "\n")
            sys.stdout.flush()


def serve_tcp(make_session, port: int) -> None:
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            session = make_session()
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace").rstrip("\n")
                if not line.strip():
                    continue
                reply = session.handle_line(line)
                if reply is not None:
                    self.wfile.write(reply.encode("utf-8") + b"\n")
                    self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server(("127.0.0.1", port), Handler) as server:
        actual_port = server.server_address[1]
        print(f"listening on 127.0.0.1:{actual_port}", file=sys.stderr, flush=True)
        server.serve_forever()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    model = make_model(args)

    def make_session():
        return AdapterSession(model)

    if args.transport == "stdio":
        serve_stdio(make_session)
        return 0
    if args.transport.startswith("tcp:"):
        serve_tcp(make_session, int(args.transport[4:]))
        return 0
    raise SystemExit(f"unknown transport {args.transport!r}")


if __name__ == "__main__":
    main()
