"""Client side of the model wire protocol: drive any externally hosted
segmentation model as a black box over newline-delimited JSON.

Protocol v1 framing (bit-exact): UTF-8 JSON objects separated by "\\n".
The server speaks first:

    {"hello": true, "protocol": 1, "model": "<name>", "batch": <int>}

then answers each request

    {"id": <int>, "width": W, "height": H, "channels": C, "pixels": "<b64>"}

with either {"id": <int>, "mask": "<b64 of one 0/1 byte per pixel>"} or
{"id": <int>, "error": "<text>"}. The client ends the session with
{"bye": true} and the server closes the stream.

The session multiplexes concurrent predict() calls onto the one byte
stream: a writer lock serializes requests, a reader thread dispatches
responses by id, and a semaphore keeps in-flight requests at or below the
negotiated limit.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import GatewayError, GatewayTimeout
from .imaging import Image, Mask
from .segmenters import Segmenter

__all__ = [
    "SubprocessTransport",
    "TcpTransport",
    "GatewayConfig",
    "GatewaySession",
    "connect",
    "CheckResult",
    "run_conformance",
    "PROTOCOL_VERSION",
]

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class SubprocessTransport:
    """Spawn the model server as a child process and talk over its pipes."""

    command: str


@dataclass(frozen=True)
class TcpTransport:
    host: str
    port: int


@dataclass(frozen=True)
class GatewayConfig:
    transport: SubprocessTransport | TcpTransport
    request_timeout: float = 30.0
    max_in_flight: int = 8

    def __post_init__(self):
        if self.request_timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.request_timeout}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


# ---------------------------------------------------------------------------
# Byte stream plumbing
# ---------------------------------------------------------------------------

class _Stream:
    """One connected byte stream with a background line reader."""

    def __init__(self, read_file, write_file, proc: subprocess.Popen | None = None,
                 sock: socket.socket | None = None):
        self._read_file = read_file
        self._write_file = write_file
        self._proc = proc
        self._sock = sock
        self._lines: queue.Queue[bytes | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        try:
            for line in self._read_file:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)  # EOF marker

    def read_line(self, timeout: float) -> bytes | None:
        """Next line, or None on EOF; raises GatewayTimeout when nothing
        arrives in time."""
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            raise GatewayTimeout(f"no data from model server within {timeout}s") from None

    def write_line(self, data: bytes) -> None:
        try:
            self._write_file.write(data)
            self._write_file.flush()
        except (OSError, ValueError, BrokenPipeError) as e:
            raise GatewayError(f"failed to write to model server: {e}") from e

    def close(self):
        for f in (self._write_file, self._read_file):
            try:
                f.close()
            except OSError:
                pass
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


def _open_stream(transport: SubprocessTransport | TcpTransport) -> _Stream:
    if isinstance(transport, SubprocessTransport):
        try:
            proc = subprocess.Popen(
                shlex.split(transport.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as e:
            raise GatewayError(f"failed to launch model server: {e}") from e
        return _Stream(proc.stdout, proc.stdin, proc=proc)
    if isinstance(transport, TcpTransport):
        try:
            sock = socket.create_connection((transport.host, transport.port), timeout=30)
        except OSError as e:
            raise GatewayError(
                f"failed to connect to {transport.host}:{transport.port}: {e}"
            ) from e
        sock.settimeout(None)
        return _Stream(sock.makefile("rb"), sock.makefile("wb"), sock=sock)
    raise GatewayError(f"unknown transport: {transport!r}")


def _parse_hello(line: bytes | None) -> tuple[str, int, int]:
    """Validate the server hello; returns (model, protocol, batch)."""
    if line is None:
        raise GatewayError("model server closed the stream before saying hello")
    try:
        hello = json.loads(line)
    except json.JSONDecodeError as e:
        raise GatewayError(f"malformed hello line: {e}") from e
    if not isinstance(hello, dict) or hello.get("hello") is not True:
        raise GatewayError(f"first server line is not a hello: {hello!r}")
    protocol = hello.get("protocol")
    if protocol != PROTOCOL_VERSION:
        raise GatewayError(
            f"protocol version mismatch: server speaks {protocol!r}, "
            f"client speaks {PROTOCOL_VERSION}"
        )
    model = hello.get("model")
    batch = hello.get("batch")
    if not isinstance(model, str) or not model:
        raise GatewayError(f"hello carries no model identity: {hello!r}")
    if not isinstance(batch, int) or batch < 1:
        raise GatewayError(f"hello carries an invalid batch limit: {batch!r}")
    return model, protocol, batch


# ---------------------------------------------------------------------------
# Session
# ---------------------------------------------------------------------------

@dataclass
class _Pending:
    event: threading.Event = field(default_factory=threading.Event)
    response: dict | None = None


class GatewaySession:
    """A negotiated connection to one model server.

    predict() may be called from any number of threads; requests carry
    monotonically increasing ids and responses are routed back by id, so
    out-of-order completion is fine. Failures surface as typed errors,
    never silent retries.
    """

    def __init__(self, config: GatewayConfig):
        self._config = config
        self._stream = _open_stream(config.transport)
        try:
            model, protocol, batch = _parse_hello(
                self._stream.read_line(config.request_timeout)
            )
        except GatewayError:
            self._stream.close()
            raise
        self.model_id = model
        self.protocol = protocol
        self.max_in_flight = min(config.max_in_flight, batch)
        self._slots = threading.Semaphore(self.max_in_flight)
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._next_id = 0
        self._dead: str | None = None
        self._closed = False
        self._dispatcher = threading.Thread(target=self._dispatch, daemon=True)
        self._dispatcher.start()

    # -- response routing ---------------------------------------------------

    def _dispatch(self):
        while True:
            try:
                line = self._stream._lines.get()
            except Exception:
                line = None
            if line is None:
                self._fail_all("model server closed the stream")
                return
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                self._fail_all(f"unparseable server line: {line[:120]!r}")
                return
            rid = msg.get("id") if isinstance(msg, dict) else None
            with self._state_lock:
                pending = self._pending.pop(rid, None)
            if pending is not None:
                pending.response = msg
                pending.event.set()
            # responses for abandoned (timed-out) ids are dropped

    def _fail_all(self, reason: str):
        with self._state_lock:
            if self._dead is None:
                self._dead = reason
            pending = list(self._pending.values())
            self._pending.clear()
        for p in pending:
            p.event.set()

    # -- public API -----------------------------------------------------------

    def predict(self, image: Image) -> Mask:
        """One segmentation request; blocks until the response arrives."""
        self._slots.acquire()
        try:
            with self._state_lock:
                if self._dead is not None:
                    raise GatewayError(f"session is dead: {self._dead}")
                rid = self._next_id
                self._next_id += 1
                pending = _Pending()
                self._pending[rid] = pending
            request = {
                "id": rid,
                "width": image.width,
                "height": image.height,
                "channels": image.channels,
                "pixels": base64.b64encode(image.data.tobytes()).decode("ascii"),
            }
            payload = (json.dumps(request, separators=(",", ":")) + "\n").encode("utf-8")
            with self._write_lock:
                self._stream.write_line(payload)
            if not pending.event.wait(self._config.request_timeout):
                with self._state_lock:
                    self._pending.pop(rid, None)
                raise GatewayTimeout(
                    f"request {rid} timed out after {self._config.request_timeout}s"
                )
            if pending.response is None:
                raise GatewayError(f"request {rid} aborted: {self._dead}")
            return self._decode_mask(rid, pending.response, image)
        finally:
            self._slots.release()

    def _decode_mask(self, rid: int, msg: dict, image: Image) -> Mask:
        if "error" in msg and msg["error"] is not None:
            raise GatewayError(f"request {rid}: server reported error: {msg['error']}")
        mask_b64 = msg.get("mask")
        if not isinstance(mask_b64, str):
            raise GatewayError(f"request {rid}: response carries no mask")
        try:
            raw = base64.b64decode(mask_b64, validate=True)
        except Exception as e:
            raise GatewayError(f"request {rid}: undecodable mask payload: {e}") from e
        expected = image.width * image.height
        if len(raw) != expected:
            raise GatewayError(
                f"request {rid}: mask payload is {len(raw)} bytes, expected {expected}"
            )
        arr = np.frombuffer(raw, dtype=np.uint8)
        # thresholding someone else's sloppy labels silently would hide bugs
        if arr.max(initial=0) > 1:
            raise GatewayError(f"request {rid}: mask bytes outside {{0,1}}")
        return Mask(arr.reshape(image.height, image.width).astype(bool))

    def segmenter(self) -> Segmenter:
        return Segmenter(
            identity=self.model_id, predict=self.predict, max_in_flight=self.max_in_flight
        )

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            with self._write_lock:
                self._stream.write_line(b'{"bye":true}\n')
        except GatewayError:
            pass
        self._fail_all("session closed")
        self._stream.close()

    def __enter__(self) -> "GatewaySession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect(config: GatewayConfig) -> GatewaySession:
    """Open a session: transport up, hello validated, limits negotiated."""
    return GatewaySession(config)


# ---------------------------------------------------------------------------
# Server conformance suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _raw_request(stream: _Stream, obj: dict, timeout: float) -> dict | None:
    stream.write_line((json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8"))
    line = stream.read_line(timeout)
    return None if line is None else json.loads(line)


def _test_image(width: int = 16, height: int = 16) -> Image:
    ramp = np.arange(width * height, dtype=np.uint32).reshape(height, width) % 256
    return Image(ramp.astype(np.uint8)[:, :, np.newaxis])


def _image_request(rid: int, image: Image) -> dict:
    return {
        "id": rid,
        "width": image.width,
        "height": image.height,
        "channels": image.channels,
        "pixels": base64.b64encode(image.data.tobytes()).decode("ascii"),
    }


def run_conformance(config: GatewayConfig) -> list[CheckResult]:
    """Exercise a server implementation against the v1 protocol contract.

    Each check opens a fresh connection. Returns one result per check; a
    fully conformant server passes all of them.
    """
    timeout = config.request_timeout
    results: list[CheckResult] = []

    def check(name: str, fn):
        stream = _open_stream(config.transport)
        try:
            hello_line = stream.read_line(timeout)
            fn(stream, hello_line)
            results.append(CheckResult(name, True))
        except Exception as e:
            results.append(CheckResult(name, False, detail=f"{type(e).__name__}: {e}"))
        finally:
            stream.close()

    def c_hello(stream, hello_line):
        _parse_hello(hello_line)

    def c_roundtrip(stream, hello_line):
        _parse_hello(hello_line)
        img = _test_image()
        resp = _raw_request(stream, _image_request(0, img), timeout)
        assert resp is not None and resp.get("id") == 0, f"bad response: {resp!r}"
        raw = base64.b64decode(resp["mask"])
        assert len(raw) == img.width * img.height, f"mask length {len(raw)}"
        assert max(raw, default=0) <= 1, "mask bytes outside {0,1}"

    def c_determinism(stream, hello_line):
        _parse_hello(hello_line)
        img = _test_image()
        a = _raw_request(stream, _image_request(0, img), timeout)
        b = _raw_request(stream, _image_request(1, img), timeout)
        assert a["mask"] == b["mask"], "same image produced different masks"

    def c_id_discipline(stream, hello_line):
        _, _, batch = _parse_hello(hello_line)
        img = _test_image()
        n = min(2, batch)
        for rid in range(n):
            stream.write_line(
                (json.dumps(_image_request(rid, img), separators=(",", ":")) + "\n").encode()
            )
        seen = set()
        for _ in range(n):
            line = stream.read_line(timeout)
            assert line is not None, "stream closed mid-batch"
            rid = json.loads(line).get("id")
            assert rid in range(n) and rid not in seen, f"bad/duplicate id {rid!r}"
            seen.add(rid)

    def c_malformed_line(stream, hello_line):
        _parse_hello(hello_line)
        stream.write_line(b"this is not json\n")
        resp = json.loads(stream.read_line(timeout))
        assert resp.get("id") is None and resp.get("error"), f"no null-id error: {resp!r}"
        # connection must survive
        follow = _raw_request(stream, _image_request(7, _test_image()), timeout)
        assert follow is not None and follow.get("id") == 7, "connection died after bad line"

    def c_bye(stream, hello_line):
        _parse_hello(hello_line)
        stream.write_line(b'{"bye":true}\n')
        assert stream.read_line(timeout) is None, "server did not close after bye"

    check("hello_wellformed", c_hello)
    check("predict_roundtrip", c_roundtrip)
    check("deterministic_predictions", c_determinism)
    check("request_id_discipline", c_id_discipline)
    check("malformed_line_survival", c_malformed_line)
    check("clean_shutdown_on_bye", c_bye)
    return results
