"""Minimal wire-protocol v1 server used as a test fixture.

Thresholds the channel-mean intensity at --threshold. Misbehavior knobs
(--protocol, --lifo, --slow, --fail-id) let the gateway tests exercise
error paths; --peak-file records the largest number of outstanding
requests the server ever observed, for the in-flight cap test. Requests
are read eagerly and answered on worker threads, so the peak reflects the
client's throttling, not the server's.
"""

import argparse
import base64
import json
import socket
import sys
import threading
import time


def predict(req, threshold):
    w, h, c = req["width"], req["height"], req["channels"]
    pixels = base64.b64decode(req["pixels"])
    if len(pixels) != w * h * c:
        raise ValueError(f"pixel payload is {len(pixels)} bytes, expected {w * h * c}")
    mask = bytearray(w * h)
    for i in range(w * h):
        if c == 1:
            inten = pixels[i]
        else:
            s = pixels[3 * i] + pixels[3 * i + 1] + pixels[3 * i + 2]
            inten = int(s / 3 + 0.5)
        mask[i] = 1 if inten >= threshold else 0
    return base64.b64encode(bytes(mask)).decode("ascii")


def serve(rfile, wfile, args):
    write_lock = threading.Lock()

    def send(obj):
        with write_lock:
            wfile.write((json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8"))
            wfile.flush()

    send({"hello": True, "protocol": args.protocol, "model": args.model, "batch": args.batch})

    state = {"outstanding": 0, "peak": 0}
    state_lock = threading.Lock()
    workers = []
    pending = []

    def answer(req):
        if args.slow:
            time.sleep(args.slow)
        rid = req.get("id")
        try:
            if rid == args.fail_id:
                resp = {"id": rid, "error": "injected failure"}
            else:
                mask = predict(req, args.threshold)
                if args.truncate_mask:
                    import base64 as b64

                    mask = b64.b64encode(b64.b64decode(mask)[:-2]).decode()
                resp = {"id": rid, "mask": mask}
        except Exception as e:
            resp = {"id": rid, "error": str(e)}
        with state_lock:
            state["outstanding"] -= 1
        send(resp)

    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError as e:
            send({"id": None, "error": f"malformed request: {e}"})
            continue
        if req.get("bye") is True:
            break
        with state_lock:
            state["outstanding"] += 1
            state["peak"] = max(state["peak"], state["outstanding"])
        if args.lifo:
            pending.append(req)
            if len(pending) >= args.lifo:
                for r in reversed(pending):
                    answer(r)
                pending.clear()
        else:
            t = threading.Thread(target=answer, args=(req,))
            t.start()
            workers.append(t)

    for r in reversed(pending):
        answer(r)
    for t in workers:
        t.join()
    if args.peak_file:
        with open(args.peak_file, "w") as f:
            f.write(str(state["peak"]))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="wire-test-threshold")
    ap.add_argument("--threshold", type=int, default=128)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--protocol", type=int, default=1)
    ap.add_argument("--lifo", type=int, default=0, help="buffer N requests, answer newest first")
    ap.add_argument("--slow", type=float, default=0.0, help="seconds of sleep per request")
    ap.add_argument("--fail-id", type=int, default=None)
    ap.add_argument("--truncate-mask", action="store_true")
    ap.add_argument("--peak-file", default=None)
    ap.add_argument("--tcp", type=int, default=None, help="serve one connection on this port")
    ap.add_argument("--port-file", default=None, help="write the bound port here (with --tcp)")
    args = ap.parse_args()

    if args.tcp is not None:
        srv = socket.socket()
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind(("127.0.0.1", args.tcp))
        srv.listen(1)
        if args.port_file:
            with open(args.port_file, "w") as f:
                f.write(str(srv.getsockname()[1]))
        conn, _ = srv.accept()
        with conn.makefile("rb") as rfile, conn.makefile("wb") as wfile:
            serve(rfile, wfile, args)
        conn.close()
        srv.close()
    else:
        serve(sys.stdin.buffer, sys.stdout.buffer, args)


if __name__ == "__main__":
    main()
