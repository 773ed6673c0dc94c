"""Live session endpoint for the operator console.

Protocol (HTTP + JSON):
  GET  /state    latest snapshot: step, status, robot pose, committed action,
                 robot trail, per-particle region summaries, run metrics
  GET  /events   the same snapshots as a server-sent event stream
                 ("data: <snapshot json>" frames)
  POST /command  {"text": "..."}: ground a direction and fold it into the
                 next filter step; responds with the clause annotations
  POST /control  {"command": "run" | "pause" | "step" | "reset"}

Malformed requests get a 400 with a diagnostic body. The simulation loop
runs in a single session thread; handlers only read published snapshots and
append to an ordered operation queue, so concurrent readers always observe
identical step-stamped states.
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from wayfinder import policy as pol
from wayfinder import rbpf
from wayfinder.harness.runner import Runner, Scenario

_JSON = "application/json"


def world_summary(world) -> dict:
    """Static geometry block included in every snapshot so the console can
    draw the floor plan without a second endpoint."""
    return {
        "name": world.name,
        "regions": [{"id": r.id, "type": r.rtype, "rect": r.rect.as_list()}
                    for r in world.regions],
        "doorways": [{"a": d.a, "b": d.b,
                      "at": [float(d.at[0]), float(d.at[1])],
                      "width": float(d.width)}
                     for d in world.doorways],
        "start": list(world.start_pose),
        "goal_region": world.goal_region,
    }


def snapshot_of(runner: Runner, mode: str, seq: int,
                last_command=None) -> dict:
    action = None
    if runner.last_action is not None:
        a = runner.last_action
        action = {"kind": a.kind, "target": a.target,
                  "path": [int(n) for n in a.path]}
    return {
        "seq": seq,
        "step": runner.belief.step,
        "status": runner.status,
        "mode": mode,
        "pose": [float(v) for v in runner.pose],
        "trail": [[float(p[0]), float(p[1])] for p in runner.true_node_pos],
        "action": action,
        "metrics": {
            "distance_m": round(runner.distance_m, 6),
            "steps": runner.sim_steps,
            "shortest_m": round(runner.shortest_m, 6),
            "goal_region": runner.goal_region,
        },
        "particles": rbpf.trace_record(runner.belief)["particles"],
        "last_command": last_command,
        "world": world_summary(runner.world),
    }


class Session:
    """Owns the runner; a single loop thread applies queued operations and
    advances the simulation one motion quantum per tick."""

    def __init__(self, runner: Runner, tick_interval: float = 0.05):
        self.runner = runner
        self.tick_interval = float(tick_interval)
        self.lock = threading.Lock()
        self.wake = threading.Condition(self.lock)       # loop sleeps here
        self.published = threading.Condition(self.lock)  # readers sleep here
        self.mode = "pause"
        self.step_budget = 0
        self.ops = deque()
        self.seq = 0
        self.snapshot = None
        self.snapshot_bytes = b"{}"
        self.closed = False
        self.last_command = None
        with self.lock:
            self._publish()
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    # -- handler-facing API ----------------------------------------------------

    def submit(self, kind: str, payload=None):
        with self.lock:
            self.ops.append((kind, payload))
            self.wake.notify_all()

    def latest(self) -> bytes:
        with self.lock:
            return self.snapshot_bytes

    def wait_next(self, last_seq: int, timeout: float = 1.0):
        """Block until a snapshot newer than last_seq is published; returns
        (seq, bytes) which may repeat last_seq on timeout."""
        with self.lock:
            if self.seq == last_seq and not self.closed:
                self.published.wait(timeout)
            return self.seq, self.snapshot_bytes

    def close(self):
        with self.lock:
            self.closed = True
            self.wake.notify_all()
            self.published.notify_all()
        self.thread.join(timeout=5.0)

    # -- loop ------------------------------------------------------------------

    def _publish(self):
        # caller holds the lock
        self.seq += 1
        self.snapshot = snapshot_of(self.runner, self.mode, self.seq,
                                    self.last_command)
        self.snapshot_bytes = json.dumps(self.snapshot).encode()
        self.published.notify_all()

    def _apply(self, kind, payload):
        if kind == "control":
            if payload == "run":
                self.mode = "run"
            elif payload == "pause":
                self.mode = "pause"
                self.step_budget = 0
            elif payload == "step":
                self.step_budget += 1
            elif payload == "reset":
                self.runner.reset()
                self.mode = "pause"
                self.step_budget = 0
                self.last_command = None
        elif kind == "command":
            grounded = self.runner.inject_command(payload)
            self.last_command = {"text": payload,
                                 "clauses": grounded.num_clauses}

    def _loop(self):
        while True:
            with self.lock:
                while not self.closed and not self.ops \
                        and self.step_budget == 0 \
                        and not (self.mode == "run"
                                 and self.runner.status == "running"):
                    self.wake.wait(0.5)
                if self.closed:
                    return
                op = self.ops.popleft() if self.ops else None
                if op is not None:
                    self._apply(*op)
                    self._publish()
                    continue
                if self.step_budget > 0:
                    self.step_budget -= 1
                    tick = True
                else:
                    tick = self.mode == "run" \
                        and self.runner.status == "running"
                if tick:
                    self.runner.tick()
                    self._publish()
                paced = self.mode == "run"
            if tick and paced:
                time.sleep(self.tick_interval)


class SessionHandler(BaseHTTPRequestHandler):
    server_version = "wayfinder-serve"
    protocol_version = "HTTP/1.1"
    session: Session = None

    def log_message(self, fmt, *args):
        pass

    # -- plumbing --------------------------------------------------------------

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _reply(self, code: int, body: bytes, ctype: str = _JSON):
        self.send_response(code)
        self._cors()
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str):
        self._reply(code, json.dumps({"error": message}).encode())

    def _read_json(self):
        try:
            n = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            raise ValueError("bad Content-Length header")
        if n <= 0:
            raise ValueError("empty request body")
        raw = self.rfile.read(n)
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ValueError(f"body is not valid JSON: {e}")
        if not isinstance(obj, dict):
            raise ValueError("body must be a JSON object")
        return obj

    # -- routes ----------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        if self.path == "/state":
            self._reply(200, self.session.latest())
        elif self.path == "/events":
            self._stream_events()
        else:
            self._error(404, f"no such endpoint: {self.path}")

    def do_POST(self):
        if self.path == "/command":
            self._post_command()
        elif self.path == "/control":
            self._post_control()
        else:
            self._error(404, f"no such endpoint: {self.path}")

    def _post_command(self):
        try:
            obj = self._read_json()
            text = obj.get("text")
            if not isinstance(text, str) or not text.strip():
                raise ValueError('"text" must be a non-empty string')
        except ValueError as e:
            return self._error(400, str(e))
        try:
            grounded = self.session.runner.grounder.annotate(text)
        except Exception as e:
            return self._error(400, f"cannot ground {text!r}: {e}")
        self.session.submit("command", text)
        clauses = [[{"figure": a.figure, "relation": a.relation,
                     "landmark": a.landmark}
                    for a in res.annotations]
                   for res in grounded.annotations]
        self._reply(200, json.dumps({
            "ok": True, "text": text,
            "clauses": grounded.num_clauses,
            "annotations": clauses,
        }).encode())

    def _post_control(self):
        try:
            obj = self._read_json()
            cmd = obj.get("command")
            if cmd not in ("run", "pause", "step", "reset"):
                raise ValueError(
                    '"command" must be one of run, pause, step, reset')
        except ValueError as e:
            return self._error(400, str(e))
        self.session.submit("control", cmd)
        self._reply(200, json.dumps({"ok": True, "command": cmd}).encode())

    def _stream_events(self):
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.end_headers()
        last = -1
        try:
            while not self.session.closed:
                seq, data = self.session.wait_next(last)
                if seq == last:
                    continue
                last = seq
                self.wfile.write(b"data: " + data + b"\n\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            pass


def start_server(world: str, weights: pol.PolicyWeights, port: int = 0,
                 baseline: str = "with-language", seed: int = 0, config=None,
                 grounder=None, relations=None, tick_interval: float = 0.05):
    """Bind and return (http server, session) without blocking; port 0 picks
    a free port (server.server_address[1])."""
    scenario = Scenario(id="session", world=world, text="")
    runner = Runner(scenario, baseline, weights, seed=seed, config=config,
                    grounder=grounder, relations=relations)
    session = Session(runner, tick_interval=tick_interval)
    handler = type("BoundHandler", (SessionHandler,), {"session": session})
    httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
    httpd.daemon_threads = True
    return httpd, session


def serve(world: str, weights: pol.PolicyWeights, port: int = 8008,
          baseline: str = "with-language", seed: int = 0, config=None,
          grounder=None, relations=None, tick_interval: float = 0.05):
    """Blocking entry point used by the CLI."""
    httpd, session = start_server(world, weights, port=port,
                                  baseline=baseline, seed=seed, config=config,
                                  grounder=grounder, relations=relations,
                                  tick_interval=tick_interval)
    host, bound = httpd.server_address[:2]
    print(f"serving {world} on http://{host}:{bound}  "
          f"(GET /state, GET /events, POST /command, POST /control)")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        session.close()
        httpd.server_close()
