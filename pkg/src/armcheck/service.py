"""HTTP facade over the full workflow (chat, run, fix, trajectory playback,
deploy) plus the TCP deployment channel and a bundled mock robot endpoint.

The deployment gate is hard: trajectories whose latest critic run contains
any Error flag are never transmitted. Warnings pass with a logged caveat.
"""

from __future__ import annotations

import json
import os
import socket
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .critics import (
    CriticConfig,
    CriticReport,
    Flag,
    registered_critics,
    report_to_document,
    run_critics,
    score_index,
)
from .kinematics import RobotModel
from .program import (
    ArityError,
    EmptyProgramError,
    IkUnreachableError,
    InterpreterConfig,
    ProgramSyntaxError,
    Trajectory,
    UnknownApiError,
    interpret,
    parse_program,
)
from .refine import (
    AdapterError,
    GenerationFailureError,
    InteractionRecord,
    LlmAdapter,
    MemoryStore,
    apply_fix,
    build_generation_request,
    extract_program,
    _FENCE_RE,
)
from .scene import Scene, load_scene, load_scene_file


class DeployRefusedError(Exception):
    """Safety gate: the trajectory's critic reports contain an Error flag."""


class ConnectionLostError(Exception):
    def __init__(self, message: str, last_acked_t_ms: int | None):
        super().__init__(message)
        self.last_acked_t_ms = last_acked_t_ms


# ---------------------------------------------------------------------------
# TCP deployment channel


def deploy_trajectory(
    traj: Trajectory,
    reports: list[CriticReport],
    endpoint: tuple[str, int],
    timeout: float = 10.0,
) -> int:
    """Stream the verified joint states as newline-delimited JSON frames,
    waiting for an ``ack <t_ms>`` per frame; closes with ``end``."""
    errors = [r for r in reports if r.flag is Flag.ERROR]
    if errors:
        names = ", ".join(r.critic for r in errors)
        raise DeployRefusedError(f"refusing to deploy: Error flag from {names}")
    last_acked: int | None = None
    sent = 0
    try:
        with socket.create_connection(endpoint, timeout=timeout) as sock:
            rfile = sock.makefile("r", encoding="utf-8", newline="\n")
            for state in traj.states:
                frame = {"t_ms": state.t_ms, "q": list(state.q), "gripper_open": state.gripper_open}
                sock.sendall((json.dumps(frame) + "\n").encode())
                reply = rfile.readline().strip()
                if reply != f"ack {state.t_ms}":
                    raise ConnectionLostError(
                        f"expected 'ack {state.t_ms}', got {reply!r}", last_acked
                    )
                last_acked = state.t_ms
                sent += 1
            sock.sendall(b"end\n")
    except ConnectionLostError:
        raise
    except OSError as e:
        raise ConnectionLostError(f"connection lost: {e}", last_acked) from e
    return sent


class MockRobot:
    """Stand-in for the physical arm: accepts one connection at a time,
    validates monotone timestamps and joint arity, acks each frame, and logs
    everything it receives for test assertions."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, dof: int = 6, log_path: str | Path | None = None):
        self.dof = dof
        self.log_path = Path(log_path) if log_path else None
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(1)
        self._thread: threading.Thread | None = None
        self._running = False

    @property
    def address(self) -> tuple[str, int]:
        return self._server.getsockname()

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass
        if self._thread:
            self._thread.join(timeout=2.0)

    def _log(self, doc: dict) -> None:
        if self.log_path:
            with self.log_path.open("a") as fh:
                fh.write(json.dumps(doc) + "\n")

    def _serve(self) -> None:
        while self._running:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            with conn:
                self._handle(conn)

    def _handle(self, conn: socket.socket) -> None:
        rfile = conn.makefile("r", encoding="utf-8", newline="\n")
        last_t: int | None = None
        session_id = uuid.uuid4().hex[:8]
        while True:
            line = rfile.readline()
            if not line:
                return
            line = line.strip()
            if line == "end":
                self._log({"event": "end", "session": session_id})
                return
            try:
                frame = json.loads(line)
                t_ms = int(frame["t_ms"])
                q = frame["q"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                conn.sendall(b"nak malformed frame\n")
                return
            if len(q) != self.dof:
                conn.sendall(f"nak wrong q arity {len(q)}\n".encode())
                return
            if last_t is not None and t_ms <= last_t:
                conn.sendall(f"nak non-monotone t_ms {t_ms}\n".encode())
                return
            last_t = t_ms
            self._log({"event": "frame", "session": session_id, "t_ms": t_ms, "q": q,
                       "gripper_open": bool(frame.get("gripper_open", True))})
            conn.sendall(f"ack {t_ms}\n".encode())


# ---------------------------------------------------------------------------
# HTTP facade


@dataclass
class SessionState:
    session_id: str
    scene: Scene
    selected: list[str]
    current_program: str = ""
    last_request: str = ""
    trajectories: dict[str, Trajectory] = field(default_factory=dict)
    reports_by_tid: dict[str, list[CriticReport]] = field(default_factory=dict)
    latest_tid: str | None = None
    latest_reports: list[CriticReport] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _reports_payload(reports: list[CriticReport]):
    docs = [report_to_document(r) for r in reports]
    try:
        score = score_index(reports)
        score_doc = {"points": score.points, "total": score.total}
    except Exception:
        score_doc = None
    return docs, score_doc


def create_app(
    model: RobotModel,
    adapter: LlmAdapter,
    scene_dir: str | Path | None = None,
    default_scene: Scene | None = None,
    critic_cfg: CriticConfig | None = None,
    interp_cfg: InterpreterConfig | None = None,
    memory: MemoryStore | None = None,
) -> FastAPI:
    app = FastAPI(title="armcheck service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    critic_cfg = critic_cfg or CriticConfig()
    interp_cfg = interp_cfg or InterpreterConfig()
    memory = memory if memory is not None else MemoryStore()
    sessions: dict[str, SessionState] = {}
    app.state.sessions = sessions
    app.state.memory = memory

    def error(status: int, message: str, **extra):
        return JSONResponse(status_code=status, content={"error": message, **extra})

    def resolve_scene(spec) -> Scene:
        if spec is None:
            if default_scene is None:
                raise ValueError("no scene given and no default scene configured")
            return default_scene
        if isinstance(spec, dict):
            return load_scene(spec)
        if scene_dir is None:
            raise ValueError("scene name given but no scene directory configured")
        path = Path(scene_dir) / str(spec)
        if not path.exists():
            raise FileNotFoundError(f"no scene named {spec!r}")
        return load_scene_file(path)

    def get_session(session_id: str) -> SessionState | None:
        return sessions.get(session_id)

    @app.get("/critics")
    def critics_endpoint():
        return {
            "critics": registered_critics(),
            "config": {k: getattr(critic_cfg, k) for k in CriticConfig.__dataclass_fields__},
        }

    @app.post("/session")
    def create_session(body: dict | None = None):
        body = body or {}
        try:
            scene = resolve_scene(body.get("scene"))
        except Exception as e:
            return error(400, f"bad scene: {e}")
        selected = body.get("critics") or registered_critics()
        unknown = [c for c in selected if c not in registered_critics()]
        if unknown:
            return error(400, f"unknown critics: {unknown}")
        session_id = uuid.uuid4().hex[:12]
        sessions[session_id] = SessionState(session_id=session_id, scene=scene, selected=list(selected))
        return {"session_id": session_id}

    @app.post("/session/{session_id}/chat")
    def chat(session_id: str, body: dict):
        session = get_session(session_id)
        if session is None:
            return error(404, "unknown session")
        message = body.get("message", "").strip()
        if not message:
            return error(400, "empty message")
        if not session.lock.acquire(blocking=False):
            return error(409, "another request is in flight for this session")
        try:
            retrieved = memory.retrieve(message, 3)
            request = build_generation_request(message, session.scene, retrieved)
            try:
                response = adapter.generate(request)
                program = extract_program(response.content)
            except AdapterError as e:
                return error(502, f"adapter failure: {e}")
            except GenerationFailureError as e:
                return error(502, f"GenerationFailure: {e}")
            explanation = _FENCE_RE.sub("", response.content).strip()
            session.current_program = program
            session.last_request = message
            memory.put(
                InteractionRecord(
                    request=message, program=program, feedback=(), score=None, created_at=time.time()
                )
            )
            return {"program": program, "explanation": explanation}
        finally:
            session.lock.release()

    @app.post("/session/{session_id}/run")
    def run(session_id: str, body: dict):
        session = get_session(session_id)
        if session is None:
            return error(404, "unknown session")
        source = body.get("program", session.current_program)
        if not source:
            return error(400, "no program to run")
        selected = body.get("critics", session.selected)
        unknown = [c for c in selected if c not in registered_critics()]
        if unknown:
            return error(400, f"unknown critics: {unknown}")
        if not session.lock.acquire(blocking=False):
            return error(409, "a run is already in flight for this session")
        try:
            try:
                program = parse_program(source)
            except (ProgramSyntaxError, UnknownApiError, ArityError) as e:
                return error(400, str(e), line=getattr(e, "line", None))
            except EmptyProgramError as e:
                return error(400, str(e))
            try:
                traj = interpret(program, session.scene, model, interp_cfg)
            except IkUnreachableError as e:
                return error(422, str(e), line=e.line)
            reports = run_critics(traj, session.scene, model, critic_cfg, selected)
            tid = uuid.uuid4().hex[:12]
            session.trajectories[tid] = traj
            session.reports_by_tid[tid] = reports
            session.latest_tid = tid
            session.latest_reports = reports
            session.current_program = source
            docs, score_doc = _reports_payload(reports)
            try:
                memory.put(
                    InteractionRecord(
                        request=session.last_request or "(direct run)",
                        program=source,
                        feedback=tuple(reports),
                        score=None if score_doc is None else score_doc["total"],
                        created_at=time.time(),
                    )
                )
            except GenerationFailureError:
                pass
            return {"trajectory_id": tid, "reports": docs, "score": score_doc}
        finally:
            session.lock.release()

    @app.post("/session/{session_id}/fix")
    def fix(session_id: str, body: dict):
        session = get_session(session_id)
        if session is None:
            return error(404, "unknown session")
        critic_name = body.get("critic", "")
        if critic_name not in registered_critics():
            return error(404, f"unknown critic {critic_name!r}")
        report = next((r for r in session.latest_reports if r.critic == critic_name), None)
        if report is None or report.flag is Flag.OK:
            return error(409, f"critic {critic_name!r} has no violation to fix")
        if not session.lock.acquire(blocking=False):
            return error(409, "another request is in flight for this session")
        try:
            rec = InteractionRecord(
                request=session.last_request or "(direct run)",
                program=session.current_program,
                feedback=tuple(session.latest_reports),
                score=None,
                created_at=time.time(),
            )
            try:
                revised = apply_fix(rec, report, adapter, memory=memory, scene=session.scene)
            except AdapterError as e:
                return error(502, f"adapter failure: {e}")
            except GenerationFailureError as e:
                return error(502, f"GenerationFailure: {e}")
            return {"revised_program": revised}
        finally:
            session.lock.release()

    @app.get("/session/{session_id}/trajectory/{tid}")
    def trajectory(session_id: str, tid: str):
        session = get_session(session_id)
        if session is None:
            return error(404, "unknown session")
        traj = session.trajectories.get(tid)
        if traj is None:
            return error(404, "unknown trajectory")
        states = [
            {
                "t_ms": s.t_ms,
                "q": list(s.q),
                "frames": {
                    name: {
                        "p": [p.position.x, p.position.y, p.position.z],
                        "o": [p.orientation.x, p.orientation.y, p.orientation.z, p.orientation.w],
                    }
                    for name, p in s.frames.items()
                },
                "proximity": {f"{a}|{b}": d for (a, b), d in s.proximity.items()},
                "gripper_open": s.gripper_open,
            }
            for s in traj.states
        ]
        docs, score_doc = _reports_payload(session.reports_by_tid.get(tid, []))
        return {
            "states": states,
            "attachment": [
                {
                    "t_ms": ev.t_ms,
                    "kind": ev.kind,
                    "object_id": ev.object_id,
                    "pose": {
                        "p": [ev.pose.position.x, ev.pose.position.y, ev.pose.position.z],
                        "o": [ev.pose.orientation.x, ev.pose.orientation.y, ev.pose.orientation.z, ev.pose.orientation.w],
                    },
                }
                for ev in traj.attachment.events
            ],
            "reports": docs,
            "score": score_doc,
            "links": model.link_names,
            "scene": {
                "objects": [
                    {
                        "id": o.id,
                        "position": [o.position.x, o.position.y, o.position.z],
                        "scale": [o.scale.x, o.scale.y, o.scale.z],
                        "kind": o.kind,
                    }
                    for o in session.scene.objects
                ],
                "workspace": {
                    "min": [session.scene.workspace.lo.x, session.scene.workspace.lo.y, session.scene.workspace.lo.z],
                    "max": [session.scene.workspace.hi.x, session.scene.workspace.hi.y, session.scene.workspace.hi.z],
                },
            },
        }

    @app.post("/session/{session_id}/deploy")
    def deploy(session_id: str, body: dict):
        session = get_session(session_id)
        if session is None:
            return error(404, "unknown session")
        tid = body.get("trajectory_id", session.latest_tid)
        traj = session.trajectories.get(tid or "")
        if traj is None:
            return error(404, "unknown trajectory")
        host = body.get("host", "127.0.0.1")
        port = body.get("port")
        if port is None:
            return error(400, "missing endpoint port")
        reports = session.reports_by_tid.get(tid, [])
        try:
            sent = deploy_trajectory(traj, reports, (host, int(port)))
        except DeployRefusedError as e:
            return error(409, str(e))
        except ConnectionLostError as e:
            return error(502, str(e), last_acked_t_ms=e.last_acked_t_ms)
        return {"frames_sent": sent}

    return app


def main() -> None:  # pragma: no cover - exercised via the CLI
    import uvicorn

    from .fixtures import fixture_path
    from .kinematics import load_model_file
    from .refine import HttpAdapter, HttpEmbedder, MockAdapter, default_embed

    bind = os.environ.get("RC_BIND_ADDR", "127.0.0.1:8080")
    host, _, port = bind.partition(":")
    model_file = os.environ.get("RC_MODEL_FILE") or str(fixture_path("default_model.json"))
    scene_dir = os.environ.get("RC_SCENE_DIR") or str(fixture_path("scenes"))
    llm_url = os.environ.get("RC_LLM_URL")
    if llm_url:
        adapter: LlmAdapter = HttpAdapter(llm_url, os.environ.get("RC_LLM_KEY"))
    else:
        adapter = MockAdapter.from_script(fixture_path("scripts/chat_demo.json"))
    embed_url = os.environ.get("RC_EMBED_URL")
    embed = HttpEmbedder(embed_url, os.environ.get("RC_LLM_KEY")) if embed_url else default_embed
    app = create_app(load_model_file(model_file), adapter, scene_dir=scene_dir,
                     memory=MemoryStore(embed=embed))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))
