"""The fix loop: interaction memory with embedding retrieval, the language
model adapter contract, and the bounded iterate-verify-refine orchestrator.

Adapters are pluggable: the scripted mock replays canned responses for
deterministic tests and demos, while the HTTP adapter speaks a minimal
OpenAI-compatible contract (``RC_LLM_URL``/``RC_LLM_KEY``/``RC_EMBED_URL``).
"""

from __future__ import annotations

import enum
import json
import re
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .critics import CriticConfig, CriticReport, Flag, fix_message, report_from_document, report_to_document, run_critics, score_index
from .kinematics import RobotModel
from .program import IkUnreachableError, InterpreterConfig, interpret, parse_program
from .scene import Scene

MEMORY_SCHEMA = 1
EMBED_DIM = 256
API_REFERENCE = """Available robot commands (one per line, no other syntax):
  move_to(x, y, z)          move the gripper point to Cartesian meters
  open_gripper()            open the gripper (releases a held object)
  close_gripper()           close the gripper (grasps the nearest object within reach)
  reduce_speed(percent)     set motion speed to percent of nominal (0 < percent <= 100)
  avoid_collision(object)   route subsequent motions above the named object
Lines starting with # are comments."""


class GenerationFailureError(Exception):
    """The adapter's response did not contain a parsable program."""


class StorageFailureError(Exception):
    pass


class AdapterError(Exception):
    """The language-model endpoint failed or the script ran out."""


class Termination(enum.Enum):
    ALL_OK = "AllOk"
    UNCHANGED = "Unchanged"
    MAX_ATTEMPTS = "MaxAttempts"
    GENERATION_FAILURE = "GenerationFailure"


@dataclass(frozen=True)
class InteractionRecord:
    request: str
    program: str
    feedback: tuple[CriticReport, ...]
    score: int | None
    created_at: float
    record_id: int | None = None


@dataclass(frozen=True)
class LlmRequest:
    system: str
    environment: str
    api_list: str
    retrieved: tuple[InteractionRecord, ...]
    user_message: str
    fix_messages: tuple[str, ...] = ()
    current_program: str = ""

    @property
    def messages(self) -> list[dict[str, str]]:
        """Prompt assembly in a fixed order for reproducibility."""
        parts = [self.environment, self.api_list]
        for rec in self.retrieved:  # oldest first
            summary = f"Earlier request: {rec.request}\nProgram:\n{rec.program}"
            if rec.feedback:
                notes = "; ".join(
                    f"{r.critic}={r.flag.value}" for r in rec.feedback
                )
                summary += f"\nCritic feedback: {notes}"
            parts.append(summary)
        user = self.user_message
        if self.current_program:
            user += f"\n\nCurrent program:\n{self.current_program}"
        if self.fix_messages:
            user += "\n\nCritic feedback to address:\n" + "\n".join(self.fix_messages)
        return [
            {"role": "system", "content": self.system},
            {"role": "system", "content": "\n\n".join(parts)},
            {"role": "user", "content": user},
        ]


@dataclass(frozen=True)
class LlmResponse:
    content: str


class LlmAdapter(Protocol):
    def generate(self, request: LlmRequest) -> LlmResponse: ...


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_]*\n(.*?)```", re.DOTALL)


def extract_program(content: str) -> str:
    """Program text from an adapter response: fenced block if present, else
    the raw content when it parses. Raises GenerationFailureError otherwise."""
    m = _FENCE_RE.search(content)
    candidate = m.group(1) if m else content
    try:
        parse_program(candidate)
    except Exception as e:
        raise GenerationFailureError(f"response does not contain a valid program: {e}") from e
    return candidate.strip("\n")


def default_embed(text: str, dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic hashed bag-of-words embedding, L2-normalized (or zero)."""
    vec = np.zeros(dim, dtype=float)
    for token in re.split(r"[^a-z0-9]+", text.lower()):
        if token:
            vec[zlib.crc32(token.encode()) % dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class MemoryStore:
    """Append-only interaction memory with cosine retrieval.

    Records persist one JSON document per line; an existing log reloads at
    startup so context survives restarts.
    """

    def __init__(self, path: str | Path | None = None, embed: Callable[[str], np.ndarray] = default_embed):
        self._path = Path(path) if path else None
        self._embed = embed
        self._records: list[InteractionRecord] = []
        self._vectors: list[np.ndarray] = []
        if self._path and self._path.exists():
            self._reload()

    def _reload(self) -> None:
        for lineno, raw in enumerate(self._path.read_text().splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                doc = json.loads(raw)
                rec = InteractionRecord(
                    request=doc["request"],
                    program=doc["program"],
                    feedback=tuple(report_from_document(d) for d in doc.get("feedback", [])),
                    score=doc.get("score"),
                    created_at=float(doc.get("created_at", 0.0)),
                    record_id=int(doc["id"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise StorageFailureError(f"memory log line {lineno}: {e}") from e
            self._records.append(rec)
            self._vectors.append(self._embed(rec.request))

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list[InteractionRecord]:
        return list(self._records)

    def put(self, record: InteractionRecord) -> int:
        """Persist a record; ids are monotone from 1. Programs must parse."""
        try:
            parse_program(record.program)
        except Exception as e:
            raise GenerationFailureError(f"record program does not parse: {e}") from e
        record_id = len(self._records) + 1
        stored = InteractionRecord(
            request=record.request,
            program=record.program,
            feedback=record.feedback,
            score=record.score,
            created_at=record.created_at,
            record_id=record_id,
        )
        if self._path:
            doc = {
                "schema": MEMORY_SCHEMA,
                "id": record_id,
                "created_at": stored.created_at,
                "request": stored.request,
                "program": stored.program,
                "feedback": [report_to_document(r) for r in stored.feedback],
                "score": stored.score,
            }
            try:
                with self._path.open("a") as fh:
                    fh.write(json.dumps(doc) + "\n")
            except OSError as e:
                raise StorageFailureError(str(e)) from e
        self._records.append(stored)
        self._vectors.append(self._embed(stored.request))
        return record_id

    def retrieve(self, query: str, k: int) -> list[InteractionRecord]:
        """Top-k records by cosine similarity; ties broken by recency."""
        if k <= 0 or not self._records:
            return []
        qv = self._embed(query)
        sims = [float(np.dot(qv, v)) for v in self._vectors]
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], -self._records[i].record_id))
        return [self._records[i] for i in order[:k]]


class MockAdapter:
    """Scripted adapter: canned responses consumed one per generate call.

    ``capture=True`` records every received request for prompt-wiring tests.
    """

    def __init__(self, responses: list[str], capture: bool = False):
        self._responses = list(responses)
        self._cursor = 0
        self.capture = capture
        self.captured: list[LlmRequest] = []

    @classmethod
    def from_script(cls, path: str | Path, capture: bool = False) -> "MockAdapter":
        doc = json.loads(Path(path).read_text())
        if isinstance(doc, dict):
            doc = doc["responses"]
        responses = [entry["content"] if isinstance(entry, dict) else str(entry) for entry in doc]
        return cls(responses, capture=capture)

    def generate(self, request: LlmRequest) -> LlmResponse:
        if self.capture:
            self.captured.append(request)
        if self._cursor >= len(self._responses):
            raise AdapterError("mock script exhausted")
        content = self._responses[self._cursor]
        self._cursor += 1
        return LlmResponse(content)


class HttpAdapter:
    """Minimal chat-completion client: POST {messages:[{role,content}]} -> {content}."""

    def __init__(self, url: str, key: str | None = None, timeout: float = 60.0):
        self.url = url
        self.key = key
        self.timeout = timeout

    def generate(self, request: LlmRequest) -> LlmResponse:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        body = {"messages": request.messages}
        last_error: Exception | None = None
        for _ in range(2):  # one retry on timeout/connection failure
            try:
                resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return LlmResponse(resp.json()["content"])
            except Exception as e:  # noqa: BLE001 - adapter boundary
                last_error = e
                time.sleep(0.1)
        raise AdapterError(f"LLM endpoint failed: {last_error}")


class HttpEmbedder:
    """Embedding endpoint client: POST {input} -> {vector:[...]}."""

    def __init__(self, url: str, key: str | None = None, timeout: float = 60.0):
        self.url = url
        self.key = key
        self.timeout = timeout

    def __call__(self, text: str) -> np.ndarray:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        last_error: Exception | None = None
        for _ in range(2):
            try:
                resp = requests.post(self.url, json={"input": text}, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                vec = np.asarray(resp.json()["vector"], dtype=float)
                norm = np.linalg.norm(vec)
                return vec / norm if norm > 0 else vec
            except Exception as e:  # noqa: BLE001
                last_error = e
                time.sleep(0.1)
        raise AdapterError(f"embedding endpoint failed: {last_error}")


def describe_scene(scene: Scene) -> str:
    lines = ["Environment (meters):"]
    ws = scene.workspace
    lines.append(
        f"  workspace x [{ws.lo.x:g}, {ws.hi.x:g}], y [{ws.lo.y:g}, {ws.hi.y:g}], z [{ws.lo.z:g}, {ws.hi.z:g}]"
    )
    for obj in scene.objects:
        lines.append(
            f"  {obj.id} ({obj.kind or 'object'}): center ({obj.position.x:g}, {obj.position.y:g}, "
            f"{obj.position.z:g}), extents ({obj.scale.x:g}, {obj.scale.y:g}, {obj.scale.z:g})"
        )
    return "\n".join(lines)


DEFAULT_SYSTEM = (
    "You write programs for a 6-DOF robot arm using only the listed commands. "
    "Respond with the full program in a fenced code block."
)


def build_generation_request(
    task: str,
    scene: Scene,
    retrieved: list[InteractionRecord],
    fix_messages: list[str] | None = None,
    current_program: str = "",
    system: str = DEFAULT_SYSTEM,
) -> LlmRequest:
    return LlmRequest(
        system=system,
        environment=describe_scene(scene),
        api_list=API_REFERENCE,
        retrieved=tuple(sorted(retrieved, key=lambda r: r.record_id or 0)),
        user_message=task,
        fix_messages=tuple(fix_messages or ()),
        current_program=current_program,
    )


@dataclass
class LoopAttempt:
    program: str
    reports: list[CriticReport]
    score: int | None


@dataclass
class LoopResult:
    attempts: list[LoopAttempt]
    termination: Termination

    @property
    def attempt_count(self) -> int:
        return len(self.attempts)

    @property
    def final_program(self) -> str | None:
        return self.attempts[-1].program if self.attempts else None


def _normalize(program: str) -> str:
    return "\n".join(line.strip() for line in program.strip().splitlines() if line.strip())


INTERPRETER_REPORT = "interpreter"


def _ik_failure_report(e: IkUnreachableError) -> CriticReport:
    from .critics import Measurement

    return CriticReport(
        critic=INTERPRETER_REPORT,
        flag=Flag.ERROR,
        explanation=f"The program could not be executed: {e}.",
        fix_hint="Choose a reachable target (closer to the robot, above the table).",
        measurement=Measurement(e.best_pos_error, "m", None),
        thresholds={},
    )


def fix_loop(
    task: str,
    scene: Scene,
    model: RobotModel,
    llm: LlmAdapter,
    memory: MemoryStore | None = None,
    critic_cfg: CriticConfig | None = None,
    interp_cfg: InterpreterConfig | None = None,
    selected: list[str] | set[str] | None = None,
    max_attempts: int = 5,
    retrieve_k: int = 3,
    system: str = DEFAULT_SYSTEM,
) -> LoopResult:
    """Generate -> interpret -> critique -> store -> refine, up to
    ``max_attempts`` times; stops early when every critic reports OK or when
    the model stops changing the program."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    memory = memory if memory is not None else MemoryStore()
    critic_cfg = critic_cfg or CriticConfig()
    attempts: list[LoopAttempt] = []
    fix_msgs: list[str] = []
    prev_program: str | None = None
    consecutive_failures = 0

    while len(attempts) < max_attempts:
        retrieved = memory.retrieve(task, retrieve_k)
        request = build_generation_request(
            task,
            scene,
            retrieved,
            fix_messages=fix_msgs,
            current_program=prev_program or "",
            system=system,
        )
        response = llm.generate(request)
        try:
            program_text = extract_program(response.content)
        except GenerationFailureError:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                return LoopResult(attempts, Termination.GENERATION_FAILURE)
            continue
        consecutive_failures = 0

        program = parse_program(program_text)
        try:
            traj = interpret(program, scene, model, interp_cfg)
            reports = run_critics(traj, scene, model, critic_cfg, selected)
            try:
                score = score_index(reports).total
            except Exception:
                score = None
        except IkUnreachableError as e:
            reports = [_ik_failure_report(e)]
            score = 0
        attempts.append(LoopAttempt(program_text, reports, score))
        memory.put(
            InteractionRecord(
                request=task,
                program=program_text,
                feedback=tuple(reports),
                score=score,
                created_at=time.time(),
            )
        )
        if all(r.flag is Flag.OK for r in reports):
            return LoopResult(attempts, Termination.ALL_OK)
        if prev_program is not None and _normalize(program_text) == _normalize(prev_program):
            return LoopResult(attempts, Termination.UNCHANGED)
        prev_program = program_text
        fix_msgs = [fix_message(r) for r in reports if r.flag is not Flag.OK]
    return LoopResult(attempts, Termination.MAX_ATTEMPTS)


def embedded_loop(
    task: str,
    scene: Scene,
    llm: LlmAdapter,
    memory: MemoryStore | None = None,
    critic_cfg: CriticConfig | None = None,
    max_attempts: int = 5,
    retrieve_k: int = 3,
) -> LoopResult:
    """Prompt-embedded ablation mode: the critic rules ride in the system
    prompt and the model self-reviews; no critic ever executes, so the loop
    only stops on an unchanged program or the attempt cap."""
    from .critics import embedded_rules_text

    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    memory = memory if memory is not None else MemoryStore()
    system = DEFAULT_SYSTEM + "\n\n" + embedded_rules_text(critic_cfg)
    attempts: list[LoopAttempt] = []
    prev_program: str | None = None
    consecutive_failures = 0
    while len(attempts) < max_attempts:
        retrieved = memory.retrieve(task, retrieve_k)
        request = build_generation_request(
            task, scene, retrieved, current_program=prev_program or "", system=system
        )
        response = llm.generate(request)
        try:
            program_text = extract_program(response.content)
        except GenerationFailureError:
            consecutive_failures += 1
            if consecutive_failures >= 3:
                return LoopResult(attempts, Termination.GENERATION_FAILURE)
            continue
        consecutive_failures = 0
        attempts.append(LoopAttempt(program_text, [], None))
        memory.put(
            InteractionRecord(
                request=task, program=program_text, feedback=(), score=None, created_at=time.time()
            )
        )
        if prev_program is not None and _normalize(program_text) == _normalize(prev_program):
            return LoopResult(attempts, Termination.UNCHANGED)
        prev_program = program_text
    return LoopResult(attempts, Termination.MAX_ATTEMPTS)


def apply_fix(
    record: InteractionRecord,
    report: CriticReport,
    llm: LlmAdapter,
    memory: MemoryStore | None = None,
    scene: Scene | None = None,
    retrieve_k: int = 3,
    system: str = DEFAULT_SYSTEM,
) -> str:
    """Single-shot refinement for one violation; returns the revised program
    for inspection without executing it."""
    if report.flag is Flag.OK:
        from .critics import NoViolationError

        raise NoViolationError(f"critic {report.critic} reported OK; nothing to fix")
    memory = memory if memory is not None else MemoryStore()
    retrieved = memory.retrieve(record.request, retrieve_k)
    if scene is not None:
        environment = describe_scene(scene)
    else:
        environment = ""
    request = LlmRequest(
        system=system,
        environment=environment,
        api_list=API_REFERENCE,
        retrieved=tuple(sorted(retrieved, key=lambda r: r.record_id or 0)),
        user_message=record.request,
        fix_messages=(fix_message(report),),
        current_program=record.program,
    )
    response = llm.generate(request)
    return extract_program(response.content)
