"""Command-line entry points: verify, run, loop, ablate, serve, mock-robot.

Exit codes: 0 all critics OK, 1 worst flag Warning, 2 worst flag Error,
3 unreachable move_to target, 4 generation/adapter failure, 64 usage error,
65 input parse/validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .critics import (
    CriticConfig,
    CriticReport,
    Flag,
    UnknownCriticError,
    critic_config_from_dict,
    registered_critics,
    report_to_document,
    run_critics,
    score_index,
)
from .fixtures import fixture_path
from .kinematics import ModelError, load_model_file
from .program import (
    ArityError,
    EmptyProgramError,
    IkUnreachableError,
    InterpreterConfig,
    ProgramSyntaxError,
    TrajectoryFormatError,
    UnknownApiError,
    interpret,
    interpreter_config_from_dict,
    load_trajectory,
    parse_program,
    save_trajectory,
)
from .refine import AdapterError, GenerationFailureError, MemoryStore, MockAdapter, Termination, embedded_loop, fix_loop
from .scene import SceneParseError, SceneValidationError, load_scene_file

EXIT_OK = 0
EXIT_WARNING = 1
EXIT_ERROR = 2
EXIT_UNREACHABLE = 3
EXIT_GENERATION = 4
EXIT_USAGE = 64
EXIT_DATA = 65


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 64, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_configs(path: str | None) -> tuple[CriticConfig, InterpreterConfig]:
    """One flat key/value document feeds both critic and interpreter fields."""
    if not path:
        return CriticConfig(), InterpreterConfig()
    doc = json.loads(Path(path).read_text())
    return critic_config_from_dict(doc), interpreter_config_from_dict(doc)


def _parse_critics(arg: str | None) -> list[str]:
    if not arg:
        return registered_critics()
    names = [c.strip() for c in arg.split(",") if c.strip()]
    for name in names:
        if name not in registered_critics():
            raise UnknownCriticError(name)
    return names


def _worst_exit(reports: list[CriticReport]) -> int:
    worst = max((r.flag.severity for r in reports), default=0)
    return {0: EXIT_OK, 1: EXIT_WARNING, 2: EXIT_ERROR}[worst]


def _print_reports(reports: list[CriticReport], fmt: str) -> None:
    try:
        score = score_index(reports)
        score_doc = {"points": score.points, "total": score.total}
    except Exception:
        score_doc = None
    if fmt == "json":
        print(json.dumps({"reports": [report_to_document(r) for r in reports], "score": score_doc}, indent=2))
        return
    for r in reports:
        if r.measurement is None:
            measured = "-"
        else:
            at = f" at t={r.measurement.t_ms} ms" if r.measurement.t_ms is not None else ""
            measured = f"{r.measurement.value:.4g} {r.measurement.unit}{at}"
        line = f"{r.critic:12s} {r.flag.value:8s} {measured}"
        if r.flag is not Flag.OK:
            line += f"  {r.explanation} {r.fix_hint}"
        print(line)
    if score_doc is not None:
        print(f"score: {score_doc['total']}/10")


def _model_arg(parser: _Parser) -> None:
    parser.add_argument("--model", default=str(fixture_path("default_model.json")),
                        help="robot model file (default: shipped 6-DOF arm)")


def cmd_verify(args) -> int:
    critic_cfg, _ = _load_configs(args.config)
    selected = _parse_critics(args.critics)
    model = load_model_file(args.model)
    scene = load_scene_file(args.scene)
    traj = load_trajectory(args.trajectory)
    reports = run_critics(traj, scene, model, critic_cfg, selected)
    _print_reports(reports, args.format)
    return _worst_exit(reports)


def cmd_run(args) -> int:
    critic_cfg, interp_cfg = _load_configs(args.config)
    selected = _parse_critics(args.critics)
    model = load_model_file(args.model)
    scene = load_scene_file(args.scene)
    program = parse_program(Path(args.program).read_text())
    try:
        traj = interpret(program, scene, model, interp_cfg)
    except IkUnreachableError as e:
        print(f"unreachable: {e}", file=sys.stderr)
        return EXIT_UNREACHABLE
    out = args.out or (str(Path(args.program).with_suffix("")) + ".trace.jsonl")
    save_trajectory(traj, out)
    print(f"trajectory written to {out}", file=sys.stderr)
    reports = run_critics(traj, scene, model, critic_cfg, selected)
    _print_reports(reports, args.format)
    return _worst_exit(reports)


def cmd_loop(args) -> int:
    critic_cfg, interp_cfg = _load_configs(args.config)
    selected = _parse_critics(args.critics)
    model = load_model_file(args.model)
    scene = load_scene_file(args.scene)
    adapter = MockAdapter.from_script(args.mock_script)
    memory = MemoryStore(args.memory) if args.memory else MemoryStore()
    try:
        result = fix_loop(
            args.task,
            scene,
            model,
            adapter,
            memory=memory,
            critic_cfg=critic_cfg,
            interp_cfg=interp_cfg,
            selected=selected,
            max_attempts=args.max_attempts,
        )
    except AdapterError as e:
        print(f"adapter failure: {e}", file=sys.stderr)
        return EXIT_GENERATION
    if args.format == "json":
        print(json.dumps({
            "attempts": [
                {"attempt": i + 1, "score": a.score,
                 "flags": {r.critic: r.flag.value for r in a.reports}}
                for i, a in enumerate(result.attempts)
            ],
            "termination": result.termination.value,
        }, indent=2))
    else:
        print(f"{'Attempt':8s} {'Score':>5s}")
        for i, a in enumerate(result.attempts, start=1):
            print(f"{i:<8d} {a.score if a.score is not None else '-':>5}")
        print(f"termination: {result.termination.value}")
    if result.termination is Termination.GENERATION_FAILURE:
        return EXIT_GENERATION
    return EXIT_OK


def _score_program(program_text: str, scene, model, critic_cfg, interp_cfg):
    """Post-hoc scoring of a final program (used for the embedded condition)."""
    try:
        traj = interpret(parse_program(program_text), scene, model, interp_cfg)
    except IkUnreachableError:
        return 0, {"interpreter": "Error"}
    reports = run_critics(traj, scene, model, critic_cfg)
    return score_index(reports).total, {r.critic: r.flag.value for r in reports}


def cmd_ablate(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        print(f"manifest not found: {manifest_path}", file=sys.stderr)
        return EXIT_USAGE
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    critic_cfg, interp_cfg = _load_configs(args.config)
    if not args.config and manifest.get("interpreter_config"):
        doc = json.loads((base / manifest["interpreter_config"]).read_text())
        interp_cfg = interpreter_config_from_dict(doc)
    model = load_model_file(args.model)
    rows = []
    for entry in manifest["tasks"]:
        for key in ("embedded_script", "external_script"):
            script = entry.get(key)
            if not script or not (base / script).exists():
                print(f"task {entry.get('name')!r}: missing {key}", file=sys.stderr)
                return EXIT_USAGE
        scene = load_scene_file(base / entry["scene"])
        try:
            emb_adapter = MockAdapter.from_script(base / entry["embedded_script"])
            emb = embedded_loop(entry["task"], scene, emb_adapter, memory=MemoryStore(),
                                critic_cfg=critic_cfg, max_attempts=args.max_attempts)
            ext_adapter = MockAdapter.from_script(base / entry["external_script"])
            ext = fix_loop(entry["task"], scene, model, ext_adapter, memory=MemoryStore(),
                           critic_cfg=critic_cfg, interp_cfg=interp_cfg,
                           max_attempts=args.max_attempts)
        except AdapterError as e:
            print(f"adapter failure: {e}", file=sys.stderr)
            return EXIT_GENERATION
        if emb.termination is Termination.GENERATION_FAILURE or ext.termination is Termination.GENERATION_FAILURE:
            print("generation failure during ablation", file=sys.stderr)
            return EXIT_GENERATION
        emb_score, emb_flags = (
            _score_program(emb.final_program, scene, model, critic_cfg, interp_cfg)
            if emb.final_program
            else (0, {})
        )
        ext_score = ext.attempts[-1].score if ext.attempts else 0
        ext_flags = {r.critic: r.flag.value for r in ext.attempts[-1].reports} if ext.attempts else {}
        rows.append({
            "task": entry["name"],
            "embedded": {"attempts": emb.attempt_count, "score": emb_score, "flags": emb_flags,
                         "termination": emb.termination.value},
            "external": {"attempts": ext.attempt_count, "score": ext_score, "flags": ext_flags,
                         "termination": ext.termination.value},
        })
    avg = {
        "embedded_attempts": sum(r["embedded"]["attempts"] for r in rows) / len(rows),
        "embedded_score": sum(r["embedded"]["score"] for r in rows) / len(rows),
        "external_attempts": sum(r["external"]["attempts"] for r in rows) / len(rows),
        "external_score": sum(r["external"]["score"] for r in rows) / len(rows),
    }
    if args.format == "json":
        print(json.dumps({"tasks": rows, "average": avg}, indent=2))
    else:
        print(f"{'':20s} {'Embedded':>16s}   {'External':>16s}")
        print(f"{'Task':20s} {'Attempt':>8s} {'Score':>7s}   {'Attempt':>8s} {'Score':>7s}")
        for r in rows:
            print(
                f"{r['task']:20s} {r['embedded']['attempts']:>8d} {r['embedded']['score']:>7d}   "
                f"{r['external']['attempts']:>8d} {r['external']['score']:>7d}"
            )
        print(
            f"{'Average':20s} {avg['embedded_attempts']:>8.1f} {avg['embedded_score']:>7.1f}   "
            f"{avg['external_attempts']:>8.1f} {avg['external_score']:>7.1f}"
        )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .refine import HttpAdapter, HttpEmbedder, default_embed
    from .service import create_app

    critic_cfg, interp_cfg = _load_configs(args.config)
    model = load_model_file(args.model)
    scene_dir = args.scene_dir or os.environ.get("RC_SCENE_DIR") or str(fixture_path("scenes"))
    llm_url = os.environ.get("RC_LLM_URL")
    if args.mock_script:
        adapter = MockAdapter.from_script(args.mock_script)
    elif llm_url:
        adapter = HttpAdapter(llm_url, os.environ.get("RC_LLM_KEY"))
    else:
        adapter = MockAdapter.from_script(fixture_path("scripts/chat_demo.json"))
    embed_url = os.environ.get("RC_EMBED_URL")
    embed = HttpEmbedder(embed_url, os.environ.get("RC_LLM_KEY")) if embed_url else default_embed
    memory = MemoryStore(args.memory, embed=embed) if args.memory else MemoryStore(embed=embed)
    app = create_app(model, adapter, scene_dir=scene_dir, critic_cfg=critic_cfg,
                     interp_cfg=interp_cfg, memory=memory)
    bind = args.bind or os.environ.get("RC_BIND_ADDR", "127.0.0.1:8080")
    host, _, port = bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080), log_level="warning")
    return EXIT_OK


def cmd_mock_robot(args) -> int:
    from .service import MockRobot

    host, _, port = (args.bind or "127.0.0.1:0").partition(":")
    robot = MockRobot(host=host or "127.0.0.1", port=int(port or 0), dof=args.dof, log_path=args.log)
    robot.start()
    print(f"mock robot listening on {robot.address[0]}:{robot.address[1]}", flush=True)
    try:
        import time

        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        robot.stop()
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="armcheck", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--critics", help="comma-separated critic names (default: all)")
    common.add_argument("--config", help="flat JSON config (critic + interpreter fields)")
    common.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("verify", parents=[common], help="run critics over a trajectory file")
    p.add_argument("trajectory")
    p.add_argument("--scene", required=True)
    _model_arg(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("run", parents=[common], help="interpret a program, then verify it")
    p.add_argument("program")
    p.add_argument("--scene", required=True)
    _model_arg(p)
    p.add_argument("--out", help="trajectory output path (default: <program>.trace.jsonl)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("loop", parents=[common], help="run the generate-verify-fix loop")
    p.add_argument("task")
    p.add_argument("--scene", required=True)
    _model_arg(p)
    p.add_argument("--mock-script", required=True, help="scripted adapter responses (JSON)")
    p.add_argument("--max-attempts", type=int, default=5)
    p.add_argument("--memory", help="memory log file (persisted)")
    p.set_defaults(fn=cmd_loop)

    p = sub.add_parser("ablate", parents=[common], help="embedded vs external critics comparison")
    p.add_argument("--manifest", required=True, help="task manifest JSON")
    _model_arg(p)
    p.add_argument("--max-attempts", type=int, default=5)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p.add_argument("--bind", help="host:port (default RC_BIND_ADDR or 127.0.0.1:8080)")
    _model_arg(p)
    p.add_argument("--scene-dir", help="directory of scene files (default RC_SCENE_DIR or shipped)")
    p.add_argument("--mock-script", help="use a scripted adapter instead of RC_LLM_URL")
    p.add_argument("--memory", help="memory log file (persisted)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("mock-robot", help="run the mock TCP robot endpoint")
    p.add_argument("--bind", help="host:port (default 127.0.0.1:0)")
    p.add_argument("--log", help="frame log file")
    p.add_argument("--dof", type=int, default=6)
    p.set_defaults(fn=cmd_mock_robot)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ProgramSyntaxError, UnknownApiError, ArityError, EmptyProgramError,
            TrajectoryFormatError, SceneParseError, SceneValidationError, ModelError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_DATA
    except UnknownCriticError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"file not found: {e}", file=sys.stderr)
        return EXIT_USAGE
    except GenerationFailureError as e:
        print(f"generation failure: {e}", file=sys.stderr)
        return EXIT_GENERATION


if __name__ == "__main__":
    sys.exit(main())
