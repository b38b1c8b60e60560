"""Operator command line.

Subcommands:
    serve               run the evaluation service from a config file
    simcell             host a builtin synthetic policy server for a task
    submit              queue an evaluation job against a running service
    metrics consistency compare two rate tables (defaults: bundled fixtures)
    report show         print a finished job's report

Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys


def _cmd_serve(args) -> int:
    import uvicorn

    from .config import ConfigError, default_service_config, load_config
    from .service import ServiceRuntime, create_app

    try:
        config = load_config(args.config) if args.config else default_service_config()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.host:
        config.host = args.host
    if args.port is not None:
        config.port = args.port
    runtime = ServiceRuntime(config)
    runtime.start()
    app = create_app(runtime)
    print(f"serving on http://{config.host}:{config.port} (reports in {config.report_root})")
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    finally:
        runtime.stop()
    return 0


def _cmd_simcell(args) -> int:
    import time

    from .simcell import SyntheticPolicySpec, spawn_builtin_policy_server
    from .tasks import build_default_tasks

    tasks = build_default_tasks()
    if args.task not in tasks:
        print(f"unknown task {args.task!r}; known: {', '.join(sorted(tasks))}", file=sys.stderr)
        return 1
    spec = SyntheticPolicySpec(
        target_success_prob=args.success_prob,
        steps_to_complete=args.steps_to_complete,
        noise_scale=args.noise_scale,
        chunk_size=args.chunk_size,
    )
    handle = spawn_builtin_policy_server(spec, tasks[args.task], seed=args.seed, port=args.port)
    print(f"builtin policy server for {args.task} on {handle.url} (p={args.success_prob})")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        handle.close()
    return 0


def _cmd_submit(args) -> int:
    import requests

    body = {
        "task_id": args.task,
        "policy_url": args.policy,
        "submitter": args.submitter,
    }
    if args.trials is not None:
        body["num_trials"] = args.trials
    try:
        resp = requests.post(f"{args.server.rstrip('/')}/api/jobs", json=body, timeout=10)
    except requests.RequestException as exc:
        print(f"cannot reach service at {args.server}: {exc}", file=sys.stderr)
        return 1
    if resp.status_code != 202:
        print(f"submit rejected ({resp.status_code}): {resp.text}", file=sys.stderr)
        return 1
    job_id = resp.json()["job_id"]
    print(job_id)
    if not args.wait:
        return 0
    import time

    terminal = {"completed", "canceled", "failed"}
    while True:
        detail = requests.get(f"{args.server.rstrip('/')}/api/jobs/{job_id}", timeout=10).json()
        status = detail["status"]
        if status in terminal:
            print(
                f"{status}: {detail['successes']}/{detail['episodes_valid']} successes "
                f"({detail['episodes_total']} episodes total)"
            )
            return 0 if status == "completed" else 1
        time.sleep(0.5)


def _cmd_metrics_consistency(args) -> int:
    from .metrics import (
        CANDIDATE_RATES_CSV,
        MetricsError,
        REFERENCE_RATES_CSV,
        consistency_from_files,
    )

    ref = args.ref or REFERENCE_RATES_CSV
    cand = args.cand or CANDIDATE_RATES_CSV
    try:
        result = consistency_from_files(ref, cand)
    except (MetricsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def _cmd_report_show(args) -> int:
    from .report import ReportStore, UnknownReport

    store = ReportStore(args.root)
    try:
        report = store.read_report(args.job_id)
    except UnknownReport:
        print(f"no report for job {args.job_id} under {args.root}", file=sys.stderr)
        return 1
    job = report["job"]
    print(f"job {job['job_id']}  task={job['task_id']}  status={job['status']}")
    rate = report.get("success_rate")
    if rate:
        print(
            f"success rate {rate['successes']}/{rate['valid']} = {rate['rate']:.3f} "
            f"(95% CI [{rate['ci_low']:.3f}, {rate['ci_high']:.3f}])"
        )
    if report.get("throughput_steps_per_min") is not None:
        print(f"throughput {report['throughput_steps_per_min']:.1f} eval steps/min")
    print(
        f"interventions {report['intervention_count']}, motor-failure re-runs "
        f"{report['motor_failure_reruns']}"
    )
    print(f"{'idx':>4} {'outcome':>8} {'valid':>5} {'steps':>5} {'resets':>6} {'rerun_of':>8}")
    for e in report["episodes"]:
        print(
            f"{e['index']:>4} {str(e['outcome']):>8} {str(e['valid']):>5} "
            f"{e['eval_steps']:>5} {e['reset_attempts']:>6} {str(e['rerun_of']):>8}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robocell", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the evaluation service")
    p.add_argument("--config", help="YAML config file (builtin defaults when omitted)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("simcell", help="host a builtin synthetic policy server")
    p.add_argument("--task", required=True)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--success-prob", type=float, default=0.6)
    p.add_argument("--steps-to-complete", type=int, default=40)
    p.add_argument("--noise-scale", type=float, default=0.0)
    p.add_argument("--chunk-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simcell)

    p = sub.add_parser("submit", help="queue an evaluation job")
    p.add_argument("--task", required=True)
    p.add_argument("--policy", required=True, help="policy server base URL")
    p.add_argument("--trials", type=int)
    p.add_argument("--server", default="http://127.0.0.1:8023")
    p.add_argument("--submitter", default="cli")
    p.add_argument("--wait", action="store_true", help="poll until the job finishes")
    p.set_defaults(func=_cmd_submit)

    p = sub.add_parser("metrics", help="quantitative reports")
    msub = p.add_subparsers(dest="metrics_command", required=True)
    pc = msub.add_parser("consistency", help="pearson + rank-violation between two rate tables")
    pc.add_argument("--ref", help="reference (human) rate CSV")
    pc.add_argument("--cand", help="candidate (automated) rate CSV")
    pc.set_defaults(func=_cmd_metrics_consistency)

    p = sub.add_parser("report", help="inspect stored reports")
    rsub = p.add_subparsers(dest="report_command", required=True)
    ps = rsub.add_parser("show", help="print a job report")
    ps.add_argument("job_id")
    ps.add_argument("--root", default="./reports")
    ps.set_defaults(func=_cmd_report_show)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # surfaced as a diagnostic, not a traceback
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
