"""Command-line front end.

A thin client of the HTTP service: requests are built from local files and
sent either to an in-process app instance (the default) or to a remote
server given with --server.

Exit codes: 0 success, 2 proof failure, 3 parse/input error, 4 rejected
mutation choice.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import httpx

EXIT_OK = 0
EXIT_PROOF = 2
EXIT_PARSE = 3
EXIT_CHOICE = 4

_STATUS_EXIT = {
    "ok": EXIT_OK,
    "proof_error": EXIT_PROOF,
    "parse_error": EXIT_PARSE,
    "input_error": EXIT_PARSE,
    "choice_error": EXIT_CHOICE,
}


def _client(args) -> httpx.Client:
    if getattr(args, "server", None):
        return httpx.Client(base_url=args.server, timeout=300.0)
    from .service import app

    transport = httpx.ASGITransport(app=app)
    return httpx.Client(transport=transport, base_url="http://uadl", timeout=None)


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"uadl: cannot read {path}: {exc}", file=sys.stderr)
        sys.exit(EXIT_PARSE)


def _read_json(path: str):
    text = _read(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"uadl: {path} is not valid JSON: {exc}", file=sys.stderr)
        sys.exit(EXIT_PARSE)


def _oracle_spec(arg: str) -> dict:
    if arg in ("linear", "sampling", "chain"):
        return {"kind": arg}
    if arg.startswith("fixture:"):
        path = arg[len("fixture:") :]
        if not os.path.isabs(path) and not os.path.exists(path):
            search = os.environ.get("UADL_FIXTURE_DIR")
            if search and os.path.exists(os.path.join(search, path)):
                path = os.path.join(search, path)
        return {"kind": "fixture", "fixture": _read_json(path)}
    print(f"uadl: unknown oracle spec {arg!r}", file=sys.stderr)
    sys.exit(EXIT_PARSE)


def _base_request(args) -> dict:
    req: dict = {
        "model": _read(args.model),
        "proof": _read_json(args.proof),
        "mode": args.mode,
        "oracle": _oracle_spec(args.oracle),
        "jobs": args.jobs,
    }
    if getattr(args, "chi", None):
        req["chi"] = _read_json(args.chi)
    if getattr(args, "provider", None):
        req["provider"] = _read_json(args.provider)
    if getattr(args, "diagnostics", False):
        req["diagnostics"] = True
    return req


def _post(args, endpoint: str, payload: dict) -> dict:
    with _client(args) as client:
        resp = client.post(endpoint, json=payload)
    if resp.status_code == 422:
        print(f"uadl: malformed request: {resp.text}", file=sys.stderr)
        sys.exit(EXIT_PARSE)
    resp.raise_for_status()
    return resp.json()


def _finish(data: dict, message_prefix: str = "") -> int:
    status = data.get("status", "input_error")
    code = _STATUS_EXIT.get(status, EXIT_PARSE)
    if code != EXIT_OK:
        print(f"uadl: {message_prefix}{data.get('message', status)}", file=sys.stderr)
    return code


def _write_out(args, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")


def cmd_check(args) -> int:
    data = _post(args, "/check", _base_request(args))
    code = _finish(data)
    if code != EXIT_OK:
        return code
    report = {
        "root_sigma": data["root_sigma"],
        "usage": data["usage"],
        "nodes": data["nodes"],
    }
    _write_out(args, report)
    return EXIT_OK


def _selection(args) -> dict:
    raw = _read_json(args.choice)
    if "choice" not in raw:
        print("uadl: choice file needs a 'choice' object", file=sys.stderr)
        sys.exit(EXIT_PARSE)
    return {"choice": raw["choice"], "witnesses": raw.get("witnesses", {})}


def cmd_apply(args) -> int:
    req = _base_request(args)
    req["selection"] = _selection(args)
    data = _post(args, "/apply", req)
    code = _finish(data)
    if code != EXIT_OK:
        return code
    text = data["model"] + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    for name, witness in sorted(data.get("witnesses", {}).items()):
        print(f"uadl: W witness for {name}: {witness}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    req = _base_request(args)
    req["selection"] = _selection(args)
    data = _post(args, "/verify", req)
    code = _finish(data)
    if code != EXIT_OK:
        return code
    if not data.get("verified"):
        print(f"uadl: relaxation failed: {data.get('message')}", file=sys.stderr)
        return EXIT_PROOF
    print(data.get("message", "ok"))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    req = _base_request(args)
    req["diagnostics"] = True
    req["verify"] = not args.no_verify
    data = _post(args, "/diagnose", req)
    code = _finish(data)
    if code != EXIT_OK:
        return code
    if args.out:
        _write_out(args, {"cuts": data["cuts"], "usage": data["usage"]})
    print(data.get("text", ""))
    return EXIT_OK


def cmd_print(args) -> int:
    data = _post(args, "/print", {"model": _read(args.model)})
    code = _finish(data)
    if code != EXIT_OK:
        return code
    text = data["model"] + "\n"
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, with_proof: bool = True) -> None:
    p.add_argument("--model", required=True, help="model file (grammar text)")
    if with_proof:
        p.add_argument("--proof", required=True, help="proof script (JSON)")
        p.add_argument("--chi", help="input label-set file (JSON)")
        p.add_argument(
            "--mode", choices=["parallel", "sequential"], default="parallel"
        )
        p.add_argument(
            "--oracle",
            default="chain",
            help="linear | sampling | chain | fixture:<path>",
        )
        p.add_argument("--provider", help="weakening candidates file (JSON)")
        p.add_argument("--jobs", type=int, default=1, help="branch concurrency")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--server", help="remote service URL (default: in-process)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uadl", description="usage-aware proof engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="check a proof script and report usage")
    _add_common(p)
    p.add_argument("--diagnostics", action="store_true", help="track cut usage")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("apply", help="apply a mutation choice to the model")
    _add_common(p)
    p.add_argument("--choice", required=True, help="mutation choice file (JSON)")
    p.set_defaults(fn=cmd_apply)

    p = sub.add_parser("verify", help="re-check the proof under a choice")
    _add_common(p)
    p.add_argument("--choice", required=True, help="mutation choice file (JSON)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("diagnose", help="report and verify cut diagnostics")
    _add_common(p)
    p.add_argument("--no-verify", action="store_true", help="skip replay checks")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("print", help="reprint a model canonically")
    _add_common(p, with_proof=False)
    p.set_defaults(fn=cmd_print)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8450)
    p.set_defaults(fn=cmd_serve)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
