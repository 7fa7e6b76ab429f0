"""HTTP service exposing the proof engine.

Stateless: every request carries the model text, the proof script, and the
oracle configuration (fixture entries inline). The CLI is a thin client of
this API; it runs the app in-process by default.
"""
from __future__ import annotations

from typing import Any, Literal, Optional

from fastapi import FastAPI
from pydantic import BaseModel, Field

from . import __version__
from . import syntax as sx
from .calculus import AnnotatedProof, ProofError, ProofNode, check_proof
from .diagnostics import (
    ChoiceError,
    RelaxationOutcome,
    build_report,
    cut_nodes,
    relaxation_oracle,
    resolve_choice,
    validate_choice,
    verify_cut_mutation,
    verify_relaxation,
)
from .labelsets import EMPTY, TrackedLabelSet
from .mutation import DEFAULT_PROVIDER, WeakeningProvider, apply
from .oracle import ChainOracle, FixtureOracle, LinearOracle, SamplingOracle


class OracleSpec(BaseModel):
    kind: Literal["linear", "sampling", "chain", "fixture"] = "chain"
    fixture: list[dict] = Field(default_factory=list)


class MutationChoiceSpec(BaseModel):
    choice: dict[str, Literal["id", "W", "R"]]
    witnesses: dict[str, str] = Field(default_factory=dict)


class CheckRequest(BaseModel):
    model: str
    proof: Any
    chi: Optional[dict] = None
    mode: Literal["parallel", "sequential"] = "parallel"
    oracle: OracleSpec = Field(default_factory=OracleSpec)
    provider: dict[str, list[str]] = Field(default_factory=dict)
    diagnostics: bool = False
    jobs: int = 1


class ApplyRequest(CheckRequest):
    selection: MutationChoiceSpec


class VerifyRequest(CheckRequest):
    selection: MutationChoiceSpec


class DiagnoseRequest(CheckRequest):
    diagnostics: bool = True
    verify: bool = True


class PrintRequest(BaseModel):
    model: str


class NodeReport(BaseModel):
    path: list[int]
    rule: str
    goal: str
    chi: dict
    sigma: dict
    fresh: list[str]
    xi: Optional[dict] = None


class CheckResponse(BaseModel):
    status: Literal["ok", "proof_error", "parse_error", "input_error"]
    message: str = ""
    root_sigma: Optional[dict] = None
    usage: Optional[dict] = None
    nodes: list[NodeReport] = Field(default_factory=list)


class ApplyResponse(BaseModel):
    status: Literal["ok", "proof_error", "parse_error", "input_error", "choice_error"]
    message: str = ""
    model: Optional[str] = None
    witnesses: dict[str, str] = Field(default_factory=dict)


class VerifyResponse(BaseModel):
    status: Literal["ok", "proof_error", "parse_error", "input_error", "choice_error"]
    message: str = ""
    verified: Optional[bool] = None
    model: Optional[str] = None


class CutEntry(BaseModel):
    path: list[int]
    rule: str
    entries: list[dict]
    verified: Optional[bool] = None


class DiagnoseResponse(BaseModel):
    status: Literal["ok", "proof_error", "parse_error", "input_error"]
    message: str = ""
    cuts: list[CutEntry] = Field(default_factory=list)
    usage: Optional[dict] = None
    text: str = ""


class PrintResponse(BaseModel):
    status: Literal["ok", "parse_error"]
    message: str = ""
    model: Optional[str] = None


def _build_oracle(spec: OracleSpec):
    if spec.kind == "linear":
        return ChainOracle([LinearOracle()])
    if spec.kind == "sampling":
        return ChainOracle([SamplingOracle()])
    if spec.kind == "chain":
        return ChainOracle([LinearOracle(), SamplingOracle()])
    return ChainOracle(
        [FixtureOracle.from_json(spec.fixture), LinearOracle(), SamplingOracle()]
    )


class _Inputs:
    def __init__(self, req: CheckRequest):
        self.alloc = sx.LabelAllocator()
        self.model = sx.parse_model(req.model, self.alloc)
        self.script = ProofNode.from_json(req.proof)
        self.oracle = _build_oracle(req.oracle)
        self.provider = (
            WeakeningProvider.from_json(req.provider)
            if req.provider
            else DEFAULT_PROVIDER
        )
        if req.chi:
            by_name = {l.name: l for l in sx.labels_of(self.model)}
            self.chi = TrackedLabelSet.from_json(req.chi, by_name)
        else:
            self.chi = EMPTY

    def check(self, req: CheckRequest) -> AnnotatedProof:
        return check_proof(
            self.model,
            self.script,
            self.chi,
            req.mode,
            self.oracle,
            self.provider,
            diagnostics=req.diagnostics,
            alloc=self.alloc,
            jobs=req.jobs,
        )


def _node_reports(proof: AnnotatedProof) -> list[NodeReport]:
    out = []
    for n in proof.nodes():
        out.append(
            NodeReport(
                path=list(n.path),
                rule=n.rule,
                goal=n.goal.text(),
                chi=n.chi.to_json(),
                sigma=n.sigma.to_json(),
                fresh=sorted(l.name for l in n.fresh),
                xi=None if n.xi is None else n.xi.to_json(),
            )
        )
    return out


app = FastAPI(title="uadl", version=__version__)


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/check", response_model=CheckResponse)
def check(req: CheckRequest) -> CheckResponse:
    try:
        inputs = _Inputs(req)
    except (sx.SyntaxError_, ValueError, KeyError) as exc:
        return CheckResponse(status="parse_error", message=str(exc))
    try:
        proof = inputs.check(req)
    except ProofError as exc:
        return CheckResponse(status="proof_error", message=str(exc))
    usage = build_report(proof, inputs.model)
    return CheckResponse(
        status="ok",
        root_sigma=proof.sigma.to_json(),
        usage=usage.to_json(),
        nodes=_node_reports(proof),
    )


@app.post("/apply", response_model=ApplyResponse)
def apply_choice(req: ApplyRequest) -> ApplyResponse:
    try:
        inputs = _Inputs(req)
    except (sx.SyntaxError_, ValueError, KeyError) as exc:
        return ApplyResponse(status="parse_error", message=str(exc))
    try:
        proof = inputs.check(req)
    except ProofError as exc:
        return ApplyResponse(status="proof_error", message=str(exc))
    try:
        choice = resolve_choice(
            req.selection.choice, proof, req.selection.witnesses
        )
        validate_choice(choice, proof.sigma)
    except ChoiceError as exc:
        return ApplyResponse(status="choice_error", message=str(exc))
    mutated = apply(choice, inputs.model, inputs.provider)
    witnesses: dict[str, str] = {}
    for rec in proof.leaf_records():
        for l, atom in rec.witnesses.items():
            if choice.kinds.get(l) == "W":
                witnesses.setdefault(l.name, sx.print_atom(atom))
    return ApplyResponse(
        status="ok", model=sx.print_model(mutated), witnesses=witnesses
    )


@app.post("/verify", response_model=VerifyResponse)
def verify(req: VerifyRequest) -> VerifyResponse:
    try:
        inputs = _Inputs(req)
    except (sx.SyntaxError_, ValueError, KeyError) as exc:
        return VerifyResponse(status="parse_error", message=str(exc))
    try:
        base = inputs.check(req)
    except ProofError as exc:
        return VerifyResponse(status="proof_error", message=str(exc))
    try:
        choice = resolve_choice(req.selection.choice, base, req.selection.witnesses)
    except ChoiceError as exc:
        return VerifyResponse(status="choice_error", message=str(exc))
    outcome = verify_relaxation(
        inputs.model,
        inputs.script,
        choice,
        inputs.oracle,
        inputs.provider,
        req.mode,
        base=base,
        jobs=req.jobs,
    )
    return VerifyResponse(
        status="ok",
        verified=outcome.ok,
        message=outcome.detail,
        model=outcome.model_text,
    )


@app.post("/diagnose", response_model=DiagnoseResponse)
def diagnose(req: DiagnoseRequest) -> DiagnoseResponse:
    try:
        inputs = _Inputs(req)
    except (sx.SyntaxError_, ValueError, KeyError) as exc:
        return DiagnoseResponse(status="parse_error", message=str(exc))
    try:
        proof = inputs.check(req)
    except ProofError as exc:
        return DiagnoseResponse(status="proof_error", message=str(exc))
    usage = build_report(proof, inputs.model)
    recheck = relaxation_oracle(proof, inputs.oracle, inputs.provider)
    cuts = []
    for node, report in zip(cut_nodes(proof), usage.cuts):
        verified = None
        if req.verify:
            verified = verify_cut_mutation(node, recheck, inputs.provider)
            report.verified = verified
        cuts.append(
            CutEntry(
                path=list(node.path),
                rule=node.rule,
                entries=[e for e in usage.to_json()["cuts"] if e["path"] == list(node.path)][0]["entries"],
                verified=verified,
            )
        )
    return DiagnoseResponse(
        status="ok", cuts=cuts, usage=usage.to_json(), text=usage.render()
    )


@app.post("/print", response_model=PrintResponse)
def print_model(req: PrintRequest) -> PrintResponse:
    try:
        model = sx.parse_model(req.model)
    except sx.SyntaxError_ as exc:
        return PrintResponse(status="parse_error", message=str(exc))
    return PrintResponse(status="ok", model=sx.print_model(model))
