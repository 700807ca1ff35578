"""Table-driven message broker for legacy application integration.

A broker table turns one service request into a set of fixed-width record
exchanges with legacy endpoints: independent calls dispatch together in
dependency stages (parallel in simulated time), dependent calls wait for the
fields they consume, and the service response is aggregated from the decoded
replies. A sequential dispatch mode runs the same calls one at a time in
topological order; both modes must produce identical results, which the test
suite leans on.

Endpoints are scripted simulators: rules matched against the decoded request
decide whether the endpoint replies, stalls, errors, or returns garbage.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Callable, Mapping

from .errors import CodecError, InvokeError, TableError
from .model import ServiceSignature, FieldDef
from .records import MessageSpec, decode_record, encode_record
from .sim import Tracer

DEFAULT_REPLY_BUDGET = 100


def _coerce(kind: str, value, where: str):
    """Type a JSON-ish value per a signature field kind."""
    if kind == "text":
        if isinstance(value, str):
            return value
        raise InvokeError(f"{where}: expected text, got {value!r}")
    if kind == "integer":
        if isinstance(value, bool):
            raise InvokeError(f"{where}: expected integer, got a bool")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value, 10)
            except ValueError:
                pass
        raise InvokeError(f"{where}: expected integer, got {value!r}")
    if kind == "decimal":
        if isinstance(value, bool):
            raise InvokeError(f"{where}: expected decimal, got a bool")
        try:
            return value if isinstance(value, Decimal) else Decimal(str(value))
        except InvalidOperation:
            raise InvokeError(f"{where}: expected decimal, got {value!r}") from None
    raise InvokeError(f"{where}: unknown kind {kind!r}")


@dataclass(frozen=True)
class LegacyCall:
    """One record exchange with one endpoint, inside a broker table."""

    call_id: str
    endpoint: str
    request_spec: MessageSpec
    request_map: Mapping[str, str]
    response_spec: MessageSpec
    depends_on: frozenset[str]


@dataclass
class BrokerTable:
    service: ServiceSignature
    calls: list[LegacyCall]
    aggregate: dict[str, list[str]]


def _load_signature(doc: Mapping) -> ServiceSignature:
    def fields(raw):
        return tuple(FieldDef(fd["name"], fd["kind"]) for fd in raw)

    return ServiceSignature(
        name=doc["name"],
        request=fields(doc.get("request", ())),
        response=fields(doc.get("response", ())),
        transactional=bool(doc.get("transactional", False)),
    )


def load_table(doc: Mapping) -> BrokerTable:
    """Parse a broker table document. Cross-reference checks happen at
    registration, when adapters are known."""
    try:
        service = _load_signature(doc["service"])
        calls = []
        for c in doc["calls"]:
            calls.append(
                LegacyCall(
                    call_id=c["call_id"],
                    endpoint=c["endpoint"],
                    request_spec=MessageSpec.from_dict(c["request_spec"]),
                    request_map=dict(c["request_map"]),
                    response_spec=MessageSpec.from_dict(c["response_spec"]),
                    depends_on=frozenset(c.get("depends_on", ())),
                )
            )
        aggregate = {k: list(v) for k, v in doc.get("aggregate", {}).items()}
        return BrokerTable(service=service, calls=calls, aggregate=aggregate)
    except (KeyError, TypeError) as exc:
        raise TableError(f"bad broker table: {exc}") from exc
    except CodecError as exc:
        raise TableError(f"bad broker table: {exc}") from exc


def load_table_file(path: str) -> BrokerTable:
    with open(path, "r", encoding="utf-8") as fh:
        return load_table(json.load(fh))


@dataclass
class ScriptRule:
    """First matching rule wins. With no reply/error/garbage the endpoint
    never answers and the caller times out at its budget."""

    match: dict = field(default_factory=dict)
    delay: int = 0
    reply: dict | None = None
    error: bool = False
    garbage: str | None = None

    def __post_init__(self):
        actions = sum((self.reply is not None, self.error, self.garbage is not None))
        if actions > 1:
            raise TableError("script rule has more than one action")
        if self.delay < 0:
            raise TableError("script delay must be >= 0")


class LegacyEndpoint:
    """Scripted stand-in for a legacy application."""

    def __init__(self, endpoint_id: str, script: list[ScriptRule] | None = None) -> None:
        self.endpoint_id = endpoint_id
        self.script = list(script or ())
        self.down = False

    def crash(self) -> None:
        self.down = True

    def recover(self) -> None:
        self.down = False

    def match(self, request_fields: Mapping) -> ScriptRule | None:
        for rule in self.script:
            if all(
                str(request_fields.get(k)) == str(v) for k, v in rule.match.items()
            ):
                return rule
        return None

    @classmethod
    def from_doc(cls, doc: Mapping) -> "LegacyEndpoint":
        rules = [
            ScriptRule(
                match=dict(r.get("match", {})),
                delay=int(r.get("delay", 0)),
                reply=r.get("reply"),
                error=bool(r.get("error", False)),
                garbage=r.get("garbage"),
            )
            for r in doc.get("script", ())
        ]
        return cls(doc["endpoint_id"], rules)


@dataclass
class Adapter:
    """Connects the broker to one endpoint, with a reply-time budget."""

    endpoint: LegacyEndpoint
    budget: int = DEFAULT_REPLY_BUDGET

    @property
    def endpoint_id(self) -> str:
        return self.endpoint.endpoint_id


@dataclass
class _Completion:
    at: int
    tie: float
    call: LegacyCall
    kind: str  # reply | timeout | error
    record: str | None
    detail: str = ""


class MessageBroker:
    """Routes service requests to legacy endpoints per registered tables."""

    def __init__(self, tracer: Tracer | None = None, rng: random.Random | None = None) -> None:
        self.tracer = tracer if tracer is not None else Tracer()
        self.rng = rng if rng is not None else random.Random(0)
        self.adapters: dict[str, Adapter] = {}
        self.tables: dict[str, BrokerTable] = {}

    # -- registration -----------------------------------------------------

    def register_adapter(self, adapter: Adapter) -> None:
        self.adapters[adapter.endpoint_id] = adapter

    def register_table(self, table: BrokerTable) -> None:
        name = table.service.name
        if name in self.tables:
            raise TableError(f"service {name} already registered")
        ids = [c.call_id for c in table.calls]
        if len(set(ids)) != len(ids):
            raise TableError(f"{name}: duplicate call ids")
        by_id = {c.call_id: c for c in table.calls}
        req_fields = {f.name: f.kind for f in table.service.request}
        resp_kinds = {}
        for call in table.calls:
            where = f"{name}.{call.call_id}"
            if call.endpoint not in self.adapters:
                raise TableError(f"{where}: no adapter for endpoint {call.endpoint}")
            for dep in call.depends_on:
                if dep not in by_id:
                    raise TableError(f"{where}: unknown dependency {dep}")
            spec_names = set(call.request_spec.field_names)
            mapped = set(call.request_map)
            if mapped != spec_names:
                raise TableError(
                    f"{where}: request map must cover the request spec exactly "
                    f"(missing {sorted(spec_names - mapped)}, extra {sorted(mapped - spec_names)})"
                )
            for fname, src in call.request_map.items():
                fkind = call.request_spec.field(fname).kind
                if src.startswith("req."):
                    rf = src[4:]
                    if rf not in req_fields:
                        raise TableError(f"{where}: {src} is not a request field")
                    if req_fields[rf] != fkind:
                        raise TableError(f"{where}: {src} kind mismatch for {fname}")
                elif src.startswith("lit:"):
                    pass
                elif src.startswith("call:"):
                    ref = src[5:]
                    if "." not in ref:
                        raise TableError(f"{where}: bad source {src}")
                    dep_id, dep_field = ref.split(".", 1)
                    if dep_id not in call.depends_on:
                        raise TableError(f"{where}: {src} must name a declared dependency")
                    dep_call = by_id[dep_id]
                    if dep_field not in dep_call.response_spec.field_names:
                        raise TableError(f"{where}: {src} names an unknown reply field")
                    if dep_call.response_spec.field(dep_field).kind != fkind:
                        raise TableError(f"{where}: {src} kind mismatch for {fname}")
                else:
                    raise TableError(f"{where}: bad source {src!r} for {fname}")
            for f in call.response_spec.fields:
                resp_kinds[(call.call_id, f.name)] = f.kind
        # every response field must be assembled from somewhere
        service_resp = {f.name: f.kind for f in table.service.response}
        if set(table.aggregate) != set(service_resp):
            raise TableError(
                f"{name}: aggregation must cover the response exactly "
                f"(missing {sorted(set(service_resp) - set(table.aggregate))}, "
                f"extra {sorted(set(table.aggregate) - set(service_resp))})"
            )
        for rfield, sources in table.aggregate.items():
            if not sources:
                raise TableError(f"{name}: response field {rfield} has no sources")
            for src in sources:
                if not src.startswith("call:") or "." not in src[5:]:
                    raise TableError(f"{name}: bad aggregation source {src!r}")
                cid, cfield = src[5:].split(".", 1)
                if (cid, cfield) not in resp_kinds:
                    raise TableError(f"{name}: aggregation source {src} does not exist")
                if resp_kinds[(cid, cfield)] != service_resp[rfield]:
                    raise TableError(f"{name}: aggregation source {src} kind mismatch")
        self._stages(table)  # raises on dependency cycles
        self.tables[name] = table

    def interface(self) -> dict[str, ServiceSignature]:
        """The aggregated operations this broker exposes."""
        return {name: t.service for name, t in sorted(self.tables.items())}

    # -- dispatch -----------------------------------------------------------

    def _stages(self, table: BrokerTable) -> list[list[LegacyCall]]:
        by_id = {c.call_id: c for c in table.calls}
        depth: dict[str, int] = {}
        visiting: set[str] = set()

        def visit(cid: str) -> int:
            if cid in depth:
                return depth[cid]
            if cid in visiting:
                raise TableError(f"{table.service.name}: dependency cycle through {cid}")
            visiting.add(cid)
            call = by_id[cid]
            d = 0 if not call.depends_on else 1 + max(visit(x) for x in call.depends_on)
            visiting.discard(cid)
            depth[cid] = d
            return d

        for cid in by_id:
            visit(cid)
        stages: dict[int, list[LegacyCall]] = {}
        for cid, d in depth.items():
            stages.setdefault(d, []).append(by_id[cid])
        return [sorted(stages[d], key=lambda c: c.call_id) for d in sorted(stages)]

    def _typed_request(self, sig: ServiceSignature, request: Mapping) -> dict:
        out = {}
        for f in sig.request:
            if f.name not in request:
                raise InvokeError(f"{sig.name}: request missing field {f.name}")
            out[f.name] = _coerce(f.kind, request[f.name], f"{sig.name}.{f.name}")
        return out

    def _resolve_map(self, call: LegacyCall, req: Mapping, results: Mapping) -> dict:
        values = {}
        for fname, src in call.request_map.items():
            if src.startswith("req."):
                values[fname] = req[src[4:]]
            elif src.startswith("lit:"):
                values[fname] = src[4:]
            else:  # call:id.field, validated at registration
                cid, cfield = src[5:].split(".", 1)
                values[fname] = results[cid][cfield]
        return values

    def _exchange(self, call: LegacyCall, record: str) -> tuple[int, str, str | None, str]:
        """Simulated wire exchange: returns (delay, kind, record, detail)."""
        adapter = self.adapters[call.endpoint]
        ep = adapter.endpoint
        if ep.down:
            return 0, "error", None, "endpoint down"
        request_fields = decode_record(call.request_spec, record)
        rule = ep.match(request_fields)
        if rule is None:
            return adapter.budget, "timeout", None, "no script rule matched"
        if rule.error:
            kind, rec, detail = "error", None, "endpoint error"
        elif rule.garbage is not None:
            kind, rec, detail = "reply", rule.garbage, ""
        elif rule.reply is not None:
            typed = {}
            for f in call.response_spec.fields:
                if f.name not in rule.reply:
                    raise InvokeError(
                        f"call {call.call_id}: script reply missing field {f.name}"
                    )
                typed[f.name] = _coerce(
                    f.kind, rule.reply[f.name], f"call {call.call_id}.{f.name}"
                )
            try:
                rec = encode_record(call.response_spec, typed)
            except CodecError as exc:
                raise InvokeError(f"call {call.call_id}: script reply: {exc}") from exc
            kind, detail = "reply", ""
        else:
            return adapter.budget, "timeout", None, "endpoint never replied"
        if rule.delay > adapter.budget:
            return adapter.budget, "timeout", None, f"no reply within {adapter.budget}"
        return rule.delay, kind, rec, detail

    def _settle(self, comp: _Completion, results: dict) -> None:
        """Account one completed exchange, raising on failures."""
        call = comp.call
        self.tracer.clock.advance_to(comp.at)
        if comp.kind == "timeout":
            self.tracer.emit("broker_timeout", call=call.call_id, endpoint=call.endpoint, at=comp.at)
            raise InvokeError(f"call {call.call_id}: timeout ({comp.detail})")
        if comp.kind == "error":
            self.tracer.emit("broker_error", call=call.call_id, endpoint=call.endpoint, at=comp.at)
            raise InvokeError(f"call {call.call_id}: {comp.detail}")
        try:
            fields = decode_record(call.response_spec, comp.record)
        except CodecError as exc:
            self.tracer.emit("broker_bad_reply", call=call.call_id, endpoint=call.endpoint, at=comp.at)
            raise InvokeError(f"call {call.call_id}: undecodable reply: {exc}") from exc
        self.tracer.emit("broker_reply", call=call.call_id, endpoint=call.endpoint, at=comp.at)
        results[call.call_id] = fields

    def invoke(self, service: str, request: Mapping) -> dict:
        """Dispatch with per-stage parallelism (the default mode)."""
        table = self.tables.get(service)
        if table is None:
            raise InvokeError(f"no broker table for service {service!r}")
        req = self._typed_request(table.service, request)
        results: dict[str, dict] = {}
        for stage in self._stages(table):
            t0 = self.tracer.clock.now
            completions = []
            for call in stage:
                record = self._encode_request(call, req, results)
                self.tracer.emit(
                    "broker_dispatch", call=call.call_id, endpoint=call.endpoint, mode="staged"
                )
                delay, kind, rec, detail = self._exchange(call, record)
                completions.append(
                    _Completion(t0 + delay, self.rng.random(), call, kind, rec, detail)
                )
            for comp in sorted(completions, key=lambda c: (c.at, c.tie)):
                self._settle(comp, results)
        return self._aggregate(table, results)

    def invoke_sequential(self, service: str, request: Mapping) -> dict:
        """Dispatch the same calls one at a time in topological order."""
        table = self.tables.get(service)
        if table is None:
            raise InvokeError(f"no broker table for service {service!r}")
        req = self._typed_request(table.service, request)
        results: dict[str, dict] = {}
        for stage in self._stages(table):
            for call in stage:
                record = self._encode_request(call, req, results)
                self.tracer.emit(
                    "broker_dispatch", call=call.call_id, endpoint=call.endpoint, mode="sequential"
                )
                t0 = self.tracer.clock.now
                delay, kind, rec, detail = self._exchange(call, record)
                self._settle(_Completion(t0 + delay, 0.0, call, kind, rec, detail), results)
        return self._aggregate(table, results)

    def _encode_request(self, call: LegacyCall, req: Mapping, results: Mapping) -> str:
        values = self._resolve_map(call, req, results)
        try:
            return encode_record(call.request_spec, values)
        except CodecError as exc:
            raise InvokeError(f"call {call.call_id}: request encode: {exc}") from exc

    def _aggregate(self, table: BrokerTable, results: Mapping) -> dict:
        out = {}
        for f in table.service.response:
            for src in table.aggregate[f.name]:
                cid, cfield = src[5:].split(".", 1)
                if cid in results and cfield in results[cid]:
                    out[f.name] = results[cid][cfield]
                    break
            else:
                raise InvokeError(f"{table.service.name}: no source produced {f.name}")
        return out

    # -- transactional access path ---------------------------------------------

    def invoke_via_queue(self, ctx, queue, service: str, request: Mapping, reply_to: str) -> None:
        """Stage a brokered invocation inside a transaction: the request
        message only becomes visible to the broker if the transaction
        commits."""
        payload = json.dumps(
            {"service": service, "request": dict(request), "reply_to": reply_to},
            sort_keys=True,
            default=str,
        )
        queue.send(ctx, payload)
        self.tracer.emit("broker_staged", txn=ctx.id, service=service, queue=queue.rm_id)

    def drain(self, coordinator, queue, resolve_queue: Callable[[str], object]) -> int:
        """Serve committed request messages: each one is consumed, invoked,
        and answered in its own transaction, exactly one reply per request
        (failed invocations reply ok=false rather than losing the request)."""
        processed = 0
        while True:
            ctx = coordinator.begin("broker")
            msg = queue.receive(ctx)
            if msg is None:
                coordinator.rollback(ctx)
                break
            reply_queue = None
            try:
                doc = json.loads(msg)
                service = doc["service"]
                reply_queue = resolve_queue(doc["reply_to"])
                request = doc["request"]
            except (ValueError, KeyError, TypeError):
                # Undeliverable junk: consume it so it cannot wedge the queue.
                self.tracer.emit("broker_poison", queue=queue.rm_id)
                coordinator.commit(ctx)
                processed += 1
                continue
            try:
                response = self.invoke(service, request)
                payload = {"service": service, "ok": True, "response": response}
            except InvokeError as exc:
                payload = {"service": service, "ok": False, "error": str(exc)}
            reply_queue.send(ctx, json.dumps(payload, sort_keys=True, default=str))
            coordinator.commit(ctx)
            processed += 1
        return processed
