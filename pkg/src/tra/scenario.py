"""Scenario files: declarative test worlds for the harness.

A scenario declares the world (component model, stores, queues, endpoints,
broker tables, process definitions, service bindings) and a script of
actions to run against it. Service bindings give exported services a small
effect list instead of real code: put/get/delete/send against resources,
plus nested calls into other components' exported services.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping

from .errors import ScenarioError

KNOWN_OPS = {
    "begin",
    "get",
    "put",
    "delete",
    "send",
    "receive",
    "propagate",
    "commit",
    "rollback",
    "crash",
    "recover",
    "invoke",
    "invoke_via_queue",
    "run_process",
    "assert",
}

KNOWN_ASSERT_KINDS = {"store", "queue", "txn", "process", "process_var"}

KNOWN_EFFECTS = {"put", "delete", "get", "send", "call"}


@dataclass
class ResourceDecl:
    name: str
    initial: object
    prepare_delay: int = 0


@dataclass
class BindingDecl:
    component: str
    service: str
    effects: list = field(default_factory=list)
    response: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    seed: int
    base_dir: str
    prepare_budget: int | None
    model_doc: dict | None
    stores: list[ResourceDecl]
    queues: list[ResourceDecl]
    endpoints: list[dict]
    adapter_budgets: dict[str, int]
    tables: list[dict]
    processes: list[dict]
    bindings: list[BindingDecl]
    serve_queues: list[str]
    sweep_targets: list[str]
    actions: list[dict]

    def with_actions(self, actions: list[dict]) -> "Scenario":
        clone = Scenario(**{**self.__dict__})
        clone.actions = list(actions)
        return clone

    def last_commit_index(self) -> int | None:
        last = None
        for i, a in enumerate(self.actions):
            if a.get("op") == "commit":
                last = i
        return last


def _resource_decls(raw, what: str) -> list[ResourceDecl]:
    out = []
    for entry in raw:
        if isinstance(entry, str):
            out.append(ResourceDecl(entry, {} if what == "store" else []))
            continue
        if not isinstance(entry, Mapping) or "name" not in entry:
            raise ScenarioError(f"{what} declaration must be a name or an object with one")
        default = {} if what == "store" else []
        out.append(
            ResourceDecl(
                name=entry["name"],
                initial=entry.get("initial", default),
                prepare_delay=int(entry.get("prepare_delay", 0)),
            )
        )
    return out


def _inline_or_file(entry, base_dir: str, what: str) -> dict:
    if isinstance(entry, Mapping):
        return dict(entry)
    if isinstance(entry, str):
        path = os.path.join(base_dir, entry)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except OSError as exc:
            raise ScenarioError(f"cannot read {what} file {entry!r}: {exc}") from exc
        except ValueError as exc:
            raise ScenarioError(f"{what} file {entry!r} is not valid JSON: {exc}") from exc
    raise ScenarioError(f"{what} must be inline or a file path")


def load_scenario(doc: Mapping, base_dir: str = ".") -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    name = doc.get("name")
    if not name or not isinstance(name, str):
        raise ScenarioError("scenario needs a name")

    model_doc = None
    if "model" in doc:
        model_doc = dict(doc["model"])
    elif "manifest" in doc:
        model_doc = _inline_or_file(doc["manifest"], base_dir, "manifest")

    actions = []
    for i, action in enumerate(doc.get("actions", ())):
        if not isinstance(action, Mapping) or "op" not in action:
            raise ScenarioError(f"action {i}: not an object with an op")
        if action["op"] not in KNOWN_OPS:
            raise ScenarioError(f"action {i}: unknown op {action['op']!r}")
        if action["op"] == "assert" and action.get("kind") not in KNOWN_ASSERT_KINDS:
            raise ScenarioError(f"action {i}: unknown assert kind {action.get('kind')!r}")
        actions.append(dict(action))

    bindings = []
    for raw in doc.get("bindings", ()):
        try:
            effects = list(raw.get("effects", ()))
            for eff in effects:
                if eff.get("do") not in KNOWN_EFFECTS:
                    raise ScenarioError(f"binding effect {eff.get('do')!r} unknown")
            bindings.append(
                BindingDecl(
                    component=raw["component"],
                    service=raw["service"],
                    effects=effects,
                    response=dict(raw.get("response", {})),
                )
            )
        except KeyError as exc:
            raise ScenarioError(f"binding missing {exc}") from exc

    return Scenario(
        name=name,
        seed=int(doc.get("seed", 0)),
        base_dir=base_dir,
        prepare_budget=int(doc["prepare_budget"]) if "prepare_budget" in doc else None,
        model_doc=model_doc,
        stores=_resource_decls(doc.get("stores", ()), "store"),
        queues=_resource_decls(doc.get("queues", ()), "queue"),
        endpoints=[dict(e) for e in doc.get("endpoints", ())],
        adapter_budgets={
            e["endpoint_id"]: int(e["budget"]) for e in doc.get("endpoints", ()) if "budget" in e
        },
        tables=[_inline_or_file(t, base_dir, "broker table") for t in doc.get("tables", ())],
        processes=[_inline_or_file(p, base_dir, "process") for p in doc.get("processes", ())],
        bindings=bindings,
        serve_queues=list(doc.get("serve_queues", ())),
        sweep_targets=list(doc.get("sweep_targets", ())),
        actions=actions,
    )


def load_scenario_file(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path!r}: {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"scenario {path!r} is not valid JSON: {exc}") from exc
    return load_scenario(doc, base_dir=os.path.dirname(os.path.abspath(path)))
