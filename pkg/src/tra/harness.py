"""Scenario runner, deterministic reports, and the crash sweep.

The runner builds the world a scenario declares, executes the action script,
and emits a structured report: final resource states, transaction outcomes,
assertion results, the full event trace, and the coordinator log's view of
every transaction. Identical (scenario, seed, faults) inputs produce byte
identical structured reports.

crash_sweep() is the atomicity oracle: it runs the scenario once cleanly to
capture the committed state, once with the final commit turned into a
rollback to capture the aborted state, then once per (target, crash point)
combination with a fault armed at that final commit. Every faulted run, after
recovery, must land exactly on one of the two captured states.
"""

from __future__ import annotations

import json
import os
import random
import tempfile

from .broker import (
    DEFAULT_REPLY_BUDGET,
    Adapter,
    LegacyEndpoint,
    MessageBroker,
    load_table,
)
from .coordinator import DEFAULT_PREPARE_BUDGET, Coordinator, replay_log
from .errors import ScenarioError, TraError
from .faults import (
    ALL_POINTS,
    COORDINATOR_TARGET,
    CoordinatorCrash,
    FaultInjector,
    FaultSpec,
)
from .model import load_manifest
from .process import ProcessEngine, load_definition
from .resources import ManagedStore, TxnQueue, UnmanagedResource
from .scenario import BindingDecl, Scenario, load_scenario_file
from .sim import Tracer


def _stringify(value):
    if isinstance(value, dict):
        return {k: _stringify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_stringify(v) for v in value]
    if value is None or isinstance(value, (bool, int, str)):
        return value
    return str(value)


class Runner:
    """One scenario execution in an isolated working directory."""

    def __init__(
        self,
        scenario: Scenario,
        workdir: str,
        seed: int | None = None,
        faults: list[FaultSpec] | None = None,
        arm: str = "always",
    ) -> None:
        os.makedirs(workdir, exist_ok=True)
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.rng = random.Random(self.seed)
        self.tracer = Tracer()
        self.faults = list(faults or ())
        self.injector = FaultInjector(self.faults)
        self.arm = arm
        if arm == "final_commit":
            self.injector.armed = False
        elif arm != "always":
            raise ScenarioError(f"unknown arm policy {arm!r}")

        model = load_manifest(scenario.model_doc) if scenario.model_doc is not None else None
        budget = scenario.prepare_budget
        self.coordinator = Coordinator(
            os.path.join(workdir, "coordinator.log"),
            tracer=self.tracer,
            model=model,
            injector=self.injector,
            prepare_budget=budget if budget is not None else DEFAULT_PREPARE_BUDGET,
        )

        self.stores: dict[str, ManagedStore] = {}
        for decl in scenario.stores:
            store = ManagedStore(
                decl.name,
                os.path.join(workdir, f"rm-{decl.name}.log"),
                tracer=self.tracer,
                prepare_delay=decl.prepare_delay,
            )
            if not isinstance(decl.initial, dict):
                raise ScenarioError(f"store {decl.name}: initial state must be an object")
            store.seed({str(k): str(v) for k, v in decl.initial.items()})
            self.coordinator.register(store)
            self.stores[decl.name] = store

        self.queues: dict[str, TxnQueue] = {}
        for decl in scenario.queues:
            queue = TxnQueue(
                decl.name,
                os.path.join(workdir, f"rm-{decl.name}.log"),
                tracer=self.tracer,
                prepare_delay=decl.prepare_delay,
            )
            if not isinstance(decl.initial, list):
                raise ScenarioError(f"queue {decl.name}: initial state must be a list")
            queue.seed([str(m) for m in decl.initial])
            self.coordinator.register(queue)
            self.queues[decl.name] = queue

        self.broker = MessageBroker(tracer=self.tracer, rng=self.rng)
        self.endpoints: dict[str, LegacyEndpoint] = {}
        for doc in scenario.endpoints:
            ep = LegacyEndpoint.from_doc(doc)
            self.endpoints[ep.endpoint_id] = ep
            self.broker.register_adapter(
                Adapter(ep, scenario.adapter_budgets.get(ep.endpoint_id, DEFAULT_REPLY_BUDGET))
            )
            # registering the endpoint makes enlist attempts fail clearly
            self.coordinator.register(UnmanagedResource(ep.endpoint_id))
        for tdoc in scenario.tables:
            self.broker.register_table(load_table(tdoc))

        self.engine = None
        if scenario.processes:
            if model is None:
                raise ScenarioError("processes need a component model")
            self.engine = ProcessEngine(model, self.coordinator)
            for pdoc in scenario.processes:
                self.engine.define(load_definition(pdoc))

        for binding in scenario.bindings:
            self.coordinator.bind_service(
                binding.component, binding.service, self._make_handler(binding)
            )

        rm_names = set(self.stores) | set(self.queues)
        for spec in self.faults:
            if spec.target != COORDINATOR_TARGET and spec.target not in rm_names:
                raise ScenarioError(
                    f"fault target {spec.target!r} is not the coordinator or a declared "
                    "store/queue (endpoint behavior is scripted in the scenario, not injected)"
                )

        self.txns: dict[str, object] = {}
        self.instances: dict[str, object] = {}
        self.asserts: list[dict] = []
        self.errors: list[str] = []
        self.recovery_totals: dict | None = None

    # -- service bindings --------------------------------------------------

    def _make_handler(self, binding: BindingDecl):
        def resolve(src, request, regs):
            if not isinstance(src, str):
                raise ScenarioError(f"binding source must be a string, got {src!r}")
            if src.startswith("req."):
                name = src[4:]
                if name not in request:
                    raise ScenarioError(f"binding wants missing request field {name!r}")
                return request[name]
            if src.startswith("lit:"):
                return src[4:]
            if src.startswith("eff."):
                path = src[4:].split(".")
                value = regs
                for part in path:
                    if not isinstance(value, dict) or part not in value:
                        raise ScenarioError(f"binding source {src!r} is unset")
                    value = value[part]
                return value
            raise ScenarioError(f"bad binding source {src!r}")

        def handler(ctx, request):
            regs: dict = {}
            for eff in binding.effects:
                do = eff["do"]
                if do == "put":
                    self._store(eff["store"]).put(
                        ctx,
                        resolve(eff["key"], request, regs),
                        resolve(eff["value"], request, regs),
                    )
                elif do == "delete":
                    self._store(eff["store"]).delete(ctx, resolve(eff["key"], request, regs))
                elif do == "get":
                    value = self._store(eff["store"]).get(
                        ctx, resolve(eff["key"], request, regs)
                    )
                    regs[eff["into"]] = value
                elif do == "send":
                    self._queue(eff["queue"]).send(
                        ctx, resolve(eff["message"], request, regs)
                    )
                elif do == "call":
                    sub_request = {
                        f: resolve(s, request, regs) for f, s in eff.get("request", {}).items()
                    }
                    response = self.coordinator.propagate(
                        ctx, eff["component"], eff["service"], sub_request
                    )
                    if "into" in eff:
                        regs[eff["into"]] = response
            return {
                f: resolve(src, request, regs) for f, src in binding.response.items()
            }

        return handler

    # -- lookups ----------------------------------------------------------

    def _store(self, name) -> ManagedStore:
        if name not in self.stores:
            raise ScenarioError(f"no store declared as {name!r}")
        return self.stores[name]

    def _queue(self, name) -> TxnQueue:
        if name not in self.queues:
            raise ScenarioError(f"no queue declared as {name!r}")
        return self.queues[name]

    def _ctx(self, action):
        name = action.get("txn")
        if name not in self.txns:
            raise ScenarioError(f"unknown transaction name {name!r}")
        return self.txns[name]

    # -- the script -------------------------------------------------------------

    def run(self) -> dict:
        last_commit = self.scenario.last_commit_index()
        stopped_by_fault = False
        for idx, action in enumerate(self.scenario.actions):
            if self.arm == "final_commit":
                self.injector.armed = idx == last_commit
            expect_error = action.get("expect_error")
            op = action.get("op")
            try:
                self._dispatch(action)
                if expect_error is not None:
                    self.asserts.append(
                        {
                            "desc": f"action {idx} ({op}) raises {expect_error!r}",
                            "ok": False,
                        }
                    )
            except CoordinatorCrash:
                self.coordinator.crash()
            except TraError as exc:
                if expect_error is not None:
                    self.asserts.append(
                        {
                            "desc": f"action {idx} ({op}) raises {expect_error!r}",
                            "ok": expect_error in str(exc),
                        }
                    )
                else:
                    self.errors.append(f"action {idx} ({op}): {exc}")
            if self.injector.any_fired():
                # a crash point was hit: the rest of the script is off
                stopped_by_fault = True
                break
        if stopped_by_fault:
            self._recover_all()
        return self._report(stopped_by_fault)

    def close(self) -> None:
        self.coordinator.close()
        for rm in list(self.stores.values()) + list(self.queues.values()):
            rm.close()

    def _dispatch(self, action: dict) -> None:
        op = action["op"]
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise ScenarioError(f"unknown action op {op!r}")
        handler(action)

    def _op_begin(self, action):
        name = action.get("txn")
        if not name or name in self.txns:
            raise ScenarioError(f"begin needs a fresh transaction name, got {name!r}")
        self.txns[name] = self.coordinator.begin(action.get("originator", "client"))

    def _op_get(self, action):
        value = self._store(action["store"]).get(self._ctx(action), action["key"])
        if "expect" in action:
            self.asserts.append(
                {
                    "desc": f"get {action['store']}[{action['key']}] == {action['expect']!r}",
                    "ok": value == action["expect"],
                }
            )

    def _op_put(self, action):
        self._store(action["store"]).put(self._ctx(action), action["key"], action["value"])

    def _op_delete(self, action):
        self._store(action["store"]).delete(self._ctx(action), action["key"])

    def _op_send(self, action):
        self._queue(action["queue"]).send(self._ctx(action), action["message"])

    def _op_receive(self, action):
        value = self._queue(action["queue"]).receive(self._ctx(action))
        if "expect" in action:
            self.asserts.append(
                {
                    "desc": f"receive {action['queue']} == {action['expect']!r}",
                    "ok": value == action["expect"],
                }
            )

    def _op_propagate(self, action):
        response = self.coordinator.propagate(
            self._ctx(action), action["component"], action["service"], action.get("request", {})
        )
        if "expect" in action:
            self.asserts.append(
                {
                    "desc": f"propagate {action['component']}.{action['service']} response",
                    "ok": _stringify(response) == _stringify(action["expect"]),
                }
            )

    def _op_commit(self, action):
        status = self.coordinator.commit(self._ctx(action))
        if "expect" in action:
            self.asserts.append(
                {
                    "desc": f"commit {action['txn']} -> {action['expect']}",
                    "ok": status.value == action["expect"],
                }
            )
        if not self.injector.any_fired():
            self._serve_queues()

    def _op_rollback(self, action):
        self.coordinator.rollback(self._ctx(action))

    def _op_crash(self, action):
        target = action.get("target")
        if target == COORDINATOR_TARGET:
            self.coordinator.crash()
        elif target in self.stores:
            self.stores[target].crash()
        elif target in self.queues:
            self.queues[target].crash()
        elif target in self.endpoints:
            self.endpoints[target].crash()
            self.tracer.emit("crash", who=target)
        else:
            raise ScenarioError(f"crash target {target!r} not declared")

    def _op_recover(self, action):
        self._recover_all()

    def _op_invoke(self, action):
        if "expect_error" in action:
            # surfaced through the generic expect_error handling in run()
            self.broker.invoke(action["service"], action.get("request", {}))
            return
        response = self.broker.invoke(action["service"], action.get("request", {}))
        self.tracer.emit(
            "invoked", service=action["service"], response=_stringify(response)
        )
        if "expect" in action:
            self.asserts.append(
                {
                    "desc": f"invoke {action['service']} response",
                    "ok": _stringify(response) == _stringify(action["expect"]),
                }
            )

    def _op_invoke_via_queue(self, action):
        self.broker.invoke_via_queue(
            self._ctx(action),
            self._queue(action["queue"]),
            action["service"],
            action.get("request", {}),
            action["reply_to"],
        )

    def _op_run_process(self, action):
        if self.engine is None:
            raise ScenarioError("scenario defines no processes")
        instance = self.engine.start(action["process"], action.get("variables", {}))
        self.engine.execute(instance)
        self.instances[action["process"]] = instance
        if "expect" in action:
            self.asserts.append(
                {
                    "desc": f"process {action['process']} -> {action['expect']}",
                    "ok": instance.state.value == action["expect"],
                }
            )
        if not self.injector.any_fired():
            self._serve_queues()

    def _op_assert(self, action):
        kind = action["kind"]
        if kind == "store":
            value = self._store(action["store"]).committed_value(action["key"])
            expected = action.get("value")
            self.asserts.append(
                {
                    "desc": f"store {action['store']}[{action['key']}] == {expected!r}",
                    "ok": value == expected,
                }
            )
        elif kind == "queue":
            messages = list(self._queue(action["queue"]).peek())
            expected = list(action.get("messages", []))
            self.asserts.append(
                {
                    "desc": f"queue {action['queue']} == {expected!r}",
                    "ok": messages == expected,
                }
            )
        elif kind == "txn":
            status = self._txn_status(action["txn"])
            self.asserts.append(
                {
                    "desc": f"txn {action['txn']} is {action['status']}",
                    "ok": status == action["status"],
                }
            )
        elif kind == "process":
            instance = self.instances.get(action["process"])
            state = instance.state.value if instance is not None else "never-ran"
            self.asserts.append(
                {
                    "desc": f"process {action['process']} is {action['state']}",
                    "ok": state == action["state"],
                }
            )
        elif kind == "process_var":
            instance = self.instances.get(action["process"])
            value = instance.variables.get(action["var"]) if instance is not None else None
            self.asserts.append(
                {
                    "desc": f"process {action['process']} var {action['var']} == {action.get('value')!r}",
                    "ok": value == action.get("value"),
                }
            )
        else:
            raise ScenarioError(f"unknown assert kind {kind!r}")

    # -- shared plumbing -----------------------------------------------------

    def _serve_queues(self) -> None:
        for name in self.scenario.serve_queues:
            self.broker.drain(self.coordinator, self._queue(name), self._queue)

    def _recover_all(self) -> None:
        for ep in self.endpoints.values():
            ep.recover()
        for rm in list(self.stores.values()) + list(self.queues.values()):
            rm.recover()
        if self.coordinator.crashed:
            self.coordinator.restart()
        outcome = self.coordinator.recover()
        if self.recovery_totals is None:
            self.recovery_totals = {
                "recommitted": 0,
                "presumed_aborted": 0,
                "aborts_completed": 0,
            }
        self.recovery_totals["recommitted"] += outcome.recommitted
        self.recovery_totals["presumed_aborted"] += outcome.presumed_aborted
        self.recovery_totals["aborts_completed"] += outcome.aborts_completed

    def _txn_status(self, name: str) -> str:
        """Prefer the durable log's view of a transaction's outcome; fall
        back to the live context for undecided ones."""
        if name not in self.txns:
            raise ScenarioError(f"unknown transaction name {name!r}")
        ctx = self.txns[name]
        entry = replay_log(self.coordinator.log_path).get(ctx.id)
        if entry is not None and entry.decision is not None:
            return entry.status
        return ctx.status.value

    def _report(self, stopped_by_fault: bool) -> dict:
        replayed = replay_log(self.coordinator.log_path)
        transactions = {}
        for name, ctx in sorted(self.txns.items()):
            entry = replayed.get(ctx.id)
            if entry is not None and entry.decision is not None:
                status = entry.status
            else:
                status = ctx.status.value
            transactions[name] = {"id": ctx.id, "status": status}
        conservation = {name: q.conservation_holds() for name, q in sorted(self.queues.items())}
        ok = (
            not self.errors
            and all(a["ok"] for a in self.asserts)
            and all(conservation.values())
        )
        return {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "faults": [str(f) for f in self.faults],
            "fired": [str(f) for f in self.injector.fired],
            "stopped_by_fault": stopped_by_fault,
            "ok": ok,
            "errors": list(self.errors),
            "asserts": list(self.asserts),
            "transactions": transactions,
            "log": {str(txn_id): replayed[txn_id].status for txn_id in sorted(replayed)},
            "stores": {name: s.committed_snapshot() for name, s in sorted(self.stores.items())},
            "queues": {name: list(q.peek()) for name, q in sorted(self.queues.items())},
            "queue_conservation": conservation,
            "recovery": self.recovery_totals,
            "events": list(self.tracer.events),
            "processes": {
                name: {
                    "state": inst.state.value,
                    "failed_step": inst.failed_step,
                    "reason": inst.reason,
                    "variables": _stringify(inst.variables),
                }
                for name, inst in sorted(self.instances.items())
            },
        }


def run_scenario(
    scenario_or_path,
    seed: int | None = None,
    faults: list[FaultSpec] | None = None,
    workdir: str | None = None,
    arm: str = "always",
) -> dict:
    """Load (if needed) and run a scenario, returning the report dict."""
    scenario = _as_scenario(scenario_or_path)
    if workdir is not None:
        return _run_once(scenario, workdir, seed=seed, faults=faults, arm=arm)
    with tempfile.TemporaryDirectory(prefix="tra-run-") as wd:
        return _run_once(scenario, wd, seed=seed, faults=faults, arm=arm)


def _run_once(scenario: Scenario, workdir: str, **kwargs) -> dict:
    runner = Runner(scenario, workdir, **kwargs)
    try:
        return runner.run()
    finally:
        runner.close()


def _as_scenario(scenario_or_path) -> Scenario:
    if isinstance(scenario_or_path, Scenario):
        return scenario_or_path
    return load_scenario_file(scenario_or_path)


def crash_sweep(scenario_or_path) -> dict:
    """Run the full (target x crash point) matrix against the scenario's
    final commit and classify every post-recovery state."""
    scenario = _as_scenario(scenario_or_path)
    result: dict = {"scenario": scenario.name, "combinations": [], "ok": True}

    last = scenario.last_commit_index()
    if last is None:
        result["ok"] = False
        result["error"] = "scenario has no commit action to sweep"
        return result

    with tempfile.TemporaryDirectory(prefix="tra-sweep-") as root:
        baseline = _run_once(scenario, os.path.join(root, "baseline"))
        result["baseline_ok"] = baseline["ok"]
        if not baseline["ok"]:
            result["ok"] = False
            result["error"] = "baseline (no-fault) run failed its own assertions"
            return result
        commit_state = {"stores": baseline["stores"], "queues": baseline["queues"]}

        # Abort oracle: same script, but the swept commit becomes a rollback
        # and the rest of the script is dropped.
        abort_actions = list(scenario.actions[:last])
        abort_actions.append({"op": "rollback", "txn": scenario.actions[last].get("txn")})
        abort_run = _run_once(scenario.with_actions(abort_actions), os.path.join(root, "abort"))
        if abort_run["errors"]:
            result["ok"] = False
            result["error"] = f"abort baseline errored: {abort_run['errors']}"
            return result
        abort_state = {"stores": abort_run["stores"], "queues": abort_run["queues"]}
        result["commit_state"] = commit_state
        result["abort_state"] = abort_state

        swept_txn = scenario.actions[last].get("txn")
        swept_id = baseline["transactions"][swept_txn]["id"] if swept_txn in baseline["transactions"] else None

        targets = [COORDINATOR_TARGET] + list(scenario.sweep_targets)
        for target in targets:
            for point in ALL_POINTS:
                spec = FaultSpec(target, point)
                rundir = os.path.join(root, f"{target}-{point.value}")
                report = _run_once(scenario, rundir, faults=[spec], arm="final_commit")
                post = {"stores": report["stores"], "queues": report["queues"]}
                if post == commit_state:
                    outcome = "committed"
                elif post == abort_state:
                    outcome = "aborted"
                else:
                    outcome = "split"
                fired = bool(report["fired"])
                conservation = all(report["queue_conservation"].values())
                log = report["log"]
                log_ok = swept_id is not None and log.get(str(swept_id)) == outcome
                prefix_ok = all(
                    txn_id == str(swept_id) or baseline["log"].get(txn_id) == status
                    for txn_id, status in log.items()
                )
                row_ok = (
                    fired
                    and outcome in ("committed", "aborted")
                    and not report["errors"]
                    and conservation
                    and log_ok
                    and prefix_ok
                )
                result["combinations"].append(
                    {
                        "target": target,
                        "point": point.value,
                        "fired": fired,
                        "outcome": outcome,
                        "conservation": conservation,
                        "log_matches_outcome": log_ok,
                        "ok": row_ok,
                    }
                )
                if not row_ok:
                    result["ok"] = False
    return result


def render_report(report: dict, mode: str = "structured") -> str:
    if mode == "structured":
        return json.dumps(report, sort_keys=True, indent=2) + "\n"
    if mode != "text":
        raise ScenarioError(f"unknown report mode {mode!r}")
    lines = [f"scenario {report['scenario']} (seed {report['seed']})"]
    if report["faults"]:
        fired = ", ".join(report["fired"]) or "none"
        lines.append(f"faults: {', '.join(report['faults'])} (fired: {fired})")
    for name, info in sorted(report["transactions"].items()):
        lines.append(f"txn {name} (id {info['id']}): {info['status']}")
    for name, data in sorted(report["stores"].items()):
        body = ", ".join(f"{k}={v}" for k, v in sorted(data.items())) or "empty"
        lines.append(f"store {name}: {body}")
    for name, messages in sorted(report["queues"].items()):
        lines.append(f"queue {name}: {len(messages)} message(s)")
    for name, info in sorted(report.get("processes", {}).items()):
        detail = "" if info["failed_step"] is None else f" at {info['failed_step']}"
        lines.append(f"process {name}: {info['state']}{detail}")
    if report["recovery"] is not None:
        r = report["recovery"]
        lines.append(
            "recovery: "
            f"{r['recommitted']} recommitted, {r['presumed_aborted']} presumed aborted, "
            f"{r['aborts_completed']} aborts completed"
        )
    for entry in report["asserts"]:
        mark = "ok " if entry["ok"] else "FAIL"
        lines.append(f"  [{mark}] {entry['desc']}")
    for err in report["errors"]:
        lines.append(f"  error: {err}")
    lines.append("result: OK" if report["ok"] else "result: FAILED")
    return "\n".join(lines) + "\n"


def render_sweep(result: dict) -> str:
    lines = [f"sweep {result['scenario']}"]
    if "error" in result:
        lines.append(f"  error: {result['error']}")
    for row in result["combinations"]:
        mark = "ok " if row["ok"] else "FAIL"
        fired = "" if row["fired"] else " (never fired)"
        lines.append(
            f"  [{mark}] {row['target']}@{row['point']}: {row['outcome']}{fired}"
        )
    atomic = sum(1 for r in result["combinations"] if r["ok"])
    lines.append(
        f"result: {'OK' if result['ok'] else 'FAILED'} "
        f"({atomic}/{len(result['combinations'])} combinations atomic)"
    )
    return "\n".join(lines) + "\n"
