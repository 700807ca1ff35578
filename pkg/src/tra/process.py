"""Minimal business-process engine.

A process definition is an ordered list of steps. A step either invokes an
exported service of some component (through the coordinator, inside a
transaction) or runs a named subprocess in place. The transaction policy is
per definition: PER_STEP gives every step its own transaction, SPANNING runs
the whole flattened instance inside one.

Step inputs are mapped from instance variables ("var:NAME") or literals
("lit:TEXT"); outputs copy response fields ("resp.FIELD") back into
variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import ProcessError, TraError
from .faults import CoordinatorCrash
from .model import ComponentModel, resolve_binding
from .txn import TxnStatus


class TxnPolicy(Enum):
    PER_STEP = "per_step"
    SPANNING = "spanning"


class InstanceState(Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass(frozen=True)
class Step:
    name: str
    component: str | None = None
    service: str | None = None
    subprocess: str | None = None
    input_map: dict = field(default_factory=dict)
    output_map: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ProcessError("step name must be non-empty")
        is_call = self.component is not None or self.service is not None
        if is_call and (self.component is None or self.service is None):
            raise ProcessError(f"step {self.name}: component and service go together")
        if is_call == (self.subprocess is not None):
            raise ProcessError(f"step {self.name}: exactly one of service or subprocess")


@dataclass
class ProcessDefinition:
    name: str
    policy: TxnPolicy
    steps: list[Step]

    def subprocess_names(self) -> list[str]:
        return [s.subprocess for s in self.steps if s.subprocess is not None]


@dataclass
class ProcessInstance:
    definition: str
    variables: dict
    state: InstanceState = InstanceState.RUNNING
    completed_steps: int = 0
    failed_step: str | None = None
    reason: str | None = None


def load_definition(doc: dict) -> ProcessDefinition:
    try:
        policy = TxnPolicy(doc.get("policy", "per_step"))
    except ValueError:
        raise ProcessError(f"unknown policy {doc.get('policy')!r}") from None
    steps = []
    for raw in doc.get("steps", ()):
        steps.append(
            Step(
                name=raw.get("name", ""),
                component=raw.get("component"),
                service=raw.get("service"),
                subprocess=raw.get("subprocess"),
                input_map=dict(raw.get("input", {})),
                output_map=dict(raw.get("output", {})),
            )
        )
    name = doc.get("name")
    if not name:
        raise ProcessError("process name must be non-empty")
    return ProcessDefinition(name=name, policy=policy, steps=steps)


class ProcessEngine:
    """Holds definitions and runs instances through the coordinator."""

    def __init__(self, model: ComponentModel, coordinator) -> None:
        self.model = model
        self.coordinator = coordinator
        self.definitions: dict[str, ProcessDefinition] = {}

    # -- definition management ---------------------------------------------

    def define(self, definition: ProcessDefinition) -> None:
        if definition.name in self.definitions:
            raise ProcessError(f"process {definition.name} already defined")
        names = [s.name for s in definition.steps]
        if len(set(names)) != len(names):
            raise ProcessError(f"{definition.name}: duplicate step names")
        for step in definition.steps:
            if step.service is not None:
                # resolve eagerly so broken definitions fail at define time
                resolve_binding(self.model, step.component, step.service)
        self.definitions[definition.name] = definition
        self._check_cycles(definition.name)

    def compose(self, parent: str, position: int, child: str) -> ProcessDefinition:
        """Insert a subprocess step into an existing definition."""
        if parent not in self.definitions:
            raise ProcessError(f"no process {parent!r}")
        defn = self.definitions[parent]
        if not 0 <= position <= len(defn.steps):
            raise ProcessError(f"{parent}: position {position} out of range")
        step = Step(name=f"run_{child}_{position}", subprocess=child)
        defn.steps.insert(position, step)
        try:
            self._check_cycles(parent)
        except ProcessError:
            defn.steps.pop(position)
            raise
        return defn

    def _check_cycles(self, root: str) -> None:
        visiting: list[str] = []

        def visit(name: str) -> None:
            if name in visiting:
                cycle = " -> ".join(visiting + [name])
                raise ProcessError(f"subprocess cycle: {cycle}")
            defn = self.definitions.get(name)
            if defn is None:
                return  # undefined children are checked again at execute
            visiting.append(name)
            for child in defn.subprocess_names():
                visit(child)
            visiting.pop()

        visit(root)

    def flatten(self, name: str) -> list[Step]:
        """Expand subprocess steps depth-first into one service-step list."""
        defn = self.definitions.get(name)
        if defn is None:
            raise ProcessError(f"no process {name!r}")
        self._check_cycles(name)
        out: list[Step] = []
        for step in defn.steps:
            if step.subprocess is not None:
                out.extend(self.flatten(step.subprocess))
            else:
                out.append(step)
        return out

    # -- execution ---------------------------------------------------------------

    def start(self, name: str, variables: dict | None = None) -> ProcessInstance:
        if name not in self.definitions:
            raise ProcessError(f"no process {name!r}")
        return ProcessInstance(definition=name, variables=dict(variables or {}))

    def execute(self, instance: ProcessInstance) -> ProcessInstance:
        defn = self.definitions[instance.definition]
        try:
            steps = self.flatten(instance.definition)
        except ProcessError as exc:
            return self._fail(instance, None, str(exc))
        if not steps:
            instance.state = InstanceState.COMPLETED
            return instance
        if defn.policy is TxnPolicy.SPANNING:
            return self._run_spanning(instance, steps)
        return self._run_per_step(instance, steps)

    def _run_per_step(self, instance: ProcessInstance, steps: list[Step]) -> ProcessInstance:
        for step in steps:
            ctx = self.coordinator.begin(f"process:{instance.definition}")
            try:
                self._run_step(instance, ctx, step)
            except CoordinatorCrash:
                raise
            except TraError as exc:
                self._quiet_rollback(ctx)
                return self._fail(instance, step.name, str(exc))
            status = self.coordinator.commit(ctx)
            if status is not TxnStatus.COMMITTED:
                return self._fail(instance, step.name, "transaction aborted")
            instance.completed_steps += 1
        instance.state = InstanceState.COMPLETED
        return instance

    def _run_spanning(self, instance: ProcessInstance, steps: list[Step]) -> ProcessInstance:
        ctx = self.coordinator.begin(f"process:{instance.definition}")
        for step in steps:
            try:
                self._run_step(instance, ctx, step)
            except CoordinatorCrash:
                raise
            except TraError as exc:
                self._quiet_rollback(ctx)
                return self._fail(instance, step.name, str(exc))
            instance.completed_steps += 1
        status = self.coordinator.commit(ctx)
        if status is not TxnStatus.COMMITTED:
            # every step ran; the transaction itself was refused
            return self._fail(instance, None, "transaction aborted")
        instance.state = InstanceState.COMPLETED
        return instance

    def _quiet_rollback(self, ctx) -> None:
        try:
            self.coordinator.rollback(ctx)
        except TraError:
            pass  # already rolled back or lost; the instance fails either way

    def _run_step(self, instance: ProcessInstance, ctx, step: Step) -> None:
        request = {}
        for fname, src in step.input_map.items():
            if isinstance(src, str) and src.startswith("var:"):
                var = src[4:]
                if var not in instance.variables:
                    raise ProcessError(f"step {step.name}: unset variable {var!r}")
                request[fname] = instance.variables[var]
            elif isinstance(src, str) and src.startswith("lit:"):
                request[fname] = src[4:]
            else:
                raise ProcessError(f"step {step.name}: bad input source {src!r}")
        self.coordinator.tracer.emit(
            "step",
            process=instance.definition,
            step=step.name,
            component=step.component,
            service=step.service,
        )
        response = self.coordinator.propagate(ctx, step.component, step.service, request)
        for var, src in step.output_map.items():
            if not (isinstance(src, str) and src.startswith("resp.")):
                raise ProcessError(f"step {step.name}: bad output source {src!r}")
            fname = src[5:]
            if not isinstance(response, dict) or fname not in response:
                raise ProcessError(f"step {step.name}: response has no field {fname!r}")
            instance.variables[var] = response[fname]

    def _fail(self, instance: ProcessInstance, step: str | None, reason: str) -> ProcessInstance:
        instance.state = InstanceState.FAILED
        instance.failed_step = step
        instance.reason = reason
        self.coordinator.tracer.emit(
            "process_failed", process=instance.definition, step=step, reason=reason
        )
        return instance
