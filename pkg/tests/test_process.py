"""Process engine: policies, composition, failure shapes."""

import pytest

import tra
from tra.coordinator import Coordinator
from tra.errors import ProcessError
from tra.model import load_manifest_file
from tra.process import (
    InstanceState,
    ProcessDefinition,
    ProcessEngine,
    Step,
    TxnPolicy,
    load_definition,
)
from tra.resources import ManagedStore
from tra.sim import SimClock, Tracer
from tra.wal import read_records


@pytest.fixture
def world(tmp_path):
    tracer = Tracer(SimClock())
    model = load_manifest_file(tra.fixture_path("model.json"))
    coord = Coordinator(str(tmp_path / "c.log"), tracer=tracer, model=model)
    store = ManagedStore("db", str(tmp_path / "db.log"), tracer=tracer)
    coord.register(store)

    def update_customer(ctx, request):
        store.put(ctx, request["id"], request["data"])
        return {"status": "ok"}

    def create_contract(ctx, request):
        if request["terms"] == "poison":
            raise ProcessError("refused terms")
        store.put(ctx, request["contract"], request["terms"])
        return {"status": "created"}

    coord.bind_service("Customer", "updateCustomer", update_customer)
    coord.bind_service("Contract", "createContract", create_contract)
    engine = ProcessEngine(model, coord)
    return engine, coord, store


def two_step(policy):
    return ProcessDefinition(
        name="onboard",
        policy=policy,
        steps=[
            Step(
                name="customer",
                component="Customer",
                service="updateCustomer",
                input_map={
                    "id": "var:id",
                    "data": "var:data",
                    "contract": "var:contract",
                    "terms": "var:terms",
                },
                output_map={"cust_status": "resp.status"},
            ),
            Step(
                name="contract",
                component="Contract",
                service="createContract",
                input_map={"contract": "var:contract", "terms": "var:terms"},
                output_map={"ctr_status": "resp.status"},
            ),
        ],
    )


VARS = {"id": "c1", "data": "D", "contract": "k1", "terms": "basic"}


def test_per_step_runs_each_step_in_its_own_transaction(world):
    engine, coord, store = world
    engine.define(two_step(TxnPolicy.PER_STEP))
    inst = engine.execute(engine.start("onboard", VARS))
    assert inst.state is InstanceState.COMPLETED
    assert inst.completed_steps == 2
    assert inst.variables["cust_status"] == "ok"
    assert inst.variables["ctr_status"] == "created"
    assert store.committed_value("c1") == "D"
    kinds = [r[0] for r in read_records(coord.log_path)]
    assert kinds.count("BEGIN") == 2 and kinds.count("COMMIT") == 2


def test_spanning_runs_one_transaction(world):
    engine, coord, store = world
    engine.define(two_step(TxnPolicy.SPANNING))
    inst = engine.execute(engine.start("onboard", VARS))
    assert inst.state is InstanceState.COMPLETED
    kinds = [r[0] for r in read_records(coord.log_path)]
    assert kinds.count("BEGIN") == 1 and kinds.count("COMMIT") == 1


def test_per_step_failure_keeps_earlier_steps(world):
    engine, coord, store = world
    engine.define(two_step(TxnPolicy.PER_STEP))
    inst = engine.execute(engine.start("onboard", {**VARS, "terms": "poison"}))
    assert inst.state is InstanceState.FAILED
    assert inst.failed_step == "contract"
    assert inst.completed_steps == 1
    assert store.committed_value("c1") == "D"  # step 1 committed alone
    assert store.committed_value("k1") is None


def test_spanning_failure_rolls_everything_back(world):
    engine, coord, store = world
    engine.define(two_step(TxnPolicy.SPANNING))
    inst = engine.execute(engine.start("onboard", {**VARS, "terms": "poison"}))
    assert inst.state is InstanceState.FAILED
    assert inst.failed_step == "contract"
    assert store.committed_value("c1") is None
    assert store.committed_value("k1") is None


def test_spanning_commit_refusal_fails_with_no_step(world):
    engine, coord, store = world
    store.seed({"c1": "orig"})
    engine.define(two_step(TxnPolicy.SPANNING))

    # every step succeeds but the commit itself is refused
    inst = engine.start("onboard", VARS)

    from tra.txn import TxnStatus

    orig_commit = coord.commit

    def refuse(ctx):
        coord.rollback(ctx)
        return TxnStatus.ABORTED

    coord.commit = refuse
    try:
        inst = engine.execute(inst)
    finally:
        coord.commit = orig_commit
    assert inst.state is InstanceState.FAILED
    assert inst.failed_step is None
    assert inst.reason == "transaction aborted"
    assert store.committed_value("c1") == "orig"


def test_composition_flattening_and_cycle_guard(world):
    engine, coord, store = world
    engine.define(two_step(TxnPolicy.PER_STEP))
    engine.define(
        ProcessDefinition(
            name="outer",
            policy=TxnPolicy.PER_STEP,
            steps=[
                Step(
                    name="pre",
                    component="Customer",
                    service="updateCustomer",
                    input_map={
                        "id": "lit:pre",
                        "data": "lit:P",
                        "contract": "lit:x",
                        "terms": "lit:y",
                    },
                ),
            ],
        )
    )
    engine.compose("outer", 1, "onboard")
    flat = [s.name for s in engine.flatten("outer")]
    assert flat == ["pre", "customer", "contract"]

    inst = engine.execute(engine.start("outer", VARS))
    assert inst.state is InstanceState.COMPLETED
    # trace order matches flattened order
    steps = [e["step"] for e in coord.tracer.events if e["ev"] == "step"]
    assert steps == flat
    assert store.committed_value("pre") == "P"

    with pytest.raises(ProcessError, match="cycle"):
        engine.compose("onboard", 0, "onboard")
    # failed compose must not leave the inserted step behind
    assert [s.name for s in engine.definitions["onboard"].steps] == ["customer", "contract"]


def test_empty_process_completes_without_transactions(world):
    engine, coord, _ = world
    engine.define(ProcessDefinition(name="noop", policy=TxnPolicy.SPANNING, steps=[]))
    inst = engine.execute(engine.start("noop"))
    assert inst.state is InstanceState.COMPLETED
    assert read_records(coord.log_path) == []


def test_definition_validation(world):
    engine, _, _ = world
    with pytest.raises(ProcessError, match="exactly one"):
        Step(name="bad")
    with pytest.raises(ProcessError, match="exactly one"):
        Step(name="bad", component="Customer", service="getCustomer", subprocess="x")
    with pytest.raises(ProcessError, match="go together"):
        Step(name="bad", component="Customer")
    from tra.errors import BindingError

    with pytest.raises(BindingError):
        engine.define(
            ProcessDefinition(
                name="broken",
                policy=TxnPolicy.PER_STEP,
                steps=[
                    Step(name="s", component="Contract", service="readContract")
                ],
            )
        )
    engine.define(two_step(TxnPolicy.PER_STEP))
    with pytest.raises(ProcessError, match="already defined"):
        engine.define(two_step(TxnPolicy.PER_STEP))


def test_unset_variable_fails_cleanly(world):
    engine, coord, store = world
    engine.define(two_step(TxnPolicy.PER_STEP))
    inst = engine.execute(engine.start("onboard", {"id": "c1"}))
    assert inst.state is InstanceState.FAILED
    assert inst.failed_step == "customer"
    assert "unset variable" in inst.reason
    assert store.committed_value("c1") is None


def test_undefined_subprocess_fails_at_execute(world):
    engine, coord, _ = world
    engine.define(
        ProcessDefinition(
            name="outer",
            policy=TxnPolicy.PER_STEP,
            steps=[Step(name="go", subprocess="ghost")],
        )
    )
    inst = engine.execute(engine.start("outer"))
    assert inst.state is InstanceState.FAILED
    assert inst.failed_step is None


def test_load_definition_matches_bundled_fixture():
    doc_based = load_definition(
        {
            "name": "onboarding",
            "policy": "spanning",
            "steps": [
                {
                    "name": "s1",
                    "component": "Customer",
                    "service": "updateCustomer",
                    "input": {"id": "var:id"},
                    "output": {"st": "resp.status"},
                }
            ],
        }
    )
    assert doc_based.policy is TxnPolicy.SPANNING
    assert doc_based.steps[0].input_map == {"id": "var:id"}
    with pytest.raises(ProcessError, match="policy"):
        load_definition({"name": "x", "policy": "both"})
    with pytest.raises(ProcessError, match="name"):
        load_definition({"policy": "per_step"})
