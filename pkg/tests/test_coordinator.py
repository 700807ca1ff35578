"""Two-phase commit, the decision log, and recovery."""

import pytest

from tra.coordinator import Coordinator, replay_log
from tra.errors import (
    CoordinatorDown,
    LogCorruptError,
    TxnStateError,
    UnknownResourceError,
    UnmanagedResourceError,
)
from tra.model import load_manifest_file
from tra.resources import ManagedStore, TxnQueue, UnmanagedResource
from tra.sim import SimClock, Tracer
from tra.txn import TxnStatus
from tra.wal import read_records

import tra


def kinds(path):
    return [rec[0] for rec in read_records(path)]


def test_zero_participant_commit_logs_no_enlist(rig):
    coord, _, _ = rig
    t = coord.begin("c")
    assert coord.commit(t) is TxnStatus.COMMITTED
    assert read_records(coord.log_path) == [
        ("BEGIN", "1"),
        ("COMMIT", "1"),
        ("END", "1"),
    ]


def test_log_sequence_for_a_full_commit(rig):
    coord, store, queue = rig
    t = coord.begin("c")
    store.put(t, "k", "v")
    queue.send(t, "m")
    coord.commit(t)
    assert read_records(coord.log_path) == [
        ("BEGIN", "1"),
        ("ENLIST", "1", "store"),
        ("ENLIST", "1", "queue"),
        ("COMMIT", "1"),
        ("END", "1"),
    ]


def test_abort_path_rolls_back_earlier_yes_votes(rig):
    coord, store, queue = rig
    store.seed({"k": "0"})

    spoiler = coord.begin("spoiler")
    victim = coord.begin("victim")
    assert store.get(victim, "k") == "0"
    store.put(victim, "k", "v")
    queue.send(victim, "m")
    store.put(spoiler, "k", "s")
    assert coord.commit(spoiler) is TxnStatus.COMMITTED

    # victim's store prepare fails validation; queue never prepared or the
    # queue prepared then must be rolled back, depending on enlist order.
    assert coord.commit(victim) is TxnStatus.ABORTED
    assert queue.peek() == ()
    assert store.committed_value("k") == "s"
    assert kinds(coord.log_path).count("ABORT") == 1


def test_rollback_then_commit_rejected(rig):
    coord, store, _ = rig
    t = coord.begin("c")
    store.put(t, "k", "v")
    coord.rollback(t)
    with pytest.raises(TxnStateError):
        coord.commit(t)
    assert store.committed_value("k") is None


def test_enlist_validation(rig, tmp_path):
    coord, _, _ = rig
    coord.register(UnmanagedResource("legacy-app"))
    t = coord.begin("c")
    with pytest.raises(UnknownResourceError):
        coord.enlist(t, "ghost")
    with pytest.raises(UnmanagedResourceError):
        coord.enlist(t, "legacy-app")
    # double enlist is silently idempotent
    coord.enlist(t, "store")
    coord.enlist(t, "store")
    assert t.enlisted == ["store"]
    coord.rollback(t)


def test_foreign_context_rejected(rig, tmp_path, tracer):
    coord, _, _ = rig
    other = Coordinator(str(tmp_path / "other.log"), tracer=tracer)
    foreign = other.begin("x")
    with pytest.raises(TxnStateError):
        coord.commit(foreign)


def test_restart_continues_ids(rig):
    coord, store, _ = rig
    t1 = coord.begin("a")
    store.put(t1, "k", "v")
    coord.commit(t1)
    coord.begin("b")  # left active, never decided
    coord.crash()
    with pytest.raises(CoordinatorDown):
        coord.begin("c")
    coord.restart()
    t3 = coord.begin("c")
    assert t3.id == 3


def test_prepare_timeout_flips_vote(tmp_path, tracer):
    coord = Coordinator(str(tmp_path / "c.log"), tracer=tracer, prepare_budget=5)
    slow = ManagedStore("slow", str(tmp_path / "slow.log"), tracer=tracer, prepare_delay=50)
    coord.register(slow)
    t = coord.begin("c")
    slow.put(t, "k", "v")
    assert coord.commit(t) is TxnStatus.ABORTED
    votes = [e for e in tracer.events if e["ev"] == "vote"]
    assert votes[-1]["vote"] == "no" and votes[-1]["reason"] == "timeout"
    assert slow.committed_value("k") is None


def test_commit_with_crashed_participant_stays_committed(rig):
    coord, store, queue = rig
    t = coord.begin("c")
    store.put(t, "k", "v")
    queue.send(t, "m")

    # queue dies after voting: decision still commit, phase 2 left pending
    orig_prepare = queue.prepare

    def prepare_then_die(txn_id):
        vote = orig_prepare(txn_id)
        queue.crash()
        return vote

    queue.prepare = prepare_then_die
    assert coord.commit(t) is TxnStatus.COMMITTED
    assert t.pending == {"queue"}
    assert "END" not in kinds(coord.log_path)
    assert store.committed_value("k") == "v"
    assert queue.peek() == ()

    queue.recover()
    outcome = coord.recover()
    assert outcome.recommitted == 1
    assert queue.peek() == ("m",)
    assert t.pending == set()
    assert kinds(coord.log_path)[-1] == "END"


def test_full_crash_recovery_redrives_and_presumes_abort(tmp_path):
    tracer = Tracer(SimClock())
    coord = Coordinator(str(tmp_path / "c.log"), tracer=tracer)
    store = ManagedStore("store", str(tmp_path / "s.log"), tracer=tracer)
    queue = TxnQueue("queue", str(tmp_path / "q.log"), tracer=tracer)
    coord.register(store)
    coord.register(queue)

    committed = coord.begin("a")
    store.put(committed, "done", "yes")
    queue.send(committed, "m1")

    undecided = coord.begin("b")
    store.put(undecided, "lost", "yes")

    assert coord.commit(committed) is TxnStatus.COMMITTED

    # total stop before `undecided` reaches a decision
    coord.crash()
    store.crash()

    coord.restart()
    store.recover()
    outcome = coord.recover()

    assert outcome.recommitted == 0
    assert outcome.presumed_aborted == 1
    assert store.committed_value("done") == "yes"
    assert store.committed_value("lost") is None
    assert queue.peek() == ("m1",)

    txns = replay_log(coord.log_path)
    assert txns[committed.id].status == "committed"
    assert txns[undecided.id].status == "aborted"
    assert all(t.ended for t in txns.values())


def test_recovery_skips_live_active_transactions(rig):
    coord, store, _ = rig
    live = coord.begin("still-going")
    store.put(live, "k", "v")
    outcome = coord.recover()
    assert outcome.presumed_aborted == 0
    # the live transaction can still commit afterwards
    assert coord.commit(live) is TxnStatus.COMMITTED
    assert store.committed_value("k") == "v"


def test_replay_log_shapes(tmp_path):
    p = tmp_path / "log"
    p.write_text(
        "BEGIN\t1\nENLIST\t1\tstore\nBEGIN\t2\nCOMMIT\t1\nABORT\t2\nEND\t1\n",
        encoding="utf-8",
    )
    txns = replay_log(str(p))
    assert txns[1].status == "committed" and txns[1].ended
    assert txns[1].enlisted == ["store"]
    assert txns[2].status == "aborted" and not txns[2].ended


@pytest.mark.parametrize(
    "text",
    [
        "BEGIN\t1\nBEGIN\t1\n",
        "ENLIST\t1\tstore\n",
        "BEGIN\t1\nCOMMIT\t1\nENLIST\t1\tstore\n",
        "BEGIN\t1\nCOMMIT\t1\nABORT\t1\n",
        "BEGIN\t1\nEND\t1\n",
        "BEGIN\tx\n",
    ],
)
def test_replay_log_rejects_corruption(tmp_path, text):
    p = tmp_path / "log"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(LogCorruptError):
        replay_log(str(p))


def test_propagate_requires_model_and_binding(rig, tmp_path, tracer):
    coord, store, _ = rig
    from tra.errors import BindingError

    t = coord.begin("c")
    with pytest.raises(BindingError):
        coord.propagate(t, "Customer", "updateCustomer", {})
    coord.rollback(t)

    model = load_manifest_file(tra.fixture_path("model.json"))
    coord2 = Coordinator(str(tmp_path / "c2.log"), tracer=tracer, model=model)
    store2 = ManagedStore("s2", str(tmp_path / "s2.log"), tracer=tracer)
    coord2.register(store2)

    def handler(ctx, request):
        store2.put(ctx, request["id"], request["data"])
        return {"status": "ok"}

    coord2.bind_service("Customer", "updateCustomer", handler)

    t2 = coord2.begin("c")
    with pytest.raises(BindingError, match="missing fields"):
        coord2.propagate(t2, "Customer", "updateCustomer", {"id": "1"})
    with pytest.raises(BindingError, match="not exported"):
        coord2.propagate(t2, "Contract", "readContract", {"contract": "x"})
    with pytest.raises(BindingError, match="no implementation"):
        coord2.propagate(
            t2, "Customer", "getCustomer", {"id": "1"}
        )
    resp = coord2.propagate(
        t2,
        "Customer",
        "updateCustomer",
        {"id": "c1", "data": "D", "contract": "x", "terms": "y"},
    )
    assert resp == {"status": "ok"}
    assert coord2.commit(t2) is TxnStatus.COMMITTED
    assert store2.committed_value("c1") == "D"
