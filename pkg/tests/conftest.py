import pytest

from tra.coordinator import Coordinator
from tra.resources import ManagedStore, TxnQueue
from tra.sim import SimClock, Tracer


@pytest.fixture
def tracer():
    return Tracer(SimClock())


@pytest.fixture
def rig(tmp_path, tracer):
    """Coordinator wired to one store and one queue, logs under tmp_path."""
    coord = Coordinator(str(tmp_path / "coordinator.log"), tracer=tracer)
    store = ManagedStore("store", str(tmp_path / "store.log"), tracer=tracer)
    queue = TxnQueue("queue", str(tmp_path / "queue.log"), tracer=tracer)
    coord.register(store)
    coord.register(queue)
    return coord, store, queue
