import pytest

from plexisim import identity
from plexisim.aggregator import DfAggregator
from plexisim.clock import SimClock
from plexisim.ledger import LedgerSim
from plexisim.workflow import Actor, ActorRole, Topic, WorkflowEngine


@pytest.fixture
def clock():
    return SimClock()


@pytest.fixture
def anchor():
    return identity.setup(128, seed=1234)


@pytest.fixture
def ledger(clock, anchor):
    return LedgerSim(clock, anchor_pk=identity.anchor_public_key(anchor))


@pytest.fixture
def stack(clock, anchor, ledger):
    """Ledger + workflow engine + aggregator with an enrolled contract actor."""
    contract_device = identity.make_device("dfasc-contract", seed=99)
    contract_key, contract_token = identity.enroll(
        contract_device, owner_id="dfasc", anchor=anchor, registry=ledger
    )
    engine = WorkflowEngine(ledger, clock, contract_key)
    engine.register_actor(
        Actor("dfasc", ActorRole.DFASC_CONTRACT, {Topic.BID_OFFER}, contract_token)
    )
    agg = DfAggregator(engine, clock)
    return clock, anchor, ledger, engine, agg


@pytest.fixture
def enrolled(anchor, ledger):
    """One enrolled device: (device, signing key, token id)."""
    device = identity.make_device("meter-0", seed=7)
    key, token_id = identity.enroll(device, owner_id="alice", anchor=anchor, registry=ledger)
    return device, key, token_id
