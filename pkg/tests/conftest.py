import pytest

from seqpval import BoundaryTable, SpendingSequence


@pytest.fixture(scope="session")
def default_table():
    """Shared alpha=0.05, eps=1e-3, k=1000 table; tests must not mutate state
    other than extending it."""
    return BoundaryTable(0.05, SpendingSequence.default(1e-3, 1000))
