import pytest

from modelytics import Store, parse_model
from modelytics.engine import RefinementEngine

GRID_TEXT = """\
class Meter {
    att energyConsumed: Double
}

class Cable {
    att capacity: Double
    rel meters: Meter[]
    derived load: Double = SUM(meters.energyConsumed)
}

class Concentrator {
    rel cables: Cable[]
}

class Transformer {
    rel concentrators: Concentrator[]
}

class ConsumptionProfiler {
    with "GaussianMixture"
    with resolution "1week"
    dependency consumption: Meter
    input "consumption | =energyConsumed"
    input "consumption | =HOURS(timestamp)"
    output probability: Double
}
"""


@pytest.fixture
def grid_model():
    model, diags = parse_model(GRID_TEXT)
    assert model is not None and not diags
    return model


@pytest.fixture
def grid_store(grid_model):
    return Store(grid_model)


@pytest.fixture
def grid(grid_model):
    """Store + engine with 3 meters on one cable, ids by name."""
    store = Store(grid_model)
    engine = RefinementEngine(store)
    ids = {}
    ids["cable"] = store.create_node(0, "Cable", "C0")
    for i in range(3):
        ids[f"m{i}"] = store.create_node(0, "Meter", f"M{i}")
        store.add_relation(0, ids["cable"], "meters", ids[f"m{i}"], 0)
    ids["prof"] = store.create_node(0, "ConsumptionProfiler", "P0")
    store.add_relation(0, ids["prof"], "consumption", ids["m0"], 0)
    engine.refine(0)
    return store, engine, ids
