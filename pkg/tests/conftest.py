import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def trained_fixture():
    """A small trained classifier plus its splits, shared across tests."""
    import ensyth as E

    ds = E.synth_blobs(seed=7, samples_per_class=80, classes=3, dim=10, spread=0.8)
    tr, va, te = E.split(ds, E.SplitSpec(0.8, 0.1, 0.1, seed=3))
    net0 = E.ReluNetwork.initialize([10, 8, 3], seed=1)
    cfg = E.TrainConfig(epochs=60, batch_size=16, learning_rate=0.05, seed=2)
    net = E.train(net0, tr, cfg)
    return {"net": net, "train": tr, "val": va, "test": te, "cfg": cfg, "init": net0}


def make_pruned(net, masks=None, config=None, parent="p"):
    """Wrap a network as a pruned model with consistent masks."""
    from ensyth.pruner import PruneConfig, PrunedModel

    if masks is None:
        masks = tuple(w != 0.0 for w in net.weights)
    if config is None:
        config = PruneConfig(epsilon_gain=0.1)
    return PrunedModel(network=net, masks=masks, config=config, parent_hash=parent,
                       layer_epsilons=(0.0,) * net.depth, feasibility_report=())


def random_network(rng, dims):
    """Random finite network with the given layer sizes."""
    from ensyth.network import ReluNetwork

    weights = [rng.normal(size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(size=b) * 0.1 for b in dims[1:]]
    return ReluNetwork(tuple(dims), tuple(weights), tuple(biases))
