import numpy as np
import pytest

from app.agent.networks import GraphEncoder
from app.env.graph import build_graph
from app.errors import ContractError
from app.models.data_models import HeteroGraph, Observation
from app.neural import tape as ad
from app.neural.gradcheck import check_gradients
from app.neural.layers import Dense, RelGnnLayer, mean_pool, relgnn_forward
from app.neural.optim import Adam, clip_grad_norm, global_grad_norm, group_learning_rates
from app.neural.tape import ParameterStore, Tape

TOLERANCE = 1e-4


def _path_graph(features):
    """0 - 1 - 2 under relation "near", plus a "far" edge 0 - 2."""
    edges = ((0, 1, "near"), (1, 0, "near"), (1, 2, "near"), (2, 1, "near"), (0, 2, "far"), (2, 0, "far"))
    return HeteroGraph(node_types=("a", "b", "a"), features=np.asarray(features, dtype=np.float64), edges=edges)


def _layer(activation="identity", in_dim=1, out_dim=1):
    return RelGnnLayer("gnn", ("near", "far"), in_dim, out_dim, activation)


def _store_with(values):
    store = ParameterStore()
    for name, value in values.items():
        store.add(name, value)
    return store


def test_square_gradient():
    store = _store_with({"x": 3.0})
    tape = Tape(store)
    x = tape.param("x")
    grads = tape.backward(ad.square(x))
    assert grads["x"][0, 0] == pytest.approx(6.0)


def test_backward_needs_scalar_root():
    store = _store_with({"x": np.ones((2, 2))})
    tape = Tape(store)
    with pytest.raises(ContractError):
        tape.backward(ad.tanh(tape.param("x")))


def test_shape_mismatch_is_rejected():
    tape = Tape()
    with pytest.raises(ContractError):
        ad.matmul(tape.const(np.ones((2, 3))), tape.const(np.ones((2, 3))))
    with pytest.raises(ContractError):
        ad.add(tape.const(np.ones((2, 3))), tape.const(np.ones((3, 2))))


def test_softmax_examples():
    tape = Tape()
    out = ad.softmax_rows(tape.const([[0.0, 0.0]])).value
    np.testing.assert_allclose(out, [[0.5, 0.5]])
    out = ad.softmax_rows(tape.const([[1000.0, 0.0]])).value
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)
    assert np.all(np.isfinite(out))


def test_relu_example():
    tape = Tape()
    np.testing.assert_array_equal(ad.relu(tape.const([[-1.0, 0.0, 2.0]])).value, [[0.0, 0.0, 2.0]])


def test_clip_blocks_gradient_outside_bounds():
    store = _store_with({"x": [[-3.0, 0.5, 3.0]]})
    tape = Tape(store)
    grads = tape.backward(ad.sum_all(ad.clip(tape.param("x"), -1.0, 1.0)))
    np.testing.assert_array_equal(grads["x"], [[0.0, 1.0, 0.0]])


def test_dense_gradcheck():
    rng = np.random.default_rng(0)
    layer = Dense("fc", 4, 3, "tanh")
    store = ParameterStore()
    layer.register(store, rng)
    x = rng.normal(size=(5, 4))

    def build(tape):
        return ad.sum_all(ad.square(layer(tape, tape.const(x))))

    errors = check_gradients(build, store)
    assert max(errors.values()) < TOLERANCE


def test_mean_and_softmax_gradcheck():
    rng = np.random.default_rng(1)
    store = _store_with({"x": rng.normal(size=(4, 3))})
    weights = rng.normal(size=(1, 3))

    def build(tape):
        probs = ad.softmax_rows(tape.param("x"))
        return ad.mean_all(ad.mul(ad.mean_rows(probs), tape.const(weights)))

    assert max(check_gradients(build, store).values()) < TOLERANCE


def test_relgnn_gradcheck():
    rng = np.random.default_rng(2)
    layer = _layer("tanh", in_dim=3, out_dim=4)
    graph = _path_graph(rng.normal(size=(3, 3)))
    store = ParameterStore()
    layer.register(store, rng)
    store.add("H", graph.features)

    def build(tape):
        return ad.sum_all(ad.square(mean_pool(relgnn_forward(tape, layer, graph, tape.param("H")))))

    errors = check_gradients(build, store)
    assert set(errors) == {"gnn.W_near", "gnn.W_far", "gnn.W_0", "H"}
    assert max(errors.values()) < TOLERANCE


def test_relgnn_sum_aggregation_example():
    layer = _layer()
    graph = HeteroGraph(node_types=("a", "a", "a"), features=np.array([[1.0], [2.0], [3.0]]),
                        edges=((0, 1, "near"), (1, 0, "near"), (1, 2, "near"), (2, 1, "near")))
    store = _store_with({"gnn.W_near": [[1.0]], "gnn.W_far": [[5.0]], "gnn.W_0": [[0.0]]})
    tape = Tape(store)
    out = relgnn_forward(tape, layer, graph, tape.const(graph.features))
    np.testing.assert_allclose(out.value, [[2.0], [4.0], [2.0]])


def test_relgnn_self_loop_only():
    layer = _layer()
    graph = HeteroGraph(node_types=("a", "a"), features=np.array([[1.5], [-2.0]]), edges=())
    store = _store_with({"gnn.W_near": [[9.0]], "gnn.W_far": [[9.0]], "gnn.W_0": [[2.0]]})
    tape = Tape(store)
    out = relgnn_forward(tape, layer, graph, tape.const(graph.features))
    np.testing.assert_allclose(out.value, [[3.0], [-4.0]])


def test_relgnn_rejects_unknown_relation():
    layer = RelGnnLayer("gnn", ("near",), 1, 1)
    store = ParameterStore()
    layer.register(store, np.random.default_rng(0))
    graph = _path_graph([[1.0], [2.0], [3.0]])
    tape = Tape(store)
    with pytest.raises(ContractError):
        relgnn_forward(tape, layer, graph, tape.const(graph.features))


def test_relgnn_permutation_equivariance():
    rng = np.random.default_rng(3)
    layer = _layer("tanh", in_dim=2, out_dim=3)
    store = ParameterStore()
    layer.register(store, rng)
    graph = _path_graph(rng.normal(size=(3, 2)))
    perm = [2, 0, 1]
    permuted = graph.permuted(perm)

    tape = Tape(store)
    out = relgnn_forward(tape, layer, graph, tape.const(graph.features))
    out_perm = relgnn_forward(tape, layer, permuted, tape.const(permuted.features))
    np.testing.assert_allclose(out_perm.value, out.value[perm], atol=1e-12)
    np.testing.assert_allclose(mean_pool(out_perm).value, mean_pool(out).value, atol=1e-12)


def test_relgnn_linear_without_activation():
    rng = np.random.default_rng(4)
    layer = _layer("identity", in_dim=2, out_dim=2)
    store = ParameterStore()
    layer.register(store, rng)
    graph = _path_graph(np.zeros((3, 2)))
    h1, h2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    a, b = 0.7, -1.3

    tape = Tape(store)
    combined = relgnn_forward(tape, layer, graph, tape.const(a * h1 + b * h2)).value
    separate = (a * relgnn_forward(tape, layer, graph, tape.const(h1)).value
                + b * relgnn_forward(tape, layer, graph, tape.const(h2)).value)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_mean_pool_examples():
    tape = Tape()
    np.testing.assert_allclose(mean_pool(tape.const([[1.0, 2.0], [3.0, 6.0]])).value, [[2.0, 4.0]])
    np.testing.assert_allclose(mean_pool(tape.const([[5.0, -1.0]])).value, [[5.0, -1.0]])


def test_initialisation_is_deterministic():
    def init(seed):
        store = ParameterStore()
        Dense("fc", 3, 2).register(store, np.random.default_rng(seed))
        return store.snapshot()

    a, b, c = init(7), init(7), init(8)
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])
    assert not np.array_equal(a["fc.W"], c["fc.W"])


def test_parameter_store_contracts():
    store = _store_with({"w": np.ones((2, 2))})
    with pytest.raises(ContractError):
        store.add("w", np.zeros((2, 2)))
    with pytest.raises(ContractError):
        store.load({"w": np.zeros((3, 2))})
    with pytest.raises(ContractError):
        store.load({"other": np.zeros((2, 2))})
    store.values["w"][0, 0] = np.nan
    assert store.first_non_finite() == "w"


def test_adam_first_step_moves_by_learning_rate():
    store = _store_with({"a.w": [[1.0, -1.0]], "b.w": [[2.0]]})
    store.grads["a.w"] = np.array([[0.5, -3.0]])
    store.grads["b.w"] = np.array([[4.0]])
    rates = group_learning_rates(store, {"a.": 0.1, "b.": 0.01})
    Adam(store, rates).step()
    np.testing.assert_allclose(store.values["a.w"], [[0.9, -0.9]], atol=1e-6)
    np.testing.assert_allclose(store.values["b.w"], [[1.99]], atol=1e-6)


def test_group_learning_rates_longest_prefix():
    store = _store_with({"actor.log_std": 0.0, "actor.dense0.W": 0.0, "critic.dense0.W": 0.0})
    rates = group_learning_rates(store, {"actor.": 1e-3, "actor.log_std": 1e-2}, default=5e-4)
    assert rates == {"actor.log_std": 1e-2, "actor.dense0.W": 1e-3, "critic.dense0.W": 5e-4}
    with pytest.raises(ValueError):
        group_learning_rates(store, {"actor.": 1e-3})


def test_clip_grad_norm():
    store = _store_with({"x": [[0.0, 0.0]]})
    store.grads["x"] = np.array([[3.0, 4.0]])
    assert clip_grad_norm(store, 1.0) == pytest.approx(5.0)
    assert global_grad_norm(store) == pytest.approx(1.0)


def test_three_layer_composite_gradcheck():
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        first = _layer("tanh", in_dim=3, out_dim=4)
        second = RelGnnLayer("gnn2", ("near", "far"), 4, 4, "relu")
        head = Dense("head", 4, 2, "tanh")
        graph = _path_graph(rng.normal(size=(3, 3)))
        store = ParameterStore()
        for layer in (first, second, head):
            layer.register(store, rng)

        def build(tape):
            H = relgnn_forward(tape, first, graph, tape.const(graph.features))
            H = relgnn_forward(tape, second, graph, H)
            return ad.sum_all(ad.square(head(tape, mean_pool(H))))

        errors = check_gradients(build, store)
        assert max(errors.values()) < TOLERANCE, seed


def test_pooled_embedding_invariant_under_relabeling(scenario_3d):
    scenario, layout = scenario_3d
    graph = build_graph(scenario, layout, 50.0)
    encoder = GraphEncoder(graph.feature_dim, 8, 2)
    store = ParameterStore()
    encoder.register(store, np.random.default_rng(0))
    observation = Observation(graph=graph, flat=np.zeros(1))
    reference = encoder.encode(Tape(store), observation).value
    rng = np.random.default_rng(1)
    for _ in range(50):
        relabeled = Observation(graph=graph.permuted(rng.permutation(graph.num_nodes)), flat=np.zeros(1))
        np.testing.assert_allclose(encoder.encode(Tape(store), relabeled).value, reference, rtol=0, atol=1e-12)
