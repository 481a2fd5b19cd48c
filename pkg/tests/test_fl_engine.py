"""
Test cases for the federated round loop.

Tests cover:
- Local updates and pseudo-gradients
- Client exclusion and re-inclusion identities
- Weighted aggregation
- Full experiments: simplex weights, determinism, degenerate federations
"""
import numpy as np
import pytest

from fedce.exceptions.errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    ExclusionError,
    WeightSimplexError,
)
from fedce.models.experiment import Algorithm
from fedce.models.federation import ClientDataset, FreeRiderSpec, SampleSet
from fedce.services import predictors
from fedce.services.fl_engine import (
    SIMPLEX_TOL,
    SampleProportionEstimator,
    aggregate,
    check_simplex,
    client_test_scores,
    exclude_client_gradient,
    exclude_client_model,
    global_pseudo_gradient,
    local_update,
    run_experiment,
)
from fedce.services.synthdata import generate_federation


@pytest.fixture
def toy_clients(toy_config):
    return generate_federation(toy_config.federation)


class TestLocalUpdate:
    """Test cases for local_update."""

    def test_one_step_identity(self, toy_config, toy_clients):
        """One local step moves the model by minus lr times the training gradient."""
        model = toy_config.model
        w = predictors.init_params(model, 0)
        w_local, delta = local_update(model, w, toy_clients[0], 1, 0.3)
        expected = -0.3 * predictors.gradient(model, w, toy_clients[0].train)
        assert np.allclose(delta, expected, atol=1e-12)
        assert np.array_equal(delta, w_local - w)

    def test_zero_learning_rate(self, toy_config, toy_clients):
        """A zero learning rate leaves the model unchanged."""
        w = predictors.init_params(toy_config.model, 0)
        w_local, delta = local_update(toy_config.model, w, toy_clients[1], 3, 0.0)
        assert np.array_equal(w_local, w)
        assert not np.any(delta)

    def test_two_steps_compose(self, toy_config, toy_clients):
        """Two steps equal one step applied twice."""
        model = toy_config.model
        w = predictors.init_params(model, 1)
        w_two, _ = local_update(model, w, toy_clients[2], 2, 0.2)
        w_one, _ = local_update(model, w, toy_clients[2], 1, 0.2)
        w_again, _ = local_update(model, w_one, toy_clients[2], 1, 0.2)
        assert np.allclose(w_two, w_again, atol=1e-12)

    def test_empty_train_set(self, toy_config, toy_clients):
        """A client without training samples cannot update."""
        empty = SampleSet.empty_like(toy_clients[0].train)
        client = ClientDataset(client_id=0, train=empty, val=toy_clients[0].val, test=toy_clients[0].test)
        with pytest.raises(EmptyDatasetError):
            local_update(toy_config.model, np.zeros(toy_config.model.dim), client, 1, 0.1)


class TestPseudoGradients:
    """Test cases for global_pseudo_gradient and the exclusion constructions."""

    def test_global_pseudo_gradient(self):
        """The global pseudo-gradient is the difference of consecutive models."""
        w_prev = np.array([1.0, -2.0, 0.5])
        v = np.array([0.25, 0.5, -1.0])
        assert np.array_equal(global_pseudo_gradient(w_prev, w_prev), np.zeros(3))
        assert np.allclose(global_pseudo_gradient(w_prev + v, w_prev), v, atol=1e-15)

    def test_global_pseudo_gradient_dimension_mismatch(self):
        """Models of different dimension are rejected."""
        with pytest.raises(DimensionMismatchError):
            global_pseudo_gradient(np.zeros(3), np.zeros(4))

    def test_global_delta_is_weighted_client_deltas(self):
        """The aggregated step is the weighted sum of client deltas."""
        rng = np.random.default_rng(0)
        w = rng.standard_normal(5)
        deltas = [rng.standard_normal(5) for _ in range(3)]
        rho = np.array([0.2, 0.5, 0.3])
        w_next = aggregate(w, deltas, rho)
        expected = sum(r * d for r, d in zip(rho, deltas))
        assert np.allclose(global_pseudo_gradient(w_next, w), expected, atol=1e-9)

    def test_exclusion_with_zero_weight(self):
        """Removing a zero-weight client changes nothing."""
        gF = np.array([1.0, 2.0])
        assert np.array_equal(exclude_client_gradient(gF, np.array([5.0, 5.0]), 0.0), gF)
        assert np.array_equal(exclude_client_model(gF, np.array([5.0, 5.0]), 0.0), gF)

    def test_two_client_exclusion(self):
        """Removing one of two equal-weight clients leaves the other."""
        g1, g2 = np.array([1.0, -3.0]), np.array([2.0, 4.0])
        gF = (g1 + g2) / 2
        assert np.array_equal(exclude_client_gradient(gF, g1, 0.5), g2)

    def test_identical_clients_fixed_point(self):
        """Removing a client identical to the aggregate returns the aggregate."""
        w = np.array([0.3, -0.7, 1.1])
        assert np.allclose(exclude_client_model(w, w, 0.4), w, atol=1e-15)

    def test_reinclusion_identities(self):
        """Adding an excluded client back reproduces the aggregate."""
        rng = np.random.default_rng(123)
        for _ in range(1000):
            d = int(rng.integers(1, 20))
            gF, gFi = rng.standard_normal(d), rng.standard_normal(d)
            p = float(rng.uniform(0.0, 0.95))
            excluded = exclude_client_gradient(gF, gFi, p)
            assert np.max(np.abs((1 - p) * excluded + p * gFi - gF)) <= 1e-12
            model = exclude_client_model(gF, gFi, p)
            assert np.max(np.abs((1 - p) * model + p * gFi - gF)) <= 1e-12

    @pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
    def test_exclusion_rejects_bad_weight(self, p):
        """Weights outside [0, 1) cannot be excluded."""
        with pytest.raises(ExclusionError):
            exclude_client_gradient(np.zeros(2), np.zeros(2), p)
        with pytest.raises(ExclusionError):
            exclude_client_model(np.zeros(2), np.zeros(2), p)


class TestAggregate:
    """Test cases for aggregate."""

    def test_one_hot_selects_client(self):
        """A one-hot weight vector applies a single client's delta."""
        w = np.array([1.0, 1.0])
        deltas = [np.array([0.5, 0.0]), np.array([-1.0, 2.0])]
        assert np.array_equal(aggregate(w, deltas, [0.0, 1.0]), w + deltas[1])

    def test_zero_deltas(self):
        """Zero deltas leave the model unchanged."""
        w = np.array([0.1, 0.2, 0.3])
        assert np.array_equal(aggregate(w, [np.zeros(3)] * 2, [0.4, 0.6]), w)

    def test_equals_model_average(self):
        """Aggregating deltas equals averaging the local models."""
        rng = np.random.default_rng(4)
        w = rng.standard_normal(6)
        locals_ = [w + rng.standard_normal(6) for _ in range(4)]
        rho = np.array([0.1, 0.2, 0.3, 0.4])
        w_next = aggregate(w, [wi - w for wi in locals_], rho)
        assert np.allclose(w_next, sum(r * wi for r, wi in zip(rho, locals_)), atol=1e-12)

    def test_sample_weights_match_fedavg_step(self):
        """Sample-proportional weights reproduce the FedAvg step."""
        rng = np.random.default_rng(8)
        w = rng.standard_normal(3)
        deltas = [rng.standard_normal(3) for _ in range(3)]
        counts = np.array([10.0, 30.0, 60.0])
        p = counts / counts.sum()
        fedavg = w + (10 * deltas[0] + 30 * deltas[1] + 60 * deltas[2]) / 100.0
        assert np.allclose(aggregate(w, deltas, p), fedavg, atol=1e-12)

    def test_rejects_weights_off_simplex(self):
        """Weights that are negative or do not sum to one are rejected."""
        with pytest.raises(WeightSimplexError):
            aggregate(np.zeros(2), [np.zeros(2), np.zeros(2)], [0.6, 0.6])
        with pytest.raises(WeightSimplexError):
            check_simplex([1.2, -0.2])

    def test_rejects_mismatched_lengths(self):
        """One weight per delta is required."""
        with pytest.raises(DimensionMismatchError):
            aggregate(np.zeros(2), [np.zeros(2)], [0.5, 0.5])


class TestRunExperiment:
    """Test cases for run_experiment."""

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_weights_stay_on_simplex(self, toy_config, toy_clients, algorithm):
        """Every round's weights are nonnegative and sum to one."""
        result = run_experiment(toy_config.with_algorithm(algorithm), toy_clients)
        assert len(result.round_logs) == toy_config.rounds
        for log in result.round_logs:
            rho = np.asarray(log.weights)
            assert np.all(rho >= 0)
            assert abs(rho.sum() - 1.0) < SIMPLEX_TOL
            assert len(log.rows) == len(toy_clients)

    def test_deterministic(self, toy_config, toy_clients):
        """Two runs with the same inputs are identical."""
        a = run_experiment(toy_config, toy_clients)
        b = run_experiment(toy_config, toy_clients)
        assert np.array_equal(a.final_w, b.final_w)
        assert [log.model_dump() for log in a.round_logs] == [log.model_dump() for log in b.round_logs]

    def test_threads_do_not_change_results(self, toy_config, toy_clients):
        """Parallel client updates give the same result as sequential ones."""
        a = run_experiment(toy_config, toy_clients, threads=1)
        b = run_experiment(toy_config, toy_clients, threads=4)
        assert np.array_equal(a.final_w, b.final_w)
        assert np.array_equal(a.final_rho, b.final_rho)

    def test_fedavg_uses_sample_weights(self, toy_config, toy_clients):
        """FedAvg aggregates with sample proportions and logs no terms."""
        result = run_experiment(toy_config.with_algorithm(Algorithm.FEDAVG), toy_clients)
        p = [c.p for c in toy_clients]
        for log in result.round_logs:
            assert log.weights == p
            assert all(np.isnan(row.gamma_cos) for row in log.rows)

    def test_identical_clients_get_uniform_weights(self, toy_config, toy_clients):
        """Identical clients end with equal weights."""
        clone = toy_clients[0]
        clients = [clone.with_id(i).with_weight(0.25) for i in range(4)]
        result = run_experiment(toy_config.with_algorithm(Algorithm.FEDCE_MULTI), clients)
        assert np.allclose(result.final_rho, 0.25, atol=1e-6)

    def test_single_client_fedavg_equals_standalone(self, toy_config, toy_clients):
        """A single-client federation trains like standalone training."""
        only = [toy_clients[0].with_weight(1.0)]
        fed = run_experiment(toy_config.with_algorithm(Algorithm.FEDAVG), only)
        alone = run_experiment(toy_config.with_algorithm(Algorithm.STANDALONE), only)
        assert alone.final_w is None
        assert np.allclose(fed.final_w, alone.client_models[0], atol=1e-12)

    def test_fedce_with_sample_weights_is_fedavg(self, toy_config, toy_clients):
        """FedCE with a sample-proportion estimator is bit-identical to FedAvg."""
        config = toy_config.model_copy(update={"rounds": 10})
        fedavg = run_experiment(config.with_algorithm(Algorithm.FEDAVG), toy_clients)
        stubbed = run_experiment(
            config.with_algorithm(Algorithm.FEDCE_MULTI), toy_clients, estimator=SampleProportionEstimator()
        )
        assert fedavg.final_w.tobytes() == stubbed.final_w.tobytes()
        assert [log.weights for log in fedavg.round_logs] == [log.weights for log in stubbed.round_logs]

    def test_round_zero_is_bootstrap(self, toy_config, toy_clients):
        """Round 0 uses sample proportions and uniform terms."""
        result = run_experiment(toy_config, toy_clients)
        first = result.ledger.rounds[0]
        assert first.bootstrap
        assert np.allclose(first.rho, [c.p for c in toy_clients])
        assert np.allclose(first.gamma_cos, 0.25)
        assert not result.ledger.rounds[1].bootstrap

    def test_segmentation_run(self, segmentation_config):
        """A segmentation federation trains and scores Dice in [0, 1]."""
        clients = generate_federation(segmentation_config.federation)
        result = run_experiment(segmentation_config, clients)
        scores = client_test_scores(segmentation_config.model, result, clients)
        assert scores.shape == (3,)
        assert np.all((scores >= 0) & (scores <= 1))

    def test_no_clients(self, toy_config):
        """An empty federation is rejected."""
        with pytest.raises(EmptyDatasetError):
            run_experiment(toy_config, [])

    def test_free_rider_score_uses_validation_loss_gap(self, toy_config):
        """Each row's score is the local-global dissimilarity times the validation loss gap."""
        federation = toy_config.federation.model_copy(update={"free_rider": FreeRiderSpec(client=1, repeat=20)})
        clients = generate_federation(federation)
        result = run_experiment(toy_config.with_federation(federation), clients)
        for log in result.round_logs[1:]:
            for row in log.rows:
                gap = abs(row.local_val_loss - row.global_val_loss)
                expected = (1.0 - row.local_global_cosine) * gap
                assert row.free_rider_score == pytest.approx(expected, abs=1e-12)

    def test_single_sample_free_rider_gets_continuous_score(self, toy_config):
        """A one-sample validation set still yields a graded, untied score."""
        federation = toy_config.federation.model_copy(update={"free_rider": FreeRiderSpec(client=2, repeat=20)})
        clients = generate_federation(federation)
        assert len(clients[2].val) == 1
        result = run_experiment(toy_config.with_federation(federation), clients)
        for log in result.round_logs[1:]:
            scores = [row.free_rider_score for row in log.rows]
            assert len(set(scores)) == len(scores)
            gap = abs(log.rows[2].local_val_loss - log.rows[2].global_val_loss)
            assert 0.0 < gap != 1.0
