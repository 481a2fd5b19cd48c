"""
Test cases for contribution estimation.

Tests cover:
- Gradient-space and data-space terms
- Normalization, combination and the cumulative weights
- Free-rider score
- Round contributions against a hand-scripted replay
"""
import numpy as np
import pytest

from fedce.exceptions.errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    NegativeContributionError,
    SimulationError,
)
from fedce.models.experiment import Algorithm
from fedce.models.federation import ClientDataset, SampleSet
from fedce.models.ledger import ContributionLedger
from fedce.models.predictor import ModelSpec
from fedce.services import predictors
from fedce.services.contribution import (
    FedCEEstimator,
    combine,
    compute_round_contributions,
    first_detection_round,
    free_rider_score,
    gamma_cos,
    gamma_err,
    normalize,
    update_rho,
)
from fedce.services.fl_engine import ClientUpdate, RoundState, exclude_client_gradient, run_experiment
from fedce.services.synthdata import generate_federation


class TestGammaCos:
    """Test cases for the gradient-space term."""

    def test_parallel_is_zero(self):
        """Parallel vectors have no angular dissimilarity."""
        assert gamma_cos(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == pytest.approx(0.0, abs=1e-15)

    def test_antipodal_is_two(self):
        """Opposite vectors reach the upper bound of 2."""
        assert gamma_cos(np.array([1.0, -1.0]), np.array([-1.0, 1.0])) == pytest.approx(2.0)

    def test_zero_vector_falls_back_to_one(self):
        """A zero vector counts as orthogonal."""
        assert gamma_cos(np.zeros(3), np.array([1.0, 0.0, 0.0])) == 1.0

    def test_three_client_worked_example(self):
        """Three-client example against hand-computed values."""
        g = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]) / np.sqrt(2.0)]
        p = 1.0 / 3.0
        gF = sum(gi * p for gi in g)
        terms = [gamma_cos(gi, exclude_client_gradient(gF, gi, p)) for gi in g]
        assert terms[0] == pytest.approx(0.6173, abs=1e-4)
        assert terms[1] == pytest.approx(terms[0], abs=1e-12)
        assert terms[2] == pytest.approx(0.0, abs=1e-12)

    def test_range(self):
        """Random pairs stay within [0, 2]."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            value = gamma_cos(rng.standard_normal(4), rng.standard_normal(4))
            assert 0.0 <= value <= 2.0

    def test_dimension_mismatch(self):
        """Vectors of different length are rejected."""
        with pytest.raises(DimensionMismatchError):
            gamma_cos(np.zeros(2), np.zeros(3))


class TestGammaErr:
    """Test cases for the data-space term."""

    def _client(self, features, labels):
        data = SampleSet(features=np.asarray(features, dtype=np.float64), labels=np.asarray(labels))
        return ClientDataset(client_id=0, train=data, val=data, test=data)

    def test_perfect_model(self, toy_config):
        """A model that classifies the validation set perfectly scores 0."""
        model = toy_config.model
        client = self._client([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]], [1, 0])
        w = np.array([5.0, 0.0, 0.0, 0.0, 0.0])
        assert gamma_err(model, w, client) == 0.0

    def test_chance_model(self, toy_config):
        """A constant prediction on balanced labels scores 0.5."""
        client = self._client(np.eye(4), [0, 1, 0, 1])
        w = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
        assert gamma_err(toy_config.model, w, client) == pytest.approx(0.5)

    def test_uses_validation_samples(self, toy_config):
        """The error is measured on validation samples, not training samples."""
        good = SampleSet(features=np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]]), labels=np.array([1, 0]))
        bad = SampleSet(features=np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]]), labels=np.array([0, 1]))
        client = ClientDataset(client_id=0, train=good, val=bad, test=good)
        w = np.array([5.0, 0.0, 0.0, 0.0, 0.0])
        assert gamma_err(toy_config.model, w, client) == 1.0

    def test_empty_validation(self, toy_config):
        """A client without validation samples raises EmptyDatasetError."""
        data = SampleSet(features=np.ones((2, 4)), labels=np.array([0, 1]))
        client = ClientDataset(client_id=0, train=data, val=SampleSet.empty_like(data), test=data)
        with pytest.raises(EmptyDatasetError):
            gamma_err(toy_config.model, np.zeros(5), client)


class TestNormalizeCombine:
    """Test cases for normalize and combine."""

    def test_already_normalized(self):
        """Values that already sum to one are unchanged."""
        values, degenerate = normalize([0.2, 0.3, 0.5])
        assert values == pytest.approx([0.2, 0.3, 0.5])
        assert not degenerate

    def test_all_zero_is_uniform(self):
        """All-zero terms fall back to a uniform, degenerate vector."""
        values, degenerate = normalize([0.0] * 4)
        assert values.tolist() == [0.25] * 4
        assert degenerate

    def test_simple_ratio(self):
        """Values are divided by their sum."""
        values, _ = normalize([1.0, 3.0])
        assert values.tolist() == [0.25, 0.75]

    def test_negative_rejected(self):
        """Negative terms raise NegativeContributionError."""
        with pytest.raises(NegativeContributionError):
            normalize([0.5, -0.1])

    def test_multi(self):
        """The multiplicative mode takes the elementwise product."""
        assert combine([0.5, 0.5, 0.0], [0.2, 0.3, 0.5], "multi") == pytest.approx([0.10, 0.15, 0.0])

    def test_sum(self):
        """The additive mode takes the elementwise sum."""
        assert combine([0.5, 0.5, 0.0], [0.2, 0.3, 0.5], "sum") == pytest.approx([0.7, 0.8, 0.5])

    def test_single_term_modes(self):
        """The cos and err modes pass one term through."""
        assert combine([0.1, 0.9], [0.6, 0.4], "cos").tolist() == [0.1, 0.9]
        assert combine([0.1, 0.9], [0.6, 0.4], "err").tolist() == [0.6, 0.4]

    def test_uniform_err_keeps_ranking(self):
        """A uniform data-space term preserves the gradient-space ranking."""
        gcos = np.array([0.1, 0.5, 0.15, 0.25])
        combined = combine(gcos, np.full(4, 0.25), "multi")
        assert np.argsort(combined).tolist() == np.argsort(gcos).tolist()

    def test_length_mismatch(self):
        """Terms of different length are rejected."""
        with pytest.raises(DimensionMismatchError):
            combine([0.5, 0.5], [1.0], "multi")

    def test_unknown_mode(self):
        """An unknown combination mode raises ValueError."""
        with pytest.raises(ValueError):
            combine([0.5], [0.5], "max")


class TestUpdateRho:
    """Test cases for update_rho."""

    def test_single_round(self):
        """One round of terms normalizes into the weights."""
        ledger = ContributionLedger(3)
        assert update_rho(ledger, 1, [0.1, 0.15, 0.0]) == pytest.approx([0.4, 0.6, 0.0], abs=1e-12)

    def test_two_rounds(self):
        """Weights follow the running sum over two rounds."""
        ledger = ContributionLedger(3)
        update_rho(ledger, 1, [0.1, 0.15, 0.0])
        rho = update_rho(ledger, 2, [0.05, 0.05, 0.1])
        assert rho == pytest.approx([1 / 3, 4 / 9, 2 / 9], abs=1e-12)
        assert ledger.cumulative_combined == pytest.approx([0.15, 0.2, 0.1], abs=1e-12)

    def test_constant_terms_keep_rho(self):
        """Repeating the same terms leaves the weights unchanged."""
        ledger = ContributionLedger(3)
        first = update_rho(ledger, 1, [0.2, 0.3, 0.5])
        for k in range(2, 6):
            assert update_rho(ledger, k, [0.2, 0.3, 0.5]) == pytest.approx(first, abs=1e-12)

    def test_all_zero_history_is_uniform(self):
        """A history of zeros yields uniform weights."""
        ledger = ContributionLedger(4)
        assert update_rho(ledger, 1, [0.0] * 4).tolist() == [0.25] * 4

    def test_zero_client_keeps_zero_weight(self):
        """A client that never contributes keeps zero weight."""
        ledger = ContributionLedger(3)
        rng = np.random.default_rng(2)
        for k in range(1, 8):
            rho = update_rho(ledger, k, [rng.random(), rng.random(), 0.0])
        assert rho[2] == 0.0

    def test_positive_scale_invariance(self):
        """Scaling every round's terms by a constant leaves the weights unchanged."""
        rng = np.random.default_rng(9)
        plain, scaled = ContributionLedger(5), ContributionLedger(5)
        for k in range(1, 20):
            terms = rng.random(5)
            rho = update_rho(plain, k, terms)
            rho_scaled = update_rho(scaled, k, terms * 7.5)
            assert np.max(np.abs(rho - rho_scaled)) <= 1e-12

    def test_negative_rejected(self):
        """Negative terms raise NegativeContributionError."""
        with pytest.raises(NegativeContributionError):
            update_rho(ContributionLedger(2), 1, [0.5, -0.5])

    def test_wrong_length(self):
        """A term vector of the wrong length is rejected."""
        with pytest.raises(DimensionMismatchError):
            update_rho(ContributionLedger(3), 1, [0.5, 0.5])


class TestFreeRiderScore:
    """Test cases for free_rider_score."""

    def test_honest_client(self):
        """An update parallel to the global one with no loss gap scores 0."""
        g = np.array([1.0, 2.0])
        assert free_rider_score(g, 2 * g, 0.3, 0.3) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal_with_gap(self):
        """An orthogonal update scores the full loss gap."""
        assert free_rider_score(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.1, 0.5) == pytest.approx(0.4)

    def test_nonnegative(self):
        """Scores are never negative."""
        rng = np.random.default_rng(1)
        for _ in range(100):
            score = free_rider_score(rng.standard_normal(3), rng.standard_normal(3), rng.random(), rng.random())
            assert score >= 0.0


def _scripted_ledger(config, clients):
    """Independent re-execution of the weighted round loop with the multiplicative combination."""
    model = config.model
    lr = config.client_lr
    n = len(clients)
    w = predictors.init_params(model, config.federation.seed)
    w_prev = None
    rho_prev = np.array([c.p for c in clients])
    cumulative = np.zeros(n)
    history = [rho_prev.copy()]
    for k in range(config.rounds):
        local = [w - lr * predictors.gradient(model, w, c.train) for c in clients]
        deltas = [wi - w for wi in local]
        if k == 0:
            rho = rho_prev
        else:
            gF = w - w_prev
            cos_terms, err_terms = [], []
            for i, c in enumerate(clients):
                excl_g = (gF - rho_prev[i] * deltas[i]) / (1.0 - rho_prev[i])
                excl_w = (w - rho_prev[i] * local[i]) / (1.0 - rho_prev[i])
                cos = np.dot(deltas[i], excl_g) / (np.linalg.norm(deltas[i]) * np.linalg.norm(excl_g))
                cos_terms.append(1.0 - cos)
                err_terms.append(predictors.evaluate_error(model, excl_w, c.val))
            cos_terms = np.array(cos_terms) / np.sum(cos_terms)
            err_terms = np.array(err_terms) / np.sum(err_terms)
            cumulative = cumulative + cos_terms * err_terms
            rho = cumulative / np.sum(cumulative)
            history.append(rho.copy())
        step = np.zeros_like(w)
        for r, d in zip(rho, deltas):
            step += r * d
        w_prev, w, rho_prev = w, w + step, rho
    return history


class TestRoundContributions:
    """Test cases for compute_round_contributions and the FedCE estimator."""

    def test_matches_scripted_replay(self, make_config):
        """The weight history matches an independent replay of the round loop."""
        config = make_config(
            federation={"n_clients": 3, "samples_per_client": [24, 32, 40], "shift_scale": 0.8, "seed": 5},
            rounds=3,
            algorithm="fedce_multi",
        )
        clients = generate_federation(config.federation)
        result = run_experiment(config, clients)
        expected = _scripted_ledger(config, clients)
        assert len(result.ledger.rho_history) == len(expected)
        for got, want in zip(result.ledger.rho_history, expected):
            assert np.allclose(got, want, atol=1e-12)

    def test_round_zero_rejected(self, toy_config):
        """Round 0 has no previous model and is rejected."""
        state = RoundState(round=0, w=np.zeros(5), w_prev=None, rho_prev=np.array([0.5, 0.5]))
        with pytest.raises(SimulationError):
            compute_round_contributions(state, [], toy_config.model, ContributionLedger(2))

    def test_average_client_with_zero_error_contributes_nothing(self):
        """An averaging client with perfect leave-out models gets no combined term."""
        # client 2's delta is the average of the others and every leave-out model is perfect
        data = SampleSet(features=np.array([[1.0, 0.0], [-1.0, 0.0]]), labels=np.array([1, 0]))
        clients = [ClientDataset(client_id=i, train=data, val=data, test=data, p=1 / 3) for i in range(3)]
        model = ModelSpec(input_dim=2)
        w_prev = np.array([5.5, -0.5, 0.0])
        w = np.array([6.0, 0.0, 0.0])
        deltas = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.5, 0.5, 0.0])]
        updates = [ClientUpdate(i, w + d, d) for i, d in enumerate(deltas)]
        state = RoundState(round=1, w=w, w_prev=w_prev, rho_prev=np.full(3, 1 / 3), updates=updates)
        ledger = ContributionLedger(3, "multi")
        record = compute_round_contributions(state, clients, model, ledger, "multi", threads=1)
        assert record.gamma_m[2] == pytest.approx(0.0, abs=1e-12)
        assert abs(record.rho.sum() - 1.0) < 1e-9

    def test_permuting_clients_permutes_ledger(self, make_config):
        """Reordering the clients reorders the ledger the same way."""
        config = make_config(rounds=4)
        clients = generate_federation(config.federation)
        order = [2, 0, 3, 1]
        permuted = [clients[i].with_id(j) for j, i in enumerate(order)]
        a = run_experiment(config, clients)
        b = run_experiment(config, permuted)
        for ra, rb in zip(a.ledger.rounds, b.ledger.rounds):
            assert np.allclose(ra.rho[order], rb.rho, atol=1e-9)
            assert np.allclose(ra.gamma_cos[order], rb.gamma_cos, atol=1e-9)

    def test_cumulative_sums_nondecreasing(self, toy_config):
        """Running sums of combined terms only grow and match the ledger."""
        clients = generate_federation(toy_config.federation)
        estimator = FedCEEstimator("sum", threads=1)
        result = run_experiment(toy_config.with_algorithm(Algorithm.FEDCE_SUM), clients, estimator=estimator)
        ledger = result.ledger
        running = np.zeros(ledger.n_clients)
        for record in ledger.rounds:
            if record.bootstrap:
                continue
            assert record.gamma_cos.sum() == pytest.approx(1.0, abs=1e-9)
            assert record.gamma_err.sum() == pytest.approx(1.0, abs=1e-9)
            updated = running + record.combined
            assert np.all(updated >= running)
            running = updated
        assert np.allclose(running, ledger.cumulative_combined, atol=1e-12)

    def test_unknown_mode(self):
        """An unknown combination mode raises ValueError."""
        with pytest.raises(ValueError):
            FedCEEstimator("max")


class TestDetectionRound:
    """Test cases for first_detection_round."""

    def test_round_zero_ignored(self):
        """Scores from the bootstrap round never count as a detection."""
        scores = [[0.9, 0.1], [0.2, 0.3], [0.1, 0.5]]
        assert first_detection_round(scores, 0) is None
        assert first_detection_round(scores, 1) == 1

    def test_later_detection(self):
        """Detection is the first round where the client leads."""
        scores = [[0.0, 0.0, 0.0], [0.5, 0.1, 0.2], [0.1, 0.1, 0.4]]
        assert first_detection_round(scores, 2) == 2

    def test_all_tied_scores_never_detect(self):
        """Equal scores in every round identify no client."""
        scores = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.3, 0.3, 0.3]]
        for position in range(3):
            assert first_detection_round(scores, position) is None

    def test_shared_maximum_is_not_a_detection(self):
        """A maximum shared with another client does not count."""
        scores = [[0.0, 0.0, 0.0], [0.4, 0.4, 0.1], [0.2, 0.5, 0.1]]
        assert first_detection_round(scores, 0) is None
        assert first_detection_round(scores, 1) == 2
