import csv
import math

import numpy as np
import pytest

from fairbound.bounds import tradeoff_beta_lower_bound
from fairbound.core import BaseRates, Dataset, EmptyGroup, TooFewSamples
from fairbound.data import synth_correlated
from fairbound.learn import (
    PROFILES,
    ClassifierConfig,
    SearchState,
    TrainConfig,
    estimate_alpha,
    estimate_beta,
    evaluate_representation,
    full_mmd2,
    regulator_update,
    stratified_batches,
    three_way_split,
    train_fair_encoder,
)
from fairbound.mmd import mmd2_unbiased
from fairbound.nn import normalize_codes

FAST_CLF = ClassifierConfig(hidden=(16,), epochs=10)


# -- regulator ----------------------------------------------------------------


def test_tie_counts_as_satisfied():
    lam, state = regulator_update(10.0, 0.0, 0.0)
    assert lam == 1.0 and state.last_sign == -1


def test_geometric_growth():
    lam, state = 1.0, None
    for _ in range(3):
        lam, state = regulator_update(lam, 0.2, 0.0, state)
    assert lam == pytest.approx(1000.0)


def test_factor_shrinks_on_each_flip():
    lam, state = 1.0, None
    factors = []
    for t in range(6):
        lam, state = regulator_update(lam, 0.1 if t % 2 == 0 else -0.1, 0.0, state)
        factors.append(state.factor)
    want, f = [], 10.0
    for t in range(6):
        if t:
            f = max(math.sqrt(f), 1.1)
        want.append(f)
    assert factors == pytest.approx(want)
    assert all(a >= b for a, b in zip(factors, factors[1:]))


def test_clamp_and_floor():
    lam, state = regulator_update(1e6, 1.0, 0.0, SearchState(10.0, 1))
    assert lam == 1e6
    lam, state = regulator_update(1e-3, -1.0, 0.0, SearchState(1.1, 1))
    assert lam == 1e-3 and state.factor == 1.1


# -- batching and splits ----------------------------------------------------------


def test_stratified_batches_cover_everything():
    s = np.array([0] * 37 + [1] * 9)
    batches = stratified_batches(s, 10, np.random.default_rng(0))
    assert sorted(np.concatenate(batches)) == list(range(46))
    for b in batches:
        assert (s[b] == 0).sum() >= 2 and (s[b] == 1).sum() >= 2
    with pytest.raises(TooFewSamples):
        stratified_batches(np.array([0, 0, 0, 1]), 2, np.random.default_rng(0))


def test_three_way_split():
    a, b, c = three_way_split(100, seed=1)
    assert len(set(a) | set(b) | set(c)) == 100
    a, b, c = three_way_split(100, seed=1, sizes=(10, 20, 30))
    assert (len(a), len(b), len(c)) == (10, 20, 30)
    with pytest.raises(ValueError):
        three_way_split(10, sizes=(5, 5, 5))


# -- coefficient estimates -----------------------------------------------------------


def test_alpha_examples():
    rng = np.random.default_rng(0)
    n = 10_000
    s = rng.integers(0, 2, n)
    alpha, ba = estimate_alpha(s[:, None].astype(float), s, FAST_CLF)
    assert ba == pytest.approx(1.0) and alpha == pytest.approx(1.0)
    alpha, ba = estimate_alpha(rng.normal(size=(n, 2)), s, FAST_CLF)
    assert alpha <= 0.05


def test_beta_examples():
    rng = np.random.default_rng(1)
    n = 4000
    y = rng.integers(0, 2, n)
    beta, ba = estimate_beta(y.astype(float), y, FAST_CLF)
    assert ba == pytest.approx(1.0) and beta == pytest.approx(0.0)
    beta, ba = estimate_beta(rng.normal(size=n), y, FAST_CLF)
    assert abs(ba - 0.5) < 0.05 and beta >= 0.9


def test_seven_layer_classifier():
    rng = np.random.default_rng(4)
    s = rng.integers(0, 2, 2000)
    Z = np.c_[s + 0.1 * rng.normal(size=2000), rng.normal(size=2000)]
    alpha, _ = estimate_alpha(Z, s, ClassifierConfig(arch="7net", epochs=5))
    assert alpha >= 0.9
    with pytest.raises(ValueError):
        ClassifierConfig(arch="resnet")


def test_estimates_need_both_classes():
    with pytest.raises(EmptyGroup):
        estimate_alpha(np.zeros((6, 1)), np.array([0, 0, 0, 0, 0, 1]), FAST_CLF, split=([0, 1, 2], [3, 4, 5]))


# -- training ----------------------------------------------------------------------


def _linear_data(n=600, seed=0):
    rng = np.random.default_rng(seed)
    latent = rng.normal(size=(n, 2))
    X = latent @ rng.normal(size=(2, 5))
    s = rng.integers(0, 2, n)
    return Dataset(X, s, {"y": (latent[:, 0] > 0).astype(int)})


def test_plain_linear_autoencoder_improves():
    cfg = TrainConfig(dim=2, hidden=(), output_activation="identity", lambda_init=0.0, regulate=False,
                      rounds=5, epochs_per_round=2, batch_size=64, lr=0.01, code_norm="none")
    model = train_fair_encoder(_linear_data(), cfg)
    losses = [h.pretext_loss for h in model.history]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert all(h.lam == 0.0 for h in model.history)


def test_independent_features_give_null_mmd():
    d = _linear_data(1200, seed=3)
    cfg = TrainConfig(dim=2, hidden=(8,), rounds=2, epochs_per_round=1, batch_size=128, regulate=False)
    model = train_fair_encoder(d, cfg)
    Z = model.encode(d.X)
    value = full_mmd2(model, d.X, d.s, cfg.kernel, cfg.code_norm)
    # permutation spread of the statistic under the null
    rng = np.random.default_rng(0)
    Zn = normalize_codes(Z, cfg.code_norm)[0]
    null = []
    for _ in range(30):
        p = rng.permutation(d.s)
        null.append(mmd2_unbiased(Zn[p == 0], Zn[p == 1], cfg.kernel))
    assert abs(value) <= 3 * np.std(null) + 1e-12


def test_lambda_stays_in_range_and_run_is_reproducible(tmp_path):
    d = _linear_data(400, seed=5)
    cfg = TrainConfig(dim=2, hidden=(8,), rounds=4, epochs_per_round=1, batch_size=64,
                      lambda_min=0.01, lambda_max=100.0)
    a = train_fair_encoder(d, cfg)
    b = train_fair_encoder(d, cfg)
    assert all(0.01 <= h.lam <= 100.0 for h in a.history)
    assert [h.round for h in a.history] == [1, 2, 3, 4]
    for x, y in zip(a.encoder.arrays() + a.decoder.arrays(), b.encoder.arrays() + b.decoder.arrays()):
        assert np.array_equal(x, y)
    a.write_history(tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["round", "pretext_loss", "mmd2", "lambda"] and len(rows) == 5


def test_config_validation():
    for bad in (dict(dim=0), dict(lr=0.0), dict(code_norm="pca"), dict(lambda_init=1e9)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig().replace(dim=3).dim == 3
    assert set(PROFILES) == {"adult", "synthetic"}


def test_evaluation_fields():
    d = synth_correlated(1500, 0.5, 0.5, seed=2)
    own, tr, te = three_way_split(d.n, seed=0)
    cfg = PROFILES["synthetic"].replace(rounds=1, epochs_per_round=1)
    model = train_fair_encoder(d.subset(own), cfg)
    evals = evaluate_representation(model, d.subset(tr), d.subset(te), FAST_CLF)
    assert [e.target for e in evals] == ["t1", "t2", "t3"]
    for e in evals:
        assert 0 <= e.alpha_hat <= 1 and 0 <= e.beta_hat <= 1
        assert e.alpha_hat == evals[0].alpha_hat
        assert set(e.metrics.notions()) == {"sp", "dopp", "dr", "dodds", "dpc", "dnc", "dc"}


@pytest.mark.slow
@pytest.mark.parametrize("gap", [0.4, 0.8])
def test_tradeoff_soft_check(gap):
    p1 = 0.5 + gap / 2
    d = synth_correlated(9000, p1, 1 - p1, seed=1)
    own, tr, te = three_way_split(d.n, seed=0)
    model = train_fair_encoder(d.subset(own), PROFILES["synthetic"].replace(rounds=4))
    (ev, *_) = evaluate_representation(model, d.subset(tr), d.subset(te))
    rates = BaseRates(0.5, p1, 1 - p1)
    assert ev.beta_hat >= tradeoff_beta_lower_bound(rates, ev.alpha_hat) - 0.1
