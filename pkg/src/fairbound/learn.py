"""Fair representation learning as a game between a learner and a regulator.

The learner trains an autoencoder on reconstruction error plus
``lambda * MMD^2`` between the codes of the two sensitive groups.  After each
round the regulator moves ``lambda`` up or down by a factor that shrinks
every time the constraint ``MMD^2 <= epsilon`` flips between violated and
satisfied.  The module also estimates the fairness and discriminativeness
coefficients of a representation from held-out balanced accuracy.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Sequence

import numpy as np

from fairbound.core import Dataset, EmptyGroup, TooFewSamples
from fairbound.mmd import KernelSpec, mmd2_unbiased
from fairbound.nn import (
    SGD,
    NetworkParams,
    NetworkSpec,
    StepDecay,
    balanced_class_weights,
    backward,
    composite_loss_and_grad,
    cross_entropy_loss,
    forward,
    mse_loss,
    predict,
    softmax,
    normalize_codes,
    CODE_NORMS,
)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    dim: int = 16
    hidden: tuple[int, ...] = (64,)
    kernel: KernelSpec = KernelSpec()
    rounds: int = 8
    epochs_per_round: int = 2
    batch_size: int = 256
    lr: float = 0.05
    lr_milestones: tuple[int, ...] = ()
    momentum: float = 0.9
    grad_clip: float = 5.0
    code_noise: float = 0.0
    code_norm: str = "standardize"
    output_activation: str = "tanh"
    lambda_init: float = 1.0
    epsilon: float = 0.0
    lambda_min: float = 1e-3
    lambda_max: float = 1e6
    regulate: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "rounds", "epochs_per_round", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon < -1:
            raise ValueError("epsilon must be at least -1")
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ValueError("invalid lambda range")
        if self.regulate and not self.lambda_min <= self.lambda_init <= self.lambda_max:
            raise ValueError("initial lambda outside its range")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.code_norm not in CODE_NORMS:
            raise ValueError(f"unknown code normalization {self.code_norm!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# Named starting points.  "adult" is the census-income setting; its penalty
# weight is capped because beyond a few hundred the codes collapse and the
# task signal goes with the sensitive one.  "synthetic"
# suits low-noise tabular data whose sensitive attribute sits in one linear
# direction: a linear encoder, whitened codes (so the attribute cannot hide
# in a low-variance code direction) and a learning rate annealed at the end.
PROFILES = {
    "adult": TrainConfig(lambda_max=300.0),
    "synthetic": TrainConfig(
        dim=4, hidden=(), output_activation="identity", code_norm="whiten",
        batch_size=1024, lr=0.002, epochs_per_round=4, lr_milestones=(24, 28), epsilon=2e-4,
    ),
}


@dataclasses.dataclass(frozen=True)
class RoundRecord:
    round: int
    pretext_loss: float
    mmd2: float
    lam: float


@dataclasses.dataclass
class EncoderModel:
    encoder_spec: NetworkSpec
    encoder: NetworkParams
    decoder_spec: NetworkSpec
    decoder: NetworkParams
    history: list[RoundRecord] = dataclasses.field(default_factory=list)

    def encode(self, X) -> np.ndarray:
        return predict(self.encoder_spec, self.encoder, np.asarray(X, dtype=float))

    def reconstruct(self, X) -> np.ndarray:
        return predict(self.decoder_spec, self.decoder, self.encode(X))

    def networks(self):
        return [(self.encoder_spec, self.encoder), (self.decoder_spec, self.decoder)]

    def write_history(self, path):
        write_history(path, self.history)


def write_history(path, history: Sequence[RoundRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "pretext_loss", "mmd2", "lambda"])
        for h in history:
            w.writerow([h.round, f"{h.pretext_loss:.6g}", f"{h.mmd2:.6g}", f"{h.lam:.6g}"])


# ----------------------------------------------------------------------------
# regulator


@dataclasses.dataclass(frozen=True)
class SearchState:
    factor: float = 10.0
    last_sign: int = 0


def regulator_update(lam: float, mmd2_value: float, epsilon: float = 0.0,
                     state: SearchState | None = None,
                     lam_range: tuple[float, float] = (1e-3, 1e6),
                     floor: float = 1.1) -> tuple[float, SearchState]:
    """One step of the coarse-to-fine line search on ``lambda``.

    A violated constraint (``mmd2 > epsilon``) multiplies ``lambda`` by the
    current factor, a satisfied one (ties included) divides by it.  When the
    verdict differs from the previous round, the factor is replaced by its
    square root first, never going below ``floor``.

    >>> lam, st = 1.0, None
    >>> for _ in range(3):
    ...     lam, st = regulator_update(lam, 0.5, 0.0, st)
    >>> round(lam)
    1000
    """
    state = state or SearchState()
    sign = 1 if mmd2_value > epsilon else -1
    factor = state.factor
    if state.last_sign and sign != state.last_sign:
        factor = max(math.sqrt(factor), floor)
    new = lam * factor if sign > 0 else lam / factor
    lo, hi = lam_range
    return float(min(max(new, lo), hi)), SearchState(factor, sign)


# ----------------------------------------------------------------------------
# training


def stratified_batches(s, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle each sensitive group and deal it evenly across the batches.

    Every batch holds at least two members of each group, so the unbiased
    MMD estimate is always defined; the batch count shrinks if needed.
    """
    s = np.asarray(s)
    groups = [np.flatnonzero(s == g) for g in np.unique(s)]
    smallest = min(len(g) for g in groups)
    if len(groups) < 2 or smallest < 2:
        raise TooFewSamples("each sensitive group needs at least two samples")
    n_batches = max(1, min(math.ceil(len(s) / batch_size), smallest // 2))
    parts = [np.array_split(rng.permutation(g), n_batches) for g in groups]
    batches = [np.concatenate([p[k] for p in parts]) for k in range(n_batches)]
    order = rng.permutation(n_batches)
    return [batches[k] for k in order]


def _clip(grads: Sequence[NetworkParams], max_norm: float):
    if not max_norm:
        return
    norm = math.sqrt(sum(float((a * a).sum()) for g in grads for a in g.arrays()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            for a in g.arrays():
                a *= scale


def full_mmd2(model: EncoderModel, X, s, kernel: KernelSpec, code_norm: str = "standardize") -> float:
    Z = normalize_codes(model.encode(X), code_norm)[0]
    return mmd2_unbiased(Z[s == 0], Z[s == 1], kernel)


def train_fair_encoder(dataset: Dataset, config: TrainConfig = TrainConfig(), log=None) -> EncoderModel:
    """Alternate SGD on the regularized autoencoder with ``lambda`` updates.

    With ``config.regulate`` false, ``lambda`` stays at ``lambda_init`` for
    every round; ``lambda_init = 0`` then trains a plain autoencoder.
    """
    X, s = dataset.X, dataset.s
    for g in (0, 1):
        if np.sum(s == g) < 2:
            raise TooFewSamples(f"sensitive group {g} has fewer than two rows")
    d = X.shape[1]
    # bounded codes keep distances commensurate with the kernel lengthscale;
    # with a linear output the encoder can inflate codes until MMD^2 vanishes
    enc_spec = NetworkSpec((d, *config.hidden, config.dim), seed=config.seed,
                           output_activation=config.output_activation)
    dec_spec = NetworkSpec((config.dim, *reversed(config.hidden), d), seed=config.seed + 1)
    model = EncoderModel(enc_spec, enc_spec.init(), dec_spec, dec_spec.init())
    opt_e = SGD(model.encoder, config.momentum)
    opt_d = SGD(model.decoder, config.momentum)
    schedule = StepDecay(config.lr, config.lr_milestones)
    rng = np.random.default_rng(config.seed)
    lam, state = config.lambda_init, None
    epoch = 0
    for t in range(1, config.rounds + 1):
        for _ in range(config.epochs_per_round):
            lr = schedule(epoch)
            for idx in stratified_batches(s, config.batch_size, rng):
                noise = config.code_noise * rng.normal(size=(len(idx), config.dim)) if config.code_noise else None
                _, ge, gd = composite_loss_and_grad(
                    enc_spec, model.encoder, dec_spec, model.decoder, X[idx], s[idx], lam,
                    config.kernel, config.epsilon, noise, config.code_norm,
                )
                _clip([ge, gd], config.grad_clip)
                opt_e.step(ge, lr)
                opt_d.step(gd, lr)
            epoch += 1
        pretext = mse_loss(model.reconstruct(X), X, per_sample=True)[0]
        mmd2 = full_mmd2(model, X, s, config.kernel, config.code_norm)
        model.history.append(RoundRecord(t, pretext, mmd2, lam))
        if log:
            log(f"round {t}: pretext={pretext:.4g} mmd2={mmd2:.4g} lambda={lam:.4g}")
        if config.regulate:
            lam, state = regulator_update(
                lam, mmd2, config.epsilon, state, (config.lambda_min, config.lambda_max)
            )
    return model


# ----------------------------------------------------------------------------
# downstream classifiers and coefficient estimates


@dataclasses.dataclass(frozen=True)
class ClassifierConfig:
    hidden: tuple[int, ...] = (64, 64, 64)
    epochs: int = 20
    batch_size: int = 256
    lr: float = 0.05
    momentum: float = 0.9
    balanced: bool = True
    seed: int = 0
    arch: str = "mlp"  # or "7net": seven layers of width 8 * input, skips every two

    def __post_init__(self):
        if self.arch not in ("mlp", "7net"):
            raise ValueError(f"unknown classifier architecture {self.arch!r}")


@dataclasses.dataclass
class Classifier:
    spec: NetworkSpec
    params: NetworkParams
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, X) -> np.ndarray:
        return predict(self.spec, self.params, (np.asarray(X, dtype=float) - self.mean) / self.scale)

    def proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def predict(self, X) -> np.ndarray:
        return self.logits(X).argmax(axis=1)


def _as_2d(Z):
    Z = np.asarray(Z, dtype=float)
    return Z[:, None] if Z.ndim == 1 else Z


def fit_classifier(Z, labels, config: ClassifierConfig = ClassifierConfig(), n_classes: int | None = None) -> Classifier:
    """Train an MLP on standardized inputs with (optionally class-balanced) cross-entropy."""
    Z = _as_2d(Z)
    labels = np.asarray(labels).astype(int)
    k = n_classes or max(int(labels.max()) + 1, 2)
    mean = Z.mean(axis=0)
    scale = Z.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Zs = (Z - mean) / scale
    if config.arch == "7net":
        spec = NetworkSpec.seven_net(Z.shape[1], k, seed=config.seed)
    else:
        spec = NetworkSpec.mlp(Z.shape[1], k, config.hidden, seed=config.seed)
    params = spec.init()
    weights = balanced_class_weights(labels, k) if config.balanced else None
    opt = SGD(params, config.momentum)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(Zs))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            cache = forward(spec, params, Zs[idx])
            _, g = cross_entropy_loss(cache.output, labels[idx], weights)
            grads, _ = backward(spec, params, cache, g)
            _clip([grads], 5.0)
            opt.step(grads, config.lr)
    return Classifier(spec, params, mean, scale)


def balanced_accuracy_of(labels, predicted) -> float:
    labels = np.asarray(labels).astype(int)
    predicted = np.asarray(predicted).astype(int)
    recalls = []
    for c in np.unique(labels):
        recalls.append(np.mean(predicted[labels == c] == c))
    return float(np.mean(recalls))


def split_indices(n: int, seed: int = 0, fraction: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * fraction))
    return perm[:cut], perm[cut:]


def _held_out_ba(Z, labels, config, split, what):
    Z = _as_2d(Z)
    labels = np.asarray(labels).astype(int)
    if split is None:
        split = split_indices(len(labels), config.seed)
    train, test = split
    for part, name in ((train, "train"), (test, "test")):
        for c in (0, 1):
            if not np.any(labels[part] == c):
                raise EmptyGroup(f"{name} split has no rows with {what}={c}")
    clf = fit_classifier(Z[train], labels[train], config, n_classes=max(int(labels.max()) + 1, 2))
    return balanced_accuracy_of(labels[test], clf.predict(Z[test]))


def estimate_alpha(Z, s, config: ClassifierConfig = ClassifierConfig(), split=None) -> tuple[float, float]:
    """``(alpha_hat, ba)`` from an adversary predicting ``s`` from the representation.

    ``alpha_hat = clamp(2 * ba - 1, 0, 1)`` where ``ba`` is the adversary's
    balanced accuracy on the held-out part of ``split`` (seeded 50/50 by default).
    """
    ba = _held_out_ba(Z, s, config, split, "s")
    return float(np.clip(2.0 * ba - 1.0, 0.0, 1.0)), ba


def estimate_beta(Z, y, config: ClassifierConfig = ClassifierConfig(), split=None) -> tuple[float, float]:
    """``(beta_hat, ba)`` with ``beta_hat = clamp(2 * (1 - ba), 0, 1)`` from a task classifier."""
    ba = _held_out_ba(Z, y, config, split, "y")
    return float(np.clip(2.0 * (1.0 - ba), 0.0, 1.0)), ba


# ----------------------------------------------------------------------------
# owner/user protocol


def three_way_split(n: int, seed: int = 0, sizes: Sequence[int] | None = None):
    """Seeded disjoint index sets for encoder training, user training and user testing.

    ``sizes`` defaults to thirds of ``n``; rows beyond their sum are unused.
    """
    if sizes is None:
        third = n // 3
        sizes = (third, third, n - 2 * third)
    if len(sizes) != 3 or sum(sizes) > n or min(sizes) <= 0:
        raise ValueError(f"invalid split sizes {sizes} for {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return perm[:a], perm[a:b], perm[b:b + sizes[2]]


@dataclasses.dataclass
class TargetEvaluation:
    target: str
    alpha_hat: float
    adversary_ba: float
    beta_hat: float
    task_ba: float
    rates: object
    metrics: object
    guarantees: object


def evaluate_representation(model: EncoderModel, user_train: Dataset, user_test: Dataset,
                            adversary: ClassifierConfig = ClassifierConfig(),
                            task: ClassifierConfig | None = None,
                            predictor: ClassifierConfig | None = None) -> list[TargetEvaluation]:
    """Play the data user on frozen representations, once per target column.

    The adversary and the balanced task classifier are fitted on
    ``user_train`` and scored on ``user_test`` to give the coefficient
    estimates.  A separate downstream predictor (plain cross-entropy) supplies
    the scores whose fairness metrics are reported, next to the guarantees
    implied by the estimated coefficients and the user-train base rates.
    A target whose coefficients are unattainable under those rates gets
    ``guarantees = None``.
    """
    from fairbound.bounds import guarantee_report
    from fairbound.core import InfeasibleCoefficients, Predictions, base_rates
    from fairbound.metrics import fairness_report

    task = task or adversary
    predictor = predictor or dataclasses.replace(adversary, balanced=False)
    Ztr, Zte = model.encode(user_train.X), model.encode(user_test.X)
    Z = np.vstack([Ztr, Zte])
    split = (np.arange(len(Ztr)), np.arange(len(Ztr), len(Z)))
    alpha_hat, adv_ba = estimate_alpha(Z, np.concatenate([user_train.s, user_test.s]), adversary, split)
    out = []
    for name in user_train.targets:
        y_all = np.concatenate([user_train.targets[name], user_test.targets[name]])
        beta_hat, task_ba = estimate_beta(Z, y_all, task, split)
        clf = fit_classifier(Ztr, user_train.targets[name], predictor)
        scores = clf.proba(Zte)[:, 1]
        preds = Predictions(user_test.s, user_test.targets[name], scores)
        rates = base_rates(user_train, name)
        try:
            report = guarantee_report(rates, alpha_hat, beta_hat)
        except InfeasibleCoefficients:
            report = None
        out.append(TargetEvaluation(name, alpha_hat, adv_ba, beta_hat, task_ba, rates,
                                    fairness_report(preds), report))
    return out
