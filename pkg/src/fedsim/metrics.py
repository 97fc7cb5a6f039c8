"""Risk, consensus, and heterogeneity measurements.

Everything here is a pure function of model parameters and data, so records
can be recomputed offline from a run's inputs. Population risk has three
routes: exact closed form (ridge on Gaussian linear data), fresh-sample Monte
Carlo with a standard error, or a held-out sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import DatasetShard, GaussianClusters, GaussianLinear, GeneratorSpec
from .models import (
    LogisticL2Spec,
    MlpSpec,
    ModelSpec,
    RidgeSpec,
    batch_loss,
    population_risk_closed_form,
    predict,
)
from .params import ParamVector, Role


@dataclass
class MetricsRecord:
    """One measurement row.

    Risk fields are None at steps where the cadence skips them; consensus maps
    block name to the consensus distance just before any sync at this step.
    comm_uploaded counts cumulative parameters uploaded across all clients.
    """

    round: int
    step: int
    train_risk: float | None
    test_risk: float | None
    gen_gap: float | None
    consensus: dict[str, float]
    comm_uploaded: int
    per_client_risks: list[float] | None = None

    def to_row(self) -> dict:
        return {
            "round": self.round,
            "step": self.step,
            "train_risk": self.train_risk,
            "test_risk": self.test_risk,
            "gen_gap": self.gen_gap,
            "consensus": self.consensus,
            "comm_uploaded": self.comm_uploaded,
            "per_client_risks": self.per_client_risks,
        }


def sample_losses(model: ModelSpec, params: ParamVector, X, y) -> np.ndarray:
    """Per-sample losses (each includes the l2 term, matching the batch mean)."""
    X = np.asarray(X, dtype=np.float64)
    theta = params.values
    if isinstance(model, RidgeSpec):
        r = X @ theta - np.asarray(y, dtype=np.float64)
        data = 0.5 * r * r
    elif isinstance(model, LogisticL2Spec):
        yf = np.asarray(y).astype(np.float64)
        data = np.logaddexp(0.0, -yf * (X @ theta))
    else:
        from .models import _mlp_views  # forward pass only

        labels = np.asarray(y).astype(np.int64)
        layers = _mlp_views(model, theta)
        a = X
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            if i < len(layers) - 1:
                a = np.maximum(z, 0.0) if model.activation == "relu" else np.tanh(z)
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        data = lse - z[np.arange(X.shape[0]), labels]
    return data + 0.5 * model.l2 * float(np.dot(theta, theta))


def empirical_risk(
    model: ModelSpec,
    params: ParamVector,
    shards: Sequence[DatasetShard],
    weights: Sequence[float],
) -> float:
    """Client-weighted empirical risk sum_k w_k * mean-loss(shard_k)."""
    if len(shards) != len(weights):
        raise ValueError("one weight per shard required.")
    if abs(float(np.sum(np.asarray(weights, dtype=np.float64))) - 1.0) > 1e-12:
        raise ValueError("client weights must sum to 1.")
    # anchored form: identical shard risks collapse to the first value exactly
    risks = [batch_loss(model, params, s.X, s.y) for s in shards]
    total = risks[0]
    for risk, w in zip(risks[1:], weights[1:]):
        total += float(w) * (risk - risks[0])
    return total


def population_risk_estimate(
    model: ModelSpec,
    params: ParamVector,
    source,
    weights: Sequence[float],
    *,
    n_mc: int = 0,
    gen: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Client-weighted population risk with a standard error.

    source selects the route:
      - GaussianLinear with a ridge model: exact closed form, stderr 0;
      - any GeneratorSpec otherwise: fresh-sample Monte Carlo (needs n_mc and
        a generator for the draws);
      - a sequence of DatasetShard: held-out estimate.
    """
    weights = [float(w) for w in weights]
    if isinstance(source, GaussianLinear) and isinstance(model, RidgeSpec):
        total = 0.0
        for k, w in enumerate(weights):
            total += w * population_risk_closed_form(
                model, params, source.covariance, source.coef_for(k), source.noise_std
            )
        return total, 0.0
    if isinstance(source, (GaussianLinear, GaussianClusters)):
        if n_mc < 2 or gen is None:
            raise ValueError("Monte Carlo route needs n_mc >= 2 and a generator.")
        total = 0.0
        var = 0.0
        for k, w in enumerate(weights):
            x, y = source.sample(n_mc, k, gen)
            losses = sample_losses(model, params, x, y)
            total += w * float(np.mean(losses))
            var += w * w * float(np.var(losses, ddof=1)) / n_mc
        return total, float(np.sqrt(var))
    shards = list(source)
    if len(shards) != len(weights):
        raise ValueError("one weight per holdout shard required.")
    total = 0.0
    var = 0.0
    for shard, w in zip(shards, weights):
        losses = sample_losses(model, params, shard.X, shard.y)
        total += w * float(np.mean(losses))
        if shard.n > 1:
            var += w * w * float(np.var(losses, ddof=1)) / shard.n
    return total, float(np.sqrt(var))


def consensus_distance(
    client_params: Sequence[ParamVector],
    role_filter: Role | None = None,
    block: str | None = None,
) -> float:
    """Mean squared distance of clients to their unweighted average.

    (1/K) sum_k ||mean - theta_k||^2 over the selected coordinates. The mean
    is always uniform, matching the drift quantity the schedules control, even
    when evaluation weights are not.
    """
    if not client_params:
        raise ValueError("need at least one client.")
    if role_filter is not None and block is not None:
        raise ValueError("select by role or by block, not both.")
    layout = client_params[0].layout
    for p in client_params[1:]:
        if p.layout != layout:
            raise ValueError("client vectors do not share a layout.")
    if block is not None:
        slices = (layout.block(block).slice,)
    else:
        slices = layout.role_slices(role_filter)
    stacked = np.stack([p.values for p in client_params])
    center = np.mean(stacked, axis=0)
    total = 0.0
    for sl in slices:
        diff = stacked[:, sl] - center[sl]
        total += float(np.sum(diff * diff))
    return total / len(client_params)


def consensus_map(client_params: Sequence[ParamVector]) -> dict[str, float]:
    """Per-block consensus distances, in layout order."""
    layout = client_params[0].layout
    return {b.name: consensus_distance(client_params, block=b.name) for b in layout.blocks}


def roundwise_gen_error(
    model: ModelSpec,
    round_params: Sequence[ParamVector],
    round_batches: Sequence[Sequence[np.ndarray]],
    shards: Sequence[DatasetShard],
    weights: Sequence[float],
    population_client_risks: Callable[[ParamVector], np.ndarray],
) -> float:
    """Average over rounds of the generalization gap of the round's aggregate.

    For each round r, the end-of-round aggregate is compared against the
    samples consumed during that round (the union of its batches):
    sum_k w_k * (R_k(theta_r) - mean_{i in Z_{k,r}} loss(theta_r, z_i)),
    averaged over rounds. population_client_risks returns the per-client
    population risks of a parameter vector.
    """
    if len(round_params) != len(round_batches):
        raise ValueError("one parameter vector per round required.")
    if not round_params:
        raise ValueError("need at least one round.")
    weights = [float(w) for w in weights]
    total = 0.0
    for theta, batches in zip(round_params, round_batches):
        pop = np.asarray(population_client_risks(theta), dtype=np.float64)
        if pop.shape != (len(shards),):
            raise ValueError("population_client_risks must return one value per client.")
        round_term = 0.0
        for k, (shard, w) in enumerate(zip(shards, weights)):
            idx = np.asarray(batches[k]).reshape(-1)
            emp = batch_loss(model, theta, shard.X[idx], shard.y[idx])
            round_term += w * (float(pop[k]) - emp)
        total += round_term
    return total / len(round_params)


def non_iidness(
    model: ModelSpec,
    shards: Sequence[DatasetShard],
    global_params: ParamVector,
    local_params: Sequence[ParamVector],
) -> np.ndarray:
    """Per-client excess empirical risk of the aggregate over the local model.

    delta_k = R_{S_k}(global) - R_{S_k}(local_k). Near zero when clients are
    statistically identical; grows with heterogeneity.
    """
    if len(shards) != len(local_params):
        raise ValueError("one local model per shard required.")
    out = np.empty(len(shards))
    for k, (shard, local) in enumerate(zip(shards, local_params)):
        out[k] = batch_loss(model, global_params, shard.X, shard.y) - batch_loss(
            model, local, shard.X, shard.y
        )
    return out


def accuracy(model: ModelSpec, params: ParamVector, X, y) -> float:
    """Fraction of correct labels; classifiers only."""
    if isinstance(model, RidgeSpec):
        raise ValueError("accuracy is undefined for regression.")
    pred = predict(model, params, X)
    return float(np.mean(pred == np.asarray(y)))
