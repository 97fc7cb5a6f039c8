"""Federated training loop with block-wise aggregation schedules.

One loop covers all four algorithms. Head blocks synchronize every tau local
steps and representation blocks every alpha*tau; the averaging-period
algorithms pin alpha to 1 so that every block syncs each round, and the
control-variate algorithms add a drift correction to each local step. The
loop is lockstep (clients advance together, ascending client order) and every
random draw comes from a stream keyed by (seed, purpose, client, round), so
results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as streams
from .data import (
    DatasetShard,
    GaussianClusters,
    GaussianLinear,
    draw_round_batches,
    draw_round_batches_with_replacement,
)
from .metrics import (
    MetricsRecord,
    consensus_map,
    empirical_risk,
    population_risk_estimate,
)
from .models import ModelSpec, RidgeSpec, batch_loss, build_layout, init_params, loss_and_grad
from .params import (
    BlockLayout,
    ParamVector,
    Role,
    weighted_average,
    weighted_sum,
)

ALGORITHMS = ("fedavg", "fedals", "scaffold", "fedals_scaffold")
CONTROL_ALGORITHMS = ("scaffold", "fedals_scaffold")
PERIOD_ALGORITHMS = ("fedavg", "scaffold")  # alpha pinned to 1

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Training blew up: a client loss exceeded the guard or went non-finite."""


@dataclass(frozen=True)
class ScheduleSpec:
    """Local-update schedule: R rounds of tau steps, step size eta.

    Head blocks sync every tau completed steps, representation blocks every
    alpha*tau. alpha = 1 collapses both to the classic single period.
    """

    tau: int
    eta: float
    rounds: int
    batch_size: int
    alpha: int = 1

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1.")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1.")
        if not (self.eta > 0.0 and np.isfinite(self.eta)):
            raise ValueError("eta must be positive and finite.")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1.")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1.")

    @property
    def total_steps(self) -> int:
        return self.rounds * self.tau


def sync_due(step: int, role: Role, schedule: ScheduleSpec) -> bool:
    """Whether blocks of the given role sync after completed step `step` (>= 1).

    Both role conditions are evaluated independently, so at a representation
    boundary the head syncs too.
    """
    if step < 1:
        raise ValueError("step counts completed local steps, starting at 1.")
    period = schedule.tau if role == Role.HEAD else schedule.alpha * schedule.tau
    return step % period == 0


@dataclass(frozen=True)
class ParticipationSpec:
    """Who reports at each sync.

    full: everyone. with_replacement: num_sampled draws from the client
    weights, aggregated uniformly at 1/num_sampled. without_replacement:
    a uniform subset of num_sampled clients, aggregated with weights
    K(k) * K / num_sampled (unbiased in expectation; used as drawn).
    """

    mode: str = "full"
    num_sampled: int | None = None

    def __post_init__(self):
        if self.mode not in ("full", "with_replacement", "without_replacement"):
            raise ValueError(f"unknown participation mode {self.mode!r}.")
        if self.mode == "full":
            if self.num_sampled is not None:
                raise ValueError("full participation takes no num_sampled.")
        elif self.num_sampled is None or self.num_sampled < 1:
            raise ValueError("sampled participation needs num_sampled >= 1.")


FULL_PARTICIPATION = ParticipationSpec()


def sample_participants(
    spec: ParticipationSpec,
    num_clients: int,
    weights: Sequence[float],
    gen: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Participant indices (ascending) and their aggregation weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (num_clients,):
        raise ValueError("one weight per client required.")
    if spec.mode == "full":
        return np.arange(num_clients), w.copy()
    khat = spec.num_sampled
    if spec.mode == "with_replacement":
        idx = np.sort(gen.choice(num_clients, size=khat, replace=True, p=w))
        return idx, np.full(khat, 1.0 / khat)
    if khat > num_clients:
        raise ValueError("without_replacement cannot sample more clients than exist.")
    idx = np.sort(gen.choice(num_clients, size=khat, replace=False))
    return idx, w[idx] * (num_clients / khat)


@dataclass
class ClientState:
    """One client's mutable training state.

    control is present exactly for the control-variate algorithms; snapshot
    holds, per block, the parameter values broadcast at that block's most
    recent sync (the reference point of the next control update).
    """

    client: int
    params: ParamVector
    control: ParamVector | None = None
    snapshot: ParamVector | None = None


@dataclass
class CommCounter:
    """Parameters moved per client, upload and download counted separately."""

    uploaded: np.ndarray
    downloaded: np.ndarray

    @classmethod
    def zeros(cls, num_clients: int) -> "CommCounter":
        return cls(np.zeros(num_clients, dtype=np.int64), np.zeros(num_clients, dtype=np.int64))

    def record_sync(self, size: int, participants: np.ndarray) -> None:
        if size == 0:
            return
        # a client sampled twice still uploads once
        self.uploaded[np.unique(participants)] += size
        self.downloaded += size

    @property
    def total_uploaded(self) -> int:
        return int(self.uploaded.sum())


def comm_closed_form(schedule: ScheduleSpec, layout: BlockLayout) -> int:
    """Parameters one client moves in one direction over a full run.

    Sync events land on step multiples, so the count is
    (T // tau) * |head| + (T // (alpha*tau)) * |representation| with
    T = rounds * tau.
    """
    t = schedule.total_steps
    head = layout.role_size(Role.HEAD)
    rep = layout.role_size(Role.REPRESENTATION)
    return (t // schedule.tau) * head + (t // (schedule.alpha * schedule.tau)) * rep


def local_sgd_step(
    model: ModelSpec,
    client: ClientState,
    X,
    y,
    eta: float,
    correction: np.ndarray | None = None,
) -> float:
    """One SGD step on a batch: params -= eta * (grad + correction).

    The correction (control-variate delta c_bar - c_k) is added to the
    gradient before scaling, so a client whose variate equals the average
    takes exactly the uncorrected step. Returns the batch loss.
    """
    ev = loss_and_grad(model, client.params, X, y)
    if ev.value > DIVERGENCE_LIMIT:
        raise DivergenceError(f"client {client.client} loss {ev.value:.3e} exceeds {DIVERGENCE_LIMIT:.0e}.")
    upd = ev.grad.values if correction is None else ev.grad.values + correction
    client.params.values -= eta * upd
    if not np.all(np.isfinite(client.params.values)):
        raise DivergenceError(f"client {client.client} parameters went non-finite.")
    return ev.value


def scaffold_control_update(
    client: ClientState,
    c_bar: np.ndarray,
    eta: float,
    period: int,
    slices: Sequence[slice],
) -> None:
    """Refresh a client's control variate on the given blocks.

    c_k <- c_k - c_bar + (theta_snapshot - theta_now) / (eta * period), where
    the snapshot is the value broadcast at this role's previous sync. c_bar
    must be the average of the pre-update variates (simultaneous update).
    """
    scale = 1.0 / (eta * period)
    for sl in slices:
        client.control.values[sl] += (
            -c_bar[sl] + (client.snapshot.values[sl] - client.params.values[sl]) * scale
        )
    if not np.all(np.isfinite(client.control.values)):
        raise DivergenceError(f"client {client.client} control variate went non-finite.")


def aggregate(
    clients: Sequence[ClientState],
    layout: BlockLayout,
    role: Role,
    participants: np.ndarray,
    agg_weights: np.ndarray,
) -> int:
    """Average the participants' blocks of one role and broadcast to everyone.

    Weights summing to 1 (within tolerance) take the exact-fixed-point path;
    otherwise a plain weighted sum is used (partial-participation estimators
    weight by K(k)*K/K_hat, which only sums to 1 in expectation). Returns the
    number of parameters synced per client.
    """
    slices = layout.role_slices(role)
    size = sum(sl.stop - sl.start for sl in slices)
    if size == 0:
        return 0
    vectors = [clients[int(i)].params for i in participants]
    total = 0.0
    for x in agg_weights:
        total += float(x)
    if abs(total - 1.0) <= 1e-12:
        avg = weighted_average(vectors, agg_weights, role_filter=role)
    else:
        avg = weighted_sum(vectors, agg_weights, role_filter=role)
    for c in clients:
        for sl in slices:
            c.params.values[sl] = avg.values[sl]
    return size


@dataclass
class RunResult:
    """Everything a run produced, enough to recompute any metric offline."""

    final_params: ParamVector
    initial_params: ParamVector
    client_params: list[ParamVector]
    client_controls: list[ParamVector] | None
    records: list[MetricsRecord]
    round_params: list[ParamVector]
    round_batches: list[list[np.ndarray]]
    comm: CommCounter
    layout: BlockLayout
    steps: int


def _uniform_average(clients: Sequence[ClientState]) -> ParamVector:
    k = len(clients)
    return weighted_average([c.params for c in clients], [1.0 / k] * k)


def run_experiment(
    algorithm: str,
    model: ModelSpec,
    shards: Sequence[DatasetShard],
    schedule: ScheduleSpec,
    *,
    seed: int = 0,
    layout: BlockLayout | None = None,
    representation_layers: int = 0,
    weights: Sequence[float] | None = None,
    participation: ParticipationSpec = FULL_PARTICIPATION,
    pin_control: bool = False,
    batches_with_replacement: bool = False,
    pop_source=None,
    pop_mc: int = 2000,
    consensus_every: int = 1,
    risk_every_sync: bool = True,
    per_client_risks: bool = False,
    record_round_trace: bool = True,
    on_record: Callable[[int, int, MetricsRecord], None] | None = None,
) -> RunResult:
    """Run one federated experiment and return its full trace.

    The returned final model is the uniform average of the client states; when
    the last step synced every role (rounds*tau divisible by alpha*tau) this
    equals the last broadcast bit for bit. pop_source feeds the test risk:
    a GaussianLinear spec with a ridge model uses the exact closed form, any
    other generator is materialized once into a held-out sample of pop_mc per
    client, and a shard list is used as-is.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}.")
    if algorithm in PERIOD_ALGORITHMS and schedule.alpha != 1:
        raise ValueError(f"{algorithm} has a single period; set alpha = 1.")
    num_clients = len(shards)
    if num_clients < 1:
        raise ValueError("need at least one client shard.")

    if layout is None:
        layout = build_layout(model, representation_layers)
    if algorithm in ("fedals", "fedals_scaffold"):
        if layout.role_size(Role.REPRESENTATION) == 0 or layout.role_size(Role.HEAD) == 0:
            raise ValueError(f"{algorithm} needs both representation and head blocks.")

    if weights is None:
        weights = [1.0 / num_clients] * num_clients
    w = np.asarray([float(x) for x in weights], dtype=np.float64)
    if w.shape != (num_clients,):
        raise ValueError("one evaluation weight per client required.")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative.")
    if abs(float(np.sum(w)) - 1.0) > 1e-12:
        raise ValueError("weights must sum to 1.")
    if participation.mode == "without_replacement" and participation.num_sampled > num_clients:
        raise ValueError("without_replacement cannot sample more clients than exist.")

    if not batches_with_replacement:
        smallest = min(s.n for s in shards)
        if schedule.tau * schedule.batch_size > smallest:
            raise ValueError(
                f"tau*batch_size = {schedule.tau * schedule.batch_size} exceeds the smallest "
                f"shard ({smallest}): config violates the without-replacement sampling model."
            )

    use_control = algorithm in CONTROL_ALGORITHMS
    theta0 = init_params(model, layout, streams.substream(seed, streams.INIT))
    zeros = np.zeros(layout.total_params)
    clients = [
        ClientState(
            k,
            theta0.copy(),
            control=ParamVector(zeros.copy(), layout) if use_control else None,
            snapshot=theta0.copy() if use_control else None,
        )
        for k in range(num_clients)
    ]
    c_bar = zeros.copy() if use_control else None

    eval_shards = None
    exact_pop = None
    if pop_source is not None:
        if isinstance(pop_source, GaussianLinear) and isinstance(model, RidgeSpec):
            exact_pop = pop_source
        elif isinstance(pop_source, (GaussianLinear, GaussianClusters)):
            eval_shards = [
                DatasetShard(
                    *pop_source.sample(pop_mc, k, streams.substream(seed, streams.EVAL, k)),
                    owner=k,
                    provenance="holdout",
                )
                for k in range(num_clients)
            ]
        else:
            eval_shards = list(pop_source)

    comm = CommCounter.zeros(num_clients)
    records: list[MetricsRecord] = []
    round_params: list[ParamVector] = []
    round_batches: list[list[np.ndarray]] = []
    draw = draw_round_batches_with_replacement if batches_with_replacement else draw_round_batches
    live_control = use_control and not pin_control
    step = 0

    for r in range(1, schedule.rounds + 1):
        batches = [
            draw(shards[k], schedule.tau, schedule.batch_size, streams.substream(seed, streams.BATCH, k, r))
            for k in range(num_clients)
        ]
        if record_round_trace:
            round_batches.append(batches)
        sync_gen = streams.substream(seed, streams.PARTICIPATION, r)

        for t in range(schedule.tau):
            step += 1
            for k in range(num_clients):
                c = clients[k]
                idx = batches[k][t]
                correction = c_bar - c.control.values if live_control else None
                try:
                    local_sgd_step(
                        model, c, shards[k].X[idx], shards[k].y[idx], schedule.eta, correction
                    )
                except (ValueError, DivergenceError) as exc:
                    raise DivergenceError(
                        f"round {r} step {step} client {k}: {exc}"
                    ) from exc

            roles_due = [
                role
                for role in (Role.HEAD, Role.REPRESENTATION)
                if sync_due(step, role, schedule) and layout.role_size(role) > 0
            ]
            emit = bool(roles_due) or (consensus_every > 0 and step % consensus_every == 0)
            cons = consensus_map([c.params for c in clients]) if emit else None

            if roles_due:
                participants, agg_w = sample_participants(participation, num_clients, w, sync_gen)
                for role in roles_due:
                    slices = layout.role_slices(role)
                    if live_control:
                        period = schedule.tau if role == Role.HEAD else schedule.alpha * schedule.tau
                        old_bar = c_bar.copy()
                        for c in clients:
                            scaffold_control_update(c, old_bar, schedule.eta, period, slices)
                        for sl in slices:
                            c_bar[sl] = np.mean(
                                np.stack([c.control.values[sl] for c in clients]), axis=0
                            )
                    size = aggregate(clients, layout, role, participants, agg_w)
                    if use_control:
                        for c in clients:
                            for sl in slices:
                                c.snapshot.values[sl] = c.params.values[sl]
                    comm.record_sync(size, participants)

            if emit:
                train = test = gap = None
                pcr = None
                if roles_due and risk_every_sync:
                    avg = _uniform_average(clients)
                    train = empirical_risk(model, avg, shards, w)
                    if exact_pop is not None:
                        test, _ = population_risk_estimate(model, avg, exact_pop, w)
                    elif eval_shards is not None:
                        test, _ = population_risk_estimate(model, avg, eval_shards, w)
                    if test is not None:
                        gap = test - train
                    if per_client_risks:
                        pcr = [batch_loss(model, avg, s.X, s.y) for s in shards]
                rec = MetricsRecord(
                    round=r,
                    step=step,
                    train_risk=train,
                    test_risk=test,
                    gen_gap=gap,
                    consensus=cons,
                    comm_uploaded=comm.total_uploaded,
                    per_client_risks=pcr,
                )
                records.append(rec)
                if on_record is not None:
                    on_record(r, step, rec)

        if record_round_trace:
            round_params.append(_uniform_average(clients))

    final = _uniform_average(clients)
    return RunResult(
        final_params=final,
        initial_params=theta0,
        client_params=[c.params for c in clients],
        client_controls=[c.control for c in clients] if use_control else None,
        records=records,
        round_params=round_params,
        round_batches=round_batches,
        comm=comm,
        layout=layout,
        steps=step,
    )
