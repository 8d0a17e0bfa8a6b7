"""Round protocol for FedCCRL and the plain FedAvg baseline.

Everything that crosses the client/server boundary goes through
:class:`Transport`, which only accepts model parameters and sample
statistics from clients, serialises them, and logs the byte count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .augment import (
    AugmentConfig,
    SampleStatistics,
    StatisticsPool,
    feature_extension,
    select_statistics,
)
from .data import ClientShard, DomainDataset, leave_one_domain_out, partition_clients
from .losses import BatchTriple, LossWeights, cross_entropy, loss_breakdown
from .model import (
    AdamState,
    ModelConfig,
    ModelParameters,
    ScheduleConfig,
    adam_step,
    classify,
    cosine_lr,
    encode,
    init_params,
    predict,
)

log = logging.getLogger(__name__)

METHODS = ("fedccrl", "fedavg")


@dataclass(frozen=True)
class AblationFlags:
    ccdt_on: bool = True
    difp_on: bool = True
    ra_on: bool = True
    js_on: bool = True

    @property
    def plain(self) -> bool:
        return not (self.ccdt_on or self.difp_on or self.ra_on or self.js_on)


@dataclass(frozen=True)
class FederationConfig:
    clients_per_domain: int = 2
    rounds: int = 10
    local_epochs: int = 3
    batch_size: int = 32
    upload_ratio: float = 0.1
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    lr_init: float = 0.001
    method: str = "fedccrl"
    flags: AblationFlags = field(default_factory=AblationFlags)
    global_seed: int = 1
    hidden_sizes: tuple[int, ...] = (64,)
    representation_dim: int = 32

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1:
            raise ValueError("rounds and local_epochs must be >= 1")
        if not 0 < self.upload_ratio < 1:
            raise ValueError(f"upload_ratio must lie in (0, 1), got {self.upload_ratio}")
        if self.batch_size < 1 or self.clients_per_domain < 1:
            raise ValueError("batch_size and clients_per_domain must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr_init <= 0:
            raise ValueError("lr_init must be > 0")

    @property
    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.lr_init, self.rounds, self.local_epochs)

    @property
    def uses_statistics(self) -> bool:
        return self.method == "fedccrl" and self.flags.ccdt_on

    @property
    def plain_training(self) -> bool:
        return self.method == "fedavg" or self.flags.plain

    def model_config(self, input_dims, num_classes) -> ModelConfig:
        return ModelConfig(
            tuple(input_dims), tuple(self.hidden_sizes), self.representation_dim, num_classes, self.global_seed
        )


# ---------------------------------------------------------------- transport


@dataclass(frozen=True)
class MessageRecord:
    round: int
    direction: str  # "up" (client -> server) or "down"
    client_id: int
    kind: str  # "params", "stats" or "pool"
    nbytes: int


class Transport:
    """In-process message passing with serialisation at the boundary."""

    UPLINK_KINDS = ("params", "stats")

    def __init__(self):
        self.log: list[MessageRecord] = []

    def _record(self, rnd, direction, cid, kind, payload: bytes):
        self.log.append(MessageRecord(rnd, direction, cid, kind, len(payload)))

    def upload(self, rnd: int, client_id: int, obj):
        """Client -> server.  Only parameters or the client's own statistics pass."""
        if isinstance(obj, ModelParameters):
            payload = obj.to_bytes()
            self._record(rnd, "up", client_id, "params", payload)
            return ModelParameters.from_bytes(payload)
        if isinstance(obj, (list, tuple)) and all(isinstance(e, SampleStatistics) for e in obj):
            if any(e.origin_client != client_id for e in obj):
                raise ValueError(f"client {client_id} tried to upload statistics it does not own")
            payload = StatisticsPool(tuple(obj)).to_bytes()
            self._record(rnd, "up", client_id, "stats", payload)
            return list(StatisticsPool.from_bytes(payload).entries)
        raise TypeError(f"clients may only upload parameters or statistics, not {type(obj).__name__}")

    def download(self, rnd: int, client_id: int, obj):
        if isinstance(obj, ModelParameters):
            payload = obj.to_bytes()
            self._record(rnd, "down", client_id, "params", payload)
            return ModelParameters.from_bytes(payload)
        if isinstance(obj, StatisticsPool):
            payload = obj.to_bytes()
            self._record(rnd, "down", client_id, "pool", payload)
            return StatisticsPool.from_bytes(payload)
        raise TypeError(f"cannot send {type(obj).__name__} to a client")

    def bytes(self, direction: str, rnd: int | None = None, kind: str | None = None) -> int:
        return sum(
            r.nbytes
            for r in self.log
            if r.direction == direction and (rnd is None or r.round == rnd) and (kind is None or r.kind == kind)
        )


# ---------------------------------------------------------------- state


_PURPOSE = {"stats": 1, "shuffle": 2, "augment": 3}


def client_rng(global_seed: int, client_id: int, rnd: int, purpose: str, epoch: int = 0) -> np.random.Generator:
    """Independent stream per (seed, client, round, purpose, epoch)."""
    return np.random.default_rng(np.random.SeedSequence([global_seed, client_id, rnd, _PURPOSE[purpose], epoch]))


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    params: ModelParameters | None = None
    optimizer: AdamState | None = None

    @property
    def n(self) -> int:
        return len(self.shard)


@dataclass
class ServerState:
    global_params: ModelParameters
    client_sizes: dict[int, int]
    stats_pool: StatisticsPool = field(default_factory=StatisticsPool)
    round: int = 0


@dataclass
class RoundMetrics:
    round: int
    loss_cls: float
    loss_ra: float
    loss_js: float
    bytes_up: int
    bytes_down: int
    stats_uploaded: dict[int, int] = field(default_factory=dict)
    accuracy: float | None = None


# ---------------------------------------------------------------- aggregation


def fedavg_aggregate(param_sets: list[tuple[int, ModelParameters]]) -> ModelParameters:
    """Sample-weighted parameter average; version becomes max(version) + 1.

    Computed as ``ref + sum(n_i * (theta_i - ref)) / N`` with ``ref`` the
    elementwise minimum and the terms summed in sorted order, which makes the
    result independent of client order and exact when all inputs agree.
    """
    if not param_sets:
        raise ValueError("nothing to aggregate")
    for idx, (n, _) in enumerate(param_sets):
        if n <= 0:
            raise ValueError(f"client #{idx} has non-positive sample count {n}")
    first = param_sets[0][1]
    for idx, (_, p) in enumerate(param_sets[1:], start=1):
        if p.names != first.names:
            raise ValueError(f"client #{idx} parameter names {p.names} differ from client #0 {first.names}")
        for name in first.names:
            if p[name].shape != first[name].shape:
                raise T.ShapeMismatchError(
                    f"aggregate '{name}' (client #0 vs client #{idx})", first[name].shape, p[name].shape
                )
    counts = np.array([n for n, _ in param_sets], dtype=np.float64)
    total = counts.sum()
    entries = []
    for name in first.names:
        stack = np.stack([p[name].data for _, p in param_sets])
        ref = stack.min(axis=0)
        terms = np.sort(counts.reshape((-1,) + (1,) * (stack.ndim - 1)) * (stack - ref), axis=0)
        entries.append((name, ref + terms.sum(axis=0) / total))
    version = max(p.version for _, p in param_sets) + 1
    return ModelParameters(entries, version)


# ---------------------------------------------------------------- local training


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s : s + batch_size]


def local_train_epoch(
    client: ClientState,
    pool_view: StatisticsPool | None,
    cfg: FederationConfig,
    rnd: int,
    epoch: int,
) -> dict[str, float]:
    """One pass over the client's shard; one Adam step per batch.

    Returns the batch-averaged loss terms.
    """
    params = client.params
    lr = cosine_lr(rnd, epoch, cfg.schedule)
    shuffle_rng = client_rng(cfg.global_seed, client.client_id, rnd, "shuffle", epoch)
    aug_rng = client_rng(cfg.global_seed, client.client_id, rnd, "augment", epoch)
    flags = cfg.flags
    sums = {"loss_cls": 0.0, "loss_ra": 0.0, "loss_js": 0.0}
    nb = 0
    for idx in _batches(client.n, cfg.batch_size, shuffle_rng):
        X = client.shard.images[idx]
        Y = client.shard.labels[idx]
        params.zero_grad()
        if cfg.plain_training:
            loss = cross_entropy(classify(params, encode(params, X)), Y)
            sums["loss_cls"] += loss.item()
        else:
            X1 = feature_extension(X, pool_view, cfg.augment, aug_rng, flags.ccdt_on, flags.difp_on)
            X2 = feature_extension(X, pool_view, cfg.augment, aug_rng, flags.ccdt_on, flags.difp_on)
            b = len(Y)
            Zall = encode(params, np.concatenate([X, X1, X2]))
            Pall = classify(params, Zall)
            Z, Z1, Z2 = T.split(Zall, [b, b, b])
            P, P1, P2 = T.split(Pall, [b, b, b])
            parts = loss_breakdown(BatchTriple(Z, Z1, Z2, P, P1, P2, Y), cfg.loss, flags.ra_on, flags.js_on)
            loss = parts.total
            sums["loss_cls"] += parts.cls
            sums["loss_ra"] += parts.ra
            sums["loss_js"] += parts.js
        loss.backward()
        adam_step(params, client.optimizer, lr)
        nb += 1
    params.zero_grad()
    return {k: v / max(nb, 1) for k, v in sums.items()}


# ---------------------------------------------------------------- rounds


def run_round(
    server: ServerState,
    clients: list[ClientState],
    cfg: FederationConfig,
    transport: Transport,
) -> RoundMetrics:
    rnd = server.round
    for c in clients:
        c.params = transport.download(rnd, c.client_id, server.global_params)

    views: dict[int, StatisticsPool | None] = {c.client_id: None for c in clients}
    uploaded: dict[int, int] = {}
    if cfg.uses_statistics:
        pooled: list[SampleStatistics] = []
        for c in clients:
            stats_rng = client_rng(cfg.global_seed, c.client_id, rnd, "stats")
            mine = select_statistics(c.shard.images, cfg.upload_ratio, stats_rng, c.client_id)
            received = transport.upload(rnd, c.client_id, mine)
            uploaded[c.client_id] = len(received)
            pooled.extend(received)
        server.stats_pool = StatisticsPool(tuple(pooled))
        for c in clients:
            views[c.client_id] = transport.download(rnd, c.client_id, server.stats_pool.view_for(c.client_id))

    totals = {"loss_cls": 0.0, "loss_ra": 0.0, "loss_js": 0.0}
    uploads = []
    for c in clients:
        c.optimizer = AdamState.for_params(c.params)
        for epoch in range(cfg.local_epochs):
            stats = local_train_epoch(c, views[c.client_id], cfg, rnd, epoch)
            for k in totals:
                totals[k] += stats[k] / (cfg.local_epochs * len(clients))
        uploads.append((c.n, transport.upload(rnd, c.client_id, c.params)))

    server.global_params = fedavg_aggregate(uploads)
    server.global_params.version = rnd + 1
    server.round = rnd + 1
    return RoundMetrics(
        rnd,
        totals["loss_cls"],
        totals["loss_ra"],
        totals["loss_js"],
        transport.bytes("up", rnd),
        transport.bytes("down", rnd),
        uploaded,
    )


# ---------------------------------------------------------------- experiments


def accuracy(params: ModelParameters, dataset: DomainDataset) -> float:
    """Top-1 accuracy in percent."""
    if len(dataset) == 0:
        return float("nan")
    return 100.0 * float(np.mean(predict(params, dataset.images) == dataset.labels))


def build_clients(train: list[DomainDataset], cfg: FederationConfig) -> list[ClientState]:
    clients = []
    for dom in train:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.global_seed, dom.domain_id, 0x5EED]))
        for shard in partition_clients(dom, cfg.clients_per_domain, rng):
            if len(shard) == 0:
                raise ValueError(f"empty shard for domain {dom.domain_id}")
            clients.append(ClientState(len(clients), shard))
    if len(clients) < 2:
        raise ValueError("need at least two clients")
    return clients


@dataclass
class ExperimentReport:
    config: FederationConfig
    records: list[dict] = field(default_factory=list)
    final_accuracy: dict[int, float] = field(default_factory=dict)
    bytes_up: dict[int, int] = field(default_factory=dict)
    bytes_down: dict[int, int] = field(default_factory=dict)
    stats_bytes_up: dict[int, int] = field(default_factory=dict)
    transports: dict[int, Transport] = field(default_factory=dict, repr=False)
    final_params: dict[int, ModelParameters] = field(default_factory=dict, repr=False)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.final_accuracy.values())))


def run_single(
    cfg: FederationConfig, train: list[DomainDataset], test: DomainDataset, report: ExperimentReport | None = None
):
    """Train on ``train`` for ``cfg.rounds`` rounds, evaluating on ``test`` after each."""
    if len(train) < 1:
        raise ValueError("need at least one training domain")
    dims = train[0].image_dims
    num_classes = train[0].num_classes
    clients = build_clients(train, cfg)
    server = ServerState(
        init_params(cfg.model_config(dims, num_classes)), {c.client_id: c.n for c in clients}
    )
    transport = Transport()
    history = []
    for _ in range(cfg.rounds):
        metrics = run_round(server, clients, cfg, transport)
        metrics.accuracy = accuracy(server.global_params, test)
        history.append(metrics)
        log.info(
            "%s seed=%d target=%d round=%d acc=%.2f cls=%.4f",
            cfg.method, cfg.global_seed, test.domain_id, metrics.round, metrics.accuracy, metrics.loss_cls,
        )
    if report is not None:
        tid = test.domain_id
        for m in history:
            report.records.append(
                {
                    "round": m.round,
                    "target_domain": tid,
                    "accuracy": m.accuracy,
                    "loss_cls": m.loss_cls,
                    "loss_ra": m.loss_ra,
                    "loss_js": m.loss_js,
                    "bytes_up": m.bytes_up,
                    "bytes_down": m.bytes_down,
                    "method": cfg.method,
                    "seed": cfg.global_seed,
                }
            )
        report.final_accuracy[tid] = history[-1].accuracy
        report.bytes_up[tid] = transport.bytes("up")
        report.bytes_down[tid] = transport.bytes("down")
        report.stats_bytes_up[tid] = transport.bytes("up", kind="stats")
        report.transports[tid] = transport
        report.final_params[tid] = server.global_params
    return server, clients, transport, history


def run_experiment(
    cfg: FederationConfig, data: list[DomainDataset], targets: list[int] | None = None
) -> ExperimentReport:
    """Leave-one-domain-out training for each target domain."""
    if len(data) < 2:
        raise ValueError("leave-one-domain-out needs at least two domains")
    for d in data:
        if len(d) < cfg.clients_per_domain:
            raise ValueError(
                f"domain {d.domain_id} has {len(d)} samples, fewer than {cfg.clients_per_domain} clients"
            )
    report = ExperimentReport(cfg)
    ids = [d.domain_id for d in data] if targets is None else list(targets)
    for tid in ids:
        train, test = leave_one_domain_out(data, tid)
        run_single(cfg, train, test, report)
    return report

