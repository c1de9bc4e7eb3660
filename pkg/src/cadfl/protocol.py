"""Round-based decentralised training with delayed clients.

Round 0 initialises every client that is present from the start, gives it one
warm-up epoch, compresses it and sends it along the round-0 peer graph. Each
later round ``r`` then:

1. activates clients whose join round is ``r`` (fresh model + warm-up);
2. builds the peer graph ``G^r`` over the active clients;
3. lets every active client run :func:`local_update` on the messages that
   were sent to it along ``G^{r-1}``;
4. sends every client's freshly compressed model along ``G^r``.

Messages travel as encoded bytes and are decoded by the receiver.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import costs
from .cfd import FrequencySet, cfd_model, teacher_weights
from .config import SimConfig
from .data import dirichlet_partition, gen_synthetic, split_train_test
from .dkm import AlignParams, align_loss_and_grad, layer_teachers
from .errors import ConfigError, ProtocolError
from .seeding import stream
from .tensor import (
    ModelParams,
    apply_mask,
    apply_update,
    backward,
    evaluate,
    forward_loss,
    full_mask,
    init_mlp,
)
from .wcp import RawLayer, compress_layer, wcp_decompress
from .wire import CompressedModel, decode_wire, encode_wire


@dataclass
class ClientState:
    id: int
    join_round: int
    model: Optional[ModelParams]
    mask: Optional[list]
    train: Tuple[np.ndarray, np.ndarray]
    test: Tuple[np.ndarray, np.ndarray]
    rng: np.random.Generator
    compressed: Optional[CompressedModel] = None
    active: bool = False

    @property
    def is_delayed(self) -> bool:
        return self.join_round > 0


@dataclass
class PeerGraph:
    round: int
    edges: Dict[int, Tuple[int, ...]]

    def receivers(self, sender: int) -> Tuple[int, ...]:
        return self.edges.get(sender, ())

    def senders_to(self, receiver: int) -> List[int]:
        return sorted(s for s, rs in self.edges.items() if receiver in rs)


@dataclass
class MetricsRow:
    round: int
    client_id: int
    delayed: bool
    acc: Optional[float]
    bytes_sent: int
    bytes_recv: int
    flops: int
    align_loss: Optional[float]


METRIC_FIELDS = [f.name for f in fields(MetricsRow)]


@dataclass
class SimState:
    clients: List[ClientState]
    round: int = 0
    graph: Optional[PeerGraph] = None
    # receiver -> [(sender, encoded bytes)] sent along the current graph
    inbox: Dict[int, List[Tuple[int, bytes]]] = field(default_factory=dict)

    def active_ids(self) -> List[int]:
        return [c.id for c in self.clients if c.active]


def build_peer_graph(active: Sequence[int], n: int, rng: np.random.Generator, round: int = 0) -> PeerGraph:
    """Every active client picks ``min(n, |S| - 1)`` distinct receivers uniformly."""
    ids = sorted(active)
    if not ids:
        raise ProtocolError("peer graph needs at least one active client")
    degree = min(n, len(ids) - 1)
    edges = {}
    for i in ids:
        others = np.array([j for j in ids if j != i], dtype=np.int64)
        picked = rng.choice(others, size=degree, replace=False) if degree else others[:0]
        edges[i] = tuple(sorted(int(j) for j in picked))
    return PeerGraph(round, edges)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def warmup_client(client: ClientState, lr: float, batch_size: int) -> Tuple[ClientState, int]:
    """One dense epoch of plain mini-batch SGD on the client's own shard."""
    x, y = client.train
    if len(y) == 0:
        raise ConfigError(f"client {client.id} has an empty training shard")
    dense = full_mask(client.model)
    model = client.model
    if lr > 0:
        for idx in _batches(len(y), batch_size, client.rng):
            batch = (x[idx], y[idx])
            _, cache = forward_loss(model, dense, batch)
            grad = backward(model, dense, cache, batch)
            model = apply_update(model, grad, dense, lr, 0.0, model)
    client.model = model
    client.mask = dense
    client.active = True
    return client, costs.train_flops(dense, len(y))


def _compress_weights(model: ModelParams, cfg: SimConfig):
    layers, mask, iters = [], [], []
    for w in model.weights:
        layer, m, it = compress_layer(w, cfg.k, cfg.wcp_max_iters, cfg.wcp_tol)
        layers.append(layer)
        mask.append(m)
        iters.append(it)
    return layers, mask, iters


def _biases32(model: ModelParams):
    return [b.astype(np.float32).astype(np.float64) for b in model.biases]


def compress_model(client: ClientState, round: int, cfg: SimConfig) -> List[int]:
    """Refresh the client's compressed model and prune mask. Returns Lloyd iteration counts."""
    model = client.model
    if cfg.dense_exchange:
        layers = [RawLayer(w.shape, w.astype(np.float32).astype(np.float64)) for w in model.weights]
        client.mask = full_mask(model)
        iters = []
    else:
        layers, mask, iters = _compress_weights(model, cfg)
        client.mask = mask
        client.model = apply_mask(model, mask)
    client.compressed = CompressedModel(client.id, round, layers, _biases32(client.model))
    return iters


def reference_model(model: ModelParams, received: Sequence[CompressedModel]) -> ModelParams:
    if not received:
        return model.copy()
    decoded = []
    for msg in received:
        weights = [wcp_decompress(layer) for layer in msg.layers]
        shapes = [w.shape for w in weights]
        if shapes != model.shapes or [b.shape for b in msg.biases] != [b.shape for b in model.biases]:
            raise ProtocolError(f"message from client {msg.client_id} has shapes {shapes}, expected {model.shapes}")
        decoded.append((weights, msg.biases))
    weights = [np.mean([d[0][l] for d in decoded], axis=0) for l in range(model.num_layers)]
    biases = [np.mean([d[1][l] for d in decoded], axis=0) for l in range(model.num_layers)]
    return ModelParams(weights, biases)


def _aligns(client: ClientState, received, round: int, cfg: SimConfig) -> bool:
    if not client.is_delayed or not received or cfg.lam == 0 or cfg.dense_exchange:
        return False
    return cfg.align_rounds is None or round - client.join_round < cfg.align_rounds


def local_update(client: ClientState, received: Sequence[CompressedModel], round: int, cfg: SimConfig,
                 freqs: Optional[FrequencySet] = None):
    """Masked local training with reference pull and, for delayed clients, alignment.

    Returns ``(client, info)`` where ``info`` carries ``flops`` and the mean
    ``align_loss`` (``None`` when alignment did not run).
    """
    ref = reference_model(client.model, received)
    mask = client.mask if client.mask is not None else full_mask(client.model)
    model = client.model
    x, y = client.train

    align = _aligns(client, received, round, cfg)
    extra_iters = [0] * model.num_layers
    if align:
        student = client.compressed
        if student is None:
            # a joiner has no WCP yet: its mask stays all-true, the tables only seed alignment
            layers, _, extra_iters = _compress_weights(model, cfg)
            student = CompressedModel(client.id, round, layers, _biases32(model))
        if freqs is None:
            freqs = FrequencySet.draw(cfg.n_freqs, cfg.sigma, (cfg.seed, round))
        alpha = teacher_weights([cfd_model(student, msg, freqs) for msg in received])
        student_tables = [layer.centroids for layer in student.layers]
        teachers = [layer_teachers([msg.layers[l] for msg in received]) for l in range(model.num_layers)]
        params = AlignParams(cfg.t_dkm, cfg.alpha_mix, cfg.beta_dist)

    align_losses = []
    samples = 0
    align_batches = 0
    for _ in range(cfg.local_epochs):
        for idx in _batches(len(y), cfg.batch_size, client.rng):
            batch = (x[idx], y[idx])
            _, cache = forward_loss(model, mask, batch)
            grad = backward(model, mask, cache, batch)
            samples += len(idx)
            if align:
                total = 0.0
                for l, w in enumerate(model.weights):
                    loss_l, g_l = align_loss_and_grad(w, student_tables[l], teachers[l], alpha, params)
                    total += loss_l
                    grad.weights[l] = grad.weights[l] + cfg.lam * g_l.reshape(w.shape) * mask[l]
                align_losses.append(total)
                align_batches += 1
            model = apply_update(model, grad, mask, cfg.lr, cfg.gamma, ref)

    client.model = model
    client.mask = mask
    iters = [a + b for a, b in zip(compress_model(client, round, cfg), extra_iters)]
    flops = costs.account_flops(mask, samples, align_batches=align_batches, k=cfg.k, t_dkm=cfg.t_dkm,
                                n_teachers=len(received) if align else 0, wcp_iterations=iters)
    info = {"flops": flops, "align_loss": float(np.mean(align_losses)) if align_losses else None}
    return client, info


def _activate(client: ClientState, cfg: SimConfig) -> int:
    key = () if cfg.shared_init else (client.id,)
    sizes = [cfg.dim, *cfg.hidden, cfg.num_classes]
    client.model = init_mlp(sizes, stream(cfg.seed, "init", *key))
    _, flops = warmup_client(client, cfg.lr, cfg.batch_size)
    return flops


def _send(state: SimState, graph: PeerGraph) -> Dict[int, int]:
    """Encode every active client's model and route it along ``graph``."""
    inbox: Dict[int, List[Tuple[int, bytes]]] = {}
    sent = {}
    for c in state.clients:
        if not c.active:
            continue
        payload = encode_wire(c.compressed)
        receivers = graph.receivers(c.id)
        for r in receivers:
            inbox.setdefault(r, []).append((c.id, payload))
        sent[c.id] = len(payload) * len(receivers)
    state.inbox = {r: sorted(msgs) for r, msgs in inbox.items()}
    state.graph = graph
    return sent


def init_state(cfg: SimConfig) -> SimState:
    """Generate data, partition it, and run round 0 for the initial clients."""
    cfg.validate()
    ds = gen_synthetic(cfg.num_classes, cfg.dim, cfg.num_samples, cfg.spread,
                       int(stream(cfg.seed, "data").integers(2**31)), cfg.class_scale)
    part = dirichlet_partition(ds.labels, cfg.num_clients, cfg.dirichlet_alpha, stream(cfg.seed, "partition"))
    part = split_train_test(part, ds.labels, cfg.test_fraction, stream(cfg.seed, "split"))
    joins = cfg.join_rounds()
    clients = [
        ClientState(i, joins[i], None, None, ds.subset(part.train[i]), ds.subset(part.test[i]),
                    stream(cfg.seed, "batches", i))
        for i in range(cfg.num_clients)
    ]
    state = SimState(clients)
    for c in clients:
        if c.join_round == 0:
            _activate(c, cfg)
            compress_model(c, 0, cfg)
    if state.active_ids():
        _send(state, build_peer_graph(state.active_ids(), cfg.n_peers, stream(cfg.seed, "graph", 0), 0))
    return state


def run_round(state: SimState, cfg: SimConfig, round: int) -> Tuple[SimState, List[MetricsRow]]:
    if round < 1:
        raise ValueError("rounds are numbered from 1")
    warm = {c.id: _activate(c, cfg) for c in state.clients if not c.active and c.join_round == round}
    active = [c for c in state.clients if c.active]
    if not active:
        state.round = round
        return state, []
    graph = build_peer_graph([c.id for c in active], cfg.n_peers, stream(cfg.seed, "graph", round), round)
    freqs = FrequencySet.draw(cfg.n_freqs, cfg.sigma, (cfg.seed, round))
    inbox = state.inbox

    def work(c: ClientState):
        msgs = inbox.get(c.id, [])
        received = [decode_wire(payload) for _, payload in msgs]
        _, info = local_update(c, received, round, cfg, freqs)
        return info, sum(len(p) for _, p in msgs)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(work, active))
    else:
        results = [work(c) for c in active]

    sent = _send(state, graph)
    rows = []
    for c, (info, recv) in zip(active, results):
        acc = evaluate(c.model, c.mask, c.test) if len(c.test[1]) else None
        rows.append(MetricsRow(round, c.id, c.is_delayed, acc, sent[c.id], recv,
                               info["flops"] + warm.get(c.id, 0), info["align_loss"]))
    state.round = round
    return state, rows


def run_simulation(cfg: SimConfig) -> List[MetricsRow]:
    cfg.validate()
    if cfg.rounds == 0:
        return []
    state = init_state(cfg)
    rows: List[MetricsRow] = []
    for r in range(1, cfg.rounds + 1):
        state, new = run_round(state, cfg, r)
        rows.extend(new)
    return rows


def metrics_jsonl(rows: Sequence[MetricsRow]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in rows)


def write_metrics(rows: Sequence[MetricsRow], jsonl_path, csv_path) -> None:
    with open(jsonl_path, "w") as fh:
        fh.write(metrics_jsonl(rows))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for r in rows:
            d = asdict(r)
            writer.writerow({k: ("" if v is None else v) for k, v in d.items()})


def delayed_summary(rows: Sequence[MetricsRow]) -> Dict[int, dict]:
    """Max accuracy, mean bytes sent per round and mean FLOPs per round per delayed client."""
    out = {}
    for cid in sorted({r.client_id for r in rows if r.delayed}):
        mine = [r for r in rows if r.client_id == cid]
        accs = [r.acc for r in mine if r.acc is not None]
        out[cid] = {
            "max_acc": max(accs) if accs else None,
            "mean_bytes": float(np.mean([r.bytes_sent for r in mine])),
            "mean_flops": float(np.mean([r.flops for r in mine])),
            "rounds": len(mine),
        }
    return out
