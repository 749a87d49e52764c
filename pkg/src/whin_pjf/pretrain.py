"""Stage 1: relational graph-conv encoder with a link-existence objective.

Per batch, candidate-pair endpoints seed a sampled subgraph; the encoder runs
L message-passing layers from mean-token initializations; a relation-aware
MLP decoder scores sampled edges against destination-corrupted negatives
under binary cross-entropy. The trained encoder is then run once over the
full graph to export per-entity embeddings for stage 2.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, FormatError, NumericError
from .evaluation import auc
from .graph import KINDS, RELATIONS, VIEWS, EntityKind, EntityRef
from .matrixio import read_manifest, read_matrix, write_manifest, write_matrix
from .optim import Adam
from .sampling import (
    REL_INDEX,
    REL_ORDER,
    SamplerConfig,
    SubgraphBatch,
    collect_positives,
    sample_negatives,
    sample_negatives_lenient,
    sample_subgraph,
)
from .seeding import subseed, substream
from .text import EmbedderConfig, TokenEmbedder

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PretrainConfig:
    dim: int = 32
    layers: int = 3
    hops: int = 3
    fanout: int = 5
    negative_ratio: int = 1
    batch_pairs: int = 64
    epochs: int = 20
    learning_rate: float = 1e-3
    holdout_fraction: float = 0.05
    max_tokens: int = 128
    embedder_seed: int = 0
    init_mode: str = "text"  # "text" | "random" (frozen random baseline)
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.layers <= 0:
            raise ConfigError("dim and layers must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")
        if self.init_mode not in ("text", "random"):
            raise ConfigError(f"unknown init_mode {self.init_mode!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


def glorot(rng, rows, cols, dtype=np.float32):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


class PretrainParams:
    """Encoder weights (one matrix per relation view per layer, plus the
    self-loop matrix), relation vectors for the decoder, and the decoder MLP.

    Weight matrices are stored in row-apply orientation: states @ W.
    """

    def __init__(self, dim, layers, rng, dtype=np.float32):
        self.dim = dim
        self.layers = layers
        self.tensors = {}
        for layer in range(layers):
            for view in VIEWS:
                self.tensors[f"enc_{view.name}_l{layer}"] = ad.Tensor(
                    glorot(rng, dim, dim, dtype), requires_grad=True)
            self.tensors[f"enc_self_l{layer}"] = ad.Tensor(
                glorot(rng, dim, dim, dtype), requires_grad=True)
        self.tensors["rel_embed"] = ad.Tensor(
            glorot(rng, len(REL_ORDER), dim, dtype), requires_grad=True)
        self.tensors["dec_w1"] = ad.Tensor(glorot(rng, 3 * dim, dim, dtype), requires_grad=True)
        self.tensors["dec_b1"] = ad.Tensor(np.zeros((1, dim), dtype), requires_grad=True)
        self.tensors["dec_w2"] = ad.Tensor(glorot(rng, dim, 1, dtype), requires_grad=True)
        self.tensors["dec_b2"] = ad.Tensor(np.zeros((1, 1), dtype), requires_grad=True)

    def view_weight(self, view_name, layer):
        return self.tensors[f"enc_{view_name}_l{layer}"]

    def self_weight(self, layer):
        return self.tensors[f"enc_self_l{layer}"]

    def __getitem__(self, name):
        return self.tensors[name]

    def all(self):
        return list(self.tensors.values())


@dataclass
class EmbeddingTable:
    """Final encoder states per entity kind (count(kind) x dim)."""

    dim: int
    tables: dict  # EntityKind -> np.ndarray

    def vector(self, ref):
        return self.tables[ref.kind][ref.id]

    def matrix(self, kind):
        return self.tables[kind]


# -- model pieces -------------------------------------------------------------


def rgcn_layer(batch, states, params, layer):
    """One relational message-passing step over the batch subgraph.

    Per node: mean of transformed neighbor states per relation view, summed
    across views, plus the self-loop transform, through ReLU. Nodes with no
    in-edges under a view contribute only the remaining terms.
    """
    n = batch.num_nodes
    if states.value.shape[0] != n:
        raise ValueError(f"states cover {states.value.shape[0]} nodes, batch has {n}")
    acc = ad.matmul(states, params.self_weight(layer))
    for view in VIEWS:
        src, _dst = batch.view_edges(view.name)
        if len(src) == 0:
            continue
        messages = ad.matmul(states, params.view_weight(view.name, layer))
        acc = ad.add(acc, ad.edge_mean(messages, plan=batch.view_plan(view.name)))
    return ad.relu(acc)


def encode(batch, init_states, params):
    states = init_states
    for layer in range(params.layers):
        states = rgcn_layer(batch, states, params, layer)
    return states


def link_logits(params, z_src, rel_indices, z_dst):
    """Decoder MLP over source-state || relation-vector || destination-state."""
    rel_rows = ad.take_rows(params["rel_embed"], np.asarray(rel_indices, dtype=np.int64))
    x = ad.concat_cols([z_src, rel_rows, z_dst])
    hidden = ad.relu(ad.add_row(ad.matmul(x, params["dec_w1"]), params["dec_b1"]))
    return ad.add_row(ad.matmul(hidden, params["dec_w2"]), params["dec_b2"])


def score_link(z_src, relation, z_dst, params):
    """Probability that the link (src, relation, dst) exists, in (0, 1)."""
    rel_idx = REL_INDEX[relation] if isinstance(relation, str) else int(relation)
    zs = z_src if isinstance(z_src, ad.Tensor) else ad.constant(np.atleast_2d(z_src))
    zd = z_dst if isinstance(z_dst, ad.Tensor) else ad.constant(np.atleast_2d(z_dst))
    logit = link_logits(params, zs, [rel_idx], zd)
    return float(ad.sigmoid(logit).value[0, 0])


def pretrain_loss(predictions, labels):
    """Mean binary cross-entropy from probabilities.

    The training loop itself never forms probabilities; it feeds raw scores
    to autodiff.bce_with_logits, which is the same quantity computed in the
    numerically safe logit form.
    """
    p = np.clip(np.asarray(predictions, dtype=np.float64), 1e-12, 1 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


# -- training ----------------------------------------------------------------


def full_batch(store):
    """A SubgraphBatch covering the whole store (local index == global id)."""
    nodes = np.arange(store.total_entities, dtype=np.int64)
    kind_index = np.empty(store.total_entities, dtype=np.int64)
    edges = {}
    for ki, kind in enumerate(KINDS):
        start = store.offset(kind)
        kind_index[start:start + store.num(kind)] = ki
    for name, rel in RELATIONS.items():
        pairs = store.edges[name]
        edges[name] = (pairs[:, 0] + store.offset(rel.src),
                       pairs[:, 1] + store.offset(rel.dst))
    return SubgraphBatch(
        nodes=nodes,
        local_lookup=nodes.copy(),
        node_kind_index=kind_index,
        edges=edges,
        positives=np.zeros((0, 3), dtype=np.int64),
        negatives=np.zeros((0, 3), dtype=np.int64),
    )


def initial_embeddings(store, cfg):
    """Per-entity starting vectors: mean token embedding, or frozen random."""
    total = store.total_entities
    init = np.zeros((total, cfg.dim), dtype=np.float32)
    if cfg.init_mode == "random":
        rng = substream(cfg.seed, "pretrain:random-init")
        init[:] = rng.uniform(-1, 1, size=(total, cfg.dim)).astype(np.float32) / np.sqrt(cfg.dim)
        return init
    embedder = TokenEmbedder(EmbedderConfig(dim=cfg.dim, max_tokens=cfg.max_tokens,
                                            hash_seed=cfg.embedder_seed))
    for kind in KINDS:
        offset = store.offset(kind)
        for eid, tokens in enumerate(store.tokens[kind]):
            if tokens:
                init[offset + eid] = embedder.entity_embedding(list(tokens))
    return init


def holdout_links(store, cfg):
    """A per-relation sample of edges reserved for link evaluation."""
    rng = substream(cfg.seed, "pretrain:holdout")
    held = []
    held_sets = {name: set() for name in REL_ORDER}
    if cfg.holdout_fraction > 0:
        for name in REL_ORDER:
            pairs = store.edges[name]
            if len(pairs) == 0:
                continue
            take = max(1, int(len(pairs) * cfg.holdout_fraction))
            # never hold out every edge of a relation
            take = min(take, max(len(pairs) - 1, 0))
            if take == 0:
                continue
            chosen = rng.choice(len(pairs), size=take, replace=False)
            for idx in np.sort(chosen):
                s, d = map(int, pairs[idx])
                held.append((s, REL_INDEX[name], d))
                held_sets[name].add((s, d))
    positives = np.array(held, dtype=np.int64).reshape(-1, 3)
    negatives = np.zeros((0, 3), dtype=np.int64)
    if len(positives):
        negatives = sample_negatives(store, positives, 1,
                                     substream(cfg.seed, "pretrain:holdout-neg"))
    return positives, negatives, held_sets


def _filter_triples(triples, held_sets, pool_sizes):
    """Drop held-out links and links whose destination pool cannot be corrupted."""
    keep = []
    for s, ridx, d in triples.tolist():
        name = REL_ORDER[ridx]
        if (s, d) in held_sets[name]:
            continue
        if pool_sizes[name] <= 1:
            continue
        keep.append((s, ridx, d))
    return np.array(keep, dtype=np.int64).reshape(-1, 3)


def _triple_locals(store, batch, triples):
    src_kind = np.array([store.offset(RELATIONS[REL_ORDER[r]].src) for r in triples[:, 1]])
    dst_kind = np.array([store.offset(RELATIONS[REL_ORDER[r]].dst) for r in triples[:, 1]])
    s_local = batch.local_of_global(triples[:, 0] + src_kind)
    d_local = batch.local_of_global(triples[:, 2] + dst_kind)
    return s_local, d_local


def _score_triples(store, batch, z_final, params, triples):
    s_local, d_local = _triple_locals(store, batch, triples)
    zs = ad.take_rows(z_final, s_local)
    zd = ad.take_rows(z_final, d_local)
    return link_logits(params, zs, triples[:, 1], zd)


def evaluate_link_auc(store, params, init, eval_pos, eval_neg, batch=None):
    """Held-out link AUC from a full-graph forward pass."""
    if len(eval_pos) == 0:
        return float("nan")
    batch = batch if batch is not None else full_batch(store)
    z = encode(batch, ad.Tensor(init), params)
    triples = np.concatenate([eval_pos, eval_neg], axis=0)
    logits = _score_triples(store, batch, z, params, triples)
    scores = 1.0 / (1.0 + np.exp(-logits.value[:, 0].astype(np.float64)))
    labels = np.concatenate([np.ones(len(eval_pos)), np.zeros(len(eval_neg))])
    return auc(scores, labels)


def train_pretrain(store, cfg):
    """Run stage-1 training; returns (params, embedding table, history).

    History holds one record per epoch: mean training loss and held-out link
    AUC. With epochs=0 the randomly initialized encoder is exported directly.
    """
    init = initial_embeddings(store, cfg)
    params = PretrainParams(cfg.dim, cfg.layers, substream(cfg.seed, "pretrain:init"))
    optimizer = Adam(params.all(), lr=cfg.learning_rate)
    sampler_cfg = SamplerConfig(hops=cfg.hops, fanout=cfg.fanout,
                                negative_ratio=cfg.negative_ratio, seed=cfg.seed)
    eval_pos, eval_neg, held_sets = holdout_links(store, cfg)
    whole = full_batch(store)

    pair_members = store.pair_members
    pair_jobs = store.pair_jobs
    n_pairs = len(pair_members)
    sample_rng = substream(cfg.seed, "pretrain:sampling")
    neg_rng = substream(cfg.seed, "pretrain:negatives")

    history = []
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, f"pretrain:shuffle:{epoch}").permutation(n_pairs)
        losses = []
        for start in range(0, n_pairs, cfg.batch_pairs):
            chunk = order[start:start + cfg.batch_pairs]
            seeds = sorted(
                {EntityRef(EntityKind.MEMBER, int(m)) for m in pair_members[chunk]}
                | {EntityRef(EntityKind.JOB, int(j)) for j in pair_jobs[chunk]},
                key=lambda r: (r.kind.value, r.id))
            if not seeds:
                continue
            batch = sample_subgraph(store, seeds, sampler_cfg, sample_rng)
            seed_globals = [store.global_id(r) for r in seeds]
            positives = collect_positives(store, batch, seed_globals)

            kind_ids = {}
            for ki, kind in enumerate(KINDS):
                sel = batch.node_kind_index == ki
                kind_ids[kind] = batch.nodes[sel] - store.offset(kind)
            pools = {name: kind_ids[RELATIONS[name].dst] for name in REL_ORDER}
            positives = _filter_triples(positives, held_sets,
                                        {n: len(p) for n, p in pools.items()})
            if len(positives) == 0:
                continue
            positives, negatives = sample_negatives_lenient(
                store, positives, cfg.negative_ratio, neg_rng,
                candidates_by_relation=pools)
            if len(positives) == 0:
                continue
            batch.positives, batch.negatives = positives, negatives

            z0 = ad.Tensor(init[batch.nodes])
            z_final = encode(batch, z0, params)
            triples = np.concatenate([positives, negatives], axis=0)
            logits = _score_triples(store, batch, z_final, params, triples)
            labels = np.concatenate([np.ones((len(positives), 1), dtype=np.float32),
                                     np.zeros((len(negatives), 1), dtype=np.float32)])
            loss = ad.bce_with_logits(logits, labels)
            loss_val = float(loss.value[0, 0])
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {start // cfg.batch_pairs}")
            grads = ad.backward(loss, params.all())
            optimizer.step(grads)
            losses.append(loss_val)

        link_auc = evaluate_link_auc(store, params, init, eval_pos, eval_neg, whole)
        record = {"epoch": epoch,
                  "loss": float(np.mean(losses)) if losses else float("nan"),
                  "link_auc": link_auc}
        history.append(record)
        logger.info("epoch=%d loss=%.4f link_auc=%.4f", epoch, record["loss"], link_auc)

    table = export_table(store, params, init, whole)
    return params, table, history


def export_table(store, params, init, batch=None):
    """Full-graph forward pass packaged per entity kind."""
    batch = batch if batch is not None else full_batch(store)
    z = encode(batch, ad.Tensor(init), params).value
    tables = {}
    for kind in KINDS:
        start = store.offset(kind)
        tables[kind] = z[start:start + store.num(kind)].copy()
    return EmbeddingTable(dim=params.dim, tables=tables)


# -- checkpointing -------------------------------------------------------------


def _base_manifest(cfg, store, kind_counts_only=False):
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dim": cfg.dim,
        "layers": cfg.layers,
        "relations": ",".join(REL_ORDER),
        "seed": cfg.seed,
        "embedder_seed": cfg.embedder_seed,
        "max_tokens": cfg.max_tokens,
        "init_mode": cfg.init_mode,
    }
    for kind in KINDS:
        manifest[f"count_{kind.value}"] = store.num(kind)
    return manifest


def save_pretrain(directory, cfg, store, params, table):
    """Checkpoint directory: manifest + a matrix file per kind and per parameter."""
    os.makedirs(directory, exist_ok=True)
    manifest = _base_manifest(cfg, store)
    manifest["has_params"] = 1
    write_manifest(os.path.join(directory, "manifest.txt"), manifest)
    for kind in KINDS:
        write_matrix(os.path.join(directory, f"embed_{kind.value}.f32"), table.tables[kind])
    for name, tensor in params.tensors.items():
        write_matrix(os.path.join(directory, f"param_{name}.f32"), tensor.value)


def export_embeddings(table, directory, cfg=None, store=None):
    """Table-only checkpoint (no encoder parameters)."""
    os.makedirs(directory, exist_ok=True)
    manifest = {"format_version": CHECKPOINT_FORMAT_VERSION, "dim": table.dim, "has_params": 0}
    if cfg is not None and store is not None:
        manifest.update(_base_manifest(cfg, store))
        manifest["has_params"] = 0
    else:
        for kind in KINDS:
            manifest[f"count_{kind.value}"] = len(table.tables[kind])
    write_manifest(os.path.join(directory, "manifest.txt"), manifest)
    for kind in KINDS:
        write_matrix(os.path.join(directory, f"embed_{kind.value}.f32"), table.tables[kind])


def load_embeddings(directory):
    """Read back an embedding table; verifies counts against the manifest."""
    manifest = read_manifest(os.path.join(directory, "manifest.txt"))
    version = int(manifest.get("format_version", -1))
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatError(f"{directory}: unsupported checkpoint version {version}")
    dim = int(manifest["dim"])
    tables = {}
    for kind in KINDS:
        matrix = read_matrix(os.path.join(directory, f"embed_{kind.value}.f32"))
        expected = int(manifest.get(f"count_{kind.value}", matrix.shape[0]))
        if matrix.shape[0] != expected or matrix.shape[1] != dim:
            raise FormatError(
                f"{directory}: embed_{kind.value} is {matrix.shape}, manifest says "
                f"({expected}, {dim})")
        tables[kind] = matrix
    return EmbeddingTable(dim=dim, tables=tables), manifest
