"""Stage 2: job-conditioned member-job scoring over the professional network.

For a candidate pair, the member's profile tokens are re-weighted by
multi-head attention using the job's sampled required-skill embeddings as
queries; the result is concatenated with the stage-1 structural embedding.
Selected professional connections (ranked by mastered/required skill cosine)
are aggregated with relevance-proportional weights through a small GNN, and
a final MLP scores the pair. Ablation variants switch off the attention, the
social messages, or both.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, MetricError, NumericError
from .evaluation import auc
from .graph import EntityKind
from .optim import Adam, accumulate
from .pretrain import glorot
from .sampling import sample_skills
from .seeding import substream
from .text import EmbedderConfig, TokenEmbedder

logger = logging.getLogger(__name__)

VARIANTS = ("full", "wo_S", "wo_A", "wo_CSA", "wo_CSA_H")


@dataclass(frozen=True)
class MatcherConfig:
    dim: int = 32
    heads: int = 4
    layers: int = 2
    num_skills: int = 10
    connections: int = 5
    epochs: int = 30
    batch_pairs: int = 64
    learning_rate: float = 1e-3
    patience: int = 5
    variant: str = "full"
    max_tokens: int = 128
    embedder_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(f"heads must divide dim, got {self.heads} for dim {self.dim}")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if self.num_skills < 1 or self.connections < 1:
            raise ConfigError("num_skills and connections must be >= 1")

    @property
    def head_dim(self):
        return self.dim // self.heads

    @property
    def uses_attention(self):
        return self.variant in ("full", "wo_S")

    @property
    def uses_social(self):
        return self.variant in ("full", "wo_A")

    @property
    def pairwise_only(self):
        return self.variant in ("wo_CSA", "wo_CSA_H")


class MatcherParams:
    """Trainable tensors for one variant.

    Attention projections per head: query (dim x head_dim, row-apply),
    key (head_dim x dim, used as q @ wk @ tokens^T), value (dim x head_dim);
    one shared output projection. Social layers operate on the 2*dim
    concatenated state; the scorer takes member-state || job-state.
    """

    def __init__(self, cfg, rng, dtype=np.float32):
        self.cfg = cfg
        self.tensors = {}
        dim, hd = cfg.dim, cfg.head_dim

        def param(name, rows, cols, zero=False):
            value = np.zeros((rows, cols), dtype) if zero else glorot(rng, rows, cols, dtype)
            self.tensors[name] = ad.Tensor(value, requires_grad=True)

        if cfg.uses_attention:
            for h in range(cfg.heads):
                param(f"att_q_h{h}", dim, hd)
                param(f"att_k_h{h}", hd, dim)
                param(f"att_v_h{h}", dim, hd)
            param("att_out", dim, dim)
        if not cfg.pairwise_only:
            for layer in range(cfg.layers):
                param(f"soc_self_l{layer}", 2 * dim, 2 * dim)
                param(f"soc_msg_l{layer}", 2 * dim, 2 * dim)
            scorer_in = 4 * dim
        else:
            scorer_in = 2 * dim
        param("score_w1", scorer_in, dim)
        param("score_b1", 1, dim, zero=True)
        param("score_w2", dim, 1)
        param("score_b2", 1, 1, zero=True)

    def __getitem__(self, name):
        return self.tensors[name]

    def all(self):
        return list(self.tensors.values())

    def snapshot(self):
        return {name: t.value.copy() for name, t in self.tensors.items()}

    def restore(self, snapshot):
        for name, value in snapshot.items():
            self.tensors[name].value = value.copy()


# -- frozen per-run features ---------------------------------------------------


class FeatureContext:
    """Everything stage 2 reads but never trains: token matrices, stage-1
    embeddings, per-entity sampled skill sets, and their mean vectors.

    Skill subsampling happens once per run (seeded), so the same sampled sets
    feed both the attention queries and the relevance cosines.
    """

    def __init__(self, store, tables, cfg):
        if tables.dim != cfg.dim:
            raise ConfigError(f"embedding table dim {tables.dim} != config dim {cfg.dim}")
        self.store = store
        self.tables = tables
        self.cfg = cfg
        self.embedder = TokenEmbedder(EmbedderConfig(dim=cfg.dim, max_tokens=cfg.max_tokens,
                                                     hash_seed=cfg.embedder_seed))
        skill_vecs = tables.matrix(EntityKind.SKILL).astype(np.float64)

        rng_m = substream(cfg.seed, "skills:mastered")
        rng_j = substream(cfg.seed, "skills:required")
        n_members = store.num(EntityKind.MEMBER)
        n_jobs = store.num(EntityKind.JOB)

        self.member_skills = []
        self.member_skill_mean = np.zeros((n_members, cfg.dim))
        for m in range(n_members):
            ids = sample_skills(store.neighbor_ids("master", m).tolist(), cfg.num_skills, rng_m)
            self.member_skills.append(ids)
            if ids:
                self.member_skill_mean[m] = skill_vecs[ids].mean(axis=0)

        self.job_skills = []
        self.job_skill_mean = np.zeros((n_jobs, cfg.dim))
        for j in range(n_jobs):
            ids = sample_skills(store.neighbor_ids("require", j).tolist(), cfg.num_skills, rng_j)
            self.job_skills.append(ids)
            if ids:
                self.job_skill_mean[j] = skill_vecs[ids].mean(axis=0)

        self._member_unit = _unit_rows(self.member_skill_mean)
        self._job_unit = _unit_rows(self.job_skill_mean)

        self._token_matrix_cache = {}
        self._query_cache = {}
        self._text_mean = {}
        self._fs_cache = {}
        self._job_rep_cache = {}

    # frozen lookups, each cached as a constant tensor where a tape needs it

    def token_matrix(self, kind, eid):
        key = (kind, eid)
        cached = self._token_matrix_cache.get(key)
        if cached is None:
            rows = self.embedder.token_vectors(list(self.store.tokens[kind][eid]))
            cached = ad.Tensor(rows) if rows.size else ad.Tensor(rows.reshape(0, self.cfg.dim))
            self._token_matrix_cache[key] = cached
        return cached

    def text_mean(self, kind, eid):
        key = (kind, eid)
        cached = self._text_mean.get(key)
        if cached is None:
            vec = self.embedder.entity_embedding(list(self.store.tokens[kind][eid]))
            cached = ad.constant(vec[None, :])
            self._text_mean[key] = cached
        return cached

    def structural(self, kind, eid):
        key = (kind, eid)
        cached = self._fs_cache.get(key)
        if cached is None:
            cached = ad.constant(self.tables.matrix(kind)[eid][None, :])
            self._fs_cache[key] = cached
        return cached

    def required_queries(self, job):
        """Sampled required-skill embeddings as a (k x dim) constant, or None."""
        cached = self._query_cache.get(job)
        if cached is None:
            ids = self.job_skills[job]
            cached = (ad.constant(self.tables.matrix(EntityKind.SKILL)[ids]), True) if ids \
                else (None, False)
            self._query_cache[job] = cached
        return cached[0]

    def relevance(self, members, job):
        """Clamped cosine between sampled mastered and required skill means."""
        members = np.asarray(members, dtype=np.int64)
        raw = self._member_unit[members] @ self._job_unit[job]
        return np.maximum(raw, 0.0)

    def job_representation(self, job):
        cached = self._job_rep_cache.get(job)
        if cached is None:
            cached = ad.concat_cols([self.text_mean(EntityKind.JOB, job),
                                     self.structural(EntityKind.JOB, job)])
            self._job_rep_cache[job] = cached
        return cached


def _unit_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    out = np.zeros_like(matrix)
    nz = norms[:, 0] > 0
    out[nz] = matrix[nz] / norms[nz]
    return out


# -- model equations -----------------------------------------------------------


def job_contextual_feature(token_matrix, skill_queries, params, heads):
    """Multi-head attention with required-skill queries over profile tokens,
    averaged over the skills. An empty token matrix yields the zero vector."""
    k = skill_queries.value.shape[0] if isinstance(skill_queries, ad.Tensor) else 0
    if k == 0:
        raise ValueError("job_contextual_feature: need at least one required skill query")
    dim = skill_queries.value.shape[1]
    if token_matrix.value.shape[0] == 0:
        return ad.constant(np.zeros((1, dim), dtype=np.float32))
    tokens_t = ad.constant(token_matrix.value.T.copy())
    head_dim = dim // heads
    inv_sqrt = 1.0 / np.sqrt(head_dim)
    head_outputs = []
    for h in range(heads):
        q = ad.matmul(skill_queries, params[f"att_q_h{h}"])          # k x hd
        scores = ad.scale(ad.matmul(ad.matmul(q, params[f"att_k_h{h}"]), tokens_t), inv_sqrt)
        attn = ad.softmax_row(scores)                                 # k x t
        values = ad.matmul(token_matrix, params[f"att_v_h{h}"])      # t x hd
        head_outputs.append(ad.matmul(attn, values))                  # k x hd
    merged = ad.matmul(ad.concat_cols(head_outputs), params["att_out"])
    return ad.mean_rows(merged)


def init_member_feature(contextual, structural):
    """Job-conditioned state: contextual feature followed by structural embedding."""
    return ad.concat_cols([contextual, structural])


def skill_set_embedding(vectors, dim=None):
    """Arithmetic mean of skill vectors; (zero vector, True) for an empty set."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0:
        return np.zeros(dim if dim else 0), True
    arr = arr.reshape(-1, arr.shape[-1])
    return arr.mean(axis=0), False


def member_job_relevance(member_skill_vectors, job_skill_vectors):
    """Cosine of the two mean vectors, clamped at zero; degenerate sets give 0."""
    m_mean, m_deg = skill_set_embedding(member_skill_vectors)
    j_mean, j_deg = skill_set_embedding(job_skill_vectors)
    if m_deg or j_deg:
        return 0.0
    nm, nj = np.linalg.norm(m_mean), np.linalg.norm(j_mean)
    if nm == 0.0 or nj == 0.0:
        return 0.0
    return float(max(np.dot(m_mean, j_mean) / (nm * nj), 0.0))


def aggregation_weights(relevances):
    """Relevance-proportional weights; uniform when everything clamps to zero."""
    rel = np.asarray(relevances, dtype=np.float64)
    if rel.size == 0:
        raise ValueError("aggregation_weights: empty neighbor list; skip the social term")
    total = rel.sum()
    if total <= 0.0:
        return np.full(rel.size, 1.0 / rel.size)
    return rel / total


def select_connections(context, member, job, k, force_uniform=False):
    """The member's connections ranked by job relevance (desc, ties by id), top k."""
    nbrs = context.store.neighbor_ids("connect", member)
    if len(nbrs) == 0:
        return [], np.zeros(0)
    rel = np.zeros(len(nbrs)) if force_uniform else context.relevance(nbrs, job)
    order = np.lexsort((nbrs, -rel))[:k]
    return [int(nbrs[i]) for i in order], rel[order]


def _member_state(context, params, member, job, queries, cfg):
    """h^(0) for one member under one job: contextual || structural."""
    if cfg.uses_attention and queries is not None:
        contextual = job_contextual_feature(
            context.token_matrix(EntityKind.MEMBER, member), queries, params, cfg.heads)
    else:
        # mean pooling: the no-attention ablation, and the fallback for jobs
        # with no sampled required skills
        contextual = context.text_mean(EntityKind.MEMBER, member)
    return init_member_feature(contextual, context.structural(EntityKind.MEMBER, member))


def social_forward(context, params, member, job, cfg, plan=None):
    """Job-conditioned member representation after the social layers.

    Every selected connection is itself job-conditioned; each layer sends the
    relevance-weighted mixture of connection states to every node in the set,
    and the final representation averages the center's states across layers.
    """
    plan = plan or build_pair_plan(context, member, job, cfg)
    queries = plan["queries"]
    selected, alphas = plan["selected"], plan["alphas"]

    states = [_member_state(context, params, m, job, queries, cfg)
              for m in [member] + selected]
    collected = [states[0]]
    alpha_row = ad.constant(alphas[None, :].astype(np.float32)) if selected else None
    for layer in range(cfg.layers):
        w_self = params[f"soc_self_l{layer}"]
        if selected:
            message = ad.matmul(alpha_row, ad.concat_rows(states[1:]))
            mixed = ad.matmul(message, params[f"soc_msg_l{layer}"])
            states = [ad.relu(ad.add(mixed, ad.matmul(h, w_self))) for h in states]
        else:
            states = [ad.relu(ad.matmul(h, w_self)) for h in states]
        collected.append(states[0])
    if len(collected) == 1:
        return collected[0]
    return ad.mean_rows(ad.concat_rows(collected))


def job_representation(context, job):
    """Mean description-token vector followed by the structural embedding."""
    return context.job_representation(job)


def predict(h_member, h_job, params):
    """Pair probability from the scorer MLP, in (0, 1)."""
    return float(ad.sigmoid(_scorer_logit(params, ad.concat_cols([h_member, h_job]))).value[0, 0])


def _scorer_logit(params, features):
    hidden = ad.relu(ad.add_row(ad.matmul(features, params["score_w1"]), params["score_b1"]))
    return ad.add_row(ad.matmul(hidden, params["score_w2"]), params["score_b2"])


def build_pair_plan(context, member, job, cfg):
    """Parameter-independent pieces of one pair's forward pass."""
    queries = context.required_queries(job) if cfg.uses_attention else None
    if cfg.uses_social:
        selected, rel = select_connections(context, member, job, cfg.connections,
                                           force_uniform=(cfg.variant == "wo_A"))
        alphas = aggregation_weights(rel) if selected else np.zeros(0)
    else:
        selected, alphas = [], np.zeros(0)
    return {"queries": queries, "selected": selected, "alphas": alphas}


def pair_logit(context, params, member, job, cfg, plan=None):
    """Raw score for one candidate pair under the configured variant."""
    if cfg.variant == "wo_CSA":
        features = ad.concat_cols([context.structural(EntityKind.MEMBER, member),
                                   context.structural(EntityKind.JOB, job)])
        return _scorer_logit(params, features)
    if cfg.variant == "wo_CSA_H":
        features = ad.concat_cols([context.text_mean(EntityKind.MEMBER, member),
                                   context.text_mean(EntityKind.JOB, job)])
        return _scorer_logit(params, features)
    h_member = social_forward(context, params, member, job, cfg, plan)
    return _scorer_logit(params, ad.concat_cols([h_member, context.job_representation(job)]))


# -- training ------------------------------------------------------------------


def _pairwise_feature_block(context, pairs, cfg):
    """Constant (n x 2*dim) feature matrix for the structure/text-only variants."""
    rows = []
    for m, j, _ in pairs:
        if cfg.variant == "wo_CSA":
            rows.append(np.concatenate([context.structural(EntityKind.MEMBER, int(m)).value[0],
                                        context.structural(EntityKind.JOB, int(j)).value[0]]))
        else:
            rows.append(np.concatenate([context.text_mean(EntityKind.MEMBER, int(m)).value[0],
                                        context.text_mean(EntityKind.JOB, int(j)).value[0]]))
    return ad.constant(np.stack(rows))


def score_pairs(context, params, pairs, cfg, plans=None):
    """Probabilities for an array of (member, job, label) pairs."""
    if len(pairs) == 0:
        return np.zeros(0)
    if cfg.pairwise_only:
        logits = _scorer_logit(params, _pairwise_feature_block(context, pairs, cfg))
        return 1.0 / (1.0 + np.exp(-logits.value[:, 0].astype(np.float64)))
    out = np.empty(len(pairs))
    for i, (m, j, _) in enumerate(pairs):
        plan = None if plans is None else plans[(int(m), int(j))]
        logit = pair_logit(context, params, int(m), int(j), cfg, plan)
        out[i] = 1.0 / (1.0 + np.exp(-float(logit.value[0, 0])))
    return out


def train_matcher(store, tables, cfg, train_pairs, valid_pairs):
    """Train one variant with early stopping on validation AUC.

    Returns (params, context, history, best_epoch); params hold the best
    validation snapshot. tables may be None only for the text-only variant,
    in which case a zero table stands in.
    """
    if tables is None:
        if cfg.variant != "wo_CSA_H":
            raise ConfigError("stage-1 embeddings are required for every variant except wo_CSA_H")
        tables = _zero_tables(store, cfg)
    context = FeatureContext(store, tables, cfg)
    params = MatcherParams(cfg, substream(cfg.seed, "matcher:init"))
    optimizer = Adam(params.all(), lr=cfg.learning_rate)

    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 3)
    valid_pairs = np.asarray(valid_pairs, dtype=np.int64).reshape(-1, 3)

    plans = None
    if not cfg.pairwise_only:
        plans = {}
        for m, j, _ in np.concatenate([train_pairs, valid_pairs], axis=0):
            key = (int(m), int(j))
            if key not in plans:
                plans[key] = build_pair_plan(context, key[0], key[1], cfg)

    history = []
    best_auc = -np.inf
    best_snapshot = params.snapshot()
    best_epoch = -1
    stall = 0
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, f"matcher:shuffle:{epoch}").permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), cfg.batch_pairs):
            chunk = train_pairs[order[start:start + cfg.batch_pairs]]
            if cfg.pairwise_only:
                logits = _scorer_logit(params, _pairwise_feature_block(context, chunk, cfg))
                labels = chunk[:, 2:3].astype(np.float32)
                loss = ad.bce_with_logits(logits, labels)
                loss_val = float(loss.value[0, 0])
                grads = ad.backward(loss)
            else:
                grads = {}
                loss_val = 0.0
                inv = 1.0 / len(chunk)
                for m, j, label in chunk:
                    logit = pair_logit(context, params, int(m), int(j), cfg,
                                       plans[(int(m), int(j))])
                    loss = ad.bce_with_logits(logit, np.array([[float(label)]], dtype=np.float32))
                    loss_val += float(loss.value[0, 0]) * inv
                    accumulate(grads, ad.backward(loss), inv)
            if not np.isfinite(loss_val):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {start // cfg.batch_pairs}")
            optimizer.step(grads)
            losses.append(loss_val)

        val_auc = _validation_auc(context, params, valid_pairs, cfg, plans)
        history.append({"epoch": epoch,
                        "loss": float(np.mean(losses)) if losses else float("nan"),
                        "val_auc": val_auc})
        logger.info("epoch=%d loss=%.4f val_auc=%.4f", epoch, history[-1]["loss"], val_auc)
        if np.isfinite(val_auc) and val_auc > best_auc:
            best_auc = val_auc
            best_snapshot = params.snapshot()
            best_epoch = epoch
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break
    params.restore(best_snapshot)
    return params, context, history, best_epoch


def _validation_auc(context, params, valid_pairs, cfg, plans):
    if len(valid_pairs) == 0:
        return float("nan")
    scores = score_pairs(context, params, valid_pairs, cfg, plans)
    try:
        return auc(scores, valid_pairs[:, 2])
    except MetricError:
        return float("nan")


def _zero_tables(store, cfg):
    from .pretrain import EmbeddingTable

    tables = {kind: np.zeros((store.num(kind), cfg.dim), dtype=np.float32)
              for kind in EntityKind}
    return EmbeddingTable(dim=cfg.dim, tables=tables)


# -- checkpointing ---------------------------------------------------------------

MATCHER_FORMAT_VERSION = 1


def save_matcher(directory, cfg, params, best_epoch=None):
    """Matcher checkpoint: manifest with the variant knobs plus one matrix per tensor."""
    import os

    from .matrixio import write_manifest, write_matrix

    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": MATCHER_FORMAT_VERSION,
        "dim": cfg.dim,
        "heads": cfg.heads,
        "layers": cfg.layers,
        "num_skills": cfg.num_skills,
        "connections": cfg.connections,
        "variant": cfg.variant,
        "max_tokens": cfg.max_tokens,
        "embedder_seed": cfg.embedder_seed,
        "seed": cfg.seed,
    }
    if best_epoch is not None:
        manifest["best_epoch"] = best_epoch
    write_manifest(os.path.join(directory, "manifest.txt"), manifest)
    for name, tensor in params.tensors.items():
        write_matrix(os.path.join(directory, f"param_{name}.f32"), tensor.value)


def load_matcher(directory):
    """Read back (cfg, params, manifest) from a matcher checkpoint."""
    import os

    from .errors import FormatError
    from .matrixio import read_manifest, read_matrix

    manifest = read_manifest(os.path.join(directory, "manifest.txt"))
    version = int(manifest.get("format_version", -1))
    if version != MATCHER_FORMAT_VERSION:
        raise FormatError(f"{directory}: unsupported matcher checkpoint version {version}")
    cfg = MatcherConfig(
        dim=int(manifest["dim"]), heads=int(manifest["heads"]), layers=int(manifest["layers"]),
        num_skills=int(manifest["num_skills"]), connections=int(manifest["connections"]),
        variant=manifest["variant"], max_tokens=int(manifest["max_tokens"]),
        embedder_seed=int(manifest["embedder_seed"]), seed=int(manifest["seed"]))
    params = MatcherParams(cfg, substream(cfg.seed, "matcher:init"))
    for name, tensor in params.tensors.items():
        loaded = read_matrix(os.path.join(directory, f"param_{name}.f32"))
        if loaded.shape != tensor.value.shape:
            raise FormatError(f"{directory}: param_{name} is {loaded.shape}, "
                              f"expected {tensor.value.shape}")
        tensor.value = loaded
    return cfg, params, manifest
