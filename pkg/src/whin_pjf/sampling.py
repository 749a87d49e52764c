"""Mini-batch construction: fanout-limited k-hop expansion, induced edge
closure, link positives/negatives, and skill-set subsampling.

All sampling is a pure function of (store, inputs, rng stream); callers that
need reproducibility pass generators derived from named substreams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SamplingError
from .graph import KINDS, RELATIONS, VIEWS

REL_ORDER = tuple(RELATIONS)
REL_INDEX = {name: i for i, name in enumerate(REL_ORDER)}

_VIEWS_BY_KIND = {kind: tuple(v for v in VIEWS if v.src is kind) for kind in KINDS}


@dataclass(frozen=True)
class SamplerConfig:
    hops: int = 3
    fanout: int = 5
    negative_ratio: int = 1
    num_skills: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.hops < 1:
            raise ConfigError(f"hops must be >= 1, got {self.hops}")
        if self.fanout < 1:
            raise ConfigError(f"fanout must be >= 1, got {self.fanout}")
        if self.negative_ratio < 1:
            raise ConfigError(f"negative ratio must be >= 1, got {self.negative_ratio}")
        if self.num_skills < 1:
            raise ConfigError(f"num_skills must be >= 1, got {self.num_skills}")


@dataclass
class SubgraphBatch:
    """A sampled node set with re-indexed edges and link samples.

    nodes holds store-global ids, sorted; edges maps relation name to local
    (src, dst) arrays in canonical direction. positives/negatives are
    (src_id, relation_index, dst_id) triples in per-kind id space so they can
    be checked against the store; both ends of every positive are sampled
    nodes, and negatives are constrained to sampled destinations.
    """

    nodes: np.ndarray
    local_lookup: np.ndarray  # store-global id -> local index, -1 if absent
    node_kind_index: np.ndarray
    edges: dict
    positives: np.ndarray
    negatives: np.ndarray
    _view_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self):
        return len(self.nodes)

    def local_of_global(self, gids):
        return self.local_lookup[np.asarray(gids, dtype=np.int64)]

    def view_edges(self, view_name):
        """Local (src, dst) arrays for one message-passing view."""
        cached = self._view_cache.get(view_name)
        if cached is not None:
            return cached
        view = next(v for v in VIEWS if v.name == view_name)
        src, dst = self.edges[view.relation]
        if RELATIONS[view.relation].symmetric:
            out = (np.concatenate([src, dst]), np.concatenate([dst, src]))
        elif view.reverse:
            out = (dst, src)
        else:
            out = (src, dst)
        self._view_cache[view_name] = out
        return out

    def view_plan(self, view_name):
        """Reusable aggregation plan for one view's edge list."""
        key = ("plan", view_name)
        plan = self._view_cache.get(key)
        if plan is None:
            from .autodiff import EdgePlan

            src, dst = self.view_edges(view_name)
            plan = EdgePlan(src, dst, self.num_nodes)
            self._view_cache[key] = plan
        return plan


def sample_subgraph(store, seeds, cfg, rng):
    """Fanout-limited breadth expansion from the seeds, then induced closure.

    Each hop, every frontier node samples up to cfg.fanout distinct neighbors
    per relation view without replacement; after cfg.hops rounds, all store
    edges among the sampled nodes are reconnected.
    """
    if not seeds:
        raise ValueError("sample_subgraph: seeds must be nonempty")
    for ref in seeds:
        if not (0 <= ref.id < store.num(ref.kind)):
            raise ValueError(f"sample_subgraph: unknown seed {ref}")

    visited = {store.global_id(ref) for ref in seeds}
    frontier = sorted(visited)
    fanout = cfg.fanout
    for _ in range(cfg.hops):
        added = []
        for gid in frontier:
            ref = store.ref_of_global(gid)
            offset_of = store.offset
            for view in _VIEWS_BY_KIND[ref.kind]:
                nbrs = store.neighbor_ids(view.name, ref.id)
                if len(nbrs) > fanout:
                    picked = nbrs[np.sort(rng.choice(len(nbrs), size=fanout, replace=False))]
                else:
                    picked = nbrs
                base = offset_of(view.dst)
                for nb in picked:
                    g = base + int(nb)
                    if g not in visited:
                        visited.add(g)
                        added.append(g)
        frontier = sorted(added)
        if not frontier:
            break

    nodes = np.array(sorted(visited), dtype=np.int64)
    member_mask = np.zeros(store.total_entities, dtype=bool)
    member_mask[nodes] = True
    local_lookup = np.full(store.total_entities, -1, dtype=np.int64)
    local_lookup[nodes] = np.arange(len(nodes))

    kind_index = np.empty(len(nodes), dtype=np.int64)
    for ki, kind in enumerate(KINDS):
        start = store.offset(kind)
        in_kind = (nodes >= start) & (nodes < start + store.num(kind))
        kind_index[in_kind] = ki

    edges = {}
    for name, rel in RELATIONS.items():
        pairs = store.edges[name]
        if len(pairs) == 0:
            edges[name] = (np.zeros(0, np.int64), np.zeros(0, np.int64))
            continue
        src_g = pairs[:, 0] + store.offset(rel.src)
        dst_g = pairs[:, 1] + store.offset(rel.dst)
        keep = member_mask[src_g] & member_mask[dst_g]
        edges[name] = (local_lookup[src_g[keep]], local_lookup[dst_g[keep]])

    return SubgraphBatch(
        nodes=nodes,
        local_lookup=local_lookup,
        node_kind_index=kind_index,
        edges=edges,
        positives=np.zeros((0, 3), dtype=np.int64),
        negatives=np.zeros((0, 3), dtype=np.int64),
    )


def collect_positives(store, batch, seed_globals):
    """Closure edges incident to the seed endpoints, as per-kind link triples."""
    is_seed = np.zeros(batch.num_nodes, dtype=bool)
    locals_ = batch.local_of_global(list(seed_globals))
    is_seed[locals_[locals_ >= 0]] = True
    blocks = []
    for name in REL_ORDER:
        rel = RELATIONS[name]
        src, dst = batch.edges[name]
        if len(src) == 0:
            continue
        keep = is_seed[src] | is_seed[dst]
        if not keep.any():
            continue
        src_ids = batch.nodes[src[keep]] - store.offset(rel.src)
        dst_ids = batch.nodes[dst[keep]] - store.offset(rel.dst)
        ridx = np.full(len(src_ids), REL_INDEX[name], dtype=np.int64)
        blocks.append(np.stack([src_ids, ridx, dst_ids], axis=1))
    if not blocks:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(blocks, axis=0)


def sample_negatives(store, positives, ratio, rng, candidates_by_relation=None):
    """Destination-corrupted negatives: ratio per positive, none in the store.

    positives are (src_id, relation_index, dst_id) triples in per-kind id
    space. Destinations are drawn uniformly from the relation's destination
    kind (or from candidates_by_relation[name] when given), rejecting store
    edges and repeats for the same source.
    """
    _, negatives = _corrupt(store, positives, ratio, rng, candidates_by_relation, drop=False)
    return negatives


def sample_negatives_lenient(store, positives, ratio, rng, candidates_by_relation=None):
    """Like sample_negatives, but positives that cannot be corrupted (their
    source already exhausts the destination pool) are dropped instead of
    raising. Returns (kept_positives, negatives)."""
    return _corrupt(store, positives, ratio, rng, candidates_by_relation, drop=True)


def _corrupt(store, positives, ratio, rng, candidates_by_relation, drop):
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    if len(positives) == 0:
        raise ValueError("sample_negatives: positives must be nonempty")
    used = {}
    kept = []
    out = []
    for s, ridx, d in positives:
        name = REL_ORDER[ridx]
        rel = RELATIONS[name]
        if candidates_by_relation is not None and name in candidates_by_relation:
            pool = candidates_by_relation[name]
            pool_size = len(pool)
        else:
            pool = None
            pool_size = store.num(rel.dst)
        if pool_size <= 1:
            if drop:
                continue
            raise SamplingError(
                f"cannot corrupt {name}: destination kind {rel.dst.value} has {pool_size} candidates")
        taken = used.setdefault((int(s), int(ridx)), set())
        scratch = set(taken)
        negs = []
        try:
            for _ in range(int(ratio)):
                neg = _draw_negative(store, rel, int(s), pool, pool_size, scratch, rng)
                scratch.add(neg)
                negs.append(neg)
        except SamplingError:
            if drop:
                continue
            raise
        taken.update(negs)
        kept.append((int(s), int(ridx), int(d)))
        out.extend((int(s), int(ridx), n) for n in negs)
    return (np.array(kept, dtype=np.int64).reshape(-1, 3),
            np.array(out, dtype=np.int64).reshape(-1, 3))


def _draw_negative(store, rel, src, pool, pool_size, taken, rng, max_tries=64):
    symmetric_self = rel.symmetric
    for _ in range(max_tries):
        idx = int(rng.integers(pool_size))
        cand = int(pool[idx]) if pool is not None else idx
        if cand in taken:
            continue
        if symmetric_self and cand == src:
            continue
        if not store.has_edge(rel.name, src, cand):
            return cand
    # rejection budget exhausted: enumerate what is allowed (same uniform law)
    if pool is not None:
        options = [int(c) for c in pool]
    else:
        options = list(range(pool_size))
    allowed = [c for c in options
               if c not in taken
               and not (symmetric_self and c == src)
               and not store.has_edge(rel.name, src, c)]
    if not allowed:
        raise SamplingError(f"no remaining negative destinations for {rel.name} from source {src}")
    return int(allowed[int(rng.integers(len(allowed)))])


def sample_skills(skills, num_skills, rng):
    """At most num_skills entries, uniformly without replacement; small sets pass through."""
    skills = list(skills)
    if len(skills) <= num_skills:
        return skills
    chosen = np.sort(rng.choice(len(skills), size=num_skills, replace=False))
    return [skills[i] for i in chosen]
