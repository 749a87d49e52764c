"""Workplace heterogeneous graph: five entity kinds, seven natural relations,
two materialized co-application metapaths, and the labeled candidate pairs.

The store is immutable once built. Adjacency is kept per relation *view*
(forward, and a reverse view for each directed relation) in CSR form with
sorted neighbor lists, so lookups, sampling, and message passing all read the
same arrays without locking.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError, ParseError
from .matrixio import read_edges, read_manifest, write_edges, write_manifest
from .seeding import substream
from .text import tokenize

STORE_FORMAT_VERSION = 1


class EntityKind(enum.Enum):
    MEMBER = "member"
    JOB = "job"
    SKILL = "skill"
    COMPANY = "company"
    SCHOOL = "school"


KINDS = (EntityKind.MEMBER, EntityKind.JOB, EntityKind.SKILL, EntityKind.COMPANY, EntityKind.SCHOOL)
_KIND_BY_NAME = {k.value: k for k in KINDS}


@dataclass(frozen=True)
class EntityRef:
    kind: EntityKind
    id: int


@dataclass(frozen=True)
class RelationKind:
    name: str
    src: EntityKind
    dst: EntityKind
    symmetric: bool
    is_metapath: bool


RELATIONS = {
    r.name: r
    for r in (
        RelationKind("connect", EntityKind.MEMBER, EntityKind.MEMBER, True, False),
        RelationKind("apply", EntityKind.MEMBER, EntityKind.JOB, False, False),
        RelationKind("master", EntityKind.MEMBER, EntityKind.SKILL, False, False),
        RelationKind("work_at", EntityKind.MEMBER, EntityKind.COMPANY, False, False),
        RelationKind("attend", EntityKind.MEMBER, EntityKind.SCHOOL, False, False),
        RelationKind("require", EntityKind.JOB, EntityKind.SKILL, False, False),
        RelationKind("post", EntityKind.JOB, EntityKind.COMPANY, False, False),
        RelationKind("co_apply", EntityKind.MEMBER, EntityKind.MEMBER, True, True),
        RelationKind("co_applied", EntityKind.JOB, EntityKind.JOB, True, True),
    )
}

NATURAL_RELATIONS = tuple(n for n, r in RELATIONS.items() if not r.is_metapath)
METAPATH_RELATIONS = tuple(n for n, r in RELATIONS.items() if r.is_metapath)


@dataclass(frozen=True)
class RelationView:
    """One message-passing direction of a relation."""

    name: str
    relation: str
    reverse: bool
    src: EntityKind
    dst: EntityKind


def relation_views():
    """All adjacency views: one per symmetric relation, two per directed one."""
    views = []
    for rel in RELATIONS.values():
        views.append(RelationView(rel.name, rel.name, False, rel.src, rel.dst))
        if not rel.symmetric:
            views.append(RelationView(rel.name + "_rev", rel.name, True, rel.dst, rel.src))
    return tuple(views)


VIEWS = relation_views()
VIEW_BY_NAME = {v.name: v for v in VIEWS}


def _escape(text):
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text):
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "n":
                out.append("\n")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(c)
        i += 1
    return "".join(out)


def _csr(edges, n_src):
    """Sorted-neighbor CSR from an (E, 2) src/dst array."""
    if len(edges) == 0:
        return np.zeros(n_src + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    edges = np.asarray(edges, dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = edges[order]
    indptr = np.zeros(n_src + 1, dtype=np.int64)
    np.cumsum(np.bincount(edges[:, 0], minlength=n_src), out=indptr[1:])
    return indptr, edges[:, 1].copy()


class WhinStore:
    """Immutable typed multigraph plus labeled candidate pairs."""

    def __init__(self, counts, texts, tokens, edges, pairs, metapath_cap=None,
                 metapath_seed=0, materialized=False):
        self.counts = dict(counts)
        self.texts = texts
        self.tokens = tokens
        self.edges = {name: np.asarray(edges.get(name, np.zeros((0, 2), dtype=np.int64)),
                                       dtype=np.int64).reshape(-1, 2)
                      for name in RELATIONS}
        self.pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
        self.metapath_cap = metapath_cap
        self.metapath_seed = metapath_seed
        self.materialized = materialized

        self._offsets = {}
        total = 0
        for kind in KINDS:
            self._offsets[kind] = total
            total += self.counts[kind]
        self.total_entities = total

        self._adj = {}
        for view in VIEWS:
            rel_edges = self.edges[view.relation]
            if RELATIONS[view.relation].symmetric:
                both = np.concatenate([rel_edges, rel_edges[:, ::-1]], axis=0)
                self._adj[view.name] = _csr(both, self.counts[view.src])
            elif view.reverse:
                self._adj[view.name] = _csr(rel_edges[:, ::-1], self.counts[view.src])
            else:
                self._adj[view.name] = _csr(rel_edges, self.counts[view.src])

    # -- lookups ---------------------------------------------------------

    def num(self, kind):
        return self.counts[kind]

    def offset(self, kind):
        return self._offsets[kind]

    def global_id(self, ref):
        return self._offsets[ref.kind] + ref.id

    def ref_of_global(self, gid):
        for kind in reversed(KINDS):
            if gid >= self._offsets[kind]:
                return EntityRef(kind, gid - self._offsets[kind])
        raise IndexError(gid)

    def neighbor_ids(self, view_name, src_id):
        indptr, indices = self._adj[view_name]
        return indices[indptr[src_id]:indptr[src_id + 1]]

    def view_csr(self, view_name):
        return self._adj[view_name]

    def degree(self, view_name, src_id):
        indptr, _ = self._adj[view_name]
        return int(indptr[src_id + 1] - indptr[src_id])

    def neighbors(self, ref, relation, reverse=False):
        """Interaction map lookup: destination refs of ``ref`` under a relation.

        With reverse=True the relation is followed against its direction
        (meaningless for symmetric relations, which already store both ways).
        """
        rel = RELATIONS[relation] if isinstance(relation, str) else relation
        view_name = rel.name
        expected_kind, out_kind = rel.src, rel.dst
        if reverse:
            if rel.symmetric:
                raise ValueError(f"{rel.name} is symmetric; reverse view does not exist")
            view_name = rel.name + "_rev"
            expected_kind, out_kind = rel.dst, rel.src
        if ref.kind is not expected_kind:
            raise ValueError(
                f"neighbors: {rel.name} starts at {expected_kind.value}, got {ref.kind.value}")
        return [EntityRef(out_kind, int(i)) for i in self.neighbor_ids(view_name, ref.id)]

    def has_edge(self, relation, src_id, dst_id):
        rel = RELATIONS[relation]
        if rel.symmetric and src_id == dst_id:
            return False
        row = self.neighbor_ids(rel.name, src_id)
        pos = np.searchsorted(row, dst_id)
        return bool(pos < len(row) and row[pos] == dst_id)

    @property
    def pair_members(self):
        return self.pairs[:, 0]

    @property
    def pair_jobs(self):
        return self.pairs[:, 1]

    @property
    def pair_labels(self):
        return self.pairs[:, 2]


# -- ingest ----------------------------------------------------------------


def _read_entities(path, max_tokens):
    by_kind = {kind: {} for kind in KINDS}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected kind<TAB>id<TAB>text")
            kind_name, id_str, text = parts
            kind = _KIND_BY_NAME.get(kind_name)
            if kind is None:
                raise ParseError(f"{path}:{lineno}: unknown entity kind {kind_name!r}")
            try:
                eid = int(id_str)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad id {id_str!r}") from None
            if eid < 0:
                raise ParseError(f"{path}:{lineno}: negative id {eid}")
            if eid in by_kind[kind]:
                raise ParseError(f"{path}:{lineno}: duplicate {kind_name} id {eid}")
            by_kind[kind][eid] = _unescape(text)

    counts, texts, tokens = {}, {}, {}
    for kind in KINDS:
        table = by_kind[kind]
        counts[kind] = len(table)
        if table and (min(table) != 0 or max(table) != len(table) - 1):
            raise IntegrityError(f"{path}: {kind.value} ids are not dense 0..{len(table) - 1}")
        texts[kind] = [table[i] for i in range(len(table))]
        tokens[kind] = [tuple(tokenize(t, max_tokens)) for t in texts[kind]]
    return counts, texts, tokens


def _read_relations(path, counts):
    edge_sets = {name: set() for name in NATURAL_RELATIONS}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected relation<TAB>src_id<TAB>dst_id")
            name, src_str, dst_str = parts
            rel = RELATIONS.get(name)
            if rel is None or rel.is_metapath:
                raise ParseError(f"{path}:{lineno}: unknown relation {name!r}")
            try:
                src, dst = int(src_str), int(dst_str)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad endpoint ids") from None
            if not (0 <= src < counts[rel.src]):
                raise IntegrityError(
                    f"{path}:{lineno}: {name} source {src} not a known {rel.src.value}")
            if not (0 <= dst < counts[rel.dst]):
                raise IntegrityError(
                    f"{path}:{lineno}: {name} destination {dst} not a known {rel.dst.value}")
            if rel.symmetric:
                if src == dst:
                    raise ParseError(f"{path}:{lineno}: self-loop on symmetric relation {name}")
                edge_sets[name].add((min(src, dst), max(src, dst)))
            else:
                edge_sets[name].add((src, dst))
    return {
        name: np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        for name, pairs in edge_sets.items()
    }


def _read_pairs(path, counts):
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected member_id<TAB>job_id<TAB>label")
            try:
                m, j, label = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad integer field") from None
            if label not in (0, 1):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
            if not (0 <= m < counts[EntityKind.MEMBER]):
                raise IntegrityError(f"{path}:{lineno}: member {m} does not exist")
            if not (0 <= j < counts[EntityKind.JOB]):
                raise IntegrityError(f"{path}:{lineno}: job {j} does not exist")
            if (m, j) in seen:
                raise ParseError(f"{path}:{lineno}: duplicate candidate pair ({m}, {j})")
            seen.add((m, j))
            rows.append((m, j, label))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def ingest(entities_file, relations_file, pairs_file, max_tokens=128):
    """Build a store from the three TSV files; metapaths start empty."""
    counts, texts, tokens = _read_entities(entities_file, max_tokens)
    edges = _read_relations(relations_file, counts)
    pairs = _read_pairs(pairs_file, counts)
    return WhinStore(counts, texts, tokens, edges, pairs)


# -- metapaths ---------------------------------------------------------------


def _co_occurrence_pairs(store, through_view):
    """Unordered pairs of entities sharing at least one ``through_view`` neighbor."""
    pairs = set()
    view = VIEW_BY_NAME[through_view]
    indptr, indices = store.view_csr(through_view)
    n_mid = store.counts[view.dst]
    witnesses = [[] for _ in range(n_mid)]
    for src in range(store.counts[view.src]):
        for mid in indices[indptr[src]:indptr[src + 1]]:
            witnesses[mid].append(src)
    for group in witnesses:
        for a_pos in range(len(group)):
            for b_pos in range(a_pos + 1, len(group)):
                a, b = group[a_pos], group[b_pos]
                pairs.add((a, b) if a < b else (b, a))
    return pairs


def _cap_pairs(pairs, cap, rng):
    if cap is None:
        return sorted(pairs)
    nbrs = {}
    for a, b in pairs:
        nbrs.setdefault(a, []).append(b)
        nbrs.setdefault(b, []).append(a)
    keep = {}
    for node in sorted(nbrs):
        lst = sorted(nbrs[node])
        if len(lst) <= cap:
            keep[node] = set(lst)
        else:
            chosen = rng.choice(len(lst), size=cap, replace=False)
            keep[node] = {lst[i] for i in chosen}
    return sorted((a, b) for a, b in pairs if b in keep[a] and a in keep[b])


def materialize_metapaths(store, cap=50, seed=0):
    """Add co_apply (members sharing a job) and co_applied (jobs sharing a member).

    Per-node metapath degree is capped by a seeded uniform subsample; an edge
    survives only if both endpoints keep it. cap=None disables capping.
    """
    if cap is not None:
        cap = int(cap)
        if cap <= 0:
            raise ConfigError(f"metapath cap must be positive, got {cap}")

    co_apply = _co_occurrence_pairs(store, "apply")          # members through jobs
    co_applied = _co_occurrence_pairs(store, "apply_rev")    # jobs through members

    edges = dict(store.edges)
    edges["co_apply"] = np.array(
        _cap_pairs(co_apply, cap, substream(seed, "metapath:co_apply")),
        dtype=np.int64).reshape(-1, 2)
    edges["co_applied"] = np.array(
        _cap_pairs(co_applied, cap, substream(seed, "metapath:co_applied")),
        dtype=np.int64).reshape(-1, 2)

    return WhinStore(store.counts, store.texts, store.tokens, edges, store.pairs,
                     metapath_cap=cap, metapath_seed=seed, materialized=True)


# -- serialization -----------------------------------------------------------


def save_store(store, directory):
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format_version": STORE_FORMAT_VERSION,
        "relations": ",".join(RELATIONS),
        "metapath_cap": "" if store.metapath_cap is None else store.metapath_cap,
        "metapath_seed": store.metapath_seed,
        "materialized": int(store.materialized),
    }
    for kind in KINDS:
        manifest[f"count_{kind.value}"] = store.counts[kind]
    manifest["count_pairs"] = len(store.pairs)
    write_manifest(os.path.join(directory, "manifest.txt"), manifest)

    with open(os.path.join(directory, "entities.tsv"), "w", encoding="utf-8") as fh:
        for kind in KINDS:
            for eid, text in enumerate(store.texts[kind]):
                fh.write(f"{kind.value}\t{eid}\t{_escape(text)}\n")
    with open(os.path.join(directory, "pairs.tsv"), "w", encoding="utf-8") as fh:
        for m, j, label in store.pairs:
            fh.write(f"{m}\t{j}\t{label}\n")
    for name, arr in store.edges.items():
        write_edges(os.path.join(directory, f"edges_{name}.bin"), arr)


def load_store(directory):
    manifest = read_manifest(os.path.join(directory, "manifest.txt"))
    version = int(manifest.get("format_version", -1))
    if version != STORE_FORMAT_VERSION:
        raise FormatError(f"{directory}: unsupported store format version {version}")
    counts, texts, tokens = _read_entities(os.path.join(directory, "entities.tsv"), 128)
    for kind in KINDS:
        expected = int(manifest[f"count_{kind.value}"])
        if counts[kind] != expected:
            raise FormatError(
                f"{directory}: manifest says {expected} {kind.value} entities, found {counts[kind]}")
    pairs = _read_pairs(os.path.join(directory, "pairs.tsv"), counts)
    edges = {}
    for name in RELATIONS:
        path = os.path.join(directory, f"edges_{name}.bin")
        edges[name] = read_edges(path) if os.path.exists(path) else np.zeros((0, 2), np.int64)
    cap_raw = manifest.get("metapath_cap", "")
    return WhinStore(
        counts, texts, tokens, edges, pairs,
        metapath_cap=None if cap_raw == "" else int(cap_raw),
        metapath_seed=int(manifest.get("metapath_seed", 0)),
        materialized=bool(int(manifest.get("materialized", 0))),
    )
