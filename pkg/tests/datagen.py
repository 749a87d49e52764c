"""Hand-rolled tiny datasets for exercising the store and samplers."""

import os

import numpy as np

from whin_pjf.graph import ingest, materialize_metapaths


def write_tsvs(directory, entities, relations, pairs):
    """entities: (kind, id, text) rows; relations: (name, src, dst); pairs: (m, j, label)."""
    os.makedirs(directory, exist_ok=True)
    e_path = os.path.join(directory, "entities.tsv")
    r_path = os.path.join(directory, "relations.tsv")
    p_path = os.path.join(directory, "pairs.tsv")
    with open(e_path, "w", encoding="utf-8") as fh:
        for kind, eid, text in entities:
            fh.write(f"{kind}\t{eid}\t{text}\n")
    with open(r_path, "w", encoding="utf-8") as fh:
        for name, s, d in relations:
            fh.write(f"{name}\t{s}\t{d}\n")
    with open(p_path, "w", encoding="utf-8") as fh:
        for m, j, label in pairs:
            fh.write(f"{m}\t{j}\t{label}\n")
    return e_path, r_path, p_path


def entity_rows(members=0, jobs=0, skills=0, companies=0, schools=0, text=None):
    rows = []
    for kind, n in (("member", members), ("job", jobs), ("skill", skills),
                    ("company", companies), ("school", schools)):
        for i in range(n):
            rows.append((kind, i, text(kind, i) if text else f"{kind} {i} profile"))
    return rows


def build_store(tmp_dir, entities, relations, pairs, cap=None, seed=0, materialize=True):
    paths = write_tsvs(tmp_dir, entities, relations, pairs)
    store = ingest(*paths)
    if materialize:
        store = materialize_metapaths(store, cap=cap, seed=seed)
    return store


def clustered_store(tmp_dir, rng, clusters=4, members=80, jobs=70, skills=40,
                    companies=6, schools=4, pair_count=150, cap=None):
    """~200 entities where require/master/apply/connect edges follow latent clusters."""
    entities = entity_rows(members, jobs, skills, companies, schools)
    m_cluster = [m % clusters for m in range(members)]
    j_cluster = [j % clusters for j in range(jobs)]
    s_cluster = [s % clusters for s in range(skills)]
    pool = {c: [s for s in range(skills) if s_cluster[s] == c] for c in range(clusters)}

    relations = []
    for m in range(members):
        p = pool[m_cluster[m]]
        for s in rng.choice(p, size=min(int(rng.integers(3, 7)), len(p)), replace=False):
            relations.append(("master", m, int(s)))
        relations.append(("work_at", m, m_cluster[m] % companies))
        relations.append(("attend", m, int(rng.integers(schools))))
    for j in range(jobs):
        p = pool[j_cluster[j]]
        for s in rng.choice(p, size=min(int(rng.integers(2, 5)), len(p)), replace=False):
            relations.append(("require", j, int(s)))
        relations.append(("post", j, j_cluster[j] % companies))
    own_jobs = {c: [j for j in range(jobs) if j_cluster[j] == c] for c in range(clusters)}
    for m in range(members):
        for j in rng.choice(own_jobs[m_cluster[m]], size=2, replace=False):
            relations.append(("apply", m, int(j)))
    for a in range(members):
        for b in range(a + 1, members):
            if m_cluster[a] == m_cluster[b] and rng.random() < 0.15:
                relations.append(("connect", a, b))

    pairs, seen = [], set()
    while len(pairs) < pair_count:
        m, j = int(rng.integers(members)), int(rng.integers(jobs))
        if (m, j) in seen:
            continue
        seen.add((m, j))
        pairs.append((m, j, int(m_cluster[m] == j_cluster[j])))
    return build_store(tmp_dir, entities, relations, pairs, cap=cap)


def random_store(tmp_dir, rng, members=12, jobs=6, skills=8, companies=3, schools=2,
                 cap=None, connect_prob=0.2, apply_prob=0.25):
    """A small random store with every natural relation populated."""
    entities = entity_rows(members, jobs, skills, companies, schools)
    relations = []
    for a in range(members):
        for b in range(a + 1, members):
            if rng.random() < connect_prob:
                relations.append(("connect", a, b))
    apply_edges = set()
    for m in range(members):
        for j in range(jobs):
            if rng.random() < apply_prob:
                apply_edges.add((m, j))
                relations.append(("apply", m, j))
    for m in range(members):
        for s in rng.choice(skills, size=min(3, skills), replace=False):
            relations.append(("master", m, int(s)))
        relations.append(("work_at", m, int(rng.integers(companies))))
        relations.append(("attend", m, int(rng.integers(schools))))
    for j in range(jobs):
        for s in rng.choice(skills, size=min(2, skills), replace=False):
            relations.append(("require", j, int(s)))
        relations.append(("post", j, int(rng.integers(companies))))
    pairs = []
    seen = set()
    while len(pairs) < min(members * jobs // 2, 20):
        m, j = int(rng.integers(members)), int(rng.integers(jobs))
        if (m, j) not in seen:
            seen.add((m, j))
            pairs.append((m, j, int(rng.integers(2))))
    store = build_store(tmp_dir, entities, relations, pairs, cap=cap)
    return store, sorted(apply_edges), relations
