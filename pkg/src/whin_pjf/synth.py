"""Seeded synthetic workplace-graph generator with controllable social noise.

Members and jobs carry latent skill sets drawn from per-industry pools (each
pool split into a few specialties, so skill embeddings have discoverable
cluster structure). Labels of candidate pairs follow the cosine between the
latent skill sets; profiles and the master edges expose only an annotated
subset of each member's skills, so part of the signal is reachable only
through professional connections, which are skill-homophilous within an
industry and pure noise across industries (the rho knob).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .seeding import substream
from .text import EmbedderConfig, TokenEmbedder

SPECIALTIES_PER_INDUSTRY = 3
ANNOTATED_FRACTION = 0.6        # share of a member's true skills visible in files
TRUE_SKILLS_RANGE = (3, 15)
REQUIRED_SKILLS_RANGE = (3, 10)
HOME_SPECIALTY_PROB_MEMBER = 0.8
HOME_SPECIALTY_PROB_JOB = 0.9
FOREIGN_SKILL_PROB = 0.08       # chance of one out-of-industry true skill (multi-industry)
CROSS_PAIR_PROB = 0.25          # candidate pairs spanning industries (multi-industry)
CONNECT_HOME_PROB = 0.85        # intra-industry connections inside the home specialty
COMPANY_AFFINITY = 0.8          # employers and postings follow the specialty
SCHOOL_AFFINITY = 0.7
HOMOPHILY_GAMMA = 2.0
APPLICATIONS_RANGE = (1, 4)
MEMBER_FILLER_RANGE = (4, 10)
JOB_FILLER_RANGE = (3, 8)

FILLER_WORDS = (
    "experienced motivated team player detail oriented results driven cross functional "
    "stakeholder communication agile delivery roadmap strategy growth impact ownership "
    "collaborative fast paced dynamic environment passionate innovative solutions "
    "leadership mentoring planning execution quality excellence customer focused global"
).split()


@dataclass(frozen=True)
class GenConfig:
    """Counts are per industry for entities, totals for pairs and connections."""

    industries: int = 1
    members: int = 330
    jobs: int = 620
    skills: int = 270
    companies: int = 33
    schools: int = 16
    pairs: int = 1360
    positive_rate: float = 0.35
    connections: int = 19220
    cross_industry_fraction: float = 0.0  # rho
    overlap_strength: float = 30.0
    seed: int = 0

    def __post_init__(self):
        for field_name in ("industries", "members", "jobs", "skills", "companies",
                           "schools", "pairs", "connections"):
            if getattr(self, field_name) < 1:
                raise ConfigError(f"{field_name} must be >= 1")
        if not 0.0 <= self.cross_industry_fraction <= 1.0:
            raise ConfigError("cross_industry_fraction must be in [0, 1]")
        if not 0.0 < self.positive_rate < 1.0:
            raise ConfigError("positive_rate must be in (0, 1)")
        if self.cross_industry_fraction > 0 and self.industries < 2:
            raise ConfigError("cross-industry connections need at least 2 industries")
        if self.skills < TRUE_SKILLS_RANGE[1]:
            raise ConfigError(
                f"need at least {TRUE_SKILLS_RANGE[1]} skills per industry, got {self.skills}")
        total_members = self.industries * self.members
        if self.connections > total_members * (total_members - 1) // 2:
            raise ConfigError("more connections requested than member pairs exist")
        if self.pairs > self.industries * self.members * self.industries * self.jobs:
            raise ConfigError("more candidate pairs requested than member-job combinations")


def presets():
    """Named 1/100-scale dataset shapes (tech / finance / hybrid)."""
    return {
        "tech-100x": GenConfig(industries=1, members=330, jobs=620, skills=270,
                               companies=33, schools=16, pairs=1360, connections=19220,
                               cross_industry_fraction=0.0),
        "finance-100x": GenConfig(industries=1, members=200, jobs=270, skills=230,
                                  companies=20, schools=10, pairs=360, connections=6150,
                                  cross_industry_fraction=0.0),
        "hybrid-100x": GenConfig(industries=3, members=277, jobs=400, skills=110,
                                 companies=10, schools=5, pairs=2000, connections=27680,
                                 cross_industry_fraction=0.3),
    }


class _World:
    """Intermediate latent state while generating one dataset."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.n_members = cfg.industries * cfg.members
        self.n_jobs = cfg.industries * cfg.jobs
        self.n_skills = cfg.industries * cfg.skills
        self.member_industry = np.repeat(np.arange(cfg.industries), cfg.members)
        self.job_industry = np.repeat(np.arange(cfg.industries), cfg.jobs)
        self.skill_industry = np.repeat(np.arange(cfg.industries), cfg.skills)
        self.skill_specialty = np.zeros(self.n_skills, dtype=np.int64)
        for ind in range(cfg.industries):
            base = ind * cfg.skills
            for offset in range(cfg.skills):
                self.skill_specialty[base + offset] = offset % SPECIALTIES_PER_INDUSTRY
        self.true_skills = []      # per member, sorted tuple of skill ids
        self.annotated = []        # per member, visible subset
        self.required = []         # per job
        self.member_home = np.zeros(self.n_members, dtype=np.int64)
        self.job_home = np.zeros(self.n_jobs, dtype=np.int64)

    def industry_skills(self, ind, specialty=None):
        base = ind * self.cfg.skills
        ids = np.arange(base, base + self.cfg.skills)
        if specialty is None:
            return ids
        return ids[self.skill_specialty[ids] == specialty]


def _draw_skill_set(world, rng, ind, home, count, home_prob):
    picks = []
    home_pool = world.industry_skills(ind, home)
    other_pool = world.industry_skills(ind)
    other_pool = other_pool[world.skill_specialty[other_pool] != home]
    for _ in range(count):
        pool = home_pool if rng.random() < home_prob else other_pool
        picks.append(int(pool[rng.integers(len(pool))]))
    if world.cfg.industries > 1 and rng.random() < FOREIGN_SKILL_PROB:
        foreign_ind = int((ind + 1 + rng.integers(world.cfg.industries - 1))
                          % world.cfg.industries)
        picks.append(int(world.industry_skills(foreign_ind)[rng.integers(world.cfg.skills)]))
    return tuple(sorted(set(picks)))


def _assign_skills(world):
    cfg = world.cfg
    rng = substream(cfg.seed, "synth:skills")
    for m in range(world.n_members):
        ind = int(world.member_industry[m])
        home = int(rng.integers(SPECIALTIES_PER_INDUSTRY))
        world.member_home[m] = home
        count = int(rng.integers(TRUE_SKILLS_RANGE[0], TRUE_SKILLS_RANGE[1] + 1))
        world.true_skills.append(_draw_skill_set(world, rng, ind, home, count,
                                                 HOME_SPECIALTY_PROB_MEMBER))
        visible = [s for s in world.true_skills[m] if rng.random() < ANNOTATED_FRACTION]
        if not visible:
            visible = [world.true_skills[m][int(rng.integers(len(world.true_skills[m])))]]
        world.annotated.append(tuple(sorted(visible)))
    for j in range(world.n_jobs):
        ind = int(world.job_industry[j])
        home = int(rng.integers(SPECIALTIES_PER_INDUSTRY))
        world.job_home[j] = home
        count = int(rng.integers(REQUIRED_SKILLS_RANGE[0], REQUIRED_SKILLS_RANGE[1] + 1))
        world.required.append(_draw_skill_set(world, rng, ind, home, count,
                                              HOME_SPECIALTY_PROB_JOB))


def _skill_name(s):
    return f"sk{s}"


def _skill_vectors(world):
    embedder = TokenEmbedder(EmbedderConfig(dim=32))
    return np.stack([embedder.token_vectors([_skill_name(s)])[0]
                     for s in range(world.n_skills)]).astype(np.float64)


def _mean_unit(vectors, skill_sets):
    out = np.zeros((len(skill_sets), vectors.shape[1]))
    for i, ids in enumerate(skill_sets):
        if ids:
            v = vectors[list(ids)].mean(axis=0)
            n = np.linalg.norm(v)
            if n > 0:
                out[i] = v / n
    return out


def _latent_cosines(world):
    vectors = _skill_vectors(world)
    member_unit = _mean_unit(vectors, world.true_skills)
    job_unit = _mean_unit(vectors, world.required)
    return member_unit, job_unit


def _sample_candidate(world, rng):
    cfg = world.cfg
    m = int(rng.integers(world.n_members))
    ind = int(world.member_industry[m])
    if cfg.industries > 1 and rng.random() < CROSS_PAIR_PROB:
        other = int((ind + 1 + rng.integers(cfg.industries - 1)) % cfg.industries)
        j = int(other * cfg.jobs + rng.integers(cfg.jobs))
    else:
        j = int(ind * cfg.jobs + rng.integers(cfg.jobs))
    return m, j


def _generate_pairs(world, member_unit, job_unit, apply_set):
    cfg = world.cfg
    rng = substream(cfg.seed, "synth:pairs")
    # calibrate the label threshold on same-industry candidates: cross-industry
    # pairs then land far below it and are (correctly) almost always negative
    calib = []
    while len(calib) < 2000:
        m, j = _sample_candidate(world, rng)
        if world.member_industry[m] == world.job_industry[j]:
            calib.append(float(member_unit[m] @ job_unit[j]))
    threshold = float(np.quantile(calib, 1.0 - cfg.positive_rate))
    pairs = []
    seen = set()
    attempts = 0
    budget = cfg.pairs * 200
    while len(pairs) < cfg.pairs:
        attempts += 1
        if attempts > budget:
            raise ConfigError("could not draw enough distinct candidate pairs")
        m, j = _sample_candidate(world, rng)
        if (m, j) in seen or (m, j) in apply_set:
            continue
        seen.add((m, j))
        cos = float(member_unit[m] @ job_unit[j])
        p = 1.0 / (1.0 + np.exp(-cfg.overlap_strength * (cos - threshold)))
        pairs.append((m, j, int(rng.random() < p)))
    return pairs


def _generate_applications(world):
    """Historical same-industry applications, biased toward skill overlap."""
    cfg = world.cfg
    rng = substream(cfg.seed, "synth:applications")
    members_true = [set(t) for t in world.true_skills]
    edges = set()
    for m in range(world.n_members):
        ind = int(world.member_industry[m])
        base = ind * cfg.jobs
        jobs = np.arange(base, base + cfg.jobs)
        overlap = np.array([len(members_true[m] & set(world.required[j])) for j in jobs],
                           dtype=np.float64)
        weights = (1.0 + overlap) ** HOMOPHILY_GAMMA
        weights /= weights.sum()
        count = int(rng.integers(APPLICATIONS_RANGE[0], APPLICATIONS_RANGE[1] + 1))
        count = min(count, len(jobs))
        chosen = rng.choice(len(jobs), size=count, replace=False, p=weights)
        for idx in chosen:
            edges.add((m, int(jobs[idx])))
    return edges


def _generate_connections(world):
    """Connections live mostly inside the home specialty (skill-overlap weighted
    there), occasionally anywhere in the industry, and with probability rho in a
    different industry entirely (the social noise the downstream model must filter)."""
    cfg = world.cfg
    rng = substream(cfg.seed, "synth:connections")
    rho = cfg.cross_industry_fraction
    indicator = np.zeros((world.n_members, world.n_skills), dtype=np.float64)
    for m, ids in enumerate(world.true_skills):
        indicator[m, list(ids)] = 1.0

    specialty_members = {}
    specialty_weights = {}
    for ind in range(cfg.industries):
        base = ind * cfg.members
        for spec in range(SPECIALTIES_PER_INDUSTRY):
            ids = base + np.flatnonzero(world.member_home[base:base + cfg.members] == spec)
            specialty_members[(ind, spec)] = ids
            block = indicator[ids]
            w = (1.0 + block @ block.T) ** HOMOPHILY_GAMMA
            np.fill_diagonal(w, 0.0)
            rows = w.sum(axis=1, keepdims=True)
            rows[rows == 0] = 1.0
            specialty_weights[(ind, spec)] = w / rows

    edges = set()
    attempts = 0
    budget = cfg.connections * 200
    while len(edges) < cfg.connections:
        attempts += 1
        if attempts > budget:
            raise ConfigError("could not draw enough distinct connections")
        a = int(rng.integers(world.n_members))
        ind = int(world.member_industry[a])
        if cfg.industries > 1 and rng.random() < rho:
            other = int((ind + 1 + rng.integers(cfg.industries - 1)) % cfg.industries)
            b = int(other * cfg.members + rng.integers(cfg.members))
        else:
            spec = int(world.member_home[a])
            peers = specialty_members[(ind, spec)]
            in_home = len(peers) > 1 and rng.random() < CONNECT_HOME_PROB
            if in_home and attempts % 50 != 0:  # periodic uniform draw keeps dense configs feasible
                local = int(np.searchsorted(peers, a))
                row = specialty_weights[(ind, spec)][local]
                b = int(peers[rng.choice(len(peers), p=row)])
            else:
                b = int(ind * cfg.members + rng.integers(cfg.members))
        if a == b:
            continue
        edges.add((min(a, b), max(a, b)))
    return edges


def _profile_text(skill_ids, filler_range, rng):
    words = [_skill_name(s) for s in skill_ids]
    n_filler = int(rng.integers(filler_range[0], filler_range[1] + 1))
    words += [FILLER_WORDS[int(rng.integers(len(FILLER_WORDS)))] for _ in range(n_filler)]
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def generate(cfg, out_dir):
    """Write entities.tsv / relations.tsv / pairs.tsv / manifest.json.

    Same config and seed give byte-identical files.
    """
    world = _World(cfg)
    _assign_skills(world)
    member_unit, job_unit = _latent_cosines(world)
    apply_edges = _generate_applications(world)
    pairs = _generate_pairs(world, member_unit, job_unit, apply_edges)
    connections = _generate_connections(world)
    rng_text = substream(cfg.seed, "synth:text")
    rng_org = substream(cfg.seed, "synth:orgs")

    os.makedirs(out_dir, exist_ok=True)
    entities_path = os.path.join(out_dir, "entities.tsv")
    relations_path = os.path.join(out_dir, "relations.tsv")
    pairs_path = os.path.join(out_dir, "pairs.tsv")

    n_companies = cfg.industries * cfg.companies
    n_schools = cfg.industries * cfg.schools
    with open(entities_path, "w", encoding="utf-8") as fh:
        for m in range(world.n_members):
            fh.write(f"member\t{m}\t{_profile_text(world.annotated[m], MEMBER_FILLER_RANGE, rng_text)}\n")
        for j in range(world.n_jobs):
            fh.write(f"job\t{j}\t{_profile_text(world.required[j], JOB_FILLER_RANGE, rng_text)}\n")
        for s in range(world.n_skills):
            fh.write(f"skill\t{s}\t{_skill_name(s)}\n")
        for c in range(n_companies):
            fh.write(f"company\t{c}\torg{c}\n")
        for h in range(n_schools):
            fh.write(f"school\t{h}\tcampus{h}\n")

    def pick_org(ind, specialty, per_industry, affinity):
        """Organizations lean toward a specialty: org id modulo the specialty count."""
        if per_industry >= SPECIALTIES_PER_INDUSTRY and rng_org.random() < affinity:
            slots = (per_industry - specialty + SPECIALTIES_PER_INDUSTRY - 1) \
                // SPECIALTIES_PER_INDUSTRY
            local = specialty + SPECIALTIES_PER_INDUSTRY * int(rng_org.integers(slots))
        else:
            local = int(rng_org.integers(per_industry))
        return ind * per_industry + local

    with open(relations_path, "w", encoding="utf-8") as fh:
        for a, b in sorted(connections):
            fh.write(f"connect\t{a}\t{b}\n")
        for m, j in sorted(apply_edges):
            fh.write(f"apply\t{m}\t{j}\n")
        for m in range(world.n_members):
            for s in world.annotated[m]:
                fh.write(f"master\t{m}\t{s}\n")
            ind = int(world.member_industry[m])
            home = int(world.member_home[m])
            fh.write(f"work_at\t{m}\t{pick_org(ind, home, cfg.companies, COMPANY_AFFINITY)}\n")
            fh.write(f"attend\t{m}\t{pick_org(ind, home, cfg.schools, SCHOOL_AFFINITY)}\n")
        for j in range(world.n_jobs):
            for s in world.required[j]:
                fh.write(f"require\t{j}\t{s}\n")
            ind = int(world.job_industry[j])
            home = int(world.job_home[j])
            fh.write(f"post\t{j}\t{pick_org(ind, home, cfg.companies, COMPANY_AFFINITY)}\n")

    with open(pairs_path, "w", encoding="utf-8") as fh:
        for m, j, label in pairs:
            fh.write(f"{m}\t{j}\t{label}\n")

    manifest = {
        "format_version": 1,
        "config": asdict(cfg),
        "member_industry": world.member_industry.tolist(),
        "job_industry": world.job_industry.tolist(),
        "skill_industry": world.skill_industry.tolist(),
        "skill_group": (world.skill_industry * SPECIALTIES_PER_INDUSTRY
                        + world.skill_specialty).tolist(),
        "diagnostics": {
            "member_true_skills": [list(t) for t in world.true_skills],
            "positive_rate": float(np.mean([p[2] for p in pairs])),
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=0)
        fh.write("\n")
    return entities_path, relations_path, pairs_path
