"""Synthetic who-commented-where logs for benchmarking.

Pages belong to topics, topics to a few communities (think regional or
partisan news audiences), and pages have Zipf popularity.  Each user
follows one main topic and keeps a small personal set of favourite pages,
drawn mostly from that topic and otherwise from the rest of its community
(popular pages more often), plus occasional activity on arbitrary popular
pages anywhere.  Activities are then sampled from the personal
preference distribution, so two accounts of one user share pages more
often than two users of the same topic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphcore import ActivityRecord, aggregate


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 500
    activities_per_user: float = 450.0
    n_pages: int = 1000
    n_topics: int = 20
    n_communities: int = 3
    favourites: float = 15.0
    topic_focus: float = 0.85
    background: float = 0.1
    zipf: float = 1.0
    dirichlet: float = 0.5
    seed: int = 0


def generate_activity_log(cfg: SynthConfig = SynthConfig()) -> list[ActivityRecord]:
    """Activity records with ``account_id == user_id`` (one account per user)."""
    rng = np.random.default_rng(cfg.seed)
    pop = 1.0 / np.arange(1, cfg.n_pages + 1) ** cfg.zipf
    pop = pop[rng.permutation(cfg.n_pages)]
    topic_of = rng.integers(0, cfg.n_topics, size=cfg.n_pages)
    community_of = np.arange(cfg.n_topics) % max(1, cfg.n_communities)
    pop_all = pop / pop.sum()
    width_u = len(str(cfg.n_users - 1))
    width_p = len(str(cfg.n_pages - 1))
    pages = [f"p{j:0{width_p}d}" for j in range(cfg.n_pages)]
    records: list[ActivityRecord] = []
    for u in range(cfg.n_users):
        uid = f"u{u:0{width_u}d}"
        topic = rng.integers(cfg.n_topics)
        in_topic = np.flatnonzero(topic_of == topic)
        if in_topic.size == 0:
            in_topic = np.arange(cfg.n_pages)
        k = max(2, int(rng.poisson(cfg.favourites)))
        n_in = min(in_topic.size, rng.binomial(k, cfg.topic_focus))
        w_topic = pop[in_topic] / pop[in_topic].sum()
        fav = set(rng.choice(in_topic, size=n_in, replace=False, p=w_topic).tolist())
        in_comm = np.flatnonzero(community_of[topic_of] == community_of[topic])
        w_comm = pop[in_comm] / pop[in_comm].sum()
        while len(fav) < min(k, in_comm.size):
            fav.add(int(rng.choice(in_comm, p=w_comm)))
        fav = np.array(sorted(fav))
        pref = rng.dirichlet(np.full(fav.size, cfg.dirichlet))
        # keep a little generic activity on popular pages
        mix = np.zeros(cfg.n_pages)
        mix[fav] = (1.0 - cfg.background) * pref
        mix += cfg.background * pop_all
        n_act = max(1, int(rng.poisson(cfg.activities_per_user)))
        hits = np.bincount(rng.choice(cfg.n_pages, size=n_act, p=mix), minlength=cfg.n_pages)
        for j in np.flatnonzero(hits):
            records.append(ActivityRecord(uid, pages[j], int(hits[j]), uid))
    return aggregate(records)
