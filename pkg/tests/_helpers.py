"""Shared builders for randomized model/trace test instances."""

import numpy as np

from shmm.emission import EmissionConfig, StateParams
from shmm.hmm_core import ShmmModel
from shmm.records import SemanticRecord, Trace
from shmm.vmf import VmfParams


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_model(k, p, rng):
    pi = rng.dirichlet(np.ones(k))
    trans = rng.dirichlet(np.ones(k), size=k)
    states = []
    for _ in range(k):
        cov = rng.standard_normal((2, 2))
        cov = cov @ cov.T + 0.5 * np.eye(2)
        states.append(
            StateParams(
                mu_t=float(rng.uniform(0, 86400)),
                sigma_t=float(rng.uniform(1800, 7200)),
                mu_l=rng.standard_normal(2),
                cov_l=cov,
                text=VmfParams(
                    mu=unit(rng.standard_normal(p)), kappa=float(rng.uniform(0, 30)), p=p
                ),
            )
        )
    return ShmmModel(
        n_states=k,
        pi=pi,
        trans=trans,
        states=states,
        config=EmissionConfig.shmm(),
        embedding_dim=p,
    )


def random_trace(r, p, rng, user="u"):
    records = [
        SemanticRecord(
            user_id=user,
            t_abs=float(i * 600),
            t_day=float(rng.uniform(0, 86400)),
            loc=rng.standard_normal(2),
            embedding=unit(rng.standard_normal(p)),
        )
        for i in range(r)
    ]
    return Trace(records)
