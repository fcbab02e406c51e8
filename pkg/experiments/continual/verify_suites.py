import os
import json
import time
import logging
import torch
from tqdm import tqdm

from assistive_functions import substream
from config import DTYPE
from exceptions import InvalidInputError, VerificationError
from networks.mlp import Mlp, finite_diff_check
from subspaces.subspace import Subspace
from subspaces.relax import search_relaxing_space, closest_direction, verify_theorems
from projectors.projections import LayerTaskState
from projectors.trainer import scale_finite_diff_check

logger = logging.getLogger(__name__)

SUITES = ('theorems', 'gradients', 'oracles', 'all')
GRADIENT_TOL = 1e-4
ORACLE_TOL = 1e-3


def _randint(generator, lo, hi):
    """Uniform integer in [lo, hi]."""
    return int(torch.randint(lo, hi + 1, (1,), generator=generator))


def _uniform(generator, lo, hi):
    return lo + (hi - lo) * float(torch.rand(1, dtype=DTYPE, generator=generator))


def random_subspace(generator, ambient_dim: int, dim: int) -> Subspace:
    return Subspace.from_columns(torch.randn(ambient_dim, dim, dtype=DTYPE, generator=generator))


def random_search_instance(generator, max_ambient: int = 20) -> dict:
    """
    Random (U, R_g, zeta) with R_g drawn partly inside U so that every cosine range shows up,
    and sometimes a relaxing space V_0 from an earlier search on another R_g.
    """
    n = _randint(generator, 2, max_ambient)
    u = random_subspace(generator, n, _randint(generator, 1, n - 1))
    rg_dim = _randint(generator, 1, min(n, 6))

    def draw_rg():
        mix = _uniform(generator, 0.0, 1.0)
        inside = u.basis @ torch.randn(u.dim, rg_dim, dtype=DTYPE, generator=generator)
        outside = torch.randn(n, rg_dim, dtype=DTYPE, generator=generator)
        return Subspace.from_columns(mix * inside + (1 - mix) * outside)

    zeta = _uniform(generator, 0.2, 1.0)
    existing_v = None
    if _uniform(generator, 0.0, 1.0) < 0.3:
        existing_v, _ = search_relaxing_space(u, draw_rg(), zeta)
    return {'u': u, 'rg': draw_rg(), 'zeta': zeta, 'existing_v': existing_v}


def _dump(instance: dict) -> dict:
    """JSON-ready copy of an instance: subspaces become nested lists of their basis."""
    out = {}
    for key, value in instance.items():
        if isinstance(value, Subspace):
            out[key] = value.basis.tolist()
        elif isinstance(value, torch.Tensor):
            out[key] = value.tolist()
        else:
            out[key] = value
    return out


# ------------ theorems ------------
def theorem_campaign(seed: int, n_instances: int = 1000, n_lemma: int = 200, n_samples: int = 10_000) -> dict:
    """
    Rank bound and maximality on n_instances random searches; the first n_lemma of them also get
    the sampled ordering check with n_samples unit vectors of V.
    """
    generator = substream(seed, 'campaign:theorems')
    start = time.time()
    worst_dim_gap = None
    for k in tqdm(range(n_instances), desc='theorems', disable=None, leave=False):
        instance = random_search_instance(generator)
        v, report = search_relaxing_space(instance['u'], instance['rg'], instance['zeta'], instance['existing_v'])
        samples = n_samples if k < n_lemma else 16
        checklist = verify_theorems(instance['u'], instance['rg'], instance['zeta'], v, report,
                                    n_samples=samples, generator=generator)
        if not checklist.passed:
            raise VerificationError('theorem check failed on instance %i: %s' % (k, checklist),
                                    dict(_dump(instance), index=k, seed=seed, details=checklist.details))
        gap = instance['rg'].dim - report.added_dims
        worst_dim_gap = gap if worst_dim_gap is None else min(worst_dim_gap, gap)
    return {'suite': 'theorems', 'seed': seed, 'instances': n_instances, 'lemma_instances': min(n_lemma, n_instances),
            'min_rank_slack': worst_dim_gap, 'seconds': time.time() - start}


# ------------ gradients ------------
def random_network_config(generator) -> dict:
    dims = [_randint(generator, 3, 6)] + [_randint(generator, 2, 5) for _ in range(_randint(generator, 1, 2))] \
        + [_randint(generator, 2, 4)]
    return {'layer_dims': dims, 'use_bias': _uniform(generator, 0, 1) < 0.5,
            'loss': 'mse' if _uniform(generator, 0, 1) < 0.3 else 'cross_entropy',
            'batch_size': _randint(generator, 2, 8)}


def random_layer_states(generator, net: Mlp):
    states = []
    for l, ambient in enumerate(net.layer_dims[:-1]):
        u = random_subspace(generator, ambient, _randint(generator, 1, ambient))
        v = Subspace(u.basis[:, :_randint(generator, 1, u.dim)])
        scale = torch.eye(v.dim, dtype=DTYPE) + 0.3 * torch.randn(v.dim, v.dim, dtype=DTYPE, generator=generator)
        states.append(LayerTaskState(frozen=u, relaxing=v, scale=scale, beta=_uniform(generator, 0.0, 2.0)))
    return states


def gradient_campaign(seed: int, n_configs: int = 20, step: float = 1e-6) -> dict:
    """Central differences against backward (wrt W) and scale_grad (wrt S) on random small networks."""
    generator = substream(seed, 'campaign:gradients')
    worst_w, worst_s = 0.0, 0.0
    for k in range(n_configs):
        config = random_network_config(generator)
        net = Mlp(config['layer_dims'], use_bias=config['use_bias'], loss=config['loss'], generator=generator)
        for b in net.biases:
            b.data.copy_(0.1 * torch.randn(b.shape, dtype=DTYPE, generator=generator))
        x = torch.randn(config['batch_size'], config['layer_dims'][0], dtype=DTYPE, generator=generator)
        y = torch.randint(0, config['layer_dims'][-1], (config['batch_size'],), generator=generator)
        error_w = finite_diff_check(net, x, y, step=step, n_coords=50, generator=generator)
        error_s = scale_finite_diff_check(net, x, y, 0, random_layer_states(generator, net), step=step)
        worst_w, worst_s = max(worst_w, error_w), max(worst_s, error_s)
        if error_w >= GRADIENT_TOL or error_s >= GRADIENT_TOL:
            raise VerificationError('finite differences disagree on config %i (W: %.2e, S: %.2e)'
                                    % (k, error_w, error_s),
                                    dict(config, index=k, seed=seed, error_w=error_w, error_s=error_s))
    return {'suite': 'gradients', 'seed': seed, 'configs': n_configs, 'max_rel_error_w': worst_w,
            'max_rel_error_s': worst_s}


# ------------ oracles ------------
def oracle_campaign(seed: int, n_instances: int = 50, n_samples: int = 1_000_000, chunk: int = 100_000) -> dict:
    """
    closest_direction against brute force: the best of n_samples random unit vectors of the
    complement must come within ORACLE_TOL of the returned cosine and never exceed it.
    """
    generator = substream(seed, 'campaign:oracles')
    worst_gap = 0.0
    for k in tqdm(range(n_instances), desc='oracles', disable=None, leave=False):
        n = _randint(generator, 4, 8)
        complement = random_subspace(generator, n, _randint(generator, 1, 3))
        rg = random_subspace(generator, n, _randint(generator, 1, 3))
        d, cosine = closest_direction(complement, rg)
        best = 0.0
        for done in range(0, n_samples, chunk):
            size = min(chunk, n_samples - done)
            coeffs = torch.randn(complement.dim, size, dtype=DTYPE, generator=generator)
            samples = complement.basis @ (coeffs / coeffs.norm(dim=0, keepdim=True))
            best = max(best, float((rg.basis.T @ samples).norm(dim=0).max()))
        direction_cosine = float((rg.basis.T @ d).norm())
        instance = {'complement': complement, 'rg': rg, 'index': k, 'seed': seed, 'cosine': cosine, 'best': best}
        if best > cosine + 1e-12 or cosine - best > ORACLE_TOL or abs(direction_cosine - cosine) > 1e-10:
            raise VerificationError('closest_direction disagrees with sampling on instance %i (%.6f vs %.6f)'
                                    % (k, cosine, best), _dump(instance))
        worst_gap = max(worst_gap, cosine - best)
    return {'suite': 'oracles', 'seed': seed, 'instances': n_instances, 'samples': n_samples,
            'max_cosine_gap': worst_gap}


def cmd_verify(suite: str, seed: int, out_dir: str = None) -> list:
    """
    Run the named suite(s). On a violation the failing instance is written to
    <out_dir>/failing_instance.json before the VerificationError propagates.
    """
    if suite not in SUITES:
        raise InvalidInputError('unknown suite %s, expected one of %s' % (suite, SUITES))
    campaigns = {'theorems': theorem_campaign, 'gradients': gradient_campaign, 'oracles': oracle_campaign}
    names = list(campaigns) if suite == 'all' else [suite]
    summaries = []
    for name in names:
        logger.info('suite %s, seed %i', name, seed)
        try:
            summary = campaigns[name](seed)
        except VerificationError as err:
            if out_dir is not None:
                os.makedirs(out_dir, exist_ok=True)
                path = os.path.join(out_dir, 'failing_instance.json')
                with open(path, 'w') as f:
                    json.dump(err.instance, f, indent=2, default=str)
                logger.error('failing instance written to %s', path)
            raise
        logger.info('suite %s passed: %s', name, summary)
        summaries.append(summary)
    return summaries
