import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bitmol.batch import MASK_ID, tokenize
from bitmol.model import BitConfig, init_params
from bitmol.numcore import DTYPE, OptState
from bitmol.pretrain import (CorruptionConfig, Pools, PretrainConfig, TrainState, combined_loss, corrupt_coords,
                             draw_samples, loss_atom, loss_pos, make_pretrain_batch, mask_atoms, n_masked,
                             pretrain_step, run_pretraining, sample_format)

CFG = BitConfig.tiny()


@pytest.fixture(scope="module")
def pools(small_corpus):
    return Pools.from_entries(small_corpus, CFG.d_max, CFG.degree_cap)


def small_pcfg(**kw):
    base = dict(steps=20, warmup=2, peak_lr=1e-3, n_molecules=2, n_pockets=2, n_complexes=2, seed=4)
    return PretrainConfig(**{**base, **kw})


def test_config_validation():
    with pytest.raises(ValueError):
        CorruptionConfig(sigma=-1)
    with pytest.raises(ValueError):
        CorruptionConfig(mask_rate=1.0)
    with pytest.raises(ValueError):
        CorruptionConfig(p_2d=0.5, p_3d=0.5, p_2d3d=0.5)


def test_corrupt_zero_sigma(pools):
    s = pools.complex[0]
    coords, eps, scope = corrupt_coords(s, 0.0, np.random.default_rng(0))
    assert np.array_equal(coords, s.coords)
    assert eps.shape == (len(scope), 3) and np.abs(eps).sum() > 0


def test_complex_pocket_untouched(pools):
    rng = np.random.default_rng(1)
    for s in pools.complex:
        coords, _, scope = corrupt_coords(s, 0.2, rng)
        untouched = np.ones(len(s), dtype=bool)
        untouched[scope] = False
        assert np.array_equal(coords[untouched], s.coords[untouched])
        assert (scope < s.p_vnode).all() and (scope > s.m_vnode).all()


def test_mask_counts():
    assert n_masked(20, 0.15) == 3
    assert n_masked(3, 0.15) == 1
    assert n_masked(1, 0.15) == 1


def test_mask_atoms_scope(pools):
    rng = np.random.default_rng(2)
    for s in pools.complex + pools.molecule:
        tokens, pos, orig = mask_atoms(s, 0.15, rng)
        assert len(pos) == n_masked(len(s.scope), 0.15)
        assert set(pos) <= set(s.scope)
        assert (tokens[pos] == MASK_ID).all()
        assert np.array_equal(orig, s.tokens[pos])
        keep = np.setdiff1d(np.arange(len(s)), pos)
        assert np.array_equal(tokens[keep], s.tokens[keep])


def test_mask_split_flag(pools):
    s = pools.pocket[0]
    rng = np.random.default_rng(3)
    hits = {"mask": 0, "other": 0}
    for _ in range(300):
        tokens, pos, orig = mask_atoms(s, 0.15, rng, split=True)
        hits["mask"] += int((tokens[pos] == MASK_ID).sum())
        hits["other"] += int((tokens[pos] != MASK_ID).sum())
    frac = hits["mask"] / (hits["mask"] + hits["other"])
    assert 0.75 < frac < 0.85


def test_sample_format():
    cfg = CorruptionConfig()
    rng = np.random.default_rng(0)
    assert all(sample_format("complex", cfg, rng)[1] for _ in range(200))
    draws = [sample_format("molecule", cfg, rng) for _ in range(10_000)]
    for flags in [(True, False), (False, True), (True, True)]:
        assert abs(draws.count(flags) / 10_000 - 1 / 3) < 0.02
    a = [sample_format("molecule", cfg, np.random.default_rng(9)) for _ in range(5)]
    b = [sample_format("molecule", cfg, np.random.default_rng(9)) for _ in range(5)]
    assert a == b


def test_loss_examples():
    eps = torch.tensor([[[1.0, 2.0, 0.0], [0.0, 0.0, 3.0], [9.0, 9.0, 9.0]]], dtype=DTYPE)
    mask = torch.tensor([[True, True, False]])
    assert float(loss_pos(eps, eps, mask)) == 0.0
    assert float(loss_pos(torch.zeros_like(eps), eps, mask)) == (5.0 + 9.0) / 2
    assert float(loss_pos(eps, eps, torch.zeros_like(mask))) == 0.0
    logits = torch.zeros(4, 119, dtype=DTYPE)
    assert abs(float(loss_atom(logits, torch.tensor([1, 6, 7, 8]))) - math.log(119)) < 1e-12
    sharp = torch.full((1, 119), -1e4, dtype=DTYPE)
    sharp[0, 6] = 1e4
    assert float(loss_atom(sharp, torch.tensor([6]))) < 1e-12
    one = torch.tensor(1.0, dtype=DTYPE)
    assert float(combined_loss(one, torch.tensor(0.5, dtype=DTYPE), 0.2)) == 1.1


def test_batch_composition(pools):
    pcfg = small_pcfg(n_molecules=3, n_pockets=1, n_complexes=2)
    samples, rngs = draw_samples(pools, pcfg, step=0)
    kinds = [s.kind for s in samples]
    assert kinds == ["molecule"] * 3 + ["pocket"] + ["complex"] * 2
    assert len(rngs) == len(samples)
    none = small_pcfg(include_pockets=False)
    assert "pocket" not in {s.kind for s in draw_samples(pools, none, 0)[0]}


def test_pretrain_batch_invariants(pools):
    pcfg = small_pcfg(n_molecules=4, n_pockets=4, n_complexes=4)
    samples, rngs = draw_samples(pools, pcfg, step=3)
    pb = make_pretrain_batch(samples, CorruptionConfig(), rngs)
    batch = pb.batch
    assert not (pb.corrupted & ~batch.is_atom).any()
    b_idx, t_idx = pb.mask_pos
    assert batch.is_atom[b_idx, t_idx].all()
    for b, s in enumerate(samples):
        if s.kind == "complex":
            assert not pb.corrupted[b, s.p_vnode:].any()
            assert not ((b_idx == b) & (t_idx >= s.p_vnode)).any()
            assert bool(batch.has3d[b])
        if not bool(batch.has3d[b]):
            assert not pb.corrupted[b].any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_loss_decomposition(pools, seed):
    pcfg = small_pcfg(seed=seed)
    ccfg = CorruptionConfig()
    state = TrainState(init_params(CFG, seed % 7), OptState())
    _, rec = pretrain_step(state, pools, CFG, ccfg, pcfg)
    assert abs(rec["l_total"] - (rec["l_pos"] + 0.2 * rec["l_atom"])) <= 1e-12


def test_disabled_terms(pools):
    state = TrainState(init_params(CFG, 0), OptState())
    _, rec = pretrain_step(state.clone(), pools, CFG, CorruptionConfig(), small_pcfg(enable_coord_loss=False))
    assert rec["l_pos"] == 0.0 and rec["l_total"] == 0.2 * rec["l_atom"]
    _, rec = pretrain_step(state.clone(), pools, CFG, CorruptionConfig(), small_pcfg(enable_token_loss=False))
    assert rec["l_atom"] == 0.0 and rec["l_total"] == rec["l_pos"]


def run(pools, n, state=None, pcfg=None):
    state = state or TrainState(init_params(CFG, 0), OptState(), seed=4)
    return state, run_pretraining(state, pools, CFG, CorruptionConfig(), pcfg or small_pcfg(), n)


def test_determinism(pools):
    _, a = run(pools, 4)
    _, b = run(pools, 4)
    assert a == b


def test_resume_matches_uninterrupted(pools):
    _, full = run(pools, 6)
    state, first = run(pools, 3)
    resumed = state.clone()
    _, rest = run(pools, 3, state=resumed)
    assert [r["l_total"] for r in first + rest] == [r["l_total"] for r in full]


def test_fixed_corruption_repeats(pools):
    pcfg = small_pcfg(fixed_corruption=True, n_molecules=0, n_pockets=0, n_complexes=len(pools.complex),
                      include_molecules=False, include_pockets=False)
    s0, r0 = draw_samples(pools, pcfg, 0)
    s1, r1 = draw_samples(pools, pcfg, 1)
    by_id = lambda samples, rngs: {s.id: make_pretrain_batch([s], CorruptionConfig(), [g]).noise
                                   for s, g in zip(samples, rngs)}
    a, b = by_id(s0, r0), by_id(s1, r1)
    for key in set(a) & set(b):
        assert torch.equal(a[key], b[key])


def test_lr_uses_next_step(pools):
    _, recs = run(pools, 3)
    assert recs[0]["lr"] == pytest.approx(1e-3 / 2)
    assert recs[1]["lr"] == pytest.approx(1e-3)
