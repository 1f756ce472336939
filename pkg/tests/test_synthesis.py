import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipole_coupling import synthesis
from dipole_coupling.errors import ConstraintError, DomainError, SolverError
from dipole_coupling.geometry import DipoleSpec, pack_upper, unpack_upper, wavelength
from dipole_coupling.nn import checkpoint
from dipole_coupling.pclstm import TwoPortConfig, TwoPortPrediction, predict_two_port, train_two_port
from dipole_coupling.synthesis import (N_ENTRY_FEATURES, Dataset, SpacingConstraints,
                                       SynthesisBundle, SynthesisConfig,
                                       SynthesizedMatrix, assemble_prior, gen_dataset,
                                       induced_emf_mutual, normalized_rms, pair_accepted,
                                       row_features, rows_to_packed, sample_spacings,
                                       synthesize_array, train_synthesis)

F = 2.4e9
LAM = wavelength(F)
DIP = DipoleSpec(0.0625, 0.0005, 4)
C = SpacingConstraints()


@pytest.fixture(scope="module")
def tiny_twoport():
    ds = gen_dataset(16, 2, DIP, F, 3)
    cfg = TwoPortConfig(epochs=80, hidden=8, layers=2, pann_epochs=200, pann_grid=8,
                        pann_hidden=(32,))
    return train_two_port(ds, cfg)[0]


# -- constraints and sampling ------------------------------------------------------

def test_feasible_and_infeasible_pairs():
    assert pair_accepted(0.35, 0.35, C)
    assert not pair_accepted(0.1, 0.3, C)
    assert not C.violations([0.35] * 9)


def test_constraint_validation():
    with pytest.raises(DomainError):
        SpacingConstraints(0.5, 0.1)
    with pytest.raises(DomainError):
        SpacingConstraints(0.1, 0.5, 0.4)


def _feasible_fraction(c):
    """Area of {d1 + d2 >= s} inside the proposal square, over its area."""
    a, b, s = c.d1_min, c.d1_max, c.pair_sum_min
    w = b - a
    cut = min(max(s - 2 * a, 0.0), 2 * w)
    below = cut ** 2 / 2 if cut <= w else w ** 2 - (2 * w - cut) ** 2 / 2
    return 1 - below / w ** 2


@pytest.mark.parametrize("c", [C, SpacingConstraints(0.1, 0.5, 0.7),
                               SpacingConstraints(0.05, 0.6, 0.6)])
def test_acceptance_rate_matches_area(c):
    rng = np.random.default_rng(0)
    d = rng.uniform(c.d1_min, c.d1_max, size=(10_000, 2))
    rate = np.mean([pair_accepted(x, y, c) for x, y in d])
    p = _feasible_fraction(c)
    assert abs(rate - p) <= 4 * np.sqrt(p * (1 - p) / 10_000)
    if c == C:
        assert p == pytest.approx(0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_sampled_layouts_satisfy_constraints(m, seed):
    sp = sample_spacings(m, C, np.random.default_rng(seed))
    assert len(sp) == m - 1
    assert C.violations(sp) == []


def test_sampler_rejects_single_element():
    with pytest.raises(DomainError):
        sample_spacings(1, C, np.random.default_rng(0))


# -- datasets -----------------------------------------------------------------------

def test_single_sample_dataset():
    ds = gen_dataset(1, 3, DIP, F, 1)
    assert len(ds) == 1
    z = ds.samples[0].zport
    assert z.shape == (3, 3) and np.array_equal(z, z.T)


def test_dataset_deterministic_and_worker_independent():
    a = gen_dataset(6, 4, DIP, F, 9)
    b = gen_dataset(6, 4, DIP, F, 9, workers=3)
    assert a.to_jsonl() == b.to_jsonl()
    assert gen_dataset(6, 4, DIP, F, 10).to_jsonl() != a.to_jsonl()
    assert sorted(a.train_indices + a.holdout_indices) == list(range(6))


def test_dataset_jsonl_round_trip(tmp_path):
    ds = gen_dataset(5, 3, DIP, F, 2)
    path = tmp_path / "ds.jsonl"
    ds.save(path)
    back = Dataset.load(path)
    assert back.to_jsonl() == ds.to_jsonl()
    line = json.loads(path.read_text().splitlines()[0])
    assert set(line) == {"geometry", "z_port", "meta"}
    assert len(line["z_port"]) == 3 * 4
    for s, t in zip(ds.samples, back.samples):
        assert np.array_equal(s.zport, t.zport)


def test_dataset_rejects_bad_lines_and_sizes():
    with pytest.raises(DomainError):
        Dataset.from_jsonl("{not json\n")
    with pytest.raises(DomainError):
        gen_dataset(0, 3, DIP, F)


def test_failed_solves_are_logged_and_kept(monkeypatch, caplog):
    real = synthesis.solve_ports
    calls = []

    def flaky(g, points=8):
        calls.append(g)
        if len(calls) == 2:
            raise SolverError("forced failure", condition=1e15)
        return real(g, points)

    monkeypatch.setattr(synthesis, "solve_ports", flaky)
    with caplog.at_level(logging.WARNING):
        ds = gen_dataset(3, 3, DIP, F, 4)
    assert len(ds) == 2 and len(ds.skipped) == 1
    assert ds.skipped[0]["draw"] == 1 and "forced" in ds.skipped[0]["reason"]
    assert any("skipped" in r.message for r in caplog.records)
    back = Dataset.from_jsonl(ds.to_jsonl())
    assert len(back.skipped) == 1 and len(back) == 2


# -- prior assembly ----------------------------------------------------------------

def _fake_predictions(n):
    return [TwoPortPrediction(70 + 10 * i + 40j, 20 - 3 * i - 15j, 72 + 10 * i + 41j, [])
            for i in range(n)]


def test_prior_entries_and_exact_zeros_beyond_cutoff():
    sp_l = np.array([0.35, 0.3, 0.45, 0.25, 0.4])
    preds = _fake_predictions(len(sp_l))
    z, _ = assemble_prior(None, sp_l * LAM, DIP, F, C, predictions=preds)
    pos = np.concatenate([[0], np.cumsum(sp_l)])
    m = len(pos)
    for p in range(m):
        nbr = [i for i in (p - 1, p) if 0 <= i < m - 1]
        near = min(nbr, key=lambda i: sp_l[i])
        assert z[p, p] == 0.5 * (preds[near].z11 + preds[near].z22)
        for q in range(p + 1, m):
            if pos[q] - pos[p] > C.cutoff:
                assert z[p, q] == 0 and z[q, p] == 0
            else:
                assert q == p + 1 and z[p, q] == preds[p].z12
    assert np.array_equal(z, z.T)


def test_prior_with_trained_model(tiny_twoport):
    sp = sample_spacings(8, C, np.random.default_rng(1)) * LAM
    z, _ = assemble_prior(tiny_twoport, sp, DIP, F, C)
    pos = np.concatenate([[0], np.cumsum(sp)]) / LAM
    far = np.abs(pos[:, None] - pos[None, :]) > C.cutoff
    assert np.all(z[far] == 0)
    assert np.all(z[~far] != 0)


# -- features ------------------------------------------------------------------------

def test_induced_emf_textbook_values():
    # half-wave dipoles side by side
    assert induced_emf_mutual(1e-7, 0.5) == pytest.approx(73.13 + 42.54j, abs=0.05)
    assert induced_emf_mutual(0.5, 0.5) == pytest.approx(-12.53 - 29.93j, abs=0.01)
    assert induced_emf_mutual(1.0, 0.5) == pytest.approx(4.01 + 17.74j, abs=0.01)


def test_row_features_shapes_and_packing():
    sp = np.array([0.35, 0.3, 0.45])
    prior = unpack_upper(np.arange(1.0, 21.0))
    x, pr, lengths = row_features(sp, prior, 0.5, 10.0)
    assert x.shape == (4, 4, N_ENTRY_FEATURES)
    assert list(lengths) == [4, 3, 2, 1]
    assert np.array_equal(rows_to_packed(pr), prior[np.triu_indices(4)])
    assert np.all(x[3, 1:] == 0)
    assert x[0, 0, 6] == 1 and x[0, 1, 6] == 0


def test_padding_does_not_change_valid_outputs(tiny_twoport):
    rng = np.random.default_rng(0)
    from dipole_coupling.nn.core import Dense
    from dipole_coupling.nn.lstm import StackedLSTM
    b = SynthesisBundle(tiny_twoport, StackedLSTM.init(rng, N_ENTRY_FEATURES, 6, 2),
                        Dense.init(rng, 6, 2), 50.0, DIP, F, C, SynthesisConfig())
    x = rng.normal(size=(1, 7, N_ENTRY_FEATURES))
    pr = rng.normal(size=(1, 7)) + 1j * rng.normal(size=(1, 7))
    full = b.forward(x, pr)
    padded = x.copy()
    padded[:, 4:] = 0
    np.testing.assert_array_equal(b.forward(padded, pr)[:, :4], full[:, :4])


# -- synthesis ----------------------------------------------------------------------

def test_two_elements_reduce_to_two_port_prediction(tiny_twoport):
    b = SynthesisBundle(tiny_twoport, None, None, 1.0, DIP, F, C, SynthesisConfig())
    d = 0.27 * LAM
    out = synthesize_array(b, [d])
    ref = predict_two_port(tiny_twoport, d, DIP.length_m, DIP.radius_m, F, DIP.segments)
    assert np.array_equal(out.matrix(), ref.reconstructed)


def test_constraint_violation_lists_offenders():
    b = SynthesisBundle(None, None, None, 1.0, DIP, F, C, SynthesisConfig())
    with pytest.raises(ConstraintError) as exc:
        synthesize_array(b, np.array([0.35, 0.05, 0.2, 0.35]) * LAM)
    kinds = {(k, i) for k, i, _ in exc.value.offending}
    assert ("spacing", 1) in kinds and ("pair_sum", 1) in kinds and ("pair_sum", 0) in kinds
    assert "spacing[1]" in str(exc.value)


def test_untrained_bundle_and_foreign_dipole_rejected(tiny_twoport):
    b = SynthesisBundle(tiny_twoport, None, None, 1.0, DIP, F, C, SynthesisConfig())
    with pytest.raises(DomainError):
        synthesize_array(b, [0.35 * LAM] * 3)
    with pytest.raises(DomainError):
        synthesize_array(b, [0.35 * LAM] * 3, f_hz=3e9)


def test_synthesized_matrix_exports():
    z = unpack_upper(np.arange(1.0, 31.0))
    u = z[np.triu_indices(5)]
    sm = SynthesizedMatrix(u.real.copy(), u.imag.copy())
    assert sm.elements == 5 and len(sm.packed) == 30
    assert np.array_equal(sm.matrix(), z) and np.array_equal(sm.packed, pack_upper(z))
    rows = sm.to_csv().splitlines()
    assert rows[0] == "index,re_or_im,value"
    assert rows[1].startswith("0,re,") and rows[16].startswith("15,im,")
    doc = json.loads(sm.to_json())
    assert doc["elements"] == 5 and len(doc["z_port"]) == 5


def test_normalized_rms():
    t = np.array([3.0, 4.0])
    assert normalized_rms(t, t) == 0
    assert normalized_rms(np.zeros(2), t) == pytest.approx(1.0)


# -- second-stage training ---------------------------------------------------------

SMALL = SynthesisConfig(epochs=600, hidden=16, learning_rate=1e-2, final_learning_rate=1e-4)


def test_single_sample_memorised(tiny_twoport):
    ds = gen_dataset(1, 5, DIP, F, 5, holdout_fraction=0.0)
    b, hists = train_synthesis({5: ds}, tiny_twoport, SMALL)
    assert hists[5][-1]["loss"] < 1e-4
    s = ds.samples[0]
    pred = synthesize_array(b, s.geometry.spacings_m).packed
    assert normalized_rms(pred, pack_upper(s.zport)) < 1e-2


def test_synthesis_training_deterministic_and_round_trips(tiny_twoport):
    data = {3: gen_dataset(4, 3, DIP, F, 6), 5: gen_dataset(4, 5, DIP, F, 7)}
    cfg = SynthesisConfig(epochs=20, hidden=8)
    b1, h1 = train_synthesis(data, tiny_twoport, cfg)
    b2, h2 = train_synthesis(data, tiny_twoport, cfg)
    assert h1 == h2 and set(h1) == {3, 5} and len(h1[3]) == 20
    doc = json.loads(checkpoint.dumps(b1.to_doc(epoch=20)))
    back = SynthesisBundle.from_doc(doc)
    sp = data[5].samples[0].geometry.spacings_m
    assert np.array_equal(synthesize_array(back, sp).packed, synthesize_array(b1, sp).packed)


def test_mixed_dipoles_rejected(tiny_twoport):
    other = DipoleSpec(0.06, 0.0005, 4)
    data = {3: gen_dataset(2, 3, DIP, F, 6), 4: gen_dataset(2, 4, other, F, 7)}
    with pytest.raises(DomainError):
        train_synthesis(data, tiny_twoport, SynthesisConfig(epochs=1))


def _smoothed(values, window=20):
    v = np.asarray(values)
    return np.convolve(v, np.ones(window) / window, mode="valid")


@pytest.mark.slow
def test_full_run_curves_smoothly_decreasing(synth_run):
    loss = [h["loss"] for h in synth_run["histories"][10]]
    sm = _smoothed(loss)
    assert np.all(np.diff(sm) <= 1e-12 * sm[:-1])
