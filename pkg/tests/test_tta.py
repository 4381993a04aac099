import numpy as np
import pytest

from comet.config import RunConfig, TrainConfig, TtaConfig
from comet.data import SyntheticSpec, standardize, synthesize, windows
from comet.errors import DataError
from comet.ndmath import AdamW, finite_diff_check
from comet.train import train
from comet.tta import (adaptation_loss_and_grads, contrastive_loss,
                       pseudo_label, refresh_coreset, stream_series,
                       stream_windows, tta_step)
from comet.vq import ActivationSet, build_memory_bank


def stream_config(**tta_kw):
    tta = TtaConfig(enabled=True, **tta_kw)
    cfg = RunConfig(
        patch_sizes=[2, 4], strides=[1, 2], embed_dim=8, core_dim=4,
        codebook_size=8, window_length=40, window_stride=40,
        n_neighbors=3, n_density=3,
        train=TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3, seed=42),
        tta=tta,
    )
    cfg.validate()
    return cfg


def trained_fixture(seed=0, train_length=800, test_length=240, **tta_kw):
    spec = SyntheticSpec(n_vars=2, train_length=train_length,
                         test_length=test_length, seed=seed)
    ds = standardize(synthesize(spec))
    config = stream_config(**tta_kw)
    ckpt = train(ds.train.values, config)
    return ckpt, ds, config


class TestPseudoLabel:
    def test_training_data_relabels_normal(self):
        ckpt, ds, config = trained_fixture()
        from comet.model import encode
        from comet.patching import extract_patches
        from comet.vq import nearest_entries
        wins, _ = windows(ds.train.values, config.window_length,
                          config.window_stride)
        # phase 2 saw the training windows, so every index is activated
        n_val = int(len(wins) * config.train.validation_fraction)
        for w in wins[: len(wins) - n_val]:
            for k, scale in enumerate(config.scales):
                emb, _ = encode(extract_patches(w, scale), ckpt.state.params[k])
                idx, _ = nearest_entries(emb, ckpt.state.codebooks[k].entries)
                labels = pseudo_label(k, idx, ckpt.activations)
                assert labels.sum() == 0

    def test_never_activated_is_abnormal(self):
        acts = ActivationSet(1)
        acts.record(0, 2)
        labels = pseudo_label(0, np.array([2, 0, 2, 5]), acts)
        assert labels.tolist() == [0, 1, 0, 1]

    def test_matches_set_scan(self):
        rng = np.random.default_rng(1)
        acts = ActivationSet(1)
        seen = set(rng.integers(0, 30, 12).tolist())
        for i in seen:
            acts.record(0, i)
        idx = rng.integers(0, 30, (4, 7))
        got = pseudo_label(0, idx, acts)
        want = np.array([[0 if int(v) in seen else 1 for v in row] for row in idx])
        assert np.array_equal(got, want)


class TestContrastiveLoss:
    def test_two_identical_same_label(self):
        z = np.array([[1.0, 0.0], [1.0, 0.0]])
        loss, grad = contrastive_loss(z, np.array([0, 0]), temperature=1.0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_all_labels_distinct(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(4, 3))
        loss, grad = contrastive_loss(z, np.array([0, 1, 2, 3]), 0.5)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros_like(z))

    def test_batch_of_one_is_zero_by_convention(self):
        loss, grad = contrastive_loss(np.ones((1, 3)), np.array([0]), 1.0)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros((1, 3)))

    def test_gradient_passes_finite_difference(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(6, 4))
        labels = np.array([0, 1, 0, 1, 0, 1])

        def loss_fn(params):
            return contrastive_loss(params[0], labels, 0.7)[0]

        _, grad = contrastive_loss(z, labels, 0.7)
        assert finite_diff_check(loss_fn, [z], [grad], h=1e-6) <= 1e-4

    def test_invariant_to_positive_rescaling(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(5, 3))
        labels = np.array([0, 0, 1, 1, 0])
        base, _ = contrastive_loss(z, labels, 0.3)
        scaled = z.copy()
        scaled[2] *= 37.5
        scaled[0] *= 0.004
        got, _ = contrastive_loss(scaled, labels, 0.3)
        assert abs(got - base) <= 1e-9

    def test_separating_gradient_direction(self):
        # two close embeddings with different labels are pushed apart
        z = np.array([[1.0, 0.05], [1.0, -0.05], [-1.0, 0.0]])
        labels = np.array([0, 1, 0])
        loss, grad = contrastive_loss(z, labels, 0.5)
        assert loss > 0.0
        step = z - 0.01 * grad
        after, _ = contrastive_loss(step, labels, 0.5)
        assert after < loss


class TestTtaStep:
    def test_disabled_is_bit_identical(self):
        ckpt, ds, config = trained_fixture()
        config.tta.enabled = False
        before = {k: v.copy() for k, v in ckpt.state.named_arrays().items()}
        opt = AdamW(lr=0.01)
        wins, _ = windows(ds.test.values, config.window_length,
                          config.window_stride)
        report = tta_step(ckpt.state, opt, wins[:1], ckpt.activations, config)
        assert not report.stepped
        for name, arr in ckpt.state.named_arrays().items():
            assert np.array_equal(arr, before[name])

    def test_vacuous_objective_skips_update(self):
        # zero contrastive weight and no pseudo-normal patches: no step
        ckpt, ds, config = trained_fixture(contrastive_weight=0.0)
        empty = ActivationSet(len(config.scales))  # nothing ever activated
        before = {k: v.copy() for k, v in ckpt.state.named_arrays().items()}
        opt = AdamW(lr=0.01)
        wins, _ = windows(ds.test.values, config.window_length,
                          config.window_stride)
        report, grads = adaptation_loss_and_grads(ckpt.state, wins[:1], empty, config)
        assert grads is None and report.n_normal == 0
        tta_step(ckpt.state, opt, wins[:1], empty, config)
        for name, arr in ckpt.state.named_arrays().items():
            assert np.array_equal(arr, before[name])

    def test_near_converged_batch_moves_at_most_lr_scale(self):
        ckpt, ds, config = trained_fixture()
        lr = 0.001
        config.tta.learning_rate = lr
        opt = AdamW(lr=lr, weight_decay=config.train.weight_decay)
        wins, _ = windows(ds.train.values, config.window_length,
                          config.window_stride)
        before = {k: v.copy() for k, v in ckpt.state.named_arrays().items()}
        report = tta_step(ckpt.state, opt, wins[:2], ckpt.activations, config)
        assert report.stepped and report.n_normal > 0
        for name, arr in ckpt.state.named_arrays().items():
            biggest = np.max(np.abs(arr - before[name]))
            bound = 2.0 * lr * (1.0 + np.max(np.abs(before[name])))
            assert biggest <= bound, name

    def test_adaptation_gradients_pass_finite_difference(self):
        # flat-mean objective over pseudo-normal patches, stop-gradient form
        ckpt, ds, config = trained_fixture()
        config.tta.contrastive_weight = 0.0
        wins, _ = windows(ds.train.values, config.window_length,
                          config.window_stride)
        window = wins[0]
        state = ckpt.state
        _, grads = adaptation_loss_and_grads(state, [window], ckpt.activations, config)

        from comet.model import decode, encode
        from comet.patching import extract_patches
        from comet.vq import nearest_entries
        frozen = []
        n_norm = 0
        for k, scale in enumerate(config.scales):
            patches = extract_patches(window, scale)
            emb, _ = encode(patches, state.params[k])
            idx, quant = nearest_entries(emb, state.codebooks[k].entries)
            mask = (pseudo_label(k, idx, ckpt.activations) == 0)
            n_norm += int(mask.sum())
            frozen.append((patches, emb, idx, quant, mask))
        names = sorted(state.named_arrays())
        base = state.named_arrays()

        def loss_fn(param_list):
            arrays = dict(zip(names, param_list))
            trial = state.copy()
            trial.load_named_arrays({n: arrays[n].copy() for n in names})
            total = 0.0
            for k in range(len(config.scales)):
                patches, base_emb, idx, base_quant, mask = frozen[k]
                emb, _ = encode(patches, trial.params[k])
                dec_in = emb + (base_quant - base_emb)
                recon = decode(dec_in, trial.params[k])
                m = mask[:, :, None]
                rec = np.sum(m * (recon - patches.values) ** 2)
                rows = trial.codebooks[k].entries[idx]
                cb = np.sum(m * (rows - base_emb) ** 2)
                cm = np.sum(m * (base_quant - emb) ** 2)
                total += (rec + config.alpha * cb + config.beta * cm) / n_norm
            return float(total)

        params = [base[n] for n in names]
        analytic = [grads[n] for n in names]
        assert finite_diff_check(loss_fn, params, analytic, h=1e-5) <= 1e-4

    def test_full_objective_with_contrastive_passes_finite_difference(self):
        # validates the scatter of flat contrastive gradients back into the
        # per-scale backward passes, jointly with the normal-patch terms
        ckpt, ds, config = trained_fixture()
        config.tta.contrastive_weight = 0.7
        wins, _ = windows(ds.train.values, config.window_length,
                          config.window_stride)
        window = wins[0]
        state = ckpt.state
        gamma, tau = config.tta.contrastive_weight, config.tta.temperature
        _, grads = adaptation_loss_and_grads(state, [window], ckpt.activations, config)

        from comet.model import decode, encode
        from comet.patching import extract_patches
        from comet.vq import nearest_entries
        frozen = []
        flat_labels = []
        n_norm = 0
        for k, scale in enumerate(config.scales):
            patches = extract_patches(window, scale)
            emb, _ = encode(patches, state.params[k])
            idx, quant = nearest_entries(emb, state.codebooks[k].entries)
            labels = pseudo_label(k, idx, ckpt.activations)
            mask = labels == 0
            n_norm += int(mask.sum())
            frozen.append((patches, emb, idx, quant, mask))
            flat_labels.append(labels.reshape(-1))
        flat_labels = np.concatenate(flat_labels)
        names = sorted(state.named_arrays())
        base = state.named_arrays()

        def loss_fn(param_list):
            arrays = dict(zip(names, param_list))
            trial = state.copy()
            trial.load_named_arrays({n: arrays[n].copy() for n in names})
            total = 0.0
            flat = []
            for k in range(len(config.scales)):
                patches, base_emb, idx, base_quant, mask = frozen[k]
                emb, _ = encode(patches, trial.params[k])
                flat.append(emb.reshape(-1, emb.shape[-1]))
                m = mask[:, :, None]
                dec_in = emb + (base_quant - base_emb)
                recon = decode(dec_in, trial.params[k])
                rec = np.sum(m * (recon - patches.values) ** 2)
                rows = trial.codebooks[k].entries[idx]
                cb = np.sum(m * (rows - base_emb) ** 2)
                cm = np.sum(m * (base_quant - emb) ** 2)
                total += (rec + config.alpha * cb + config.beta * cm) / n_norm
            con, _ = contrastive_loss(np.concatenate(flat), flat_labels, tau)
            return float(total) + gamma * con

        params = [base[n] for n in names]
        analytic = [grads[n] for n in names]
        assert finite_diff_check(loss_fn, params, analytic, h=1e-5) <= 1e-4


class TestRefreshCoreset:
    def test_unchanged_codebook_identical_bank(self):
        ckpt, _, config = trained_fixture()
        refreshed = refresh_coreset(ckpt.bank, ckpt.state)
        for a, b in zip(refreshed.scales, ckpt.bank.scales):
            assert np.array_equal(a.entry_ids, b.entry_ids)
            assert np.array_equal(a.vectors, b.vectors)
            assert np.array_equal(a.local_scales, b.local_scales)

    def test_translation_preserves_scales(self):
        ckpt, _, config = trained_fixture()
        shift = np.full(config.embed_dim, 0.37)
        for cb in ckpt.state.codebooks:
            cb.entries += shift
        refreshed = refresh_coreset(ckpt.bank, ckpt.state)
        for a, b in zip(refreshed.scales, ckpt.bank.scales):
            assert np.allclose(a.vectors, b.vectors + shift)
            assert np.allclose(a.local_scales, b.local_scales, atol=1e-9)

    def test_matches_rebuild_from_scratch(self):
        ckpt, _, config = trained_fixture()
        for cb in ckpt.state.codebooks:
            cb.entries *= 1.1
        refreshed = refresh_coreset(ckpt.bank, ckpt.state)
        rebuilt = build_memory_bank(ckpt.state.codebooks, ckpt.activations,
                                    config.n_density)
        for a, b in zip(refreshed.scales, rebuilt.scales):
            assert np.array_equal(a.entry_ids, b.entry_ids)
            assert np.array_equal(a.vectors, b.vectors)
            assert np.array_equal(a.local_scales, b.local_scales)

    def test_cardinality_preserved(self):
        ckpt, _, _ = trained_fixture()
        for cb in ckpt.state.codebooks:
            cb.entries[:] = np.random.default_rng(5).normal(size=cb.entries.shape)
        refreshed = refresh_coreset(ckpt.bank, ckpt.state)
        assert refreshed.total_entries() == ckpt.bank.total_entries()


class TestStreamDriver:
    def test_single_batch_stream_matches_frozen(self):
        ckpt, ds, config = trained_fixture(test_length=40)
        from comet.scoring import score_series
        frozen = score_series(ckpt.state, ckpt.bank, ds.test.values, config)
        adaptive = stream_series(ds.test.values, ckpt.state.copy(), ckpt.bank,
                                 ckpt.activations, config)
        assert np.array_equal(frozen.score, adaptive.score)

    def test_first_batch_unaffected_second_may_differ(self):
        ckpt, ds, config = trained_fixture(test_length=80, learning_rate=0.05)
        wins, offs = windows(ds.test.values, config.window_length,
                             config.window_stride)
        on = stream_windows(wins, list(offs), ckpt.state.copy(), ckpt.bank,
                            ckpt.activations, config)
        config_off = stream_config()
        config_off.tta.enabled = False
        off = stream_windows(wins, list(offs), ckpt.state.copy(), ckpt.bank,
                             ckpt.activations, config_off)
        assert np.array_equal(on[0].combined, off[0].combined)
        assert not np.array_equal(on[1].combined, off[1].combined)

    def test_replay_is_bit_identical(self):
        ckpt, ds, config = trained_fixture(test_length=160, learning_rate=0.02)
        a = stream_series(ds.test.values, ckpt.state.copy(), ckpt.bank,
                          ckpt.activations, config)
        b = stream_series(ds.test.values, ckpt.state.copy(), ckpt.bank,
                          ckpt.activations, config)
        assert np.array_equal(a.score, b.score)

    def test_truncation_equivalence(self):
        # scoring batch i in the stream equals scoring it after adapting on
        # batches 1..i-1 only
        ckpt, ds, config = trained_fixture(test_length=160, learning_rate=0.02)
        wins, offs = windows(ds.test.values, config.window_length,
                             config.window_stride)
        full = stream_windows(wins, list(offs), ckpt.state.copy(), ckpt.bank,
                              ckpt.activations, config)
        for i in range(len(wins)):
            prefix = stream_windows(wins[: i + 1], list(offs[: i + 1]),
                                    ckpt.state.copy(), ckpt.bank,
                                    ckpt.activations, config)
            assert np.array_equal(prefix[i].combined, full[i].combined)

    def test_activations_frozen_during_stream(self):
        ckpt, ds, config = trained_fixture(test_length=160, learning_rate=0.05)
        before = [set(s) for s in ckpt.activations.per_scale]
        stream_series(ds.test.values, ckpt.state.copy(), ckpt.bank,
                      ckpt.activations, config)
        assert [set(s) for s in ckpt.activations.per_scale] == before

    def test_out_of_order_stream_rejected(self):
        ckpt, ds, config = trained_fixture(test_length=160)
        wins, offs = windows(ds.test.values, config.window_length,
                             config.window_stride)
        with pytest.raises(DataError):
            stream_windows([wins[1], wins[0]], [int(offs[1]), int(offs[0])],
                           ckpt.state.copy(), ckpt.bank, ckpt.activations,
                           config)
