"""Acceptance battery: twelve end-to-end checks over the whole package.

Each test prints one PASS/FAIL line (visible with ``pytest -s``); the -v
test listing doubles as the per-criterion scoreboard.  The two training
criteria pin every seed so the determinism criterion can re-run them
bit-exactly.
"""

import math
import time

import numpy as np
import pytest

import helpers
from chirpvit import autodiff as ad
from chirpvit.autodiff import Tensor, concat_rows
from chirpvit.data import (DatasetSplit, TrainData, compute_stats,
                           denormalize_predictions, normalize_labels,
                           preprocess_image, split_dataset)
from chirpvit.evaluate import format_prediction_report, sample_skewness
from chirpvit.model import (LoraLinear, ModelConfig, ViTModel, lora_forward,
                            merge_lora_)
from chirpvit.synth import (SynthConfig, add_noise, exponential_chirp_value,
                            init_spectrogram, render_chirp,
                            sample_chirp_params, sample_rng,
                            spectrogram_to_image, synthesize_sample)
from chirpvit.train import (AdamState, PlateauState, TrainConfig, adamw_step,
                            early_stop_check, lr_schedule_step, train)

# pinned configurations for the training criteria (9-11)
OVERFIT_SYNTH_SEED = 2024
OVERFIT_SEED = 2
OVERFIT_CONFIG = dict(epochs_max=200, batch_size=8, lr=1e-3, weight_decay=0.0,
                      mode="full", seed=OVERFIT_SEED, scheduler_patience=35,
                      scheduler_factor=0.5, early_stop_patience=10_000)
E2E_SYNTH_SEED = 11
E2E_MODEL_SEED = 5
E2E_TRAIN_CONFIG = dict(epochs_max=30, batch_size=32, lr=1e-3,
                        weight_decay=0.01, mode="full", seed=3,
                        scheduler_patience=100, early_stop_patience=100)


def report(num, ok, detail):
    print(f"criterion {num:02d} {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num} failed: {detail}"


# ---- shared synthetic datasets ----------------------------------------------

def _build_memory_dataset(n, synth_seed, image_size=64):
    cfg = SynthConfig(seed=synth_seed)
    images, labels = [], []
    for i in range(n):
        spec, params, _ = synthesize_sample(cfg, i)
        images.append(preprocess_image(spectrogram_to_image(spec), image_size))
        labels.append([params.t0, params.f0, params.f1])
    return np.stack(images), np.asarray(labels, dtype=np.float64)


@pytest.fixture(scope="session")
def overfit_runs():
    """Criterion 9 run plus an identical re-run for the determinism check."""
    x, y = _build_memory_dataset(32, OVERFIT_SYNTH_SEED)
    stats = compute_stats(y)
    yn = normalize_labels(y, stats).astype(np.float32)
    idx = np.arange(32)
    split = DatasetSplit(train_indices=idx, test_indices=idx, seed=0,
                         test_fraction=0.0)
    data = TrainData(train_images=x, train_targets=yn, test_images=x,
                     test_targets=yn, stats=stats, split=split)

    def one_run():
        model = ViTModel(ModelConfig(image_size=64), seed=OVERFIT_SEED)
        t0 = time.perf_counter()
        rep = train(model, data, TrainConfig(**OVERFIT_CONFIG))
        return rep, time.perf_counter() - t0

    return one_run(), one_run()


@pytest.fixture(scope="session")
def e2e_runs():
    """Criterion 10 run (2500 images, 80/20) plus an identical re-run."""
    x, y = _build_memory_dataset(2500, E2E_SYNTH_SEED)
    stats = compute_stats(y)
    yn = normalize_labels(y, stats).astype(np.float32)
    split = split_dataset(2500, 0.2, 42)
    data = TrainData(train_images=x[split.train_indices],
                     train_targets=yn[split.train_indices],
                     test_images=x[split.test_indices],
                     test_targets=yn[split.test_indices],
                     stats=stats, split=split)

    def one_run():
        model = ViTModel(ModelConfig(image_size=64), seed=E2E_MODEL_SEED)
        t0 = time.perf_counter()
        rep = train(model, data, TrainConfig(**E2E_TRAIN_CONFIG))
        return rep, model, time.perf_counter() - t0

    return one_run(), one_run(), data


# ---- 1: synthesis oracle -----------------------------------------------------

def test_criterion_01_synthesis_oracle():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(200):
        # vary the grid too; full-size cases included
        if trial % 10 == 0:
            n_f = n_t = 128
        else:
            n_f = int(rng.integers(24, 129))
            n_t = int(rng.integers(24, 129))
        cfg = SynthConfig(n_f=n_f, n_t=n_t)
        params = sample_chirp_params(cfg, rng)
        spec = render_chirp(init_spectrogram(cfg), params, cfg)
        expected = helpers.brute_force_render(
            params.t0, params.f0, params.f1, params.dt, params.chirp_type,
            n_f, n_t, cfg.T, cfg.f_max, cfg.sigma_spread)
        worst = max(worst, float(np.abs(spec.data - expected).max()))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-9 and elapsed < 60.0,
           f"200 renders vs brute force: max |diff| {worst:.2e}, {elapsed:.1f}s")


# ---- 2: pure-tone limit ------------------------------------------------------

def test_criterion_02_pure_tone_limit():
    ts = np.linspace(0.0, 60.0, 1000)
    f0 = 17.25
    worst = max(abs(exponential_chirp_value(t, f0, f0, 60.0) -
                    math.sin(2.0 * math.pi * f0 * t)) for t in ts)
    report(2, worst < 1e-9,
           f"exponential chirp with f0=f1 vs sin(2pi f0 t): max |diff| {worst:.2e}")


# ---- 3: noise statistics -----------------------------------------------------

def test_criterion_03_noise_statistics():
    cfg = SynthConfig(n_f=1000, n_t=1000, noise_range=(0.2, 0.2))
    spec = init_spectrogram(cfg)
    noisy, eta = add_noise(spec, sample_rng(99, 0), cfg)
    added = noisy.data  # base was all zeros
    mean, std = float(added.mean()), float(added.std())
    ok = eta == 0.2 and abs(mean) < 1e-3 and abs(std - 0.2) < 2e-3
    report(3, ok, f"1e6 entries at eta=0.2: mean {mean:+.2e}, std {std:.5f}")


# ---- 4: smoothing conservation ----------------------------------------------

def test_criterion_04_smoothing_conservation():
    from chirpvit.synth import gaussian_smooth
    rng = np.random.default_rng(13)
    cfg = SynthConfig()
    spec = init_spectrogram(cfg)
    spec.data[:] = rng.random((128, 128)) * 3.0
    before = spec.data.sum()
    smoothed = gaussian_smooth(spec, 1.0)
    rel = abs(smoothed.data.sum() - before) / before
    ident = gaussian_smooth(spec, 0.0)
    ok = rel < 1e-6 and np.array_equal(ident.data, spec.data)
    report(4, ok, f"mass conservation rel err {rel:.2e}; sigma=0 identity holds")


# ---- 5: normalization round trip --------------------------------------------

def test_criterion_05_normalization_round_trip():
    rng = np.random.default_rng(17)
    y = rng.uniform([0, 5, 5], [45, 100, 100], size=(500, 3))
    stats = compute_stats(y)
    yn = normalize_labels(y, stats)
    back = denormalize_predictions(yn, stats)
    rt = float(np.abs(back - y).max())
    mean_dev = float(np.abs(yn.mean(axis=0)).max())
    std_dev = float(np.abs(yn.std(axis=0) - 1.0).max())
    ok = rt < 1e-9 and mean_dev < 1e-9 and std_dev < 1e-9
    report(5, ok, f"round trip {rt:.2e}, mean dev {mean_dev:.2e}, "
                  f"std dev {std_dev:.2e}")


# ---- 6: gradient fidelity ----------------------------------------------------

def _fd_op_table(rng):
    """(name, builder) pairs; a builder returns (input arrays, tensor fn)."""
    def r(*shape):
        return rng.standard_normal(shape)

    def away_from_kink(x):
        x = x.copy()
        x[np.abs(x) < 1e-3] = 0.5
        return x

    w32 = np.arange(1.0, 7.0).reshape(3, 2)
    w23 = np.arange(1.0, 7.0).reshape(2, 3)
    return [
        ("add", lambda: ([r(2, 3), r(2, 3)], lambda a, b: (a + b).sum())),
        ("add_broadcast", lambda: ([r(2, 3), r(3)], lambda a, b: (a + b).sum())),
        ("sub", lambda: ([r(2, 3), r(2, 3)], lambda a, b: ((a - b) * Tensor(w23)).sum())),
        ("mul", lambda: ([r(2, 3), r(2, 3)], lambda a, b: (a * b).sum())),
        ("scalar_ops", lambda: ([r(2, 3)], lambda a: (a * 1.7 + 0.3).sum())),
        ("matmul2d", lambda: ([r(2, 3), r(3, 2)], lambda a, b: (a @ b).sum())),
        ("matmul_batched", lambda: ([r(2, 2, 3), r(2, 3, 2)], lambda a, b: (a @ b).sum())),
        ("transpose", lambda: ([r(2, 3)], lambda a: (a.transpose() * Tensor(w32)).sum())),
        ("reshape", lambda: ([r(2, 3)], lambda a: (a.reshape(3, 2) * Tensor(w32)).sum())),
        ("broadcast_to", lambda: ([r(1, 3)], lambda a: (a.broadcast_to((2, 3)) * Tensor(w23)).sum())),
        ("getitem", lambda: ([r(3, 4)], lambda a: (a[1:3, 0:2] * 3.0).sum())),
        ("sum_axis", lambda: ([r(2, 3)], lambda a: (a.sum(axis=1) * Tensor(np.array([2.0, 3.0]))).sum())),
        ("mean", lambda: ([r(2, 3)], lambda a: a.mean())),
        ("relu", lambda: ([away_from_kink(r(2, 3))], lambda a: (a.relu() * Tensor(w23)).sum())),
        ("tanh", lambda: ([r(2, 3)], lambda a: (a.tanh() * Tensor(w23)).sum())),
        ("gelu", lambda: ([r(2, 3)], lambda a: (a.gelu() * Tensor(w23)).sum())),
        ("softmax", lambda: ([r(2, 3)], lambda a: (a.softmax_lastdim() * Tensor(w23)).sum())),
        ("layer_norm", lambda: ([r(2, 6)], lambda a: (a.layer_norm() * Tensor(np.arange(12.0).reshape(2, 6))).sum())),
        ("concat_rows", lambda: ([r(1, 3), r(2, 3)], lambda a, b: (concat_rows(a, b) * Tensor(np.arange(9.0).reshape(3, 3))).sum())),
    ]


def _op_fd_worst(tensor_fn, arrays):
    """Backward grads vs central differences for one op instance."""
    ins = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    tensor_fn(*ins).backward()
    worst = 0.0
    for k in range(len(arrays)):
        def value_at(a, k=k):
            subs = [Tensor(arrays[j].copy()) for j in range(len(arrays))]
            subs[k] = Tensor(a.copy())
            with ad.no_grad():
                return float(tensor_fn(*subs).data)

        fd = helpers.finite_difference_grad(value_at, arrays[k])
        worst = max(worst, helpers.max_rel_err(ins[k].grad, fd))
    return worst


def test_criterion_06_gradient_fidelity(f64):
    rng = np.random.default_rng(19)
    worst_op, worst = "", 0.0
    for name, build in _fd_op_table(rng):
        for _ in range(50):
            arrays, tensor_fn = build()
            rel = _op_fd_worst(tensor_fn, arrays)
            if rel > worst:
                worst, worst_op = rel, name
    ok_ops = worst < 1e-4

    # full desk model, sampled parameters
    model = ViTModel(ModelConfig(image_size=64), seed=5)
    images = np.random.default_rng(23).random((2, 3, 64, 64))
    sampled = ["patch_embed.W", "layers.0.attn.q.W", "layers.1.attn.v.A",
               "layers.2.ffn.fc1.W", "layers.3.ln2.g", "head.fc2.W",
               "pos_embed"]
    worst_model = 0.0
    prng = np.random.default_rng(29)
    for name in sampled:
        t = model.params[name]
        flat_idx = int(prng.integers(t.data.size))
        model.zero_grad()
        out = model.forward(images)
        loss = (out * out).sum()
        loss.backward()
        analytic = t.grad.ravel()[flat_idx]
        h = 1e-5
        orig = t.data.ravel()[flat_idx]
        t.data.ravel()[flat_idx] = orig + h
        with ad.no_grad():
            up = float((lambda o: (o * o).sum().data)(model.forward(images)))
        t.data.ravel()[flat_idx] = orig - h
        with ad.no_grad():
            dn = float((lambda o: (o * o).sum().data)(model.forward(images)))
        t.data.ravel()[flat_idx] = orig
        fd = (up - dn) / (2 * h)
        denom = max(abs(fd), abs(analytic), 1e-3)
        worst_model = max(worst_model, abs(fd - analytic) / denom)
    ok = ok_ops and worst_model < 1e-3
    report(6, ok, f"per-op FD worst {worst:.2e} ({worst_op}); "
                  f"desk-model FD worst {worst_model:.2e}")


# ---- 7: LoRA correctness -----------------------------------------------------

def test_criterion_07_lora_correctness(f64):
    rng = np.random.default_rng(31)
    worst_zero = 0.0
    for _ in range(20):
        d, r = int(rng.integers(4, 24)), int(rng.integers(1, 6))
        W = Tensor(rng.standard_normal((d, d)))
        b = Tensor(rng.standard_normal(d))
        A = Tensor(rng.standard_normal((r, d)))
        B = Tensor(np.zeros((d, r)))
        layer = LoraLinear(W, b, A, B, scale=2.0 / r)
        x = Tensor(rng.standard_normal((5, d)))
        plain = (x @ W.transpose() + b).data
        worst_zero = max(worst_zero, float(np.abs(lora_forward(x, layer).data - plain).max()))
    ok_zero = worst_zero < 1e-12

    ad.set_default_dtype(np.float32)
    worst_merge = 0.0
    try:
        for i in range(20):
            model = ViTModel(ModelConfig(image_size=32, embed_dim=16,
                                         num_layers=1, lora_rank=2), seed=100 + i)
            for layer in model.layers:
                for ln in (layer.q, layer.v):
                    ln.B.data = np.random.default_rng(i).standard_normal(
                        ln.B.data.shape).astype(np.float32) * 0.1
            images = np.random.default_rng(i).random((2, 3, 32, 32)).astype(np.float32)
            before = model.predict(images)
            merge_lora_(model)
            after = model.predict(images)
            worst_merge = max(worst_merge, float(np.abs(after - before).max()))
    finally:
        ad.set_default_dtype(np.float32)
    ok_merge = worst_merge < 1e-6
    report(7, ok_zero and ok_merge,
           f"zero-B worst {worst_zero:.2e} (64-bit); merge worst "
           f"{worst_merge:.2e} (32-bit), 20 models each")


# ---- 8: optimizer correctness ------------------------------------------------

def test_criterion_08_optimizer_correctness():
    cfg = TrainConfig(lr=1e-3, weight_decay=0.01)
    rng = np.random.default_rng(37)
    theta = rng.standard_normal(6)
    param = theta.copy()
    state = AdamState.fresh(param)
    ref = theta.copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    worst = 0.0
    for t in range(1, 101):
        g = rng.standard_normal(6)
        param = adamw_step(param, g, state, cfg, cfg.lr)
        # independent scalar reference, textbook AdamW
        for j in range(6):
            m[j] = 0.9 * m[j] + 0.1 * g[j]
            v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j]
            mh = m[j] / (1 - 0.9 ** t)
            vh = v[j] / (1 - 0.999 ** t)
            ref[j] -= cfg.lr * cfg.weight_decay * ref[j]
            ref[j] -= cfg.lr * mh / (math.sqrt(vh) + cfg.eps)
        worst = max(worst, float(np.abs(param - ref).max()))
    ok_adam = worst < 1e-10

    # frozen scheduler traces
    st = PlateauState()
    lrs, lr = [], 1.0
    for loss in (1.0, 1.0, 1.0):
        lr = lr_schedule_step(lr, loss, st, 0.5, 2)
        lrs.append(lr)
    trace_flat = lrs == [1.0, 1.0, 0.5]
    st2 = PlateauState()
    lr2 = 1.0
    for loss in (1.0, 1.0, 1.0, 1.0, 1.0):
        lr2 = lr_schedule_step(lr2, loss, st2, 0.5, 2)
    trace_compose = lr2 == 0.25
    st3 = PlateauState()
    lr3 = 1.0
    for loss in (1.0, 0.9, 0.8):
        lr3 = lr_schedule_step(lr3, loss, st3, 0.5, 2)
    trace_improve = lr3 == 1.0
    # frozen early-stop traces
    stops = (not early_stop_check([0.5], 2),
             not early_stop_check([0.5, 0.52], 2),
             early_stop_check([0.5, 0.52, 0.51], 2),
             early_stop_check([0.5, 0.6], 1),
             not early_stop_check([0.5, 0.6, 0.7, 0.4], 3))
    ok_traces = trace_flat and trace_compose and trace_improve and all(stops)
    report(8, ok_adam and ok_traces,
           f"adamw vs scalar reference over 100 steps: worst {worst:.2e}; "
           f"scheduler/early-stop hand traces hold")


# ---- 9: overfit sanity -------------------------------------------------------

def test_criterion_09_overfit_sanity(overfit_runs):
    (rep, wall), _ = overfit_runs
    best = min(rep.train_loss)
    final = rep.train_loss[-1]
    ok = best < 1e-3 and wall < 600.0
    report(9, ok, f"32-sample overfit: best train MSE {best:.2e} "
                  f"(final {final:.2e}), {wall:.0f}s")


# ---- 10: end-to-end desk run -------------------------------------------------

def test_criterion_10_end_to_end(e2e_runs):
    (rep, model, wall), _, data = e2e_runs
    r_final = rep.r_t0[-1]
    # error symmetry on the test split, physical units
    preds = []
    for i in range(0, len(data.test_images), 64):
        preds.append(model.predict(data.test_images[i:i + 64]))
    preds = denormalize_predictions(np.concatenate(preds).astype(np.float64),
                                    data.stats)
    truths = denormalize_predictions(data.test_targets.astype(np.float64),
                                     data.stats)
    errors = preds - truths
    skews = [sample_skewness(errors[:, j]) for j in range(3)]
    skew_ok = all(abs(s) < 0.5 for s in skews)
    # train-loss trend: fitted slope negative and last below first
    tl = np.asarray(rep.train_loss)
    slope = np.polyfit(np.arange(len(tl)), tl, 1)[0]
    trend_ok = slope < 0 and tl[-1] < tl[0]
    ok = r_final >= 0.90 and skew_ok and trend_ok and wall < 3600.0
    report(10, ok, f"2500-image run: r(t0) {r_final:.4f}, skew "
                   f"({skews[0]:+.2f}, {skews[1]:+.2f}, {skews[2]:+.2f}), "
                   f"train {tl[0]:.3f}->{tl[-1]:.3f}, {wall/60:.1f}min")


# ---- 11: determinism ---------------------------------------------------------

def test_criterion_11_determinism(overfit_runs, e2e_runs):
    (rep_a, _), (rep_b, _) = overfit_runs
    (rep_c, _, _), (rep_d, _, _), _ = e2e_runs
    same_overfit = (rep_a.train_loss == rep_b.train_loss and
                    rep_a.test_loss == rep_b.test_loss)
    same_e2e = (rep_c.train_loss == rep_d.train_loss and
                np.array_equal(rep_c.r_t0, rep_d.r_t0, equal_nan=True))
    report(11, same_overfit and same_e2e,
           "re-running criteria 9 and 10 with the same seeds reproduces "
           "the loss and metric traces bit-exactly")


# ---- 12: report fidelity -----------------------------------------------------

def test_criterion_12_report_fidelity():
    text = format_prediction_report(np.array([[44.91, 26.78, 23.65]]),
                                    np.array([[43.33, 24.33, 19.14]]))
    lines = text.splitlines()
    want_pred = ("  Predicted: A chirp pattern was observed starting at time "
                 "44.91 with a start frequency of 26.78 Hz and an end "
                 "frequency of 23.65 Hz.")
    want_real = ("  Real: A chirp pattern was observed starting at time "
                 "43.33 with a start frequency of 24.33 Hz and an end "
                 "frequency of 19.14 Hz.")
    ok = lines[2] == want_pred and lines[3] == want_real
    report(12, ok, "sample-1 predicted and real lines reproduced byte-exactly")
