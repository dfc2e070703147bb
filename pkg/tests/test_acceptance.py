"""Acceptance gate: one test per headline criterion.

Each test prints a single PASS/FAIL line on the real stdout (bypassing
pytest capture) so the gate can be read off the run log directly. The
desk-scale end-to-end test (criterion 5) trains a reduced diffusion model
on a 1,000-record toy corpus and takes the bulk of the runtime.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from sssd_ecg import analysis, data, diffusion, evaluate, gan, leads, model
from sssd_ecg import s4 as s4mod
from sssd_ecg import training
from sssd_ecg.cli import run_command


def report(criterion: int, ok: bool, text: str) -> None:
    line = f"[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}: {text}"
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. Lead algebra exactness


def test_criterion_01_lead_algebra():
    rng = np.random.default_rng(1)
    t0 = time.time()
    frames = rng.normal(size=(1000, 8, 100))
    twelve = leads.reconstruct_12_leads(frames)
    worst = 0.0
    for rec in twelve:
        ok, resid = leads.check_lead_consistency(rec, tol=1e-6)
        worst = max(worst, resid)
        if not ok:
            break
    elapsed = time.time() - t0
    report(1, worst <= 1e-6 and elapsed < 5.0,
           f"1000 frames, max residual {worst:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. S4 correctness


def test_criterion_02_s4_kernel_and_gradients():
    rng = np.random.default_rng(2)
    gen = torch.Generator().manual_seed(2)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 17))
        length = int(rng.integers(2, 257))
        params = s4mod.hippo_init(n, generator=gen)
        abar, bbar = s4mod.discretize(params)
        kernel = s4mod.ssm_kernel(abar, bbar, params.C, length)
        impulse = torch.zeros(length, dtype=torch.float64)
        impulse[0] = 1.0
        oracle = s4mod.ssm_recurrence_oracle(
            impulse, abar, bbar, params.C, torch.zeros((), dtype=torch.float64))
        worst = max(worst, float((kernel - oracle).abs().max()))
    kernel_ok = worst <= 1e-5

    # central finite differences on C, D, log_dt at N = 4, L = 32
    n, length = 4, 32
    a_mat, b_vec = s4mod.hippo_matrix(n)
    u = torch.randn(length, dtype=torch.float64,
                    generator=torch.Generator().manual_seed(3))
    c0 = torch.randn(n, dtype=torch.float64,
                     generator=torch.Generator().manual_seed(4))
    d0 = torch.tensor(0.6, dtype=torch.float64)
    log_dt0 = torch.tensor(np.log(0.03), dtype=torch.float64)

    def loss_fn(c, d, log_dt):
        abar, bbar = s4mod.bilinear_discretize(a_mat, b_vec,
                                               torch.exp(log_dt))
        k = s4mod.ssm_kernel(abar, bbar, c, length)
        y = s4mod.fft_causal_conv(k, u) + d * u
        return (y ** 2).sum()

    c = c0.clone().requires_grad_(True)
    d = d0.clone().requires_grad_(True)
    log_dt = log_dt0.clone().requires_grad_(True)
    loss_fn(c, d, log_dt).backward()

    h = 1e-6
    worst_rel = 0.0

    def check(analytic, plus, minus):
        nonlocal worst_rel
        fd = (float(plus.detach()) - float(minus.detach())) / (2 * h)
        rel = abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-8)
        worst_rel = max(worst_rel, rel)

    for i in range(n):
        delta = torch.zeros_like(c0)
        delta[i] = h
        check(float(c.grad[i]), loss_fn(c0 + delta, d0, log_dt0),
              loss_fn(c0 - delta, d0, log_dt0))
    check(float(d.grad), loss_fn(c0, d0 + h, log_dt0),
          loss_fn(c0, d0 - h, log_dt0))
    check(float(log_dt.grad), loss_fn(c0, d0, log_dt0 + h),
          loss_fn(c0, d0, log_dt0 - h))
    grad_ok = worst_rel <= 1e-4
    report(2, kernel_ok and grad_ok,
           f"kernel max err {worst:.2e}, grad rel err {worst_rel:.2e}")


# ---------------------------------------------------------------------------
# 3. Diffusion core


class _ExactEps(torch.nn.Module):
    """Oracle that inverts the forward process for a known x0."""

    def __init__(self, x0, sched):
        super().__init__()
        self.x0 = x0
        self.ab = torch.as_tensor(sched.alphas_bar, dtype=torch.float32)

    def forward(self, x_t, t, c):
        ab = self.ab[t].view(-1, 1, 1)
        return (x_t - torch.sqrt(ab) * self.x0) / torch.sqrt(1.0 - ab)


def test_criterion_03_diffusion_core():
    sched = diffusion.build_schedule(200, 0.0001, 0.02)
    endpoints_ok = sched.betas[0] == 0.0001 and sched.betas[-1] == 0.02

    moments_ok = True
    x0 = torch.full((1, 1, 1), 2.0)
    gen = torch.Generator().manual_seed(5)
    n = 10_000
    for t in (0, sched.T // 2, sched.T - 1):
        eps = torch.randn(n, 1, 1, generator=gen)
        xt = diffusion.forward_sample(x0.expand(n, 1, 1), t, eps, sched)
        want_mean = np.sqrt(sched.alphas_bar[t]) * 2.0
        want_var = 1.0 - sched.alphas_bar[t]
        se_mean = np.sqrt(want_var / n)
        se_var = want_var * np.sqrt(2.0 / (n - 1))
        if abs(float(xt.mean()) - want_mean) > 3 * se_mean + 1e-12:
            moments_ok = False
        if abs(float(xt.var()) - want_var) > 3 * se_var + 1e-12:
            moments_ok = False

    sched50 = diffusion.build_schedule(50, 0.0001, 0.02)
    planted = torch.sin(torch.linspace(0, 12.0, 128)).view(1, 1, 128)
    oracle = _ExactEps(planted, sched50)
    out = diffusion.ancestral_sample(oracle, torch.zeros(1, 1), sched50,
                                     (1, 1, 128), seed=6)
    rms = float(torch.sqrt(((out - planted) ** 2).mean()))
    report(3, endpoints_ok and moments_ok and rms <= 1e-3,
           f"endpoints exact, moments 3-sigma, oracle RMS {rms:.2e}")


# ---------------------------------------------------------------------------
# 4. Model mechanics


def test_criterion_04_model_mechanics():
    cfg = model.SssdEcgConfig(n_residual_layers=2, residual_channels=16,
                              skip_channels=16, n_labels=4, out_leads=8,
                              length=64, label_embed_dim=16, s4_state_dim=4)
    torch.manual_seed(7)
    net = model.SssdEcg(cfg)
    gen = torch.Generator().manual_seed(8)
    x = torch.randn(2, 8, 64, generator=gen)
    t = torch.tensor([1, 3])
    c = torch.rand(2, 4, generator=gen)
    shape_ok = net(x, t, c).shape == x.shape
    det_ok = torch.equal(net(x, t, c), net(x, t, c))

    sched = diffusion.build_schedule(10, 0.01, 0.1)
    loss = diffusion.denoising_loss(net, x, c, sched,
                                    torch.Generator().manual_seed(9))
    loss.backward()
    grads_ok = all(p.grad is not None and float(p.grad.norm()) > 0
                   for p in net.parameters())

    def fixed_loss():
        return diffusion.denoising_loss(net, x, c, sched,
                                        torch.Generator().manual_seed(10))

    before = float(fixed_loss().detach())
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    opt.zero_grad()
    fixed_loss().backward()
    opt.step()
    after = float(fixed_loss().detach())
    report(4, shape_ok and det_ok and grads_ok and after < before,
           f"shape/determinism/gradients ok, loss {before:.4f}->{after:.4f}")


# ---------------------------------------------------------------------------
# 5. Desk-scale end-to-end (the headline test)


def test_criterion_05_desk_scale_end_to_end(tmp_path):
    t0 = time.time()
    corpus = tmp_path / "corpus"
    run_dir = tmp_path / "run"
    copy_dir = tmp_path / "copy"
    eval_dir = tmp_path / "eval"
    assert run_command(["make-toy", "--out", str(corpus), "--n", "1000",
                        "--labels", "4", "--length", "1000",
                        "--seed", "0"]) == 0
    assert run_command(["train", "--data", str(corpus), "--out", str(run_dir),
                        "--steps", "3000", "--seed", "1",
                        "--desk-scale"]) == 0
    assert run_command(["synth-copy", "--checkpoint",
                        str(run_dir / "checkpoint.pt"), "--data", str(corpus),
                        "--seed", "2", "--out", str(copy_dir)]) == 0
    assert run_command(["evaluate", "--real", str(corpus), "--synth",
                        str(copy_dir / "dataset"), "--out", str(eval_dir),
                        "--seed", "3", "--desk-scale"]) == 0
    table = json.loads((eval_dir / "metrics.json").read_text())

    # label-shuffled synthetic control
    synth = data.load_dataset(copy_dir / "dataset")
    real = data.load_dataset(corpus)
    rng = np.random.default_rng(4)
    perm = rng.permutation(len(synth))
    shuffled = data.Dataset(records=synth.records,
                            labels=[synth.labels[i] for i in perm],
                            vocabulary=synth.vocabulary)
    cfg = evaluate.ClassifierConfig.desk()
    clf, _ = evaluate.train_classifier(cfg, shuffled.split("train"),
                                       shuffled.split("val"), seed=5)
    real_test = real.split("test")
    control = evaluate.macro_auroc(
        evaluate.predict_dataset(clf, real_test, cfg),
        real_test.label_array())

    elapsed = (time.time() - t0) / 60.0
    ok = (table["synth_real"] >= 0.75 and table["real_synth"] >= 0.75
          and table["real_real"] >= 0.90 and control <= 0.60)
    report(5, ok,
           f"real->real {table['real_real']:.3f}, "
           f"real->synth {table['real_synth']:.3f}, "
           f"synth->real {table['synth_real']:.3f}, "
           f"shuffled control {control:.3f}, {elapsed:.0f} min")


# ---------------------------------------------------------------------------
# 6. Interpolation endpoints


class _CondLinear(torch.nn.Module):
    def __init__(self):
        super().__init__()
        torch.manual_seed(11)
        self.proj = torch.nn.Linear(4, 8, bias=False)

    def forward(self, x_t, t, c):
        return 0.1 * self.proj(c).unsqueeze(-1).expand(-1, -1, x_t.shape[-1])


def test_criterion_06_interpolation_endpoints():
    sched = diffusion.build_schedule(10, 0.01, 0.1)
    net = _CondLinear()
    a = np.array([1, 0, 0, 0], dtype=np.float32)
    b = np.array([0, 0, 1, 1], dtype=np.float32)
    req = analysis.InterpolationRequest(a=a, b=b, seed=12)
    outs = analysis.interpolate_conditions(net, req, sched, length=64,
                                           n_leads=8)
    direct_a = diffusion.ancestral_sample(
        net, torch.from_numpy(a).unsqueeze(0), sched, (1, 8, 64),
        12)[0].numpy()
    direct_b = diffusion.ancestral_sample(
        net, torch.from_numpy(b).unsqueeze(0), sched, (1, 8, 64),
        12)[0].numpy()
    endpoints_ok = (np.array_equal(outs[0], direct_a)
                    and np.array_equal(outs[-1], direct_b))
    mid_err = float(np.abs(outs[2] - 0.5 * (outs[0] + outs[-1])).max())
    report(6, endpoints_ok and mid_err <= 1e-6,
           f"endpoints bit-identical, midpoint linearity err {mid_err:.2e}")


# ---------------------------------------------------------------------------
# 7. Evaluation metrics


def test_criterion_07_metrics():
    from test_evaluate import SMALL, brute_force_auroc

    rng = np.random.default_rng(13)
    auroc_ok = True
    for _ in range(50):
        n = int(rng.integers(4, 16))
        k = int(rng.integers(1, 4))
        truth = (rng.random((n, k)) < 0.5).astype(np.float32)
        scores = np.round(rng.random((n, k)) * 4) / 4
        try:
            fast = evaluate.macro_auroc(scores, truth)
        except ValueError:
            continue
        if fast != pytest.approx(brute_force_auroc(scores, truth), abs=1e-12):
            auroc_ok = False

    torch.manual_seed(14)
    clf = evaluate.XResNet1d(SMALL, 3)
    clf.eval()
    record = rng.normal(size=(128, 12)).astype(np.float32)
    got = evaluate.predict_record(clf, record, SMALL)
    probs = []
    with torch.no_grad():
        for off in (0, 32, 64):
            crop = torch.from_numpy(record[off:off + 64].T[None])
            probs.append(torch.sigmoid(clf(crop))[0].numpy())
    crop_err = float(np.abs(got - np.mean(probs, axis=0)).max())
    report(7, auroc_ok and crop_err <= 1e-6,
           f"AUROC oracle exact on 50 instances, crop-average err {crop_err:.2e}")


# ---------------------------------------------------------------------------
# 8. Beat pipeline


def test_criterion_08_beats():
    fs = 100
    t = np.arange(1000) / fs
    x = np.zeros(1000)
    centers = np.arange(0.5, 10.0, 1.0)
    for c in centers:
        x += 1.5 * np.exp(-0.5 * ((t - c) / 0.02) ** 2)
    x += np.random.default_rng(15).normal(0, 0.02, 1000)
    peaks = analysis.detect_r_peaks(x, fs)
    detect_ok = len(peaks) == len(centers) and all(
        abs(p - round(c * fs)) <= 2 for p, c in zip(peaks, centers))

    beats = analysis.segment_beats(x, peaks)
    window_ok = beats.beats.shape[1] == 80 and beats.n_beats == len(centers)
    # a peak too close to the record edge must be dropped
    window_ok = window_ok and analysis.segment_beats(x, [10, 980]).n_beats == 0
    rng = np.random.default_rng(16)
    order_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        band = analysis.beat_quantiles(
            analysis.BeatMatrix(rng.normal(size=(n, 80)), "II"))
        if not ((band.q25 <= band.median).all()
                and (band.median <= band.q75).all()):
            order_ok = False
    report(8, detect_ok and window_ok and order_ok,
           f"{len(peaks)} peaks within +/-2 samples, 80-sample windows, "
           "quantile ordering on 1000 matrices")


# ---------------------------------------------------------------------------
# 9. GAN baselines


def test_criterion_09_gan():
    torch.manual_seed(17)
    wg = gan.WaveGanGenerator(gan.WaveGanConfig.desk(n_labels=4))
    p2p = gan.Pulse2PulseGenerator(gan.Pulse2PulseConfig.desk(n_labels=4))
    wg.eval()
    p2p.eval()
    c = torch.rand(2, 4)
    shape_ok = (wg(torch.rand(2, 1000) * 2 - 1, c).shape == (2, 8, 1000)
                and p2p(torch.rand(2, 8, 1000) * 2 - 1, c).shape
                == (2, 8, 1000))

    cbn = gan.ConditionalBatchNorm1d(6, 4)
    with torch.no_grad():
        cbn.embed.weight.zero_()
        cbn.embed.bias.zero_()
    cbn.train()
    xb = torch.randn(8, 6, 32, generator=torch.Generator().manual_seed(18))
    plain = torch.nn.functional.batch_norm(xb, None, None, training=True,
                                           eps=cbn.bn.eps)
    cbn_ok = torch.allclose(cbn(xb, torch.rand(8, 4)), plain, atol=1e-6)

    disc = gan.Discriminator(model_size=8, in_leads=8, length=1000)
    wg.train()
    g_loss = ((disc(wg(torch.rand(2, 1000) * 2 - 1, c)) - 1.0) ** 2).mean()
    g_loss.backward()
    grads_ok = all(p.grad is not None and float(p.grad.norm()) > 0
                   for p in wg.parameters())

    ds = data.make_toy_corpus(64, 4, 1000, seed=19)
    drops = []
    for seed in range(5):
        torch.manual_seed(100 + seed)
        gnet, dnet = training.build_gan("wavegan",
                                        gan.WaveGanConfig.desk(n_labels=4))
        curves = training.train_gan(gnet, dnet, ds, steps=200,
                                    seed=seed, lr=1e-4, batch_size=8)
        d = curves["d_loss"]
        drops.append(np.mean(d[-20:]) - d[0])
    median_drop = float(np.median(drops))
    report(9, shape_ok and cbn_ok and grads_ok and median_drop < 0,
           f"shapes/CBN/gradients ok, median d-loss drop {median_drop:.4f} "
           "over 200 steps x 5 seeds")


# ---------------------------------------------------------------------------
# 10. Persistence


def test_criterion_10_persistence(tmp_path):
    ds = data.make_toy_corpus(12, 3, 128, seed=20)
    d1, d2 = tmp_path / "d1", tmp_path / "d2"
    data.save_dataset(ds, d1)
    data.save_dataset(data.load_dataset(d1), d2)
    dataset_ok = all(
        (d1 / n).read_bytes() == (d2 / n).read_bytes()
        for n in ("signals.f32le", "labels.u8"))

    cfg = model.SssdEcgConfig(n_residual_layers=1, residual_channels=16,
                              skip_channels=16, n_labels=3, out_leads=8,
                              length=128, label_embed_dim=16, s4_state_dim=4)
    torch.manual_seed(21)
    net = model.SssdEcg(cfg)
    sched = diffusion.build_schedule(8, 0.01, 0.1)
    ckpt = tmp_path / "ckpt.pt"
    model.save_checkpoint(ckpt, net, cfg, sched, ds.vocabulary)
    state, _ = model.load_checkpoint(ckpt)
    torch.manual_seed(22)
    net2 = model.SssdEcg(cfg)
    net2.load_state_dict(state)
    ckpt_ok = model.checkpoint_hash(net) == model.checkpoint_hash(net2)

    # config.resolved.json reproduces a generation run bit-for-bit
    corpus = tmp_path / "corpus"
    run_dir = tmp_path / "run"
    assert run_command(["make-toy", "--out", str(corpus), "--n", "12",
                        "--labels", "3", "--length", "128",
                        "--seed", "23"]) == 0
    small_cfg = tmp_path / "small.json"
    small_cfg.write_text(json.dumps(
        {"diffusion.T": 6, "s4.N": 4, "model.n_residual_layers": 1,
         "model.residual_channels": 16, "model.batch_size": 4}))
    assert run_command(["train", "--data", str(corpus), "--out",
                        str(run_dir), "--steps", "2", "--seed", "24",
                        "--config", str(small_cfg)]) == 0
    first = tmp_path / "gen1"
    assert run_command(["generate", "--checkpoint",
                        str(run_dir / "checkpoint.pt"), "--labels", "TOY0",
                        "--n", "2", "--seed", "25", "--out",
                        str(first)]) == 0
    resolved = json.loads((first / "config.resolved.json").read_text())
    replay_dir = tmp_path / "gen2"
    resolved["args"]["out"] = str(replay_dir)
    replay_cfg = tmp_path / "replay.json"
    replay_cfg.write_text(json.dumps(resolved))
    assert run_command(["generate", "--config", str(replay_cfg), "--out",
                        str(replay_dir)]) == 0
    replay_ok = (
        (first / "dataset" / "signals.f32le").read_bytes()
        == (replay_dir / "dataset" / "signals.f32le").read_bytes()
        and (first / "dataset" / "labels.u8").read_bytes()
        == (replay_dir / "dataset" / "labels.u8").read_bytes())
    report(10, dataset_ok and ckpt_ok and replay_ok,
           "dataset round-trip, checkpoint round-trip, config replay all "
           "bit-exact")
