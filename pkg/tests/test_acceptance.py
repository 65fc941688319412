"""End-to-end acceptance gate.

Each test prints a single PASS/FAIL verdict line for its criterion. The
expensive artifacts (pretrained encoder, per-seed attack runs) are shared
through module-scoped fixtures so the whole gate stays inside the runtime
budget of criterion 1.
"""
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

import baple.attack as attack_mod
from baple.evaluation import export_features
from baple.model import ClassPromptSet
from baple.pipeline import execute_run, run_experiment
from baple.triggers import (
    ANCHORS,
    FibaSpec,
    PatchSpec,
    WarpField,
    anchor_rect,
    apply_patch,
    fiba_trigger,
    wanet_trigger,
)
from util import fd_relative_errors

SEEDS = (0, 1, 2)


_CAP = None


@pytest.fixture(autouse=True)
def _capture(capfd):
    global _CAP
    _CAP = capfd
    yield
    _CAP = None


def _verdict(num, ok, detail):
    line = f"[ACCEPTANCE {num}] {'PASS' if ok else 'FAIL'}: {detail}"
    # step outside capture so the verdict lines land in the run log on success
    if _CAP is not None:
        with _CAP.disabled():
            print("\n" + line)
    assert ok, line


def _run(default_config, encoder, mode="baple", seed=0, **sections):
    cfg = replace(default_config, mode=mode, seed=seed)
    for section, fields in sections.items():
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **fields)})
    return execute_run(cfg, encoder=encoder)


def _mean_ba(default_config, encoder, **sections):
    return float(np.mean([
        _run(default_config, encoder, seed=s, **sections).report.ba
        for s in SEEDS]))


@pytest.fixture(scope="module")
def efficacy(default_config, encoder):
    t0 = time.perf_counter()
    baple_runs = {s: _run(default_config, encoder, seed=s) for s in SEEDS}
    clean = {s: _run(default_config, encoder, mode="clean_pl", seed=s).report
             for s in SEEDS}
    wall = time.perf_counter() - t0 + encoder.pretrain_wall
    return baple_runs, clean, wall


def test_criterion_1_attack_efficacy(efficacy):
    baple_runs, clean, wall = efficacy
    ba = float(np.mean([r.report.ba for r in baple_runs.values()]))
    ca = float(np.mean([r.report.ca for r in baple_runs.values()]))
    clean_ca = float(np.mean([r.ca for r in clean.values()]))
    ok = ba >= 0.90 and ca >= clean_ca - 0.05 and wall <= 600
    _verdict(1, ok,
             f"mean BA={ba:.3f} (>=0.90), mean CA={ca:.3f} vs clean-PL "
             f"CA={clean_ca:.3f} (within 0.05), wall={wall:.0f}s (<=600s)")


def test_criterion_2_baseline_ordering(default_config, encoder, efficacy):
    baple_runs, _, _ = efficacy
    baple_ba = float(np.mean([r.report.ba for r in baple_runs.values()]))
    margins = {}
    for mode in ("badnets_pl", "wanet_pl", "fiba_pl"):
        mode_ba = float(np.mean([
            _run(default_config, encoder, mode=mode, seed=s).report.ba
            for s in SEEDS]))
        margins[mode] = baple_ba - mode_ba
    ok = all(m >= 0.05 for m in margins.values())
    detail = ", ".join(f"BA margin over {m}={v:.3f}" for m, v in margins.items())
    _verdict(2, ok, detail + " (each >= 0.05)")


def test_criterion_3_gradient_oracle():
    worst = 0.0
    for seed in range(20):
        rel_p, rel_d = fd_relative_errors(seed)
        worst = max(worst, rel_p, rel_d)
    _verdict(3, worst <= 1e-4,
             f"max relative error vs central differences over 20 instances "
             f"= {worst:.2e} (<= 1e-4)")


def test_criterion_4_budget_and_freeze(default_config, encoder, efficacy,
                                       monkeypatch):
    baple_runs, _, _ = efficacy
    # every step: wrap the update so the budget is checked after each clamp
    violations = []
    real_step = attack_mod.baple_step

    def checked(prompt, delta, grad_p, grad_d, config):
        real_step(prompt, delta, grad_p, grad_d, config)
        if delta is not None:
            eps32 = torch.tensor(config.epsilon).item()
            worst = float(delta.detach().abs().max())
            if worst > eps32:
                violations.append(worst)

    monkeypatch.setattr(attack_mod, "baple_step", checked)
    before = encoder.checksum()
    out = _run(default_config, encoder, seed=0, attack={"epochs": 5})
    steps_ok = not violations
    res = baple_runs[0].attack_result
    final_ok = np.abs(res.noise.delta).max() <= np.float32(res.noise.epsilon)
    frozen_ok = (res.checksum_before == res.checksum_after == before
                 and encoder.checksum() == before
                 and out.attack_result.checksum_after == before)
    ok = steps_ok and final_ok and frozen_ok
    _verdict(4, ok,
             f"per-step budget violations={len(violations)}, final "
             f"max|delta|={np.abs(res.noise.delta).max():.6f} <= eps, "
             f"encoder checksum bit-identical={frozen_ok}")


def test_criterion_5_zero_shot_oracle(encoder, datasets):
    from baple.model import zero_shot_predict

    train, _ = datasets
    prompts = ClassPromptSet(encoder, prompt=None)
    images = train.images[:1000]
    with torch.no_grad():
        img_f = encoder.encode_image(torch.as_tensor(images)).numpy()
        txt_f = prompts.text_features().numpy()
    agree = 0
    for i, img in enumerate(images):
        best, best_score = 0, -np.inf
        for c in range(len(txt_f)):
            dot = float(np.dot(img_f[i].astype(np.float64),
                               txt_f[c].astype(np.float64)))
            cos = dot / (np.linalg.norm(img_f[i].astype(np.float64))
                         * np.linalg.norm(txt_f[c].astype(np.float64)))
            if cos > best_score:
                best, best_score = c, cos
        agree += int(zero_shot_predict(encoder, img, prompts) == best)
    _verdict(5, agree == 1000,
             f"zero_shot_predict agrees with cosine+argmax recomputation on "
             f"{agree}/1000 instances (need 1000)")


def test_criterion_6_ablation_trends(default_config, encoder, efficacy):
    baple_runs, _, _ = efficacy
    both_ba = float(np.mean([r.report.ba for r in baple_runs.values()]))

    eps_bas = [_mean_ba(default_config, encoder, attack={"epsilon": e})
               for e in (0.0, 8 / 255, 32 / 255)]
    eps_ok = eps_bas[0] <= eps_bas[1] and eps_bas[1] <= eps_bas[2]

    rho_bas = [_mean_ba(default_config, encoder, poison={"poison_ratio": r})
               for r in (0.01, 0.05, 0.15)]
    rho_ok = rho_bas[0] <= rho_bas[1] and rho_bas[1] <= rho_bas[2]

    patch_only = _mean_ba(default_config, encoder, attack={"use_noise": False})
    noise_only = _mean_ba(default_config, encoder, attack={"use_patch": False})
    synergy_ok = both_ba >= max(patch_only, noise_only)

    loc_bas = [_mean_ba(default_config, encoder,
                        trigger={"patch_location": loc}) for loc in ANCHORS]
    spread = max(loc_bas) - min(loc_bas)
    loc_ok = spread <= 0.15

    ok = eps_ok and rho_ok and synergy_ok and loc_ok
    _verdict(6, ok,
             f"BA over eps {[round(b, 3) for b in eps_bas]} non-decreasing="
             f"{eps_ok}; over rho {[round(b, 3) for b in rho_bas]} "
             f"non-decreasing={rho_ok}; synergy both={both_ba:.3f} >= "
             f"max(patch={patch_only:.3f}, noise={noise_only:.3f})="
             f"{synergy_ok}; location spread={spread:.3f} (<=0.15)")


def test_criterion_7_trigger_properties():
    rng = np.random.default_rng(123)
    fiba_ok = wanet_ok = patch_ok = True
    zero_fld = WarpField.random(k=4, strength_px=0.0, seed=1)
    for i in range(100):
        x = rng.uniform(0, 1, (32, 32, 3)).astype(np.float32)
        ref = rng.uniform(0, 1, (32, 32, 3)).astype(np.float32)
        # FIBA: host phase reused bitwise, identity at zero blend
        _, _, phases = fiba_trigger(x, FibaSpec(ref, 0.3, 0.15),
                                    return_spectra=True)
        for ch in range(3):
            host = np.angle(np.fft.fftshift(
                np.fft.fft2(x[:, :, ch].astype(np.float64))))
            fiba_ok &= bool(np.array_equal(phases[:, :, ch], host))
        ident = fiba_trigger(x, FibaSpec(ref, 0.0, 0.15))
        fiba_ok &= bool(np.abs(ident.astype(np.float64) - x).max() < 1e-5)
        # WaNet: zero strength is the identity
        wanet_ok &= bool(np.allclose(wanet_trigger(x, zero_fld), x, atol=1e-7))
        # patch locality: nothing changes outside the anchored rectangle
        hp, wp = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        loc = ANCHORS[int(rng.integers(len(ANCHORS)))]
        spec = PatchSpec(rng.uniform(0, 1, (hp, wp, 3)).astype(np.float32), loc)
        out = apply_patch(x, spec)
        r0, c0 = anchor_rect(loc, 32, 32, hp, wp)
        mask = np.zeros((32, 32), bool)
        mask[r0:r0 + hp, c0:c0 + wp] = True
        patch_ok &= bool(np.array_equal(out[~mask], x[~mask]))
    ok = fiba_ok and wanet_ok and patch_ok
    _verdict(7, ok,
             f"over 100 random images each: FIBA phase bitwise + zero-blend "
             f"identity={fiba_ok}, WaNet zero-strength identity={wanet_ok}, "
             f"patch locality={patch_ok}")


def test_criterion_8_determinism(default_config, encoder, tmp_path,
                                 monkeypatch):
    cfg = replace(default_config, mode="baple", seed=0)
    outputs = []
    for run_dir in ("first", "second"):
        monkeypatch.setenv("BAPLE_OUT_ROOT", str(tmp_path / run_dir))
        bundle = run_experiment(cfg, encoder=encoder)
        outputs.append((bundle.path / "metrics.csv").read_bytes())
    ok = outputs[0] == outputs[1]
    _verdict(8, ok, "rerun with identical config+seed reproduces metrics.csv "
                    f"byte-identically={ok}")


def test_criterion_9_feature_shift(default_config, encoder, datasets,
                                   efficacy):
    baple_runs, _, _ = efficacy
    run = baple_runs[0]
    _, test = datasets
    export = export_features(run.victim, test.images, test.labels,
                             run.eval_trigger_fn)
    with torch.no_grad():
        t_star = run.prompts.text_features()[0].numpy()
    bd_cos = float((export["backdoor_features"] @ t_star).mean())
    non_target = test.labels != 0
    clean_cos = float((export["clean_features"][non_target] @ t_star).mean())
    ok = bd_cos > clean_cos
    _verdict(9, ok,
             f"mean cos(backdoored features, target text)={bd_cos:.3f} > "
             f"mean cos(clean non-target features, target text)="
             f"{clean_cos:.3f}")
