# -*- coding: utf-8 -*-

"""端到端验收：随机实例上的指标复核、镜像源直达声、72 方向 SRP 扫描、0 dB 下回声与噪声对定位的影响、CLI 全链路可复现"""

import math

import numpy as np
import pytest
from scipy.signal import fftconvolve

from config_manager import DEFAULT_CONFIG
from frontend_dsp import run_frontend, srp_phat_doa
from main import main
from pipeline import alpha_mini_geometry
from room_sim import RoomSpec, SourceRole, draw_scene, image_method_rir, place_device, simulate_scene, \
    synthesize_signal
from scoring import kws_metrics, ssl_metrics
from ssl_core import angle_distance
from utils import derive_rng


def test_metrics_match_brute_force_recount():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        truth = rng.integers(0, 2, n)
        truth[0], truth[1] = 1, 0
        pred = rng.integers(0, 2, n)
        result = kws_metrics(truth.tolist(), pred.tolist())
        n_key = n_non = n_fr = n_fa = 0
        for t, p in zip(truth, pred):
            if t:
                n_key += 1
                n_fr += int(not p)
            else:
                n_non += 1
                n_fa += int(p)
        assert result.frr == n_fr / n_key
        assert result.far == n_fa / n_non

        doa_t = rng.integers(1, 361, n).tolist()
        doa_p = rng.integers(1, 361, n).tolist()
        ssl = ssl_metrics(doa_t, doa_p, mae_baseline=20.0)
        errors = [min(abs(a - b), 360 - abs(a - b)) for a, b in zip(doa_t, doa_p)]
        assert list(ssl.errors) == errors
        assert ssl.mae == pytest.approx(sum(errors) / n, rel=1e-12)
        assert ssl.acc5 == sum(e <= 5 for e in errors) / n


@pytest.mark.slow
def test_direct_path_tap_over_random_placements():
    rng = np.random.default_rng(99)
    room = RoomSpec((5.0, 4.0, 3.0), rt60=0.3)
    for _ in range(50):
        src = rng.uniform([0.3, 0.3, 0.3], [4.7, 3.7, 2.7])
        mic = rng.uniform([0.3, 0.3, 0.3], [4.7, 3.7, 2.7])
        d = float(np.linalg.norm(src - mic))
        if d < 0.1:
            continue
        h = image_method_rir(room, src, mic)
        first = int(np.flatnonzero(h)[0])
        assert abs(first - round(d / 343.0 * 16000)) <= 1


@pytest.mark.slow
def test_srp_sweep_in_low_reverb_room():
    rng = np.random.default_rng(5)
    room = RoomSpec((6.0, 6.0, 3.0), rt60=0.2, fractional_delay=True)
    device = place_device(room, [3.0, 3.0, 1.0], 90.0)
    errors = []
    for azimuth in range(5, 361, 5):
        src = device.point_at(azimuth, 1.6, 1.5)
        s = synthesize_signal(SourceRole.SPEECH, 16000, 16000, rng)
        mics = np.array([fftconvolve(s, image_method_rir(room, src, m))[:len(s)]
                         for m in device.mic_positions])
        errors.append(angle_distance(srp_phat_doa(mics, device).argmax(), azimuth))
    assert len(errors) == 72
    assert sum(e <= 5 for e in errors) >= math.ceil(0.9 * 72)
    assert np.mean(errors) <= 5.0


def _acc10(scenario, settings, count):
    hits = 0
    for i in range(count):
        spec = draw_scene(settings, scenario, derive_rng(31, i), i)
        audio, truth = simulate_scene(spec, seed=i)
        doa = run_frontend(audio, alpha_mini_geometry()).doa
        hits += min(angle_distance(doa, t) for t in truth.speech_doas) <= 10
    return hits / count


@pytest.mark.slow
def test_device_echo_hurts_localization_more_than_far_noise():
    settings = dict(DEFAULT_CONFIG["scene_settings"], snr_range=[0.0, 0.0], ser_range=[0.0, 0.0])
    echo = _acc10("echo", settings, 100)
    noise = _acc10("noise", settings, 100)
    assert echo < noise


def _chain(isolated_dir, out):
    sim, front = out / "sim", out / "front"
    assert main(["--workers", "2", "simulate", "--count", "4", "--seed", "21", "--out", str(sim),
                 "--duration", "0.5"]) == 0
    assert main(["--workers", "2", "frontend", "--manifest", str(sim / "manifest.jsonl"),
                 "--out", str(front)]) == 0
    assert main(["score", "--track", "ssl", "--truth", str(sim / "ground_truth.jsonl"),
                 "--labels", str(front / "frontend_labels.csv"), "--out", str(out / "score.json")]) == 0
    return sim, front


@pytest.mark.slow
def test_cli_chain_is_reproducible(isolated_config, tmp_path):
    sim_a, front_a = _chain(isolated_config, tmp_path / "a")
    sim_b, front_b = _chain(isolated_config, tmp_path / "b")
    for wav in sorted((sim_a / "wav").glob("*.wav")):
        assert wav.read_bytes() == (sim_b / "wav" / wav.name).read_bytes()
    for wav in sorted((front_a / "beam").glob("*.wav")):
        assert wav.read_bytes() == (front_b / "beam" / wav.name).read_bytes()
    assert (front_a / "frontend_labels.csv").read_bytes() == (front_b / "frontend_labels.csv").read_bytes()
    assert (tmp_path / "a" / "score.json").read_bytes() == (tmp_path / "b" / "score.json").read_bytes()
