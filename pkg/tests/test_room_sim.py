# -*- coding: utf-8 -*-

import math

import numpy as np
import pytest

from scipy.signal import fftconvolve

from audio_core import MultiChannelAudio, mono, write_wav
from config_manager import DEFAULT_CONFIG
from errors import DegenerateSignalError, GeometryError, ParameterError
from room_sim import (
    RoomSpec,
    SceneSpec,
    SourceRole,
    SourceSpec,
    draw_scene,
    image_method_rir,
    load_source_signal,
    load_scene_spec,
    mix_at_ratio,
    place_device,
    quantize_azimuth,
    ratio_gain,
    save_scene_spec,
    schroeder_rt60,
    simulate_scene,
)


def test_free_field_single_tap():
    room = RoomSpec((6.0, 5.0, 3.0), rt60=0.0)
    src = np.array([1.0, 2.5, 1.5])
    mic = np.array([3.0, 2.5, 1.5])
    h = image_method_rir(room, src, mic)
    assert np.count_nonzero(h) == 1
    assert int(np.argmax(h)) == 93 == round(2.0 / 343.0 * 16000)
    assert h[93] == pytest.approx(1.0 / (4.0 * math.pi * 2.0))


def test_fractional_delay_peak_near_direct_path():
    room = RoomSpec((6.0, 5.0, 3.0), rt60=0.0, fractional_delay=True)
    h = image_method_rir(room, [1.0, 2.5, 1.5], [3.0, 2.5, 1.5])
    assert abs(int(np.argmax(np.abs(h))) - 2.0 / 343.0 * 16000) <= 1.0


@pytest.mark.parametrize("rt60", [0.2, 0.5, 0.8])
def test_schroeder_rt60_close_to_target(rt60):
    room = RoomSpec((5.0, 4.0, 3.0), rt60=rt60)
    h = image_method_rir(room, [1.5, 1.2, 1.4], [3.5, 2.5, 1.2])
    estimate = schroeder_rt60(h, room.sample_rate)
    assert 0.8 * rt60 <= estimate <= 1.2 * rt60


def test_rir_geometry_errors():
    room = RoomSpec((4.0, 4.0, 3.0), rt60=0.3)
    with pytest.raises(GeometryError):
        image_method_rir(room, [5.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    with pytest.raises(GeometryError):
        image_method_rir(room, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    with pytest.raises(ParameterError):
        RoomSpec((4.0, -1.0, 3.0), rt60=0.3)


def test_quantize_azimuth():
    assert quantize_azimuth(0.0) == 360
    assert quantize_azimuth(0.4) == 360
    assert quantize_azimuth(359.6) == 360
    assert quantize_azimuth(90.4) == 90
    assert quantize_azimuth(-90.0) == 270


def test_device_mic_spacing_any_heading():
    room = RoomSpec((5.0, 5.0, 3.0), rt60=0.3)
    for heading in (0.0, 37.0, 90.0, 211.0):
        device = place_device(room, [2.5, 2.5, 1.0], heading)
        mics = device.mic_positions
        for i in range(4):
            assert np.linalg.norm(mics[i] - mics[(i + 1) % 4]) == pytest.approx(0.037)


def test_device_heading_rotation():
    room = RoomSpec((5.0, 5.0, 3.0), rt60=0.3)
    origin = np.array([2.5, 2.5, 1.0])
    a = place_device(room, origin, 90.0)
    b = place_device(room, origin, 0.0)
    rot = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose((a.mic_positions - origin) @ rot.T, b.mic_positions - origin)
    # heading 0 时正前方是世界 +x
    assert b.doa_of(origin + [1.5, 0.0, 0.0]) == 90
    assert a.doa_of(origin + [0.0, 1.5, 0.0]) == 90
    assert a.doa_of(origin + [1.5, 0.0, 0.0]) == 360


def test_device_against_wall():
    room = RoomSpec((5.0, 5.0, 3.0), rt60=0.3)
    with pytest.raises(GeometryError):
        place_device(room, [0.01, 2.5, 1.0])


def test_ratio_gain_cases(rng):
    target = rng.standard_normal(16000)
    noise = 3.0 * rng.standard_normal(16000)
    for ratio in (0.0, 10.0, -5.0):
        scaled = ratio_gain(target, noise, ratio) * noise
        measured = 10 * np.log10(np.mean(target ** 2) / np.mean(scaled ** 2))
        assert measured == pytest.approx(ratio, abs=1e-9)
    with pytest.raises(DegenerateSignalError):
        ratio_gain(target, np.zeros(16000), 0.0)


def test_mix_at_ratio_measured(rng):
    target = MultiChannelAudio(rng.standard_normal((2, 16000)), 16000)
    noise = MultiChannelAudio(rng.standard_normal((2, 16000)), 16000)
    mixed = mix_at_ratio(target, noise, -5.0)
    residual = mixed.samples[0] - target.samples[0]
    measured = 10 * np.log10(np.mean(target.samples[0] ** 2) / np.mean(residual ** 2))
    assert measured == pytest.approx(-5.0, abs=0.01)


def _scene(room, device, with_echo, duration=0.5):
    front = device.point_at(90.0, 2.0, 1.5)
    sources = [SourceSpec(SourceRole.SPEECH, front)]
    if with_echo:
        sources.append(SourceSpec(SourceRole.ECHO, level_db=0.0))
    return SceneSpec(room, device, tuple(sources), duration, "t")


def test_speech_only_scene_straight_ahead():
    room = RoomSpec((6.0, 6.0, 3.0), rt60=0.3)
    device = place_device(room, [3.0, 2.0, 1.0], 90.0)
    audio, truth = simulate_scene(_scene(room, device, with_echo=False), seed=5)
    assert truth.speech_doas == (90,)
    assert truth.scenario_tag == "Speech only"
    assert audio.samples.shape == (6, 8000)
    assert not np.any(audio.refs())
    assert np.any(audio.mics())


def test_echo_scene_refs_carry_dry_echo():
    room = RoomSpec((6.0, 6.0, 3.0), rt60=0.3)
    device = place_device(room, [3.0, 2.0, 1.0], 90.0)
    audio, truth = simulate_scene(_scene(room, device, with_echo=True), seed=5)
    refs = audio.refs()
    assert np.any(refs[0])
    assert np.array_equal(refs[0], refs[1])
    assert truth.scenario_tag == "Speech+Echo"
    assert truth.levels == {'ser_db': 0.0}


def test_simulation_is_deterministic():
    room = RoomSpec((6.0, 6.0, 3.0), rt60=0.3)
    device = place_device(room, [3.0, 2.0, 1.0], 90.0)
    spec = _scene(room, device, with_echo=True)
    a, _ = simulate_scene(spec, seed=11)
    b, _ = simulate_scene(spec, seed=11)
    c, _ = simulate_scene(spec, seed=12)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_scene_requires_target():
    room = RoomSpec((6.0, 6.0, 3.0), rt60=0.3)
    device = place_device(room, [3.0, 2.0, 1.0], 90.0)
    spec = SceneSpec(room, device, (SourceSpec(SourceRole.ECHO, level_db=0.0),), 0.5)
    with pytest.raises(ParameterError):
        simulate_scene(spec, seed=0)


def test_draw_scene_and_serialization(tmp_path):
    settings = dict(DEFAULT_CONFIG["scene_settings"], duration_s=0.25)
    spec = draw_scene(settings, "noise_echo", np.random.default_rng(3), 7)
    assert spec.scene_id == "000007"
    assert spec.scenario_tag == "Speech+Noise+Echo"
    assert spec.is_conformant()
    for s in spec.sources:
        if s.role in (SourceRole.SPEECH, SourceRole.NOISE):
            assert 1.5 <= spec.source_distance(s) <= 5.0

    path = tmp_path / "scene.json"
    save_scene_spec(path, spec)
    loaded = load_scene_spec(path)
    assert loaded.room == spec.room
    assert np.allclose(loaded.device.mic_positions, spec.device.mic_positions)
    assert [s.role for s in loaded.sources] == [s.role for s in spec.sources]
    assert [s.level_db for s in loaded.sources] == [s.level_db for s in spec.sources]


def test_draw_scene_unknown_scenario():
    with pytest.raises(ParameterError):
        draw_scene(DEFAULT_CONFIG["scene_settings"], "music", np.random.default_rng(0), 0)


def _reverb(room, positions, gains, signal, device):
    n = len(signal)
    out = np.zeros((4, n))
    for pos, g in zip(positions, gains):
        for m in range(4):
            out[m] += g * fftconvolve(signal, image_method_rir(room, pos, device.mic_positions[m]))[:n]
    return out


def test_scene_is_sum_of_source_images(rng):
    room = RoomSpec((5.0, 4.0, 3.0), rt60=0.2)
    device = place_device(room, [2.5, 2.0, 1.0], 90.0)
    n = 4000
    speech, noise, echo = (rng.standard_normal(n) for _ in range(3))
    speech_pos = device.point_at(90.0, 1.6, 1.5)
    noise_pos = device.point_at(200.0, 1.8, 1.2)
    sources = (
        SourceSpec(SourceRole.SPEECH, speech_pos, mono(speech)),
        SourceSpec(SourceRole.NOISE, noise_pos, mono(noise), level_db=3.0),
        SourceSpec(SourceRole.ECHO, signal=mono(echo), level_db=-2.0),
    )
    audio, _ = simulate_scene(SceneSpec(room, device, sources, n / 16000), seed=0)

    target = _reverb(room, [speech_pos], [1.0], speech, device)
    noise_img = _reverb(room, [noise_pos], [1.0], noise, device)
    echo_img = _reverb(room, device.loudspeaker_positions, [0.5, 0.5], echo, device)
    expected = (target
                + ratio_gain(target[0], noise_img[0], 3.0) * noise_img
                + ratio_gain(target[0], echo_img[0], -2.0) * echo_img)
    assert np.allclose(audio.mics(), expected, rtol=1e-6, atol=1e-12)
    assert np.array_equal(audio.refs()[0], echo)


def _corpus(tmp_path, rng):
    speech_dir, noise_dir = tmp_path / "speech", tmp_path / "noise"
    speech_dir.mkdir()
    noise_dir.mkdir()
    # 3 s 语音需随机截取，0.3 s 噪声需循环拼接
    write_wav(speech_dir / "s.wav", mono(0.3 * rng.uniform(-1, 1, 48000)))
    write_wav(noise_dir / "n.wav", mono(0.1 * rng.uniform(-1, 1, 4800)))
    return {"speech": [str(speech_dir / "s.wav")], "noise": [str(noise_dir / "n.wav")]}


def test_corpus_scene_file_reproduces_signals(tmp_path, rng):
    pool = _corpus(tmp_path, rng)
    settings = dict(DEFAULT_CONFIG["scene_settings"], duration_s=2.0, rt60_range=[0.2, 0.2])
    spec = draw_scene(settings, "noise", np.random.default_rng(8), 3, signal_pool=pool)
    speech, noise = spec.sources
    assert 0 <= speech.signal_offset <= 16000
    assert noise.signal_offset == 0
    for s in spec.sources:
        x = s.signal.channel(0)
        assert len(x) == 32000
        assert math.sqrt(np.mean(x ** 2)) == pytest.approx(0.05)

    path = tmp_path / "scene.json"
    save_scene_spec(path, spec)
    loaded = load_scene_spec(path)
    for a, b in zip(spec.sources, loaded.sources):
        assert b.signal_offset == a.signal_offset
        assert np.array_equal(b.signal.channel(0), a.signal.channel(0))
    original, _ = simulate_scene(spec, seed=4)
    reloaded, _ = simulate_scene(loaded, seed=4)
    assert np.array_equal(original.samples, reloaded.samples)


def test_load_source_signal_offset(tmp_path, rng):
    pool = _corpus(tmp_path, rng)
    x, start = load_source_signal(pool["speech"][0], 16000, 16000, start=500)
    y, _ = load_source_signal(pool["speech"][0], 16000, 16000, start=501)
    assert start == 500
    k = np.dot(x[1:], y[:-1]) / np.dot(y[:-1], y[:-1])
    assert np.allclose(x[1:], k * y[:-1])
    with pytest.raises(ParameterError):
        load_source_signal(pool["speech"][0], 16000, 16000, start=40000)
    with pytest.raises(ParameterError):
        load_source_signal(pool["speech"][0], 16000, 16000)
