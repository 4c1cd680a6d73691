# -*- coding: utf-8 -*-

import json

import pytest

from errors import ParameterError, ParseError, UndefinedMetricError
from scoring import (
    ScoreReport,
    kws_metrics,
    load_report,
    lr_at_step,
    plateau_halving_lr,
    rank_systems,
    score_kws,
    score_ssl,
    ssl_metrics,
)


def test_kws_perfect_and_all_positive():
    truth = [1, 1, 0, 0]
    perfect = kws_metrics(truth, truth)
    assert (perfect.frr, perfect.far, perfect.score) == (0.0, 0.0, 0.0)

    ones = kws_metrics(truth, [1, 1, 1, 1])
    assert (ones.frr, ones.far, ones.score) == (0.0, 1.0, 1.0)


def test_kws_rates_pooled():
    # 100 个正例漏 32 个，100 个负例误报 19 个
    truth = [1] * 100 + [0] * 100
    pred = [0] * 32 + [1] * 68 + [1] * 19 + [0] * 81
    result = kws_metrics(truth, pred)
    assert result.frr == pytest.approx(0.32)
    assert result.far == pytest.approx(0.19)
    assert result.score == pytest.approx(0.51)


def test_kws_needs_both_classes():
    with pytest.raises(UndefinedMetricError):
        kws_metrics([1, 1], [1, 0])
    with pytest.raises(UndefinedMetricError):
        kws_metrics([0, 0], [1, 0])


def test_kws_rejects_bad_labels():
    with pytest.raises(ParameterError):
        kws_metrics([1, 0], [2, 0])
    with pytest.raises(ParameterError):
        kws_metrics([1, 0], [1])


def test_ssl_perfect_scores_two():
    result = ssl_metrics([10, 90, 300], [10, 90, 300], mae_baseline=17.0)
    assert result.score == pytest.approx(2.0)
    assert result.mae == 0.0


def test_ssl_two_point_case():
    result = ssl_metrics([100, 100], [105, 115], mae_baseline=20.0)
    assert result.errors == (5.0, 15.0)
    assert (result.acc10, result.acc7_5, result.acc5) == (0.5, 0.5, 0.5)
    assert result.mae == 10.0
    assert result.score == pytest.approx(0.5 + (1.0 - 10.0 / 20.0))


def test_ssl_single_antipodal_miss():
    truth = list(range(1, 181))
    pred = list(truth)
    pred[0] = 181
    result = ssl_metrics(truth, pred, mae_baseline=20.0)
    assert result.mae == pytest.approx(1.0)
    assert result.acc10 == pytest.approx(179 / 180)


def test_ssl_errors_wrap_around():
    result = ssl_metrics([355], [5], mae_baseline=20.0)
    assert result.errors == (10.0,)
    assert result.acc10 == 1.0
    assert result.acc7_5 == 0.0


def test_ssl_rejects_bad_baseline():
    with pytest.raises(ParameterError):
        ssl_metrics([1], [1], mae_baseline=0.0)


def test_rank_kws_lower_first():
    ranked = rank_systems([{'system': 'a', 'score': 0.51}, {'system': 'b', 'score': 0.49}], 'kws')
    assert [e['system'] for e in ranked] == ['b', 'a']


def test_rank_ssl_higher_first_and_tie_rules():
    entries = [
        {'system': 'slow', 'score': 1.5, 'time_delay_ms': 400},
        {'system': 'fast', 'score': 1.5, 'time_delay_ms': 200},
        {'system': 'best', 'score': 1.7, 'time_delay_ms': 900},
        {'system': 'fast2', 'score': 1.5, 'time_delay_ms': 200},
    ]
    ranked = rank_systems(entries, 'ssl')
    assert [e['system'] for e in ranked] == ['best', 'fast', 'fast2', 'slow']


def test_rank_single_entry_and_bad_direction():
    assert rank_systems([{'system': 'x', 'score': 0.3}], 'kws')[0]['system'] == 'x'
    with pytest.raises(ParameterError):
        rank_systems([], 'asr')


def test_lr_schedule_endpoints():
    assert lr_at_step(0.01, 0.0001, 101, 0) == pytest.approx(0.01)
    assert lr_at_step(0.01, 0.0001, 101, 100) == pytest.approx(0.0001)
    assert lr_at_step(0.01, 0.0001, 101, 50) == pytest.approx(0.001)
    with pytest.raises(ParameterError):
        lr_at_step(0.0, 0.0001, 10, 0)
    with pytest.raises(ParameterError):
        lr_at_step(0.01, 0.0001, 10, 10)


def test_plateau_halving():
    schedule = plateau_halving_lr([1.0, 0.9, 0.95, 0.8, 0.85, 0.86], lr0=0.001)
    assert schedule == pytest.approx([0.001, 0.001, 0.0005, 0.0005, 0.00025, 0.000125])


def test_score_kws_breakdown():
    records = [
        {'room': 'low-reverb', 'scenario': 'Keyword only', 'truth': True, 'pred': True},
        {'room': 'low-reverb', 'scenario': 'Keyword only', 'truth': True, 'pred': False},
        {'room': 'low-reverb', 'scenario': 'Speech+Noise', 'truth': False, 'pred': True},
        {'room': 'high-reverb', 'scenario': 'Speech only', 'truth': False, 'pred': False},
    ]
    report = score_kws(records, time_delay_ms=150.0, system='demo')
    assert report.score == pytest.approx(0.5 + 0.5)
    rows = {(r['room'], r['scenario']): r for r in report.breakdown}
    assert rows[('low-reverb', 'Keyword only')]['metric'] == 'frr'
    assert rows[('low-reverb', 'Keyword only')]['value'] == pytest.approx(0.5)
    assert rows[('low-reverb', 'Speech+Noise')]['metric'] == 'far'
    assert rows[('low-reverb', 'Speech+Noise')]['value'] == 1.0
    assert rows[('high-reverb', 'Speech only')]['value'] == 0.0


def test_score_ssl_report_round_trip(tmp_path):
    records = [
        {'room': 'mid-reverb', 'scenario': 'Speech only', 'truth': 90, 'pred': 93},
        {'room': 'mid-reverb', 'scenario': 'Speech+Echo', 'truth': 200, 'pred': 180},
        {'room': 'anechoic', 'scenario': 'Speech only', 'truth': 10, 'pred': 10},
    ]
    report = score_ssl(records, mae_baseline=20.0, time_delay_ms=30.0, system='srp')
    data = report.to_dict()
    assert data['overall']['n'] == 3
    assert 'errors' not in data['overall']
    assert data['overall']['mae'] == round(23.0 / 3.0, 4)

    path = tmp_path / "report.json"
    report.save(path)
    assert json.loads(path.read_text(encoding="utf-8")) == data
    loaded = load_report(path)
    assert loaded.track == 'ssl'
    assert loaded.system == 'srp'
    assert loaded.time_delay_ms == 30.0
    assert loaded.score == pytest.approx(report.score, abs=1e-4)


def test_report_json_is_stable():
    report = ScoreReport('kws', {'score': 1 / 3, 'frr': 0.123456789}, [], 3)
    assert report.to_json() == report.to_json()
    assert '"frr": 0.1235' in report.to_json()


def test_load_report_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_report(path)
