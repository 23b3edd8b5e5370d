import hashlib
import math

import numpy as np
import pytest

from ruglab.features import extract_features
from ruglab.labeling import LabelConfig, label_idle, label_tvl
from ruglab.market_data import ConfigError, assemble_histories
from ruglab.synth import ARCHETYPES, GROUND_TRUTH_FILE, SynthConfig, generate, read_ground_truth


def _histories(corpus):
    return {h.token_id: h for h in assemble_histories(corpus.trades, corpus.pools, corpus.metas)}


def test_archetype_label_contracts(small_corpus):
    hs = _histories(small_corpus)
    at60, at240 = LabelConfig("tvl", 0.99, 60), LabelConfig("tvl", 0.99, 240)
    seen = set()
    for tok, kind in small_corpus.ground_truth:
        h = hs[tok]
        seen.add(kind)
        got = (label_tvl(h, at60).label, label_idle(h, at60).label)
        if kind == "honest":
            assert got == (0, 0)
        elif kind == "tvl_rug":
            assert got == (1, 1)
        elif kind == "idle_rug":
            assert got == (0, 1)
        else:
            assert got == (0, 0)
            assert label_tvl(h, at240).label == 1 and label_idle(h, at240).label == 1
    assert seen == set(ARCHETYPES)


def _digest(directory):
    out = hashlib.sha256()
    for p in sorted(directory.iterdir()):
        out.update(p.name.encode())
        out.update(p.read_bytes())
    return out.hexdigest()


def test_same_seed_same_bytes(tmp_path):
    cfg = SynthConfig(n_tokens=60, seed=4)
    a = generate(cfg).write(tmp_path / "a")
    b = generate(cfg).write(tmp_path / "b")
    assert _digest(a) == _digest(b)
    c = generate(SynthConfig(n_tokens=60, seed=5)).write(tmp_path / "c")
    assert _digest(a) != _digest(c)


def test_ground_truth_file(tmp_path, small_corpus, corpus_dir):
    gt = read_ground_truth(corpus_dir / GROUND_TRUTH_FILE)
    assert gt == dict(small_corpus.ground_truth)


def test_mix_within_multinomial_bounds():
    cfg = SynthConfig(n_tokens=800, seed=2)
    kinds = [k for _, k in generate(cfg).ground_truth]
    n = len(kinds)
    for a, p in cfg.archetype_mix.items():
        sd = math.sqrt(n * p * (1 - p))
        assert abs(kinds.count(a) - n * p) <= 3 * sd


def test_dedust_volume_scale(small_corpus):
    hs = _histories(small_corpus)
    vol = {"stonfi": [], "dedust": []}
    for h in hs.values():
        vol[h.source].append(extract_features(h)["total_usd_volume"])
    ratio = np.median(vol["dedust"]) / np.median(vol["stonfi"])
    assert ratio == pytest.approx(2.5, rel=0.2)


def test_late_rug_flips_with_horizon():
    c = generate(SynthConfig(n_tokens=30, seed=3, archetype_mix={"late_rug": 1.0}))
    for h in _histories(c).values():
        assert label_tvl(h, LabelConfig("tvl", horizon_minutes=60)).label == 0
        assert label_tvl(h, LabelConfig("tvl", horizon_minutes=240)).label == 1


def test_injected_noise_present():
    c = generate(SynthConfig(n_tokens=300, seed=1, zero_volume_fraction=0.2,
                             out_of_window_fraction=0.1, no_meta_fraction=0.1))
    assert any(t.volume_usd == 0 for t in c.trades)
    assert len(c.metas) < 300
    lo, hi = SynthConfig().date_lo, SynthConfig().date_hi
    starts = {}
    for t in c.trades:
        starts[t.token_id] = min(starts.get(t.token_id, t.timestamp), t.timestamp)
    assert any(not lo <= s < hi for s in starts.values())


def test_signal_zero_still_honours_labels():
    c = generate(SynthConfig(n_tokens=80, seed=9, signal=0.0))
    assert len(c.ground_truth) == 80


@pytest.mark.parametrize("kw", [
    dict(n_tokens=0),
    dict(archetype_mix={"honest": 0.5, "pump": 0.5}),
    dict(archetype_mix={"honest": 0.5, "tvl_rug": 0.4}),
    dict(stonfi_fraction=1.5),
    dict(source_scale={"stonfi": 1.0}),
    dict(source_delay_scale={"stonfi": 1.0, "dedust": 0.0}),
    dict(signal=-1),
    dict(zero_volume_fraction=2),
    dict(honest_lifetime_minutes=100),
    dict(date_lo=0, date_hi=3600),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SynthConfig(**kw)
