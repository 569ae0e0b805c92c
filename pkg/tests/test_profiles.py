from datetime import datetime, timedelta

import numpy as np
import pytest

from feedervolt.errors import ProfileError
from feedervolt.profiles import (
    DAY_STEPS,
    count_ramps,
    generate_synthetic_profiles,
    load_profiles,
    max_ramp,
    read_profiles_csv,
    write_profiles_csv,
)

from conftest import DATA


def _csv(n, skip=None, values=None):
    t0 = datetime(2023, 7, 15)
    rows = ["timestamp,load,pv1"]
    for i in range(n):
        if i == skip:
            continue
        v = values[i] if values is not None else 0.5
        rows.append(f"{(t0 + timedelta(minutes=i)).isoformat()},{v},0")
    return "\n".join(rows) + "\n"


def test_one_day_file():
    prof = read_profiles_csv(_csv(1440))
    assert len(prof["load"]) == 1440 and prof["load"].resolution == 60
    assert np.all(prof["pv1"].values == 0)  # all-zero PV is a valid night profile


def test_gap_reports_missing_timestamp():
    with pytest.raises(ProfileError, match="2023-07-15T00:10:00"):
        read_profiles_csv(_csv(30, skip=10))


def test_negative_value_rejected():
    vals = [0.5] * 5
    vals[3] = -0.1
    with pytest.raises(ProfileError):
        read_profiles_csv(_csv(5, values=vals))


@pytest.mark.parametrize("text", ["", "time,load\n2023-01-01T00:00:00,1\n", "timestamp,a,a\n"])
def test_malformed_headers(text):
    with pytest.raises(ProfileError):
        read_profiles_csv(text)


def test_write_read_round_trip(tmp_path):
    prof = generate_synthetic_profiles("sunny", 3, n_pv=2)
    write_profiles_csv(prof, tmp_path / "p.csv")
    back = load_profiles(tmp_path / "p.csv")
    assert set(back) == {"load", "pv1", "pv2"}
    for pid in prof:
        np.testing.assert_allclose(back[pid].values, prof[pid].values, atol=1e-6)


def test_synthetic_seeded_and_shaped():
    a = generate_synthetic_profiles("cloudy", 5)
    b = generate_synthetic_profiles("cloudy", 5)
    c = generate_synthetic_profiles("cloudy", 6)
    assert all(np.array_equal(a[k].values, b[k].values) for k in a)
    assert not np.array_equal(a["pv1"].values, c["pv1"].values)
    for k, p in a.items():
        assert len(p) == DAY_STEPS and p.values.min() >= 0
        if k.startswith("pv"):
            assert p.values.max() <= 1.0
            assert p.values[:300].max() == 0.0  # dark before 05:00


def test_cloudy_ramps_exceed_sunny():
    sunny = generate_synthetic_profiles("sunny", 5)
    cloudy = generate_synthetic_profiles("cloudy", 5)
    assert max_ramp(sunny["pv1"].values) < 0.05
    assert 0.2 < max_ramp(cloudy["pv1"].values) <= 0.6 + 1e-9
    assert count_ramps(cloudy["pv1"].values, 0.1) > count_ramps(sunny["pv1"].values, 0.1)


def test_multi_day_and_bad_type():
    p = generate_synthetic_profiles("sunny", 1, n_pv=1, days=2)
    assert len(p["load"]) == 2 * DAY_STEPS
    with pytest.raises(ProfileError):
        generate_synthetic_profiles("rainy", 1)


@pytest.mark.parametrize("name", ["profiles_sunny.csv", "profiles_cloudy.csv"])
def test_bundled_profiles_cover_a_day(name):
    prof = load_profiles(DATA / name)
    assert {"load", "pv1", "pv2", "pv3", "pv4", "pv5"} <= set(prof)
    assert all(len(p) >= DAY_STEPS and p.covers(DAY_STEPS, 60.0) for p in prof.values())


@pytest.mark.parametrize("seed", range(0, 60, 3))
def test_cloudy_day_has_twenty_big_ramps(seed):
    p = generate_synthetic_profiles("cloudy", seed)
    for k in p:
        if k.startswith("pv"):
            assert count_ramps(p[k].values, 0.2) >= 20, k


@pytest.mark.parametrize("day, seed", [("cloudy", 11), ("sunny", 7)])
def test_bundled_profiles_regenerate_from_seed(tmp_path, day, seed):
    write_profiles_csv(generate_synthetic_profiles(day, seed), tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_bytes() == (DATA / f"profiles_{day}.csv").read_bytes()
