import numpy as np
import pandas as pd
import pytest

from dpcs import data, simenv
from dpcs.errors import ConfigurationError, ImputationError
from dpcs.simenv import Category
from dpcs.trainer import rollout


def frame(values: dict, start="2018-11-05 00:00", periods=None, freq="15min", household="h1"):
    periods = periods or len(next(iter(values.values())))
    ts = pd.date_range(start, periods=periods, freq=freq)
    return pd.DataFrame({"timestamp": ts, "household": household, **values})


def test_category_map_matches_appliance_table():
    ia = {k for k, v in data.DEFAULT_CATEGORY_MAP.items() if v == Category.INTERRUPTIBLE}
    nia = {k for k, v in data.DEFAULT_CATEGORY_MAP.items() if v == Category.NON_INTERRUPTIBLE}
    assert ia == {"ev", "air_conditioner", "furnace"}
    assert nia == {"dishwasher", "clothes_washer"}
    assert len(data.DEFAULT_CATEGORY_MAP) == 10


def test_base_column():
    assert data.base_column("refrigerator2") == "refrigerator"
    assert data.base_column("refrigerator_2") == "refrigerator"
    assert data.base_column("Clothes Washer") == "clothes_washer"


def test_duplicate_columns_are_summed():
    df = frame({"refrigerator": [0.1, 0.1], "refrigerator2": [0.2, 0.2]})
    out = data.preprocess(df, 15)
    assert list(out.columns) == ["timestamp", "household", "refrigerator"]
    assert out["refrigerator"].tolist() == pytest.approx([0.3, 0.3])


def test_missing_value_from_previous_day():
    vals = np.full(2 * 96, 0.2)
    vals[32] = 0.4  # 08:00 on day one
    vals[96 + 32] = np.nan  # 08:00 on day two
    out = data.preprocess(frame({"other": vals}), 15)
    assert out["other"].iloc[96 + 32] == pytest.approx(0.4)


def test_nearest_previous_day_wins():
    vals = np.full(3 * 96, 0.2)
    vals[10] = 0.1
    vals[96 + 10] = 0.5
    vals[2 * 96 + 10] = np.nan
    out = data.preprocess(frame({"other": vals}), 15)
    assert out["other"].iloc[2 * 96 + 10] == pytest.approx(0.5)


def test_unfillable_gap_lists_location():
    vals = [np.nan, 0.2, 0.3]
    with pytest.raises(ImputationError, match="other"):
        data.preprocess(frame({"other": vals}), 15)
    with pytest.raises(ConfigurationError):
        data.preprocess(frame({"other": []}, periods=0), 15)


def test_resample_by_mean():
    out = data.preprocess(frame({"other": [1.0, 3.0, 2.0, 2.0]}, freq="15min"), 30)
    assert out["other"].tolist() == [2.0, 2.0]


def test_preprocess_idempotent():
    rng = np.random.default_rng(0)
    vals = rng.random(2 * 96)
    vals[[100, 150]] = np.nan
    df = frame({"other": vals, "ev": np.where(rng.random(192) > 0.8, 3.0, 0.0), "ev_2": np.zeros(192)})
    once = data.preprocess(df, 15)
    twice = data.preprocess(once, 15)
    pd.testing.assert_frame_equal(once, twice)


def test_ev_run_becomes_one_event():
    ev = np.zeros(144)
    ev[79:88] = 6.0  # slots 80..88
    sc = data.to_scenario(frame({"ev": ev, "other": np.full(144, 0.5)}), T=144, slot_minutes=15)
    app = sc.households[0].appliances[0]
    assert app.demand_events == ((80, pytest.approx(13.5)),)
    assert app.max_rate_kw == 6.0


def test_zero_column_and_unmapped_column():
    sc = data.to_scenario(frame({"dishwasher": np.zeros(8), "other": np.ones(8)}), T=8)
    assert sc.households[0].appliances[0].demand_events == ()
    with pytest.raises(ConfigurationError, match="sauna"):
        data.to_scenario(frame({"sauna": np.ones(8)}), T=8)
    with pytest.raises(ConfigurationError):
        data.to_scenario(frame({"other": np.ones(4)}), T=8)


def test_greedy_round_trip_reproduces_shiftable_energy():
    rng = np.random.default_rng(5)
    T = 96
    ev = np.zeros(T)
    ev[30:40] = rng.uniform(2.0, 6.0, 10)
    dw = np.zeros(T)
    dw[50:53] = 1.2
    cw = np.zeros(T)
    cw[10:12] = [0.5, 0.3]
    parts = [frame({"ev": ev, "dishwasher": dw, "clothes_washer": cw, "other": rng.random(T)}, household=h)
             for h in ("a", "b")]
    cleaned = data.preprocess(pd.concat(parts, ignore_index=True), 15)
    sc = data.to_scenario(cleaned, T=T, slot_minutes=15)
    greedy = simenv.greedy_actions(sc)
    r = rollout(sc, lambda obs: greedy)
    expected = (ev.sum() + dw.sum() + cw.sum()) * 0.25
    for i in range(sc.N):
        assert r.shiftable_kw[:, i].sum() * sc.dt == pytest.approx(expected, abs=1e-6)
        assert r.unfulfilled_kwh[i] == 0.0


def test_csv_file_round_trip(tmp_path):
    df = frame({"other": np.full(8, 0.4), "refrigerator_1": np.full(8, 0.1), "refrigerator_2": np.full(8, 0.1)})
    path = tmp_path / "profiles.csv"
    df.to_csv(path, index=False)
    sc = data.scenario_from_csv(path, T=8, slot_minutes=15)
    assert [a.id for a in sc.households[0].appliances] == ["other", "refrigerator"]
    with pytest.raises(ConfigurationError):
        data.read_profiles(tmp_path / "none.csv")


def test_synth_scenario_is_seeded():
    a, b = data.synth_scenario(3, 4, 48), data.synth_scenario(3, 4, 48)
    assert data.dumps_scenario(a) == data.dumps_scenario(b)
    assert data.dumps_scenario(a) != data.dumps_scenario(data.synth_scenario(4, 4, 48))
    with pytest.raises(ConfigurationError):
        data.synth_scenario(0, 0, 48)


def test_synth_unscheduled_peak_is_in_the_evening():
    sc = data.synth_scenario(0, 4, 48)
    greedy = simenv.greedy_actions(sc)
    r = rollout(sc, lambda obs: greedy)
    peak_hour = (int(np.argmax(r.loads)) + 0.5) * sc.slot_minutes / 60.0
    assert 16.0 <= peak_hour <= 23.0


def test_synth_layout():
    sc = data.synth_scenario(1, 6, 48)
    assert sc.T * sc.slot_minutes == 36 * 60
    for h in sc.households:
        cats = [a.category for a in h.appliances]
        assert 3 <= len(cats) <= 5
        assert cats.count(Category.NON_SHIFTABLE) >= 1
        nia_events = sum(len(a.demand_events) for a in h.appliances if a.category == Category.NON_INTERRUPTIBLE)
        assert 1 <= nia_events <= 2


def test_scenario_text_round_trip(tmp_path):
    sc = data.synth_scenario(2, 3, 24)
    path = tmp_path / "sc.txt"
    data.save_scenario(sc, path)
    back = data.load_scenario(path)
    assert data.dumps_scenario(back) == data.dumps_scenario(sc)
    assert back.obs_dims() == sc.obs_dims()


def test_hand_written_scenario():
    text = """scenario 1
T 4
slot_minutes 15
household h0
appliance fridge non-shiftable 1.0
series 1 0.1 0.1 0.1 0.1
appliance ev interruptible 4.0
event 2 1.5   # evening plug-in
"""
    sc = data.loads_scenario(text)
    assert sc.N == 1 and sc.T == 4
    assert sc.households[0].appliances[1].demand_events == ((2, 1.5),)


@pytest.mark.parametrize("text, needle", [
    ("scenario 1\nT 4\nappliance ev ia 2\n", "<string>:3:"),
    ("scenario 1\nT 4\nhousehold h\nappliance ev sauna 2\n", "<string>:4:"),
    ("scenario 1\nT x\n", "<string>:2:"),
    ("scenario 1\nT 4\nhousehold h\nbogus 1\n", "<string>:4:"),
])
def test_scenario_parse_errors_name_the_line(text, needle):
    with pytest.raises(ConfigurationError, match=needle):
        data.loads_scenario(text)
