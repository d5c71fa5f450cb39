"""Scenario construction: synthetic households, scenario files and CSV profiles.

Scenario file format (plain text, one directive per line, ``#`` comments)::

    scenario 1
    T 48
    slot_minutes 45
    household h0
    appliance other non-shiftable 2.4
    series 1 0.21 0.20 0.19        # events at consecutive slots from slot 1
    appliance ev interruptible 6.6
    event 26 12.5                  # wake slot, energy in kWh

Appliance lines are ``appliance <id> <category> <max_rate_kw>``; categories
are ``non-shiftable``, ``non-interruptible`` or ``interruptible``.  ``event``
and ``series`` lines attach to the most recent appliance.

Profile CSV format: header ``timestamp,household,<appliance columns...>``
with ISO timestamps and kW readings; empty cells are missing values.
Appliance columns use the names in :data:`APPLIANCE_COLUMNS`; repeated
appliances carry a numeric suffix (``refrigerator2``, ``refrigerator_2``)
and are summed into the base column.
"""
from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .errors import ConfigurationError, ImputationError
from .simenv import ApplianceSpec, Category, Household, Scenario

HORIZON_HOURS = 36.0
SCENARIO_FORMAT_VERSION = 1

DEFAULT_CATEGORY_MAP = {
    "ev": Category.INTERRUPTIBLE,
    "air_conditioner": Category.INTERRUPTIBLE,
    "furnace": Category.INTERRUPTIBLE,
    "dishwasher": Category.NON_INTERRUPTIBLE,
    "clothes_washer": Category.NON_INTERRUPTIBLE,
    "water_heater": Category.NON_SHIFTABLE,
    "lighting": Category.NON_SHIFTABLE,
    "refrigerator": Category.NON_SHIFTABLE,
    "kitchen_appliances": Category.NON_SHIFTABLE,
    "other": Category.NON_SHIFTABLE,
}
APPLIANCE_COLUMNS = tuple(DEFAULT_CATEGORY_MAP)
DEFAULT_RATE_KW = 1.0  # shiftable appliances with no recorded run


# -- synthetic scenarios -------------------------------------------------------
def _bump(hour: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.abs(((hour - center) + 12.0) % 24.0 - 12.0)
    return np.exp(-0.5 * (d / width) ** 2)


def _slot_of_hour(hour: float, dt_h: float, T: int) -> int:
    return int(min(max(math.floor(hour / dt_h) + 1, 1), T))


def synth_scenario(seed: int = 0, N: int = 4, T: int = 48, slot_minutes: Optional[float] = None,
                   ev_probability: float = 0.8) -> Scenario:
    """Seeded synthetic neighbourhood over a 36-hour horizon starting at midnight.

    Every household has the same four appliances, so observation widths
    match: a non-shiftable base load with a morning and a larger evening
    bump, a dishwasher and a clothes washer (one or both get a run), and
    an EV that, with probability ``ev_probability``, plugs in during the
    early evening.
    """
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    if T < 2:
        raise ConfigurationError("T must be >= 2")
    if slot_minutes is None:
        slot_minutes = HORIZON_HOURS * 60.0 / T
    dt_h = slot_minutes / 60.0
    rng = np.random.default_rng(seed)
    hours = (np.arange(T) + 0.5) * dt_h
    households = []
    for i in range(N):
        scale = rng.uniform(0.7, 1.3)
        evening = rng.uniform(1.0, 1.8)
        base_kw = scale * (0.8 + 0.6 * _bump(hours, 7.5, 1.2) + evening * _bump(hours, 19.5, 1.8))
        base_kw = base_kw * rng.uniform(0.9, 1.1, T)
        base = ApplianceSpec("other", Category.NON_SHIFTABLE, float(base_kw.max()),
                             tuple((t + 1, float(base_kw[t] * dt_h)) for t in range(T)))

        dw_rate = float(rng.uniform(1.0, 1.5))
        cw_rate = float(rng.uniform(0.4, 0.8))
        which = rng.integers(0, 3)  # 0: dishwasher, 1: washer, 2: both
        dw_events, cw_events = (), ()
        dw_hour = rng.uniform(19.5, 21.5)
        cw_hour = rng.uniform(8.0, 11.0)
        if which in (0, 2):
            dw_events = ((_slot_of_hour(dw_hour, dt_h, T), float(dw_rate * rng.uniform(1.0, 2.0))),)
        if which in (1, 2):
            cw_events = ((_slot_of_hour(cw_hour, dt_h, T), float(cw_rate * rng.uniform(1.0, 1.5))),)
        dishwasher = ApplianceSpec("dishwasher", Category.NON_INTERRUPTIBLE, dw_rate, dw_events)
        washer = ApplianceSpec("clothes_washer", Category.NON_INTERRUPTIBLE, cw_rate, cw_events)

        ev_rate = float(rng.choice([3.3, 6.6]))
        has_ev = rng.random() < ev_probability
        ev_hour = rng.uniform(17.5, 19.5)
        ev_kwh = float(rng.uniform(6.0, 14.0))
        ev_events = ((_slot_of_hour(ev_hour, dt_h, T), ev_kwh),) if has_ev else ()
        ev = ApplianceSpec("ev", Category.INTERRUPTIBLE, ev_rate, ev_events)
        households.append(Household(f"h{i}", (base, dishwasher, washer, ev)))
    return Scenario(tuple(households), T, float(slot_minutes))


# -- scenario files ------------------------------------------------------------------
def dumps_scenario(sc: Scenario) -> str:
    lines = [f"scenario {SCENARIO_FORMAT_VERSION}", f"T {sc.T}", f"slot_minutes {sc.slot_minutes!r}"]
    for h in sc.households:
        lines.append(f"household {h.id}")
        for a in h.appliances:
            lines.append(f"appliance {a.id} {a.category.label} {a.max_rate_kw!r}")
            events = list(a.demand_events)
            slots = [s for s, _ in events]
            if len(events) > 2 and slots == list(range(slots[0], slots[0] + len(slots))):
                lines.append("series " + " ".join([str(slots[0])] + [repr(e) for _, e in events]))
            else:
                lines += [f"event {s} {e!r}" for s, e in events]
    return "\n".join(lines) + "\n"


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc))


def loads_scenario(text: str, source: str = "<string>") -> Scenario:
    T = None
    slot_minutes = 15.0
    households = []
    cur_h = None
    cur_a = None

    def fail(lineno, msg):
        raise ConfigurationError(f"{source}:{lineno}: {msg}")

    def close_appliance():
        nonlocal cur_a
        if cur_a is not None:
            cur_h[1].append(ApplianceSpec(cur_a[0], cur_a[1], cur_a[2], tuple(cur_a[3])))
            cur_a = None

    def close_household():
        nonlocal cur_h
        close_appliance()
        if cur_h is not None:
            households.append(Household(cur_h[0], tuple(cur_h[1])))
            cur_h = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "scenario":
                if len(args) != 1 or int(args[0]) != SCENARIO_FORMAT_VERSION:
                    fail(lineno, f"unsupported scenario format version {' '.join(args)!r}")
            elif key == "T":
                T = int(args[0])
            elif key == "slot_minutes":
                slot_minutes = float(args[0])
            elif key == "household":
                close_household()
                cur_h = (args[0], [])
            elif key == "appliance":
                if cur_h is None:
                    fail(lineno, "appliance before any household")
                close_appliance()
                if len(args) != 3:
                    fail(lineno, "expected: appliance <id> <category> <max_rate_kw>")
                cur_a = (args[0], Category.parse(args[1]), float(args[2]), [])
            elif key == "event":
                if cur_a is None:
                    fail(lineno, "event before any appliance")
                cur_a[3].append((int(args[0]), float(args[1])))
            elif key == "series":
                if cur_a is None:
                    fail(lineno, "series before any appliance")
                start = int(args[0])
                cur_a[3].extend((start + k, float(v)) for k, v in enumerate(args[1:]))
            else:
                fail(lineno, f"unknown directive {key!r}")
        except ConfigurationError as exc:
            if str(exc).startswith(f"{source}:"):
                raise
            fail(lineno, str(exc))
        except (IndexError, ValueError):
            fail(lineno, f"malformed line {raw.strip()!r}")
    close_household()
    if T is None:
        raise ConfigurationError(f"{source}: missing 'T' line")
    try:
        return Scenario(tuple(households), T, slot_minutes)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{source}: {exc}") from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"scenario file not found: {p}")
    return loads_scenario(p.read_text(), str(p))


# -- profile CSV preprocessing ----------------------------------------------------------------
_SUFFIX = re.compile(r"^(?P<base>[a-z_]+?)_?\d+$")


def base_column(name: str) -> str:
    """``refrigerator2`` / ``refrigerator_2`` -> ``refrigerator``."""
    key = name.strip().lower().replace(" ", "_")
    if key in DEFAULT_CATEGORY_MAP:
        return key
    m = _SUFFIX.match(key)
    return m.group("base") if m else key


def read_profiles(path) -> pd.DataFrame:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"profile file not found: {p}")
    df = pd.read_csv(p)
    for col in ("timestamp", "household"):
        if col not in df.columns:
            raise ConfigurationError(f"{p}: missing required column {col!r}")
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    df["household"] = df["household"].astype(str)
    return df


def _merge_duplicates(df: pd.DataFrame) -> pd.DataFrame:
    groups: dict = {}
    for col in df.columns:
        if col in ("timestamp", "household"):
            continue
        groups.setdefault(base_column(col), []).append(col)
    out = df[["timestamp", "household"]].copy()
    for base, cols in groups.items():
        block = df[cols].astype(float)
        # a slot counts as missing if any duplicate reading is missing
        out[base] = block.sum(axis=1, min_count=len(cols)).where(block.notna().all(axis=1))
    return out


def _impute_previous_days(frame: pd.DataFrame, household: str, gaps: list) -> pd.DataFrame:
    """Fill NaNs from the same time of day on the nearest earlier day that has data."""
    frame = frame.copy()
    days = frame.index.normalize()
    tod = frame.index - days
    for col in frame.columns:
        values = frame[col]
        missing = values[values.isna()].index
        if len(missing) == 0:
            continue
        lookup = pd.Series(values.to_numpy(), index=pd.MultiIndex.from_arrays([days, tod]))
        lookup = lookup[lookup.notna()]
        lookup = lookup[~lookup.index.duplicated(keep="last")]
        for ts in missing:
            day, t_of_day = ts.normalize(), ts - ts.normalize()
            cands = [d for d, td in lookup.index if td == t_of_day and d < day]
            if not cands:
                gaps.append((household, col, ts.isoformat()))
                continue
            frame.at[ts, col] = lookup[(max(cands), t_of_day)]
    return frame


def preprocess(rows: pd.DataFrame, slot_minutes: float = 15.0) -> pd.DataFrame:
    """Merge duplicate appliances, impute gaps from earlier days, resample to slots.

    Returns a frame with ``timestamp``, ``household`` and one column per base
    appliance, one row per slot (slots anchored at midnight).  Raises
    :class:`ImputationError` listing every value that has no earlier-day
    counterpart.
    """
    if rows is None or len(rows) == 0:
        raise ConfigurationError("no profile rows to preprocess")
    df = rows.copy()
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    df["household"] = df["household"].astype(str)
    df = _merge_duplicates(df)
    appliance_cols = [c for c in df.columns if c not in ("timestamp", "household")]
    if not appliance_cols:
        raise ConfigurationError("profile rows have no appliance columns")
    freq = pd.Timedelta(minutes=slot_minutes)
    gaps: list = []
    parts = []
    for hid, g in df.groupby("household", sort=True):
        g = g.sort_values("timestamp").set_index("timestamp")[appliance_cols]
        if g.index.duplicated().any():
            raise ConfigurationError(f"household {hid}: repeated timestamps")
        g = _impute_previous_days(g, hid, gaps)
        slot_start = g.index.floor(freq)
        res = g.groupby(slot_start).mean()
        full = pd.date_range(res.index.min(), res.index.max(), freq=freq)
        res = res.reindex(full)
        res = _impute_previous_days(res, hid, gaps)
        res.index.name = "timestamp"
        res = res.reset_index()
        res.insert(1, "household", hid)
        parts.append(res)
    if gaps:
        raise ImputationError(gaps)
    out = pd.concat(parts, ignore_index=True)
    return out[["timestamp", "household"] + appliance_cols]


def _runs(values: np.ndarray):
    """Yield ``(start, stop)`` index pairs of contiguous nonzero runs."""
    nz = values > 0
    k = 0
    n = len(values)
    while k < n:
        if nz[k]:
            s = k
            while k < n and nz[k]:
                k += 1
            yield s, k
        else:
            k += 1


def to_scenario(cleaned: pd.DataFrame, category_map: Optional[Mapping] = None, T: int = 144,
                slot_minutes: float = 15.0, start=None) -> Scenario:
    """Turn cleaned per-slot profiles into a scenario.

    Non-shiftable columns become per-slot served energy.  Each contiguous
    nonzero run of a shiftable column becomes one demand event waking at the
    run start with the run's energy; the appliance rate is the largest run
    peak.
    """
    cmap = {k: Category.parse(v) for k, v in (category_map or DEFAULT_CATEGORY_MAP).items()}
    cols = [c for c in cleaned.columns if c not in ("timestamp", "household")]
    unmapped = [c for c in cols if c not in cmap]
    if unmapped:
        raise ConfigurationError(f"unmapped appliance column(s): {', '.join(unmapped)}")
    dt_h = slot_minutes / 60.0
    households = []
    for hid, g in cleaned.groupby("household", sort=True):
        g = g.sort_values("timestamp")
        if start is not None:
            g = g[g["timestamp"] >= pd.Timestamp(start)]
        g = g.iloc[:T]
        if len(g) < T:
            raise ConfigurationError(f"household {hid}: only {len(g)} slots available, need {T}")
        appliances = []
        for col in cols:
            kw = g[col].to_numpy(dtype=float)
            if np.any(kw < 0) or not np.all(np.isfinite(kw)):
                raise ConfigurationError(f"household {hid}, column {col}: negative or missing values")
            cat = cmap[col]
            if cat == Category.NON_SHIFTABLE:
                events = tuple((t + 1, float(kw[t] * dt_h)) for t in range(T))
                rate = float(kw.max()) if kw.max() > 0 else DEFAULT_RATE_KW
            else:
                events, peaks = [], []
                for s, e in _runs(kw):
                    events.append((s + 1, float(kw[s:e].sum() * dt_h)))
                    peaks.append(float(kw[s:e].max()))
                rate = max(peaks) if peaks else DEFAULT_RATE_KW
                events = tuple(events)
            appliances.append(ApplianceSpec(col, cat, rate, events))
        households.append(Household(str(hid), tuple(appliances)))
    if not households:
        raise ConfigurationError("no households in cleaned profiles")
    return Scenario(tuple(households), T, slot_minutes)


def scenario_from_csv(path, T: int = 144, slot_minutes: float = 15.0, category_map=None, start=None) -> Scenario:
    return to_scenario(preprocess(read_profiles(path), slot_minutes), category_map, T, slot_minutes, start)
