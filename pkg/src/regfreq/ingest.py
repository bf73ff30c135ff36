"""Loading gridded daily precipitation and building seasonal wet-day samples."""

from __future__ import annotations

import calendar
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

SEASONS = ("SON", "DJF", "MAM", "JJA")
SEASON_MONTHS = {"SON": (9, 10, 11), "DJF": (12, 1, 2), "MAM": (3, 4, 5), "JJA": (6, 7, 8)}
DEFAULT_THRESHOLD = 1.0
MISSING_FLAG_FRACTION = 0.20
MIN_FIT_VALUES = 30

CSV_COLUMNS = ["site_id", "lon", "lat", "date", "precip_mm"]


class DataError(ValueError):
    """Input file or series violates the expected schema."""


@dataclass
class SiteSeries:
    """Daily precipitation of one grid point; missing days are nan."""

    site_id: str
    lon: float
    lat: float
    dates: np.ndarray
    values: np.ndarray
    elevation: float | None = None
    flags: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values)
        if self.dates.shape != self.values.shape or self.dates.ndim != 1:
            raise DataError(f"site {self.site_id}: dates and values differ in shape")
        if self.dates.size > 1:
            bad = np.flatnonzero(np.diff(self.dates).astype(np.int64) <= 0)
            if bad.size:
                raise DataError(f"site {self.site_id}: dates not strictly increasing at index {bad[0] + 1} "
                                f"({self.dates[bad[0]]} -> {self.dates[bad[0] + 1]})")
        observed = self.values[~np.isnan(self.values)]
        if np.any(~np.isfinite(observed)) or np.any(observed < 0):
            raise DataError(f"site {self.site_id}: precipitation must be finite and non-negative")

    def __len__(self) -> int:
        return self.dates.size

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)


# ---------------------------------------------------------------------------
# calendar helpers


def _months(dates: np.ndarray) -> np.ndarray:
    return dates.astype("datetime64[M]").astype(np.int64) % 12 + 1


def _years(dates: np.ndarray) -> np.ndarray:
    return dates.astype("datetime64[Y]").astype(np.int64) + 1970


def season_mask(dates: np.ndarray, season: str) -> np.ndarray:
    if season not in SEASON_MONTHS:
        raise ValueError(f"unknown season {season!r}, expected one of {SEASONS}")
    return np.isin(_months(dates), SEASON_MONTHS[season])


def season_year(dates: np.ndarray) -> np.ndarray:
    """Season-year label: the calendar year, except December counts toward the next one."""
    years = _years(dates)
    return np.where(_months(dates) == 12, years + 1, years)


def season_length(season: str, year: int) -> int:
    if season == "DJF":
        return 31 + 31 + (29 if calendar.isleap(year) else 28)
    return {"SON": 91, "MAM": 92, "JJA": 92}[season]


def missing_fraction_by_season(series: SiteSeries) -> dict[str, float]:
    out = {}
    miss = series.missing
    for season in SEASONS:
        mask = season_mask(series.dates, season)
        if mask.any():
            out[season] = float(miss[mask].mean())
    return out


def _flag_missing(series: SiteSeries) -> SiteSeries:
    for season, frac in missing_fraction_by_season(series).items():
        if frac > MISSING_FLAG_FRACTION:
            series.flags.add(f"missing>{MISSING_FLAG_FRACTION:.0%}:{season}")
    return series


# ---------------------------------------------------------------------------
# loaders


def load_csv(path: str | Path) -> list[SiteSeries]:
    """Long format: one row per (site, day) with header site_id,lon,lat,date,precip_mm."""
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={"site_id": str, "date": str}, keep_default_na=True)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing_cols = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing_cols:
        raise DataError(f"{path}: missing columns {missing_cols}; expected header {','.join(CSV_COLUMNS)}")
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    bad = np.flatnonzero(dates.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DataError(f"{path}: invalid date {df['date'].iloc[row]!r} at row {row + 2}")
    precip = pd.to_numeric(df["precip_mm"], errors="coerce")
    bad = np.flatnonzero((precip.isna() & df["precip_mm"].notna()).to_numpy() | (precip < 0).to_numpy())
    if bad.size:
        row = int(bad[0])
        raise DataError(f"{path}: invalid precipitation {df['precip_mm'].iloc[row]!r} at row {row + 2}")
    df = df.assign(_date=dates.to_numpy().astype("datetime64[D]"), _p=precip.to_numpy(dtype=float),
                   _row=np.arange(len(df)) + 2)
    out = []
    for site_id, g in df.groupby("site_id", sort=False):
        d = g["_date"].to_numpy()
        steps = np.diff(d).astype(np.int64)
        if np.any(steps <= 0):
            i = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise DataError(f"{path}: site {site_id} dates not strictly increasing at row {g['_row'].iloc[i]}")
        elev = float(g["elevation"].iloc[0]) if "elevation" in g.columns else None
        out.append(_flag_missing(SiteSeries(str(site_id), float(g["lon"].iloc[0]), float(g["lat"].iloc[0]),
                                            d, g["_p"].to_numpy(), elevation=elev)))
    return out


def load_binary(sidecar: str | Path) -> list[SiteSeries]:
    """Dense format: JSON sidecar plus a row-major float32 matrix (sites x days).

    The matrix is memory-mapped; each series holds a row view.
    """
    sidecar = Path(sidecar)
    try:
        meta = json.loads(sidecar.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {sidecar}: {exc}") from exc
    for key in ("sites", "start_date", "n_days", "data_file"):
        if key not in meta:
            raise DataError(f"{sidecar}: missing key {key!r}")
    try:
        start = np.datetime64(meta["start_date"], "D")
    except ValueError as exc:
        raise DataError(f"{sidecar}: invalid start_date {meta['start_date']!r}") from exc
    n_days = int(meta["n_days"])
    sites = meta["sites"]
    data_path = sidecar.parent / meta["data_file"]
    expected = len(sites) * n_days * 4
    if not data_path.exists() or data_path.stat().st_size != expected:
        raise DataError(f"{data_path}: expected {expected} bytes for {len(sites)} sites x {n_days} days")
    mat = np.memmap(data_path, dtype="<f4", mode="r", shape=(len(sites), n_days))
    dates = start + np.arange(n_days)
    out = []
    for i, s in enumerate(sites):
        try:
            series = SiteSeries(str(s["site_id"]), float(s["lon"]), float(s["lat"]), dates, mat[i],
                                elevation=s.get("elevation"))
        except KeyError as exc:
            raise DataError(f"{sidecar}: site entry {i} lacks {exc}") from exc
        out.append(_flag_missing(series))
    return out


def load_grid(source: str | Path, fmt: str | None = None) -> list[SiteSeries]:
    """Load every grid point of a file in long CSV (``csv``) or dense binary (``binary``) format."""
    source = Path(source)
    if not source.exists():
        raise DataError(f"{source} does not exist")
    if fmt is None:
        fmt = "binary" if source.suffix == ".json" else "csv"
    if fmt == "csv":
        return load_csv(source)
    if fmt == "binary":
        return load_binary(source)
    raise DataError(f"unknown input format {fmt!r}")


def write_csv(sites, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for s in sites:
            vals = np.asarray(s.values, dtype=float)
            txt = np.where(np.isnan(vals), "", np.char.mod("%.17g", vals))
            for d, v in zip(s.dates.astype(str), txt):
                fh.write(f"{s.site_id},{s.lon!r},{s.lat!r},{d},{v}\n")


def write_binary(sites, sidecar: str | Path, data_file: str | None = None) -> None:
    """Write series sharing one contiguous date axis in the dense format."""
    sidecar = Path(sidecar)
    data_file = data_file or sidecar.with_suffix(".f32").name
    table = []
    dates = None
    with open(sidecar.parent / data_file, "wb") as fh:
        for s in sites:
            if dates is None:
                dates = s.dates
                if np.any(np.diff(dates).astype(np.int64) != 1):
                    raise DataError("dense format needs a contiguous daily axis")
            if s.dates.size != dates.size or s.dates[0] != dates[0]:
                raise DataError(f"site {s.site_id} does not share the common date axis")
            fh.write(np.asarray(s.values, dtype="<f4").tobytes())
            table.append({"site_id": s.site_id, "lon": s.lon, "lat": s.lat, "elevation": s.elevation})
    if dates is None:
        raise DataError("no sites to write")
    n_days = dates.size
    meta = {
        "sites": table,
        "start_date": str(dates[0]),
        "n_days": int(n_days),
        "data_file": data_file,
    }
    sidecar.write_text(json.dumps(meta, indent=1))


# ---------------------------------------------------------------------------
# seasonal wet-day samples


@dataclass
class SeasonalWetSample:
    """In-season wet days of one site, split chronologically into thirds.

    Wet day j (0-based, chronological) goes to FIT when j % 3 == 0, TEST when
    j % 3 == 1 and SPARE when j % 3 == 2.
    """

    site_id: str
    season: str
    threshold: float
    wet_values: np.ndarray
    wet_dates: np.ndarray
    n_wds_mean: float
    lon: float = float("nan")
    lat: float = float("nan")
    elevation: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def fit_idx(self) -> np.ndarray:
        return np.arange(0, self.wet_values.size, 3)

    @property
    def test_idx(self) -> np.ndarray:
        return np.arange(1, self.wet_values.size, 3)

    @property
    def spare_idx(self) -> np.ndarray:
        return np.arange(2, self.wet_values.size, 3)

    @property
    def fit(self) -> np.ndarray:
        return self.wet_values[0::3]

    @property
    def test(self) -> np.ndarray:
        return self.wet_values[1::3]

    @property
    def spare(self) -> np.ndarray:
        return self.wet_values[2::3]

    @property
    def sufficient(self) -> bool:
        return self.fit.size >= MIN_FIT_VALUES


def seasonal_wet_sample(series: SiteSeries, season: str, threshold_u: float = DEFAULT_THRESHOLD) -> SeasonalWetSample:
    """Keep in-season days above ``threshold_u`` and count wet days per season.

    n_wds_mean uses complete season-years only (every calendar day present in
    the record, missing values allowed); missing days are excluded from the
    denominator so the wet-day rate stays unbiased.
    """
    if not threshold_u > 0:
        raise ValueError("threshold must be positive")
    in_season = season_mask(series.dates, season)
    values = np.asarray(series.values, dtype=float)
    observed = ~np.isnan(values)
    wet = in_season & observed & (np.where(observed, values, 0.0) > threshold_u)
    wet_values = values[wet]
    wet_dates = series.dates[wet]

    sy = season_year(series.dates[in_season])
    years, counts = np.unique(sy, return_counts=True)
    expected = np.array([season_length(season, int(y)) for y in years], dtype=int)
    complete_years = years[counts == expected]
    in_complete = np.isin(sy, complete_years)
    n_obs = int(np.sum(observed[in_season] & in_complete))
    n_wet = int(np.sum(wet[in_season] & in_complete))
    if complete_years.size and n_obs:
        mean_len = float(np.sum(expected[counts == expected])) / complete_years.size
        n_wds = n_wet / n_obs * mean_len
    else:
        n_wds = float("nan")

    sample = SeasonalWetSample(
        site_id=series.site_id, season=season, threshold=float(threshold_u),
        wet_values=wet_values, wet_dates=wet_dates, n_wds_mean=n_wds,
        lon=series.lon, lat=series.lat, elevation=series.elevation,
        metadata={"complete_seasons": int(complete_years.size),
                  "n_wds_basis": "complete seasons only",
                  "flags": sorted(series.flags)},
    )
    if not sample.sufficient:
        sample.metadata["excluded"] = "insufficient data"
    return sample
