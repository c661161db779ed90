"""Option-chain ingestion, universe filtering and feature construction.

Input CSVs follow the schema
``quote_date,expiry,strike,right,best_bid,best_ask,underlying_close`` with
ISO-8601 dates.  Ingestion is lossless-or-flagged: every input row either
parses into a quote or lands in the rejects list with a reason.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .analytics import (
    IVConvergenceError,
    NoArbitrageBoundsError,
    OptionSpec,
    bs_greeks,
    implied_vol,
)
from .market import DAYS_PER_YEAR, EpisodeFeatures, HedgeEpisode, PricePath

CHAIN_COLUMNS = [
    "quote_date",
    "expiry",
    "strike",
    "right",
    "best_bid",
    "best_ask",
    "underlying_close",
]
TRADING_DAYS_PER_YEAR = 252.0

__all__ = [
    "CHAIN_COLUMNS",
    "TRADING_DAYS_PER_YEAR",
    "ChainSchemaError",
    "ChainFormatError",
    "OptionQuoteRow",
    "RejectedRow",
    "ChainLoadResult",
    "ChainEpisode",
    "UnderlierHistory",
    "FeatureVector",
    "FeaturedEpisode",
    "ResidualSample",
    "ResidualDataset",
    "load_chain_csv",
    "filter_universe",
    "historical_vol",
    "compute_features",
    "residual_dataset",
    "episodes_to_env",
    "episode_to_chain_rows",
    "write_chain_csv",
]


class ChainSchemaError(ValueError):
    """The CSV header does not match the chain schema."""


class ChainFormatError(ValueError):
    """The file cannot be read as a chain CSV at all."""


@dataclass(frozen=True)
class OptionQuoteRow:
    """One parsed quote; mid is the (bid + ask) / 2 price approximation."""

    quote_date: date
    expiry: date
    strike: float
    right: str
    best_bid: float
    best_ask: float
    underlying_close: float
    mid: float


@dataclass
class RejectedRow:
    raw: dict[str, str]
    reason: str


@dataclass
class ChainLoadResult:
    rows: list[OptionQuoteRow]
    rejects: list[RejectedRow]


@dataclass
class ChainEpisode:
    """One contract's daily series after universe filtering."""

    strike: float
    expiry: date
    dates: list[date]
    mids: np.ndarray
    underlying: np.ndarray
    days_to_expiry: np.ndarray
    has_gaps: bool


@dataclass
class UnderlierHistory:
    """Daily closes of the underlying used for historical-vol features."""

    dates: list[date]
    closes: np.ndarray

    def trailing_closes(self, asof: date, n: int) -> np.ndarray:
        """The last n closes at or before ``asof`` (raises if unavailable)."""
        idx = [i for i, d in enumerate(self.dates) if d <= asof]
        if len(idx) < n:
            raise ValueError(f"need {n} closes at or before {asof}, have {len(idx)}")
        return self.closes[idx[-n:]]


@dataclass(frozen=True)
class FeatureVector:
    """State variables of one (contract, date) observation."""

    tau: float
    moneyness: float
    sigma_impl: float
    vega: float
    theta: float
    gamma: float
    sigma_20: float
    sigma_30: float


@dataclass
class FeaturedEpisode:
    """ChainEpisode plus per-row features; rows that failed get a flag instead."""

    episode: ChainEpisode
    features: list[FeatureVector | None]
    flags: list[str | None]

    @property
    def complete(self) -> bool:
        return all(f is None for f in self.flags)


def _parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def load_chain_csv(path: str | Path) -> ChainLoadResult:
    """Parse a chain CSV; malformed rows go to rejects, never silently dropped."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if header is None:
                raise ChainFormatError(f"{path} is empty or has no header")
            missing = [c for c in CHAIN_COLUMNS if c not in header]
            if missing:
                raise ChainSchemaError(f"{path} missing columns: {', '.join(missing)}")
            raw_rows = list(reader)
    except UnicodeDecodeError as exc:
        raise ChainFormatError(f"{path} is not a text CSV: {exc}") from exc
    except csv.Error as exc:
        raise ChainFormatError(f"{path} is not parseable as CSV: {exc}") from exc

    rows: list[OptionQuoteRow] = []
    rejects: list[RejectedRow] = []
    for raw in raw_rows:
        reason = None
        try:
            quote_date = _parse_date(raw["quote_date"])
            expiry = _parse_date(raw["expiry"])
            strike = float(raw["strike"])
            bid = float(raw["best_bid"])
            ask = float(raw["best_ask"])
            underlying = float(raw["underlying_close"])
        except (ValueError, TypeError):
            rejects.append(RejectedRow(raw=dict(raw), reason="unparseable field"))
            continue
        right = (raw["right"] or "").strip().lower()
        if right not in ("call", "c"):
            reason = "not a call"
        elif strike <= 0.0:
            reason = "nonpositive strike"
        elif underlying <= 0.0:
            reason = "nonpositive underlying"
        elif bid < 0.0:
            reason = "negative bid"
        elif ask < bid:
            reason = "crossed quote"
        elif expiry < quote_date:
            reason = "expiry before quote date"
        if reason is not None:
            rejects.append(RejectedRow(raw=dict(raw), reason=reason))
            continue
        rows.append(
            OptionQuoteRow(
                quote_date=quote_date,
                expiry=expiry,
                strike=strike,
                right="call",
                best_bid=bid,
                best_ask=ask,
                underlying_close=underlying,
                mid=0.5 * (bid + ask),
            )
        )
    return ChainLoadResult(rows=rows, rejects=rejects)


def _has_business_day_gap(dates: list[date]) -> bool:
    d = np.array([np.datetime64(x) for x in dates])
    if d.size < 2:
        return False
    return bool(np.any(np.busday_count(d[:-1], d[1:]) > 1))


def filter_universe(
    rows: list[OptionQuoteRow],
    min_days: int = 15,
    max_days: int = 40,
    moneyness_band: float = 0.20,
) -> list[ChainEpisode]:
    """Keep contracts starting 15-40 days from expiry, rows within +-20% moneyness.

    Contracts are grouped by (expiry, strike); observation rows whose
    underlying strays more than the band from the strike are dropped row-wise.
    """
    groups: dict[tuple[date, float], list[OptionQuoteRow]] = {}
    for row in rows:
        groups.setdefault((row.expiry, row.strike), []).append(row)

    episodes: list[ChainEpisode] = []
    for (expiry, strike), contract_rows in sorted(groups.items()):
        contract_rows = sorted(contract_rows, key=lambda r: r.quote_date)
        initial_dte = (expiry - contract_rows[0].quote_date).days
        if not min_days <= initial_dte <= max_days:
            continue
        kept = [
            r for r in contract_rows if abs(r.underlying_close / strike - 1.0) <= moneyness_band
        ]
        if len(kept) < 2:
            continue
        dates = [r.quote_date for r in kept]
        episodes.append(
            ChainEpisode(
                strike=strike,
                expiry=expiry,
                dates=dates,
                mids=np.array([r.mid for r in kept]),
                underlying=np.array([r.underlying_close for r in kept]),
                days_to_expiry=np.array([(expiry - d).days for d in dates]),
                has_gaps=_has_business_day_gap(dates),
            )
        )
    return episodes


def historical_vol(closes: np.ndarray, window: int) -> float:
    """Annualized std of the trailing ``window`` daily log returns (n-1 divisor)."""
    closes = np.asarray(closes, dtype=float)
    if closes.size < window + 1:
        raise ValueError(f"need at least {window + 1} closes, got {closes.size}")
    if np.any(closes <= 0.0):
        raise ValueError("closes must be positive")
    returns = np.diff(np.log(closes[-(window + 1):]))
    return float(returns.std(ddof=1) * math.sqrt(TRADING_DAYS_PER_YEAR))


def compute_features(
    episode: ChainEpisode,
    underlier: UnderlierHistory,
    days_per_year: float = DAYS_PER_YEAR,
) -> FeaturedEpisode:
    """Per-row state features; rows where the vol inversion fails get flagged."""
    features: list[FeatureVector | None] = []
    flags: list[str | None] = []
    for i, quote_date in enumerate(episode.dates):
        tau = float(episode.days_to_expiry[i]) / days_per_year
        spot = float(episode.underlying[i])
        mid = float(episode.mids[i])
        try:
            sigma_20 = historical_vol(underlier.trailing_closes(quote_date, 21), 20)
            sigma_30 = historical_vol(underlier.trailing_closes(quote_date, 31), 30)
        except ValueError as exc:
            features.append(None)
            flags.append(f"history: {exc}")
            continue
        if tau <= 0.0:
            # expiry row: intrinsic value, no implied vol; greeks degenerate
            features.append(
                FeatureVector(
                    tau=0.0,
                    moneyness=spot / episode.strike,
                    sigma_impl=sigma_20,
                    vega=0.0,
                    theta=0.0,
                    gamma=0.0,
                    sigma_20=sigma_20,
                    sigma_30=sigma_30,
                )
            )
            flags.append(None)
            continue
        spec = OptionSpec(strike=episode.strike, time_to_maturity=tau)
        try:
            sigma_impl = implied_vol(mid, spot, spec)
        except (NoArbitrageBoundsError, IVConvergenceError) as exc:
            features.append(None)
            flags.append(f"implied vol: {exc}")
            continue
        greeks = bs_greeks(spot, spec, sigma_impl)
        features.append(
            FeatureVector(
                tau=tau,
                moneyness=spot / episode.strike,
                sigma_impl=sigma_impl,
                vega=greeks.vega,
                theta=greeks.theta,
                gamma=greeks.gamma,
                sigma_20=sigma_20,
                sigma_30=sigma_30,
            )
        )
        flags.append(None)
    return FeaturedEpisode(episode=episode, features=features, flags=flags)


FEATURE_NAMES = (
    "tau",
    "moneyness",
    "sigma_impl",
    "vega",
    "theta",
    "gamma",
    "sigma_20",
    "sigma_30",
)


@dataclass(frozen=True)
class ResidualSample:
    """One regression sample of the hedging-residual boosting problem."""

    y: float
    x: tuple[float, ...]  # feature_k * (S_{t+1} - S_t), FEATURE_NAMES order


@dataclass
class ResidualDataset:
    samples: list[ResidualSample]
    correlation: np.ndarray  # (1 + n_features) square, y first
    labels: tuple[str, ...]


def residual_dataset(featured: list[FeaturedEpisode]) -> ResidualDataset:
    """Delta-hedge residuals y = C_t - C_{t+1} + delta (S_{t+1} - S_t) and
    the feature-times-price-move regressors, with their Pearson matrix."""
    samples: list[ResidualSample] = []
    for fe in featured:
        ep = fe.episode
        for t in range(len(ep.dates) - 1):
            f = fe.features[t]
            if f is None or fe.features[t + 1] is None:
                continue
            if (ep.dates[t + 1] - ep.dates[t]).days <= 0:
                continue
            d_spot = float(ep.underlying[t + 1] - ep.underlying[t])
            spec = OptionSpec(strike=ep.strike, time_to_maturity=f.tau)
            delta = bs_greeks(float(ep.underlying[t]), spec, f.sigma_impl).delta
            y = float(ep.mids[t] - ep.mids[t + 1] + delta * d_spot)
            x = tuple(getattr(f, name) * d_spot for name in FEATURE_NAMES)
            samples.append(ResidualSample(y=y, x=x))
    if len(samples) < 2:
        raise ValueError("need at least two residual samples")
    matrix = np.array([[s.y, *s.x] for s in samples])
    correlation = np.corrcoef(matrix, rowvar=False)
    return ResidualDataset(
        samples=samples, correlation=correlation, labels=("y", *FEATURE_NAMES)
    )


def episodes_to_env(
    featured: list[FeaturedEpisode],
    include_gapped: bool = False,
    days_per_year: float = DAYS_PER_YEAR,
) -> list[HedgeEpisode]:
    """Bridge ingested contracts to hedging episodes (market mids as option prices).

    Episodes with date gaps are excluded unless ``include_gapped``; episodes
    with any flagged row are always excluded.  Settlement uses the final
    observed mid, so contracts need not run to expiry.
    """
    out: list[HedgeEpisode] = []
    for fe in featured:
        ep = fe.episode
        if not fe.complete:
            continue
        if ep.has_gaps and not include_gapped:
            continue
        times = np.array([(d - ep.dates[0]).days for d in ep.dates], dtype=float) / days_per_year
        taus = ep.days_to_expiry.astype(float) / days_per_year
        feats = fe.features
        out.append(
            HedgeEpisode(
                path=PricePath(times=times, prices=ep.underlying.copy(), seed=0),
                spec=OptionSpec(strike=ep.strike, time_to_maturity=float(taus[0])),
                option_prices=ep.mids.copy(),
                steps_per_day=1,
                premium=float(ep.mids[0]),
                taus=taus,
                sigma=None,
                features=EpisodeFeatures(
                    sigma_impl=np.array([f.sigma_impl for f in feats]),
                    sigma_20=np.array([f.sigma_20 for f in feats]),
                    sigma_30=np.array([f.sigma_30 for f in feats]),
                    gamma=np.array([f.gamma for f in feats]),
                    theta=np.array([f.theta for f in feats]),
                    vega=np.array([f.vega for f in feats]),
                ),
            )
        )
    return out


def episode_to_chain_rows(
    episode: HedgeEpisode, start: date, days_per_year: float = DAYS_PER_YEAR
) -> list[dict[str, str]]:
    """Serialize a simulated episode as chain-CSV rows (bid = ask = BS value).

    Quote dates advance one calendar day per daily step so the serialized
    days-to-expiry reproduce the simulation taus exactly.
    """
    if episode.steps_per_day != 1:
        raise ValueError("chain serialization requires daily episodes")
    maturity_days = int(round(episode.taus[0] * days_per_year))
    expiry = start.fromordinal(start.toordinal() + maturity_days)
    rows = []
    for i in range(episode.n_nodes):
        quote_date = start.fromordinal(start.toordinal() + i)
        price = float(episode.option_prices[i])
        rows.append(
            {
                "quote_date": quote_date.isoformat(),
                "expiry": expiry.isoformat(),
                "strike": repr(float(episode.spec.strike)),
                "right": "call",
                "best_bid": repr(price),
                "best_ask": repr(price),
                "underlying_close": repr(float(episode.path.prices[i])),
            }
        )
    return rows


def write_chain_csv(path: str | Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CHAIN_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
