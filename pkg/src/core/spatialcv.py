"""
Country-wise spatial cross-validation.

Countries are sorted by area (largest first, ties by code) and dealt to k
folds in turn; each fold configuration trains on k-2 consecutive folds,
validates on the next and tests on the one after.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple, Union

import pandas as pd

from .errors import ConfigError, CoverageError, DataError
from .raster import TileGrid, TileSpec
from src.utils.file_manager import atomic_write_text
from src.utils.validators import validate_input_path

logger = logging.getLogger(__name__)

COUNTRY_COLUMNS = ("code", "name", "area_km2")


@dataclass(frozen=True)
class CountryRecord:
    code: str
    name: str
    area_km2: float


def load_countries(path: Union[str, Path]) -> List[CountryRecord]:
    """
    Read a country table with columns code,name,area_km2.

    Codes are read verbatim ("NA" is Namibia, not a missing value).
    """
    ok, _, err = validate_input_path(path, "countries table")
    if not ok:
        raise ConfigError(err)
    df = pd.read_csv(path, dtype={"code": str, "name": str}, keep_default_na=False)
    missing = [c for c in COUNTRY_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}; found {list(df.columns)}")
    try:
        areas = pd.to_numeric(df["area_km2"], errors="raise")
    except (ValueError, TypeError) as e:
        raise DataError(f"{path}: non-numeric area: {e}") from e
    return [CountryRecord(str(c).strip(), str(n).strip(), float(a))
            for c, n, a in zip(df["code"], df["name"], areas)]


def save_countries(countries: Iterable[CountryRecord], path: Union[str, Path]) -> None:
    df = pd.DataFrame([(c.code, c.name, c.area_km2) for c in countries], columns=list(COUNTRY_COLUMNS))
    atomic_write_text(path, df.to_csv(index=False, lineterminator="\n"))


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: Dict[str, int]      # code -> fold id 1..k
    order: Tuple[str, ...]          # codes in area order
    names: Dict[str, str]

    def fold_of(self, code: str) -> int:
        try:
            return self.assignment[code]
        except KeyError:
            raise CoverageError(f"country '{code}' has no fold assignment") from None

    def countries_in(self, fold: int) -> List[str]:
        """Codes of one fold, largest country first."""
        return [c for c in self.order if self.assignment[c] == fold]

    def names_in(self, fold: int) -> List[str]:
        return [self.names.get(c, c) for c in self.countries_in(fold)]

    def to_dict(self) -> Dict:
        return {"k": self.k,
                "folds": {str(f): self.countries_in(f) for f in range(1, self.k + 1)},
                "assignment": dict(sorted(self.assignment.items())),
                "order": list(self.order),
                "names": dict(sorted(self.names.items()))}

    @classmethod
    def from_dict(cls, d: Dict) -> "FoldAssignment":
        try:
            return cls(int(d["k"]), {str(c): int(f) for c, f in d["assignment"].items()},
                       tuple(d["order"]), dict(d.get("names", {})))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid fold assignment: {e}") from e


def assign_folds(countries: Sequence[CountryRecord], k: int = 5) -> FoldAssignment:
    """Sort by area descending (ties by code) and assign folds cyclically."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    codes = [c.code for c in countries]
    dupes = sorted({c for c in codes if codes.count(c) > 1})
    if dupes:
        raise DataError(f"duplicate country codes: {dupes}")
    bad = [c.code for c in countries if not c.area_km2 > 0]
    if bad:
        raise DataError(f"countries with non-positive area: {bad}")
    if len(countries) < k:
        raise ConfigError(f"{len(countries)} countries cannot fill {k} folds")

    ranked = sorted(countries, key=lambda c: (-c.area_km2, c.code))
    assignment = {c.code: (i % k) + 1 for i, c in enumerate(ranked)}
    logger.info(f"Assigned {len(ranked)} countries to {k} folds")
    return FoldAssignment(k, assignment, tuple(c.code for c in ranked), {c.code: c.name for c in ranked})


@dataclass(frozen=True)
class FoldConfig:
    train: Tuple[int, ...]
    validation: int
    test: int

    def label(self) -> str:
        return f"({''.join(str(f) for f in self.train)}, {self.validation}, {self.test})"

    def __str__(self) -> str:
        return self.label()

    @property
    def name(self) -> str:
        """Filesystem-safe name, e.g. 'cv123-4-5'."""
        return f"cv{''.join(str(f) for f in self.train)}-{self.validation}-{self.test}"


def fold_configs(k: int = 5) -> List[FoldConfig]:
    """
    The k (train, validation, test) rotations.

    Rotation i trains on folds i+1..i+k-2, validates on i+k-1 and tests on
    i+k (all mod k, 1-based).
    """
    if k < 3:
        raise ConfigError(f"k must be >= 3 to hold train, validation and test folds, got {k}")
    configs = []
    for i in range(k):
        train = tuple((i + j) % k + 1 for j in range(k - 2))
        configs.append(FoldConfig(train, (i + k - 2) % k + 1, (i + k - 1) % k + 1))
    return configs


def config_for_test_fold(fold: int, k: int = 5) -> FoldConfig:
    for fc in fold_configs(k):
        if fc.test == fold:
            return fc
    raise ConfigError(f"fold {fold} outside 1..{k}")


class SplitTiles(NamedTuple):
    train: List[TileSpec]
    validation: List[TileSpec]
    test: List[TileSpec]


def tiles_for_split(grid: Union[TileGrid, Iterable[TileSpec]], fa: FoldAssignment, fc: FoldConfig) -> SplitTiles:
    """Route every tile to train, validation or test by its country's fold."""
    split = SplitTiles([], [], [])
    for tile in grid:
        fold = fa.fold_of(tile.country)
        if fold in fc.train:
            split.train.append(tile)
        elif fold == fc.validation:
            split.validation.append(tile)
        elif fold == fc.test:
            split.test.append(tile)
        else:
            raise ConfigError(f"fold {fold} is not part of configuration {fc}")
    return split
