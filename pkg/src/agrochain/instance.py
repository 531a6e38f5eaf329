"""Static problem data for the batch supply-chain planner.

An :class:`Instance` bundles everything the model builders consume: batch
production plants, warehouses, market regions, transport modes, the
day/week horizon, cleaning and risk parameters, and the weekly demand
scenarios. Instances are immutable and validated on construction, so they
can be shared freely between threads.

The on-disk representation is a YAML document with top-level sections
``sets``, ``plants``, ``warehouses``, ``markets``, ``modes``,
``durations``, ``risk`` and ``scenarios``; see ``data/case_study.yaml``
for the canonical example.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import math
import os
from dataclasses import dataclass
from typing import Any, IO, Mapping

import numpy as np
import yaml

__all__ = [
    "InstanceError",
    "InstanceParseError",
    "InstanceValidationError",
    "Plant",
    "Warehouse",
    "TransportMode",
    "DemandScenario",
    "Instance",
    "load_instance",
    "dump_instance",
    "case_study_instance",
]

DAYS_PER_WEEK = 7


class InstanceError(Exception):
    """Base class for instance document problems."""


class InstanceParseError(InstanceError):
    """The document is malformed (bad YAML, missing or unknown fields)."""


class InstanceValidationError(InstanceError):
    """A well-formed document violates an instance invariant."""


@dataclass(frozen=True)
class Plant:
    """A batch production plant. Costs per day resp. per mass unit."""

    name: str
    fixed_cost: float
    variable_cost: float
    holding_cost: float
    normal_batch_capacity: float
    max_batch_capacity: float
    initial_inventory: float
    batches_before_cleaning: int


@dataclass(frozen=True)
class Warehouse:
    name: str
    fixed_cost: float
    holding_cost: float
    max_capacity: float
    initial_storage: float


@dataclass(frozen=True)
class TransportMode:
    """One way of moving product over a link, paid per vehicle and day."""

    name: str
    shipping_cost: float
    min_vehicle_capacity: float
    max_vehicle_capacity: float
    max_vehicles_per_link_day: int


@dataclass(frozen=True)
class DemandScenario:
    """One demand scenario: its probability and a complete market-by-week
    demand table (``demand[market][week-1]``, weeks 1-based outside)."""

    probability: float
    demand: Mapping[str, tuple[float, ...]]

    def __post_init__(self):
        frozen = {k: tuple(float(x) for x in v) for k, v in self.demand.items()}
        object.__setattr__(self, "demand", frozen)


@dataclass(frozen=True)
class Instance:
    """Immutable, validated problem data.

    Index conventions follow the model: plants i, warehouses j, markets k
    and modes m are 1-based positions in the tuples below; days t run
    1..n_days and weeks 1..n_weeks with day 7*(week-1)+1 opening a week.
    """

    plants: tuple[Plant, ...]
    warehouses: tuple[Warehouse, ...]
    markets: tuple[str, ...]
    modes: tuple[TransportMode, ...]
    n_days: int
    n_weeks: int
    batch_days: int
    cleaning_days: int
    loss_cost_per_week: tuple[float, ...]
    loss_fraction_cap: float
    max_loss_weeks: int
    variance_cap: float
    scenarios: tuple[DemandScenario, ...]

    def __post_init__(self):
        object.__setattr__(self, "plants", tuple(self.plants))
        object.__setattr__(self, "warehouses", tuple(self.warehouses))
        object.__setattr__(self, "markets", tuple(self.markets))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(
            self, "loss_cost_per_week", tuple(float(x) for x in self.loss_cost_per_week)
        )
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        self.validate()

    # -- set sizes ------------------------------------------------------

    @property
    def n_plants(self) -> int:
        return len(self.plants)

    @property
    def n_warehouses(self) -> int:
        return len(self.warehouses)

    @property
    def n_markets(self) -> int:
        return len(self.markets)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def probabilities(self) -> tuple[float, ...]:
        return tuple(s.probability for s in self.scenarios)

    # -- derived views ---------------------------------------------------

    def week_of_day(self, t: int) -> int:
        """Week containing day t (both 1-based)."""
        return (t - 1) // DAYS_PER_WEEK + 1

    def days_of_week(self, week: int) -> range:
        """Days belonging to the given week, 1-based inclusive range."""
        start = DAYS_PER_WEEK * (week - 1) + 1
        return range(start, start + DAYS_PER_WEEK)

    def demand(self, market: int, week: int, scenario: int) -> float:
        """Demand for 1-based market, week and scenario indices."""
        name = self.markets[market - 1]
        return self.scenarios[scenario - 1].demand[name][week - 1]

    def demand_array(self) -> np.ndarray:
        """Demand as an array of shape (markets, weeks, scenarios)."""
        out = np.empty((self.n_markets, self.n_weeks, self.n_scenarios))
        for k, name in enumerate(self.markets):
            for s, scen in enumerate(self.scenarios):
                out[k, :, s] = scen.demand[name]
        return out

    def expected_week_demand(self, week: int) -> float:
        """Probability-weighted total demand (all markets) in a week."""
        return sum(
            scen.probability * sum(scen.demand[m][week - 1] for m in self.markets)
            for scen in self.scenarios
        )

    def weekly_loss_cap(self, week: int) -> float:
        """Upper bound on weekly demand loss when the week's loss indicator
        is on: loss_fraction_cap times the expected total weekly demand."""
        return self.loss_fraction_cap * self.expected_week_demand(week)

    # -- overrides --------------------------------------------------------

    def with_overrides(
        self,
        *,
        batches_before_cleaning: int | None = None,
        loss_fraction_cap: float | None = None,
        max_loss_weeks: int | None = None,
        variance_cap: float | None = None,
        max_vehicles_per_link_day: int | None = None,
    ) -> "Instance":
        """Return a copy with selected risk/fleet parameters replaced.

        These are exactly the parameters the case study leaves to toolkit
        defaults, so the CLI exposes each of them as a flag.
        """
        kwargs: dict[str, Any] = {}
        if batches_before_cleaning is not None:
            kwargs["plants"] = tuple(
                dataclasses.replace(p, batches_before_cleaning=batches_before_cleaning)
                for p in self.plants
            )
        if loss_fraction_cap is not None:
            kwargs["loss_fraction_cap"] = loss_fraction_cap
        if max_loss_weeks is not None:
            kwargs["max_loss_weeks"] = max_loss_weeks
        if variance_cap is not None:
            kwargs["variance_cap"] = variance_cap
        if max_vehicles_per_link_day is not None:
            kwargs["modes"] = tuple(
                dataclasses.replace(m, max_vehicles_per_link_day=max_vehicles_per_link_day)
                for m in self.modes
            )
        return dataclasses.replace(self, **kwargs)

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        """Check every instance invariant; raise InstanceValidationError
        naming the violated invariant and the offending entity."""

        def bad(msg: str):
            raise InstanceValidationError(msg)

        if not self.plants:
            bad("at least one plant is required")
        if not self.warehouses:
            bad("at least one warehouse is required")
        if not self.markets:
            bad("at least one market is required")
        if not self.modes:
            bad("at least one transport mode is required")
        if not self.scenarios:
            bad("at least one scenario is required")

        if self.n_days != DAYS_PER_WEEK * self.n_weeks:
            bad(
                f"|T| must equal 7·|T'| (got {self.n_days} days for "
                f"{self.n_weeks} weeks)"
            )
        if self.batch_days < 1:
            bad(f"batch_days must be >= 1 (got {self.batch_days})")
        if self.cleaning_days < 1:
            bad(f"cleaning_days must be >= 1 (got {self.cleaning_days})")

        for p in self.plants:
            if p.batches_before_cleaning < 1:
                bad(f"plant {p.name}: batches_before_cleaning must be >= 1")
            if p.normal_batch_capacity > p.max_batch_capacity:
                bad(
                    f"plant {p.name}: normal_batch_capacity "
                    f"{p.normal_batch_capacity} exceeds max_batch_capacity "
                    f"{p.max_batch_capacity}"
                )
            for fld in (
                "fixed_cost",
                "variable_cost",
                "holding_cost",
                "normal_batch_capacity",
                "max_batch_capacity",
                "initial_inventory",
            ):
                if getattr(p, fld) < 0:
                    bad(f"plant {p.name}: {fld} must be >= 0")

        for w in self.warehouses:
            for fld in ("fixed_cost", "holding_cost", "max_capacity", "initial_storage"):
                if getattr(w, fld) < 0:
                    bad(f"warehouse {w.name}: {fld} must be >= 0")

        for m in self.modes:
            if m.min_vehicle_capacity > m.max_vehicle_capacity:
                bad(
                    f"mode {m.name}: min_vehicle_capacity "
                    f"{m.min_vehicle_capacity} exceeds max_vehicle_capacity "
                    f"{m.max_vehicle_capacity}"
                )
            for fld in ("shipping_cost", "min_vehicle_capacity", "max_vehicle_capacity"):
                if getattr(m, fld) < 0:
                    bad(f"mode {m.name}: {fld} must be >= 0")
            if m.max_vehicles_per_link_day < 0:
                bad(f"mode {m.name}: max_vehicles_per_link_day must be >= 0")

        if len(self.loss_cost_per_week) != self.n_weeks:
            bad(
                f"loss_cost_per_week has {len(self.loss_cost_per_week)} entries "
                f"for {self.n_weeks} weeks"
            )
        if any(r < 0 for r in self.loss_cost_per_week):
            bad("loss_cost_per_week entries must be >= 0")
        if self.loss_fraction_cap < 0:
            bad(f"loss_fraction_cap must be >= 0 (got {self.loss_fraction_cap})")
        if not 0 <= self.max_loss_weeks <= self.n_weeks:
            bad(
                f"max_loss_weeks must lie in [0, {self.n_weeks}] "
                f"(got {self.max_loss_weeks})"
            )
        if self.variance_cap < 0:
            bad(f"variance_cap must be >= 0 (got {self.variance_cap})")

        total = math.fsum(s.probability for s in self.scenarios)
        if any(s.probability <= 0 for s in self.scenarios):
            bad("scenario probabilities must be > 0")
        if abs(total - 1.0) > 1e-9:
            bad(f"probabilities do not sum to 1 (sum = {total})")

        market_set = set(self.markets)
        if len(market_set) != len(self.markets):
            bad("market names must be unique")
        for idx, scen in enumerate(self.scenarios, start=1):
            if set(scen.demand) != market_set:
                missing = sorted(market_set - set(scen.demand))
                extra = sorted(set(scen.demand) - market_set)
                bad(
                    f"scenario {idx}: demand table must cover exactly the "
                    f"market set (missing {missing}, unknown {extra})"
                )
            for name, row in scen.demand.items():
                if len(row) != self.n_weeks:
                    bad(
                        f"scenario {idx}, market {name}: demand row has "
                        f"{len(row)} weeks, expected {self.n_weeks}"
                    )
                if any(d < 0 for d in row):
                    bad(f"scenario {idx}, market {name}: demands must be >= 0")


# ---------------------------------------------------------------------------
# document parsing / serialization
# ---------------------------------------------------------------------------

_PLANT_FIELDS = (
    "name",
    "fixed_cost",
    "variable_cost",
    "holding_cost",
    "normal_batch_capacity",
    "max_batch_capacity",
    "initial_inventory",
    "batches_before_cleaning",
)
_WAREHOUSE_FIELDS = ("name", "fixed_cost", "holding_cost", "max_capacity", "initial_storage")
_MODE_FIELDS = (
    "name",
    "shipping_cost",
    "min_vehicle_capacity",
    "max_vehicle_capacity",
    "max_vehicles_per_link_day",
)
_SECTIONS = ("sets", "plants", "warehouses", "markets", "modes", "durations", "risk", "scenarios")


def _require(mapping: Mapping[str, Any], key: str, where: str) -> Any:
    if not isinstance(mapping, Mapping):
        raise InstanceParseError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    if key not in mapping:
        raise InstanceParseError(f"{where}: missing required field '{key}'")
    return mapping[key]


def _check_known(mapping: Mapping[str, Any], allowed: tuple[str, ...], where: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise InstanceParseError(f"{where}: unknown field(s) {unknown}")


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _integer(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InstanceParseError(f"{where}: expected an integer, got {value!r}")
    return value


def _parse_entity(raw: Mapping[str, Any], fields: tuple[str, ...], cls, where: str):
    _check_known(raw, fields, where)
    kwargs = {}
    for fld in fields:
        value = _require(raw, fld, where)
        if fld == "name":
            kwargs[fld] = str(value)
        elif fld in ("batches_before_cleaning", "max_vehicles_per_link_day"):
            kwargs[fld] = _integer(value, f"{where}.{fld}")
        else:
            kwargs[fld] = _number(value, f"{where}.{fld}")
    return cls(**kwargs)


def _instance_from_document(doc: Any) -> Instance:
    if not isinstance(doc, Mapping):
        raise InstanceParseError("document root must be a mapping of sections")
    _check_known(doc, _SECTIONS, "document")
    for section in _SECTIONS:
        _require(doc, section, "document")

    sets = doc["sets"]
    _check_known(sets, ("days", "weeks"), "sets")
    n_days = _integer(_require(sets, "days", "sets"), "sets.days")
    n_weeks = _integer(_require(sets, "weeks", "sets"), "sets.weeks")

    plants = tuple(
        _parse_entity(raw, _PLANT_FIELDS, Plant, f"plants[{i}]")
        for i, raw in enumerate(doc["plants"])
    )
    warehouses = tuple(
        _parse_entity(raw, _WAREHOUSE_FIELDS, Warehouse, f"warehouses[{i}]")
        for i, raw in enumerate(doc["warehouses"])
    )
    modes = tuple(
        _parse_entity(raw, _MODE_FIELDS, TransportMode, f"modes[{i}]")
        for i, raw in enumerate(doc["modes"])
    )
    markets = tuple(str(m) for m in doc["markets"])

    durations = doc["durations"]
    _check_known(durations, ("batch_days", "cleaning_days"), "durations")
    batch_days = _integer(_require(durations, "batch_days", "durations"), "durations.batch_days")
    cleaning_days = _integer(
        _require(durations, "cleaning_days", "durations"), "durations.cleaning_days"
    )

    risk = doc["risk"]
    _check_known(
        risk,
        ("loss_cost_per_week", "loss_fraction_cap", "max_loss_weeks", "variance_cap"),
        "risk",
    )
    raw_loss_cost = _require(risk, "loss_cost_per_week", "risk")
    if isinstance(raw_loss_cost, (int, float)) and not isinstance(raw_loss_cost, bool):
        loss_cost = tuple(float(raw_loss_cost) for _ in range(n_weeks))
    elif isinstance(raw_loss_cost, list):
        loss_cost = tuple(_number(x, "risk.loss_cost_per_week") for x in raw_loss_cost)
    else:
        raise InstanceParseError("risk.loss_cost_per_week: expected a number or a list")
    loss_fraction_cap = _number(_require(risk, "loss_fraction_cap", "risk"), "risk.loss_fraction_cap")
    max_loss_weeks = _integer(_require(risk, "max_loss_weeks", "risk"), "risk.max_loss_weeks")
    raw_cap = _require(risk, "variance_cap", "risk")
    if raw_cap == ".inf" or raw_cap == "inf":
        variance_cap = math.inf
    else:
        variance_cap = _number(raw_cap, "risk.variance_cap")

    scenarios = []
    for i, raw in enumerate(doc["scenarios"]):
        where = f"scenarios[{i}]"
        _check_known(raw, ("probability", "demand"), where)
        probability = _number(_require(raw, "probability", where), f"{where}.probability")
        demand_raw = _require(raw, "demand", where)
        if not isinstance(demand_raw, Mapping):
            raise InstanceParseError(f"{where}.demand: expected a market->weekly-list mapping")
        demand = {}
        for market, row in demand_raw.items():
            if not isinstance(row, list):
                raise InstanceParseError(f"{where}.demand.{market}: expected a list of weekly demands")
            demand[str(market)] = tuple(_number(x, f"{where}.demand.{market}") for x in row)
        scenarios.append(DemandScenario(probability=probability, demand=demand))

    return Instance(
        plants=plants,
        warehouses=warehouses,
        markets=markets,
        modes=modes,
        n_days=n_days,
        n_weeks=n_weeks,
        batch_days=batch_days,
        cleaning_days=cleaning_days,
        loss_cost_per_week=loss_cost,
        loss_fraction_cap=loss_fraction_cap,
        max_loss_weeks=max_loss_weeks,
        variance_cap=variance_cap,
        scenarios=tuple(scenarios),
    )


def _instance_to_document(inst: Instance) -> dict:
    def entity(obj, fields):
        return {f: getattr(obj, f) for f in fields}

    return {
        "sets": {"days": inst.n_days, "weeks": inst.n_weeks},
        "plants": [entity(p, _PLANT_FIELDS) for p in inst.plants],
        "warehouses": [entity(w, _WAREHOUSE_FIELDS) for w in inst.warehouses],
        "markets": list(inst.markets),
        "modes": [entity(m, _MODE_FIELDS) for m in inst.modes],
        "durations": {"batch_days": inst.batch_days, "cleaning_days": inst.cleaning_days},
        "risk": {
            "loss_cost_per_week": list(inst.loss_cost_per_week),
            "loss_fraction_cap": inst.loss_fraction_cap,
            "max_loss_weeks": inst.max_loss_weeks,
            "variance_cap": inst.variance_cap,
        },
        "scenarios": [
            {
                "probability": s.probability,
                "demand": {m: list(s.demand[m]) for m in inst.markets},
            }
            for s in inst.scenarios
        ],
    }


def load_instance(source: str | os.PathLike | bytes | IO) -> Instance:
    """Parse and validate an instance document.

    ``source`` may be a filesystem path, raw document bytes, or a readable
    file object. Raises :class:`InstanceParseError` for malformed documents
    and :class:`InstanceValidationError` for invariant violations.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InstanceParseError(f"invalid YAML: {exc}") from exc
    return _instance_from_document(doc)


def dump_instance(inst: Instance) -> str:
    """Serialize an instance to canonical YAML document text."""
    return yaml.safe_dump(_instance_to_document(inst), sort_keys=False)


def bundled_instance_names() -> list[str]:
    """Names of the instance documents shipped with the package."""
    root = importlib.resources.files("agrochain.data")
    return sorted(
        entry.name[: -len(".yaml")]
        for entry in root.iterdir()
        if entry.name.endswith(".yaml")
    )


def bundled_instance(name: str) -> Instance:
    """Load a bundled instance by name (e.g. 'case_study')."""
    ref = importlib.resources.files("agrochain.data").joinpath(f"{name}.yaml")
    if not ref.is_file():
        raise InstanceError(
            f"no bundled instance {name!r}; available: {bundled_instance_names()}"
        )
    return load_instance(ref.read_bytes())


def case_study_instance() -> Instance:
    """The bundled case-study instance (loaded from the canonical document,
    so it passes the same validation as any user-provided file)."""
    return bundled_instance("case_study")
