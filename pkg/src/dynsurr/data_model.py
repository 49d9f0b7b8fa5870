"""Panel-data containers, blip feature maps, and dataset file I/O.

A dataset mixes two kinds of unit trajectories:

* experimental units: initial state ``S_0``, one treatment ``T_1``, the
  next-period state ``S_1``, and (optionally) the period-1 outcome;
* observational units: ``S_0`` followed by ``M`` complete periods of
  ``(T_t, S_t, Y_t)``.

Everything downstream (learners, scores, estimators) consumes the dense
array views exposed by :class:`PanelDataset`; the per-unit trajectory
objects exist for validation, file I/O, and row-level inspection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import (
    DimensionMismatch,
    DuplicatePeriod,
    MalformedRow,
    MissingOutcome,
    SettingMissing,
)


class Setting(str, Enum):
    EXPERIMENTAL = "e"
    OBSERVATIONAL = "o"


@dataclass(frozen=True)
class PeriodRecord:
    """One period of a trajectory. ``outcome`` is None when unobserved."""

    t: int
    treatment: np.ndarray
    surrogates: np.ndarray
    outcome: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "treatment", np.asarray(self.treatment, dtype=float))
        object.__setattr__(self, "surrogates", np.asarray(self.surrogates, dtype=float))
        if self.t < 1:
            raise DimensionMismatch(f"period index must be >= 1, got {self.t}")


@dataclass(frozen=True)
class UnitTrajectory:
    unit_id: str
    setting: Setting
    s0: np.ndarray
    periods: tuple[PeriodRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "s0", np.asarray(self.s0, dtype=float))
        object.__setattr__(self, "periods", tuple(self.periods))
        expected = 1
        for rec in self.periods:
            if rec.t != expected:
                raise DuplicatePeriod(
                    f"unit {self.unit_id}: period sequence must be 1..M without "
                    f"gaps or repeats, found {rec.t} where {expected} expected"
                )
            expected += 1
        p = self.s0.shape[0]
        for rec in self.periods:
            if rec.surrogates.shape[0] != p:
                raise DimensionMismatch(
                    f"unit {self.unit_id}: surrogate dim {rec.surrogates.shape[0]} "
                    f"!= initial state dim {p}"
                )
        if self.setting is Setting.OBSERVATIONAL:
            missing = [rec.t for rec in self.periods if rec.outcome is None]
            if missing:
                raise MissingOutcome(
                    f"observational unit {self.unit_id} lacks outcomes at periods {missing}"
                )
        elif len(self.periods) != 1:
            raise DuplicatePeriod(
                f"experimental unit {self.unit_id} must have exactly 1 period, "
                f"got {len(self.periods)}"
            )


# ---------------------------------------------------------------------------
# Feature maps for blip functions
# ---------------------------------------------------------------------------

class FeatureMapKind(str, Enum):
    IDENTITY = "identity"
    LINEAR = "linear"
    TREATMENT_STATE_INTERACTION = "interaction"


@dataclass(frozen=True)
class FeatureMapSpec:
    """A map phi(treatment, state) with phi(0, state) = 0 for every state.

    * ``identity``: phi(tau, s) = tau.
    * ``linear``: phi(tau, s) = matrix @ tau.
    * ``interaction``: phi = concat(tau, [tau[i] * s[j] for (i, j) in pairs]).
    """

    kind: FeatureMapKind
    treat_dim: int
    matrix: Optional[np.ndarray] = None
    pairs: tuple[tuple[int, int], ...] = ()

    @staticmethod
    def identity(treat_dim: int) -> "FeatureMapSpec":
        return FeatureMapSpec(FeatureMapKind.IDENTITY, treat_dim)

    @staticmethod
    def linear(matrix: np.ndarray) -> "FeatureMapSpec":
        matrix = np.asarray(matrix, dtype=float)
        return FeatureMapSpec(FeatureMapKind.LINEAR, matrix.shape[1], matrix=matrix)

    @staticmethod
    def interaction(treat_dim: int, pairs: Iterable[tuple[int, int]]) -> "FeatureMapSpec":
        return FeatureMapSpec(
            FeatureMapKind.TREATMENT_STATE_INTERACTION, treat_dim,
            pairs=tuple((int(i), int(j)) for i, j in pairs),
        )

    @property
    def output_dim(self) -> int:
        if self.kind is FeatureMapKind.IDENTITY:
            return self.treat_dim
        if self.kind is FeatureMapKind.LINEAR:
            return self.matrix.shape[0]
        return self.treat_dim + len(self.pairs)


def eval_feature_map(spec: FeatureMapSpec, tau: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Evaluate phi on one pair or on batches.

    ``tau`` may be (k,) or (n, k); ``s`` correspondingly (p,) or (n, p).
    Returns (d,) or (n, d).
    """
    tau = np.asarray(tau, dtype=float)
    s = np.asarray(s, dtype=float)
    single = tau.ndim == 1
    tau2 = np.atleast_2d(tau)
    s2 = np.atleast_2d(s)
    if tau2.shape[1] != spec.treat_dim:
        raise DimensionMismatch(
            f"treatment dim {tau2.shape[1]} != feature map treat_dim {spec.treat_dim}"
        )
    if spec.kind is FeatureMapKind.IDENTITY:
        out = tau2
    elif spec.kind is FeatureMapKind.LINEAR:
        out = tau2 @ spec.matrix.T
    else:
        cols = [tau2]
        for (i, j) in spec.pairs:
            if j >= s2.shape[1]:
                raise DimensionMismatch(
                    f"interaction pair ({i},{j}) out of range for state dim {s2.shape[1]}"
                )
            cols.append((tau2[:, i] * s2[:, j])[:, None])
        out = np.hstack(cols)
    return out[0] if single else out


@dataclass(frozen=True)
class FeatureMaps:
    """The period-1 experimental map and the shared observational map."""

    e1: FeatureMapSpec
    o: FeatureMapSpec

    @staticmethod
    def identity(k_e: int, k_o: int) -> "FeatureMaps":
        return FeatureMaps(FeatureMapSpec.identity(k_e), FeatureMapSpec.identity(k_o))

    @property
    def d_e(self) -> int:
        return self.e1.output_dim

    @property
    def d_o(self) -> int:
        return self.o.output_dim


# ---------------------------------------------------------------------------
# Dense array views
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentalArrays:
    unit_ids: tuple[str, ...]
    s0: np.ndarray        # (n_e, p)
    t1: np.ndarray        # (n_e, k_e)
    s1: np.ndarray        # (n_e, p)
    y1: np.ndarray        # (n_e,), NaN when absent

    @property
    def n(self) -> int:
        return self.s0.shape[0]


@dataclass(frozen=True)
class ObservationalArrays:
    unit_ids: tuple[str, ...]
    s0: np.ndarray        # (n_o, p)
    treatments: np.ndarray  # (n_o, M, k_o)
    surrogates: np.ndarray  # (n_o, M, p)
    outcomes: np.ndarray    # (n_o, M)

    @property
    def n(self) -> int:
        return self.s0.shape[0]

    @property
    def M(self) -> int:
        return self.treatments.shape[1]

    def state(self, t: int) -> np.ndarray:
        """S_t: the surrogate vector at period t (t=0 gives S_0)."""
        return self.s0 if t == 0 else self.surrogates[:, t - 1, :]

    def ybar(self) -> np.ndarray:
        return self.outcomes.sum(axis=1)

    def ybar_from(self, t: int) -> np.ndarray:
        """Sum of outcomes from period t through M."""
        return self.outcomes[:, t - 1:].sum(axis=1)


class PanelDataset:
    """Immutable panel of experimental and observational trajectories."""

    def __init__(self, units: Sequence[UnitTrajectory],
                 metadata: Optional[dict] = None):
        units = tuple(units)
        e_units = [u for u in units if u.setting is Setting.EXPERIMENTAL]
        o_units = [u for u in units if u.setting is Setting.OBSERVATIONAL]
        seen: set[str] = set()
        for u in units:
            if u.unit_id in seen:
                raise MalformedRow(f"duplicate unit id {u.unit_id!r}")
            seen.add(u.unit_id)

        p = units[0].s0.shape[0] if units else 0
        for u in units:
            if u.s0.shape[0] != p:
                raise DimensionMismatch(
                    f"unit {u.unit_id}: state dim {u.s0.shape[0]} != {p}"
                )

        def _treat_dim(group: list[UnitTrajectory]) -> int:
            if not group:
                return 0
            k = group[0].periods[0].treatment.shape[0]
            for u in group:
                for rec in u.periods:
                    if rec.treatment.shape[0] != k:
                        raise DimensionMismatch(
                            f"unit {u.unit_id}: treatment dim "
                            f"{rec.treatment.shape[0]} != {k}"
                        )
            return k

        k_e = _treat_dim(e_units)
        k_o = _treat_dim(o_units)
        M = len(o_units[0].periods) if o_units else 0
        for u in o_units:
            if len(u.periods) != M:
                raise DimensionMismatch(
                    f"observational unit {u.unit_id} has {len(u.periods)} periods, "
                    f"expected {M}"
                )

        self._units = units
        self.p = p
        self.k_e = k_e
        self.k_o = k_o
        self.M = M
        self.metadata = dict(metadata or {})

        self._exp = ExperimentalArrays(
            unit_ids=tuple(u.unit_id for u in e_units),
            s0=np.array([u.s0 for u in e_units], dtype=float).reshape(len(e_units), p),
            t1=np.array([u.periods[0].treatment for u in e_units],
                        dtype=float).reshape(len(e_units), k_e),
            s1=np.array([u.periods[0].surrogates for u in e_units],
                        dtype=float).reshape(len(e_units), p),
            y1=np.array([np.nan if u.periods[0].outcome is None else u.periods[0].outcome
                         for u in e_units], dtype=float),
        )
        self._obs = ObservationalArrays(
            unit_ids=tuple(u.unit_id for u in o_units),
            s0=np.array([u.s0 for u in o_units], dtype=float).reshape(len(o_units), p),
            treatments=np.array([[rec.treatment for rec in u.periods] for u in o_units],
                                dtype=float).reshape(len(o_units), M, k_o),
            surrogates=np.array([[rec.surrogates for rec in u.periods] for u in o_units],
                                dtype=float).reshape(len(o_units), M, p),
            outcomes=np.array([[rec.outcome for rec in u.periods] for u in o_units],
                              dtype=float).reshape(len(o_units), M),
        )

    @staticmethod
    def from_arrays(exp: Optional[ExperimentalArrays],
                    obs: Optional[ObservationalArrays],
                    metadata: Optional[dict] = None) -> "PanelDataset":
        """Fast constructor that skips per-unit object materialization."""
        ds = PanelDataset.__new__(PanelDataset)
        if exp is None:
            exp = ExperimentalArrays((), np.zeros((0, 0)), np.zeros((0, 0)),
                                     np.zeros((0, 0)), np.zeros(0))
        if obs is None:
            p = exp.s0.shape[1]
            obs = ObservationalArrays((), np.zeros((0, p)), np.zeros((0, 0, 0)),
                                      np.zeros((0, 0, p)), np.zeros((0, 0)))
        ds._exp = exp
        ds._obs = obs
        ds._units = None
        ds.p = exp.s0.shape[1] if exp.n else obs.s0.shape[1]
        ds.k_e = exp.t1.shape[1]
        ds.k_o = obs.treatments.shape[2]
        ds.M = obs.treatments.shape[1]
        ds.metadata = dict(metadata or {})
        return ds

    # -- views ---------------------------------------------------------------

    @property
    def experimental(self) -> ExperimentalArrays:
        return self._exp

    @property
    def observational(self) -> ObservationalArrays:
        return self._obs

    @property
    def n_e(self) -> int:
        return self._exp.n

    @property
    def n_o(self) -> int:
        return self._obs.n

    @property
    def n_units(self) -> int:
        return self.n_e + self.n_o

    @property
    def units(self) -> tuple[UnitTrajectory, ...]:
        """Per-unit trajectory view; experimental units first."""
        if self._units is None:
            out: list[UnitTrajectory] = []
            e = self._exp
            for i in range(e.n):
                y = e.y1[i]
                out.append(UnitTrajectory(
                    e.unit_ids[i], Setting.EXPERIMENTAL, e.s0[i],
                    (PeriodRecord(1, e.t1[i], e.s1[i],
                                  None if np.isnan(y) else float(y)),),
                ))
            o = self._obs
            for i in range(o.n):
                periods = tuple(
                    PeriodRecord(t + 1, o.treatments[i, t], o.surrogates[i, t],
                                 float(o.outcomes[i, t]))
                    for t in range(self.M)
                )
                out.append(UnitTrajectory(o.unit_ids[i], Setting.OBSERVATIONAL,
                                          o.s0[i], periods))
            self._units = tuple(out)
        return self._units

    def require_setting(self, setting: Setting) -> None:
        n = self.n_e if setting is Setting.EXPERIMENTAL else self.n_o
        if n == 0:
            raise SettingMissing(f"dataset has no units in setting {setting.value!r}")

    def subset(self, e_idx: np.ndarray, o_idx: np.ndarray) -> "PanelDataset":
        """Restrict to the given experimental / observational row indices."""
        e, o = self._exp, self._obs
        exp = ExperimentalArrays(
            tuple(e.unit_ids[i] for i in e_idx),
            e.s0[e_idx], e.t1[e_idx], e.s1[e_idx], e.y1[e_idx],
        )
        obs = ObservationalArrays(
            tuple(o.unit_ids[i] for i in o_idx),
            o.s0[o_idx], o.treatments[o_idx], o.surrogates[o_idx], o.outcomes[o_idx],
        )
        return PanelDataset.from_arrays(exp, obs, self.metadata)


# ---------------------------------------------------------------------------
# Cumulative outcomes
# ---------------------------------------------------------------------------

def cumulative_outcome(traj: UnitTrajectory, from_t: int = 1) -> float:
    """Sum of outcomes from period ``from_t`` through the final period."""
    if from_t < 1 or from_t > len(traj.periods):
        raise MissingOutcome(
            f"from_t={from_t} outside periods 1..{len(traj.periods)}"
        )
    total = 0.0
    for rec in traj.periods[from_t - 1:]:
        if rec.outcome is None:
            raise MissingOutcome(
                f"unit {traj.unit_id}: outcome absent at period {rec.t}"
            )
        total += rec.outcome
    return total


# ---------------------------------------------------------------------------
# CSV + sidecar I/O
#
# Long format, header exactly `unit,setting,period,y,t_1..t_k,s_1..s_p` with
# k = max(k_e, k_o). Period-0 rows carry only the s_* block. Empty cell means
# absent. A `<name>.meta.json` sidecar records dimensions and the seed.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanelSchema:
    p: int
    k_e: int
    k_o: int
    M: int
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)


def _format_value(x: float) -> str:
    if np.isnan(x):
        return ""
    return repr(float(x))


def _meta_path(path: Path) -> Path:
    name = path.name
    if name.endswith(".csv"):
        name = name[:-4]
    return path.with_name(name + ".meta.json")


def save_panel(data: PanelDataset, path: str | Path,
               seed: Optional[int] = None) -> None:
    """Write the canonical CSV and its JSON sidecar."""
    path = Path(path)
    k = max(data.k_e, data.k_o)
    p = data.p
    header = (["unit", "setting", "period", "y"]
              + [f"t_{i+1}" for i in range(k)]
              + [f"s_{j+1}" for j in range(p)])
    lines = [",".join(header)]

    def _row(unit: str, setting: str, period: int, y: float,
             treat: Optional[np.ndarray], surr: np.ndarray) -> str:
        tcells = [""] * k
        if treat is not None:
            for i, v in enumerate(treat):
                tcells[i] = _format_value(v)
        scells = [_format_value(v) for v in surr]
        return ",".join([unit, setting, str(period), _format_value(y)]
                        + tcells + scells)

    e = data.experimental
    for i in range(e.n):
        lines.append(_row(e.unit_ids[i], "e", 0, np.nan, None, e.s0[i]))
        lines.append(_row(e.unit_ids[i], "e", 1, e.y1[i], e.t1[i], e.s1[i]))
    o = data.observational
    for i in range(o.n):
        lines.append(_row(o.unit_ids[i], "o", 0, np.nan, None, o.s0[i]))
        for t in range(data.M):
            lines.append(_row(o.unit_ids[i], "o", t + 1, o.outcomes[i, t],
                              o.treatments[i, t], o.surrogates[i, t]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    meta = {
        "p": data.p, "k_e": data.k_e, "k_o": data.k_o, "M": data.M,
        "n_e": data.n_e, "n_o": data.n_o,
        "seed": seed if seed is not None else data.metadata.get("seed"),
    }
    meta.update({k_: v for k_, v in data.metadata.items()
                 if k_ not in meta and _json_safe(v)})
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")


def _json_safe(v) -> bool:
    return isinstance(v, (str, int, float, bool, type(None)))


def load_panel(path: str | Path, schema: Optional[PanelSchema] = None) -> PanelDataset:
    """Read a canonical CSV (plus sidecar when present) into a PanelDataset."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() != ""]
    if not lines:
        raise MalformedRow(f"{path}: empty file")
    header = lines[0].split(",")
    if header[:4] != ["unit", "setting", "period", "y"]:
        raise MalformedRow(f"{path}: unexpected header start {header[:4]}")
    k = sum(1 for h in header if h.startswith("t_"))
    p = sum(1 for h in header if h.startswith("s_"))
    expected_header = (["unit", "setting", "period", "y"]
                       + [f"t_{i+1}" for i in range(k)]
                       + [f"s_{j+1}" for j in range(p)])
    if header != expected_header:
        raise MalformedRow(f"{path}: header does not match canonical column order")

    meta: dict = {}
    mp = _meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text(encoding="utf-8"))
    if schema is None and meta:
        schema = PanelSchema(p=meta["p"], k_e=meta["k_e"], k_o=meta["k_o"],
                             M=meta["M"], seed=meta.get("seed"))
    if schema is not None and schema.p != p:
        raise DimensionMismatch(
            f"{path}: file has {p} surrogate columns, schema says {schema.p}"
        )

    ncols = len(header)
    rows_by_unit: dict[str, list[tuple[int, str, list[str]]]] = {}
    order: list[str] = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != ncols:
            raise MalformedRow(f"{path}:{lineno}: expected {ncols} cells, got {len(cells)}")
        unit, setting, period_s = cells[0], cells[1], cells[2]
        if setting not in ("e", "o"):
            raise MalformedRow(f"{path}:{lineno}: setting must be 'e' or 'o', got {setting!r}")
        try:
            period = int(period_s)
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: bad period {period_s!r}") from exc
        if unit not in rows_by_unit:
            rows_by_unit[unit] = []
            order.append(unit)
        rows_by_unit[unit].append((period, setting, cells))

    def _parse(cell: str, where: str) -> float:
        if cell == "":
            return np.nan
        try:
            return float(cell)
        except ValueError as exc:
            raise MalformedRow(f"{where}: bad number {cell!r}") from exc

    units: list[UnitTrajectory] = []
    for unit in order:
        rows = sorted(rows_by_unit[unit], key=lambda r: r[0])
        periods_seen = [r[0] for r in rows]
        if len(set(periods_seen)) != len(periods_seen):
            raise DuplicatePeriod(f"{path}: unit {unit!r} has duplicated period rows")
        if periods_seen != list(range(0, len(rows))):
            raise DuplicatePeriod(
                f"{path}: unit {unit!r} has period gaps: {periods_seen}"
            )
        settings = {r[1] for r in rows}
        if len(settings) != 1:
            raise MalformedRow(f"{path}: unit {unit!r} mixes settings")
        setting = Setting(rows[0][1])
        k_this = (schema.k_e if setting is Setting.EXPERIMENTAL else schema.k_o) \
            if schema is not None else k

        cells0 = rows[0][2]
        s0 = np.array([_parse(c, f"{path} unit {unit} period 0") for c in cells0[4 + k:]])
        recs = []
        for period, _, cells in rows[1:]:
            where = f"{path} unit {unit} period {period}"
            y = _parse(cells[3], where)
            treat = np.array([_parse(c, where) for c in cells[4:4 + k_this]])
            if np.isnan(treat).any():
                raise MalformedRow(f"{where}: treatment cell absent")
            surr = np.array([_parse(c, where) for c in cells[4 + k:]])
            if np.isnan(surr).any():
                raise MalformedRow(f"{where}: surrogate cell absent")
            recs.append(PeriodRecord(period, treat, surr,
                                     None if np.isnan(y) else y))
        units.append(UnitTrajectory(unit, setting, s0, tuple(recs)))

    data = PanelDataset(units, metadata=meta)
    if schema is not None:
        if data.n_e and data.k_e != schema.k_e:
            raise DimensionMismatch(
                f"{path}: experimental treatment dim {data.k_e} != schema {schema.k_e}"
            )
        if data.n_o and (data.k_o != schema.k_o or data.M != schema.M):
            raise DimensionMismatch(
                f"{path}: observational dims (k={data.k_o}, M={data.M}) != "
                f"schema (k={schema.k_o}, M={schema.M})"
            )
    return data
