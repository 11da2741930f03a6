"""Experiment runners: simulate to files, estimate against oracles, sweep.

Every runner is deterministic given (config, seed): numeric output is
written with shortest round-trip float formatting and sorted JSON keys, so
reruns produce byte-identical files.  Sweep cells derive their replication
seeds from the cell coordinates (donor count, noise level, rep index), not
from loop order, so any single cell rerun in isolation reproduces its
numbers from the full grid.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import DgpConfig, ExperimentConfig, query_sequences_from_config
from .design import (
    Instance,
    build_general_instance,
    build_lti_instance,
    build_ltv_instance,
    build_random_assignment_instance,
    random_sequences,
)
from .donors import DonorIndex
from .estimators import (
    DonorDeficit,
    HorizonDeficit,
    estimate_si,
    fit_lti,
    fit_ltv,
)
from .oracle import brute_force_table, counterfactual
from .panel import Panel, read_panel_csv, write_panel_csv
from .simulate import factors_from_dict, factors_to_dict, rule_to_dict, system_to_dict
from .weights import OracleWeights, PcrConfig, PcrWeights, WeightsProvider


@dataclass
class QueryRecord:
    unit: int
    sequence: tuple[int, ...]
    estimate: float | None
    oracle: float | None
    abs_error: float | None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "sequence": "-".join(str(a) for a in self.sequence),
            "estimate": self.estimate,
            "oracle": self.oracle,
            "abs_error": self.abs_error,
            "note": self.note,
        }


@dataclass
class DeficitRecord:
    kind: str  # "donor" | "horizon"
    label: str
    context: str
    unit: int | None = None
    sequence: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "label": self.label,
            "context": self.context,
            "unit": self.unit,
            "sequence": "-".join(str(a) for a in self.sequence) if self.sequence else None,
        }


@dataclass
class MetricsReport:
    rows: list[QueryRecord] = field(default_factory=list)
    deficits: list[DeficitRecord] = field(default_factory=list)
    donor_summary: dict | None = None
    aggregates: dict = field(default_factory=dict)

    def recompute_aggregates(self) -> dict:
        errors = [r.abs_error for r in self.rows if r.abs_error is not None]
        out = {
            "n_queries": len(self.rows),
            "n_evaluated": sum(1 for r in self.rows if r.estimate is not None),
            "n_failed": sum(1 for r in self.rows if r.estimate is None),
            "n_deficits": len(self.deficits),
        }
        if errors:
            out["mean_abs_error"] = float(np.mean(errors))
            out["rmse"] = float(np.sqrt(np.mean(np.square(errors))))
            out["max_abs_error"] = float(np.max(errors))
        self.aggregates = out
        return out

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "rows": [r.to_dict() for r in self.rows],
            "deficits": [d.to_dict() for d in self.deficits],
            "donor_summary": self.donor_summary,
        }

    def write(self, out_dir: str | Path, stem: str = "metrics") -> dict[str, str]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{stem}.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        csv_path = out_dir / f"{stem}_queries.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "sequence", "estimate", "oracle", "abs_error", "note"])
            for r in self.rows:
                writer.writerow(
                    [
                        r.unit,
                        "-".join(str(a) for a in r.sequence),
                        "" if r.estimate is None else repr(r.estimate),
                        "" if r.oracle is None else repr(r.oracle),
                        "" if r.abs_error is None else repr(r.abs_error),
                        r.note,
                    ]
                )
        return {"metrics": str(json_path), "queries": str(csv_path)}


# ---------------------------------------------------------------------------
# Instance construction / persistence
# ---------------------------------------------------------------------------

def build_instance(cfg: ExperimentConfig, *, seed: int | None = None) -> Instance:
    dgp = cfg.dgp
    seed = dgp.seed if seed is None else seed
    if dgp.assignment == "random":
        return build_random_assignment_instance(
            dgp.n_actions,
            dgp.horizon,
            dgp.dim,
            n_units=int(dgp.n_units or 0),
            sigma_state=dgp.sigma_state,
            sigma_outcome=dgp.sigma_outcome,
            seed=seed,
            n_periods=dgp.n_periods,
            control_action=dgp.control_action,
        )
    if dgp.variant == "ltv":
        return build_ltv_instance(
            dgp.n_actions,
            dgp.horizon,
            dgp.dim,
            dgp.donors_per_set,
            dgp.n_targets,
            sigma_state=dgp.sigma_state,
            sigma_outcome=dgp.sigma_outcome,
            seed=seed,
            n_periods=dgp.n_periods,
            shared_dynamics=dgp.shared_dynamics,
            archetypes=dgp.archetypes,
            n_control_donors=dgp.n_control_donors,
        )
    if dgp.variant == "lti":
        return build_lti_instance(
            dgp.n_actions,
            dgp.horizon,
            dgp.dim,
            dgp.donors_per_set,
            dgp.n_targets,
            sigma_state=dgp.sigma_state,
            sigma_outcome=dgp.sigma_outcome,
            seed=seed,
            n_periods=dgp.n_periods,
            shared_dynamics=dgp.shared_dynamics,
            archetypes=dgp.archetypes,
            n_control_donors=dgp.n_control_donors,
            control_action=dgp.control_action,
        )
    sequences = query_sequences_from_config(cfg)
    if not sequences:
        raise ValueError("the general variant builds donors per queried sequence; provide queries")
    return build_general_instance(
        dgp.n_actions,
        dgp.horizon,
        dgp.dim,
        dgp.donors_per_set,
        sequences,
        dgp.n_targets,
        noise_scale=dgp.sigma_outcome,
        seed=seed,
    )


@dataclass
class SimulateResult:
    paths: dict[str, str]
    n_units: int
    n_periods: int

    def to_dict(self) -> dict:
        return {"paths": self.paths, "n_units": self.n_units, "n_periods": self.n_periods}


def run_simulate(cfg: ExperimentConfig, out_dir: str | Path, *, seed: int | None = None) -> SimulateResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    instance = build_instance(cfg, seed=seed)
    panel = instance.panel

    paths = {
        "panel": str(out_dir / "panel.csv"),
        "meta": str(out_dir / "panel_meta.json"),
        "factors": str(out_dir / "factors.json"),
        "instance": str(out_dir / "instance.json"),
    }
    write_panel_csv(panel, paths["panel"], paths["meta"])
    Path(paths["factors"]).write_text(
        json.dumps(factors_to_dict(instance.factors), sort_keys=True) + "\n"
    )
    info: dict = {"targets": list(instance.targets)}
    if instance.system is not None:
        params = system_to_dict(instance.system)
        params["seed"] = cfg.dgp.seed if seed is None else seed
        if instance.policies is not None:
            params["policies"] = [
                {"committed": list(p.committed), "rule": rule_to_dict(p.rule)}
                for p in instance.policies
            ]
        paths["system"] = str(out_dir / "system.json")
        Path(paths["system"]).write_text(json.dumps(params, sort_keys=True) + "\n")
    if instance.noise is not None:
        paths["noise"] = str(out_dir / "noise.json")
        Path(paths["noise"]).write_text(
            json.dumps(
                {"state": instance.noise.state.tolist(), "outcome": instance.noise.outcome.tolist()},
                sort_keys=True,
            )
            + "\n"
        )
    Path(paths["instance"]).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return SimulateResult(paths=paths, n_units=panel.n_units, n_periods=panel.n_periods)


def load_instance_dir(panel_dir: str | Path) -> Instance:
    panel_dir = Path(panel_dir)
    panel = read_panel_csv(panel_dir / "panel.csv", panel_dir / "panel_meta.json")
    factors = None
    fpath = panel_dir / "factors.json"
    if fpath.exists():
        factors = factors_from_dict(json.loads(fpath.read_text()))
    targets: tuple[int, ...] = ()
    ipath = panel_dir / "instance.json"
    if ipath.exists():
        targets = tuple(json.loads(ipath.read_text()).get("targets", []))
    return Instance(panel=panel, factors=factors, targets=targets)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def _weights_provider(cfg: ExperimentConfig, instance: Instance) -> WeightsProvider:
    est = cfg.estimator
    assert est is not None
    if est.weights == "oracle":
        if instance.factors is None:
            raise ValueError("oracle weights need the instance's latent factors")
        return OracleWeights(instance.factors, horizon=instance.panel.horizon)
    return PcrWeights(instance.panel, PcrConfig(rank=est.pcr.rank, energy=est.pcr.energy))


def donor_audit(panel: Panel, estimator_kind: str, *, max_enum: int = 4096) -> dict:
    """Populated/required donor-group accounting for one estimator.

    For the exact-sequence strategy every sequence in the action space is a
    required group; for the blip strategies the required groups are the
    (action, period) pairs, respectively the per-action families plus the
    control family.  Control-action blip slots are pinned to zero and need
    no donors; they are reported as populated by construction.
    """
    index = DonorIndex(panel)
    A, T = panel.n_actions, panel.horizon
    if estimator_kind == "si":
        total = A**T
        if total > max_enum:
            raise ValueError(f"sequence space {A}**{T} = {total} exceeds max_enum={max_enum}")
        empty: list[str] = []
        for seq in itertools.product(range(A), repeat=T):
            if not index.sequence(seq).members:
                empty.append("-".join(str(a) for a in seq))
        return {
            "estimator": "si",
            "groups_required": total,
            "groups_populated": total - len(empty),
            "groups_deficient": len(empty),
            "deficient_fraction": len(empty) / total,
            "deficient_sequences": empty,
        }
    if estimator_kind == "ltv":
        pairs = []
        n_empty = 0
        for t in range(1, T + 1):
            for a in range(A):
                size = len(index.action_at(a, t))
                pinned = a == panel.control.at(t)
                pairs.append({"action": a, "period": t, "members": size, "pinned": pinned})
                if size == 0 and not pinned:
                    n_empty += 1
        return {
            "estimator": "ltv",
            "groups_required": A * T,
            "groups_populated": sum(1 for p in pairs if p["members"] > 0 or p["pinned"]),
            "groups_deficient": n_empty,
            "pairs": pairs,
        }
    if estimator_kind == "lti":
        families = []
        n_empty = 0
        control_action = panel.control.at(1)
        for a in range(A):
            if a == control_action:
                families.append({"action": a, "members": None, "pinned": True})
                continue
            size = len(index.first_action(a))
            families.append({"action": a, "members": size, "pinned": False})
            if size == 0:
                n_empty += 1
        control_sizes = [len(index.control_through(t)) for t in range(1, panel.n_periods + 1)]
        families.append({"action": None, "members": min(control_sizes), "pinned": False, "control_family": True})
        if min(control_sizes) == 0:
            n_empty += 1
        return {
            "estimator": "lti",
            "groups_required": A + 1,
            "groups_populated": (A + 1) - n_empty,
            "groups_deficient": n_empty,
            "families": families,
        }
    raise ValueError(f"unknown estimator kind {estimator_kind!r}")


def run_estimate(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    *,
    panel_dir: str | Path | None = None,
    instance: Instance | None = None,
) -> MetricsReport:
    """Fit the configured estimator, evaluate the configured queries against
    the oracle (when factors are available) and report metrics.

    Donor and horizon deficits follow the configured failure policy:
    ``fail_fast`` re-raises, ``record`` logs the incident and keeps going.
    """
    if cfg.estimator is None:
        raise ValueError("config has no estimator section")
    if instance is None:
        instance = load_instance_dir(panel_dir) if panel_dir else build_instance(cfg)
    panel = instance.panel
    donors = DonorIndex(panel)
    weights = _weights_provider(cfg, instance)
    record_mode = cfg.estimator.failure_policy == "record"

    sequences = query_sequences_from_config(cfg)
    units = cfg.query.units
    if units is None:
        units = list(instance.targets) if instance.targets else list(range(panel.n_units))

    report = MetricsReport()
    if cfg.estimator.donor_audit:
        report.donor_summary = donor_audit(panel, cfg.estimator.kind, max_enum=cfg.max_enum)

    fit = None
    if cfg.estimator.kind == "ltv":
        fit = fit_ltv(panel, donors, weights)
    elif cfg.estimator.kind == "lti":
        fit = fit_lti(panel, donors, weights)

    for seq in sequences:
        for n in units:
            note = ""
            est_val: float | None = None
            try:
                if cfg.estimator.kind == "si":
                    est_val = estimate_si(panel, donors, weights, n, seq).value
                else:
                    assert fit is not None
                    est_val = fit.estimate(n, seq).value
            except DonorDeficit as exc:
                if not record_mode:
                    raise
                note = str(exc)
                report.deficits.append(
                    DeficitRecord("donor", exc.donor_set.label(), exc.context, unit=n, sequence=seq)
                )
            except HorizonDeficit as exc:
                if not record_mode:
                    raise
                note = str(exc)
                report.deficits.append(DeficitRecord("horizon", f"unit {exc.unit}", str(exc), unit=n, sequence=seq))
            oracle_val = None
            err = None
            if instance.factors is not None and est_val is not None:
                oracle_val = counterfactual(instance.factors, n, seq)
                err = abs(est_val - oracle_val)
            report.rows.append(QueryRecord(n, seq, est_val, oracle_val, err, note))

    report.recompute_aggregates()
    if out_dir is not None:
        report.write(out_dir)
        _write_fit_artifacts(Path(out_dir), cfg, fit, weights, donors, panel)
    return report


def _write_fit_artifacts(out_dir: Path, cfg, fit, weights, donors: DonorIndex, panel: Panel) -> None:
    """Fitted tables, weight audit rows and audited donor sets, for reuse and
    debugging across invocations."""
    from .donors import write_donor_sets
    from .weights import weights_to_text

    if fit is not None:
        tables = {
            "baseline": fit.baseline_table.to_dict(),
            "blips": fit.blip_table.to_dict(),
        }
        (out_dir / "tables.json").write_text(json.dumps(tables, sort_keys=True) + "\n")
    cached = getattr(weights, "cached_weights", lambda: [])()
    if cached:
        (out_dir / "weights.txt").write_text(weights_to_text(cached))
    if cfg.estimator is not None and cfg.estimator.donor_audit:
        sets = []
        if cfg.estimator.kind == "si":
            for seq in itertools.product(range(panel.n_actions), repeat=panel.horizon):
                sets.append(donors.sequence(seq))
        elif cfg.estimator.kind == "ltv":
            for t in range(1, panel.horizon + 1):
                for a in range(panel.n_actions):
                    sets.append(donors.action_at(a, t))
        else:
            for a in range(panel.n_actions):
                if a != panel.control.at(1):
                    sets.append(donors.first_action(a))
            sets.extend(donors.control_through(t) for t in range(1, panel.n_periods + 1))
        write_donor_sets(sets, out_dir / "donor_sets.txt")


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def _rep_seed(base_seed: int, donors: int, sigma: float, rep: int) -> int:
    sigma_bits = int(np.float64(sigma).view(np.uint64))
    ss = np.random.SeedSequence([int(base_seed), int(donors), sigma_bits, int(rep)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


@dataclass
class SweepResult:
    rows: list[dict]
    cell_rmse: dict[str, float]
    deficits: list[DeficitRecord]
    paths: dict[str, str] = field(default_factory=dict)

    @staticmethod
    def cell_key(donors: int, sigma: float, estimator: str) -> str:
        return f"M={donors},sigma={sigma!r},estimator={estimator}"

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cell_rmse": self.cell_rmse,
            "deficits": [d.to_dict() for d in self.deficits],
            "paths": self.paths,
        }


def run_sweep(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> SweepResult:
    """Grid over donor multiplicity and noise scale.

    Donor multiplicity is realized by cloning a fixed archetype roster with
    fresh noise, holding the latent factors (and hence the span condition)
    fixed while sampling error shrinks.  Queries and targets are fixed
    across the whole grid.  Per-cell failures are recorded and the sweep
    continues.
    """
    if cfg.sweep is None:
        raise ValueError("config has no sweep section")
    sweep = cfg.sweep
    dgp = cfg.dgp
    archetypes = dgp.archetypes or (2 * dgp.dim + 2)

    qrng = np.random.default_rng([cfg.query.seed, 23])
    queries = random_sequences(dgp.n_actions, dgp.horizon, sweep.n_queries, qrng)

    rows: list[dict] = []
    deficits: list[DeficitRecord] = []
    cell_sq: dict[str, list[float]] = {}

    for donors_per_set, sigma in itertools.product(sweep.donors_per_set, sweep.sigma):
        for estimator in sweep.estimators:
            for rep in range(sweep.replications):
                noise_seed = _rep_seed(dgp.seed, donors_per_set, sigma, rep)
                builder = build_ltv_instance if estimator == "ltv" else build_lti_instance
                instance = builder(
                    dgp.n_actions,
                    dgp.horizon,
                    dgp.dim,
                    donors_per_set,
                    dgp.n_targets,
                    sigma_state=sigma,
                    sigma_outcome=sigma,
                    seed=dgp.seed,
                    noise_seed=noise_seed,
                    shared_dynamics=True,
                    archetypes=archetypes,
                )
                try:
                    rmse = _sweep_rep_rmse(instance, estimator, queries)
                except (DonorDeficit, HorizonDeficit) as exc:
                    deficits.append(
                        DeficitRecord(
                            "donor" if isinstance(exc, DonorDeficit) else "horizon",
                            f"M={donors_per_set} sigma={sigma} rep={rep}",
                            str(exc),
                        )
                    )
                    continue
                rows.append(
                    {"M": donors_per_set, "sigma": sigma, "rep": rep, "estimator": estimator, "rmse": rmse}
                )
                cell_sq.setdefault(SweepResult.cell_key(donors_per_set, sigma, estimator), []).append(rmse)

    cell_rmse = {
        key: float(np.sqrt(np.mean(np.square(vals)))) for key, vals in cell_sq.items()
    }
    result = SweepResult(rows=rows, cell_rmse=cell_rmse, deficits=deficits)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "sweep.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["M", "sigma", "rep", "estimator", "rmse"])
            for r in rows:
                writer.writerow([r["M"], repr(float(r["sigma"])), r["rep"], r["estimator"], repr(r["rmse"])])
        json_path = out_dir / "sweep_summary.json"
        json_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
        result.paths = {"csv": str(csv_path), "summary": str(json_path)}
    return result


def _sweep_rep_rmse(instance: Instance, estimator: str, queries: Sequence[tuple[int, ...]]) -> float:
    panel = instance.panel
    donors = DonorIndex(panel)
    assert instance.factors is not None
    weights = OracleWeights(instance.factors, horizon=panel.horizon)
    fit = fit_ltv(panel, donors, weights) if estimator == "ltv" else fit_lti(panel, donors, weights)
    sq = []
    for seq in queries:
        for n in instance.targets:
            truth = counterfactual(instance.factors, n, seq)
            sq.append((fit.estimate(n, seq).value - truth) ** 2)
    return float(np.sqrt(np.mean(sq)))


# ---------------------------------------------------------------------------
# Oracle tables and validation
# ---------------------------------------------------------------------------

@dataclass
class OracleResult:
    n_entries: int
    paths: dict[str, str]

    def to_dict(self) -> dict:
        return {"n_entries": self.n_entries, "paths": self.paths}


def run_oracle(
    cfg: ExperimentConfig, out_dir: str | Path, *, max_enum: int | None = None
) -> OracleResult:
    """Enumerate the exact expected outcome for every unit and sequence."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    instance = build_instance(cfg)
    assert instance.factors is not None
    cap = cfg.max_enum if max_enum is None else max_enum
    table = brute_force_table(instance.factors, cfg.dgp.horizon, cfg.dgp.n_actions, cap=cap)
    path = out_dir / "oracle.csv"
    table.write_csv(path)
    return OracleResult(n_entries=len(table.values), paths={"oracle": str(path)})


@dataclass
class ValidationResult:
    valid: bool
    violations: list[str]

    def to_dict(self) -> dict:
        return {"valid": self.valid, "violations": self.violations}


def run_validate(panel_csv: str | Path, meta_json: str | Path) -> ValidationResult:
    from .panel import PanelValidationError, panel_violations

    try:
        panel = read_panel_csv(panel_csv, meta_json)
    except PanelValidationError as exc:
        return ValidationResult(valid=False, violations=[str(v) for v in exc.violations])
    meta = json.loads(Path(meta_json).read_text())
    violations = panel_violations(panel, claimed_first_deviation=meta.get("first_deviation"))
    return ValidationResult(valid=not violations, violations=[str(v) for v in violations])
