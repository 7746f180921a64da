"""Experiment orchestration: noise/seed sweeps with holdout model selection.

The protocol per (method, noise level): fit every hyperparameter setting on
the noisy retraining half across all seeds, pick the setting with the best
mean worst-group accuracy on the clean holdout, then re-run it across the
seeds and report test worst-group accuracy.  Every task derives its own seeds
from (base seed, method, noise, hyper index, seed index, role) through a
SHA-256 hash, so adding a method or hyper never perturbs other results, and
identical specs reproduce byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    EmbeddingDataset,
    NoiseSpec,
    apply_noise,
    derive_groups,
    inject_symmetric_noise,
    load_embeddings,
    split_validation,
)
from .errors import ConfigError, LastLayerError, ParameterError
from .knn import SpreadConfig, build_knn_graph, measure_label_accuracy, spread_labels
from .linear import save_model
from .metrics import ExperimentResult, aggregate, worst_group_accuracy
from .methods import (
    RadConfig,
    SelfConfig,
    error_set_composition,
    run_erm,
    run_gds,
    run_guw,
    run_knn_rad,
    run_knn_self,
    run_rad,
    run_record,
    run_self,
)
from .synth import SynthConfig, generate

METHODS = ("erm", "guw", "gds", "rad", "self", "knn-rad", "knn-self")

# Grids used when a spec does not name its own; calibrated for the synthetic
# reference geometry.
DEFAULT_GRIDS = {
    "erm": {"c": [1e-4]},
    "guw": {"c": [1e-4]},
    "gds": {"c": [1e-4]},
    "rad": {"c_id": [0.01], "c_retrain": [1e-3], "upweight": [5.0, 10.0, 25.0, 50.0]},
    "knn-rad": {"c_id": [0.01], "c_retrain": [1e-3], "upweight": [10.0, 25.0], "k": [11, 21, 41]},
    "self": {"n_sub": [100], "steps": [500], "lr": [1e-3]},
    "knn-self": {"n_sub": [100], "steps": [500], "lr": [1e-3], "k": [11, 21, 41]},
}


def task_seed(base_seed: int, method: str, noise: float, hyper_idx: int, seed_idx: int, role: str) -> int:
    """Stable per-task seed: SHA-256 over the identifying tuple, 63 bits."""
    key = f"{base_seed}|{method}|{float(noise)!r}|{hyper_idx}|{seed_idx}|{role}"
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def expand_grid(grid: dict) -> list[dict]:
    """All combinations of a {param: [values]} grid, in a deterministic order."""
    if not grid:
        return [{}]
    names = sorted(grid)
    combos = itertools.product(*(grid[name] for name in names))
    return [dict(zip(names, values)) for values in combos]


@dataclass(frozen=True)
class SweepSpec:
    """What to run: methods x noise levels x seeds, plus data and grids."""

    methods: tuple = ("erm",)
    noise_levels: tuple = (0.0,)
    seeds: tuple = tuple(range(10))
    hyper_grids: dict = field(default_factory=dict)
    synth: SynthConfig | None = None
    emb1_paths: dict | None = None
    base_seed: int = 0
    split_fraction: float = 0.5
    spread_rounds: int = 1
    include_self: bool = True
    inverse_c: bool = False
    base_c: float = 1e-4

    def __post_init__(self):
        if not self.methods or not self.noise_levels or not self.seeds:
            raise ParameterError("need at least one method, one noise level, and one seed")
        for m in self.methods:
            if m not in METHODS:
                raise ParameterError(f"unknown method {m!r}; choose from {METHODS}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ParameterError("duplicate seeds in the seed list")
        if len(set(self.noise_levels)) != len(self.noise_levels):
            raise ParameterError("duplicate noise levels")
        for p in self.noise_levels:
            if not (0.0 <= p < 0.5):
                raise ParameterError(f"noise level must lie in [0, 0.5), got {p}")
        if (self.synth is None) == (self.emb1_paths is None):
            raise ParameterError("exactly one of synth or emb1_paths must be given")

    def grid_for(self, method: str) -> list[dict]:
        grid = self.hyper_grids.get(method) or DEFAULT_GRIDS[method]
        return expand_grid(grid)


@dataclass
class CellResult:
    """Outcome of one (method, noise) cell after selection and final runs."""

    method: str
    noise: float
    selected: dict | None
    holdout_score: float | None
    results: list
    records: list
    error: str | None = None


@dataclass
class SweepResult:
    spec: SweepSpec
    cells: list

    @property
    def failed(self) -> bool:
        return any(c.error is not None for c in self.cells)

    def all_results(self) -> list[ExperimentResult]:
        out = []
        for c in self.cells:
            out.extend(c.results)
        return out

    def summary_rows(self):
        return aggregate(self.all_results())

    def per_seed_csv(self) -> str:
        """Deterministic per-seed CSV: method, noise, seed, wga, overall, per-group."""
        results = self.all_results()
        n_groups = max((len(r.group_accuracies) for r in results), default=0)
        out = io.StringIO()
        head = ["method", "noise", "seed", "wga", "overall"] + [f"acc_g{i}" for i in range(n_groups)]
        out.write(",".join(head) + "\n")
        for r in sorted(results, key=lambda r: (r.method, r.noise_level, r.seed)):
            row = [r.method, repr(float(r.noise_level)), str(r.seed), f"{r.wga:.10g}", f"{r.overall_accuracy:.10g}"]
            row += [f"{a:.10g}" for a in r.group_accuracies]
            out.write(",".join(row) + "\n")
        return out.getvalue()


def _resolve_datasets(spec: SweepSpec) -> dict:
    if spec.synth is not None:
        return generate(spec.synth)
    paths = spec.emb1_paths
    for split in ("train", "val", "test"):
        if split not in paths:
            raise ConfigError(f"emb1_paths must name a {split!r} file")
    return {
        "train": load_embeddings(paths["train"], split_tag="train"),
        "val": load_embeddings(paths["val"], split_tag="train"),
        "test": load_embeddings(paths["test"], split_tag="test"),
    }


def _penalty(value: float, spec: SweepSpec, n: int) -> float:
    """Interpret a penalty knob; inverse-c mode reads it as an inverse strength.

    The inverse convention maps a value v to 1 / (v * n), matching libraries
    whose regularization weight divides an unnormalized loss sum.
    """
    if not spec.inverse_c:
        return float(value)
    if value <= 0:
        raise ParameterError(f"inverse-c penalties must be positive, got {value}")
    return 1.0 / (float(value) * n)


def _run_task(spec: SweepSpec, datasets, base_model, method, noise, hyper, hyper_idx, seed_idx):
    """One fit: returns (model, retrain_noisy, flip_mask, extras)."""
    seed = lambda role: task_seed(spec.base_seed, method, noise, hyper_idx, seed_idx, role)
    retrain, _holdout = split_validation(datasets["val"], spec.split_fraction, seed("split"))
    if noise > 0:
        retrain, mask = apply_noise(retrain, NoiseSpec(noise, seed("noise")))
    else:
        retrain, mask = retrain, np.zeros(retrain.n, dtype=bool)

    extras = {"error_set": None, "cleaned": None}
    n = retrain.n
    if method == "erm":
        model = run_erm(retrain, _penalty(hyper["c"], spec, n))
    elif method == "guw":
        groups = derive_groups(retrain, use_clean=retrain.clean_labels is not None)
        model = run_guw(retrain, groups, _penalty(hyper["c"], spec, n))
    elif method == "gds":
        groups = derive_groups(retrain, use_clean=retrain.clean_labels is not None)
        model = run_gds(retrain, groups, _penalty(hyper["c"], spec, n), seed("gds"))
    elif method == "rad":
        cfg = RadConfig(
            c_id=_penalty(hyper["c_id"], spec, n),
            c_retrain=_penalty(hyper["c_retrain"], spec, n),
            upweight=float(hyper["upweight"]),
            id_loss=hyper.get("id_loss", "cross_entropy"),
            alpha=float(hyper.get("alpha", 1.0)),
        )
        model, extras["error_set"] = run_rad(retrain, cfg)
    elif method == "knn-rad":
        cfg = RadConfig(
            c_id=_penalty(hyper["c_id"], spec, n),
            c_retrain=_penalty(hyper["c_retrain"], spec, n),
            upweight=float(hyper["upweight"]),
            id_loss=hyper.get("id_loss", "cross_entropy"),
            alpha=float(hyper.get("alpha", 1.0)),
        )
        sp = SpreadConfig(k=int(hyper["k"]), rounds=spec.spread_rounds, include_self=spec.include_self)
        model, extras["error_set"], extras["cleaned"] = run_knn_rad(retrain, sp, cfg)
    elif method == "self":
        cfg = SelfConfig(
            n_sub=int(hyper["n_sub"]),
            finetune_steps=int(hyper["steps"]),
            learning_rate=float(hyper["lr"]),
            balance_seed=seed("balance"),
        )
        model, extras["error_set"] = run_self(retrain, base_model, cfg)
    elif method == "knn-self":
        cfg = SelfConfig(
            n_sub=int(hyper["n_sub"]),
            finetune_steps=int(hyper["steps"]),
            learning_rate=float(hyper["lr"]),
            balance_seed=seed("balance"),
        )
        sp = SpreadConfig(k=int(hyper["k"]), rounds=spec.spread_rounds, include_self=spec.include_self)
        model, extras["error_set"], extras["cleaned"] = run_knn_self(retrain, base_model, sp, cfg)
    else:  # pragma: no cover - guarded by SweepSpec validation
        raise ParameterError(f"unknown method {method!r}")
    return model, retrain, mask, extras


def _holdout_wga(spec, datasets, base_model, method, noise, hyper, hyper_idx, seed_idx) -> float:
    model, _, _, _ = _run_task(spec, datasets, base_model, method, noise, hyper, hyper_idx, seed_idx)
    seed = task_seed(spec.base_seed, method, noise, hyper_idx, seed_idx, "split")
    _, holdout = split_validation(datasets["val"], spec.split_fraction, seed)
    groups = derive_groups(holdout, use_clean=holdout.clean_labels is not None)
    return worst_group_accuracy(model, holdout, groups).wga


def _needs_base_model(spec: SweepSpec) -> bool:
    return any(m in ("self", "knn-self") for m in spec.methods)


def run_sweep(spec: SweepSpec, jobs: int = 1, out_dir=None, dump_models: bool = False) -> SweepResult:
    """Execute the sweep; per-cell failures are recorded, not raised.

    With ``out_dir`` set, writes ``results.csv`` (per-seed rows),
    ``summary.csv`` / ``summary.md`` (aggregated tables), and one JSON record
    per final run under ``records/``.
    """
    datasets = _resolve_datasets(spec)
    base_model = run_erm(datasets["train"], spec.base_c) if _needs_base_model(spec) else None
    groups_test = derive_groups(datasets["test"], use_clean=datasets["test"].clean_labels is not None)

    # ---- selection phase -------------------------------------------------
    tasks = []
    for method in spec.methods:
        hypers = spec.grid_for(method)
        for noise in spec.noise_levels:
            for hyper_idx, hyper in enumerate(hypers):
                for seed_idx in range(len(spec.seeds)):
                    tasks.append((method, noise, hyper_idx, hyper, seed_idx))

    def eval_selection(task):
        method, noise, hyper_idx, hyper, seed_idx = task
        try:
            return _holdout_wga(spec, datasets, base_model, method, noise, hyper, hyper_idx, seed_idx), None
        except LastLayerError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(eval_selection, tasks))
    else:
        outcomes = [eval_selection(t) for t in tasks]

    scores: dict = {}
    errors: dict = {}
    for (method, noise, hyper_idx, _hyper, seed_idx), (wga, err) in zip(tasks, outcomes):
        if err is None:
            scores.setdefault((method, noise, hyper_idx), []).append(wga)
        else:
            errors.setdefault((method, noise, hyper_idx), []).append(err)

    # ---- final phase -----------------------------------------------------
    cells = []
    for method in spec.methods:
        hypers = spec.grid_for(method)
        for noise in spec.noise_levels:
            candidate = None
            for hyper_idx in range(len(hypers)):
                key = (method, noise, hyper_idx)
                if key in errors or key not in scores:
                    continue  # a failed hyper cannot be selected
                mean = float(np.mean(scores[key]))
                if candidate is None or mean > candidate[0]:
                    candidate = (mean, hyper_idx)
            if candidate is None:
                msgs = [e for key, errs in sorted(errors.items()) if key[:2] == (method, noise) for e in errs]
                cells.append(CellResult(method, noise, None, None, [], [], error="; ".join(msgs[:3]) or "no usable hyper"))
                continue

            holdout_score, hyper_idx = candidate
            hyper = hypers[hyper_idx]
            results, records = [], []
            error = None
            for seed_idx, seed_label in enumerate(spec.seeds):
                try:
                    model, retrain, mask, extras = _run_task(
                        spec, datasets, base_model, method, noise, hyper, hyper_idx, seed_idx
                    )
                    res = worst_group_accuracy(
                        model, datasets["test"], groups_test,
                        method=method, noise_level=noise, seed=seed_label,
                    )
                    results.append(res)
                    records.append(_final_record(
                        spec, method, noise, hyper, seed_label, model, retrain, mask, extras,
                        out_dir=out_dir, dump_models=dump_models,
                    ))
                except LastLayerError as exc:
                    error = f"{type(exc).__name__}: {exc}"
                    break
            cells.append(CellResult(method, noise, dict(hyper), holdout_score, results, records, error=error))

    result = SweepResult(spec=spec, cells=cells)
    if out_dir is not None:
        _write_outputs(result, out_dir)
    return result


def _final_record(spec, method, noise, hyper, seed_label, model, retrain, mask, extras, out_dir, dump_models):
    composition = None
    cleaned_acc = None
    error_set = extras.get("error_set")
    if error_set is not None and retrain.domains is not None and retrain.clean_labels is not None:
        groups = derive_groups(retrain, use_clean=True)
        composition = error_set_composition(error_set, groups, mask)
    if extras.get("cleaned") is not None and retrain.clean_labels is not None:
        cleaned_acc = measure_label_accuracy(extras["cleaned"], retrain.clean_labels)
    model_path = None
    if dump_models and out_dir is not None:
        from pathlib import Path

        models_dir = Path(out_dir) / "models"
        models_dir.mkdir(parents=True, exist_ok=True)
        model_path = str(models_dir / f"{method}_p{noise:g}_s{seed_label}.csv")
        save_model(model, model_path)
    return run_record(
        method=method,
        config={"hyper": hyper, "noise": noise, "spread_rounds": spec.spread_rounds},
        seed=seed_label,
        error_set=error_set,
        composition=composition,
        cleaned_accuracy=cleaned_acc,
        model_path=model_path,
    )


def _write_outputs(result: SweepResult, out_dir) -> None:
    import json
    from pathlib import Path

    from .report import render_csv, render_markdown

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result.per_seed_csv())
    rows = result.summary_rows() if result.all_results() else []
    methods = list(result.spec.methods)
    noises = list(result.spec.noise_levels)
    if rows:
        (out / "summary.csv").write_text(render_csv(rows, methods, noises))
        (out / "summary.md").write_text(render_markdown(rows, methods, noises))
    records_dir = out / "records"
    records_dir.mkdir(exist_ok=True)
    for cell in result.cells:
        for rec in cell.records:
            name = f"{cell.method}_p{cell.noise:g}_s{rec['seed']}.json"
            (records_dir / name).write_text(json.dumps(rec, indent=2) + "\n")
    failures = [
        {"method": c.method, "noise": c.noise, "error": c.error}
        for c in result.cells
        if c.error is not None
    ]
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Spreading diagnostic: label accuracy after spreading vs (k, rounds)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagRow:
    k: int
    rounds: int
    mean: float
    std: float
    ci_low: float
    ci_high: float


def spread_diagnostic(
    dataset: EmbeddingDataset,
    p: float,
    k_grid,
    t_grid,
    seeds,
    include_self: bool = True,
) -> list[DiagRow]:
    """Inject noise, spread, and measure label accuracy per (k, rounds).

    Reports the mean over seeds with a 95% normal-approximation interval
    (mean +/- 1.96 * std / sqrt(num_seeds)).
    """
    clean = dataset.clean_labels if dataset.clean_labels is not None else dataset.labels
    k_values = sorted(set(int(k) for k in k_grid))
    t_values = sorted(set(int(t) for t in t_grid))
    if any(t < 0 for t in t_values):
        raise ParameterError("rounds must be >= 0")
    seeds = list(seeds)
    graphs = {k: build_knn_graph(dataset.features, k, include_self) for k in k_values}

    acc: dict = {(k, t): [] for k in k_values for t in t_values}
    for s in seeds:
        noisy, _ = inject_symmetric_noise(clean, dataset.num_classes, NoiseSpec(p, s))
        for k in k_values:
            cur = noisy
            if 0 in t_values:
                acc[(k, 0)].append(measure_label_accuracy(cur, clean))
            cfg = SpreadConfig(k=k, rounds=1, include_self=include_self,
                               tie_policy="assign_one" if dataset.num_classes == 2 else "keep_current")
            for t in range(1, max(t_values) + 1):
                cur = spread_labels(graphs[k], cur, dataset.num_classes, cfg)
                if t in t_values:
                    acc[(k, t)].append(measure_label_accuracy(cur, clean))

    rows = []
    m = len(seeds)
    for k in k_values:
        for t in t_values:
            vals = np.asarray(acc[(k, t)], dtype=np.float64)
            mean = float(vals.mean())
            std = float(vals.std(ddof=1)) if m > 1 else 0.0
            half = 1.96 * std / np.sqrt(m) if m > 1 else 0.0
            rows.append(DiagRow(k=k, rounds=t, mean=mean, std=std, ci_low=mean - half, ci_high=mean + half))
    return rows


def diag_csv(rows: list[DiagRow]) -> str:
    out = io.StringIO()
    out.write("k,rounds,mean,std,ci_low,ci_high\n")
    for r in sorted(rows, key=lambda r: (r.k, r.rounds)):
        out.write(f"{r.k},{r.rounds},{r.mean:.10g},{r.std:.10g},{r.ci_low:.10g},{r.ci_high:.10g}\n")
    return out.getvalue()
