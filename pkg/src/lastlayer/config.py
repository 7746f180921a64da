"""TOML configuration loading for sweeps and the synthetic generator.

Named presets ship inside the package (``lastlayer/presets/*.toml``); a
``--config`` value resolves first as a filesystem path, then as a preset name.
"""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, ParameterError
from .sweep import SweepSpec
from .synth import SynthConfig

_SYNTH_KEYS = {
    "d", "num_classes", "num_domains", "train_size", "val_size", "test_size",
    "train_correlation", "val_correlation", "class_sep", "domain_shift",
    "subclusters_per_class", "subcluster_sep", "satellite_mass", "within_std", "seed",
}


def preset_names() -> list[str]:
    files = resources.files("lastlayer").joinpath("presets")
    return sorted(p.name[: -len(".toml")] for p in files.iterdir() if p.name.endswith(".toml"))


def load_toml(config: str) -> dict:
    """Load a TOML document from a path or a packaged preset name."""
    path = Path(config)
    if path.exists():
        try:
            return tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    candidate = resources.files("lastlayer").joinpath("presets", f"{config}.toml")
    if candidate.is_file():
        return tomllib.loads(candidate.read_text())
    raise ConfigError(f"config {config!r} is neither a file nor a preset ({', '.join(preset_names())})")


def synth_config(doc: dict) -> SynthConfig:
    section = doc.get("dataset", doc)
    if section.get("kind", "synthetic") != "synthetic":
        raise ConfigError("dataset section is not synthetic")
    kwargs = {k: v for k, v in section.items() if k in _SYNTH_KEYS}
    unknown = set(section) - _SYNTH_KEYS - {"kind"}
    if unknown:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
    try:
        return SynthConfig(**kwargs)
    except (TypeError, ParameterError) as exc:
        raise ConfigError(f"bad dataset section: {exc}") from None


def sweep_spec(doc: dict, seed_override: int | None = None, inverse_c: bool | None = None) -> SweepSpec:
    """Build a SweepSpec from a parsed TOML document."""
    sweep = doc.get("sweep")
    if sweep is None:
        raise ConfigError("config needs a [sweep] section")
    dataset = doc.get("dataset")
    if dataset is None:
        raise ConfigError("config needs a [dataset] section")

    seeds = sweep.get("seeds", 10)
    if isinstance(seeds, int):
        seeds = tuple(range(seeds))
    else:
        seeds = tuple(int(s) for s in seeds)

    kind = dataset.get("kind", "synthetic")
    synth = None
    emb1 = None
    if kind == "synthetic":
        synth = synth_config(doc)
    elif kind == "emb1":
        emb1 = {k: dataset[k] for k in ("train", "val", "test") if k in dataset}
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")

    grids = doc.get("grids", {})
    for method, grid in grids.items():
        if not isinstance(grid, dict):
            raise ConfigError(f"[grids.{method}] must be a table of parameter lists")

    try:
        return SweepSpec(
            methods=tuple(sweep.get("methods", ["erm"])),
            noise_levels=tuple(float(p) for p in sweep.get("noise_levels", [0.0])),
            seeds=seeds,
            hyper_grids={m: {k: list(v) for k, v in g.items()} for m, g in grids.items()},
            synth=synth,
            emb1_paths=emb1,
            base_seed=int(seed_override if seed_override is not None else sweep.get("base_seed", 0)),
            split_fraction=float(sweep.get("split_fraction", 0.5)),
            spread_rounds=int(sweep.get("spread_rounds", 1)),
            include_self=bool(sweep.get("include_self", True)),
            inverse_c=bool(inverse_c if inverse_c is not None else sweep.get("inverse_c", False)),
            base_c=float(sweep.get("base_c", 1e-4)),
        )
    except (ParameterError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
