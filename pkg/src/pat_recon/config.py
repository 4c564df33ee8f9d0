"""Experiment configuration: JSON documents, strict validation and builtin presets.

A config is a single JSON object::

    {
      "name": "fig2e",
      "grid": {"nx": 128, "ny": 128, "pixel_size": 1e-4},
      "phantom": {"table": "builtin"},
      "sensors": {"radius": 8e-3, "count": 16, "start_angle": 0.0},
      "acquisition": {"sound_speed": 1540, "sampling_freq": 55e6, "num_samples": 600},
      "basis": {"family": "haar", "levels": 3},
      "method": "SL0",
      "params": {"sigma_min_ratio": 1e-4},
      "noise": {"snr_db": 40},
      "output_dir": "out/fig2e",
      "seed": 0
    }

Only ``method`` is required; everything else falls back to the imaging
setup of the reference experiment (12.8 mm field, 0.1 mm pixels, 8 mm
array radius, 1540 m/s, 600 samples at 55 MHz).
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgumentError
from .forward import AcquisitionConfig
from .grid import ImagingGrid, SensorArray, make_grid, make_sensor_array
from .solvers import METHODS, BpParams, IrParams, Sl0Params
from .wavelet import WaveletBasis

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "PRESETS",
           "preset_configs", "DEFAULTS"]


class ConfigError(InvalidArgumentError):
    """Invalid experiment configuration; ``line`` points into the source text when known."""

    def __init__(self, message, line=None, source=None):
        where = f"{source or '<config>'}:{line}: " if line else f"{source or '<config>'}: "
        super().__init__(where + message)
        self.line = line


DEFAULTS = {
    "grid": {"nx": 128, "ny": 128, "pixel_size": 1e-4},
    "phantom": {"table": "builtin"},
    "sensors": {"radius": 8e-3, "count": 16, "start_angle": 0.0},
    "acquisition": {"sound_speed": 1540.0, "sampling_freq": 55e6, "num_samples": 600,
                    "t_start": 0.0, "amplitude_constant": 1.0},
    "basis": {"family": "haar", "levels": 3},
    "noise": None,
    "seed": 0,
}

_SECTION_KEYS = {
    "grid": {"nx", "ny", "pixel_size"},
    "phantom": {"table"},
    "sensors": {"radius", "count", "start_angle"},
    "acquisition": {"sound_speed", "sampling_freq", "num_samples", "t_start",
                    "amplitude_constant"},
    "basis": {"family", "levels"},
    "noise": {"snr_db"},
}
_TOP_KEYS = set(_SECTION_KEYS) | {"name", "method", "params", "output_dir", "seed", "cache_dir"}
_PARAM_TYPES = {"SL0": Sl0Params, "BP": BpParams, "IR": IrParams}

# Solver settings used by the presets.  SL0 anneals further than the library
# default because the data are noiseless; BP and IR run fixed budgets.
PRESET_SL0 = {"sigma_min_ratio": 1e-4, "sigma_decrease": 0.5, "inner_iterations": 3}
PRESET_BP = {"max_iterations": 2000, "continuation_steps": 8, "require_convergence": False}


def _preset(name, method, count, iterations=None, num_samples=600, sampling_freq=55e6,
            grid_n=128, radius=8e-3):
    params = {"SL0": PRESET_SL0, "BP": PRESET_BP}.get(method, {})
    params = dict(params)
    if iterations is not None:
        params["iterations"] = iterations
    return {
        "name": name,
        "grid": {"nx": grid_n, "ny": grid_n, "pixel_size": 1e-4},
        "sensors": {"radius": radius, "count": count, "start_angle": 0.0},
        "acquisition": {"sound_speed": 1540.0, "sampling_freq": sampling_freq,
                        "num_samples": num_samples},
        "method": method,
        "params": params,
    }


def _desk(name, method, **kw):
    # half-size replica: 6.4 mm field, 4 mm radius, half the time window
    return _preset(name, method, 16, grid_n=64, radius=4e-3, num_samples=300, **kw)


PRESETS: dict[str, list[dict]] = {
    "fig2a": [_preset("fig2a", "IR", 32, iterations=20)],
    "fig2b": [_preset("fig2b", "IR", 64, iterations=1)],
    "fig2c": [_preset("fig2c", "IR", 64, iterations=20)],
    "fig2d": [_preset("fig2d", "BP", 16)],
    "fig2e": [_preset("fig2e", "SL0", 16)],
    "fig4": [_preset("fig4-sl0", "SL0", 16, num_samples=500, sampling_freq=45e6),
             _preset("fig4-bp", "BP", 16, num_samples=500, sampling_freq=45e6)],
    "desk": [_desk("desk-sl0", "SL0"), _desk("desk-bp", "BP"),
             _desk("desk-ir", "IR", iterations=20)],
}
PRESETS["fig2"] = [c for k in ("fig2a", "fig2b", "fig2c", "fig2d", "fig2e") for c in PRESETS[k]]
for _group in ("fig4", "desk"):
    for _cfg in PRESETS[_group]:
        PRESETS[_cfg["name"]] = [_cfg]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    grid: ImagingGrid
    phantom_table: str
    sensors: SensorArray
    sensor_spec: dict
    acquisition: AcquisitionConfig
    basis: WaveletBasis
    method: str
    params: object
    snr_db: float | None
    output_dir: Path
    seed: int
    cache_dir: Path | None = None
    raw: dict = field(default_factory=dict, compare=False)

    def resolved(self) -> dict:
        """Fully expanded config (defaults filled in), as written to manifests."""
        return copy.deepcopy(self.raw)


def _key_line(text, path):
    """Best-effort line number of the last key in ``path`` within ``text``."""
    if not text:
        return None
    lines = text.splitlines()
    start = 0
    found = None
    for key in path:
        pat = re.compile(r'"%s"\s*:' % re.escape(str(key)))
        for n in range(start, len(lines)):
            if pat.search(lines[n]):
                found = start = n
                break
        else:
            return found + 1 if found is not None else None
    return found + 1 if found is not None else None


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(doc: dict, text: str | None = None, source: str | None = None,
                 output_dir=None, seed=None) -> ExperimentConfig:
    """Validate a config mapping; ``text`` enables line numbers in errors."""

    def fail(msg, *path):
        raise ConfigError(msg, _key_line(text, path), source)

    if not isinstance(doc, dict):
        fail("top level must be a JSON object")
    for key in doc:
        if key not in _TOP_KEYS:
            fail(f"unknown key {key!r}", key)
    for section, allowed in _SECTION_KEYS.items():
        sub = doc.get(section)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            fail(f"{section!r} must be an object", section)
        for key in sub:
            if key not in allowed:
                fail(f"unknown key {key!r} in {section!r}", section, key)
    if "method" not in doc:
        fail("missing required key 'method'")
    method = str(doc["method"]).upper()
    if method not in METHODS:
        fail(f"unknown method {doc['method']!r}; expected one of {sorted(METHODS)}", "method")

    cfg = _merge(DEFAULTS, doc)
    cfg["method"] = method
    if seed is not None:
        cfg["seed"] = int(seed)
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    cfg.setdefault("name", method.lower())
    cfg.setdefault("output_dir", str(Path("out") / cfg["name"]))
    cfg.setdefault("params", {})

    def build(section, factory):
        try:
            return factory(**cfg[section])
        except InvalidArgumentError as exc:
            key = _guess_key(str(exc), cfg[section])
            fail(f"{section}: {exc}", section, *( [key] if key else []))
        except TypeError as exc:
            fail(f"{section}: {exc}", section)

    grid = build("grid", make_grid)
    s = cfg["sensors"]
    try:
        sensors = make_sensor_array(s["radius"], s["count"], s.get("start_angle", 0.0))
    except (InvalidArgumentError, TypeError) as exc:
        key = _guess_key(str(exc), s)
        fail(f"sensors: {exc}", "sensors", *([key] if key else []))
    acq = build("acquisition", AcquisitionConfig)
    try:
        basis = WaveletBasis(grid.nx, grid.ny, cfg["basis"].get("levels", 3),
                             cfg["basis"].get("family", "haar"))
    except InvalidArgumentError as exc:
        fail(f"basis: {exc}", "basis")

    ptype = _PARAM_TYPES[method]
    pdoc = cfg["params"]
    if not isinstance(pdoc, dict):
        fail("'params' must be an object", "params")
    allowed = set(ptype.__dataclass_fields__)
    for key in pdoc:
        if key not in allowed:
            fail(f"unknown {method} parameter {key!r}", "params", key)
    try:
        params = ptype(**pdoc)
    except (InvalidArgumentError, TypeError) as exc:
        key = _guess_key(str(exc), pdoc)
        fail(f"params: {exc}", "params", *([key] if key else []))

    noise = cfg.get("noise")
    snr = None
    if noise is not None:
        snr = noise.get("snr_db")
        if snr is not None and not isinstance(snr, (int, float)):
            fail("noise.snr_db must be a number or null", "noise", "snr_db")
    table = cfg["phantom"].get("table", "builtin")
    if table != "builtin" and not Path(table).exists():
        fail(f"phantom table {table!r} not found", "phantom", "table")
    seed_val = cfg.get("seed", 0)
    if not isinstance(seed_val, int) or seed_val < 0:
        fail("seed must be a non-negative integer", "seed")

    return ExperimentConfig(
        name=str(cfg["name"]), grid=grid, phantom_table=table, sensors=sensors,
        sensor_spec=dict(s), acquisition=acq, basis=basis, method=method, params=params,
        snr_db=snr, output_dir=Path(cfg["output_dir"]), seed=seed_val,
        cache_dir=Path(cfg["cache_dir"]) if cfg.get("cache_dir") else None, raw=cfg)


def _guess_key(message, section):
    for key in sorted(section, key=len, reverse=True):
        if key in message:
            return key
    words = {"count": "count", "radius": "radius", "dimension": "nx", "pixel_size": "pixel_size"}
    for word, key in words.items():
        if word in message and key in section:
            return key
    return None


def load_config(path, output_dir=None, seed=None) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from None
    return parse_config(doc, text, str(path), output_dir=output_dir, seed=seed)


def preset_configs(name: str, output_dir=None, seed=None) -> list[ExperimentConfig]:
    """Parsed configs for a builtin preset; group presets expand to several runs."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    out = []
    for doc in PRESETS[name]:
        doc = dict(doc)
        if output_dir is not None:
            sub = Path(output_dir)
            doc["output_dir"] = str(sub / doc["name"]) if len(PRESETS[name]) > 1 else str(sub)
        out.append(parse_config(doc, source=f"preset:{name}", seed=seed))
    return out
