"""Experiment configuration: YAML in, validated dataclasses out, YAML back.

Parsing is fail-closed. Unknown keys, wrong types and missing required
fields (the model name and the run seed) raise :class:`ConfigError` with the
line of the offending entry.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field

import yaml

PROBE_DEFAULTS: dict = {
    "hypotheses": {"radius": 2.0, "n_points": 256},
    "fokker_planck": {
        "t": None,  # defaults to run.t / 2
        "h_time": 0.05,
        "bias_constant": 1.0,
        "test_functions": None,  # defaults to three bumps around x0
    },
    "exp_moment": {"p": 1.0, "x0_list": None, "ratio_bound": 10.0, "expect_fail": False},
    "small_deviation": {"f": None, "eps": [0.01, 0.05, 0.1], "delta": 0.9, "n_steps": 64},
    "covariance_scaling": {"t_grid": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125], "n_steps": 256, "margin": 0.5},
    "flow_moments": {
        "t_grid": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625],
        "p": 2.0,
        "eps_grid": [0.5, 1.0],
        "n_steps": 64,
        "bound_factor": 10.0,
    },
    "clock_moments": {"t_grid": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625], "p": 1.0, "bound_factor": 10.0},
    "density": {"t": None, "beta3_min": 0.5, "mass_range": [0.95, 1.02]},
}

TEST_FUNCTION_KEYS = {"bump": {"center", "width"}, "cosine": {"w", "phase"}}


class ConfigError(ValueError):
    pass


class _Map(dict):
    """Mapping that remembers the source line of itself and of each key."""

    line: int = 0
    key_lines: dict


class _Seq(list):
    line: int = 0


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 wants a dot in floats; accept 1e-3 as a number, as YAML 1.2 does
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)?(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789."),
)


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ConfigError(f"line {k_node.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(v_node, deep=True)
        out.key_lines[key] = k_node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(n, deep=True) for n in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


def _line(obj, key=None) -> int:
    if key is not None and isinstance(obj, _Map):
        return obj.key_lines.get(key, obj.line)
    return getattr(obj, "line", 0)


def _where(obj, key=None) -> str:
    ln = _line(obj, key)
    return f"line {ln}: " if ln else ""


def _section(doc, name, allowed, required=()):
    sec = doc.get(name, _Map())
    if sec is None:
        sec = _Map()
    if not isinstance(sec, dict):
        raise ConfigError(f"{_where(doc, name)}section {name!r} must be a mapping")
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"{_where(sec, k)}unknown key {k!r} in section {name!r}")
    for k in required:
        if k not in sec:
            raise ConfigError(f"{_where(doc, name) or _where(sec)}missing required key {k!r} in section {name!r}")
    return sec


def _num(sec, key, default, kind=float, positive=False):
    if key not in sec or sec[key] is None:
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{_where(sec, key)}{key!r} must be a number")
    if kind is int and float(v) != int(v):
        raise ConfigError(f"{_where(sec, key)}{key!r} must be an integer")
    v = kind(v)
    if positive and v <= 0:
        raise ConfigError(f"{_where(sec, key)}{key!r} must be positive")
    return v


def _plain(obj):
    """Strip the line-tracking containers."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


# ------------------------------------------------------------------ sections


@dataclass
class ModelConfig:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class SubordinatorConfig:
    drift: float | list = 0.0
    family: dict = field(default_factory=lambda: {"family": "tempered_stable", "alpha": 0.5, "lam": 1.0})
    components: list | None = None  # explicit per-axis families and drifts override ``family``


@dataclass
class RunConfig:
    seed: int
    t: float = 1.0
    h: float = 1e-3
    n_paths: int = 10_000
    x0: list | None = None


@dataclass
class ProbeConfig:
    kind: str
    id: str | None = None
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.id or self.kind


@dataclass
class OutputConfig:
    directory: str = "results"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    model: ModelConfig
    run: RunConfig
    subordinator: SubordinatorConfig = field(default_factory=SubordinatorConfig)
    probes: list = field(default_factory=list)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        d = {
            "model": {"name": self.model.name, **self.model.params},
            "subordinator": asdict(self.subordinator),
            "run": asdict(self.run),
            "probes": [{"kind": p.kind, **({"id": p.id} if p.id else {}), **p.params} for p in self.probes],
            "output": asdict(self.output),
        }
        if d["subordinator"]["components"] is None:
            del d["subordinator"]["components"]
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """SHA-256 of everything that affects results (the output section is excluded)."""
        d = self.to_dict()
        del d["output"]
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


MODEL_KEYS = {"name", "potential", "phase_dim", "dim"}
FAMILY_KEYS = {"family", "alpha", "c", "lam"}


def _family(obj, where_obj, key) -> dict:
    if not isinstance(obj, dict) or "family" not in obj:
        raise ConfigError(f"{_where(where_obj, key)}a family needs a 'family' name")
    for k in obj:
        if k not in FAMILY_KEYS:
            raise ConfigError(f"{_where(obj, k)}unknown family key {k!r}")
    if obj["family"] not in ("zero", "stable", "tempered_stable"):
        raise ConfigError(f"{_where(obj, 'family')}unknown family {obj['family']!r}")
    return _plain(obj)


def _probe(obj) -> ProbeConfig:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{_where(obj)}each probe needs a 'kind'")
    kind = obj["kind"]
    if kind not in PROBE_DEFAULTS:
        raise ConfigError(f"{_where(obj, 'kind')}unknown probe kind {kind!r}; known: {sorted(PROBE_DEFAULTS)}")
    allowed = set(PROBE_DEFAULTS[kind]) | {"kind", "id"}
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{_where(obj, k)}unknown key {k!r} for probe {kind!r}")
    for tf in obj.get("test_functions") or []:
        tk = tf.get("kind") if isinstance(tf, dict) else None
        if tk not in TEST_FUNCTION_KEYS:
            raise ConfigError(f"{_where(tf)}test function kind must be one of {sorted(TEST_FUNCTION_KEYS)}")
        for k in tf:
            if k != "kind" and k not in TEST_FUNCTION_KEYS[tk]:
                raise ConfigError(f"{_where(tf, k)}unknown key {k!r} for test function {tk!r}")
    params = {k: _plain(v) for k, v in obj.items() if k not in ("kind", "id")}
    return ProbeConfig(kind, obj.get("id"), params)


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = f"line {mark.line + 1}: " if mark else ""
        raise ConfigError(f"{line}malformed config: {exc.problem}") from exc
    if doc is None:
        doc = _Map()
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of sections")
    for k in doc:
        if k not in ("model", "subordinator", "run", "probes", "output"):
            raise ConfigError(f"{_where(doc, k)}unknown section {k!r}")
    if "model" not in doc:
        raise ConfigError("missing required section 'model'")
    m = _section(doc, "model", MODEL_KEYS, required=("name",))
    model = ModelConfig(str(m["name"]), {k: _plain(v) for k, v in m.items() if k != "name"})

    s = _section(doc, "subordinator", {"drift", "family", "components"})
    sub = SubordinatorConfig()
    if "drift" in s:
        d = s["drift"]
        if isinstance(d, list):
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in d):
                raise ConfigError(f"{_where(s, 'drift')}drift entries must be numbers")
            sub.drift = [float(x) for x in d]
        else:
            sub.drift = _num(s, "drift", 0.0)
    if "family" in s:
        sub.family = _family(s["family"], s, "family")
    if "components" in s and s["components"] is not None:
        comps = s["components"]
        if not isinstance(comps, list):
            raise ConfigError(f"{_where(s, 'components')}components must be a list")
        sub.components = [_family(c, s, "components") for c in comps]

    if "run" not in doc:
        raise ConfigError("missing required section 'run' (the seed has no default)")
    r = _section(doc, "run", {"seed", "t", "h", "n_paths", "x0"}, required=("seed",))
    seed = _num(r, "seed", None, kind=int)
    if seed < 0:
        raise ConfigError(f"{_where(r, 'seed')}seed must be nonnegative")
    x0 = r.get("x0")
    if x0 is not None and not (isinstance(x0, list) and all(isinstance(v, (int, float)) for v in x0)):
        raise ConfigError(f"{_where(r, 'x0')}x0 must be a list of numbers")
    run = RunConfig(
        seed=seed,
        t=_num(r, "t", 1.0, positive=True),
        h=_num(r, "h", 1e-3, positive=True),
        n_paths=_num(r, "n_paths", 10_000, kind=int, positive=True),
        x0=None if x0 is None else [float(v) for v in x0],
    )

    probes_raw = doc.get("probes") or []
    if not isinstance(probes_raw, list):
        raise ConfigError(f"{_where(doc, 'probes')}probes must be a list")
    probes = [_probe(p) for p in probes_raw]
    labels = [p.label for p in probes]
    if len(set(labels)) != len(labels):
        raise ConfigError("probe ids must be unique (set 'id' to run a kind twice)")

    o = _section(doc, "output", {"directory", "formats"})
    out = OutputConfig()
    if "directory" in o:
        out.directory = str(o["directory"])
    if "formats" in o:
        fm = _plain(o["formats"])
        if not isinstance(fm, list) or any(f not in ("csv", "json") for f in fm):
            raise ConfigError(f"{_where(o, 'formats')}formats must be a list drawn from ['csv', 'json']")
        out.formats = fm
    return ExperimentConfig(model, run, sub, probes, out)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def probe_params(probe: ProbeConfig) -> dict:
    """Defaults for the probe kind overlaid with the configured values."""
    out = copy.deepcopy(PROBE_DEFAULTS[probe.kind])
    out.update(copy.deepcopy(probe.params))
    return out
