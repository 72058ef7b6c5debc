"""Run configuration: a YAML key/value tree with validation and canonical form.

Grammar (all keys optional unless noted, defaults in brackets)::

    grid:      {nx: [32], ny: [32], Lx: [1.0], Ly: [1.0]}
    physics:
      mu: [1.0]
      kappa: [1.0]
      varsigma: [1.0]
      entropy_delta: [1e-12]
      species:                       # list, at least one
        - {z: 1, a: 1.0, initial: {kind: gaussian, background: 0.2,
                                    amplitude: 1.0, center: [0.35, 0.5], width: 0.1}}
        - {z: -1, a: 1.0, initial: {kind: uniform, value: 1.0}}
      eta: {kind: constant, value: [0.0]}      # or {kind: sides, left, right, bottom, top}
      velocity: {kind: zero}                   # or {kind: vortex, amplitude: 1.0}
      relax_ions: [0.0]    # deterministic ion-only relaxation at rest before t = 0
    time:      {dt: [auto] | float, T: [1.0], safety: [0.5]}
    noise:     null | {K, sigma0, q, alpha_u, alpha_E, mode_family}
    truncation: {R_u: [null], R_psi: [null]}
    mollifier: {eps: [null]}
    monitors:  {thresholds: {name: level}, relative: [false]}
    output:    {directory: [null], snapshot_every: [0], csv: [diagnostics.csv]}
    seed: [0]
    ensemble:  {N: [8], p_list: [[2, 4]], workers: [null]}

``initial.kind`` is ``uniform`` (``value``), ``gaussian`` (``background``,
``amplitude``, ``center``, ``width``) or ``gaussians`` (``background`` and a
list ``blobs`` of ``{amplitude, center, width}``).  Monitor names are
``u_h1``, ``c_h1``, ``grad_u_l2``, ``grad_psi_w13p`` and ``u4_running``; with
``relative: true`` levels are multiples of the value at ``t = 0`` (for
``u4_running``, of ``|grad u0|^2 |u0|^2 T``).
"""

from __future__ import annotations

import copy
import math

import numpy as np
import yaml

from .regularization import MONITORED

NOISE_KEYS = ("K", "sigma0", "q", "alpha_u", "alpha_E", "mode_family")

DEFAULTS = {
    "grid": {"nx": 32, "ny": 32, "Lx": 1.0, "Ly": 1.0},
    "physics": {
        "mu": 1.0,
        "kappa": 1.0,
        "varsigma": 1.0,
        "entropy_delta": 1e-12,
        "species": [
            {"z": 1.0, "a": 1.0, "initial": {"kind": "gaussian", "background": 0.2, "amplitude": 1.0,
                                             "center": [0.35, 0.5], "width": 0.1}},
            {"z": -1.0, "a": 1.0, "initial": {"kind": "gaussian", "background": 0.2, "amplitude": 1.0,
                                              "center": [0.65, 0.5], "width": 0.1}},
        ],
        "eta": {"kind": "constant", "value": 0.0},
        "velocity": {"kind": "zero"},
        "relax_ions": 0.0,
    },
    "time": {"dt": "auto", "T": 1.0, "safety": 0.5},
    "noise": None,
    "truncation": {"R_u": None, "R_psi": None},
    "mollifier": {"eps": None},
    "monitors": {"thresholds": {}, "relative": False},
    "output": {"directory": None, "snapshot_every": 0, "csv": "diagnostics.csv"},
    "seed": 0,
    "ensemble": {"N": 8, "p_list": [2, 4], "workers": None},
}

NOISE_DEFAULTS = {"K": 16, "sigma0": 1.0, "q": 1.0, "alpha_u": 1.0, "alpha_E": 0.5,
                  "mode_family": "cosine"}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _merge(base, over, path=""):
    if over is None:
        return copy.deepcopy(base) if not isinstance(base, dict) else None
    if not isinstance(base, dict) or not isinstance(over, dict):
        return copy.deepcopy(over)
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {path + k!r}")
        if k in ("species", "thresholds", "initial", "eta", "velocity"):
            out[k] = copy.deepcopy(v)
        elif isinstance(base[k], dict):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(d, key, path, *, positive=False, nonneg=False, integer=False):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}{key} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}{key} must be finite")
    if integer and int(v) != v:
        raise ConfigError(f"{path}{key} must be an integer")
    if positive and not v > 0:
        raise ConfigError(f"{path}{key} must be positive")
    if nonneg and v < 0:
        raise ConfigError(f"{path}{key} must be non-negative")
    return int(v) if integer else float(v)


class SimConfig:
    """Validated configuration tree; ``data`` is the canonical nested dict."""

    def __init__(self, data: dict | None = None):
        if data is not None and not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        tree = copy.deepcopy(DEFAULTS)
        if data:
            for k, v in data.items():
                if k not in DEFAULTS:
                    raise ConfigError(f"unknown key {k!r}")
                if k == "noise":
                    tree["noise"] = None if v is None else {**NOISE_DEFAULTS, **_noise_dict(v)}
                elif isinstance(DEFAULTS[k], dict):
                    if v is None:
                        continue
                    if not isinstance(v, dict):
                        raise ConfigError(f"{k} must be a mapping")
                    tree[k] = _merge(DEFAULTS[k], v, k + ".")
                else:
                    tree[k] = v
        self.data = tree
        self._validate()

    # -- access ------------------------------------------------------------

    def __getitem__(self, key):
        return self.data[key]

    def get(self, dotted: str):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    @property
    def noise_on(self) -> bool:
        n = self.data["noise"]
        return n is not None and n["sigma0"] > 0 and (n["alpha_u"] != 0 or n["alpha_E"] != 0)

    # -- I/O ---------------------------------------------------------------

    @classmethod
    def from_yaml(cls, text: str) -> SimConfig:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        return cls(data or {})

    @classmethod
    def load(cls, path, overrides=()) -> SimConfig:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        return cls(apply_overrides(data, overrides))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def replace(self, **dotted) -> SimConfig:
        """Copy with dotted keys replaced, e.g. ``cfg.replace(**{"time.T": 2.0})``."""
        return SimConfig(apply_overrides(self.to_dict(), [f"{k}={_dump_scalar(v)}" for k, v in dotted.items()]))

    def __eq__(self, other):
        return isinstance(other, SimConfig) and self.data == other.data

    def __repr__(self):
        return f"SimConfig({self.data!r})"

    # -- validation ----------------------------------------------------------

    def _validate(self):
        d = self.data
        g = d["grid"]
        for k in ("nx", "ny"):
            g[k] = _num(g, k, "grid.", integer=True)
            if g[k] < 4:
                raise ConfigError(f"grid.{k} must be at least 4")
        for k in ("Lx", "Ly"):
            g[k] = _num(g, k, "grid.", positive=True)

        ph = d["physics"]
        ph["mu"] = _num(ph, "mu", "physics.", positive=True)
        ph["kappa"] = _num(ph, "kappa", "physics.")
        ph["varsigma"] = _num(ph, "varsigma", "physics.", nonneg=True)
        ph["entropy_delta"] = _num(ph, "entropy_delta", "physics.", positive=True)
        ph["relax_ions"] = _num(ph, "relax_ions", "physics.", nonneg=True)
        sp = ph["species"]
        if not isinstance(sp, list) or len(sp) < 1:
            raise ConfigError("physics.species must be a non-empty list")
        for i, s in enumerate(sp):
            path = f"physics.species[{i}]."
            if not isinstance(s, dict) or set(s) - {"z", "a", "initial"}:
                raise ConfigError(f"{path} must have keys z, a, initial")
            s["z"] = _num(s, "z", path)
            s["a"] = _num(s, "a", path, positive=True)
            s["initial"] = _validate_profile(s.get("initial"), path + "initial.")
        ph["eta"] = _validate_eta(ph["eta"])
        ph["velocity"] = _validate_velocity(ph["velocity"])

        t = d["time"]
        t["T"] = _num(t, "T", "time.", nonneg=True)
        t["safety"] = _num(t, "safety", "time.", positive=True)
        if t["safety"] > 1:
            raise ConfigError("time.safety must not exceed 1")
        if t["dt"] != "auto":
            t["dt"] = _num(t, "dt", "time.", positive=True)

        if d["noise"] is not None:
            n = d["noise"]
            n["K"] = _num(n, "K", "noise.", integer=True, positive=True)
            for k in ("sigma0", "q", "alpha_u", "alpha_E"):
                n[k] = _num(n, k, "noise.")
            if n["sigma0"] < 0:
                raise ConfigError("noise.sigma0 must be non-negative")
            if not n["q"] > 0.5:
                raise ConfigError("noise.q must exceed 1/2 for square-summable sigma_k")
            if n["mode_family"] != "cosine":
                raise ConfigError(f"unknown noise.mode_family {n['mode_family']!r}")

        tr = d["truncation"]
        for k in ("R_u", "R_psi"):
            if tr[k] is not None:
                tr[k] = _num(tr, k, "truncation.", positive=True)
        if d["mollifier"]["eps"] is not None:
            d["mollifier"]["eps"] = _num(d["mollifier"], "eps", "mollifier.", positive=True)

        mon = d["monitors"]
        if not isinstance(mon["thresholds"], dict):
            raise ConfigError("monitors.thresholds must be a mapping")
        for k in list(mon["thresholds"]):
            if k not in MONITORED:
                raise ConfigError(f"unknown monitor {k!r}; known: {', '.join(MONITORED)}")
            v = mon["thresholds"][k]
            mon["thresholds"][k] = math.inf if v in ("inf", ".inf") else _num(mon["thresholds"], k, "monitors.thresholds.", nonneg=True)
        if not isinstance(mon["relative"], bool):
            raise ConfigError("monitors.relative must be true or false")

        out = d["output"]
        out["snapshot_every"] = _num(out, "snapshot_every", "output.", integer=True, nonneg=True)
        if out["directory"] is not None and not isinstance(out["directory"], str):
            raise ConfigError("output.directory must be a path")
        if out["csv"] is not None and not isinstance(out["csv"], str):
            raise ConfigError("output.csv must be a file name or null")

        d["seed"] = _num(d, "seed", "", integer=True, nonneg=True)
        ens = d["ensemble"]
        ens["N"] = _num(ens, "N", "ensemble.", integer=True, positive=True)
        pl = ens["p_list"]
        if not isinstance(pl, list) or not pl:
            raise ConfigError("ensemble.p_list must be a non-empty list")
        ens["p_list"] = [_num({"p": p}, "p", "ensemble.p_list.") for p in pl]
        if any(p < 1 for p in ens["p_list"]):
            raise ConfigError("moment orders must be at least 1")
        if ens["workers"] is not None:
            ens["workers"] = _num(ens, "workers", "ensemble.", integer=True, positive=True)

        self._check_compatibility()

    def _check_compatibility(self):
        if self.data["physics"]["varsigma"] != 0.0:
            return
        from .simulation import initial_ions, boundary_eta
        from .grid import Grid, boundary_integral
        g = self.grid()
        ions = initial_ions(self)
        rho = ions.charge_density()
        eta = boundary_eta(self, g)
        defect = rho.integral() + boundary_integral(g, eta)
        scale = np.abs(rho.values).sum() * g.cell_area + boundary_integral(g, np.abs(eta))
        if abs(defect) > 1e-10 * max(scale, 1e-300):
            raise ConfigError(f"varsigma = 0 needs int rho + int eta = 0; defect is {defect:.6g}")

    def grid(self):
        from .grid import Grid
        g = self.data["grid"]
        return Grid(g["nx"], g["ny"], g["Lx"], g["Ly"])


def _noise_dict(v):
    if not isinstance(v, dict):
        raise ConfigError("noise must be a mapping or null")
    extra = set(v) - set(NOISE_KEYS)
    if extra:
        raise ConfigError(f"unknown noise keys {sorted(extra)}")
    return v


def _validate_profile(p, path):
    if not isinstance(p, dict) or "kind" not in p:
        raise ConfigError(f"{path}kind is required")
    kind = p["kind"]
    if kind == "uniform":
        _only(p, {"kind", "value"}, path)
        return {"kind": kind, "value": _num(p, "value", path, nonneg=True)}
    if kind == "gaussian":
        _only(p, {"kind", "background", "amplitude", "center", "width"}, path)
        q = {"background": 0.0, **p}
        return {"kind": kind, "background": _num(q, "background", path, nonneg=True),
                "amplitude": _num(q, "amplitude", path, nonneg=True),
                "center": _pair(q.get("center"), path + "center"),
                "width": _num(q, "width", path, positive=True)}
    if kind == "gaussians":
        _only(p, {"kind", "background", "blobs"}, path)
        q = {"background": 0.0, **p}
        blobs = q.get("blobs")
        if not isinstance(blobs, list):
            raise ConfigError(f"{path}blobs must be a list")
        out = []
        for b in blobs:
            _only(b, {"amplitude", "center", "width"}, path + "blobs.")
            out.append({"amplitude": _num(b, "amplitude", path, nonneg=True),
                        "center": _pair(b.get("center"), path + "center"),
                        "width": _num(b, "width", path, positive=True)})
        return {"kind": kind, "background": _num(q, "background", path, nonneg=True), "blobs": out}
    raise ConfigError(f"{path}kind must be uniform, gaussian or gaussians, got {kind!r}")


def _only(p, keys, path):
    if not isinstance(p, dict):
        raise ConfigError(f"{path} must be a mapping")
    extra = set(p) - keys
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)} in {path.rstrip('.')}")


def _pair(v, path):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{path} must be a pair [x, y]")
    return [_num({"v": x}, "v", path) for x in v]


def _validate_eta(e):
    if not isinstance(e, dict) or "kind" not in e:
        raise ConfigError("physics.eta.kind is required")
    if e["kind"] == "constant":
        _only(e, {"kind", "value"}, "physics.eta.")
        return {"kind": "constant", "value": _num({"value": 0.0, **e}, "value", "physics.eta.")}
    if e["kind"] == "sides":
        _only(e, {"kind", "left", "right", "bottom", "top"}, "physics.eta.")
        q = {"left": 0.0, "right": 0.0, "bottom": 0.0, "top": 0.0, **e}
        return {"kind": "sides", **{k: _num(q, k, "physics.eta.") for k in ("left", "right", "bottom", "top")}}
    raise ConfigError(f"physics.eta.kind must be constant or sides, got {e['kind']!r}")


def _validate_velocity(v):
    if not isinstance(v, dict) or "kind" not in v:
        raise ConfigError("physics.velocity.kind is required")
    if v["kind"] == "zero":
        _only(v, {"kind"}, "physics.velocity.")
        return {"kind": "zero"}
    if v["kind"] == "vortex":
        _only(v, {"kind", "amplitude"}, "physics.velocity.")
        return {"kind": "vortex", "amplitude": _num({"amplitude": 1.0, **v}, "amplitude", "physics.velocity.")}
    raise ConfigError(f"physics.velocity.kind must be zero or vortex, got {v['kind']!r}")


def _dump_scalar(v):
    return yaml.safe_dump(v, default_flow_style=True).strip().removesuffix("...").strip()


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings; values are parsed as YAML scalars or lists."""
    data = copy.deepcopy(data) if data else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}") from exc
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = value
    return data


# ---------------------------------------------------------------------------
# named benchmarks


def benchmark(name: str = "default", **dotted) -> SimConfig:
    """Named configurations used by the tests and demos.

    ``default``: 32x32, z = +-1, separated Gaussian blobs, Robin walls, no noise.
    ``stochastic``: ``default`` with the default noise model switched on.
    ``relaxation``: two blobs relaxing at rest without noise, ``T = 1``.
    ``neumann``: ``default`` with ``varsigma = 0``.
    ``rest``: uniform neutral mixture at rest.
    ``balance``: noise on a fluid at rest whose ions were first relaxed to
    equilibrium under a left/right potential difference, ``T = 0.1``.
    """
    base = {}
    if name == "default":
        pass
    elif name == "stochastic":
        base = {"noise": dict(NOISE_DEFAULTS), "physics": {"velocity": {"kind": "vortex", "amplitude": 1.0}}}
    elif name == "balance":
        base = {"noise": dict(NOISE_DEFAULTS), "time": {"T": 0.1, "safety": 0.9},
                "physics": {"relax_ions": 1.0,
                            "eta": {"kind": "sides", "left": 1.0, "right": -1.0, "bottom": 0.0, "top": 0.0}}}
    elif name == "relaxation":
        base = {"time": {"T": 1.0, "safety": 0.9}}
    elif name == "neumann":
        base = {"physics": {"varsigma": 0.0}}
    elif name == "rest":
        base = {"physics": {"species": [
            {"z": 1.0, "a": 1.0, "initial": {"kind": "uniform", "value": 1.0}},
            {"z": -1.0, "a": 1.0, "initial": {"kind": "uniform", "value": 1.0}}]}}
    else:
        raise ConfigError(f"unknown benchmark {name!r}")
    cfg = SimConfig(base)
    return cfg.replace(**dotted) if dotted else cfg
