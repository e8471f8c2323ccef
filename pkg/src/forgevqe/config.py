"""Experiment configuration read from INI files.

Example::

    [model]
    kind = fh
    n_sites = 4
    t = 1.0
    t_m = 1.0
    u = 1.0

    [run]
    cuts = 1
    max_iter = 100

    [scan]
    t_m = 0, 0.25, 0.5, 1, 2
    chi = 5

Every value is checked before any computation starts.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .adapt import LoopOptions
from .fermion import InteractionFileError, Model, fermi_hubbard, parse_interaction, shell_model
from .forge import ForgeOptions


class ConfigError(ValueError):
    """Invalid experiment configuration."""


_SECTIONS = {
    "model": {"kind", "n_sites", "t", "t_m", "u", "n_up", "n_down", "interaction", "z", "n", "two_m"},
    "run": {"cuts", "max_iter", "infidelity_tol", "gradient_tol", "tie_tol", "lazy_period",
            "exclusion_period", "lam_mode", "multiplet", "chi_cut", "bound_rtol", "timing", "threads"},
    "scan": {"t_m", "chi", "n_values"},
}


@dataclass
class ExperimentConfig:
    kind: str
    model_params: dict
    cuts: int = 0
    max_iter: int = 100
    infidelity_tol: float | None = None
    gradient_tol: float = 1e-6
    tie_tol: float = 1e-10
    lazy_period: int = 1
    exclusion_period: int = 0
    lam_mode: str = "fixed"
    multiplet: int | None = None
    chi_cut: int | None = None
    bound_rtol: float = 0.05
    timing: bool = False
    threads: int | None = None
    scan_t_m: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 1.5, 2.0])
    scan_chi: int = 5
    n_values: int = 8
    source: str = ""

    def model(self) -> Model:
        p = self.model_params
        if self.kind == "fh":
            return fermi_hubbard(p["n_sites"], p["t"], p["t_m"], p["u"], p.get("n_up"), p.get("n_down"))
        return shell_model(p["text"], p["z"], p["n"], p["two_m"])

    def loop_options(self) -> LoopOptions:
        tol = self.infidelity_tol
        if tol is None:
            tol = 1e-5 if self.cuts == 0 else 0.0
        return LoopOptions(
            max_iter=self.max_iter, infidelity_tol=tol, gradient_tol=self.gradient_tol,
            tie_tol=self.tie_tol, lazy_period=self.lazy_period,
            exclusion_period=self.exclusion_period, bound_rtol=self.bound_rtol, timing=self.timing,
        )

    def forge_options(self) -> ForgeOptions:
        return ForgeOptions(layers=max(self.cuts, 1), lam_mode=self.lam_mode,
                            multiplet=self.multiplet, chi_cut=self.chi_cut)


def _get(sec, key, conv, default=None, check=None, what=""):
    if key not in sec:
        return default
    raw = sec[key].strip()
    try:
        val = conv(raw)
    except ValueError:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r} is not a valid {what or conv.__name__}") from None
    if check is not None and not check(val):
        raise ConfigError(f"[{sec.name}] {key} = {raw!r} is out of range")
    return val


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _float(raw: str) -> float:
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError(raw)
    return v


def _floats(raw: str) -> list:
    vals = [_float(x) for x in raw.replace(",", " ").split()]
    if not vals:
        raise ValueError(raw)
    return vals


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return config_from_parser(parser, path.parent, str(path))


def config_from_parser(parser: configparser.ConfigParser, base: Path = Path("."),
                       source: str = "") -> ExperimentConfig:
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        extra = set(parser[name]) - _SECTIONS[name]
        if extra:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
    if "model" not in parser:
        raise ConfigError("missing [model] section")
    m = parser["model"]
    kind = m.get("kind", "").strip().lower()
    pos = lambda v: v > 0  # noqa: E731
    nonneg = lambda v: v >= 0  # noqa: E731
    if kind == "fh":
        ns = _get(m, "n_sites", int, 4, lambda v: v >= 2 and v % 2 == 0, "integer")
        params = {
            "n_sites": ns,
            "t": _get(m, "t", _float, 1.0, what="number"),
            "t_m": _get(m, "t_m", _float, 1.0, what="number"),
            "u": _get(m, "u", _float, 1.0, what="number"),
            "n_up": _get(m, "n_up", int, None, lambda v: 0 <= v <= ns, "integer"),
            "n_down": _get(m, "n_down", int, None, lambda v: 0 <= v <= ns, "integer"),
        }
    elif kind == "nsm":
        if "interaction" not in m:
            raise ConfigError("[model] interaction is required for kind = nsm")
        ipath = Path(m["interaction"].strip())
        if not ipath.is_absolute():
            ipath = base / ipath
        try:
            text = ipath.read_text(encoding="utf-8")
            parse_interaction(text)
        except OSError as exc:
            raise ConfigError(f"cannot read interaction file {ipath}: {exc.strerror}") from None
        except InteractionFileError as exc:
            raise ConfigError(f"interaction file {ipath}: {exc}") from None
        params = {
            "interaction": str(ipath),
            "text": text,
            "z": _get(m, "z", int, None, nonneg, "integer"),
            "n": _get(m, "n", int, None, nonneg, "integer"),
            "two_m": _get(m, "two_m", int, 0, what="integer"),
        }
        if params["z"] is None or params["n"] is None:
            raise ConfigError("[model] z and n are required for kind = nsm")
    else:
        raise ConfigError(f"[model] kind must be 'fh' or 'nsm', got {kind!r}")

    if "run" not in parser:
        parser.add_section("run")
    r = parser["run"]
    cfg = ExperimentConfig(kind=kind, model_params=params, source=source)
    cfg.cuts = _get(r, "cuts", int, 0, lambda v: v in (0, 1, 2), "integer")
    cfg.max_iter = _get(r, "max_iter", int, 100, nonneg, "integer")
    cfg.infidelity_tol = _get(r, "infidelity_tol", _float, None, nonneg, "number")
    cfg.gradient_tol = _get(r, "gradient_tol", _float, 1e-6, nonneg, "number")
    cfg.tie_tol = _get(r, "tie_tol", _float, 1e-10, nonneg, "number")
    cfg.lazy_period = _get(r, "lazy_period", int, 1, pos, "integer")
    cfg.exclusion_period = _get(r, "exclusion_period", int, 0, nonneg, "integer")
    cfg.lam_mode = r.get("lam_mode", "fixed").strip()
    if cfg.lam_mode not in ("fixed", "variational"):
        raise ConfigError(f"[run] lam_mode must be 'fixed' or 'variational', got {cfg.lam_mode!r}")
    cfg.multiplet = _get(r, "multiplet", int, None, nonneg, "integer")
    cfg.chi_cut = _get(r, "chi_cut", int, None, pos, "integer")
    cfg.bound_rtol = _get(r, "bound_rtol", _float, 0.05, nonneg, "number")
    cfg.timing = _get(r, "timing", _bool, False, what="boolean")
    cfg.threads = _get(r, "threads", int, None, pos, "integer")
    if kind == "fh" and cfg.cuts == 2:
        raise ConfigError("Fermi-Hubbard runs support cuts = 0 or 1")

    if "scan" in parser:
        s = parser["scan"]
        cfg.scan_t_m = _get(s, "t_m", _floats, cfg.scan_t_m, what="number list")
        cfg.scan_chi = _get(s, "chi", int, 5, pos, "integer")
        cfg.n_values = _get(s, "n_values", int, 8, pos, "integer")
    return cfg
