"""JSON run configurations: parsing and validation into model specs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import FermionImpuritySpec, SpecError, SpinBosonSpec, spin_hamiltonian
from .serialize import decode_complex
from .superop import fermionic_algebra, pauli, site_operator

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "observable_matrix"]


class ConfigError(ValueError):
    """A configuration file is malformed; the message names the offending field."""


@dataclass
class RunConfig:
    spec: object
    T: float = 5.0
    steps: int = 50
    observables: dict = field(default_factory=dict)
    output: str = "run"
    seed: int = 0
    rho_s0: np.ndarray | None = None
    source: str | None = None

    @property
    def family(self) -> str:
        return "fermion" if isinstance(self.spec, FermionImpuritySpec) else "spin_boson"

    @property
    def dim_sys(self) -> int:
        return 2 ** self.spec.n


def _matrix(raw: dict, key: str, required: bool = False, ndim: int = 2):
    if key not in raw or raw[key] is None:
        if required:
            raise ConfigError(f"model.{key} is required")
        return None
    try:
        return decode_complex(raw[key], ndim=ndim, name=f"model.{key}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _real(raw: dict, key: str, default=None):
    if key not in raw or raw[key] is None:
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a real number")
    return float(v)


def _spin_boson(raw: dict) -> SpinBosonSpec:
    hs = _matrix(raw, "sys_hamiltonian")
    g = _matrix(raw, "g", required=True)
    if hs is None and ("delta" in raw or "h" in raw):
        n = g.shape[0]
        delta = np.asarray(raw.get("delta", [1.0] * n), dtype=float)
        h = np.asarray(raw.get("h", [0.0] * n), dtype=float)
        if delta.shape != (n,) or h.shape != (n,):
            raise ConfigError(f"model.delta and model.h must have {n} entries")
        hs = spin_hamiltonian(delta, h)
    jumps = tuple(decode_complex(j, 2, "model.sys_jumps") for j in raw.get("sys_jumps", []))
    return SpinBosonSpec(
        H=_matrix(raw, "H", required=True), g=g, dynamics=raw.get("dynamics", "lindblad"),
        Gamma=_matrix(raw, "Gamma"), M=_matrix(raw, "M"), beta=_real(raw, "beta"),
        sys_hamiltonian=hs, sys_jumps=jumps, fock_cutoff=int(raw.get("fock_cutoff", 4)),
    )


def _fermion(raw: dict) -> FermionImpuritySpec:
    V = None
    if raw.get("V") is not None:
        try:
            V = decode_complex(raw["V"], ndim=4, name="model.V")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    jumps = tuple(decode_complex(j, 2, "model.sys_jumps") for j in raw.get("sys_jumps", []))
    n_minus = raw.get("n_minus")
    return FermionImpuritySpec(
        h=_matrix(raw, "h", required=True), H=_matrix(raw, "H", required=True),
        nu=_matrix(raw, "nu", required=True), dynamics=raw.get("dynamics", "lindblad"),
        n_minus=None if n_minus is None else int(n_minus),
        Gamma_minus=_matrix(raw, "Gamma_minus"), Gamma_plus=_matrix(raw, "Gamma_plus"),
        M=_matrix(raw, "M"), V=V, beta=_real(raw, "beta"), sys_jumps=jumps,
    )


def observable_matrix(entry, family: str, n: int) -> np.ndarray:
    """A preset name (``sz_1``, ``sx_1``, ``sy_1``, ``occupation_1``; 1-based) or an explicit matrix."""
    dim = 2**n
    if isinstance(entry, str):
        name, _, idx = entry.rpartition("_")
        if not idx.isdigit() or not 1 <= int(idx) <= n:
            raise ConfigError(f"observable preset {entry!r} needs a site index in 1..{n}")
        j = int(idx) - 1
        if name in ("sx", "sy", "sz"):
            return site_operator(pauli(name[1]), j, n)
        if name == "occupation":
            if family != "fermion":
                return 0.5 * (np.eye(dim) - site_operator(pauli("z"), j, n))
            alg = fermionic_algebra(n)
            return alg.creators[j] @ alg.annihilators[j]
        raise ConfigError(f"unknown observable preset {entry!r}")
    try:
        m = decode_complex(entry, 2, "observables")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if m.shape != (dim, dim):
        raise ConfigError(f"observable must be {dim}x{dim}")
    return m


def parse_config(data: dict, source: str | None = None) -> RunConfig:
    if not isinstance(data, dict) or "model" not in data:
        raise ConfigError("configuration needs a 'model' section")
    raw = data["model"]
    family = raw.get("family", "spin_boson")
    try:
        if family == "spin_boson":
            spec = _spin_boson(raw)
        elif family == "fermion":
            spec = _fermion(raw)
        else:
            raise ConfigError(f"model.family must be 'spin_boson' or 'fermion', got {family!r}")
    except SpecError as exc:
        raise ConfigError(f"model: {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"model: {exc}") from None
    time = data.get("time", {})
    T = _real(time, "T", 5.0)
    steps = time.get("steps", 50)
    if not T > 0:
        raise ConfigError("time.T must be positive")
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
        raise ConfigError("time.steps must be a positive integer")
    obs = {name: observable_matrix(v, family, spec.n) for name, v in data.get("observables", {}).items()}
    rho = None
    if data.get("rho_s0") is not None:
        try:
            rho = decode_complex(data["rho_s0"], 2, "rho_s0")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if rho.shape != (2**spec.n, 2**spec.n):
            raise ConfigError(f"rho_s0 must be {2**spec.n}x{2**spec.n}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(spec, T, steps, obs, str(data.get("output", "run")), seed, rho, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data, str(path))
