"""JSON/CSV serialization of configs and run artifacts."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arithmetic import DiophantineData
from .torus_fn import GroupTag, TorusMatFn, from_records, to_records


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    return {"re": M.real.tolist(), "im": M.imag.tolist()}


def matrix_from_json(obj, name: str = "matrix") -> np.ndarray:
    try:
        if isinstance(obj, dict):
            re = np.asarray(obj["re"], dtype=float)
            im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        else:
            re, im = np.asarray(obj, dtype=float), 0.0
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot parse matrix ({exc})") from None
    M = re + 1j * im
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"{name}: expected a square matrix, got shape {M.shape}")
    return M


def fn_to_json(f: TorusMatFn) -> dict:
    return {"n": f.n, "d": f.d, "real": f.real, "budget": f.budget, "modes": to_records(f)}


def fn_from_json(obj: dict, name: str = "function") -> TorusMatFn:
    try:
        return from_records(obj["modes"], int(obj["n"]), int(obj["d"]), bool(obj.get("real", False)),
                            float(obj.get("budget", 0.0)))
    except KeyError as exc:
        raise ConfigError(f"{name}: missing field {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def write_json(path: str | Path, obj) -> None:
    # json writes the shortest repr of each float, which round-trips exactly
    Path(path).write_text(json.dumps(obj, indent=1, allow_nan=True) + "\n")


@dataclass
class ProblemConfig:
    n: int
    d: int
    omega: tuple
    kappa: float
    tau: float
    group: GroupTag
    A: np.ndarray
    F: TorusMatFn
    r: float = 0.5
    params: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def dd(self) -> DiophantineData:
        return DiophantineData(tuple(self.omega), self.kappa, self.tau)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "omega": list(self.omega), "kappa": self.kappa, "tau": self.tau,
            "group": self.group.value, "A": matrix_to_json(self.A), "F": to_records(self.F),
            "r": self.r, "params": dict(self.params), "seed": self.seed,
        }


_REQUIRED = ("n", "d", "omega", "kappa", "tau", "group", "A", "F")


def _generate(spec: dict, n: int, d: int, group: GroupTag, seed: int, r: float, source: str) -> TorusMatFn:
    from .instances import reference_perturbation
    if spec["generator"] != "reference":
        raise ConfigError(f"{source}: field F: unknown generator {spec['generator']!r}")
    if n != 2 or d != 2:
        raise ConfigError(f"{source}: field F: the reference generator needs n = d = 2")
    return reference_perturbation(group, seed, float(spec.get("size", 1e-3)), r, int(spec.get("radius", 2)))


def parse_config(obj: dict, source: str = "config", seed_override: int | None = None) -> ProblemConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: top level must be an object")
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise ConfigError(f"{source}: missing field(s) {', '.join(missing)}")
    try:
        n, d = int(obj["n"]), int(obj["d"])
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: fields n and d must be integers") from None
    try:
        omega = tuple(float(x) for x in obj["omega"])
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: field omega must be a list of numbers") from None
    if len(omega) != d:
        raise ConfigError(f"{source}: field omega has length {len(omega)}, expected d={d}")
    try:
        group = GroupTag.parse(obj["group"])
    except ValueError as exc:
        raise ConfigError(f"{source}: field group: {exc}") from None
    A = matrix_from_json(obj["A"], f"{source}: field A")
    if A.shape != (n, n):
        raise ConfigError(f"{source}: field A has shape {A.shape}, expected ({n}, {n})")
    if group.is_real:
        if np.abs(A.imag).max() > 0:
            raise ConfigError(f"{source}: field A must be real for {group.value}")
        A = A.real
    Fobj = obj["F"]
    seed = obj.get("seed", 0) if seed_override is None else seed_override
    if isinstance(Fobj, dict) and "generator" in Fobj:
        F = _generate(Fobj, n, d, group, int(seed), float(obj.get("r", 0.5)), source)
    else:
        if isinstance(Fobj, dict):
            Fobj = Fobj.get("modes", [])
        try:
            F = from_records(Fobj, n, d, real=False)
        except ValueError as exc:
            raise ConfigError(f"{source}: field F: {exc}") from None
    params = obj.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError(f"{source}: field params must be an object")
    try:
        cfg = ProblemConfig(n, d, omega, float(obj["kappa"]), float(obj["tau"]), group, A, F,
                            float(obj.get("r", 0.5)), params, int(seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    try:
        cfg.dd
    except ValueError as exc:
        raise ConfigError(f"{source}: Diophantine data: {exc}") from None
    return cfg


def load_config(path: str | Path, seed: int | None = None) -> ProblemConfig:
    return parse_config(read_json(path), str(path), seed)


def write_csv(path: str | Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def jsonable(obj):
    """Recursively convert numpy and library objects into JSON-friendly values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return matrix_to_json(obj) if obj.ndim == 2 and np.iscomplexobj(obj) else obj.tolist()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, TorusMatFn):
        return fn_to_json(obj)
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if isinstance(obj, (str, int)) or obj is None:
        return obj
    return str(obj)
