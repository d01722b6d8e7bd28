"""Synthesised gains and certificates, with a JSON round trip."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODES = ("nominal", "global", "disturbed", "robust")


@dataclass
class SynthesisResult:
    """Allocator/anti-windup gains plus the certificate that backs them.

    ``P_vertices`` has one Lyapunov matrix per uncertainty vertex in robust
    mode and a single entry otherwise; ``P`` is the first of them.
    ``J_bar`` is the slack matrix of the synthesis LMIs, kept so the LMIs can
    be rebuilt from recovered quantities alone.  Certificate fields may be
    None for externally supplied gains.
    """

    mode: str
    K_f: np.ndarray
    E_c: np.ndarray
    E_f: np.ndarray
    P_vertices: list = field(default_factory=list)
    G: np.ndarray | None = None
    S: np.ndarray | None = None
    gamma: float | None = None
    mu: float | None = None
    lam: float | None = None
    J_bar: np.ndarray | None = None
    sigma: float | None = None
    objective: float | None = None
    status: str = "external"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES + ("external",):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.K_f = np.atleast_2d(np.asarray(self.K_f, dtype=float))
        self.E_c = np.atleast_2d(np.asarray(self.E_c, dtype=float))
        self.E_f = np.atleast_2d(np.asarray(self.E_f, dtype=float))
        self.P_vertices = [np.asarray(P, dtype=float) for P in self.P_vertices]
        for name in ("G", "S", "J_bar"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.atleast_2d(np.asarray(val, dtype=float)))

    @property
    def E(self) -> np.ndarray:
        return np.vstack([self.E_c, self.E_f])

    @property
    def P(self) -> np.ndarray | None:
        return self.P_vertices[0] if self.P_vertices else None

    @property
    def level(self) -> float:
        """Ellipsoid level ``mu`` (1 outside disturbed mode)."""
        return 1.0 if self.mu is None else float(self.mu)

    @property
    def energy_bound(self) -> float | None:
        """Certified bound on the integral of ``sat(y_f)' W sat(y_f)``."""
        if self.gamma is None:
            return None
        return float(self.gamma) / self.level

    def P_at(self, alpha=None) -> np.ndarray | None:
        if not self.P_vertices:
            return None
        if alpha is None or len(self.P_vertices) == 1:
            return self.P_vertices[0]
        alpha = np.asarray(alpha, dtype=float)
        return sum(a * P for a, P in zip(alpha, self.P_vertices))

    def to_dict(self) -> dict:
        def mat(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "mode": self.mode,
            "status": self.status,
            "K_f": mat(self.K_f),
            "E_c": mat(self.E_c),
            "E_f": mat(self.E_f),
            "P_vertices": [mat(P) for P in self.P_vertices],
            "G": mat(self.G),
            "S": mat(self.S),
            "J_bar": mat(self.J_bar),
            "gamma": self.gamma,
            "mu": self.mu,
            "lam": self.lam,
            "sigma": self.sigma,
            "objective": self.objective,
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisResult":
        missing = [k for k in ("K_f", "E_c", "E_f") if k not in data]
        if missing:
            raise KeyError(f"gain file lacks required fields: {', '.join(missing)}")
        P_vertices = data.get("P_vertices")
        if P_vertices is None and data.get("P") is not None:
            P_vertices = [data["P"]]
        return cls(
            mode=data.get("mode", "external"),
            K_f=data["K_f"], E_c=data["E_c"], E_f=data["E_f"],
            P_vertices=P_vertices or [],
            G=data.get("G"), S=data.get("S"), J_bar=data.get("J_bar"),
            gamma=data.get("gamma"), mu=data.get("mu"), lam=data.get("lam"),
            sigma=data.get("sigma"), objective=data.get("objective"),
            status=data.get("status", "external"),
            diagnostics=data.get("diagnostics", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SynthesisResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


_NUMBER_LIST = re.compile(r"\[\s*(-?[\d.eE+-]+(?:,\s*-?[\d.eE+-]+)*)\s*\]")


def dumps(obj, sort_keys: bool = True) -> str:
    """Indented JSON with every list of numbers (a vector or matrix row) on one line."""
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=sort_keys)
    text = _NUMBER_LIST.sub(lambda m: "[" + ", ".join(m.group(1).replace(",", " ").split()) + "]",
                            text)
    return text + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
