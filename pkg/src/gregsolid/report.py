"""Quality and optimization reports.

Quality fields follow the columns of the usual statistics table for volume
parameterizations: number of boundary patches, grid resolution per block,
average/minimum/maximum scaled Jacobian, negative-volume ratio ``J-/J`` and
running time in seconds.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from .optimize import AdmmResult, SolverConfig
from .quality import QualityReport

FORMAT = "gregsolid-report"
VERSION = 1


def quality_section(q: QualityReport, boundary_patches: int) -> dict:
    return {
        "boundary_patches": int(boundary_patches),
        "grid": "x".join(str(r) for r in q.resolution),
        "avg_J": q.avg_J,
        "min_J": q.min_J,
        "max_J": q.max_J,
        "neg_volume_ratio": q.neg_ratio,
        "n_negative": q.n_negative,
        "n_jacobians": q.n_jacobians,
        "time_s": q.seconds,
    }


def optimization_section(result: AdmmResult, cfg: SolverConfig, seconds: float) -> dict:
    history = []
    for h in result.history:
        history.append(
            {
                "iteration": int(h["iteration"]),
                "objective": float(h["objective"]),
                "E_smooth": float(h["smooth"]),
                "E_positive": float(h["positive"]),
                "E_sparse_l0": int(h["sparse_l0"]),
                "E_sparse_l1": float(h["sparse_l1"]),
                "primal_residual": float(h["primal_residual"]),
                "dual_residual": float(h["dual_residual"]),
            }
        )
    return {
        "weights": {"mu": cfg.mu, "nu": cfg.nu, "rho": cfg.rho, "epsilon": cfg.epsilon},
        "max_outer": cfg.max_outer,
        "tol_factor": cfg.tol_factor,
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "best_iteration": int(result.best_iteration),
        "initial": _terms(result.initial),
        "final": _terms(result.final),
        "history": history,
        "time_s": float(seconds),
    }


def _terms(t: dict) -> dict:
    return {
        "objective": float(t["objective"]),
        "E_smooth": float(t["smooth"]),
        "E_positive": float(t["positive"]),
        "E_sparse_l0": int(t["sparse_l0"]),
        "E_sparse_l1": float(t["sparse_l1"]),
    }


def make_report(model_name: str, domain: str, quality: dict, initial_quality: dict | None = None, optimization: dict | None = None) -> dict:
    rep = {"format": FORMAT, "version": VERSION, "model": model_name, "domain": domain, "quality": quality}
    if initial_quality is not None:
        rep["initial_quality"] = initial_quality
    if optimization is not None:
        rep["optimization"] = optimization
    validate_report(rep)
    return rep


def validate_report(rep: dict) -> None:
    def walk(x, where):
        if isinstance(x, float) and not math.isfinite(x):
            raise ValueError(f"non-finite value at {where}")
        if isinstance(x, dict):
            for k, v in x.items():
                walk(v, f"{where}.{k}")
        elif isinstance(x, list):
            for i, v in enumerate(x):
                walk(v, f"{where}[{i}]")

    walk(rep, "report")
    hist = rep.get("optimization", {}).get("history", [])
    its = [h["iteration"] for h in hist]
    if any(b <= a for a, b in zip(its, its[1:])):
        raise ValueError("history iterations must increase")


def dumps_report(rep: dict) -> str:
    return json.dumps(rep, sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_report(rep: dict, path) -> None:
    Path(path).write_text(dumps_report(rep))


def load_report(path) -> dict:
    rep = json.loads(Path(path).read_text())
    if rep.get("format") != FORMAT:
        raise ValueError(f"{path} is not a report file")
    validate_report(rep)
    return rep
