"""
config.py
Run configuration, environment lookup and logging setup.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from gapkit.errors import ValidationError
from gapkit.gap_metrics import DEFAULT_RECALL_KS, DistanceMetric
from gapkit.ot_align import OtParams

logger = logging.getLogger(__name__)

THREADS_ENV = "GAPKIT_THREADS"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ALL_METRICS = ("heterogeneity", "ranks", "fid", "distances", "recall", "centroid")
METRIC_ALIASES = {
    "itr": "heterogeneity",
    "tir": "heterogeneity",
    "tmr": "ranks",
    "imr": "ranks",
    "distance": "distances",
    "gap": "centroid",
}


class Command(str, Enum):
    SYNTH = "synth"
    ALIGN = "align"
    EVAL = "eval"
    TUNE_OT = "tune-ot"
    REPORT = "report"


class Method(str, Enum):
    ORIG = "orig"
    SPEC = "spec"
    OT = "ot"
    PCA = "pca"


def method_label(method: Method, k: Optional[int] = None) -> str:
    """ORIG / SPEC{k} / OT / PCA{k}, as the comparison tables name methods."""
    method = Method(method)
    if method in (Method.SPEC, Method.PCA):
        return f"{method.value.upper()}{k}"
    return method.value.upper()


def thread_count() -> int:
    """
    Worker cap from GAPKIT_THREADS; falls back to the CPU count.

    Raises:
        ValidationError: the variable is set but is not a positive integer.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return max(1, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValidationError(f"{THREADS_ENV}={raw!r} is not an integer") from exc
    if value < 1:
        raise ValidationError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


def configure_logging(verbosity: int = 0) -> None:
    """
    Configure the root logger once: -q gives ERROR, default WARNING,
    -v INFO and -vv DEBUG.
    """
    if verbosity < 0:
        level = logging.ERROR
    elif verbosity == 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def parse_int_list(text: str) -> tuple[int, ...]:
    """'5,10,20' -> (5, 10, 20)."""
    try:
        values = tuple(int(item) for item in re.split(r"[,\s]+", text.strip()) if item)
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}") from exc
    if not values:
        raise ValidationError("empty list")
    return values


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(item) for item in re.split(r"[,\s]+", text.strip()) if item)
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated number list, got {text!r}") from exc
    if not values:
        raise ValidationError("empty list")
    return values


def parse_metrics(text: Optional[str]) -> tuple[str, ...]:
    """Metric groups in canonical order; None or 'all' selects every group."""
    if text is None or text.strip().lower() == "all":
        return ALL_METRICS
    requested = set()
    for item in re.split(r"[,\s]+", text.strip().lower()):
        if not item:
            continue
        name = METRIC_ALIASES.get(item, item)
        if name not in ALL_METRICS:
            raise ValidationError(
                f"unknown metric '{item}'; choose from {', '.join(ALL_METRICS)}"
            )
        requested.add(name)
    if not requested:
        raise ValidationError("no metrics requested")
    return tuple(name for name in ALL_METRICS if name in requested)


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one CLI command needs, validated up front.

    Method parameters must be present exactly when the method uses them:
    k for SPEC and PCA, OtParams for OT.
    """

    command: Command
    manifests: tuple[Path, ...] = ()
    method: Method = Method.ORIG
    k: Optional[int] = None
    ot_params: Optional[OtParams] = None
    metrics: tuple[str, ...] = ALL_METRICS
    recall_ks: tuple[int, ...] = DEFAULT_RECALL_KS
    out: Path = Path("gapkit_out")
    seed: int = 0
    normalize: bool = False
    label: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "command", Command(self.command))
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "manifests", tuple(Path(p) for p in self.manifests))
        object.__setattr__(self, "out", Path(self.out))
        if self.command not in (Command.ALIGN, Command.EVAL, Command.TUNE_OT):
            return
        needs_k = self.method in (Method.SPEC, Method.PCA)
        if needs_k and (self.k is None or self.k < 1):
            raise ValidationError(f"--k >= 1 is required for method {self.method.value}")
        if not needs_k and self.k is not None and self.command is Command.ALIGN:
            raise ValidationError(f"--k does not apply to method {self.method.value}")
        if self.method is Method.OT and self.ot_params is None:
            raise ValidationError("OT parameters are required for method ot")
        if self.method is not Method.OT and self.ot_params is not None:
            raise ValidationError(f"OT parameters do not apply to method {self.method.value}")

    @property
    def method_label(self) -> str:
        return method_label(self.method, self.k)

    @classmethod
    def from_namespace(cls, namespace) -> "RunConfig":
        """Build a RunConfig from an argparse namespace produced by gapkit.cli."""
        command = Command(namespace.command)
        method = Method(getattr(namespace, "method", None) or Method.ORIG)
        k = getattr(namespace, "k", None)
        ot_params = None
        if method is Method.OT or command is Command.TUNE_OT:
            ot_params = OtParams(
                eta=getattr(namespace, "eta", 1.0),
                lambda_s=getattr(namespace, "lambda_s", 1.0),
                lambda_t=getattr(namespace, "lambda_t", 1.0),
                sim_k=getattr(namespace, "sim_k", OtParams.sim_k),
                reg_mode=getattr(namespace, "reg_mode", OtParams.reg_mode),
                max_iters=getattr(namespace, "max_iters", OtParams.max_iters),
                tol=getattr(namespace, "tol", OtParams.tol),
            )
            method = Method.OT

        manifests = getattr(namespace, "manifest", None) or ()
        if isinstance(manifests, (str, Path)):
            manifests = (manifests,)
        manifests = tuple(manifests) + tuple(getattr(namespace, "reports", None) or ())

        recall_ks = getattr(namespace, "recall_k", None)
        known = {
            "command", "manifest", "reports", "method", "k", "eta", "lambda_s",
            "lambda_t", "sim_k", "reg_mode", "max_iters", "tol", "metrics",
            "recall_k", "out", "seed", "normalize", "label", "verbose", "quiet",
            "handler",
        }
        options = {key: value for key, value in vars(namespace).items() if key not in known}
        return cls(
            command=command,
            manifests=manifests,
            method=method,
            k=k,
            ot_params=ot_params,
            metrics=parse_metrics(getattr(namespace, "metrics", None)),
            recall_ks=parse_int_list(recall_ks) if recall_ks else DEFAULT_RECALL_KS,
            out=Path(getattr(namespace, "out", None) or "gapkit_out"),
            seed=getattr(namespace, "seed", 0) or 0,
            normalize=bool(getattr(namespace, "normalize", False)),
            label=getattr(namespace, "label", None),
            options=options,
        )

    def option(self, name: str, default=None):
        value = self.options.get(name)
        return default if value is None else value

    @property
    def distance_metric(self) -> DistanceMetric:
        return DistanceMetric(self.option("distance_metric", DistanceMetric.COSINE))
