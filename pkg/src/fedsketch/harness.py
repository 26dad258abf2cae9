"""Config-file-driven experiments: parse, run, write metrics, compare runs.

Config files are INI text with sections ``[experiment]``, ``[problem]``,
``[fed]``, ``[sketch]``, ``[output]`` and an optional ``[privacy]``::

    [problem]
    family = logistic
    d = 20
    n = 2000
    partition = heterogeneous

    [fed]
    p = 8
    R = 100
    tau = 5
    eta = 0.3
    algorithm = fedsketchgate
    variant = heaprix

    [sketch]
    m = 40
    t = 5
    heavy_budget = 10

Each repeat writes one CSV with the columns in :data:`CSV_COLUMNS`, one row
per round ``0..R``. ``cumulative_bytes`` sums ``bytes_up + bytes_down``.
``wall_seconds`` is left empty unless ``output.record_time`` is set, so the
default CSV is byte-identical across runs with the same seed.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .compressors import CompressorSpec
from .errors import ConfigError, SchemaError
from .fedsim import Algorithm, FedConfig, Readout, Variant, run
from .problems import (
    LogisticProblem,
    load_csv,
    make_logistic,
    make_quadratic,
    partition_heterogeneous,
    partition_homogeneous,
)

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "FEDSKETCH_OUTPUT_DIR"

CSV_COLUMNS = (
    "round",
    "loss",
    "grad_norm",
    "train_accuracy",
    "bytes_up",
    "bytes_down",
    "cumulative_bytes",
    "wall_seconds",
)


# -- value converters; each raises ValueError with a short reason ---------------------


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    value = float(text.strip())
    if not np.isfinite(value):
        raise ValueError("must be finite")
    return value


def _bool(text: str) -> bool:
    key = text.strip().lower()
    if key not in configparser.ConfigParser.BOOLEAN_STATES:
        raise ValueError("expected true/false")
    return configparser.ConfigParser.BOOLEAN_STATES[key]


def _batch(text: str) -> Optional[int]:
    return None if text.strip().lower() == "full" else _int(text)


def _str(text: str) -> str:
    return text.strip()


def _choice(*options):
    def convert(text: str) -> str:
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value

    return convert


def _opt(default, conv, required: bool = False):
    return field(default=default, metadata={"conv": conv, "required": required})


# -- config sections ------------------------------------------------------------------


@dataclass
class ExperimentSection:
    repeats: int = _opt(1, _int)


@dataclass
class ProblemSection:
    family: str = _opt("quadratic", _choice("quadratic", "logistic", "csv"))
    d: Optional[int] = _opt(None, _int)  # features for logistic, model size for quadratic
    n: int = _opt(1000, _int)
    classes: int = _opt(4, _int)
    partition: str = _opt("homogeneous", _choice("homogeneous", "heterogeneous"))
    classes_per_device: int = _opt(1, _int)
    heterogeneity: float = _opt(0.0, _float)
    cond: float = _opt(10.0, _float)
    reg: float = _opt(1e-4, _float)
    separation: float = _opt(6.0, _float)
    path: Optional[str] = _opt(None, _str)
    seed: int = _opt(0, _int)


@dataclass
class FedSection:
    p: int = _opt(None, _int, required=True)
    k: Optional[int] = _opt(None, _int)  # defaults to p
    R: int = _opt(None, _int, required=True)
    tau: int = _opt(None, _int, required=True)
    eta: float = _opt(None, _float, required=True)
    gamma: float = _opt(1.0, _float)
    b: Optional[int] = _opt(None, _batch)  # None or "full": whole shard per step
    algorithm: str = _opt("fedsketch", _choice(*(a.value for a in Algorithm)))
    variant: str = _opt("privix", _choice(*(v.value for v in Variant)))
    master_seed: int = _opt(0, _int)
    uniform_sampling: bool = _opt(True, _bool)
    readout: str = _opt("shared", _choice(*(r.value for r in Readout)))


@dataclass
class SketchSection:
    m: Optional[int] = _opt(None, _int)
    t: Optional[int] = _opt(None, _int)
    heavy_budget: int = _opt(1, _int)
    value_mode: str = _opt("oracle", _choice("oracle", "estimate"))
    fill: str = _opt("ranked", _choice("ranked", "random"))


@dataclass
class OutputSection:
    dir: str = _opt("runs", _str)
    name: str = _opt("experiment", _str)
    record_time: bool = _opt(False, _bool)


@dataclass
class PrivacySection:
    l: int = _opt(None, _int, required=True)  # noqa: E741
    sigma: float = _opt(None, _float, required=True)
    C: float = _opt(None, _float, required=True)
    alpha: float = _opt(None, _float, required=True)


_SECTIONS = {
    "experiment": ExperimentSection,
    "problem": ProblemSection,
    "fed": FedSection,
    "sketch": SketchSection,
    "output": OutputSection,
    "privacy": PrivacySection,
}


@dataclass
class ExperimentConfig:
    problem: ProblemSection
    fed: FedSection
    sketch: SketchSection = field(default_factory=SketchSection)
    output: OutputSection = field(default_factory=OutputSection)
    privacy: Optional[PrivacySection] = None
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def repeats(self) -> int:
        return self.experiment.repeats

    @property
    def sketched(self) -> bool:
        return self.fed.algorithm != Algorithm.FEDSGD.value and self.fed.variant != Variant.IDENTITY.value

    def model_dim(self) -> Optional[int]:
        if self.problem.family == "logistic" and self.problem.d is not None:
            return self.problem.d * self.problem.classes
        return self.problem.d

    def fed_config(self, repeat: int = 0) -> FedConfig:
        """Protocol settings for one repeat; repeat ``i`` uses seed ``master_seed + i``."""
        f, s = self.fed, self.sketch
        spec = None
        if self.sketched:
            spec = CompressorSpec(f.variant, s.m, s.t, s.heavy_budget, s.value_mode, s.fill)
        return FedConfig(
            p=f.p,
            k=f.p if f.k is None else f.k,
            R=f.R,
            tau=f.tau,
            eta=f.eta,
            gamma=f.gamma,
            b=f.b,
            algorithm=f.algorithm,
            variant=f.variant,
            sketch=spec,
            master_seed=f.master_seed + repeat,
            uniform_sampling=f.uniform_sampling,
            readout=f.readout,
        )


# -- parsing --------------------------------------------------------------------------


def _read_section(name: str, cls, raw: dict, errors: list, unknown: list):
    fields = {f.name.lower(): f for f in dataclasses.fields(cls)}
    values = {}
    for key, text in raw.items():
        spec = fields.get(key.lower())
        if spec is None:
            unknown.append(f"{name}.{key}: unknown key")
            continue
        if spec.name in values:
            errors.append(f"{name}.{spec.name}: given more than once")
            continue
        try:
            values[spec.name] = spec.metadata["conv"](text)
        except ValueError as exc:
            errors.append(f"{name}.{spec.name}: {exc} (got {text.strip()!r})")
    for f in dataclasses.fields(cls):
        if f.metadata["required"] and f.name not in values:
            errors.append(f"{name}.{f.name}: required")
    if any(e.startswith(f"{name}.") for e in errors):
        return None
    return cls(**values)


def _check(config: ExperimentConfig, errors: list) -> None:
    pr, fd, sk = config.problem, config.fed, config.sketch
    if config.experiment.repeats < 1:
        errors.append(f"experiment.repeats: must be >= 1, got {config.experiment.repeats}")
    if pr.family == "csv":
        if not pr.path:
            errors.append("problem.path: required when problem.family = csv")
    else:
        if pr.d is None:
            errors.append(f"problem.d: required when problem.family = {pr.family}")
        elif pr.d < 1:
            errors.append(f"problem.d: must be >= 1, got {pr.d}")
        if pr.n < max(fd.p, 1):
            errors.append(f"problem.n: must be >= fed.p={fd.p}, got {pr.n}")
    if pr.family == "quadratic":
        if fd.p >= 1 and pr.n % fd.p:
            errors.append(f"problem.n: must be a multiple of fed.p={fd.p} for quadratic problems, got {pr.n}")
        if pr.partition != "homogeneous":
            errors.append("problem.partition: quadratic problems set device skew with problem.heterogeneity")
        if pr.cond < 1:
            errors.append(f"problem.cond: must be >= 1, got {pr.cond}")
        if pr.heterogeneity < 0:
            errors.append(f"problem.heterogeneity: must be >= 0, got {pr.heterogeneity}")
    else:
        if pr.classes < 2:
            errors.append(f"problem.classes: must be >= 2, got {pr.classes}")
        if pr.reg < 0:
            errors.append(f"problem.reg: must be >= 0, got {pr.reg}")
    if pr.partition == "heterogeneous" and pr.classes_per_device < 1:
        errors.append(f"problem.classes_per_device: must be >= 1, got {pr.classes_per_device}")
    if config.sketched:
        for key in ("m", "t"):
            value = getattr(sk, key)
            if value is None:
                errors.append(f"sketch.{key}: required for the {fd.variant} variant")
            elif value < 1:
                errors.append(f"sketch.{key}: must be >= 1, got {value}")
        if sk.heavy_budget < 1:
            errors.append(f"sketch.heavy_budget: must be >= 1, got {sk.heavy_budget}")
        dim = config.model_dim()
        if fd.variant == "heaprix" and dim is not None and sk.heavy_budget > dim:
            errors.append(f"sketch.heavy_budget: exceeds model dimension {dim}")
    if config.privacy is not None:
        pv = config.privacy
        if sk.m is None or sk.t is None:
            errors.append("privacy: needs sketch.m and sketch.t")
        elif not (sk.m >= 2 and pv.l > sk.m and pv.l > 2):
            errors.append(f"privacy.l: need l > sketch.m >= 2 and l > 2, got l={pv.l}, m={sk.m}")
        for key in ("sigma", "C", "alpha"):
            if getattr(pv, key) <= 0:
                errors.append(f"privacy.{key}: must be > 0")
    probe = config
    if any(e.startswith("sketch.") for e in errors):
        # still validate the [fed] section, just without a sketch
        probe = dataclasses.replace(config, fed=dataclasses.replace(fd, variant=Variant.IDENTITY.value))
    try:
        probe.fed_config()
    except ConfigError as exc:
        errors.extend(exc.errors)
    except ValueError as exc:
        errors.append(f"sketch: {exc}")


def config_from_mapping(sections: dict, base_dir=".") -> ExperimentConfig:
    """Build and validate a config from ``{section: {key: text}}``.

    Raises:
        ConfigError: listing every problem found, each named ``section.key``.
    """
    # unknown names are reported but do not stop the remaining checks
    errors, unknown = [], []
    for name in sections:
        if name not in _SECTIONS:
            unknown.append(f"{name}: unknown section")
    parts = {}
    for name, cls in _SECTIONS.items():
        if name not in sections:
            if name in ("problem", "fed"):
                errors.append(f"{name}: required section missing")
            continue
        raw = {str(k): str(v) for k, v in sections[name].items()}
        parts[name] = _read_section(name, cls, raw, errors, unknown)
    if errors or any(v is None for v in parts.values()):
        raise ConfigError(unknown + errors)
    config = ExperimentConfig(base_dir=Path(base_dir), **parts)
    _check(config, errors)
    if unknown or errors:
        raise ConfigError(unknown + errors)
    if config.fed.k is None:
        config.fed.k = config.fed.p
    return config


def parse_config_text(text: str, base_dir=".") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc.message if hasattr(exc, 'message') else exc}"]) from None
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    return config_from_mapping(sections, base_dir)


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file.

    Args:
        path: INI file. A relative ``problem.path`` is resolved against its folder.

    Raises:
        FileNotFoundError: if ``path`` does not exist.
        ConfigError: with every validation problem, each named ``section.key``.
    """
    path = Path(path)
    text = path.read_text()
    return parse_config_text(text, path.parent)


def config_to_mapping(config: ExperimentConfig) -> dict:
    """``{section: {key: text}}`` that parses back to an equal config."""
    out = {}
    for name in _SECTIONS:
        part = getattr(config, name)
        if part is None:
            continue
        section = {}
        for f in dataclasses.fields(part):
            value = getattr(part, f.name)
            if value is None:
                continue
            if isinstance(value, bool):
                section[f.name] = "true" if value else "false"
            elif isinstance(value, float):
                section[f.name] = repr(value)
            else:
                section[f.name] = str(value)
        out[name] = section
    return out


def serialize_config(config: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict(config_to_mapping(config))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# -- running --------------------------------------------------------------------------


def build_problem(config: ExperimentConfig):
    """The problem and its partition; depends only on the ``[problem]`` section and ``fed.p``."""
    pr, p = config.problem, config.fed.p
    if pr.family == "quadratic":
        return make_quadratic(pr.d, pr.n // p, p, pr.cond, pr.heterogeneity, seed=pr.seed)
    if pr.family == "logistic":
        data = make_logistic(pr.d, pr.n, pr.classes, seed=pr.seed, separation=pr.separation)
    else:
        path = Path(pr.path)
        if not path.is_absolute():
            path = config.base_dir / path
        data = load_csv(path)
    if pr.partition == "heterogeneous":
        partition = partition_heterogeneous(data, p, pr.classes_per_device, seed=pr.seed)
    else:
        partition = partition_homogeneous(data, p, seed=pr.seed)
    return LogisticProblem(data, reg=pr.reg), partition


def theory_summary(config: ExperimentConfig, problem) -> dict:
    """omega, the step-size check and (when configured) the privacy level."""
    fd, sk = config.fed, config.sketch
    out = {"L": problem.smoothness_L}
    if config.sketched:
        variant = analysis.Variant.HEAPRIX if fd.variant == "heaprix" else analysis.Variant.PRIVIX
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            omega = analysis.omega_for(variant, sk.m, problem.d)
    else:
        omega = 0.0
    k = fd.p if fd.k is None else fd.k
    ok = analysis.stepsize_ok(fd.eta, fd.gamma, fd.tau, problem.smoothness_L, omega, k)
    out.update(
        omega=omega,
        stepsize_lhs=analysis.stepsize_lhs(fd.eta, fd.gamma, fd.tau, problem.smoothness_L, omega, k),
        stepsize_ok=ok,
        max_stable_eta=analysis.max_stable_eta(fd.gamma, fd.tau, problem.smoothness_L, omega, k),
    )
    if config.privacy is not None:
        pv = config.privacy
        eps = analysis.privacy_epsilon(sk.t, sk.m, pv.l, pv.sigma, pv.C, pv.alpha)
        out["privacy_feasible"] = eps is not None
        out["privacy_epsilon"] = eps
    return out


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def trace_rows(traces, record_time: bool = False):
    total = 0
    for tr in traces:
        total += tr.bytes_uplink + tr.bytes_downlink
        yield (
            tr.round,
            tr.loss,
            tr.grad_norm,
            tr.accuracy,
            tr.bytes_uplink,
            tr.bytes_downlink,
            total,
            tr.wall_time if record_time else None,
        )


def write_csv(path, traces, record_time: bool = False) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in trace_rows(traces, record_time):
            writer.writerow([_cell(v) for v in row])


@dataclass
class ExperimentResult:
    csv_paths: list
    summary_path: Path
    summary: dict
    traces: list = field(repr=False, default_factory=list)


def output_dir(config: ExperimentConfig) -> Path:
    """``$FEDSKETCH_OUTPUT_DIR`` if set, else ``output.dir`` (relative to the config's folder)."""
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    out = Path(config.output.dir)
    return out if out.is_absolute() else config.base_dir / out


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run every repeat, write one CSV each plus a JSON summary.

    Args:
        config: validated experiment config.
        out_dir: overrides both the environment variable and ``output.dir``.
    """
    out = Path(out_dir) if out_dir is not None else output_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    problem, partition = build_problem(config)
    theory = theory_summary(config, problem)
    flags = []
    if not theory["stepsize_ok"]:
        flags.append("stepsize")
        log.warning(
            "eta=%g violates the step-size condition (lhs %.4g > 1); running anyway",
            config.fed.eta,
            theory["stepsize_lhs"],
        )
    if theory.get("privacy_feasible") is False:
        flags.append("privacy_infeasible")

    name = config.output.name
    paths, repeats, all_traces = [], [], []
    for i in range(config.repeats):
        fed = config.fed_config(i)
        traces = run(fed, problem, partition)
        path = out / f"{name}_rep{i}.csv"
        write_csv(path, traces, config.output.record_time)
        paths.append(path)
        all_traces.append(traces)
        last = traces[-1] if traces else None
        repeats.append(
            {
                "repeat": i,
                "seed": fed.master_seed,
                "csv": path.name,
                "final_loss": None if last is None else last.loss,
                "final_grad_norm": None if last is None else last.grad_norm,
                "final_train_accuracy": None if last is None else last.accuracy,
                "total_bytes": sum(t.bytes_uplink + t.bytes_downlink for t in traces),
            }
        )
    summary = {
        "config": config_to_mapping(config),
        "seeds": [r["seed"] for r in repeats],
        "analysis": theory,
        "stepsize_ok": theory["stepsize_ok"],
        "warning": bool(flags),
        "warnings": flags,
        "repeats": repeats,
    }
    summary_path = out / f"{name}_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    return ExperimentResult(paths, summary_path, summary, all_traces)


# -- comparing ------------------------------------------------------------------------


def read_metrics(path) -> dict:
    """Column name -> float array (NaN for empty cells) from a metrics CSV."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}: line {lineno} has {len(row)} cells, header has {len(header)}")
    cols = {}
    for i, name in enumerate(header):
        cols[name] = np.array([float(r[i]) if r[i] != "" else np.nan for r in rows])
    return cols


@dataclass
class ComparisonReport:
    rounds: np.ndarray
    deltas: dict  # column -> b - a on the shared rounds
    final: dict  # column -> (a, b, b - a) at each run's last row
    target_loss: float
    bytes_to_target: tuple  # (a, b); None where the run never reaches the target

    def format(self) -> str:
        lines = [f"{'metric':<16}{'a':>16}{'b':>16}{'b - a':>16}"]
        for name, (a, b, d) in self.final.items():
            lines.append(f"{name:<16}{a:>16.6g}{b:>16.6g}{d:>16.6g}")
        a, b = self.bytes_to_target
        lines.append(f"bytes to loss <= {self.target_loss:.6g}: a={a} b={b}")
        worst = {k: float(np.nanmax(np.abs(v))) for k, v in self.deltas.items() if np.any(~np.isnan(v))}
        lines.append("max |b - a| per round: " + ", ".join(f"{k}={v:.3g}" for k, v in worst.items()))
        return "\n".join(lines)


def _bytes_to(cols: dict, target: float) -> Optional[int]:
    hit = np.flatnonzero(cols["loss"] <= target)
    return None if hit.size == 0 else int(cols["cumulative_bytes"][hit[0]])


def compare(run_a, run_b, target_loss: Optional[float] = None) -> ComparisonReport:
    """Round-aligned differences between two metrics CSVs.

    Args:
        run_a, run_b: CSV files written by :func:`run_experiment`.
        target_loss: loss level for the bytes-to-target statistic; defaults to
            the larger of the two final losses, which both runs reach.

    Raises:
        FileNotFoundError: if either file is missing.
        SchemaError: if the column layouts differ.
    """
    a, b = read_metrics(run_a), read_metrics(run_b)
    if list(a) != list(b):
        raise SchemaError(f"column mismatch: {list(a)} vs {list(b)}")
    for cols, path in ((a, run_a), (b, run_b)):
        missing = {"round", "loss", "cumulative_bytes"} - set(cols)
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        if cols["round"].size == 0:
            raise SchemaError(f"{path}: no rounds")
    shared, ia, ib = np.intersect1d(a["round"], b["round"], return_indices=True)
    metrics = [c for c in a if c != "round"]
    deltas = {c: b[c][ib] - a[c][ia] for c in metrics}
    final = {c: (float(a[c][-1]), float(b[c][-1]), float(b[c][-1] - a[c][-1])) for c in metrics}
    if target_loss is None:
        target_loss = float(max(a["loss"][-1], b["loss"][-1]))
    return ComparisonReport(shared, deltas, final, target_loss, (_bytes_to(a, target_loss), _bytes_to(b, target_loss)))

