"""Model fitting entry point and the on-disk fit artifact."""

from __future__ import annotations

import json
import platform
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from . import __version__
from .design import DesignSet, build_design
from .errors import InputOutputError, ModelSpecError
from .formula import parse_formula
from .formula.terms import ModelFormula
from .model import Model
from .names import ParameterName, Vocabulary
from .nuts import STAT_NAMES, SamplerConfig, sample
from .panel import PanelData, load_panel, panel_from_frame, write_panel
from .priors import PriorSpec, read_priors, write_priors

DataLike = Union[PanelData, pd.DataFrame, str, Path]


@dataclass
class PanelFit:
    """Posterior draws of a fitted model together with its design and data.

    ``draws`` has shape (iterations, chains, parameters) in the order of
    ``parameter_labels``; ``stats`` maps sampler statistics to
    (iterations, chains) arrays.
    """

    formula_text: str
    panel: PanelData
    design: DesignSet
    model: Model
    config: SamplerConfig
    draws: np.ndarray
    stats: dict[str, np.ndarray]
    stepsize: list[float] = field(default_factory=list)
    inv_metric: list[list[float]] = field(default_factory=list)
    time_warmup: list[float] = field(default_factory=list)
    time_sampling: list[float] = field(default_factory=list)
    data_name: str = "data"

    @property
    def formula(self) -> ModelFormula:
        return self.design.formula

    @property
    def priors(self) -> list[PriorSpec]:
        return self.model.priors

    @property
    def parameter_names(self) -> list[ParameterName]:
        return self.model.output_names

    @property
    def parameter_labels(self) -> list[str]:
        return self.model.output_labels

    @property
    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_names(self.parameter_names)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[1]

    @property
    def n_iterations(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.n_iterations * self.n_chains

    @property
    def n_obs(self) -> int:
        return self.design.n_likelihood_terms()

    def draws_matrix(self) -> np.ndarray:
        """(draws, parameters) with draws ordered chain by chain."""
        return np.transpose(self.draws, (1, 0, 2)).reshape(self.n_draws, -1)

    def column(self, label: str) -> np.ndarray:
        return self.draws[:, :, self.parameter_labels.index(label)]

    # persistence -------------------------------------------------------------------
    def save(self, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "formula.dml").write_text(self.formula_text.rstrip() + "\n", encoding="utf-8")
        write_priors(self.priors, out / "priors.csv")
        write_panel(self.panel, out / "data.csv")
        write_draws(self, out / "draws.csv")
        write_sampler_stats(self, out / "sampler.csv")
        meta = {
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "time": self.panel.time,
            "group": self.panel.group,
            "config": asdict(self.config),
            "model_hash": self.model.fingerprint(),
            "parameters": self.parameter_labels,
            "stepsize": self.stepsize,
            "inv_metric": self.inv_metric,
            "time_warmup": self.time_warmup,
            "time_sampling": self.time_sampling,
            "data_name": self.data_name,
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        from .posterior import fit_summary

        (out / "summary.txt").write_text(fit_summary(self), encoding="utf-8")
        return out

    @classmethod
    def load(cls, path: str | Path) -> "PanelFit":
        path = Path(path)
        for name in ("formula.dml", "priors.csv", "data.csv", "draws.csv", "meta.json", "sampler.csv"):
            if not (path / name).exists():
                raise InputOutputError(f"fit directory {path} lacks {name}")
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        text = (path / "formula.dml").read_text(encoding="utf-8")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            panel = load_panel(path / "data.csv", meta["time"], meta["group"])
            design = build_design(parse_formula(text), panel, warn=False)
        model = Model(design, read_priors(path / "priors.csv"))
        if model.output_labels != meta["parameters"]:
            raise ModelSpecError("stored draws do not match the model rebuilt from the fit directory")
        if meta.get("model_hash") not in (None, model.fingerprint()):
            raise ModelSpecError(f"the data, formula or priors in {path} changed after fitting")
        cfg = SamplerConfig(**meta["config"])
        draws = read_draws(path / "draws.csv", model.output_labels, cfg.chains)
        stats = read_sampler_stats(path / "sampler.csv", cfg.chains)
        return cls(text, panel, design, model, cfg, draws, stats, meta["stepsize"], meta["inv_metric"],
                   meta["time_warmup"], meta["time_sampling"], meta.get("data_name", "data"))


def write_draws(fit: PanelFit, path: Path) -> None:
    it, ch, p = fit.draws.shape
    chain = np.repeat(np.arange(1, ch + 1), it)
    iteration = np.tile(np.arange(1, it + 1), ch)
    mat = fit.draws_matrix()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join([".chain", ".iteration"] + [_quote(lab) for lab in fit.parameter_labels]) + "\n")
        for r in range(mat.shape[0]):
            vals = ",".join("%.17g" % v for v in mat[r])
            fh.write(f"{chain[r]},{iteration[r]},{vals}\n")


def _quote(s: str) -> str:
    return f'"{s}"' if ("," in s or '"' in s) else s


def read_draws(path: Path, labels: Sequence[str], chains: int) -> np.ndarray:
    df = pd.read_csv(path, float_precision="round_trip")
    cols = list(df.columns[2:])
    if cols != list(labels):
        raise ModelSpecError(f"{path} columns do not match the model parameters")
    mat = df.iloc[:, 2:].to_numpy(dtype=float)
    it = mat.shape[0] // chains
    return mat.reshape(chains, it, -1).transpose(1, 0, 2)


def write_sampler_stats(fit: PanelFit, path: Path) -> None:
    it, ch = fit.stats["accept_stat"].shape
    frame = pd.DataFrame({
        ".chain": np.repeat(np.arange(1, ch + 1), it),
        ".iteration": np.tile(np.arange(1, it + 1), ch),
    })
    for k in STAT_NAMES:
        frame[k] = fit.stats[k].T.ravel()
    frame.to_csv(path, index=False, float_format="%.17g")


def read_sampler_stats(path: Path, chains: int) -> dict[str, np.ndarray]:
    df = pd.read_csv(path, float_precision="round_trip")
    it = len(df) // chains
    return {k: df[k].to_numpy(dtype=float).reshape(chains, it).T for k in STAT_NAMES}


def _as_panel(data: DataLike, time: str, group: Optional[str]) -> tuple[PanelData, str]:
    if isinstance(data, PanelData):
        return data, "data"
    if isinstance(data, pd.DataFrame):
        return panel_from_frame(data, time, group), "data"
    return load_panel(data, time, group), Path(data).name


def fit(
    formula: Union[str, ModelFormula],
    data: DataLike,
    time: str,
    group: Optional[str] = None,
    priors: Optional[Union[Sequence[PriorSpec], pd.DataFrame, str, Path]] = None,
    *,
    chains: int = 4,
    iter_warmup: int = 1000,
    iter_sampling: int = 1000,
    seed: int = 0,
    cores: int = 1,
    target_accept: float = 0.8,
    max_treedepth: int = 10,
    init_radius: float = 2.0,
) -> PanelFit:
    """Estimate a dynamic multivariate panel model by NUTS."""
    if isinstance(formula, str):
        f = parse_formula(formula)
        text = formula
    else:
        f = formula
        text = formula.format()
    panel, data_name = _as_panel(data, time, group)
    design = build_design(f, panel)
    if isinstance(priors, (str, Path)):
        priors = read_priors(priors)
    elif isinstance(priors, pd.DataFrame):
        from .priors import priors_from_frame

        priors = priors_from_frame(priors)
    model = Model(design, priors)
    cfg = SamplerConfig(chains, iter_warmup, iter_sampling, seed, target_accept, max_treedepth,
                        init_radius, cores)
    results = sample(model.log_prob_grad, model.dim, cfg, output=model.outputs)
    draws = np.stack([r.draws for r in results], axis=1)
    stats = {k: np.stack([r.stats[k] for r in results], axis=1) for k in STAT_NAMES}
    return PanelFit(
        text, panel, design, model, cfg, draws, stats,
        [float(r.stepsize) for r in results],
        [r.inv_metric.tolist() for r in results],
        [float(r.time_warmup) for r in results],
        [float(r.time_sampling) for r in results],
        data_name,
    )
