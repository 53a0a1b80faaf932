"""Assemble data, densities, model and instance from an :class:`ExperimentConfig`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from ._random import make_rng
from .config import ExperimentConfig
from .instances import PsoInstance, make_named, wrap_bounded, wrap_cut_at
from .network import NetworkSpec, Preconditioner
from .trainer import ConditionalDown, ConfigError, TestSets, TrainConfig


@dataclass
class Experiment:
    config: ExperimentConfig
    spec: NetworkSpec
    precond: Preconditioner
    instance: PsoInstance
    data: np.ndarray
    up_dist: object  # distribution generating the data, if known
    down: object
    true_logpdf: object
    train_cfg: TrainConfig

    def test_sets(self, seed=None) -> TestSets:
        seed = self.train_cfg.seed if seed is None else seed
        size = self.config["eval.test_size"]
        if self.up_dist is None:
            raise ValueError("test sets need a known data distribution")
        up = self.up_dist.sample(make_rng(seed, "test"), size)
        down = self.down.sample(make_rng(seed, "test_down"), size)
        return TestSets(up, down, self.true_logpdf)


def build_spec(cfg: ExperimentConfig, input_dim: int) -> NetworkSpec:
    m = cfg.section("model")
    try:
        return NetworkSpec(
            input_dim=input_dim,
            topology=m["topology"],
            num_layers=m["num_layers"],
            width=m["width"],
            num_blocks=m["num_blocks"],
            block_size=m["block_size"],
            activation=m["activation"],
            leaky_slope=m["leaky_slope"],
            shortcuts=m["shortcuts"],
            output_transform=m["output_transform"],
            h_min=m["h_min"],
            h_max=m["h_max"],
        )
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None


def build_instance(cfg: ExperimentConfig) -> PsoInstance:
    try:
        inst = make_named(cfg["instance.name"], **cfg.instance_params())
    except ValueError as exc:
        raise ConfigError("instance.name", str(exc)) from None
    if cfg["instance.wrap_bounded"]:
        inst = wrap_bounded(inst)
    if cfg["instance.cut_up_at"] is not None:
        inst = wrap_cut_at(inst, cfg["instance.cut_up_at"], "above", "up")
    if cfg["instance.cut_down_at"] is not None:
        inst = wrap_cut_at(inst, cfg["instance.cut_down_at"], "below", "down")
    return inst


def _build_down(cfg: ExperimentConfig, data: np.ndarray):
    kind = cfg["down.kind"]
    if kind == "uniform_fit":
        return dist.uniform_box_fit(data, cfg["down.margin"])
    if kind == "gaussian_fit":
        return dist.diag_gaussian_fit(data)
    if cfg["down.distribution"] == "uniform":
        return dist.uniform_box(cfg["down.lo"], cfg["down.hi"])
    return dist.diag_gaussian(cfg["down.mean"], cfg["down.std"])


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    seed = cfg["train.seed"]
    kind = cfg["data.distribution"]
    n = cfg["data.dataset_size"]
    dim = cfg["data.dim"]
    true_logpdf = None
    if kind == "columns":
        up_dist = dist.columns(dim)
    elif kind == "transformed_columns":
        up_dist = dist.transformed_columns(dim)
    elif kind == "linear_gaussian_pairs":
        up_dist = dist.LinearGaussianPairs(cfg["data.slope"], cfg["data.offset"], cfg["data.noise_std"])
        true_logpdf = up_dist.conditional_log_pdf
    else:
        up_dist = None
    if up_dist is not None:
        data = up_dist.sample(make_rng(seed, "data"), n)
        if true_logpdf is None:
            true_logpdf = up_dist
    else:
        data = np.loadtxt(cfg["data.dataset_path"], delimiter=",", ndmin=2)
    if kind == "linear_gaussian_pairs":
        down = ConditionalDown(data, _build_down(cfg, data[:, :1]))
    else:
        down = _build_down(cfg, data)
    if down.dim != data.shape[1]:
        raise ConfigError("down.kind", "down density dimension does not match the data")
    spec = build_spec(cfg, data.shape[1])
    if cfg["model.precondition"]:
        precond = Preconditioner.fit(data, down)
    else:
        precond = Preconditioner.identity(data.shape[1])
    return Experiment(cfg, spec, precond, build_instance(cfg), data, up_dist, down, true_logpdf, cfg.train_config())


def down_from_descriptor(desc: dict):
    if desc.get("kind") == "conditional":
        raise ValueError("conditional down densities are rebuilt from the config, not the descriptor")
    return dist.from_descriptor(desc)
