"""Maximum-likelihood fitting of flow stacks to samples on the hyperboloid.

Datasets live on the hyperboloid of a fixed data radius. The model's radius
follows a linear warmup and may then be learned, so data points are carried
to the model's hyperboloid by keeping their spatial coordinates and
re-lifting x0. All reported log-densities include the volume correction of
that identification and are therefore densities with respect to the
Riemannian volume at the data radius, comparable across model radii.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffnet as D
from . import flows as F
from . import lorentz as L
from . import wrapped_normal as wn
from .errors import DomainError, NumericError
from .rng import make_rng

log = logging.getLogger(__name__)


class TrainingAborted(NumericError):
    """Training hit a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    flow: str = "whc"
    dim: int = 2
    n_layers: int = 2
    hidden: int = 128
    epochs: int = 80
    batch_size: int | None = None
    lr: float = 1e-3
    seed: int = 0
    warmup_epochs: int = 10
    warmup_start_radius: float = 11.0
    warmup_end_radius: float = 2.0
    learn_curvature: bool = True
    clamp: float = 40.0
    eval_samples: int = 500
    test_fraction: float = 0.2

    def validate(self) -> None:
        if self.flow not in F.KINDS:
            raise ValueError(f"flow must be one of {F.KINDS}, got {self.flow!r}")
        positive = {"dim": self.dim, "hidden": self.hidden, "epochs": self.epochs,
                    "lr": self.lr, "warmup_start_radius": self.warmup_start_radius,
                    "warmup_end_radius": self.warmup_end_radius, "clamp": self.clamp,
                    "eval_samples": self.eval_samples}
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.n_layers < 0 or self.warmup_epochs < 0:
            raise ValueError("n_layers and warmup_epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.warmup_epochs > self.epochs:
            raise ValueError("warmup_epochs cannot exceed epochs")
        if self.n_layers and self.dim < 2:
            raise ValueError("coupling layers need dim >= 2")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")

    @property
    def curvature(self) -> L.CurvatureState:
        return L.CurvatureState(self.warmup_end_radius, self.learn_curvature,
                                (self.warmup_start_radius, self.warmup_end_radius,
                                 self.warmup_epochs))


@dataclass
class TrainReport:
    epoch_nll: list[float] = field(default_factory=list)
    epoch_radius: list[float] = field(default_factory=list)
    train_nll: float = math.nan
    test_nll: float = math.nan
    test_nll_se: float = math.nan
    kl: float | None = None
    kl_se: float | None = None
    is_log_mass: float = math.nan
    is_ess_fraction: float = math.nan
    final_radius: float = math.nan
    flags: list[str] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


# -- data-space densities ------------------------------------------------------

def to_model_space(x, data_radius: float, radius):
    """Re-lift data points onto the model hyperboloid of ``radius``."""
    return L.lift_to_hyperboloid(D.getitem(x, (..., slice(1, None))), radius)


def to_data_space(z, data_radius: float):
    zv = np.asarray(D.value_of(z))
    return L.lift_to_hyperboloid(zv[..., 1:], data_radius)


def log_prob_data(stack: F.FlowStack, x, data_radius: float, params=None, radius=None):
    """Stack log-density of data points w.r.t. volume at the data radius."""
    radius = stack.radius if radius is None else radius
    if not stack.hyperbolic:
        return _euclidean_log_prob_data(stack, x, data_radius, params)
    z = to_model_space(x, data_radius, radius)
    lp = F.stack_log_prob(stack, z, params, radius)
    # volume density of the graph x0 = sqrt(|x|^2 + R^2) is R / x0
    z0 = D.getitem(z, (..., 0))
    x0 = D.value_of(x)[..., 0]
    correction = D.sub(D.log(D.div(radius, z0)), np.log(data_radius / x0))
    return D.add(lp, correction)


def _euclidean_log_prob_data(stack, x, data_radius, params):
    """Euclidean flows model the normal coordinates log_o(x)."""
    xv = np.asarray(D.value_of(x))
    o = L.origin(stack.dim, data_radius)
    u = L.log_map(o, xv, data_radius, max_norm=None)
    lp = F.stack_log_prob(stack, u[..., 1:], params)
    return D.sub(lp, L.exp_map_logdet(u, data_radius))


def sample_data(stack: F.FlowStack, count: int, seed, data_radius: float) -> np.ndarray:
    z = F.stack_sample(stack, count, seed)
    if not stack.hyperbolic:
        o = L.origin(stack.dim, data_radius)
        v = np.concatenate([np.zeros((len(z), 1)), z], axis=1)
        return L.exp_map(o, v, data_radius, max_norm=None)
    return to_data_space(z, data_radius)


# -- training --------------------------------------------------------------------

def split_dataset(data: np.ndarray, test_fraction: float, seed: int):
    perm = make_rng(seed).permutation(len(data))
    n_test = max(1, int(round(test_fraction * len(data))))
    if n_test >= len(data):
        raise DomainError("dataset too small to split")
    return data[perm[n_test:]], data[perm[:n_test]]


def build_stack(config: TrainConfig) -> F.FlowStack:
    return F.FlowStack.create(config.flow, config.dim, config.n_layers, config.seed,
                              hidden=(config.hidden,),
                              radius=config.curvature.radius_at(0),
                              max_norm=config.clamp)


def _diagnose(stack, batch, data_radius, params, epoch, batch_index) -> str:
    """Locate the first layer (walking the inverse pass) that goes non-finite."""
    values = [D.value_of(p) for p in params]
    with np.errstate(all="ignore"):
        if stack.hyperbolic:
            z = to_model_space(batch, data_radius, stack.radius)
        else:
            o = L.origin(stack.dim, data_radius)
            z = L.log_map(o, batch, data_radius, max_norm=None)[..., 1:]
        for layer, chunk in reversed(list(zip(stack.layers, stack.layer_params(values)))):
            z, ld = F.layer_inverse(layer, z, stack.radius, chunk, stack.max_norm)
            if not (np.all(np.isfinite(z)) and np.all(np.isfinite(ld))):
                return f"epoch {epoch}, batch {batch_index}, layer {layer.index}"
    return f"epoch {epoch}, batch {batch_index}, base distribution"


def train(config: TrainConfig, dataset: np.ndarray, data_radius: float = 1.0,
          target=None) -> tuple[F.FlowStack, TrainReport]:
    """Fit a stack by Adam on the mean negative log-likelihood.

    Deterministic given ``config.seed``. ``target`` (with a ``log_prob``)
    enables the KL metric in the report.
    """
    config.validate()
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2 or len(dataset) < 2:
        raise DomainError("dataset must be a non-empty (count, dim+1) array")
    if dataset.shape[1] != config.dim + 1:
        raise DomainError(f"dataset has dim {dataset.shape[1] - 1}, config says {config.dim}")
    L.check_on_hyperboloid(dataset, data_radius)

    start = time.perf_counter()
    train_set, test_set = split_dataset(dataset, config.test_fraction, config.seed)
    stack = build_stack(config)
    curvature = config.curvature
    rng = make_rng(config.seed + 1)
    adam = D.AdamState(lr=config.lr)
    radius_adam = D.AdamState(lr=config.lr)
    log_radius = math.log(curvature.radius_at(config.warmup_epochs))
    batch_size = config.batch_size or len(train_set)
    report = TrainReport()

    for epoch in range(config.epochs):
        in_warmup = epoch < config.warmup_epochs
        learn_r = config.learn_curvature and not in_warmup and stack.hyperbolic
        if in_warmup or not config.learn_curvature:
            stack.radius = curvature.radius_at(epoch)
        else:
            stack.radius = math.exp(log_radius)
        report.epoch_radius.append(stack.radius)

        order = rng.permutation(len(train_set))
        total = 0.0
        for b, lo in enumerate(range(0, len(order), batch_size)):
            batch = train_set[order[lo:lo + batch_size]]
            tape = D.Tape()
            leaves = [tape.leaf(p) for p in stack.parameters()]
            if learn_r:
                r_leaf = tape.leaf(log_radius)
                radius = D.exp(r_leaf)
            else:
                radius = stack.radius
            with np.errstate(all="ignore"):
                lp = log_prob_data(stack, batch, data_radius, leaves, radius)
                loss = D.neg(D.mean(lp))
            loss_val = float(D.value_of(loss))
            if not math.isfinite(loss_val):
                raise TrainingAborted("non-finite loss at "
                                      + _diagnose(stack, batch, data_radius, leaves, epoch, b))
            tape.backward(loss)
            grads = [tape.grad(leaf) for leaf in leaves]
            try:
                stack.set_parameters(D.adam_step(adam, stack.parameters(), grads))
                if learn_r:
                    (log_radius,) = D.adam_step(radius_adam, [np.array(log_radius)],
                                                [tape.grad(r_leaf)])
                    log_radius = float(log_radius)
                    stack.radius = math.exp(log_radius)
            except NumericError as exc:
                raise TrainingAborted(f"{exc} at epoch {epoch}, batch {b}") from exc
            total += loss_val * len(batch)
        report.epoch_nll.append(total / len(train_set))
        _probe_manifold(stack, config.seed + epoch, data_radius)
        log.debug("epoch %d nll %.5f radius %.4f", epoch, report.epoch_nll[-1], stack.radius)

    check = min(10, config.epochs) - 1
    if check > 0 and not report.epoch_nll[check] < report.epoch_nll[0]:
        report.flags.append("loss did not decrease over the first epochs")
    report.final_radius = stack.radius
    report.train_nll = float(np.mean(-log_prob_data(stack, train_set, data_radius)))
    metrics = evaluate(stack, test_set, data_radius, config.eval_samples,
                       seed=config.seed + 2, target=target)
    report.test_nll = metrics["nll"]
    report.test_nll_se = metrics["nll_se"]
    report.kl = metrics.get("kl")
    report.kl_se = metrics.get("kl_se")
    report.is_log_mass = metrics["is_log_mass"]
    report.is_ess_fraction = metrics["is_ess_fraction"]
    report.wall_clock = time.perf_counter() - start
    return stack, report


def _probe_manifold(stack: F.FlowStack, seed: int, data_radius: float) -> None:
    if not stack.hyperbolic:
        return
    z = F.stack_sample(stack, 16, seed)
    L.check_on_hyperboloid(z, stack.radius)
    back, _ = F.stack_inverse(stack, z)
    L.check_on_hyperboloid(back, stack.radius)


def evaluate(stack: F.FlowStack, dataset: np.ndarray, data_radius: float = 1.0,
             n_importance: int = 500, seed: int = 0, target=None) -> dict:
    """Test NLL, forward KL (when the target density is known) and an
    importance-sampling health check.

    The check draws ``n_importance`` model samples and reweights them towards
    a reference density (the target if known, else a unit wrapped normal at
    the origin); ``is_log_mass`` estimates log of the reference's total mass
    and should sit near 0, ``is_ess_fraction`` is the normalised effective
    sample size.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if len(dataset) == 0:
        raise DomainError("empty dataset")
    lp = np.asarray(log_prob_data(stack, dataset, data_radius))
    nll = -lp
    out = {"nll": float(np.mean(nll)), "nll_se": _se(nll)}
    if target is not None and target.log_prob is not None:
        gap = np.asarray(target.log_prob(dataset)) - lp
        out["kl"] = float(np.mean(gap))
        out["kl_se"] = _se(gap)

    z = sample_data(stack, n_importance, seed, data_radius)
    if target is not None and target.log_prob is not None:
        ref = np.asarray(target.log_prob(z))
    else:
        ref = wn.WrappedNormal(L.origin(stack.dim, data_radius), np.ones(stack.dim),
                               data_radius).log_prob(z)
    log_w = ref - np.asarray(log_prob_data(stack, z, data_radius))
    top = np.max(log_w)
    w = np.exp(log_w - top)
    out["is_log_mass"] = float(top + np.log(np.mean(w)))
    out["is_ess_fraction"] = float(np.sum(w) ** 2 / np.sum(w * w) / len(w))
    return out


def _se(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))
