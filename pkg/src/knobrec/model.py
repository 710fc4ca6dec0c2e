"""Mult-beta-VAE and Mult-TCVAE recommenders: forward passes, the loss
families, semi-supervision, annealing, and the Adam training loop with
validation-NDCG model selection."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import InteractionDataset, UserSplit, preference_distribution
from .kernels import dcg_binary

VARIANTS = ("beta_vae", "tc_vae")
ACTIVATIONS = ("tanh", "softplus")


class ConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class LossConfig:
    variant: str = "beta_vae"
    beta: float = 1.0
    alpha: float = 1.0          # tc_vae index-code MI multiplier
    gamma: float = 1.0          # tc_vae dimension-wise KL multiplier
    supervision_frac: float = 0.0
    gamma_ss: float | None = None   # None: 1 when supervised, 0 otherwise
    anneal_steps: int | None = None  # None: fit derives 20% of total steps

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if not 0.0 <= self.supervision_frac <= 1.0:
            raise ConfigError("supervision_frac must be in [0, 1]")

    @property
    def resolved_gamma_ss(self) -> float:
        if self.supervision_frac == 0.0:
            return 0.0
        return 1.0 if self.gamma_ss is None else self.gamma_ss


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    h1: int = 600
    h2: int = 600
    d_latent: int = 200
    epochs: int = 50
    batch_size: int = 500
    lr: float = 1e-3
    activation: str = "tanh"
    anneal_frac: float = 0.2
    eval_k: int = 100

    def validate(self) -> None:
        self.loss.validate()
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for name in ("h1", "h2", "d_latent", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class ModelParams:
    """Encoder |I| -> h1 -> h2 -> (mu, log-variance) heads of width D, plus a
    single linear decoder D -> |I|. The first `n_supervised` latent dims are
    the knob dims."""

    n_items: int
    h1: int
    h2: int
    d_latent: int
    n_supervised: int
    activation: str
    weights: dict

    def copy(self) -> "ModelParams":
        return dataclasses.replace(self, weights={k: v.copy() for k, v in self.weights.items()})


WEIGHT_ORDER = ("w1", "b1", "w2", "b2", "w_mu", "b_mu", "w_lv", "b_lv", "w_dec", "b_dec")


def init_model(n_items: int, h1: int, h2: int, d_latent: int, n_supervised: int,
               activation: str, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights, zero biases."""
    if n_supervised > d_latent:
        raise ConfigError(f"{n_supervised} supervised factors exceed latent dim {d_latent}")

    def xavier(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    weights = {
        "w1": xavier(n_items, h1), "b1": np.zeros(h1),
        "w2": xavier(h1, h2), "b2": np.zeros(h2),
        "w_mu": xavier(h2, d_latent), "b_mu": np.zeros(d_latent),
        "w_lv": xavier(h2, d_latent), "b_lv": np.zeros(d_latent),
        "w_dec": xavier(d_latent, n_items), "b_dec": np.zeros(n_items),
    }
    return ModelParams(n_items=n_items, h1=h1, h2=h2, d_latent=d_latent,
                       n_supervised=n_supervised, activation=activation, weights=weights)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def _activate_t(h, activation):
    return ad.tanh(h) if activation == "tanh" else ad.softplus(h)


def _activate_np(h, activation):
    if activation == "tanh":
        return np.tanh(h)
    return np.logaddexp(0.0, h)


def encode_tape(wv: dict, x: np.ndarray, activation: str):
    """Tape forward through the encoder; input rows are L2-normalized."""
    x_norm = normalize_rows(x)
    h1 = _activate_t(ad.linear(x_norm, wv["w1"], wv["b1"]), activation)
    h2 = _activate_t(ad.linear(h1, wv["w2"], wv["b2"]), activation)
    mu = ad.linear(h2, wv["w_mu"], wv["b_mu"])
    lv = ad.linear(h2, wv["w_lv"], wv["b_lv"])
    return mu, lv


def decode_tape(wv: dict, z) -> "ad.Var":
    return ad.log_softmax(ad.linear(z, wv["w_dec"], wv["b_dec"]))


def encode(params: ModelParams, x: np.ndarray):
    """Inference-path encoder (no tape): returns (mu, log-variance)."""
    if x.ndim != 2 or x.shape[1] != params.n_items:
        raise ad.DimensionError(f"encode: expected width {params.n_items}, got {x.shape}")
    w = params.weights
    h = _activate_np(normalize_rows(x) @ w["w1"] + w["b1"], params.activation)
    h = _activate_np(h @ w["w2"] + w["b2"], params.activation)
    return h @ w["w_mu"] + w["b_mu"], h @ w["w_lv"] + w["b_lv"]


def decode(params: ModelParams, z: np.ndarray) -> np.ndarray:
    """log pi(z): linear layer then row log-softmax."""
    if z.ndim != 2 or z.shape[1] != params.d_latent:
        raise ad.DimensionError(f"decode: expected width {params.d_latent}, got {z.shape}")
    w = params.weights
    return ad.log_softmax_np(z @ w["w_dec"] + w["b_dec"])


@dataclass
class Batch:
    x: np.ndarray               # (B, |I|) binary
    noise: np.ndarray           # (B, D) standard normal
    sup_mask: np.ndarray | None = None     # (B,) bool
    sup_targets: np.ndarray | None = None  # (B, A) in [0, 1]


def semi_supervised_penalty(mu: "ad.Var", targets: np.ndarray,
                            sup_mask: np.ndarray, n_supervised: int) -> "ad.Var":
    """Mean over supervised rows of the soft-target BCE between the first
    `n_supervised` dims of mu (through a logistic) and the factor targets.

    Unsupervised dims and unsupervised rows receive exactly zero gradient.
    Uses the stable form softplus(mu) - a * mu.
    """
    if targets.shape[1] > mu.value.shape[1]:
        raise ConfigError(f"{targets.shape[1]} targets exceed latent dim {mu.value.shape[1]}")
    n_sup_rows = int(sup_mask.sum())
    if n_sup_rows == 0:
        return mu.tape.var(0.0)
    mu_a = ad.first_cols(mu, n_supervised)
    bce = ad.sub(ad.softplus(mu_a), ad.mul(mu_a, targets))
    per_row = ad.vsum(bce, axis=1)
    return ad.mul(ad.vsum(ad.mul(per_row, sup_mask.astype(np.float64))), 1.0 / n_sup_rows)


def anneal_beta(step: int, config: LossConfig) -> float:
    """Linear ramp of beta from 0 over the annealing budget, then constant."""
    budget = config.anneal_steps
    if budget is None or budget <= 0:
        return config.beta
    return config.beta * min(1.0, step / budget)


def _elbo_parts(wv: dict, batch: Batch, activation: str):
    mu, lv = encode_tape(wv, batch.x, activation)
    z = ad.gaussian_reparameterize(mu, lv, batch.noise)
    log_pi = decode_tape(wv, z)
    nll = ad.multinomial_nll(batch.x, log_pi)   # (B,)
    return mu, lv, z, nll


def loss_beta_vae(batch: Batch, wv: dict, params: ModelParams,
                  config: LossConfig, beta_t: float):
    """Mean multinomial NLL + beta_t * KL + gamma_ss * supervision penalty."""
    mu, lv, z, nll = _elbo_parts(wv, batch, params.activation)
    kl = ad.kl_diag_gaussian_vs_standard(mu, lv)
    recon = ad.vmean(nll)
    kl_mean = ad.vmean(kl)
    loss = ad.add(recon, ad.mul(kl_mean, beta_t))
    components = {"recon": float(recon.value), "kl": float(kl_mean.value),
                  "beta_t": beta_t, "sup": 0.0}
    gamma_ss = config.resolved_gamma_ss
    if gamma_ss > 0 and batch.sup_mask is not None:
        sup = semi_supervised_penalty(mu, batch.sup_targets, batch.sup_mask,
                                      params.n_supervised)
        loss = ad.add(loss, ad.mul(sup, gamma_ss))
        components["sup"] = float(sup.value)
    return loss, components


def loss_tc_vae(batch: Batch, wv: dict, params: ModelParams, config: LossConfig,
                beta_t: float, dataset_size: int):
    """Reconstruction + alpha * index-code MI + gamma * dimension-wise KL +
    beta_t * total correlation, each via minibatch-weighted sampling."""
    b = batch.x.shape[0]
    if b < 2:
        raise ConfigError("tc_vae needs batch size >= 2 for the aggregate-posterior estimate")
    mu, lv, z, nll = _elbo_parts(wv, batch, params.activation)
    d = params.d_latent

    log_qz_x = ad.vsum(ad.diag_gaussian_logpdf(z, mu, lv), axis=1)            # (B,)
    pairwise = ad.diag_gaussian_logpdf(ad.reshape(z, (b, 1, d)),
                                       ad.reshape(mu, (1, b, d)),
                                       ad.reshape(lv, (1, b, d)))             # (B, B, D)
    log_nb = math.log(dataset_size * b)
    log_qz = ad.sub(ad.logsumexp(ad.vsum(pairwise, axis=2), axis=1), log_nb)  # (B,)
    log_qz_prod = ad.vsum(ad.sub(ad.logsumexp(pairwise, axis=1), log_nb), axis=1)
    log_pz = ad.mul(ad.vsum(ad.add(ad.mul(z, z), ad.LOG_2PI), axis=1), -0.5)

    recon = ad.vmean(nll)
    mi = ad.vmean(ad.sub(log_qz_x, log_qz))
    tc = ad.vmean(ad.sub(log_qz, log_qz_prod))
    dwkl = ad.vmean(ad.sub(log_qz_prod, log_pz))
    loss = ad.add(ad.add(recon, ad.mul(mi, config.alpha)),
                  ad.add(ad.mul(dwkl, config.gamma), ad.mul(tc, beta_t)))
    components = {"recon": float(recon.value), "mi": float(mi.value),
                  "tc": float(tc.value), "dwkl": float(dwkl.value),
                  "beta_t": beta_t, "sup": 0.0}
    gamma_ss = config.resolved_gamma_ss
    if gamma_ss > 0 and batch.sup_mask is not None:
        sup = semi_supervised_penalty(mu, batch.sup_targets, batch.sup_mask,
                                      params.n_supervised)
        loss = ad.add(loss, ad.mul(sup, gamma_ss))
        components["sup"] = float(sup.value)
    return loss, components


def training_loss(batch: Batch, wv: dict, params: ModelParams, config: LossConfig,
                  beta_t: float, dataset_size: int):
    if config.variant == "beta_vae":
        return loss_beta_vae(batch, wv, params, config, beta_t)
    return loss_tc_vae(batch, wv, params, config, beta_t, dataset_size)


@dataclass
class TrainReport:
    epoch_components: list
    val_ndcg: list
    best_epoch: int
    supervised_users: np.ndarray

    def to_json(self) -> dict:
        return {"epoch_components": self.epoch_components,
                "val_ndcg": self.val_ndcg,
                "best_epoch": self.best_epoch,
                "supervised_users": self.supervised_users.tolist()}


def draw_supervision(dataset: InteractionDataset, train_users: np.ndarray,
                     frac: float, rng: np.random.Generator):
    """Pick round(frac * U_train) users and their full-history preference
    distributions as supervision targets."""
    n_sup = round(frac * len(train_users))
    sup_users = np.sort(rng.choice(train_users, size=n_sup, replace=False))
    targets = preference_distribution(dataset, users=sup_users.tolist()) if n_sup else \
        np.zeros((0, dataset.n_factors))
    return sup_users, targets


def validation_ndcg(params: ModelParams, dataset: InteractionDataset,
                    users, fold_in: dict, holdout: dict, k: int = 100) -> float:
    """Fold-in -> mean posterior -> rank excluding fold-in -> NDCG vs holdout."""
    if len(users) == 0:
        return 0.0
    total = 0.0
    for u in users:
        x = np.zeros((1, params.n_items))
        x[0, fold_in[u]] = 1.0
        mu, _ = encode(params, x)
        scores = decode(params, mu)[0]
        scores[fold_in[u]] = -np.inf
        ranked = np.argsort(-scores, kind="stable")
        hold = holdout[u]
        idcg = float(np.sum(1.0 / np.log2(np.arange(min(len(hold), k)) + 2.0)))
        total += dcg_binary(ranked, np.sort(hold), k) / idcg
    return total / len(users)


def fit(dataset: InteractionDataset, split: UserSplit, config: TrainConfig,
        seed: int = 0):
    """Train the configured variant; returns (best params, TrainReport).

    Deterministic given (dataset, split, config, seed): the supervision draw,
    init, shuffles and reparameterization noise all come from one seeded
    generator consumed in a fixed order.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n_factors = dataset.n_factors
    params = init_model(dataset.n_items, config.h1, config.h2, config.d_latent,
                        n_factors, config.activation, rng)
    wv_template = params.weights

    train_users = split.train_users
    sup_users, sup_targets = draw_supervision(dataset, train_users,
                                              config.loss.supervision_frac, rng)
    sup_row = {int(u): r for r, u in enumerate(sup_users.tolist())}

    n_train = len(train_users)
    steps_per_epoch = math.ceil(n_train / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    loss_cfg = dataclasses.replace(config.loss)
    if loss_cfg.anneal_steps is None:
        loss_cfg.anneal_steps = int(config.anneal_frac * total_steps)

    opt = ad.adam_init(params.weights, lr=config.lr)
    step = 0
    report = TrainReport(epoch_components=[], val_ndcg=[], best_epoch=0,
                         supervised_users=sup_users)
    best_params = params.copy()
    best_ndcg = -np.inf

    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        epoch_comps: dict = {}
        for s in range(steps_per_epoch):
            batch_users = train_users[order[s * config.batch_size:(s + 1) * config.batch_size]]
            x = dataset.dense_rows(batch_users)
            noise = rng.standard_normal((len(batch_users), config.d_latent))
            sup_mask = np.array([int(u) in sup_row for u in batch_users.tolist()])
            targets = np.zeros((len(batch_users), n_factors))
            for r, u in enumerate(batch_users.tolist()):
                if int(u) in sup_row:
                    targets[r] = sup_targets[sup_row[int(u)]]
            batch = Batch(x=x, noise=noise, sup_mask=sup_mask, sup_targets=targets)

            tape = ad.Tape()
            wv = {name: tape.var(w) for name, w in wv_template.items()}
            beta_t = anneal_beta(step, loss_cfg)
            loss, comps = training_loss(batch, wv, params, loss_cfg, beta_t, n_train)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}: {comps}")
            tape.backward(loss)
            grads = {name: v.grad for name, v in wv.items()}
            ad.adam_step(params.weights, grads, opt)
            step += 1
            comps["loss"] = float(loss.value)
            for key, val in comps.items():
                epoch_comps[key] = epoch_comps.get(key, 0.0) + val / steps_per_epoch

        ndcg = validation_ndcg(params, dataset, split.val_users.tolist(),
                               split.fold_in, split.holdout, k=config.eval_k)
        report.epoch_components.append(epoch_comps)
        report.val_ndcg.append(ndcg)
        if ndcg > best_ndcg:
            best_ndcg = ndcg
            best_params = params.copy()
            report.best_epoch = epoch

    return best_params, report


# ---------------------------------------------------------------------------
# Checkpoint container: JSON header + raw little-endian float64 payload
# ---------------------------------------------------------------------------

_MAGIC = b"KNOBREC\x01"


def save_checkpoint(path, params: ModelParams, loss_config: LossConfig,
                    factor_names: list, seed: int, best_epoch: int) -> None:
    arrays = [{"name": n, "shape": list(params.weights[n].shape)} for n in WEIGHT_ORDER]
    payload = b"".join(np.ascontiguousarray(params.weights[n], dtype="<f8").tobytes()
                       for n in WEIGHT_ORDER)
    header = {
        "version": 1,
        "dims": {"n_items": params.n_items, "h1": params.h1, "h2": params.h2,
                 "d_latent": params.d_latent, "n_supervised": params.n_supervised},
        "activation": params.activation,
        "loss_config": dataclasses.asdict(loss_config),
        "factor_names": factor_names,
        "knob_mapping": list(range(params.n_supervised)),
        "seed": seed,
        "best_epoch": best_epoch,
        "arrays": arrays,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


@dataclass
class Checkpoint:
    params: ModelParams
    loss_config: LossConfig
    factor_names: list
    knob_mapping: list
    seed: int
    best_epoch: int


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    weights = {}
    offset = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        weights[spec["name"]] = np.frombuffer(
            payload, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += n * 8
    dims = header["dims"]
    params = ModelParams(n_items=dims["n_items"], h1=dims["h1"], h2=dims["h2"],
                         d_latent=dims["d_latent"], n_supervised=dims["n_supervised"],
                         activation=header["activation"], weights=weights)
    return Checkpoint(params=params, loss_config=LossConfig(**header["loss_config"]),
                      factor_names=header["factor_names"],
                      knob_mapping=header["knob_mapping"],
                      seed=header["seed"], best_epoch=header["best_epoch"])
