"""Configuration-driven pipeline commands: prepare, synth, train, evaluate,
serve.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. The resolved config is always written next to the outputs.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

import click
import numpy as np

from . import data as dat
from . import metrics as met
from .control import KnobMapping
from .model import (CheckpointError, ConfigError, LossConfig, TrainConfig,
                    TrainingDivergedError, encode, fit, load_checkpoint,
                    save_checkpoint)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

_SCHEMA = {
    "seed": int,
    "out": str,
    "artifacts_dir": str,
    "data": {"ratings": str, "metadata": str, "min_rating": float,
             "min_interactions": int, "n_factors": int,
             "n_val_users": int, "n_test_users": int, "holdout_frac": float},
    "synth": {"n_users": int, "n_items": int, "n_factors": int,
              "affinity_concentration": float, "interactions_low": int,
              "interactions_high": int, "extra_factor_prob": float},
    "model": {"variant": str, "beta": float, "alpha": float, "gamma": float,
              "supervision_frac": float, "gamma_ss": float,
              "h1": int, "h2": int, "d_latent": int, "activation": str},
    "train": {"epochs": int, "batch_size": int, "lr": float,
              "anneal_frac": float, "anneal_steps": int, "beta_grid": list},
    "eval": {"k": int, "n_users": int, "n_steps": int, "n_bins": int,
             "mig_samples": int},
}


def _validate_config(cfg: dict) -> None:
    for key, val in cfg.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        spec = _SCHEMA[key]
        if isinstance(spec, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config section [{key}] must be a table")
            for sub in val:
                if sub not in spec:
                    raise ConfigError(f"unknown config key {key}.{sub}")


def _load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _validate_config(cfg)
    return cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def _write_resolved(cfg: dict, out: Path) -> None:
    lines = []
    for key in sorted(cfg):
        if not isinstance(cfg[key], dict):
            lines.append(f"{key} = {_toml_value(cfg[key])}")
    for key in sorted(cfg):
        if isinstance(cfg[key], dict):
            lines.append(f"\n[{key}]")
            for sub in sorted(cfg[key]):
                lines.append(f"{sub} = {_toml_value(cfg[key][sub])}")
    (out / "resolved_config.toml").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _run(fn):
    try:
        fn()
    except (ConfigError, dat.DataError, TrainingDivergedError, CheckpointError,
            met.MetricError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        if isinstance(exc, ConfigError):
            sys.exit(EXIT_CONFIG)
        if isinstance(exc, TrainingDivergedError):
            sys.exit(EXIT_NUMERIC)
        sys.exit(EXIT_DATA)


@click.group()
def main():
    """Controllable recommender pipeline."""


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(), help="TOML config file")(fn)
    fn = click.option("--seed", type=int, default=None, help="override config seed")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None,
                      help="override output directory")(fn)
    return fn


def _resolve(config_path, seed, out_dir, default_out):
    cfg = _load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    if out_dir is not None:
        cfg["out"] = out_dir
    cfg.setdefault("out", default_out)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _build_dataset(cfg: dict):
    """Dataset from real CSVs ([data] paths) or a synthetic spec ([synth])."""
    seed = cfg["seed"]
    if "synth" in cfg:
        spec = dat.SyntheticSpec(seed=seed, **cfg["synth"])
        dataset, affinities = dat.generate_synthetic(spec)
        return dataset, affinities
    dcfg = cfg.get("data", {})
    for key in ("ratings", "metadata"):
        if key not in dcfg:
            raise ConfigError(f"config needs data.{key} or a [synth] section")
        if not Path(dcfg[key]).exists():
            raise dat.DataError(f"missing input file: {dcfg[key]}")
    raw = dat.load_ratings(dcfg["ratings"], dcfg["metadata"])
    dataset = dat.binarize_and_filter(raw,
                                      min_rating=dcfg.get("min_rating", 4.0),
                                      min_interactions=dcfg.get("min_interactions", 5),
                                      n_factors=dcfg.get("n_factors"))
    return dataset, None


@main.command()
@_common_options
def prepare(config_path, seed, out_dir):
    """Preprocess ratings (or generate synthetic data) into train artifacts."""
    def go():
        cfg, out = _resolve(config_path, seed, out_dir, "prepared")
        dataset, affinities = _build_dataset(cfg)
        dcfg = cfg.get("data", {})
        n_val = dcfg.get("n_val_users", max(1, dataset.n_users // 10))
        n_test = dcfg.get("n_test_users", max(1, dataset.n_users // 10))
        split = dat.split_users(dataset, n_val, n_test,
                                holdout_frac=dcfg.get("holdout_frac", 0.2),
                                seed=cfg["seed"])
        dat.save_dataset(dataset, out / "dataset.npz")
        dat.save_split(split, out / "split.npz")
        factors = dat.preference_distribution(dataset)
        np.save(out / "factors.npy", factors)
        if affinities is not None:
            dat.write_dataset_csv(dataset, out / "ratings.csv", out / "items.csv",
                                  affinities=affinities,
                                  sidecar_path=out / "ground_truth.json")
        stats = {
            "n_users": dataset.n_users,
            "n_items": dataset.n_items,
            "n_factors": dataset.n_factors,
            "n_interactions": int(sum(len(x) for x in dataset.item_lists)),
            "n_train_users": int(len(split.train_users)),
            "n_val_users": int(len(split.val_users)),
            "n_test_users": int(len(split.test_users)),
            "factor_names": dataset.factor_names,
        }
        (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True))
        _write_resolved(cfg, out)
        click.echo(json.dumps(stats, sort_keys=True))
    _run(go)


@main.command()
@_common_options
def synth(config_path, seed, out_dir):
    """Generate a synthetic dataset as CSVs plus a ground-truth sidecar."""
    def go():
        cfg, out = _resolve(config_path, seed, out_dir, "synthetic")
        if "synth" not in cfg:
            raise ConfigError("synth command needs a [synth] section")
        spec = dat.SyntheticSpec(seed=cfg["seed"], **cfg["synth"])
        dataset, affinities = dat.generate_synthetic(spec)
        dat.write_dataset_csv(dataset, out / "ratings.csv", out / "items.csv",
                              affinities=affinities,
                              sidecar_path=out / "ground_truth.json")
        _write_resolved(cfg, out)
        click.echo(f"wrote {dataset.n_users} users x {dataset.n_items} items to {out}")
    _run(go)


def _train_config(cfg: dict, beta: float | None = None) -> TrainConfig:
    mcfg = dict(cfg.get("model", {}))
    tcfg = dict(cfg.get("train", {}))
    tcfg.pop("beta_grid", None)
    loss = LossConfig(variant=mcfg.pop("variant", "beta_vae"),
                      beta=beta if beta is not None else mcfg.pop("beta", 1.0),
                      alpha=mcfg.pop("alpha", 1.0),
                      gamma=mcfg.pop("gamma", 1.0),
                      supervision_frac=mcfg.pop("supervision_frac", 0.0),
                      gamma_ss=mcfg.pop("gamma_ss", None),
                      anneal_steps=tcfg.pop("anneal_steps", None))
    if beta is not None:
        mcfg.pop("beta", None)
    return TrainConfig(loss=loss, **mcfg, **tcfg)


@main.command()
@_common_options
@click.option("--data", "artifacts_dir", type=click.Path(), default=None,
              help="directory produced by prepare")
def train(config_path, seed, out_dir, artifacts_dir):
    """Train the configured model; sweeps train.beta_grid when present."""
    def go():
        cfg, out = _resolve(config_path, seed, out_dir, "trained")
        art = Path(artifacts_dir or cfg.get("artifacts_dir", "prepared"))
        if not (art / "dataset.npz").exists():
            raise dat.DataError(f"no prepared artifacts in {art}")
        dataset = dat.load_dataset(art / "dataset.npz")
        split = dat.load_split(art / "split.npz")

        betas = cfg.get("train", {}).get("beta_grid")
        sweep = []
        for beta in (betas if betas else [None]):
            config = _train_config(cfg, beta=beta)
            params, report = fit(dataset, split, config, seed=cfg["seed"])
            tag = f"_beta{config.loss.beta:g}" if betas else ""
            ckpt_path = out / f"model{tag}.ckpt"
            save_checkpoint(ckpt_path, params, config.loss, dataset.factor_names,
                            cfg["seed"], report.best_epoch)
            (out / f"train_report{tag}.json").write_text(
                json.dumps(report.to_json(), sort_keys=True))
            sweep.append({"beta": config.loss.beta, "checkpoint": ckpt_path.name,
                          "best_val_ndcg": max(report.val_ndcg),
                          "best_epoch": report.best_epoch})
        best = max(sweep, key=lambda s: s["best_val_ndcg"])
        (out / "sweep.json").write_text(json.dumps(
            {"runs": sweep, "best": best["checkpoint"]}, indent=2, sort_keys=True))
        _write_resolved(cfg, out)
        click.echo(f"best checkpoint: {out / best['checkpoint']} "
                   f"(val NDCG {best['best_val_ndcg']:.4f})")
    _run(go)


def _format_report_md(report: dict, factor_names) -> str:
    lines = ["# Evaluation report", "", f"- NDCG@k: {report['ndcg']:.4f}"]
    if "mig" in report:
        lines.append(f"- MIG: {report['mig']:.4f}")
    if "controllability" in report:
        lines.append("")
        lines.append("| metric | mean | se |")
        lines.append("|---|---|---|")
        for m, v in report["controllability"].items():
            if v["mean"] is None:
                lines.append(f"| {m} | - | - |")
            else:
                lines.append(f"| {m} | {v['mean']:.4f} | {v['se']:.4f} |")
    else:
        lines.append("- controllability: skipped (no supervision, no knob mapping)")
    return "\n".join(lines) + "\n"


@main.command()
@_common_options
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path())
@click.option("--data", "artifacts_dir", type=click.Path(), default=None)
def evaluate(config_path, seed, out_dir, ckpt_path, artifacts_dir):
    """NDCG, MIG and (when supervised) the controllability suite."""
    def go():
        cfg, out = _resolve(config_path, seed, out_dir, "evaluation")
        art = Path(artifacts_dir or cfg.get("artifacts_dir", "prepared"))
        dataset = dat.load_dataset(art / "dataset.npz")
        split = dat.load_split(art / "split.npz")
        ckpt = load_checkpoint(ckpt_path)
        ecfg = cfg.get("eval", {})
        k = ecfg.get("k", 100)

        ndcg = met.evaluate_recommender(ckpt.params, dataset, split, which="test", k=k)

        rng = np.random.default_rng(cfg["seed"])
        n_mig = min(ecfg.get("mig_samples", 10000), len(split.test_users))
        mig_users = rng.choice(split.test_users, size=n_mig, replace=False)
        reps, _ = encode(ckpt.params, dataset.dense_rows(mig_users.tolist()))
        facs = dat.preference_distribution(dataset, users=mig_users.tolist())
        mig_report = met.mig(reps, facs, n_bins=ecfg.get("n_bins", 20))

        ctrl = None
        if ckpt.loss_config.supervision_frac > 0:
            mapping = KnobMapping(dims=np.array(ckpt.knob_mapping, dtype=np.int64))
            ctrl = met.evaluate_controllability(
                ckpt.params, mapping, dataset,
                n_users=ecfg.get("n_users", 100), n_steps=ecfg.get("n_steps", 50),
                k=k, seed=cfg["seed"])
        else:
            click.echo("controllability skipped: model trained without supervision",
                       err=True)

        report = met.EvalReport(ndcg=ndcg, mig_score=mig_report.score,
                                mig_report=mig_report, controllability=ctrl,
                                factor_names=dataset.factor_names)
        payload = report.to_json()
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
        (out / "report.md").write_text(_format_report_md(payload, dataset.factor_names))
        _write_resolved(cfg, out)
        click.echo(json.dumps({"ndcg": ndcg, "mig": mig_report.score}, sort_keys=True))
    _run(go)


@main.command()
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path())
@click.option("--data", "artifacts_dir", required=True, type=click.Path())
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(ckpt_path, artifacts_dir, host, port):
    """Run the HTTP inference service on a trained checkpoint."""
    def go():
        import uvicorn

        from .service import create_app
        dataset = dat.load_dataset(Path(artifacts_dir) / "dataset.npz")
        app = create_app(ckpt_path, dataset)
        uvicorn.run(app, host=host, port=port)
    _run(go)


if __name__ == "__main__":
    main()
