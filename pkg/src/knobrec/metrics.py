"""Evaluation suite: NDCG@100, the controllability metrics with their
input/holdout constructions, Pearson sweeps, and the mutual-information-gap
disentanglement score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .control import KnobMapping, KnobSetting, RankedList, infer_representation, \
    manipulate, recommend
from .data import DataError, InteractionDataset, UserSplit, cooccurrence_profile
from .kernels import dcg_binary, joint_counts
from .model import ModelParams, validation_ndcg

CTRL_METRICS = ("delta_ctrl", "delta_irrel", "corr", "easy_corr_ctrl",
                "easy_corr_rand", "diff_corr_ctrl", "diff_corr_rand")


class MetricError(ValueError):
    pass


def ndcg_at_k(ranked, holdout, k: int = 100) -> float:
    """Binary-relevance NDCG@k with 1/log2(rank+1) gains, ideal DCG for
    min(|holdout|, k) relevant items."""
    if isinstance(ranked, RankedList):
        ranked = ranked.items
    holdout = np.asarray(list(holdout) if not isinstance(holdout, np.ndarray) else holdout,
                         dtype=np.int64)
    if holdout.size == 0:
        raise MetricError("empty holdout set")
    idcg = float(np.sum(1.0 / np.log2(np.arange(min(holdout.size, k)) + 2.0)))
    return dcg_binary(np.asarray(ranked, dtype=np.int64), np.sort(holdout), k) / idcg


def pearson(x, y) -> float:
    """Pearson correlation; defined as 0 when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        return 0.0
    return float((xc * yc).sum() / denom)


@dataclass
class HoldoutCase:
    """One (user, factor) evaluation setup per Table-of-metrics row."""

    user: int
    factor: int
    kind: str                     # ctrl | irrel | easy | difficult
    input_items: np.ndarray
    holdout_items: np.ndarray
    control_factor: int | None = None
    control_holdout: np.ndarray | None = None


def build_holdout_cases(dataset: InteractionDataset, factor_j: int,
                        n_users: int = 100, seed: int = 0,
                        min_input: int = 10, min_holdout: int = 5) -> list:
    """Sample up to `n_users` eligible users per case kind for one factor.

    ctrl/irrel: input = user items without the factor's items; holdout is the
    user's factor items (ctrl) or the factor's unrated items (irrel).
    easy/difficult: the control factor's items are removed from the input too,
    and its user items kept as the control holdout.
    """
    if not 0 <= factor_j < dataset.n_factors:
        raise MetricError(f"factor {factor_j} not in dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.n_users)
    factor_items = dataset.items_with_factor(factor_j)
    cases: dict = {"ctrl": [], "irrel": [], "easy": [], "difficult": []}

    for u in order.tolist():
        if all(len(v) >= n_users for v in cases.values()):
            break
        items = dataset.item_lists[u]
        u_gj = np.intersect1d(items, factor_items, assume_unique=True)
        if u_gj.size == 0:
            continue
        base_input = np.setdiff1d(items, u_gj, assume_unique=True)
        if base_input.size < min_input:
            continue

        if len(cases["ctrl"]) < n_users and u_gj.size >= min_holdout:
            cases["ctrl"].append(HoldoutCase(user=u, factor=factor_j, kind="ctrl",
                                             input_items=base_input, holdout_items=u_gj))
        irrel_holdout = np.setdiff1d(factor_items, u_gj, assume_unique=True)
        if len(cases["irrel"]) < n_users and irrel_holdout.size >= min_holdout:
            cases["irrel"].append(HoldoutCase(user=u, factor=factor_j, kind="irrel",
                                              input_items=base_input,
                                              holdout_items=irrel_holdout))
        if u_gj.size >= min_holdout and dataset.n_factors >= 3:
            try:
                g_easy, g_diff = cooccurrence_profile(dataset, u, factor_j)
            except DataError:
                continue
            for kind, g_i in (("easy", g_easy), ("difficult", g_diff)):
                if len(cases[kind]) >= n_users:
                    continue
                u_gi = np.intersect1d(items, dataset.items_with_factor(g_i),
                                      assume_unique=True)
                ctrl_input = np.setdiff1d(base_input, u_gi, assume_unique=True)
                if ctrl_input.size >= min_input and u_gi.size >= min_holdout:
                    cases[kind].append(HoldoutCase(
                        user=u, factor=factor_j, kind=kind,
                        input_items=ctrl_input, holdout_items=u_gj,
                        control_factor=g_i, control_holdout=u_gi))

    out = cases["ctrl"] + cases["irrel"] + cases["easy"] + cases["difficult"]
    if not out:
        warnings.warn(f"no eligible users for factor {factor_j}", stacklevel=2)
    return out


def _delta(params: ModelParams, mapping: KnobMapping, case: HoldoutCase,
           k: int) -> float:
    z = infer_representation(params, case.input_items)
    before = recommend(params, z, exclude=case.input_items, n=k)
    r_default = ndcg_at_k(before, case.holdout_items, k)
    z_bar = manipulate(z, KnobSetting(case.factor, 1.0), mapping)
    after = recommend(params, z_bar, exclude=case.input_items, n=k)
    return ndcg_at_k(after, case.holdout_items, k) - r_default


def delta_ctrl(params: ModelParams, mapping: KnobMapping, case: HoldoutCase,
               k: int = 100) -> float:
    """NDCG change on the user's own factor items when the knob is set to max."""
    return _delta(params, mapping, case, k)


def delta_irrel(params: ModelParams, mapping: KnobMapping, case: HoldoutCase,
                k: int = 100) -> float:
    """NDCG change on the factor's items the user never rated (reported
    alongside delta_ctrl, never alone)."""
    return _delta(params, mapping, case, k)


def correlation_sweep(params: ModelParams, mapping: KnobMapping, case: HoldoutCase,
                      n_steps: int = 50, k: int = 100,
                      use_control_holdout: bool = False) -> float:
    """Pearson correlation between an even knob grid over [0, 1] and the NDCG
    of the manipulated recommendations against the case's holdout."""
    holdout = case.control_holdout if use_control_holdout else case.holdout_items
    z = infer_representation(params, case.input_items)
    grid = np.linspace(0.0, 1.0, n_steps)
    scores = np.empty(n_steps)
    for s, v in enumerate(grid.tolist()):
        z_bar = manipulate(z, KnobSetting(case.factor, v), mapping)
        ranked = recommend(params, z_bar, exclude=case.input_items, n=k)
        scores[s] = ndcg_at_k(ranked, holdout, k)
    return pearson(grid, scores)


# ---------------------------------------------------------------------------
# Mutual information gap
# ---------------------------------------------------------------------------


@dataclass
class MIGReport:
    mi: np.ndarray               # (A, D) mutual information, nats
    gaps: np.ndarray             # (A,) per-factor normalized gap
    factor_entropies: np.ndarray
    score: float                 # mean gap over factors


def _quantile_bins(col: np.ndarray, n_bins: int) -> np.ndarray:
    ranks = np.argsort(np.argsort(col, kind="stable"), kind="stable")
    return (ranks * n_bins) // len(col)


def _discrete_mi(xb: np.ndarray, yb: np.ndarray, n_bins: int) -> float:
    counts = joint_counts(xb, yb, n_bins)
    n = counts.sum()
    p = counts / n
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / (px @ py)[mask])).sum())


def mig(representations: np.ndarray, factors: np.ndarray, n_bins: int = 20) -> MIGReport:
    """Empirical MIG with equal-count (quantile) binning.

    Each factor's gap is (highest - second highest MI over latent dims),
    normalized by the factor's discrete entropy.
    """
    u, d = representations.shape
    a = factors.shape[1]
    if u < n_bins:
        raise MetricError(f"need at least {n_bins} samples, got {u}")
    if factors.shape[0] != u:
        raise MetricError("representations/factors row counts differ")

    rep_const = np.array([np.ptp(representations[:, i]) == 0 for i in range(d)])
    if rep_const.any():
        warnings.warn("constant latent dimension(s); their MI is defined 0", stacklevel=2)
    rep_bins = [None if rep_const[i] else _quantile_bins(representations[:, i], n_bins)
                for i in range(d)]

    mi_mat = np.zeros((a, d))
    gaps = np.zeros(a)
    entropies = np.zeros(a)
    for j in range(a):
        col = factors[:, j]
        if np.ptp(col) == 0:
            warnings.warn(f"constant factor column {j}; its gap is defined 0", stacklevel=2)
            continue
        fb = _quantile_bins(col, n_bins)
        pf = np.bincount(fb, minlength=n_bins) / u
        entropies[j] = float(-(pf[pf > 0] * np.log(pf[pf > 0])).sum())
        for i in range(d):
            if rep_bins[i] is not None:
                mi_mat[j, i] = _discrete_mi(rep_bins[i], fb, n_bins)
        top2 = np.sort(mi_mat[j])[::-1][:2]
        if entropies[j] > 0:
            gaps[j] = (top2[0] - top2[1]) / entropies[j]
    return MIGReport(mi=mi_mat, gaps=gaps, factor_entropies=entropies,
                     score=float(gaps.mean()))


# ---------------------------------------------------------------------------
# Aggregate evaluation
# ---------------------------------------------------------------------------


def evaluate_recommender(params: ModelParams, dataset: InteractionDataset,
                         split: UserSplit, which: str = "test", k: int = 100) -> float:
    """Mean NDCG@k over eval users (fold-in to infer, holdout to score)."""
    users = split.test_users if which == "test" else split.val_users
    return validation_ndcg(params, dataset, users.tolist(), split.fold_in,
                           split.holdout, k=k)


def _mean_se(values: np.ndarray):
    n = len(values)
    mean = float(values.mean()) if n else 0.0
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se, n


@dataclass
class ControllabilityReport:
    """Per-(user, factor) measurements, aggregated by averaging across
    factors within a user and then across users."""

    records: list = field(default_factory=list)  # (metric, factor, user, value)

    def per_factor(self) -> dict:
        out: dict = {}
        for metric, factor, _, value in self.records:
            out.setdefault(factor, {}).setdefault(metric, []).append(value)
        return {f: {m: _mean_se(np.array(vs)) for m, vs in block.items()}
                for f, block in out.items()}

    def aggregate(self) -> dict:
        by_user: dict = {}
        for metric, factor, user, value in self.records:
            by_user.setdefault(metric, {}).setdefault(user, []).append(value)
        out = {}
        for metric, users in by_user.items():
            per_user = np.array([np.mean(vs) for _, vs in sorted(users.items())])
            mean, se, n = _mean_se(per_user)
            out[metric] = {"mean": mean, "se": se, "n_users": n}
        return out


def evaluate_controllability(params: ModelParams, mapping: KnobMapping,
                             dataset: InteractionDataset, n_users: int = 100,
                             n_steps: int = 50, k: int = 100,
                             seed: int = 0) -> ControllabilityReport:
    report = ControllabilityReport()
    for j in range(len(mapping.dims)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cases = build_holdout_cases(dataset, j, n_users=n_users, seed=seed + j)
        for case in cases:
            if case.kind == "ctrl":
                report.records.append(("delta_ctrl", j, case.user,
                                       delta_ctrl(params, mapping, case, k)))
                report.records.append(("corr", j, case.user,
                                       correlation_sweep(params, mapping, case, n_steps, k)))
            elif case.kind == "irrel":
                report.records.append(("delta_irrel", j, case.user,
                                       delta_irrel(params, mapping, case, k)))
            else:
                prefix = "easy" if case.kind == "easy" else "diff"
                report.records.append((f"{prefix}_corr_ctrl", j, case.user,
                                       correlation_sweep(params, mapping, case, n_steps, k)))
                report.records.append((f"{prefix}_corr_rand", j, case.user,
                                       correlation_sweep(params, mapping, case, n_steps, k,
                                                         use_control_holdout=True)))
    return report


@dataclass
class EvalReport:
    ndcg: float
    mig_score: float | None = None
    mig_report: MIGReport | None = None
    controllability: ControllabilityReport | None = None
    factor_names: list | None = None

    def to_json(self) -> dict:
        out: dict = {"ndcg": self.ndcg}
        if self.mig_score is not None:
            out["mig"] = self.mig_score
        if self.mig_report is not None:
            out["mig_per_factor"] = self.mig_report.gaps.tolist()
        if self.controllability is not None:
            agg = self.controllability.aggregate()
            out["controllability"] = {m: agg.get(m, {"mean": None, "se": None, "n_users": 0})
                                      for m in CTRL_METRICS}
            per_factor = self.controllability.per_factor()
            out["per_factor"] = {}
            for f, block in sorted(per_factor.items()):
                name = self.factor_names[f] if self.factor_names else str(f)
                out["per_factor"][name] = {m: {"mean": v[0], "se": v[1], "n": v[2]}
                                           for m, v in block.items()}
        return out
