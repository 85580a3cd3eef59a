"""Fine-tuning heads, evaluation metrics, retrieval and the coarse-to-fine screening pipeline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .batch import Sample, collate, tokenize
from .model import BitConfig, affinity_head, classify_logit, forward_encode
from .molgraph import DatasetEntry, GenConfig, synth_generate
from .numcore import DTYPE, OptState, ParamStore, adamw_step, clip_grad_norm, lr_at_step, value_and_grad
from .pretrain import TrainState

DEFAULT_TEMPERATURE = 0.07
DEFAULT_DECOYS = 64
# guards ceil() against alpha*n landing a hair above an integer (0.07 * 100 = 7.000000000000001)
_CEIL_SLACK = 1e-9


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class RegressionMetrics:
    rmse: float
    mae: float
    r: float | None
    sd: float | None
    error: str | None = None  # why r/sd are undefined, when they are

    def to_json(self) -> dict:
        return asdict(self)


def regression_metrics(pred, y) -> RegressionMetrics:
    """RMSE, MAE, Pearson R and SD of y around the least-squares line y ~ a + b * pred."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(pred) != len(y) or len(pred) == 0:
        raise ValueError(f"need equal non-zero lengths, got {len(pred)} and {len(y)}")
    diff = pred - y
    rmse = float(np.sqrt(np.mean(diff * diff)))
    mae = float(np.mean(np.abs(diff)))
    dp = pred - pred.mean()
    dy = y - y.mean()
    sxx = float(np.sum(dp * dp))
    syy = float(np.sum(dy * dy))
    if sxx == 0.0:
        return RegressionMetrics(rmse, mae, None, None, "constant predictions")
    sxy = float(np.sum(dp * dy))
    r = None if syy == 0.0 else max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    error = None if r is not None else "constant labels"
    if len(y) < 3:
        return RegressionMetrics(rmse, mae, r, None, "sd needs at least 3 points")
    b = sxy / sxx
    a = y.mean() - b * pred.mean()
    resid = y - (a + b * pred)
    sd = float(np.sqrt(np.sum(resid * resid) / (len(y) - 1)))
    return RegressionMetrics(rmse, mae, r, sd, error)


def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    lab = np.asarray(labels).astype(bool).ravel()
    if len(s) != len(lab):
        raise ValueError("scores and labels differ in length")
    return s, lab


def auc_roc(scores, labels) -> float:
    """P(random active outscores random decoy), ties counted 1/2."""
    s, lab = _binary(scores, labels)
    pos, neg = s[lab], np.sort(s[~lab])
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc_roc needs both classes")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    # twice the Mann-Whitney U, kept integral so the result is exact
    twice_u = int(np.sum(2 * below + (upto - below)))
    return twice_u / (2 * len(pos) * len(neg))


def ranking(scores) -> np.ndarray:
    """Indices by descending score; ties keep input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def top_count(alpha: float, n: int) -> int:
    return max(1, math.ceil(alpha * n - _CEIL_SLACK))


def enrichment_factor(scores, labels, alpha: float) -> float:
    """EF_alpha = binders in the top ceil(alpha*n) / (total binders * alpha)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    s, lab = _binary(scores, labels)
    total = int(lab.sum())
    if total == 0:
        raise ValueError("enrichment_factor needs at least one binder")
    top = ranking(s)[:top_count(alpha, len(s))]
    return int(lab[top].sum()) / (total * alpha)


def roc_enrichment(scores, labels, fpr: float) -> float:
    """RE = TP * n / (P * FP) at the first cut where FP reaches ceil(fpr * negatives)."""
    if not 0 < fpr < 1:
        raise ValueError("fpr must lie in (0, 1)")
    s, lab = _binary(scores, labels)
    n_pos = int(lab.sum())
    n_neg = len(lab) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_enrichment needs both classes")
    target = top_count(fpr, n_neg)
    ordered = lab[ranking(s)]
    fp = np.cumsum(~ordered)
    cut = int(np.searchsorted(fp, target, side="left"))
    tp = int(ordered[:cut + 1].sum())
    return tp * len(lab) / (n_pos * target)


@dataclass
class ScreeningMetrics:
    auc: float
    ef: dict[float, float] = field(default_factory=dict)
    re: dict[float, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"auc": self.auc, "ef": {str(k): v for k, v in self.ef.items()},
                "re": {str(k): v for k, v in self.re.items()}}


def screening_metrics(scores, labels, ef_fractions=(0.005, 0.01, 0.02, 0.05),
                      re_fractions=(0.005, 0.01, 0.02, 0.05)) -> ScreeningMetrics:
    return ScreeningMetrics(
        auc_roc(scores, labels),
        {a: enrichment_factor(scores, labels, a) for a in ef_fractions},
        {x: roc_enrichment(scores, labels, x) for x in re_fractions},
    )


# ---------------------------------------------------------------------------
# Contrastive loss
# ---------------------------------------------------------------------------

def infonce_from_scores(s_pos: torch.Tensor, s_decoys: torch.Tensor,
                        temperature: float = DEFAULT_TEMPERATURE) -> torch.Tensor:
    """-log softmax of the positive among {positive} + decoys; batched over leading dims."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if s_decoys.shape[-1] < 1:
        raise ValueError("need at least one decoy")
    logits = torch.cat([s_pos[..., None], s_decoys], -1) / temperature
    z = logits - logits.amax(-1, keepdim=True).detach()
    return torch.log(torch.exp(z).sum(-1)) - z[..., 0]


def infonce_loss(pocket, positive, decoys, temperature: float = DEFAULT_TEMPERATURE):
    """InfoNCE for one pocket vector (d,), one active (d,) and decoys (k, d)."""
    as_numpy = not isinstance(pocket, torch.Tensor)
    p, a, d = (torch.as_tensor(np.asarray(x, dtype=np.float64)) if as_numpy else x
               for x in (pocket, positive, decoys))
    if not (p.shape == a.shape and d.shape[-1] == p.shape[-1]):
        raise ValueError("vector lengths differ")
    loss = infonce_from_scores((p * a).sum(-1), d @ p, temperature)
    return float(loss) if as_numpy else loss


def score_matrix(a, b) -> np.ndarray:
    """Dot products between rows of a and rows of b.

    Computed elementwise so score_matrix(b, a) is bitwise the transpose.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((len(a), len(b)))
    chunk = max(1, 2_000_000 // max(1, len(b) * a.shape[1]))
    for i in range(0, len(a), chunk):
        out[i:i + chunk] = (a[i:i + chunk, None, :] * b[None, :, :]).sum(-1)
    return out


# ---------------------------------------------------------------------------
# Fine-tuning plumbing
# ---------------------------------------------------------------------------

@dataclass
class FinetuneConfig:
    epochs: int = 30
    batch_size: int = 16
    peak_lr: float = 1e-3
    warmup_ratio: float = 0.06
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    val_fraction: float = 0.25
    n_decoys: int = DEFAULT_DECOYS
    temperature: float = DEFAULT_TEMPERATURE
    shuffle_labels: bool = False
    seed: int = 0


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random train/validation split; both sides non-empty."""
    if n < 2:
        raise ValueError("need at least 2 items to split")
    perm = np.random.default_rng(np.random.SeedSequence([seed, 101])).permutation(n)
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _schedule(n_train: int, fcfg: FinetuneConfig) -> tuple[int, int, int]:
    per_epoch = math.ceil(n_train / fcfg.batch_size)
    total = max(2, per_epoch * fcfg.epochs)
    warmup = min(total - 1, int(round(fcfg.warmup_ratio * total)))
    return per_epoch, total, warmup


def train_loop(state: TrainState, n_train: int, loss_on, fcfg: FinetuneConfig) -> list[float]:
    """Minibatch AdamW over index batches; loss_on(params, idx, rng) returns a scalar tensor.

    Returns the mean training loss of every epoch.
    """
    if n_train == 0:
        raise ValueError("empty training split")
    per_epoch, total, warmup = _schedule(n_train, fcfg)
    history = []
    step = 0
    for epoch in range(fcfg.epochs):
        perm = np.random.default_rng(np.random.SeedSequence([fcfg.seed, epoch, 202])).permutation(n_train)
        losses = []
        for k in range(per_epoch):
            idx = perm[k * fcfg.batch_size:(k + 1) * fcfg.batch_size]
            rng = np.random.default_rng(np.random.SeedSequence([fcfg.seed, step, 303]))
            loss, grads = value_and_grad(lambda p: loss_on(p, idx, rng), state.params)
            clip_grad_norm(grads, fcfg.clip_norm)
            lr = lr_at_step(step + 1, warmup, total, fcfg.peak_lr)
            adamw_step(state.params, grads, state.opt, lr, fcfg.betas, fcfg.eps, fcfg.weight_decay)
            losses.append(float(loss))
            step += 1
        history.append(float(np.mean(losses)))
    state.step += step
    return history


def fresh_finetune_state(state: TrainState) -> TrainState:
    """Copy parameters, start a new optimizer; the backbone stays trainable."""
    return TrainState(state.params.clone(), OptState(), 0, state.seed, state.config_digest)


def encode_samples(samples: list[Sample], params: ParamStore, cfg: BitConfig, mode: str,
                   batch_size: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            vec, _ = forward_encode(collate(samples[i:i + batch_size], d_max=cfg.d_max), params, cfg, mode)
            out.append(vec.numpy())
    return np.concatenate(out)


def _fmt(samples: list[Sample], has2d: bool, has3d: bool) -> list[Sample]:
    return [s.with_format(has2d, has3d) for s in samples]


# ---------------------------------------------------------------------------
# Affinity regression (fusion mode)
# ---------------------------------------------------------------------------

def affinity_dataset(seed: int, n: int, gen: GenConfig | None = None) -> list[DatasetEntry]:
    base = gen or GenConfig()
    cfg = GenConfig(**{**asdict(base), "n_molecules": 0, "n_pockets": 0, "n_complexes": n, "n_families": 0})
    return synth_generate(seed, cfg)


def _affinity_predict(params: ParamStore, samples: list[Sample], cfg: BitConfig) -> torch.Tensor:
    vec, _ = forward_encode(collate(samples, d_max=cfg.d_max), params, cfg, "fusion")
    return affinity_head(vec, params) * params["head.affinity.label_sd"] + params["head.affinity.label_mu"]


def predict_affinity(params: ParamStore, samples: list[Sample], cfg: BitConfig, batch_size: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            out.append(_affinity_predict(params, samples[i:i + batch_size], cfg).numpy())
    return np.concatenate(out)


def set_label_scale(params: ParamStore, y: np.ndarray) -> None:
    """Store the training-label mean/std as frozen parameters so predictions are in pK units."""
    sd = float(np.std(y)) or 1.0
    params["head.affinity.label_mu"] = torch.tensor(float(np.mean(y)), dtype=DTYPE)
    params["head.affinity.label_sd"] = torch.tensor(sd, dtype=DTYPE)
    params.freeze("head.affinity.label_mu", "head.affinity.label_sd")


def affinity_finetune(state: TrainState, entries: list[DatasetEntry], cfg: BitConfig, fcfg: FinetuneConfig,
                      train: bool = True) -> tuple[TrainState, RegressionMetrics, list[float]]:
    """MSE fine-tuning of the fusion encoder plus regression head; metrics on the held-out split."""
    entries = [e for e in entries if e.kind == "complex" and e.payload.affinity is not None]
    if len(entries) < 2:
        raise ValueError("affinity fine-tuning needs labelled complexes")
    samples = _fmt([tokenize(e, cfg.d_max, cfg.degree_cap) for e in entries], True, True)
    y = np.array([e.payload.affinity for e in entries])
    tr, va = split_indices(len(samples), fcfg.val_fraction, fcfg.seed)
    y_train = y[tr].copy()
    if fcfg.shuffle_labels:
        np.random.default_rng(np.random.SeedSequence([fcfg.seed, 404])).shuffle(y_train)
    state = fresh_finetune_state(state)
    set_label_scale(state.params, y_train)
    target = torch.from_numpy(y_train)
    train_samples = [samples[i] for i in tr]

    def loss_on(p, idx, rng):
        pred = _affinity_predict(p, [train_samples[i] for i in idx], cfg)
        err = (pred - target[idx]) / p["head.affinity.label_sd"]
        return (err * err).mean()

    history = train_loop(state, len(tr), loss_on, fcfg) if train else []
    pred = predict_affinity(state.params, [samples[i] for i in va], cfg)
    return state, regression_metrics(pred, y[va]), history


# ---------------------------------------------------------------------------
# Unimodal classification
# ---------------------------------------------------------------------------

def classification_dataset(seed: int, n: int, gen: GenConfig | None = None) -> list[DatasetEntry]:
    base = gen or GenConfig()
    cfg = GenConfig(**{**asdict(base), "n_molecules": n, "n_pockets": 0, "n_complexes": 0})
    return synth_generate(seed, cfg)


def _classify_logits(params: ParamStore, samples: list[Sample], cfg: BitConfig) -> torch.Tensor:
    vec, _ = forward_encode(collate(samples, d_max=cfg.d_max), params, cfg, "unimodal")
    return classify_logit(vec, params)


def predict_proba(params: ParamStore, samples: list[Sample], cfg: BitConfig, batch_size: int = 64) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            out.append(torch.sigmoid(_classify_logits(params, samples[i:i + batch_size], cfg)).numpy())
    return np.concatenate(out)


def classify_finetune(state: TrainState, entries: list[DatasetEntry], cfg: BitConfig, fcfg: FinetuneConfig,
                      use_3d: bool = False, train: bool = True) -> tuple[TrainState, float, list[float]]:
    """Binary cross-entropy on the [M_VNode] vector; returns held-out ROC-AUC."""
    entries = [e for e in entries if e.kind == "molecule" and e.active is not None]
    labels = np.array([bool(e.active) for e in entries])
    samples = [tokenize(e, cfg.d_max, cfg.degree_cap) for e in entries]
    samples = _fmt(samples, True, bool(use_3d))
    tr, va = split_indices(len(samples), fcfg.val_fraction, fcfg.seed)
    y_train = labels[tr].copy()
    if len(set(y_train.tolist())) < 2:
        raise ValueError("training split holds a single class")
    if fcfg.shuffle_labels:
        np.random.default_rng(np.random.SeedSequence([fcfg.seed, 404])).shuffle(y_train)
    state = fresh_finetune_state(state)
    target = torch.from_numpy(y_train.astype(np.float64))
    train_samples = [samples[i] for i in tr]

    def loss_on(p, idx, rng):
        z = _classify_logits(p, [train_samples[i] for i in idx], cfg)
        t = target[idx]
        # numerically stable binary cross-entropy on logits
        return (torch.clamp(z, min=0) - z * t + torch.log1p(torch.exp(-z.abs()))).mean()

    history = train_loop(state, len(tr), loss_on, fcfg) if train else []
    prob = predict_proba(state.params, [samples[i] for i in va], cfg)
    return state, auc_roc(prob, labels[va]), history


# ---------------------------------------------------------------------------
# Dual-encoder retrieval
# ---------------------------------------------------------------------------

@dataclass
class RetrievalData:
    pockets: list[DatasetEntry]
    ligands: list[DatasetEntry]

    @property
    def pocket_family(self) -> np.ndarray:
        return np.array([e.payload.family for e in self.pockets])

    @property
    def ligand_family(self) -> np.ndarray:
        return np.array([e.payload.family for e in self.ligands])


def retrieval_dataset(seed: int, n_pockets: int, n_ligands: int, n_families: int = 4,
                      gen: GenConfig | None = None) -> RetrievalData:
    """Pockets and ligands with planted families; a pair binds iff families match."""
    base = gen or GenConfig()
    cfg = GenConfig(**{**asdict(base), "n_molecules": n_ligands, "n_pockets": n_pockets, "n_complexes": 0,
                       "n_families": n_families})
    entries = synth_generate(seed, cfg)
    return RetrievalData([e for e in entries if e.kind == "pocket"], [e for e in entries if e.kind == "molecule"])


def encode_pockets(params: ParamStore, entries: list[DatasetEntry], cfg: BitConfig) -> np.ndarray:
    samples = _fmt([tokenize(e, cfg.d_max, cfg.degree_cap) for e in entries], True, True)
    return encode_samples(samples, params, cfg, "dual_pocket")


def encode_ligands(params: ParamStore, entries: list[DatasetEntry], cfg: BitConfig) -> np.ndarray:
    samples = _fmt([tokenize(e, cfg.d_max, cfg.degree_cap) for e in entries], True, False)
    return encode_samples(samples, params, cfg, "dual_ligand")


def planted_pools(pocket_family: np.ndarray, ligand_family: np.ndarray, n_actives: int, pool_size: int,
                  seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per pocket: ligand indices and labels for a pool of n_actives binders among pool_size."""
    pools = []
    for p, fam in enumerate(pocket_family):
        rng = np.random.default_rng(np.random.SeedSequence([seed, p, 505]))
        act = np.flatnonzero(ligand_family == fam)
        dec = np.flatnonzero(ligand_family != fam)
        n_dec = pool_size - n_actives
        if len(act) < n_actives or len(dec) < n_dec:
            raise ValueError(f"not enough ligands for a pool of {n_actives}+{n_dec}")
        idx = np.concatenate([rng.choice(act, n_actives, replace=False), rng.choice(dec, n_dec, replace=False)])
        lab = np.zeros(pool_size, dtype=bool)
        lab[:n_actives] = True
        order = rng.permutation(pool_size)
        pools.append((idx[order], lab[order]))
    return pools


def evaluate_retrieval(params: ParamStore, data: RetrievalData, cfg: BitConfig, n_actives: int = 5,
                       pool_size: int = 500, seed: int = 0) -> dict:
    """Mean per-pocket AUC, EF and RE over planted pools with base rate n_actives / pool_size."""
    pv = encode_pockets(params, data.pockets, cfg)
    lv = encode_ligands(params, data.ligands, cfg)
    scores = score_matrix(pv, lv)
    per = []
    for p, (idx, lab) in enumerate(planted_pools(data.pocket_family, data.ligand_family, n_actives,
                                                 pool_size, seed)):
        per.append(screening_metrics(scores[p, idx], lab, (0.01, 0.05), (0.005, 0.01, 0.02, 0.05)))
    return {
        "auc": float(np.mean([m.auc for m in per])),
        "ef": {str(a): float(np.mean([m.ef[a] for m in per])) for a in per[0].ef},
        "re": {str(x): float(np.mean([m.re[x] for m in per])) for x in per[0].re},
        "base_rate": n_actives / pool_size,
        "pockets": len(per),
    }


def retrieval_finetune(state: TrainState, train: RetrievalData, cfg: BitConfig, fcfg: FinetuneConfig,
                       do_train: bool = True) -> tuple[TrainState, list[float]]:
    """InfoNCE over (pocket, same-family ligand) pairs with n_decoys other-family decoys each."""
    pfam = train.pocket_family
    lfam = train.ligand_family.copy()
    if fcfg.shuffle_labels:
        np.random.default_rng(np.random.SeedSequence([fcfg.seed, 404])).shuffle(lfam)
    pockets = _fmt([tokenize(e, cfg.d_max, cfg.degree_cap) for e in train.pockets], True, True)
    ligands = _fmt([tokenize(e, cfg.d_max, cfg.degree_cap) for e in train.ligands], True, False)
    state = fresh_finetune_state(state)

    def loss_on(p, idx, rng):
        rows = []
        for i in idx:
            same = np.flatnonzero(lfam == pfam[i])
            other = np.flatnonzero(lfam != pfam[i])
            if len(same) == 0 or len(other) < fcfg.n_decoys:
                raise ValueError("not enough ligands to form positive/decoy sets")
            rows.append(np.concatenate([[rng.choice(same)], rng.choice(other, fcfg.n_decoys, replace=False)]))
        rows = np.stack(rows)
        uniq, inv = np.unique(rows, return_inverse=True)
        pv, _ = forward_encode(collate([pockets[i] for i in idx], d_max=cfg.d_max), p, cfg, "dual_pocket")
        lv, _ = forward_encode(collate([ligands[j] for j in uniq], d_max=cfg.d_max), p, cfg, "dual_ligand")
        cand = lv[torch.from_numpy(inv.reshape(rows.shape))]   # (B, 1 + decoys, d)
        s = (cand * pv[:, None, :]).sum(-1)
        return infonce_from_scores(s[:, 0], s[:, 1:], fcfg.temperature).mean()

    history = train_loop(state, len(pockets), loss_on, fcfg) if do_train else []
    return state, history


# ---------------------------------------------------------------------------
# Coarse-to-fine screening
# ---------------------------------------------------------------------------

def maxmin_select(vectors: np.ndarray, m: int) -> list[int]:
    """Greedy max-min diversity over rows already in rank order; ties go to the better rank."""
    n = len(vectors)
    if not 1 <= m <= n:
        raise ValueError(f"cannot pick {m} of {n}")
    chosen = [0]
    d = np.sqrt(((vectors - vectors[0]) ** 2).sum(-1))
    for _ in range(m - 1):
        d_masked = d.copy()
        d_masked[chosen] = -np.inf
        nxt = int(np.argmax(d_masked))  # argmax returns the first (best-ranked) maximum
        chosen.append(nxt)
        d = np.minimum(d, np.sqrt(((vectors - vectors[nxt]) ** 2).sum(-1)))
    return chosen


def pipeline_screen(params: ParamStore, cfg: BitConfig, pockets: list[DatasetEntry], library: list[DatasetEntry],
                    k1: int, m: int, seed: int = 0, classifier: ParamStore | None = None) -> list[dict]:
    """Dual-encoder recall, classifier re-ranking, then max-min diversity.

    Stage 1 keeps the union of each pocket's top-k1 ligands; stage 2 orders them
    by classifier probability and keeps k1; stage 3 picks m diverse ligands and
    reports them in stage-2 order. ``seed`` is recorded only: every stage is
    deterministic with stable tie-breaking by library index.
    """
    if not (k1 >= m >= 1):
        raise ValueError(f"need k1 >= m >= 1, got k1={k1}, m={m}")
    if not library:
        raise ValueError("empty library")
    if not pockets:
        raise ValueError("no pockets")
    clf = classifier if classifier is not None else params
    lv = encode_ligands(params, library, cfg)
    scores = score_matrix(encode_pockets(params, pockets, cfg), lv)
    keep = set()
    for row in scores:
        keep.update(ranking(row)[:min(k1, len(library))].tolist())
    survivors = np.array(sorted(keep))
    best = scores[:, survivors].max(0)
    samples = _fmt([tokenize(library[i], cfg.d_max, cfg.degree_cap) for i in survivors], True, False)
    prob = predict_proba(clf, samples, cfg)
    order = np.lexsort((np.arange(len(survivors)), -best, -prob))[:k1]
    m = min(m, len(order))
    picks = sorted(maxmin_select(lv[survivors[order]], m))
    out = []
    for rank, k in enumerate(picks, start=1):
        j = order[k]
        out.append({"id": library[survivors[j]].id, "stage1_score": float(best[j]),
                    "stage2_prob": float(prob[j]), "rank": rank})
    return out
