"""Quantitative evaluation: rater-agreement statistics with bootstrap standard
errors, judge-derived retrieval metrics, class-agnostic detection evaluation,
and the exact-product Recall@1 protocol.

Degenerate-input conventions are explicit because bootstrap resamples hit them
routinely: weighted kappa on a constant pair of raters is 1.0 on full
agreement else 0.0; Spearman with a zero-variance rank vector is NaN (excluded
from reports with a note); MCC with a zero denominator factor is 0.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detect import BoundingBox, Detection, iou


# --- rating pairs ----------------------------------------------------------


@dataclass(frozen=True)
class RatingPairSet:
    """Aligned (human, model) ratings on a shared 1..scale ordinal scale."""

    human: np.ndarray
    model: np.ndarray
    scale: int

    def __post_init__(self):
        h = np.asarray(self.human, dtype=np.int64)
        m = np.asarray(self.model, dtype=np.int64)
        object.__setattr__(self, "human", h)
        object.__setattr__(self, "model", m)
        if h.shape != m.shape or h.ndim != 1 or h.size == 0:
            raise ValueError("need two aligned non-empty rating vectors")
        for name, values in (("human", h), ("model", m)):
            if values.min() < 1 or values.max() > self.scale:
                raise ValueError(f"{name} ratings outside [1, {self.scale}]")

    def __len__(self):
        return len(self.human)

    def take(self, indices) -> "RatingPairSet":
        return RatingPairSet(self.human[indices], self.model[indices], self.scale)


@dataclass(frozen=True)
class BinarizationRule:
    """Maps ordinal ratings to a binary decision: relevance passes at >= threshold,
    similarity passes at <= threshold (similarity scale is inverted: 1 is best)."""

    task: str  # "relevance" | "similarity"
    threshold: int = 2

    def __post_init__(self):
        if self.task not in ("relevance", "similarity"):
            raise ValueError(f"unknown binarization task {self.task!r}")

    def positive(self, value: int) -> bool:
        if self.task == "relevance":
            return value >= self.threshold
        return value <= self.threshold


IS_RELEVANT = BinarizationRule("relevance", 2)
IS_SIMILAR = BinarizationRule("similarity", 2)


# --- agreement statistics ----------------------------------------------------


def quadratic_weighted_kappa(pairs: RatingPairSet) -> float:
    """1 - (weighted observed disagreement / weighted expected disagreement)
    with quadratic weights (i-j)^2 / (K-1)^2."""
    k = pairs.scale
    n = len(pairs)
    observed = np.zeros((k, k), dtype=np.float64)
    for h, m in zip(pairs.human, pairs.model):
        observed[h - 1, m - 1] += 1.0
    observed /= n
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    idx = np.arange(k, dtype=np.float64)
    diffs = (idx[:, None] - idx[None, :]) ** 2
    weights = diffs / ((k - 1) ** 2) if k > 1 else diffs
    expected_disagreement = float((weights * expected).sum())
    if expected_disagreement == 0.0:
        return 1.0 if bool(np.all(pairs.human == pairs.model)) else 0.0
    return 1.0 - float((weights * observed).sum()) / expected_disagreement


def kappa_is_degenerate(pairs: RatingPairSet) -> bool:
    """True when expected disagreement vanishes (both raters constant and equal)."""
    return bool(np.all(pairs.human == pairs.human[0])
                and np.all(pairs.model == pairs.model[0])
                and pairs.human[0] == pairs.model[0]) or pairs.scale == 1


def average_ranks(values: np.ndarray) -> np.ndarray:
    """Competition average ranks (1-based); ties share the mean of their ranks."""
    values = np.asarray(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(pairs: RatingPairSet) -> float:
    """Pearson correlation of average ranks; NaN when either rank vector is constant."""
    rh = average_ranks(pairs.human)
    rm = average_ranks(pairs.model)
    dh = rh - rh.mean()
    dm = rm - rm.mean()
    denom = math.sqrt(float((dh * dh).sum()) * float((dm * dm).sum()))
    if denom == 0.0:
        return float("nan")
    return float((dh * dm).sum()) / denom


def mae(pairs: RatingPairSet) -> float:
    return float(np.mean(np.abs(pairs.human - pairs.model)))


@dataclass(frozen=True)
class BinaryMetrics:
    f1: float
    mcc: float
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: bool = False


def binary_metrics(pairs: RatingPairSet, rule: BinarizationRule) -> BinaryMetrics:
    """F1 and Matthews correlation of the binarized ratings (human as reference)."""
    truth = np.array([rule.positive(v) for v in pairs.human])
    pred = np.array([rule.positive(v) for v in pairs.model])
    tp = int(np.sum(truth & pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    tn = int(np.sum(~truth & ~pred))
    degenerate = False
    if 2 * tp + fp + fn == 0:
        f1 = 0.0
        degenerate = True
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        mcc = 0.0
        degenerate = True
    else:
        mcc = (tp * tn - fp * fn) / math.sqrt(denom)
    return BinaryMetrics(float(f1), float(mcc), tp, fp, fn, tn, degenerate)


def bootstrap_se(statistic, pairs: RatingPairSet, B: int = 1000, seed: int = 0) -> float:
    """Standard deviation of `statistic` over B bootstrap resamples (fixed seed).
    NaN replicates (e.g. undefined Spearman) are dropped."""
    rng = np.random.default_rng(seed)
    n = len(pairs)
    values = np.empty(B, dtype=np.float64)
    for b in range(B):
        values[b] = statistic(pairs.take(rng.integers(0, n, size=n)))
    values = values[~np.isnan(values)]
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1))


AGREEMENT_METRICS = ("kappa_w", "spearman_rho", "mae", "f1", "mcc")


def agreement_report(pairs: RatingPairSet, rule: BinarizationRule,
                     B: int = 1000, seed: int = 0) -> dict:
    """One task row: each metric as {estimate, se}, with degeneracy notes."""
    stats = {
        "kappa_w": quadratic_weighted_kappa,
        "spearman_rho": spearman_rho,
        "mae": mae,
        "f1": lambda p: binary_metrics(p, rule).f1,
        "mcc": lambda p: binary_metrics(p, rule).mcc,
    }
    report: dict = {}
    notes: list[str] = []
    for name, fn in stats.items():
        estimate = fn(pairs)
        se = bootstrap_se(fn, pairs, B=B, seed=seed)
        report[name] = {"estimate": estimate, "se": se}
    if kappa_is_degenerate(pairs):
        notes.append("kappa_w computed on a degenerate (constant) rating set")
    if math.isnan(report["spearman_rho"]["estimate"]):
        notes.append("spearman_rho undefined: zero variance in a rank vector")
    if binary_metrics(pairs, rule).degenerate:
        notes.append("binary metrics degenerate: a confusion-matrix factor is zero")
    if notes:
        report["notes"] = notes
    return report


# --- judged retrieval metrics ------------------------------------------------


@dataclass(frozen=True)
class RatedResult:
    """One retrieved result's judge scores, in rank order within its query."""

    relevance: int
    similarity: int


def _check_queries(queries: list[list[RatedResult]]):
    if not queries:
        raise ValueError("no judged queries supplied")


def precision_at_k(queries: list[list[RatedResult]], k: int, mode: str,
                   relevance_rule: BinarizationRule = IS_RELEVANT,
                   similarity_rule: BinarizationRule = IS_SIMILAR) -> float:
    """Macro-averaged fraction of top-k results passing the binarization; queries
    with fewer than k results use their actual length as the denominator."""
    _check_queries(queries)
    if mode not in ("relevance", "similarity"):
        raise ValueError(f"unknown mode {mode!r}")
    rule = relevance_rule if mode == "relevance" else similarity_rule
    per_query = []
    for results in queries:
        top = results[:k]
        if not top:
            per_query.append(0.0)
            continue
        values = [r.relevance if mode == "relevance" else r.similarity for r in top]
        per_query.append(sum(rule.positive(v) for v in values) / len(top))
    return float(np.mean(per_query))


def success_at_k(queries: list[list[RatedResult]], k: int,
                 relevance_rule: BinarizationRule = IS_RELEVANT,
                 similarity_rule: BinarizationRule = IS_SIMILAR) -> float:
    """Fraction of queries with at least one top-k result that is both relevant
    and visually similar."""
    _check_queries(queries)
    hits = 0
    for results in queries:
        if any(relevance_rule.positive(r.relevance) and similarity_rule.positive(r.similarity)
               for r in results[:k]):
            hits += 1
    return hits / len(queries)


def similarity_gain(similarity: int) -> int:
    """Rating 1 (extremely similar) earns gain 4; rating 5 earns 0."""
    return 5 - similarity


def ndcg_at_k(queries: list[list[RatedResult]], k: int) -> float:
    """DCG over 2^gain - 1 with log2(rank+1) discounts, normalized per query by
    the ideal ordering of its own top-k window; all-zero-gain queries count 1.0."""
    _check_queries(queries)
    per_query = []
    for results in queries:
        gains = [similarity_gain(r.similarity) for r in results[:k]]
        dcg = sum((2.0 ** g - 1.0) / math.log2(i + 2) for i, g in enumerate(gains))
        ideal = sum((2.0 ** g - 1.0) / math.log2(i + 2)
                    for i, g in enumerate(sorted(gains, reverse=True)))
        per_query.append(dcg / ideal if ideal > 0 else 1.0)
    return float(np.mean(per_query))


def retrieval_report(queries: list[list[RatedResult]], k_values: list[int],
                     relevance_rule: BinarizationRule = IS_RELEVANT,
                     similarity_rule: BinarizationRule = IS_SIMILAR) -> dict:
    """Table of rel_p / vs_p / success / ndcg per cutoff."""
    return {
        str(k): {
            "rel_p": precision_at_k(queries, k, "relevance", relevance_rule, similarity_rule),
            "vs_p": precision_at_k(queries, k, "similarity", relevance_rule, similarity_rule),
            "success": success_at_k(queries, k, relevance_rule, similarity_rule),
            "ndcg": ndcg_at_k(queries, k),
        }
        for k in k_values
    }


# --- class-agnostic detection evaluation -------------------------------------


@dataclass(frozen=True)
class ImageEval:
    """Ground truth and predictions for one image; labels are ignored."""

    ground_truth: list[BoundingBox]
    predictions: list[Detection]


@dataclass(frozen=True)
class DetectionEvalReport:
    map: float
    precision: float
    recall: float


def prominent_reduction(image: ImageEval) -> ImageEval:
    """Keep only the largest ground-truth box and the prediction with the best
    size-weighted confidence (confidence * box area)."""
    gt = [max(image.ground_truth, key=lambda b: b.area)] if image.ground_truth else []
    preds = image.predictions
    if preds:
        preds = [max(preds, key=lambda d: d.confidence * d.box.area)]
    return ImageEval(gt, preds)


def _match_image(image: ImageEval, iou_threshold: float) -> list[tuple[float, bool]]:
    """Greedy matching: predictions by confidence descending, each to the
    highest-IoU unmatched GT at or above the threshold. Returns (confidence,
    is_true_positive) per prediction."""
    order = sorted(range(len(image.predictions)),
                   key=lambda i: (-image.predictions[i].confidence, i))
    matched = [False] * len(image.ground_truth)
    outcomes = []
    for i in order:
        pred = image.predictions[i]
        best_iou, best_gt = 0.0, -1
        for g, gt_box in enumerate(image.ground_truth):
            if matched[g]:
                continue
            overlap = iou(pred.box, gt_box)
            if overlap > best_iou:
                best_iou, best_gt = overlap, g
        if best_gt >= 0 and best_iou >= iou_threshold:
            matched[best_gt] = True
            outcomes.append((pred.confidence, True))
        else:
            outcomes.append((pred.confidence, False))
    return outcomes


def average_precision(points: list[tuple[float, bool]], total_gt: int) -> float:
    """All-points interpolated area under the precision-recall curve from a
    global confidence sweep."""
    if total_gt == 0 or not points:
        return 0.0
    points = sorted(points, key=lambda p: -p[0])
    # one operating point per distinct confidence cutoff (tied scores enter together)
    recall, precision = [], []
    tp = fp = 0
    i = 0
    while i < len(points):
        j = i
        while j + 1 < len(points) and points[j + 1][0] == points[i][0]:
            j += 1
        for _, hit in points[i:j + 1]:
            tp += 1 if hit else 0
            fp += 0 if hit else 1
        recall.append(tp / total_gt)
        precision.append(tp / (tp + fp))
        i = j + 1
    envelope = np.maximum.accumulate(np.asarray(precision)[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, envelope):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def detection_eval(images: list[ImageEval], iou_threshold: float = 0.5,
                   confidence_threshold: float = 0.30,
                   setting: str = "all_objects") -> DetectionEvalReport:
    """mAP from a global confidence sweep plus precision/recall at the
    operating confidence threshold; class-agnostic throughout."""
    if setting not in ("all_objects", "prominent_object"):
        raise ValueError(f"unknown setting {setting!r}")
    if setting == "prominent_object":
        images = [prominent_reduction(img) for img in images]
    total_gt = sum(len(img.ground_truth) for img in images)
    sweep: list[tuple[float, bool]] = []
    for img in images:
        sweep.extend(_match_image(img, iou_threshold))
    ap = average_precision(sweep, total_gt)

    tp = fp = 0
    for img in images:
        kept = [d for d in img.predictions if d.confidence >= confidence_threshold]
        for _, hit in _match_image(ImageEval(img.ground_truth, kept), iou_threshold):
            if hit:
                tp += 1
            else:
                fp += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / total_gt if total_gt else 0.0
    return DetectionEvalReport(map=ap, precision=precision, recall=recall)


# --- exact product retrieval ---------------------------------------------------


@dataclass(frozen=True)
class RecallAtOneResult:
    recall: float
    evaluated: int
    excluded: int


def exact_product_recall_at_1(queries: list[tuple[np.ndarray, str]], index) -> RecallAtOneResult:
    """Fraction of queries whose top-1 exact hit carries the positive product id.
    Queries whose positive product is absent from the index are excluded."""
    known_products = {item.product_id for item in index.items()}
    hits = evaluated = excluded = 0
    for vector, positive_product in queries:
        if positive_product not in known_products:
            excluded += 1
            continue
        evaluated += 1
        top = index.search_exact(vector, k=1)
        if top and top[0].product_id == positive_product:
            hits += 1
    recall = hits / evaluated if evaluated else 0.0
    return RecallAtOneResult(recall=recall, evaluated=evaluated, excluded=excluded)
