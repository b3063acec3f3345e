"""Held-out evaluation: ranked (bag, relation) predictions, PR curve, P@N."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .bag_model import TransSA, classify
from .corpus import Bag, gold_facts, subsample_bag


class LabelSetMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    key: tuple  # entity pair
    relation: int  # never NA (0)
    score: float


@dataclass
class PRCurve:
    precision: np.ndarray
    recall: np.ndarray
    scores: np.ndarray
    hits: np.ndarray  # 0/1 per rank
    total_facts: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.precision.tolist(), self.recall.tolist()))

    def precision_at_recall(self, r: float) -> float:
        """Best precision among prefixes reaching recall >= r (nan if never reached)."""
        ok = self.recall >= r
        return float(self.precision[ok].max()) if ok.any() else float("nan")


def predict_bags(model: TransSA, bags: Sequence[Bag], n_labels: int | None = None) -> list[Prediction]:
    """One prediction per (bag, non-NA relation), evaluation mode."""
    if n_labels is not None and n_labels != model.n_labels:
        raise LabelSetMismatch(f"model has {model.n_labels} labels, test set has {n_labels}")
    probs = model.predict_proba(list(bags))
    out = []
    for bag, p in zip(bags, probs):
        out.extend(Prediction(bag.pair, k, float(p[k])) for k in range(1, len(p)))
    return out


def rank(predictions: Sequence[Prediction]) -> list[Prediction]:
    """Score descending; ties by bag key then relation index."""
    return sorted(predictions, key=lambda q: (-q.score, q.key, q.relation))


def pr_curve(predictions: Sequence[Prediction], facts: set) -> PRCurve:
    if not facts:
        raise ValueError("pr_curve needs at least one gold fact")
    if not predictions:
        raise ValueError("pr_curve needs at least one prediction")
    ranked = rank(predictions)
    hits = np.fromiter(((q.key, q.relation) in facts for q in ranked), dtype=np.int64, count=len(ranked))
    cum = np.cumsum(hits)
    t = np.arange(1, len(ranked) + 1)
    return PRCurve(cum / t, cum / len(facts), np.array([q.score for q in ranked]), hits, len(facts))


def precision_at_n(predictions: Sequence[Prediction], facts: set, n: int) -> float:
    """Percentage of hits among the top ``n`` ranked predictions."""
    if n < 1 or n > len(predictions):
        raise ValueError(f"P@{n} requested but only {len(predictions)} predictions available")
    top = rank(predictions)[:n]
    return 100.0 * sum((q.key, q.relation) in facts for q in top) / n


def bag_accuracy(model: TransSA, bags: Sequence[Bag]) -> float:
    probs = model.predict_proba(list(bags))
    return float(np.mean(probs.argmax(axis=1) == np.array([b.label for b in bags])))


@dataclass
class SettingsReport:
    pan: dict[str, dict[int, float]]  # setting -> N -> percent
    curve: PRCurve
    means: dict[str, float]

    def lines(self) -> list[str]:
        out = []
        for setting, row in self.pan.items():
            for n, v in row.items():
                out.append(f"{setting}\t{n}\t{v:.2f}")
            out.append(f"{setting}\tmean\t{self.means[setting]:.2f}")
        return out


def evaluate_settings(
    model: TransSA,
    bags: Sequence[Bag],
    settings: Iterable[str] = ("one", "two", "all"),
    ns: Sequence[int] = (100, 200, 300),
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> SettingsReport:
    """P@N under One/Two/All on bags with >= 2 sentences; PR curve on the full set."""
    if rng is None:
        rng = np.random.default_rng(seed)
    facts = gold_facts(bags)
    curve = pr_curve(predict_bags(model, bags), facts)
    multi = [b for b in bags if b.n >= 2]
    if not multi:
        raise ValueError("no test bag has two or more sentences")
    pan, means = {}, {}
    for setting in settings:
        setting = setting.lower()
        sub = [subsample_bag(b, setting, rng) for b in multi]
        preds = predict_bags(model, sub)
        pan[setting] = {n: precision_at_n(preds, facts, n) for n in ns}
        means[setting] = float(np.mean(list(pan[setting].values())))
    return SettingsReport(pan, curve, means)


# ---------------------------------------------------------------- report files


def write_curve(curve: PRCurve, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# total_facts={curve.total_facts}\n")
        for i in range(len(curve.scores)):
            fh.write(f"{i + 1}\t{curve.scores[i]:.10g}\t{curve.hits[i]}\t"
                     f"{curve.precision[i]:.10g}\t{curve.recall[i]:.10g}\n")


def write_curve_sampled(curve: PRCurve, path: str | Path, points: int = 1000) -> None:
    n = len(curve.scores)
    idx = np.unique(np.linspace(0, n - 1, num=min(points, n)).round().astype(int))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# total_facts={curve.total_facts}\n")
        for i in idx:
            fh.write(f"{i + 1}\t{curve.precision[i]:.10g}\t{curve.recall[i]:.10g}\n")


def write_pan_report(report: SettingsReport, path: str | Path) -> None:
    Path(path).write_text("".join(l + "\n" for l in report.lines()), encoding="utf-8")


def read_curve(path: str | Path) -> PRCurve:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    total = int(lines[0].split("=", 1)[1])
    rows = np.array([[float(x) for x in l.split("\t")] for l in lines[1:]]).reshape(-1, 5)
    return PRCurve(rows[:, 3], rows[:, 4], rows[:, 1], rows[:, 2].astype(np.int64), total)


# ---------------------------------------------------------------- attention export


@dataclass
class BagInspection:
    alpha: np.ndarray  # n: alpha for the inspected relation
    sentence_rank: np.ndarray  # n: rank (1 = best) of that relation in each sentence's own softmax
    relation: int
    bag_probs: np.ndarray
    head_weights: list[np.ndarray]  # per sentence: h x m x m over real tokens (first block)


def inspect_bag(model: TransSA, bag: Bag, relation: int | None = None) -> BagInspection:
    with T.no_grad():
        out = model.forward([bag], return_attention=True)
    probs = classify(out.scores)[0]
    if relation is not None:
        rel = int(relation)
    elif bag.label != 0:
        rel = int(bag.label)
    else:
        rel = int(np.argmax(probs))  # unlabeled or NA bag: inspect the top relation
    alpha = out.alpha.data[0, :bag.n, rel]
    u = out.sentence_scores.data[out.bag_index[0, :bag.n]]
    sent_probs = classify(u)
    ranks = 1 + (sent_probs > sent_probs[:, [rel]]).sum(axis=1)
    weights = out.attention[0].data
    heads = [weights[i, :, :s.true_len, :s.true_len].copy() for i, s in enumerate(bag.sentences)]
    return BagInspection(alpha.copy(), ranks, rel, probs, heads)


def write_inspection(ins: BagInspection, path: str | Path, tokens: Sequence[Sequence[str]] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# relation={ins.relation}\tbag_probability={ins.bag_probs[ins.relation]:.6e}\n")
        for i, (a, r) in enumerate(zip(ins.alpha, ins.sentence_rank)):
            fh.write(f"{i}\t{a:.10g}\t{int(r)}\n")
        for i, w in enumerate(ins.head_weights):
            if tokens is not None:
                fh.write(f"# sentence {i} tokens\t" + "\t".join(tokens[i][:w.shape[-1]]) + "\n")
            for h in range(w.shape[0]):
                fh.write(f"# sentence {i} head {h}\n")
                for row in w[h]:
                    fh.write("\t".join(f"{x:.8g}" for x in row) + "\n")
