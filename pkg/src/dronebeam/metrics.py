"""Evaluation metrics and report container for beam prediction runs.

Everything here is a pure function over arrays: top-k and joint accuracies,
the received-power R2 score (identity-line and fitted-line variants), beam
confusion matrices with neighbor-band mass, height/speed stratified accuracy
tables, and the beam-training resource trade-off table.  EvalReport bundles
the pieces with run metadata and serializes to JSON, aligned text, and CSV.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np

MPH_TO_MS = 0.44704
HEIGHT_EDGES_M = (40.0, 80.0)
SPEED_EDGES_MPH = (10.0, 20.0)
DEFAULT_KS = (1, 2, 3, 5)

# sentinel for an R2 score whose denominator has zero variance
R2_UNDEFINED = float("-inf")


def _as_rankings(rankings, k):
    r = np.asarray(rankings, dtype=int)
    if r.ndim != 2:
        raise ValueError("rankings must be a 2-d array of beam indices")
    if r.size == 0:
        raise ValueError("empty evaluation set")
    if not 1 <= k <= r.shape[1]:
        raise ValueError(f"k={k} outside available ranking depth {r.shape[1]}")
    return r


def topk_accuracy(rankings, truths, k):
    """Percent of rows whose truth appears in the first k ranked indices."""
    r = _as_rankings(rankings, k)
    t = np.asarray(truths, dtype=int)
    if t.shape[0] != r.shape[0]:
        raise ValueError("rankings and truths length mismatch")
    hits = np.any(r[:, :k] == t[:, None], axis=1)
    return 100.0 * float(np.mean(hits))


def joint_topk_accuracy(rankings_per_step, truths_per_step, horizon, k):
    """Percent of samples correct at every future step up to the horizon.

    A sample counts only if the truth is inside the top-k list at step 1 and
    step 2 and ... step horizon, so the score is non-increasing in horizon.
    """
    if not 1 <= horizon <= len(rankings_per_step):
        raise ValueError("horizon exceeds available future steps")
    if len(truths_per_step) < horizon:
        raise ValueError("horizon exceeds available truth steps")
    joint = None
    for h in range(horizon):
        r = _as_rankings(rankings_per_step[h], k)
        t = np.asarray(truths_per_step[h], dtype=int)
        hits = np.any(r[:, :k] == t[:, None], axis=1)
        joint = hits if joint is None else joint & hits
    return 100.0 * float(np.mean(joint))


def r2_power_score(predicted_powers, optimal_powers):
    """1 - SS_res/SS_tot of achieved vs optimal received power (identity line).

    Zero-variance truth makes the ratio 0/0: defined as 1.0 when the
    residuals are all zero, otherwise the undefined sentinel.
    """
    p = np.asarray(predicted_powers, dtype=float)
    o = np.asarray(optimal_powers, dtype=float)
    if p.shape != o.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("need two equal-length non-empty power vectors")
    ss_res = float(np.sum((o - p) ** 2))
    ss_tot = float(np.sum((o - o.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else R2_UNDEFINED
    return 1.0 - ss_res / ss_tot


def r2_power_score_fitted(predicted_powers, optimal_powers):
    """R2 of the least-squares line mapping predicted onto optimal power."""
    p = np.asarray(predicted_powers, dtype=float)
    o = np.asarray(optimal_powers, dtype=float)
    if p.shape != o.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("need two equal-length non-empty power vectors")
    ss_tot = float(np.sum((o - o.mean()) ** 2))
    if ss_tot == 0.0:
        # the least-squares fit of a constant truth is the constant itself
        return 1.0
    var_p = float(np.sum((p - p.mean()) ** 2))
    if var_p == 0.0:
        # horizontal fit at the truth mean explains nothing
        return 0.0
    slope = float(np.sum((p - p.mean()) * (o - o.mean()))) / var_p
    fit = o.mean() + slope * (p - p.mean())
    return 1.0 - float(np.sum((o - fit) ** 2)) / ss_tot


def format_r2(score):
    return "undefined" if score == R2_UNDEFINED else f"{score:.4f}"


def confusion_matrix(truths, predictions, num_classes):
    t = np.asarray(truths, dtype=int)
    p = np.asarray(predictions, dtype=int)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("truths and predictions must be equal-length vectors")
    if t.size and (t.min() < 0 or t.max() >= num_classes
                   or p.min() < 0 or p.max() >= num_classes):
        raise ValueError("beam index out of range")
    counts = np.zeros((num_classes, num_classes), dtype=int)
    np.add.at(counts, (t, p), 1)
    return counts


def neighbor_band_mass(matrix, band):
    """Percent of samples whose predicted beam is within band of the truth."""
    m = np.asarray(matrix)
    total = m.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    q = m.shape[0]
    i, j = np.indices((q, q))
    return 100.0 * float(m[np.abs(i - j) <= band].sum()) / float(total)


def _three_bins(values, edges, low_closed=False):
    v = np.asarray(values, dtype=float)
    lo, hi = edges
    in_low = v <= lo if low_closed else v < lo
    return np.where(in_low, 0, np.where(v <= hi, 1, 2))


@dataclass(frozen=True)
class StratumRow:
    label: str
    count: int
    accuracy: dict  # k -> percent, or None when the bin is empty


def binned_topk(values, edges, labels, rankings, truths, ks=DEFAULT_KS,
                low_closed=False):
    """Top-k accuracy inside each of three bins split at the two edges.

    Bin semantics: below the first edge (at-or-below when low_closed),
    between the edges inclusive, above the second edge.  Empty bins report
    count 0 and no accuracy.
    """
    bins = _three_bins(values, edges, low_closed)
    rows = []
    for b, label in enumerate(labels):
        mask = bins == b
        n = int(mask.sum())
        if n == 0:
            rows.append(StratumRow(label, 0, None))
            continue
        acc = {k: topk_accuracy(np.asarray(rankings)[mask],
                                np.asarray(truths)[mask], k) for k in ks}
        rows.append(StratumRow(label, n, acc))
    return rows


def height_stratified(heights_m, rankings, truths, ks=DEFAULT_KS):
    lo, hi = HEIGHT_EDGES_M
    labels = (f"<{lo:g} m", f"{lo:g}-{hi:g} m", f">{hi:g} m")
    return binned_topk(heights_m, HEIGHT_EDGES_M, labels, rankings, truths, ks)


def speed_stratified(speeds_ms, rankings, truths, ks=DEFAULT_KS):
    # compare in m/s so the 10 mph boundary lands in the low bin exactly
    lo, hi = SPEED_EDGES_MPH
    edges_ms = (lo * MPH_TO_MS, hi * MPH_TO_MS)
    labels = (f"<={lo:g} mph", f"{lo:g}-{hi:g} mph", f">{hi:g} mph")
    return binned_topk(speeds_ms, edges_ms, labels, rankings, truths, ks,
                       low_closed=True)


def resource_tradeoff(entries):
    """Rows of (approach, beam-training percent, accuracy dict), sorted by cost.

    entries: iterable of (name, training_fraction in [0,1], {k: percent}).
    """
    rows = [
        {"approach": str(name),
         "beam_training_pct": 100.0 * float(frac),
         "topk": {int(k): float(v) for k, v in acc.items()}}
        for name, frac, acc in entries
    ]
    rows.sort(key=lambda r: -r["beam_training_pct"])
    return rows


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, StratumRow):
        return {"label": obj.label, "count": obj.count,
                "accuracy": _jsonable(obj.accuracy)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if obj == R2_UNDEFINED:
        return "undefined"
    return obj


@dataclass
class EvalReport:
    """Bundle of metric tables for one evaluation run, plus run metadata."""

    metadata: dict = field(default_factory=dict)
    topk: dict = field(default_factory=dict)
    joint: dict = field(default_factory=dict)
    r2: dict = field(default_factory=dict)
    confusion: np.ndarray = None
    band_mass: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    strata: dict = field(default_factory=dict)
    tradeoff: list = field(default_factory=list)

    def to_json_dict(self):
        out = {
            "metadata": _jsonable(self.metadata),
            "topk": _jsonable(self.topk),
            "joint": _jsonable(self.joint),
            "r2": _jsonable(self.r2),
            "band_mass": _jsonable(self.band_mass),
            "histograms": _jsonable(self.histograms),
            "strata": _jsonable(self.strata),
            "tradeoff": _jsonable(self.tradeoff),
        }
        if self.confusion is not None:
            out["confusion"] = _jsonable(self.confusion)
        return out

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def to_text(self):
        buf = io.StringIO()
        w = buf.write
        w("evaluation report\n")
        for key, val in sorted(self.metadata.items()):
            w(f"  {key}: {val}\n")
        if self.topk:
            w("\ntop-k accuracy [%]\n")
            for name, accs in sorted(self.topk.items()):
                cells = "  ".join(f"top-{k}: {accs[k]:6.2f}"
                                  for k in sorted(accs))
                w(f"  {name:<24s} {cells}\n")
        if self.joint:
            w("\njoint accuracy over future steps [%]\n")
            for name, accs in sorted(self.joint.items()):
                cells = "  ".join(f"h={h}: {accs[h]:6.2f}"
                                  for h in sorted(accs))
                w(f"  {name:<24s} {cells}\n")
        if self.r2:
            w("\nreceived-power R2\n")
            for name, score in sorted(self.r2.items()):
                w(f"  {name:<24s} {format_r2(score)}\n")
        if self.band_mass:
            w("\nneighbor-band mass [%]\n")
            for band, pct in sorted(self.band_mass.items()):
                if isinstance(pct, dict):
                    cells = "  ".join(f"<= {b}: {p:6.2f}"
                                      for b, p in sorted(pct.items()))
                    w(f"  {band:<24s} {cells}\n")
                else:
                    w(f"  |pred-true| <= {band}: {pct:6.2f}\n")
        if self.strata:
            w("\nstratified top-k accuracy [%]\n")
            for name, rows in sorted(self.strata.items()):
                w(f"  by {name}:\n")
                for row in rows:
                    if row.accuracy is None:
                        w(f"    {row.label:<14s} n={row.count:<6d} n/a\n")
                    else:
                        cells = "  ".join(f"top-{k}: {row.accuracy[k]:6.2f}"
                                          for k in sorted(row.accuracy))
                        w(f"    {row.label:<14s} n={row.count:<6d} {cells}\n")
        if self.tradeoff:
            w("\nbeam-training resource trade-off\n")
            for row in self.tradeoff:
                cells = "  ".join(f"top-{k}: {v:6.2f}"
                                  for k, v in sorted(row["topk"].items()))
                w(f"  {row['approach']:<24s} {row['beam_training_pct']:6.2f}%"
                  f"  {cells}\n")
        return buf.getvalue()


def save_matrix_csv(matrix, path, header=None):
    m = np.asarray(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in m:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row.tolist()) + "\n")
