"""COCO-style detection metrics: AP/AR per class over IoU thresholds
0.50:0.05:0.95, 101-point interpolated precision, maxDets=100.

Matching is greedy per scene: detections in descending score order
(ties stable by input order) each take the highest-IoU unmatched
ground-truth box of their class at or above the threshold; every GT
box is matched at most once. Classes with zero ground truth are
excluded from the means.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .simulator import iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100


def match_at_threshold(detections, gt_boxes, threshold):
    """TP/FP flags for score-sorted detections of one class in one scene.

    detections: [(box, score)] already sorted by descending score.
    """
    matched = [False] * len(gt_boxes)
    flags = []
    for box, _score in detections:
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gt_boxes):
            if matched[j]:
                continue
            v = iou(box, g)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= threshold:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(flags, n_gt):
    """101-point interpolated AP from ordered TP/FP flags.

    Returns None when n_gt == 0 (cell excluded from aggregation).
    """
    if n_gt == 0:
        return None
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0 or not flags.any():
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope: running max from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # interpolated precision at each grid recall: max precision among
    # points with recall >= r, 0 beyond the achieved recall
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    interp = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(np.sum(interp)) / len(RECALL_GRID)


@dataclass
class EvalReport:
    protocol: str
    cells: dict = field(default_factory=dict)   # (class_id, threshold) -> {"ap","ar"}
    n_gt: dict = field(default_factory=dict)    # class_id -> gt count
    n_detections: int = 0
    n_matches: int = 0
    mAP: float = 0.0
    mAR: float = 0.0
    extra_rows: dict = field(default_factory=dict)  # label -> {"mAP","mAR"}

    def class_mean(self, class_ids, metric):
        vals = [self.cells[(c, t)][metric] for c in class_ids for t in IOU_THRESHOLDS
                if (c, t) in self.cells]
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "mAP": self.mAP, "mAR": self.mAR,
            "per_cell": [{"class": c, "iou_threshold": t,
                          "ap": v["ap"], "ar": v["ar"]}
                         for (c, t), v in sorted(self.cells.items())],
            "gt_counts": {str(c): n for c, n in sorted(self.n_gt.items())},
            "n_detections": self.n_detections,
            "n_matches": self.n_matches,
            "extra_rows": self.extra_rows,
        }

    def save_json(self, path, header=None):
        doc = self.to_dict()
        if header:
            doc["provenance"] = header
        with open(path, "w") as f:
            json.dump(doc, f, sort_keys=True)

    def save_csv(self, path, header=None):
        with open(path, "w", newline="") as f:
            if header:
                f.write("# " + json.dumps(header, sort_keys=True) + "\n")
            w = csv.writer(f)
            w.writerow(["protocol", "class", "iou_threshold", "ap", "ar"])
            for (c, t), v in sorted(self.cells.items()):
                w.writerow([self.protocol, c, t, repr(v["ap"]), repr(v["ar"])])
            w.writerow([self.protocol, "aggregate", "0.50:0.95",
                        repr(self.mAP), repr(self.mAR)])
            for label, row in sorted(self.extra_rows.items()):
                w.writerow([self.protocol, label, "0.50:0.95",
                            repr(row["mAP"]), repr(row["mAR"])])


def evaluate(per_scene_detections, scenes, eval_class_ids, protocol="fewshot",
             gt_label_map=None, max_dets=MAX_DETS):
    """Score detections against scene ground truth.

    per_scene_detections: list (parallel to scenes) of Detection lists.
    gt_label_map: optional relabeling applied to GT class ids before
    filtering (open-set maps unseen classes to the unknown id). GT
    outside eval_class_ids is dropped; detections on it count as FP.
    """
    if len(per_scene_detections) != len(scenes):
        raise ValueError("detections and scenes are not parallel")
    eval_ids = sorted(set(int(c) for c in eval_class_ids))

    # cap per scene at max_dets by score (stable), then split per class
    capped = []
    for dets in per_scene_detections:
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        capped.append([dets[i] for i in order[:max_dets]])

    report = EvalReport(protocol=protocol)
    report.n_detections = sum(len(d) for d in capped)

    for cid in eval_ids:
        gt_per_scene = []
        det_per_scene = []
        for dets, scene in zip(capped, scenes):
            gts = []
            for box, label in scene.gt:
                label = int(label) if gt_label_map is None else int(gt_label_map(int(label)))
                if label == cid:
                    gts.append(box)
            gt_per_scene.append(gts)
            det_per_scene.append([(d.box, d.score) for d in dets if d.class_id == cid])
        n_gt = sum(len(g) for g in gt_per_scene)
        report.n_gt[cid] = n_gt
        if n_gt == 0:
            continue
        for t in IOU_THRESHOLDS:
            scored_flags = []
            for si, (dets, gts) in enumerate(zip(det_per_scene, gt_per_scene)):
                flags = match_at_threshold(dets, gts, t)
                for di, ((_, score), tp) in enumerate(zip(dets, flags)):
                    scored_flags.append((-score, si, di, tp))
            scored_flags.sort()
            flags = [tp for *_, tp in scored_flags]
            ap = average_precision(flags, n_gt)
            n_tp = sum(flags)
            report.cells[(cid, t)] = {"ap": ap, "ar": n_tp / n_gt}
            if t == IOU_THRESHOLDS[0]:
                report.n_matches += n_tp

    with_gt = [c for c in eval_ids if report.n_gt.get(c, 0) > 0]
    report.mAP = report.class_mean(with_gt, "ap")
    report.mAR = report.class_mean(with_gt, "ar")
    return report


def evaluate_openset(per_scene_detections, scenes, seen_ids, unknown_id,
                     unseen_ids, max_dets=MAX_DETS):
    """Open-set report: all unseen GT collapses to the unknown class;
    adds separate Known / Unknown aggregate rows."""
    unseen = set(int(c) for c in unseen_ids)

    def relabel(cid):
        return unknown_id if cid in unseen else cid

    report = evaluate(per_scene_detections, scenes,
                      list(seen_ids) + [unknown_id], protocol="openset",
                      gt_label_map=relabel, max_dets=max_dets)
    known_with_gt = [c for c in seen_ids if report.n_gt.get(c, 0) > 0]
    report.extra_rows = {
        "known": {"mAP": report.class_mean(known_with_gt, "ap"),
                  "mAR": report.class_mean(known_with_gt, "ar")},
        "unknown": {"mAP": report.class_mean([unknown_id], "ap"),
                    "mAR": report.class_mean([unknown_id], "ar")},
    }
    return report
