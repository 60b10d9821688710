"""File formats: DOTA annotations, JSONL interchange, report CSV, checkpoints.

Every writer is deterministic: fixed field order, floats rendered with 17
significant digits (lossless for float64). Every reader is the exact
inverse, so write -> read -> write reproduces identical bytes.
"""

from __future__ import annotations

import json
import math

from .datamodel import (
    PROB_SUM_TOL,
    CycleReport,
    GroundTruthObject,
    Prediction,
    QueryResult,
)
from .errors import (
    CalibrationError,
    InvalidBoxError,
    ParseError,
    UnknownClassError,
)
from .geometry import RotatedBox, box_to_polygon

DOTA_HEADER_PREFIXES = ("imagesource", "gsd")


# ---------------------------------------------------------------------------
# Deterministic JSON with 17-significant-digit floats


def format_float(x: float) -> str:
    """Render a float with 17 significant digits (round-trips exactly)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    text = format(float(x), ".17g")
    # Keep a float marker so json.loads restores the type.
    if "." not in text and "e" not in text and "E" not in text:
        text += ".0"
    return text


def dumps(value) -> str:
    """JSON text with insertion-ordered keys and 17-digit floats."""
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}:{dumps(v)}" for k, v in value.items())
        return "{" + ",".join(items) + "}"
    raise TypeError(f"cannot serialize {type(value).__name__}")


# ---------------------------------------------------------------------------
# DOTA ground-truth annotations


def min_area_rect(points: list[tuple[float, float]]) -> RotatedBox:
    """Minimum-area enclosing rectangle of a point set.

    The optimum is aligned with some convex-hull edge, so only hull-edge
    orientations are examined. Ties resolve to the first minimal edge in
    hull order, which makes the result deterministic.
    """
    hull = _convex_hull(points)
    if len(hull) < 3:
        # Collinear input: degenerate rectangle, rejected by RotatedBox.
        raise InvalidBoxError("points are collinear; enclosing rectangle is degenerate")
    best = None
    n = len(hull)
    for i in range(n):
        px, py = hull[i]
        qx, qy = hull[(i + 1) % n]
        theta = math.atan2(qy - py, qx - px)
        c, s = math.cos(theta), math.sin(theta)
        xs = [x * c + y * s for x, y in hull]
        ys = [-x * s + y * c for x, y in hull]
        w = max(xs) - min(xs)
        h = max(ys) - min(ys)
        if best is None or w * h < best[0]:
            mid_x = 0.5 * (max(xs) + min(xs))
            mid_y = 0.5 * (max(ys) + min(ys))
            best = (w * h, mid_x * c - mid_y * s, mid_x * s + mid_y * c, w, h, theta)
    _, cx, cy, w, h, theta = best
    return RotatedBox.create(cx, cy, w, h, theta)


def _convex_hull(points):
    """Andrew's monotone chain; returns CCW hull without repeated endpoint."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def parse_dota_file(text: str, class_list: list[str]) -> list[GroundTruthObject]:
    """Parse one DOTA annotation file into ground-truth objects.

    Header lines beginning ``imagesource`` or ``gsd`` and blank lines are
    skipped. Each data line is 8 quad coordinates, a category token, and a
    difficulty flag; the quad is converted to its minimum-area enclosing
    rectangle.
    """
    if not class_list:
        raise ValueError("class list must be nonempty")
    class_index = {name: i for i, name in enumerate(class_list)}
    objects: list[GroundTruthObject] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.lower().startswith(DOTA_HEADER_PREFIXES):
            continue
        tokens = line.split()
        if len(tokens) != 10:
            raise ParseError(
                f"expected 10 tokens (8 coordinates, category, difficult), got {len(tokens)}",
                line=line_no,
            )
        try:
            coords = [float(t) for t in tokens[:8]]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {tokens[:8]}", line=line_no)
        if not all(math.isfinite(v) for v in coords):
            raise ParseError("non-finite coordinate", line=line_no)
        category = tokens[8]
        if category not in class_index:
            raise UnknownClassError(f"unknown category {category!r}", line=line_no)
        try:
            difficult = int(tokens[9])
        except ValueError:
            raise ParseError(f"difficult flag {tokens[9]!r} is not an integer", line=line_no)
        quad = list(zip(coords[0::2], coords[1::2]))
        try:
            box = min_area_rect(quad)
        except InvalidBoxError as exc:
            raise ParseError(f"degenerate quadrilateral: {exc}", line=line_no)
        objects.append(
            GroundTruthObject(
                gt_id=len(objects),
                class_id=class_index[category],
                box=box,
                difficult=bool(difficult),
            )
        )
    return objects


def serialize_dota(objects: list[GroundTruthObject], class_list: list[str]) -> str:
    """Write objects as DOTA lines (corner quad, category, difficulty)."""
    lines = []
    for gt in objects:
        corners = box_to_polygon(gt.box).vertices
        coords = " ".join(format_float(v) for xy in corners for v in xy)
        lines.append(f"{coords} {class_list[gt.class_id]} {int(gt.difficult)}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Predictions JSONL


def load_predictions(text: str) -> list[Prediction]:
    """Read line-delimited prediction records; ids follow file order.

    Raw probability mass within [0.5, 1.5] of 1 is renormalized to exactly
    1; anything further off is rejected as a calibration failure.
    """
    predictions: list[Prediction] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=line_no)
        try:
            image_id = int(record["image_id"])
            box_fields = record["box"]
            box = RotatedBox.create(
                float(box_fields["cx"]),
                float(box_fields["cy"]),
                float(box_fields["w"]),
                float(box_fields["h"]),
                float(box_fields["angle"]),
            )
            probs = [float(p) for p in record["class_probs"]]
            background = float(record["background_score"])
        except (KeyError, TypeError, ValueError, InvalidBoxError) as exc:
            raise ParseError(f"malformed prediction record: {exc}", line=line_no)
        if len(probs) < 2:
            raise ParseError("class_probs needs at least two entries", line=line_no)
        if any(p < 0 or not math.isfinite(p) for p in probs) or background < 0:
            raise ParseError("negative or non-finite probability", line=line_no)
        total = sum(probs) + background
        if not (0.5 <= total <= 1.5):
            raise CalibrationError(
                f"probability mass {total:.6g} outside renormalizable range [0.5, 1.5]",
                line=line_no,
            )
        if abs(total - 1.0) > PROB_SUM_TOL:
            probs = [p / total for p in probs]
            background = background / total
        predictions.append(
            Prediction(
                pred_id=len(predictions),
                image_id=image_id,
                box=box,
                class_probs=tuple(probs),
                background_score=background,
            )
        )
    return predictions


def _box_record(box: RotatedBox) -> dict:
    return {"cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h, "angle": box.angle}


def write_predictions(predictions: list[Prediction]) -> str:
    lines = []
    for p in predictions:
        record = {
            "image_id": p.image_id,
            "box": _box_record(p.box),
            "class_probs": list(p.class_probs),
            "background_score": p.background_score,
        }
        lines.append(dumps(record))
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Query results JSONL


def write_query_results(results: list[QueryResult]) -> str:
    lines = []
    for r in results:
        record = {
            "image_id": r.image_id,
            "pred_id": r.pred_id,
            "matched": r.matched,
            "class_id": r.class_id,
            "gt_id": r.gt_id,
            "gt_box": _box_record(r.gt_box) if r.gt_box is not None else None,
            "iou_with_gt": r.iou_with_gt,
            "cycle": r.cycle,
            "cost": r.cost,
        }
        lines.append(dumps(record))
    return "\n".join(lines) + ("\n" if lines else "")


def read_query_results(text: str) -> list[QueryResult]:
    results = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            gt_box = record["gt_box"]
            results.append(
                QueryResult(
                    image_id=int(record["image_id"]),
                    pred_id=int(record["pred_id"]),
                    matched=bool(record["matched"]),
                    class_id=record["class_id"],
                    gt_id=record["gt_id"],
                    gt_box=None
                    if gt_box is None
                    else RotatedBox(
                        float(gt_box["cx"]),
                        float(gt_box["cy"]),
                        float(gt_box["w"]),
                        float(gt_box["h"]),
                        float(gt_box["angle"]),
                    ),
                    iou_with_gt=float(record["iou_with_gt"]),
                    cycle=int(record["cycle"]),
                    cost=int(record["cost"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, InvalidBoxError) as exc:
            message = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
            raise ParseError(f"malformed query result: {message}", line=line_no)
    return results


# ---------------------------------------------------------------------------
# Image feature vectors JSONL (Coreset input)


def write_image_features(features) -> str:
    lines = []
    for feat in features:
        lines.append(dumps({"image_id": feat.image_id, "vector": list(feat.vector)}))
    return "\n".join(lines) + ("\n" if lines else "")


def read_image_features(text: str):
    from .baselines import ImageFeature

    features = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            vector = tuple(float(v) for v in record["vector"])
            if not all(math.isfinite(v) for v in vector):
                raise ValueError("non-finite feature value")
            features.append(ImageFeature(image_id=int(record["image_id"]), vector=vector))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            message = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
            raise ParseError(f"malformed feature record: {message}", line=line_no)
    return features


# ---------------------------------------------------------------------------
# Cycle report CSV


def _optional(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def report_header(num_classes: int) -> list[str]:
    return (
        ["seed", "cycle", "strategy", "theta"]
        + [f"queried_{k}" for k in range(num_classes)]
        + [
            "kl_to_uniform",
            "budget_spent",
            "budget_unspent",
            "overshoot",
            "background_queries",
            "open_class_candidates",
            "phi_min",
            "phi_median",
            "phi_max",
            "macro_recall",
        ]
        + [f"recall_{k}" for k in range(num_classes)]
        + ["config_digest"]
    )


def write_cycle_reports(reports: list[CycleReport], num_classes: int) -> str:
    """Canonical CSV for cycle reports (wall time deliberately excluded)."""
    rows = [",".join(report_header(num_classes))]
    for r in reports:
        if len(r.queried_per_class) != num_classes:
            raise ValueError("report class count does not match header")
        cells = (
            [str(r.seed), str(r.cycle), r.strategy, format_float(r.theta)]
            + [str(c) for c in r.queried_per_class]
            + [
                _optional(r.kl_to_uniform),
                str(r.budget_spent),
                str(r.budget_unspent),
                str(r.overshoot),
                str(r.background_queries),
                str(int(r.open_class_candidates)),
                _optional(r.phi_min),
                _optional(r.phi_median),
                _optional(r.phi_max),
                _optional(r.macro_recall),
            ]
            + [_optional(v) for v in r.per_class_recall]
            + [r.config_digest]
        )
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# Cycle-state checkpoint

CHECKPOINT_VERSION = 1


def checkpoint_text(
    pool,
    *,
    seed: int,
    completed_cycles: int,
    config_digest: str,
    rng_digest: str,
) -> str:
    """Serialize resumable pool state as canonical JSON text."""
    record = {
        "version": CHECKPOINT_VERSION,
        "config_digest": config_digest,
        "seed": seed,
        "completed_cycles": completed_cycles,
        "rng_digest": rng_digest,
        "num_classes": pool.num_classes,
        "statuses": {
            str(i): pool.images[i].status.value for i in sorted(pool.images)
        },
        "consumed_pred_ids": sorted(pool.consumed_pred_ids),
        "class_counts": list(pool.class_counts),
        "partial_labels": [
            {
                "image_id": r.image_id,
                "pred_id": r.pred_id,
                "matched": r.matched,
                "class_id": r.class_id,
                "gt_id": r.gt_id,
                "gt_box": _box_record(r.gt_box) if r.gt_box is not None else None,
                "iou_with_gt": r.iou_with_gt,
                "cycle": r.cycle,
                "cost": r.cost,
            }
            for r in pool.partial_labels
        ],
    }
    return dumps(record) + "\n"


def parse_checkpoint(text: str) -> dict:
    """Parse a checkpoint into a dict with typed fields."""
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid checkpoint JSON: {exc.msg}", line=exc.lineno)
    if record.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {record.get('version')!r}")
    try:
        partial_labels = [
            QueryResult(
                image_id=int(r["image_id"]),
                pred_id=int(r["pred_id"]),
                matched=bool(r["matched"]),
                class_id=r["class_id"],
                gt_id=r["gt_id"],
                gt_box=None
                if r["gt_box"] is None
                else RotatedBox(
                    float(r["gt_box"]["cx"]),
                    float(r["gt_box"]["cy"]),
                    float(r["gt_box"]["w"]),
                    float(r["gt_box"]["h"]),
                    float(r["gt_box"]["angle"]),
                ),
                iou_with_gt=float(r["iou_with_gt"]),
                cycle=int(r["cycle"]),
                cost=int(r["cost"]),
            )
            for r in record["partial_labels"]
        ]
        return {
            "version": record["version"],
            "config_digest": str(record["config_digest"]),
            "seed": int(record["seed"]),
            "completed_cycles": int(record["completed_cycles"]),
            "rng_digest": str(record["rng_digest"]),
            "num_classes": int(record["num_classes"]),
            "statuses": {int(k): v for k, v in record["statuses"].items()},
            "consumed_pred_ids": [int(v) for v in record["consumed_pred_ids"]],
            "class_counts": [int(v) for v in record["class_counts"]],
            "partial_labels": partial_labels,
        }
    except (KeyError, TypeError, ValueError, InvalidBoxError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}")


def read_cycle_reports(text: str) -> list[CycleReport]:
    lines = [line for line in text.splitlines() if line]
    if not lines:
        raise ParseError("empty report file", line=1)
    header = lines[0].split(",")
    num_classes = sum(1 for name in header if name.startswith("queried_"))
    if header != report_header(num_classes):
        raise ParseError("unrecognized report header", line=1)
    reports = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(
                f"expected {len(header)} columns, got {len(cells)}", line=line_no
            )
        row = dict(zip(header, cells))
        try:
            reports.append(
                CycleReport(
                    seed=int(row["seed"]),
                    cycle=int(row["cycle"]),
                    strategy=row["strategy"],
                    theta=float(row["theta"]),
                    queried_per_class=tuple(
                        int(row[f"queried_{k}"]) for k in range(num_classes)
                    ),
                    kl_to_uniform=float(row["kl_to_uniform"]) if row["kl_to_uniform"] else None,
                    budget_spent=int(row["budget_spent"]),
                    budget_unspent=int(row["budget_unspent"]),
                    overshoot=int(row["overshoot"]),
                    background_queries=int(row["background_queries"]),
                    open_class_candidates=bool(int(row["open_class_candidates"])),
                    phi_min=float(row["phi_min"]) if row["phi_min"] else None,
                    phi_median=float(row["phi_median"]) if row["phi_median"] else None,
                    phi_max=float(row["phi_max"]) if row["phi_max"] else None,
                    macro_recall=float(row["macro_recall"]) if row["macro_recall"] else None,
                    per_class_recall=tuple(
                        float(row[f"recall_{k}"]) if row[f"recall_{k}"] else None
                        for k in range(num_classes)
                    ),
                    config_digest=row["config_digest"],
                )
            )
        except ValueError as exc:
            raise ParseError(f"malformed report row: {exc}", line=line_no)
    return reports
