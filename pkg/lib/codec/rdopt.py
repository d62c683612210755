"""Lagrangian selection of the affine combination mask: J = D + lambda * R."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field

from lib.codec.config import RDConfig
from lib.codec.frames import FrameCode, FrameCoder, FrameContext
from lib.mesh.models import Mesh
from lib.motion.affine import CombinationMask, legal_masks
from lib.motion.models import KeyNodeSet
from lib.settings import settings

logger = logging.getLogger(__name__)


class RDPoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mask: CombinationMask
    rate: int
    distortion: float
    cost: float
    coded: FrameCode | None = Field(default=None, exclude=True, repr=False)

    @classmethod
    def measure(
        cls, mask: CombinationMask, rate: int, distortion: float, lam: float, coded: FrameCode | None = None
    ) -> "RDPoint":
        return cls(mask=mask, rate=rate, distortion=distortion, cost=distortion + lam * rate, coded=coded)

    def recost(self, lam: float) -> "RDPoint":
        return self.measure(self.mask, self.rate, self.distortion, lam, self.coded)

    def sort_key(self) -> Tuple[float, int, int]:
        return self.cost, self.mask.enabled_count, self.mask.code_value


def evaluate_mask(
    mask: CombinationMask,
    pair: Tuple[Mesh, Mesh],
    nodes: KeyNodeSet,
    coder: FrameCoder,
    rd: RDConfig,
    context: FrameContext | None = None,
) -> RDPoint:
    """Fit and code one frame under ``mask``; rate is the frame's motion block size."""
    if not mask.is_legal:
        raise ValueError(f"mask {mask.code} does not enable translation")
    reference, target = pair
    coded = coder.encode(reference, target, nodes, mask, context)
    point = RDPoint.measure(mask, coded.rate, coded.distortion, rd.lambda_, coded)
    logger.debug(
        "Mask %s: %d bytes, distortion %.6g, J %.6g", mask.name, point.rate, point.distortion, point.cost
    )
    return point


def best_point(points: Sequence[RDPoint]) -> RDPoint:
    """Lowest J; ties go to fewer enabled components, then the smaller code."""
    if not points:
        raise ValueError("no RD points to choose from")
    return min(points, key=RDPoint.sort_key)


def select_for_lambda(points: Sequence[RDPoint], lam: float) -> RDPoint:
    """Re-run the selection on already measured points for another lambda."""
    return best_point([p.recost(lam) for p in points])


def select_mask(
    pair: Tuple[Mesh, Mesh],
    nodes: KeyNodeSet,
    coder: FrameCoder,
    rd: RDConfig,
    context: FrameContext | None = None,
) -> Tuple[CombinationMask, List[RDPoint]]:
    """Evaluate all 8 legal masks and return the argmin of J with every point."""
    masks = legal_masks()
    workers = min(settings.workers, len(masks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(
                pool.map(lambda m: evaluate_mask(m, pair, nodes, coder, rd, context), masks)
            )
    else:
        points = [evaluate_mask(m, pair, nodes, coder, rd, context) for m in masks]
    best = best_point(points)
    logger.info(
        "Selected mask %s (%d bytes, distortion %.6g) at lambda %g",
        best.mask.name,
        best.rate,
        best.distortion,
        rd.lambda_,
    )
    return best.mask, points


def lower_convex_hull(points: Sequence[RDPoint]) -> List[RDPoint]:
    """Points on the lower-left convex hull of the (rate, distortion) cloud, by rate."""
    ordered = sorted(points, key=lambda p: (p.rate, p.distortion, p.mask.code_value))
    # keep the best distortion per rate
    unique: List[RDPoint] = []
    for p in ordered:
        if not unique or p.rate != unique[-1].rate:
            unique.append(p)
    # drop points not improving distortion
    frontier: List[RDPoint] = []
    for p in unique:
        if not frontier or p.distortion < frontier[-1].distortion:
            frontier.append(p)
    hull: List[RDPoint] = []
    for p in frontier:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b.rate - a.rate) * (p.distortion - a.distortion) - (b.distortion - a.distortion) * (
                p.rate - a.rate
            )
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull
