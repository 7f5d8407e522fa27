"""The keep/drop decision on mask area and motion magnitude."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..core import ValidationError


@dataclass(frozen=True)
class FilterThresholds:
    alpha_min: float = 0.01
    alpha_max: float = 0.5
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not 0 <= self.alpha_min < self.alpha_max <= 1:
            raise ValidationError("need 0 <= alpha_min < alpha_max <= 1")
        if not 0 <= self.beta_min < self.beta_max:
            raise ValidationError("need 0 <= beta_min < beta_max")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterReport:
    area_ratio: float
    flow_mag: float
    area_pass: bool
    flow_pass: bool
    keep: bool

    def to_dict(self) -> dict:
        return asdict(self)


def keep(stats: dict, th: FilterThresholds = FilterThresholds()) -> FilterReport:
    """Both statistics must fall inside their closed threshold intervals."""
    area, mag = float(stats["area_ratio"]), float(stats["flow_mag"])
    if not (math.isfinite(area) and math.isfinite(mag)):
        raise ValidationError("filter statistics must be finite")
    area_pass = th.alpha_min <= area <= th.alpha_max
    flow_pass = th.beta_min <= mag <= th.beta_max
    return FilterReport(area, mag, area_pass, flow_pass, area_pass and flow_pass)
