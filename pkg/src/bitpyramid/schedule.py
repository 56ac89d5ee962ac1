"""Registry of predefined multi-scale ladders per aspect ratio.

Each built-in maps an aspect ratio to 13 (h_k, w_k) tuples ending at the
full token grid for that ratio; reciprocal ratios are exact transposes.
The stride between token grid and nominal pixel resolution is 16 for every
built-in.  Custom schedules can be registered at runtime (e.g. truncations
for small experiments) and are addressed by the same integer id space used
by the container format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ContractError, RangeError, ScheduleLookupError

# (aspect ratio, (H, W) pixels, scale list)
_BUILTIN_ROWS = [
    (1.000, (1024, 1024), [(1, 1), (2, 2), (4, 4), (6, 6), (8, 8), (12, 12), (16, 16),
                           (20, 20), (24, 24), (32, 32), (40, 40), (48, 48), (64, 64)]),
    (0.800, (896, 1120), [(1, 1), (2, 2), (3, 3), (4, 5), (8, 10), (12, 15), (16, 20),
                          (20, 25), (24, 30), (28, 35), (36, 45), (44, 55), (56, 70)]),
    (1.250, (1120, 896), [(1, 1), (2, 2), (3, 3), (5, 4), (10, 8), (15, 12), (20, 16),
                          (25, 20), (30, 24), (35, 28), (45, 36), (55, 44), (70, 56)]),
    (0.750, (864, 1152), [(1, 1), (2, 2), (3, 4), (6, 8), (9, 12), (12, 16), (15, 20),
                          (18, 24), (21, 28), (27, 36), (36, 48), (45, 60), (54, 72)]),
    (1.333, (1152, 864), [(1, 1), (2, 2), (4, 3), (8, 6), (12, 9), (16, 12), (20, 15),
                          (24, 18), (28, 21), (36, 27), (48, 36), (60, 45), (72, 54)]),
    (0.666, (832, 1248), [(1, 1), (2, 2), (2, 3), (4, 6), (6, 9), (10, 15), (14, 21),
                          (18, 27), (22, 33), (26, 39), (32, 48), (42, 63), (52, 78)]),
    (1.500, (1248, 832), [(1, 1), (2, 2), (3, 2), (6, 4), (9, 6), (15, 10), (21, 14),
                          (27, 18), (33, 22), (39, 26), (48, 32), (63, 42), (78, 52)]),
    (0.571, (768, 1344), [(1, 1), (2, 2), (3, 3), (4, 7), (6, 11), (8, 14), (12, 21),
                          (16, 28), (20, 35), (24, 42), (32, 56), (40, 70), (48, 84)]),
    (1.750, (1344, 768), [(1, 1), (2, 2), (3, 3), (7, 4), (11, 6), (14, 8), (21, 12),
                          (28, 16), (35, 20), (42, 24), (56, 32), (70, 40), (84, 48)]),
    (0.500, (720, 1440), [(1, 1), (2, 2), (2, 4), (3, 6), (5, 10), (8, 16), (11, 22),
                          (15, 30), (19, 38), (23, 46), (30, 60), (37, 74), (45, 90)]),
    (2.000, (1440, 720), [(1, 1), (2, 2), (4, 2), (6, 3), (10, 5), (16, 8), (22, 11),
                          (30, 15), (38, 19), (46, 23), (60, 30), (74, 37), (90, 45)]),
    (0.400, (640, 1600), [(1, 1), (2, 2), (2, 5), (4, 10), (6, 15), (8, 20), (10, 25),
                          (12, 30), (16, 40), (20, 50), (26, 65), (32, 80), (40, 100)]),
    (2.500, (1600, 640), [(1, 1), (2, 2), (5, 2), (10, 4), (15, 6), (20, 8), (25, 10),
                          (30, 12), (40, 16), (50, 20), (65, 26), (80, 32), (100, 40)]),
    (0.333, (592, 1776), [(1, 1), (2, 2), (2, 6), (3, 9), (5, 15), (7, 21), (9, 27),
                          (12, 36), (15, 45), (18, 54), (24, 72), (30, 90), (37, 111)]),
    (3.000, (1776, 592), [(1, 1), (2, 2), (6, 2), (9, 3), (15, 5), (21, 7), (27, 9),
                          (36, 12), (45, 15), (54, 18), (72, 24), (90, 30), (111, 37)]),
]


@dataclass(frozen=True)
class ScaleSchedule:
    schedule_id: int
    aspect_ratio: float
    scales: tuple  # ordered ((h_k, w_k), ...)
    resolution: tuple  # nominal (H, W) pixels

    @property
    def K(self) -> int:
        return len(self.scales)

    @property
    def final_scale(self) -> tuple[int, int]:
        return self.scales[-1]

    @property
    def stride(self) -> int:
        return self.resolution[0] // self.final_scale[0]

    @property
    def total_cells(self) -> int:
        return sum(h * w for h, w in self.scales)

    def total_bits(self, d: int) -> int:
        return d * self.total_cells

    def truncated(self, K: int) -> "ScaleSchedule":
        """First-K prefix, re-registered under a derived id.

        The nominal resolution shrinks with the final scale so the stride
        is preserved.
        """
        if not 1 <= K <= self.K:
            raise RangeError(f"truncation length {K} out of [1, {self.K}]")
        if K == self.K:
            return self
        stride = self.stride
        scales = self.scales[:K]
        sched = ScaleSchedule(
            schedule_id=self.schedule_id * 100 + K,
            aspect_ratio=scales[-1][0] / scales[-1][1],
            scales=scales,
            resolution=(scales[-1][0] * stride, scales[-1][1] * stride),
        )
        register(sched, replace=True)
        return sched


_REGISTRY: dict[int, ScaleSchedule] = {}
BUILTIN_RATIOS: tuple[float, ...] = tuple(r for r, _, _ in _BUILTIN_ROWS)


def register(schedule: ScaleSchedule, replace: bool = False) -> ScaleSchedule:
    if not replace and schedule.schedule_id in _REGISTRY:
        existing = _REGISTRY[schedule.schedule_id]
        if existing != schedule:
            raise ContractError(f"schedule id {schedule.schedule_id} already registered")
        return existing
    if schedule.K < 1:
        raise ContractError("schedule must have at least one scale")
    for (h0, w0), (h1, w1) in zip(schedule.scales, schedule.scales[1:]):
        if h1 < h0 or w1 < w0:
            raise ContractError("scale sizes must be non-decreasing")
    _REGISTRY[schedule.schedule_id] = schedule
    return schedule


for _i, (_r, _res, _scales) in enumerate(_BUILTIN_ROWS):
    register(ScaleSchedule(schedule_id=_i + 1, aspect_ratio=_r,
                           scales=tuple(_scales), resolution=_res))

# canonical desk-scale schedules for the toy task and the flip study
TOY_TRAIN_ID = 9000
BSC_STUDY_ID = 9001
register(ScaleSchedule(TOY_TRAIN_ID, 1.0,
                       ((1, 1), (2, 2), (4, 4), (16, 16)), (64, 64)))
register(ScaleSchedule(BSC_STUDY_ID, 1.0,
                       ((1, 1), (2, 2), (3, 3), (4, 4), (6, 6), (8, 8),
                        (10, 10), (12, 12), (16, 16)), (64, 64)))


def schedule_for(aspect_ratio: float, tol: float = 5e-4) -> ScaleSchedule:
    """Built-in (or registered) schedule whose ratio matches exactly-ish."""
    for sched in _REGISTRY.values():
        if abs(sched.aspect_ratio - aspect_ratio) <= tol:
            return sched
    known = sorted({round(s.aspect_ratio, 3) for s in _REGISTRY.values()})
    raise ScheduleLookupError(f"no schedule for ratio {aspect_ratio}; available: {known}")


def schedule_by_id(schedule_id: int) -> ScaleSchedule:
    if schedule_id in _REGISTRY:
        return _REGISTRY[schedule_id]
    # truncations carry the derived id parent*100 + K; reconstruct on demand
    parent_id, K = divmod(schedule_id, 100)
    if parent_id in _REGISTRY and 1 <= K <= _REGISTRY[parent_id].K:
        return _REGISTRY[parent_id].truncated(K)
    raise ScheduleLookupError(
        f"schedule id {schedule_id} not registered; known ids: {sorted(_REGISTRY)}"
    )


def registered_schedules() -> list[ScaleSchedule]:
    return sorted(_REGISTRY.values(), key=lambda s: s.schedule_id)


def load_schedule_file(path) -> list[ScaleSchedule]:
    """Register custom schedules from a JSON config.

    Format: a list of records {"id": int, "ratio": float,
    "resolution": [H, W], "scales": [[h, w], ...]}.
    """
    with open(path) as fh:
        records = json.load(fh)
    out = []
    for rec in records:
        sched = ScaleSchedule(
            schedule_id=int(rec["id"]),
            aspect_ratio=float(rec["ratio"]),
            scales=tuple((int(h), int(w)) for h, w in rec["scales"]),
            resolution=tuple(int(x) for x in rec["resolution"]),
        )
        out.append(register(sched, replace=True))
    return out


RATIO_TOLERANCE = 0.12   # final-scale |h/w - r|/r
AREA_TOLERANCE = 0.10    # final-scale area and total-cells parity vs the 1:1 reference


@dataclass
class ValidationReport:
    schedule_id: int
    ratio_deviation: list = field(default_factory=list)   # per scale, |h_k/w_k - r|/r
    area_deviation: list = field(default_factory=list)    # per scale vs reference row
    final_ratio_ok: bool = True
    final_area_ok: bool = True
    cells_parity_ok: bool = True
    monotone_area_ok: bool = True
    stride: int = 0

    @property
    def ok(self) -> bool:
        return (self.final_ratio_ok and self.final_area_ok
                and self.cells_parity_ok and self.monotone_area_ok)


def validate(schedule: ScaleSchedule, reference: ScaleSchedule | None = None) -> ValidationReport:
    """Check ratio fidelity and cross-ratio area parity.

    Per-scale deviations are reported for every k; pass/fail flags apply the
    final-scale tolerances (early scales are legitimately coarse).
    """
    if reference is None:
        reference = schedule_for(1.0)
    rep = ValidationReport(schedule_id=schedule.schedule_id, stride=schedule.stride)
    r = schedule.aspect_ratio
    areas = []
    for k, (h, w) in enumerate(schedule.scales):
        rep.ratio_deviation.append(abs(h / w - r) / r)
        areas.append(h * w)
        if k < reference.K:
            ref_h, ref_w = reference.scales[k]
            ref_area = ref_h * ref_w
            rep.area_deviation.append(abs(h * w - ref_area) / ref_area)
    rep.final_ratio_ok = rep.ratio_deviation[-1] <= RATIO_TOLERANCE
    if len(rep.area_deviation) == schedule.K:
        rep.final_area_ok = rep.area_deviation[-1] <= AREA_TOLERANCE
        ref_cells = sum(h * w for h, w in reference.scales[:schedule.K])
        rep.cells_parity_ok = abs(schedule.total_cells - ref_cells) / ref_cells <= AREA_TOLERANCE
    rep.monotone_area_ok = all(a1 > a0 for a0, a1 in zip(areas, areas[1:]))
    return rep
