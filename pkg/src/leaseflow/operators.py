"""Stateless operator logic executed by actor instances.

Operators never hold state of their own; everything durable lives in the
instance's managed partial, so one operator object can serve every instance
of a function. Critical messages here are watermarks: an integer epoch. A
windowed operator folds data into its partial and, on the last critical of
a barrier, emits the consolidated result downstream, resets, and propagates
the watermark.
"""

from __future__ import annotations

from typing import Any, Optional

from .model import Granularity
from .protocol import Operator, OperatorContext


class WindowOperator(Operator):
    """Aggregate data until a watermark closes the window.

    The emitted result is the consolidated aggregate; the watermark is
    propagated as a critical output so downstream functions barrier in turn.
    """

    resets_on_critical = True

    def __init__(self, result_size_bytes: int = 64,
                 propagate: Granularity = Granularity.SYNC_CHANNEL):
        self.result_size_bytes = result_size_bytes
        self.propagate = propagate

    def on_data(self, ctx: OperatorContext, value: Any, key: Optional[str]) -> None:
        ctx.update_state(value)

    def on_critical(self, ctx: OperatorContext, value: Any) -> None:
        if ctx.cm_index != ctx.cm_total - 1:
            return  # merged barrier: act once, on the last critical
        result = ctx.state_result()
        epoch = int(value) if isinstance(value, (int, float)) else 0
        ctx.emit(result, key=None, size_bytes=self.result_size_bytes)
        ctx.reset_state()
        ctx.emit(value, critical=True, epoch=epoch, granularity=self.propagate)


class MapOperator(Operator):
    """Apply a named pure transform and pass watermarks through."""

    resets_on_critical = False

    TRANSFORMS = {
        "identity": lambda v: v,
        "double": lambda v: v * 2,
        "negate": lambda v: -v,
        "increment": lambda v: v + 1,
    }

    def __init__(self, transform: str = "identity",
                 propagate: Granularity = Granularity.SYNC_CHANNEL):
        if transform not in self.TRANSFORMS:
            raise ValueError(f"unknown transform {transform!r}")
        self.transform_name = transform
        self.fn = self.TRANSFORMS[transform]
        self.propagate = propagate

    def on_data(self, ctx: OperatorContext, value: Any, key: Optional[str]) -> None:
        ctx.emit(self.fn(value), key=key)

    def on_critical(self, ctx: OperatorContext, value: Any) -> None:
        if ctx.cm_index != ctx.cm_total - 1:
            return
        epoch = int(value) if isinstance(value, (int, float)) else 0
        ctx.emit(value, critical=True, epoch=epoch, granularity=self.propagate)


class FilterOperator(Operator):
    resets_on_critical = False

    PREDICATES = {
        "even": lambda v: v % 2 == 0,
        "odd": lambda v: v % 2 == 1,
        "positive": lambda v: v > 0,
        "all": lambda v: True,
    }

    def __init__(self, predicate: str = "all",
                 propagate: Granularity = Granularity.SYNC_CHANNEL):
        if predicate not in self.PREDICATES:
            raise ValueError(f"unknown predicate {predicate!r}")
        self.predicate_name = predicate
        self.fn = self.PREDICATES[predicate]
        self.propagate = propagate

    def on_data(self, ctx: OperatorContext, value: Any, key: Optional[str]) -> None:
        if self.fn(value):
            ctx.emit(value, key=key)

    def on_critical(self, ctx: OperatorContext, value: Any) -> None:
        if ctx.cm_index != ctx.cm_total - 1:
            return
        epoch = int(value) if isinstance(value, (int, float)) else 0
        ctx.emit(value, critical=True, epoch=epoch, granularity=self.propagate)


class KeyByOperator(Operator):
    """Re-key traffic by value modulo a bucket count."""

    resets_on_critical = False

    def __init__(self, buckets: int = 8,
                 propagate: Granularity = Granularity.SYNC_CHANNEL):
        if buckets < 1:
            raise ValueError("buckets must be positive")
        self.buckets = buckets
        self.propagate = propagate

    def on_data(self, ctx: OperatorContext, value: Any, key: Optional[str]) -> None:
        ctx.emit(value, key=str(int(value) % self.buckets))

    def on_critical(self, ctx: OperatorContext, value: Any) -> None:
        if ctx.cm_index != ctx.cm_total - 1:
            return
        epoch = int(value) if isinstance(value, (int, float)) else 0
        ctx.emit(value, critical=True, epoch=epoch, granularity=self.propagate)


class SinkOperator(Operator):
    """Terminal function: fold results in, emit nothing."""

    resets_on_critical = False

    def on_data(self, ctx: OperatorContext, value: Any, key: Optional[str]) -> None:
        ctx.update_state(value)

    def on_critical(self, ctx: OperatorContext, value: Any) -> None:
        pass


OPERATOR_KINDS = ("window", "map", "filter", "key_by", "sink")


def build_operator(kind: str, params: Optional[dict] = None) -> Operator:
    params = dict(params or {})
    propagate = Granularity(params.pop("propagate", "SYNC_CHANNEL"))
    if kind == "window":
        return WindowOperator(
            result_size_bytes=int(params.pop("result_size_bytes", 64)),
            propagate=propagate)
    if kind == "map":
        return MapOperator(transform=params.pop("transform", "identity"),
                           propagate=propagate)
    if kind == "filter":
        return FilterOperator(predicate=params.pop("predicate", "all"),
                              propagate=propagate)
    if kind == "key_by":
        return KeyByOperator(buckets=int(params.pop("buckets", 8)),
                             propagate=propagate)
    if kind == "sink":
        return SinkOperator()
    raise ValueError(f"unknown operator kind {kind!r}; expected one of {OPERATOR_KINDS}")
