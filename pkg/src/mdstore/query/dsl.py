# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Range-query language.

Grammar (keywords are case-insensitive)::

    query      := [head] ["where" predicate ("and" predicate)*]
                  ["order" "by" FIELD ["asc" | "desc"]] ["limit" INT]
    head       := "count" "(" "*" ")" [scale]
                | ("avg" | "min" | "max") "(" FIELD ")" [scale]
                | ["distinct"] ("*" | FIELD ("," FIELD)*)
    scale      := "/" NUMBER
    predicate  := FIELD "in" ("[" | "(") literal "," literal ("]" | ")")
                | FIELD ("=" | ">=" | "<=" | ">" | "<") literal
    literal    := NUMBER | 'ISO-8601 timestamp'

Square brackets are inclusive, parentheses exclusive. Only indexing dimensions may be
bounded; several predicates on one dimension are intersected. Timestamps are accepted
for epoch dimensions only.

Example::

    avg(passenger_count) where pickup_latitude in [40.76, 40.78]
        and pickup_longitude >= -73.89 and pickup_longitude < -73.88
"""

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np

from ..exceptions import DimensionError, QuerySyntaxError, QueryValidationError
from ..record import INT64_MAX, INT64_MIN, FieldType, RecordDescriptor, order_keys, parse_epoch

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
      | (?P<string>'[^']*'|"[^"]*")
      | (?P<op>>=|<=|=|>|<|\(|\)|\[|\]|,|\*|/)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)

_KEYWORDS = {"where", "and", "in", "order", "by", "asc", "desc", "limit", "distinct"}


class Aggregate(str, Enum):
    NONE = "none"
    COUNT_ALL = "count"
    AVG = "avg"
    MIN = "min"
    MAX = "max"


@dataclass(frozen=True)
class Bound:
    value: int | float
    inclusive: bool = True


@dataclass(frozen=True)
class DimRange:
    """Optional low and high bound on one indexing dimension."""

    low: Bound | None = None
    high: Bound | None = None

    def intersect(self, other: "DimRange") -> "DimRange":
        return DimRange(_tighter(self.low, other.low, 1), _tighter(self.high, other.high, -1))


def _tighter(a: Bound | None, b: Bound | None, direction: int) -> Bound | None:
    if a is None or b is None:
        return a if b is None else b
    if a.value != b.value:
        return a if (a.value - b.value) * direction > 0 else b
    return a if not a.inclusive else b


@dataclass(frozen=True)
class RangeQuery:
    """A conjunctive range query with an optional aggregate or projection."""

    ranges: Dict[str, DimRange] = field(default_factory=dict)
    aggregate: Aggregate = Aggregate.NONE
    aggregate_field: str | None = None
    scale: float | None = None
    #: Projected fields; None projects every field.
    projection: Tuple[str, ...] | None = None
    distinct: bool = False
    #: (field, descending)
    order_by: Tuple[str, bool] | None = None
    limit: int | None = None
    text: str = ""

    @property
    def is_aggregate(self) -> bool:
        return self.aggregate is not Aggregate.NONE

    def validate(self, desc: RecordDescriptor) -> "RangeQuery":
        """Check the query against a descriptor.

        Raises:
            QueryValidationError: on the first inconsistency.
        """
        for name, dim_range in self.ranges.items():
            if desc.dim_index(name) is None:
                self._field(desc, name)
                raise QueryValidationError(f"Cannot bound '{name}': not an indexing dimension")
            low, high = dim_range.low, dim_range.high
            for bound in (low, high):
                if bound is not None and math.isnan(bound.value):
                    raise QueryValidationError(f"NaN bound on '{name}'")
            if low is not None and high is not None and low.value > high.value:
                raise QueryValidationError(
                    f"Low bound {low.value} exceeds high bound {high.value} on '{name}'"
                )
        if self.aggregate in (Aggregate.AVG, Aggregate.MIN, Aggregate.MAX):
            assert self.aggregate_field is not None
            spec = self._field(desc, self.aggregate_field)
            if not spec.field_type.is_numeric:
                raise QueryValidationError(
                    f"{self.aggregate.value}() needs a numeric field, "
                    f"'{self.aggregate_field}' is {spec.field_type.value}"
                )
        if self.is_aggregate and (self.order_by is not None or self.limit is not None):
            raise QueryValidationError("order by and limit apply to projections only")
        if self.scale is not None and self.scale == 0:
            raise QueryValidationError("Cannot scale an aggregate by zero")
        for name in self.projection or ():
            self._field(desc, name)
        if self.order_by is not None:
            self._field(desc, self.order_by[0])
            if self.projection is not None and self.order_by[0] not in self.projection:
                raise QueryValidationError(
                    f"order by field '{self.order_by[0]}' is not projected"
                )
        if self.limit is not None and self.limit < 0:
            raise QueryValidationError(f"Negative limit {self.limit}")
        return self

    @staticmethod
    def _field(desc: RecordDescriptor, name: str):
        try:
            return desc.field(name)
        except DimensionError:
            raise QueryValidationError(f"Unknown field '{name}'")

    def key_bounds(self, desc: RecordDescriptor) -> Tuple[np.ndarray, np.ndarray] | None:
        """Inclusive order-key interval of every indexing dimension, or None when some
        interval is empty."""
        lo = np.full(desc.dims, INT64_MIN, dtype=np.int64)
        hi = np.full(desc.dims, INT64_MAX, dtype=np.int64)
        for name, dim_range in self.ranges.items():
            d = desc.dim_index(name)
            assert d is not None
            kind = desc.dim_kinds[d]
            if dim_range.low is not None:
                lo[d] = _low_key(dim_range.low, kind)
            if dim_range.high is not None:
                hi[d] = _high_key(dim_range.high, kind)
        if np.any(lo > hi):
            return None
        return lo, hi


def _clamp(value: int) -> int:
    return max(INT64_MIN, min(INT64_MAX, value))


def _float32_key(value: float) -> int:
    return int(order_keys(np.array([value], dtype=np.float32), FieldType.FLOAT32)[0])


def _low_key(bound: Bound, kind: FieldType) -> int:
    """Smallest key satisfying a low bound."""
    v = bound.value
    if kind is FieldType.FLOAT32:
        f = np.float32(v)
        if float(f) < v or (not bound.inclusive and float(f) <= v):
            f = np.nextafter(f, np.float32(np.inf))
        return _float32_key(float(f))
    if isinstance(v, float) and math.isinf(v):
        return INT64_MIN if v < 0 else INT64_MAX
    if bound.inclusive:
        return _clamp(math.ceil(v))
    return _clamp(math.floor(v) + 1)


def _high_key(bound: Bound, kind: FieldType) -> int:
    """Largest key satisfying a high bound."""
    v = bound.value
    if kind is FieldType.FLOAT32:
        f = np.float32(v)
        if float(f) > v or (not bound.inclusive and float(f) >= v):
            f = np.nextafter(f, np.float32(-np.inf))
        return _float32_key(float(f))
    if isinstance(v, float) and math.isinf(v):
        return INT64_MIN if v < 0 else INT64_MAX
    if bound.inclusive:
        return _clamp(math.floor(v))
    return _clamp(math.ceil(v) - 1)


class _Parser:
    def __init__(self, text: str, desc: RecordDescriptor) -> None:
        self.text = text
        self.desc = desc
        self.tokens: List[Tuple[str, str, int]] = []
        position = 0
        while text[position:].strip():
            match = _TOKEN.match(text, position)
            if match is None or match.lastgroup is None:
                start = len(text) - len(text[position:].lstrip())
                raise QuerySyntaxError(f"Unexpected character {text[start]!r}", start, text)
            kind = match.lastgroup
            self.tokens.append((kind, match.group(kind), match.start(kind)))
            position = match.end()
        self.index = 0

    def error(self, message: str, back: int = 0) -> QuerySyntaxError:
        index = self.index - back
        if index < len(self.tokens):
            return QuerySyntaxError(message, self.tokens[index][2], self.text)
        return QuerySyntaxError(message, len(self.text), self.text)

    def peek(self) -> Tuple[str, str, int] | None:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def at_keyword(self, *words: str) -> bool:
        token = self.peek()
        return token is not None and token[0] == "name" and token[1].lower() in words

    def at_op(self, *ops: str) -> bool:
        token = self.peek()
        return token is not None and token[0] == "op" and token[1] in ops

    def take(self) -> Tuple[str, str, int]:
        token = self.peek()
        if token is None:
            raise self.error("Unexpected end of query")
        self.index += 1
        return token

    def expect_op(self, *ops: str) -> str:
        if not self.at_op(*ops):
            raise self.error("Expected " + " or ".join(f"'{op}'" for op in ops))
        return self.take()[1]

    def expect_keyword(self, word: str) -> None:
        if not self.at_keyword(word):
            raise self.error(f"Expected '{word}'")
        self.take()

    def field_name(self) -> str:
        token = self.peek()
        if token is None or token[0] != "name" or token[1].lower() in _KEYWORDS:
            raise self.error("Expected a field name")
        self.take()
        return token[1]

    def number(self) -> int | float:
        token = self.peek()
        if token is None or token[0] != "number":
            raise self.error("Expected a number")
        self.take()
        text = token[1]
        if any(c in text for c in ".eE"):
            return float(text)
        return int(text)

    def literal(self, name: str) -> int | float:
        """A number, or a quoted timestamp converted to epoch seconds."""
        token = self.peek()
        if token is None or token[0] != "string":
            return self.number()
        d = self.desc.dim_index(name)
        if d is None or self.desc.dim_kinds[d] is not FieldType.EPOCH:
            raise QueryValidationError(
                f"Timestamp literal {token[1]} used on non-epoch field '{name}'"
            )
        self.take()
        try:
            return parse_epoch(token[1][1:-1])
        except ValueError:
            raise self.error(f"Invalid timestamp {token[1]}", back=1)

    def parse(self) -> RangeQuery:
        values: Dict[str, Any] = {}
        self.head(values)
        ranges: Dict[str, DimRange] = {}
        if self.at_keyword("where"):
            self.take()
            self.predicate(ranges)
            while self.at_keyword("and"):
                self.take()
                self.predicate(ranges)
        if self.at_keyword("order"):
            self.take()
            self.expect_keyword("by")
            name = self.field_name()
            descending = False
            if self.at_keyword("asc", "desc"):
                descending = self.take()[1].lower() == "desc"
            values["order_by"] = (name, descending)
        if self.at_keyword("limit"):
            self.take()
            limit = self.number()
            if not isinstance(limit, int):
                raise self.error("limit needs an integer", back=1)
            values["limit"] = limit
        token = self.peek()
        if token is not None:
            raise self.error(f"Unexpected '{token[1]}'")
        return RangeQuery(ranges=ranges, text=self.text, **values)

    def head(self, values: Dict[str, Any]) -> None:
        if self.at_keyword("count", "avg", "min", "max") and self._next_is_paren():
            aggregate = Aggregate(self.take()[1].lower())
            self.expect_op("(")
            if aggregate is Aggregate.COUNT_ALL:
                self.expect_op("*")
            else:
                values["aggregate_field"] = self.field_name()
            self.expect_op(")")
            values["aggregate"] = aggregate
            if self.at_op("/"):
                self.take()
                values["scale"] = float(self.number())
            return
        if self.at_keyword("distinct"):
            self.take()
            values["distinct"] = True
        if self.at_op("*"):
            self.take()
            return
        if self.peek() is None or self.at_keyword("where", "order", "limit"):
            if values.get("distinct"):
                raise self.error("Expected fields after 'distinct'")
            return
        names = [self.field_name()]
        while self.at_op(","):
            self.take()
            names.append(self.field_name())
        values["projection"] = tuple(names)

    def _next_is_paren(self) -> bool:
        following = self.index + 1
        return following < len(self.tokens) and self.tokens[following][1] == "("

    def predicate(self, ranges: Dict[str, DimRange]) -> None:
        name = self.field_name()
        if self.at_keyword("in"):
            self.take()
            opening = self.expect_op("[", "(")
            low = self.literal(name)
            self.expect_op(",")
            high = self.literal(name)
            closing = self.expect_op("]", ")")
            new = DimRange(Bound(low, opening == "["), Bound(high, closing == "]"))
        else:
            if not self.at_op("=", ">=", "<=", ">", "<"):
                raise self.error("Expected 'in' or a comparison operator")
            op = self.take()[1]
            value = self.literal(name)
            new = {
                "=": DimRange(Bound(value), Bound(value)),
                ">=": DimRange(low=Bound(value)),
                ">": DimRange(low=Bound(value, False)),
                "<=": DimRange(high=Bound(value)),
                "<": DimRange(high=Bound(value, False)),
            }[op]
        ranges[name] = ranges[name].intersect(new) if name in ranges else new


def parse_query(text: str, desc: RecordDescriptor) -> RangeQuery:
    """Parse query text and validate it against ``desc``.

    Raises:
        QuerySyntaxError: when the text does not follow the grammar; carries the
            character position.
        QueryValidationError: when the query does not fit the descriptor.
    """
    parser = _Parser(text, desc)
    if not parser.tokens:
        raise QuerySyntaxError("Empty query", 0, text)
    return parser.parse().validate(desc)
