"""Binary-tree data model, input generators, and a brute-force oracle sum.

Trees are stored in an arena of parallel numpy arrays (value, first child,
second child) so that multi-million-node inputs build in linear time and can
be handed to compiled kernels directly.  `Node` is a lightweight handle into
the arena; absent children are represented by None at the handle level and
by -1 inside the arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

NULL = -1

U64 = 1 << 64
I64_MAX = (1 << 63) - 1


def wrap64(x: int) -> int:
    """Wrap an unbounded int to signed 64-bit two's complement."""
    x &= U64 - 1
    return x - U64 if x > I64_MAX else x


class TreeKind(enum.Enum):
    PERFECT = "perfect"
    RANDOM = "random"
    CHAINS = "chains"
    CHAIN = "chain"


class ValueMode(enum.Enum):
    ALL_ONES = "ones"
    SEQUENTIAL = "seq"
    RANDOM_SMALL = "rand"


class TreeSpecError(ValueError):
    pass


@dataclass(frozen=True)
class TreeSpec:
    """Declarative description of a benchmark input tree."""

    kind: TreeKind
    height: int = 0
    count: int = 0
    path_len: int = 0
    seed: int = 0
    value_mode: ValueMode = ValueMode.ALL_ONES

    def validate(self) -> None:
        k = self.kind
        if k in (TreeKind.PERFECT, TreeKind.CHAINS):
            if self.height < 1:
                raise TreeSpecError(f"{k.value} spec needs height >= 1, got {self.height}")
            if self.height > 34:
                raise TreeSpecError(f"height {self.height} exceeds the sane memory bound")
        if k in (TreeKind.RANDOM, TreeKind.CHAINS, TreeKind.CHAIN):
            if self.count < 1:
                raise TreeSpecError(f"{k.value} spec needs count >= 1, got {self.count}")
        if k is TreeKind.CHAINS:
            if self.path_len < 1:
                raise TreeSpecError(f"chains spec needs path_len >= 1, got {self.path_len}")
            if self.count > (1 << (self.height - 1)):
                raise TreeSpecError(
                    f"chains spec asks for {self.count} paths but the base tree "
                    f"has only {1 << (self.height - 1)} leaves"
                )

    def node_count(self) -> int:
        """Exact number of nodes `generate` will produce."""
        self.validate()
        if self.kind is TreeKind.PERFECT:
            return (1 << self.height) - 1
        if self.kind is TreeKind.RANDOM:
            return self.count
        if self.kind is TreeKind.CHAINS:
            return (1 << self.height) - 1 + self.count * self.path_len
        return self.count


class TreeArena:
    """Pool of nodes backing one generated tree.  Immutable once built."""

    __slots__ = ("val", "c0", "c1", "root_index")

    def __init__(self, val, c0, c1, root_index=0):
        self.val = val
        self.c0 = c0
        self.c1 = c1
        self.root_index = int(root_index)

    def __len__(self):
        return len(self.val)

    def root(self):
        return Node(self, self.root_index) if len(self.val) else None

    def node(self, index):
        return Node(self, index)

    def value_sum(self) -> int:
        """Wrapping int64 sum over the raw value array (no traversal)."""
        return int(_array_wrapping_sum(self.val))


class Node:
    """Handle to one tree node: an int64 payload plus two optional branches."""

    __slots__ = ("arena", "index")

    def __init__(self, arena: TreeArena, index: int):
        self.arena = arena
        self.index = index

    @property
    def v(self) -> int:
        return int(self.arena.val[self.index])

    @property
    def bs(self):
        a = self.arena
        i0 = a.c0[self.index]
        i1 = a.c1[self.index]
        return (
            Node(a, int(i0)) if i0 != NULL else None,
            Node(a, int(i1)) if i1 != NULL else None,
        )

    def __eq__(self, other):
        return (
            isinstance(other, Node)
            and other.arena is self.arena
            and other.index == self.index
        )

    def __hash__(self):
        return hash((id(self.arena), self.index))

    def __repr__(self):
        return f"Node(v={self.v}, index={self.index})"


@njit(cache=True)
def _array_wrapping_sum(val):
    s = np.int64(0)
    for i in range(len(val)):
        s += val[i]
    return s


@njit(cache=True)
def _arena_depth(c0, c1, root):
    n = len(c0)
    stack_node = np.empty(n + 1, dtype=np.int64)
    stack_depth = np.empty(n + 1, dtype=np.int64)
    stack_node[0] = root
    stack_depth[0] = 1
    top = 1
    deepest = np.int64(0)
    while top > 0:
        top -= 1
        node = stack_node[top]
        d = stack_depth[top]
        if d > deepest:
            deepest = d
        a = c0[node]
        b = c1[node]
        if a != NULL:
            stack_node[top] = a
            stack_depth[top] = d + 1
            top += 1
        if b != NULL:
            stack_node[top] = b
            stack_depth[top] = d + 1
            top += 1
    return deepest


def arena_depth(arena: "TreeArena", root_index: int) -> int:
    """Tree depth straight off the arena arrays; O(n) compiled walk."""
    if root_index == NULL or len(arena) == 0:
        return 0
    return int(_arena_depth(arena.c0, arena.c1, root_index))


@njit(cache=True)
def _fill_values(val, mode, seed):
    # mode: 0 ones, 1 sequential (1..n in creation order), 2 small randoms
    n = len(val)
    if mode == 0:
        for i in range(n):
            val[i] = 1
    elif mode == 1:
        for i in range(n):
            val[i] = i + 1
    else:
        np.random.seed(seed)
        for i in range(n):
            val[i] = np.random.randint(-128, 128)


@njit(cache=True)
def _build_perfect(height):
    n = (1 << height) - 1
    c0 = np.full(n, NULL, dtype=np.int64)
    c1 = np.full(n, NULL, dtype=np.int64)
    for i in range(n):
        a = 2 * i + 1
        b = 2 * i + 2
        if a < n:
            c0[i] = a
        if b < n:
            c1[i] = b
    return c0, c1


@njit(cache=True)
def _build_chain(count):
    c0 = np.full(count, NULL, dtype=np.int64)
    c1 = np.full(count, NULL, dtype=np.int64)
    for i in range(count - 1):
        c0[i] = i + 1
    return c0, c1


@njit(cache=True)
def _build_chains(height, count, path_len, seed):
    base = (1 << height) - 1
    n = base + count * path_len
    c0 = np.full(n, NULL, dtype=np.int64)
    c1 = np.full(n, NULL, dtype=np.int64)
    for i in range(base):
        a = 2 * i + 1
        b = 2 * i + 2
        if a < base:
            c0[i] = a
        if b < base:
            c1[i] = b
    # pick `count` distinct leaves of the base tree, then hang a
    # first-branch-only path of path_len nodes off each
    nleaves = 1 << (height - 1)
    first_leaf = (1 << (height - 1)) - 1
    leaves = np.arange(first_leaf, first_leaf + nleaves)
    np.random.seed(seed)
    nxt = base
    for i in range(count):
        j = i + np.random.randint(0, nleaves - i)
        leaves[i], leaves[j] = leaves[j], leaves[i]
        at = leaves[i]
        for _ in range(path_len):
            c0[at] = nxt
            at = nxt
            nxt += 1
    return c0, c1


@njit(cache=True)
def _build_random(count, seed):
    c0 = np.full(count, NULL, dtype=np.int64)
    c1 = np.full(count, NULL, dtype=np.int64)
    # empty slots of the tree built so far, as (parent, branch) pairs;
    # each insertion fills one chosen uniformly at random
    slot_parent = np.empty(count + 1, dtype=np.int64)
    slot_branch = np.empty(count + 1, dtype=np.int64)
    slot_parent[0] = NULL
    slot_branch[0] = 0
    nslots = 1
    np.random.seed(seed)
    for j in range(count):
        r = np.random.randint(0, nslots)
        parent = slot_parent[r]
        branch = slot_branch[r]
        if parent != NULL:
            if branch == 0:
                c0[parent] = j
            else:
                c1[parent] = j
        nslots -= 1
        slot_parent[r] = slot_parent[nslots]
        slot_branch[r] = slot_branch[nslots]
        slot_parent[nslots] = j
        slot_branch[nslots] = 0
        slot_parent[nslots + 1] = j
        slot_branch[nslots + 1] = 1
        nslots += 2
    return c0, c1


_MODE_CODE = {ValueMode.ALL_ONES: 0, ValueMode.SEQUENTIAL: 1, ValueMode.RANDOM_SMALL: 2}


def generate(spec: TreeSpec):
    """Build the tree described by `spec`; returns its root Node.

    Deterministic: identical specs (seed included) produce identical trees.
    """
    spec.validate()
    if spec.kind is TreeKind.PERFECT:
        c0, c1 = _build_perfect(spec.height)
    elif spec.kind is TreeKind.CHAIN:
        c0, c1 = _build_chain(spec.count)
    elif spec.kind is TreeKind.CHAINS:
        c0, c1 = _build_chains(spec.height, spec.count, spec.path_len, spec.seed)
    else:
        c0, c1 = _build_random(spec.count, spec.seed)
    val = np.empty(len(c0), dtype=np.int64)
    # value seed is offset so value noise and shape noise are distinct streams
    _fill_values(val, _MODE_CODE[spec.value_mode], (spec.seed ^ 0x9E3779B9) & 0x7FFFFFFF)
    return TreeArena(val, c0, c1).root()


def from_nested(nested) -> Node | None:
    """Build a tiny tree from nested tuples (v, first, second); None is empty.

    Test/fixture helper, not a bulk generator.
    """
    if nested is None:
        return None
    flat_val, flat_c0, flat_c1 = [], [], []

    def emit(t):
        v, b0, b1 = t
        i = len(flat_val)
        flat_val.append(v)
        flat_c0.append(NULL)
        flat_c1.append(NULL)
        if b0 is not None:
            flat_c0[i] = emit(b0)
        if b1 is not None:
            flat_c1[i] = emit(b1)
        return i

    emit(nested)
    arena = TreeArena(
        np.array(flat_val, dtype=np.int64),
        np.array(flat_c0, dtype=np.int64),
        np.array(flat_c1, dtype=np.int64),
    )
    return arena.root()


def oracle_sum(root: Node | None) -> int:
    """Exact tree sum by an explicit worklist walk.

    Deliberately independent of every traversal variant under test: no
    recursion, no continuation machinery, wrapping 64-bit arithmetic.
    """
    if root is None:
        return 0
    total = 0
    work = [root]
    while work:
        n = work.pop()
        total = wrap64(total + n.v)
        b0, b1 = n.bs
        if b0 is not None:
            work.append(b0)
        if b1 is not None:
            work.append(b1)
    return total


def node_count(root: Node | None) -> int:
    """Count reachable nodes by worklist walk."""
    if root is None:
        return 0
    count = 0
    work = [root]
    while work:
        n = work.pop()
        count += 1
        b0, b1 = n.bs
        if b0 is not None:
            work.append(b0)
        if b1 is not None:
            work.append(b1)
    return count


def tree_depth(root: Node | None) -> int:
    """Longest root-to-leaf path length, by worklist walk."""
    if root is None:
        return 0
    deepest = 0
    work = [(root, 1)]
    while work:
        n, d = work.pop()
        if d > deepest:
            deepest = d
        b0, b1 = n.bs
        if b0 is not None:
            work.append((b0, d + 1))
        if b1 is not None:
            work.append((b1, d + 1))
    return deepest


def estimated_depth(spec: TreeSpec) -> int:
    """Cheap upper bound on tree depth, used for call-stack guards."""
    if spec.kind is TreeKind.PERFECT:
        return spec.height
    if spec.kind is TreeKind.CHAIN:
        return spec.count
    if spec.kind is TreeKind.CHAINS:
        return spec.height + spec.path_len
    return spec.count  # random trees: worst case, actual depth is ~log


_KIND_BY_NAME = {k.value: k for k in TreeKind}
_MODE_BY_NAME = {m.value: m for m in ValueMode}


def format_spec(spec: TreeSpec) -> str:
    """One-line key=value rendering, the fixture wire format."""
    parts = [f"kind={spec.kind.value}"]
    if spec.kind in (TreeKind.PERFECT, TreeKind.CHAINS):
        parts.append(f"height={spec.height}")
    if spec.kind in (TreeKind.RANDOM, TreeKind.CHAINS, TreeKind.CHAIN):
        parts.append(f"count={spec.count}")
    if spec.kind is TreeKind.CHAINS:
        parts.append(f"path_len={spec.path_len}")
    parts.append(f"seed={spec.seed}")
    parts.append(f"values={spec.value_mode.value}")
    return " ".join(parts)


def parse_spec(text: str) -> TreeSpec:
    """Parse the key=value format produced by format_spec.

    Whitespace and newlines both separate entries, so fixture files may put
    one pair per line.
    """
    fields = {}
    for token in text.split():
        if "=" not in token:
            raise TreeSpecError(f"malformed spec token {token!r}")
        key, _, value = token.partition("=")
        fields[key] = value
    try:
        kind = _KIND_BY_NAME[fields.pop("kind")]
    except KeyError:
        raise TreeSpecError(f"spec text needs a valid kind= entry: {text!r}") from None
    mode = _MODE_BY_NAME.get(fields.pop("values", "ones"))
    if mode is None:
        raise TreeSpecError(f"unknown values= mode in {text!r}")
    spec = TreeSpec(kind=kind, value_mode=mode)
    for key, value in fields.items():
        if key not in ("height", "count", "path_len", "seed"):
            raise TreeSpecError(f"unknown spec key {key!r}")
        spec = replace(spec, **{key: int(value)})
    spec.validate()
    return spec
