"""Paired message-space / probability-space splay trees.

The pseudo-posterior is a piecewise-linear increasing map F from message
space [0, 1] onto probability space [0, 1].  Both trees are leaf-oriented:
each leaf is one linear piece, each internal node is one breakpoint, and a
node in one tree is paired with the node for the same piece or breakpoint in
the other.  Rotations preserve in-order sequences, so the trees may be
shaped differently while the pairing stays valid.

Message-space lengths are integers in units of 2**-P (exact, arbitrary
size).  Probability-space nodes keep ``mid`` (left share of the subtree
mass) together with its complement ``cmid``; both are updated by products
and sums of positive numbers only, so tiny masses keep their relative
accuracy.

Debug dump format (one line per node, message tree first, each tree in
pre-order)::

    m<i> I|L <len as hex int> p<j>
    p<j> I <mid.hex()>/<cmid.hex()> m<i>
    p<j> L - m<i>

Ids are pre-order positions, so equal trees give byte-equal dumps.
"""
from __future__ import annotations

import hashlib
import math
from fractions import Fraction

EDGE_TOL = 1e-15


class DegenerateBreakpoint(ValueError):
    pass


class UnnormalizedRescale(ValueError):
    pass


class MsgNode:
    __slots__ = ("parent", "left", "right", "len", "pair")

    def __init__(self, length: int, parent=None):
        self.parent = parent
        self.left = None
        self.right = None
        self.len = length
        self.pair = None


class ProbNode:
    __slots__ = ("parent", "left", "right", "mid", "cmid", "pair")

    def __init__(self, parent=None):
        self.parent = parent
        self.left = None
        self.right = None
        self.mid = 0.5
        self.cmid = 0.5
        self.pair = None


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _log(v) -> float:
    return math.log(v) if v > 0 else -math.inf


class DualTree:
    """Pseudo-posterior map with splay-balanced query and update routines.

    ``ops`` counts node visits plus rotations (unit-cost word operations);
    ``rotations`` counts rotations alone.
    """

    def __init__(self, precision_bits: int = 64):
        if precision_bits < 1:
            raise ValueError("precision_bits must be positive")
        self.precision_bits = precision_bits
        self.one = 1 << precision_bits
        a = MsgNode(self.one)
        b = ProbNode()
        a.pair, b.pair = b, a
        self.msg_root = a
        self.prob_root = b
        self.leaf_count = 1
        self.ops = 0
        self.rotations = 0

    # ------------------------------------------------------------------
    # fixed-point helpers
    def to_fixed(self, x) -> int:
        """Message-space position ``x`` (float, Fraction or int) as a P-bit integer."""
        if isinstance(x, float):
            if not 0.0 <= x <= 1.0:
                raise ValueError("message-space position must lie in [0, 1]")
            num, den = x.as_integer_ratio()
        else:
            q = Fraction(x)
            if not 0 <= q <= 1:
                raise ValueError("message-space position must lie in [0, 1]")
            num, den = q.numerator, q.denominator
        return (num << self.precision_bits) // den

    def message_point(self, k: int, count: int) -> int:
        """Fixed-point position of k/count (the right edge of message k)."""
        return (k << self.precision_bits) // count

    # ------------------------------------------------------------------
    # rotations and splaying
    def _rotate_prob(self, c: ProbNode) -> None:
        p = c.parent
        g = p.parent
        if p.left is c:
            sub = c.right
            a = p.mid * c.mid
            bm = p.mid * c.cmid
            cm = p.cmid
            side = bm + cm
            if side > 0:
                p.mid = bm / side
                p.cmid = cm / side
            tot = a + side
            if tot > 0:
                c.mid = a / tot
                c.cmid = side / tot
            p.left = sub
            sub.parent = p
            c.right = p
        else:
            sub = c.left
            a = p.mid
            bm = p.cmid * c.mid
            cm = p.cmid * c.cmid
            side = a + bm
            if side > 0:
                p.mid = a / side
                p.cmid = bm / side
            tot = side + cm
            if tot > 0:
                c.mid = side / tot
                c.cmid = cm / tot
            p.right = sub
            sub.parent = p
            c.left = p
        p.parent = c
        c.parent = g
        if g is None:
            self.prob_root = c
        elif g.left is p:
            g.left = c
        else:
            g.right = c

    def _rotate_msg(self, c: MsgNode) -> None:
        p = c.parent
        g = p.parent
        total = p.len
        if p.left is c:
            sub = c.right
            p.left = sub
            sub.parent = p
            p.len = sub.len + p.right.len
            c.right = p
        else:
            sub = c.left
            p.right = sub
            sub.parent = p
            p.len = p.left.len + sub.len
            c.left = p
        c.len = total
        p.parent = c
        c.parent = g
        if g is None:
            self.msg_root = c
        elif g.left is p:
            g.left = c
        else:
            g.right = c

    def _splay(self, x, rotate, top=None) -> None:
        """Rotate ``x`` up until its parent is ``top`` (the root when None)."""
        n = 0
        while x.parent is not top:
            p = x.parent
            g = p.parent
            if g is top:
                rotate(x)
                n += 1
            elif (g.left is p) == (p.left is x):
                rotate(p)
                rotate(x)
                n += 2
            else:
                rotate(x)
                rotate(x)
                n += 2
        self.rotations += n
        self.ops += n

    def splay_prob(self, node: ProbNode) -> None:
        self._splay(node, self._rotate_prob)

    def splay_msg(self, node: MsgNode) -> None:
        self._splay(node, self._rotate_msg)

    def rotate_to_root(self, node: ProbNode) -> None:
        """Splay an internal probability-space node to the root."""
        if node.left is None:
            raise ValueError("only internal (breakpoint) nodes can be rotated to the root")
        self.splay_prob(node)

    # ------------------------------------------------------------------
    # descents
    def _find_msg_leaf(self, xi: int):
        """Leaf containing fixed-point position ``xi`` and the offset inside it."""
        a = self.msg_root
        steps = 0
        while a.left is not None:
            ll = a.left.len
            if xi <= ll:
                a = a.left
            else:
                xi -= ll
                a = a.right
            steps += 1
        self.ops += steps + 1
        return a, xi

    def _find_prob_leaf(self, y: float):
        """Leaf containing probability position ``y``.

        Returns the leaf, the within-leaf fraction, and the nearest breakpoint
        ancestors on the left and right of the leaf (None at 0 or 1).
        """
        b = self.prob_root
        left_edge = None
        right_edge = None
        steps = 0
        while b.left is not None:
            mid = b.mid
            if y <= mid and mid > 0.0:
                y = y / mid
                right_edge = b
                b = b.left
            else:
                cm = b.cmid
                y = (y - mid) / cm if cm > 0.0 else 0.0
                left_edge = b
                b = b.right
            steps += 1
        self.ops += steps + 1
        if y < 0.0:
            y = 0.0
        elif y > 1.0:
            y = 1.0
        return b, y, left_edge, right_edge

    def _prob_position(self, b: ProbNode, frac: float) -> float:
        v = frac
        node = b
        steps = 0
        while node.parent is not None:
            p = node.parent
            if p.left is node:
                v = v * p.mid
            else:
                v = p.mid + v * p.cmid
            node = p
            steps += 1
        self.ops += steps
        return min(max(v, 0.0), 1.0)

    # ------------------------------------------------------------------
    # public operations
    def query_fixed(self, xi: int, splay: bool = True) -> float:
        if xi <= 0:
            return 0.0
        if xi >= self.one:
            return 1.0
        a, off = self._find_msg_leaf(xi)
        frac = off / a.len if a.len else 0.0
        b = a.pair
        v = self._prob_position(b, frac)
        if not splay:
            return v
        if a.parent is not None:
            self.splay_msg(a.parent)
        if b.parent is not None:
            self.splay_prob(b.parent)
        return v

    def query_msg_point(self, x) -> float:
        """Pseudo-posterior cdf at message-space position ``x``."""
        return self.query_fixed(self.to_fixed(x))

    def scale_interval(self, y: float, r: float) -> None:
        """Map [0, y] linearly onto [0, r] and [y, 1] onto [r, 1]."""
        if not (EDGE_TOL < y < 1 - EDGE_TOL and EDGE_TOL < r < 1 - EDGE_TOL):
            raise DegenerateBreakpoint(f"breakpoint {y!r} -> {r!r} touches the interval ends")
        self._scale(y, r, 1.0 - r)

    def _scale(self, y: float, r: float, rc: float) -> ProbNode:
        b, frac, left_edge, right_edge = self._find_prob_leaf(y)
        if frac <= EDGE_TOL and left_edge is not None:
            node = left_edge
        elif frac >= 1.0 - EDGE_TOL and right_edge is not None:
            node = right_edge
        else:
            node = self._split_leaf(b, frac)
        self.splay_prob(node)
        node.mid = r
        node.cmid = rc
        return node

    def _zero_segment(self, lo: ProbNode | None, hi: ProbNode | None) -> None:
        """Give the region between breakpoint nodes ``lo`` and ``hi`` zero mass."""
        if lo is None:
            self.splay_prob(hi)
            hi.mid, hi.cmid = 0.0, 1.0
            return
        if hi is None:
            self.splay_prob(lo)
            lo.mid, lo.cmid = 1.0, 0.0
            return
        self.splay_prob(lo)
        self._splay(hi, self._rotate_prob, top=lo)
        keep = lo.cmid * hi.cmid
        hi.mid, hi.cmid = 0.0, 1.0
        tot = lo.mid + keep
        lo.mid, lo.cmid = lo.mid / tot, keep / tot

    def _split_leaf(self, b: ProbNode, frac: float) -> ProbNode:
        a = b.pair
        num, den = frac.as_integer_ratio()
        left_len = (a.len * num) // den
        bl = ProbNode(b)
        br = ProbNode(b)
        b.left, b.right = bl, br
        b.mid = frac
        b.cmid = 1.0 - frac
        al = MsgNode(left_len, a)
        ar = MsgNode(a.len - left_len, a)
        a.left, a.right = al, ar
        al.pair, bl.pair = bl, al
        ar.pair, br.pair = br, ar
        self.leaf_count += 1
        self.ops += 2
        self.splay_msg(a)
        return b

    def apply_piecewise_rescale(self, breakpoints, factors, check: bool = True) -> None:
        """Compose the map with a piecewise-linear rescale of probability space.

        ``breakpoints`` are sorted positions strictly inside (0, 1); segment k
        (between breakpoints k-1 and k) has its mass multiplied by
        ``factors[k]``.  Segment masses must already sum to one.
        """
        k = len(breakpoints)
        if len(factors) != k + 1:
            raise ValueError("need one factor per segment")
        if k == 0:
            if check and abs(factors[0] - 1.0) > 1e-9:
                raise UnnormalizedRescale(f"single segment factor {factors[0]!r} != 1")
            return
        prev = 0.0
        seg = []
        for p in breakpoints:
            if not 0.0 < p < 1.0 or p <= prev:
                raise ValueError("breakpoints must be strictly increasing inside (0, 1)")
            seg.append(p - prev)
            prev = p
        seg.append(1.0 - prev)
        target = [f * a for f, a in zip(factors, seg)]
        if check and abs(math.fsum(target) - 1.0) > 1e-9:
            raise UnnormalizedRescale(f"segment masses sum to {math.fsum(target)!r}")
        # Zero factors would erase the shape information the next breakpoint
        # needs, so such segments get a placeholder factor first and are
        # collapsed afterwards.
        zeros = [j for j, f in enumerate(factors) if f <= 0.0]
        if zeros:
            factors = [f if f > 0.0 else 1.0 for f in factors]
            target = [f * a for f, a in zip(factors, seg)]
        # mass to the right of each breakpoint after the update
        right_mass = [0.0] * (k + 1)
        acc = 0.0
        for j in range(k, -1, -1):
            acc += target[j]
            right_mass[j] = acc
        nodes = [None] * (k + 2)
        scale = 1.0
        for j in range(k, 0, -1):
            p = breakpoints[j - 1]
            y = min(p * scale, 1.0)
            left_part = factors[j - 1] * p
            right_part = right_mass[j]
            tot = left_part + right_part
            r, rc = left_part / tot, right_part / tot
            nodes[j] = self._scale(y, r, rc)
            scale = r / p
        for j in zeros:
            if nodes[j] is not nodes[j + 1]:
                self._zero_segment(nodes[j], nodes[j + 1])

    def posterior_median(self, count: int) -> int:
        """Message whose cell contains the pseudo-posterior median."""
        if count < 1:
            raise ValueError("message count must be positive")
        b, frac, _, _ = self._find_prob_leaf(0.5)
        a = b.pair
        num, den = frac.as_integer_ratio()
        x = (a.len * num) // den
        node = a
        steps = 0
        while node.parent is not None:
            p = node.parent
            if p.right is node:
                x += p.left.len
            node = p
            steps += 1
        self.ops += steps
        if a.parent is not None:
            self.splay_msg(a.parent)
        if b.parent is not None:
            self.splay_prob(b.parent)
        m = -((-x * count) >> self.precision_bits)
        return min(max(m, 1), count)

    # ------------------------------------------------------------------
    # masses
    def _log_node_mass(self, node: ProbNode) -> float:
        lm = 0.0
        steps = 0
        while node.parent is not None:
            p = node.parent
            lm += _log(p.mid if p.left is node else p.cmid)
            node = p
            steps += 1
        self.ops += steps
        return lm

    def log_interval_mass(self, x0: int, x1: int) -> float:
        """ln of the pseudo-posterior mass of message-space [x0, x1] (fixed point).

        Only sums and products of nonnegative quantities are used, so the
        result keeps relative accuracy for arbitrarily small masses.
        """
        if x1 <= x0:
            return -math.inf
        a0, off0 = self._find_msg_leaf(x0)
        a1, off1 = self._find_msg_leaf(x1)
        m = self._interval_mass_linear(a0, off0, a1, off1, x1 - x0)
        # every term is a product of factors <= 1, so anything lost to
        # underflow is negligible once the total is this large
        if m >= 1e-250:
            return min(math.log(m), 0.0)
        return self._log_interval_mass(a0, off0, a1, off1, x1 - x0)

    def _interval_mass_linear(self, a0, off0, a1, off1, width) -> float:
        b0, b1 = a0.pair, a1.pair
        if b0 is b1:
            if a0.len == 0:
                return 0.0
            m = width / a0.len
            node = b0
            while node.parent is not None:
                p = node.parent
                m *= p.mid if p.left is node else p.cmid
                node = p
            return m
        r = (a0.len - off0) / a0.len if a0.len else 0.0
        seen = {}
        node = b0
        while node.parent is not None:
            p = node.parent
            if p.left is node:
                seen[id(p)] = r
                r = r * p.mid + p.cmid
            else:
                r = r * p.cmid
            node = p
        lv = off1 / a1.len if a1.len else 0.0
        node = b1
        while True:
            p = node.parent
            if p.right is node:
                hit = seen.get(id(p))
                if hit is not None:
                    m = hit * p.mid + lv * p.cmid
                    break
                lv = p.mid + lv * p.cmid
            else:
                lv = lv * p.mid
            node = p
        self.ops += 2 * len(seen)
        while p.parent is not None:
            q = p.parent
            m *= q.mid if q.left is p else q.cmid
            p = q
        return m

    def _log_interval_mass(self, a0, off0, a1, off1, width) -> float:
        b0, b1 = a0.pair, a1.pair
        if b0 is b1:
            if a0.len == 0:
                return -math.inf
            return math.log(width) - math.log(a0.len) + self._log_node_mass(b0)
        # mass right of x0 inside each ancestor of b0, normalised to that node
        log_r = _log(a0.len - off0) - math.log(a0.len) if a0.len else -math.inf
        seen = {}
        node = b0
        while node.parent is not None:
            p = node.parent
            from_left = p.left is node
            seen[id(p)] = (log_r, from_left)
            if from_left:
                log_r = _logaddexp(log_r + _log(p.mid), _log(p.cmid))
            else:
                log_r = log_r + _log(p.cmid)
            node = p
        log_l = _log(off1) - math.log(a1.len) if a1.len else -math.inf
        node = b1
        steps = 0
        while True:
            p = node.parent
            from_left = p.left is node
            hit = seen.get(id(p))
            if hit is not None and not from_left and hit[1]:
                lca = p
                inner = _logaddexp(hit[0] + _log(p.mid), log_l + _log(p.cmid))
                break
            if from_left:
                log_l = log_l + _log(p.mid)
            else:
                log_l = _logaddexp(_log(p.mid), log_l + _log(p.cmid))
            node = p
            steps += 1
        self.ops += steps + len(seen)
        return min(inner + self._log_node_mass(lca), 0.0)

    def _leaf_masses(self) -> dict:
        """Absolute mass of every probability-space leaf, keyed by id."""
        out = {}
        stack = [(self.prob_root, 1.0)]
        while stack:
            node, m = stack.pop()
            if node.left is None:
                out[id(node)] = m
            else:
                stack.append((node.left, m * node.mid))
                stack.append((node.right, m * node.cmid))
        return out

    def msg_leaves(self) -> list:
        out = []
        stack = [self.msg_root]
        while stack:
            node = stack.pop()
            if node.left is None:
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def prob_leaves(self) -> list:
        out = []
        stack = [self.prob_root]
        while stack:
            node = stack.pop()
            if node.left is None:
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def message_masses(self, count: int) -> list:
        """Pseudo-posterior mass of each of ``count`` equal message cells."""
        masses = [0.0] * count
        leaf_mass = self._leaf_masses()
        one = self.one
        pos = 0
        for a in self.msg_leaves():
            w = leaf_mass[id(a.pair)]
            length = a.len
            if length == 0:
                k = max(-((-pos * count) // one), 1)
                masses[k - 1] += w
                continue
            lo = pos * count
            hi = (pos + length) * count
            k = lo // one  # zero-based cell of the left end
            while k * one < hi and k < count:
                c_lo = max(lo, k * one)
                c_hi = min(hi, (k + 1) * one)
                if c_hi > c_lo:
                    masses[k] += w * ((c_hi - c_lo) / (length * count))
                k += 1
            pos += length
        return masses

    def total_mass(self) -> float:
        return math.fsum(self._leaf_masses().values())

    # ------------------------------------------------------------------
    # inspection
    def _preorder(self, root) -> list:
        out = []
        stack = [root]
        while stack:
            node = stack.pop()
            out.append(node)
            if node.left is not None:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def dump(self) -> str:
        ms = self._preorder(self.msg_root)
        ps = self._preorder(self.prob_root)
        mid_of = {n: i for i, n in enumerate(ms)}  # nodes hash by identity
        pid_of = {n: i for i, n in enumerate(ps)}
        lines = []
        for i, n in enumerate(ms):
            kind = "L" if n.left is None else "I"
            lines.append(f"m{i} {kind} {n.len:x} p{pid_of[n.pair]}")
        for j, n in enumerate(ps):
            if n.left is None:
                lines.append(f"p{j} L - m{mid_of[n.pair]}")
            else:
                lines.append(f"p{j} I {n.mid.hex()}/{n.cmid.hex()} m{mid_of[n.pair]}")
        return "\n".join(lines) + "\n"

    def state_hash(self) -> int:
        digest = hashlib.blake2b(self.dump().encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big")

    def depth_stats(self) -> tuple[int, int]:
        """Maximum depth of the message tree and of the probability tree."""
        def max_depth(root):
            best = 0
            stack = [(root, 0)]
            while stack:
                node, d = stack.pop()
                best = max(best, d)
                if node.left is not None:
                    stack.append((node.left, d + 1))
                    stack.append((node.right, d + 1))
            return best
        return max_depth(self.msg_root), max_depth(self.prob_root)


def _inorder(root, internal: bool) -> list:
    out = []
    stack = []
    node = root
    while stack or node is not None:
        while node is not None:
            stack.append(node)
            node = node.left
        node = stack.pop()
        if (node.left is not None) == internal:
            out.append(node)
        node = node.right
    return out


def audit_tree(tree: DualTree, mass_tol: float = 1e-9) -> list[str]:
    """Check structural invariants; return a list of violations (empty if clean)."""
    bad = []
    if tree.msg_root.parent is not None or tree.prob_root.parent is not None:
        bad.append("root has a parent")
    if tree.msg_root.len != tree.one:
        bad.append(f"message root length {tree.msg_root.len} != 2**{tree.precision_bits}")
    for root, label in ((tree.msg_root, "message"), (tree.prob_root, "probability")):
        for node in tree._preorder(root):
            if (node.left is None) != (node.right is None):
                bad.append(f"{label} node with exactly one child")
                continue
            if node.left is not None:
                if node.left.parent is not node or node.right.parent is not node:
                    bad.append(f"{label} parent pointer mismatch")
            if node.pair is None or node.pair.pair is not node:
                bad.append(f"{label} pairing not a bijection")
            elif (node.left is None) != (node.pair.left is None):
                bad.append(f"{label} leaf paired with internal node")
    for node in tree._preorder(tree.msg_root):
        if node.len < 0:
            bad.append("negative message length")
        if node.left is not None and node.len != node.left.len + node.right.len:
            bad.append("message length not additive")
    for node in tree._preorder(tree.prob_root):
        if node.left is None:
            continue
        if not (0.0 <= node.mid <= 1.0 and 0.0 <= node.cmid <= 1.0):
            bad.append(f"mid {node.mid!r} outside [0, 1]")
        elif abs(node.mid + node.cmid - 1.0) > 1e-12:
            bad.append("mid and its complement do not sum to 1")
    for internal in (False, True):
        ms = _inorder(tree.msg_root, internal)
        ps = _inorder(tree.prob_root, internal)
        if len(ms) != len(ps) or any(a.pair is not b for a, b in zip(ms, ps)):
            bad.append("in-order sequences of the two trees do not correspond")
    leaves = len(_inorder(tree.msg_root, False))
    if leaves != tree.leaf_count:
        bad.append(f"leaf count {tree.leaf_count} != {leaves}")
    if bad:
        return bad  # masses are meaningless on a broken structure
    total = tree.total_mass()
    if not abs(total - 1.0) <= mass_tol:
        bad.append(f"total mass {total!r} != 1")
    return bad
