"""Compilation of expression ASTs to flat postfix tapes.

Walking an AST per entry is the dominant cost of everything downstream
(every integrator stage and every finite-difference probe re-evaluates all
S*S*A generator entries), so expressions are compiled once into a compact
instruction stream that either the Cython kernel or the pure-Python
fallback executes.  See :mod:`mfgdyn.kernels` for backend selection.
"""

from __future__ import annotations

import numpy as np

from . import expr as ex
from .kernels import active_backend

OP_CONST = 0
OP_VAR = 1
OP_PARAM = 2
OP_NEG = 3
OP_ADD = 4
OP_SUB = 5
OP_MUL = 6
OP_DIV = 7
OP_EXP = 8
OP_LN = 9
OP_SQRT = 10
OP_MIN = 11
OP_MAX = 12
OP_SLOG = 13
OP_DSLOG = 14
OP_SELLTE = 15

_CALL_OPS = {
    "exp": OP_EXP,
    "ln": OP_LN,
    "sqrt": OP_SQRT,
    "min": OP_MIN,
    "max": OP_MAX,
    "slog": OP_SLOG,
    "dslog": OP_DSLOG,
    "sellte": OP_SELLTE,
}

# stack effect: net push count per op (operand count handled by emitter)
_ARITY = {
    OP_NEG: 1, OP_EXP: 1, OP_LN: 1, OP_SQRT: 1,
    OP_ADD: 2, OP_SUB: 2, OP_MUL: 2, OP_DIV: 2,
    OP_MIN: 2, OP_MAX: 2, OP_SLOG: 2, OP_DSLOG: 2,
    OP_SELLTE: 4,
}


class _Emitter:
    def __init__(self, param_index):
        self.code = []
        self.consts = []
        self.param_index = param_index
        self.depth = 0
        self.max_depth = 0

    def push(self, n=1):
        self.depth += n
        self.max_depth = max(self.max_depth, self.depth)

    def emit(self, node):
        if isinstance(node, ex.Num):
            self.code += [OP_CONST, len(self.consts)]
            self.consts.append(node.value)
            self.push()
        elif isinstance(node, ex.Var):
            self.code += [OP_VAR, node.index - 1]
            self.push()
        elif isinstance(node, ex.Param):
            self.code += [OP_PARAM, self.param_index[node.name]]
            self.push()
        elif isinstance(node, ex.Neg):
            self.emit(node.arg)
            self.code += [OP_NEG, 0]
        elif isinstance(node, ex.Bin):
            self.emit(node.left)
            self.emit(node.right)
            op = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}[node.op]
            self.code += [op, 0]
            self.depth -= 1
        elif isinstance(node, ex.Call):
            for arg in node.args:
                self.emit(arg)
            op = _CALL_OPS[node.func]
            self.code += [op, 0]
            self.depth -= _ARITY[op] - 1
        else:
            raise TypeError(f"not an expression node: {node!r}")


class TapeSet:
    """A batch of compiled programs sharing one code/constant pool."""

    def __init__(self, exprs, param_index):
        emitter = _Emitter(param_index)
        offsets = [0]
        for e in exprs:
            emitter.emit(e)
            emitter.depth = 0
            offsets.append(len(emitter.code))
        self.code = np.asarray(emitter.code, dtype=np.int32)
        self.consts = np.asarray(emitter.consts, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int32)
        self.depth = max(emitter.max_depth, 1)
        self.count = len(exprs)

    def eval_into(self, m, params, out, impl=None):
        impl = impl or active_backend()
        stack = np.empty(self.depth, dtype=np.float64)
        impl.eval_table(self.code, self.consts, self.offsets, m, params, stack, out)
        return out

    def eval(self, m, params, impl=None):
        out = np.empty(self.count, dtype=np.float64)
        return self.eval_into(np.asarray(m, dtype=np.float64), params, out, impl)


class ModelTables:
    """Compiled transition-rate and reward tables of one game model.

    Evaluation returns ``q`` with shape (A, S, S) indexed [action, from,
    to] and ``r`` with shape (A, S).  Derivative tables (shape
    (A, S, S, S), last axis the differentiation variable) are compiled on
    first use.
    """

    def __init__(self, q_exprs, r_exprs, param_names, param_values):
        self.state_count = len(r_exprs[0])
        self.action_count = len(r_exprs)
        self.param_index = {name: i for i, name in enumerate(param_names)}
        self.param_values = np.asarray(param_values, dtype=np.float64)
        self._q_exprs = q_exprs
        self._r_exprs = r_exprs
        flat_q = [q_exprs[a][i][j]
                  for a in range(self.action_count)
                  for i in range(self.state_count)
                  for j in range(self.state_count)]
        flat_r = [r_exprs[a][i]
                  for a in range(self.action_count)
                  for i in range(self.state_count)]
        self._q_set = TapeSet(flat_q, self.param_index)
        self._r_set = TapeSet(flat_r, self.param_index)
        self._dq_set = None
        self._slog_set = None

    def q_r(self, m, impl=None):
        m = np.asarray(m, dtype=np.float64)
        a, s = self.action_count, self.state_count
        q = self._q_set.eval(m, self.param_values, impl).reshape(a, s, s)
        r = self._r_set.eval(m, self.param_values, impl).reshape(a, s)
        return q, r

    def q_only(self, m, impl=None):
        m = np.asarray(m, dtype=np.float64)
        a, s = self.action_count, self.state_count
        return self._q_set.eval(m, self.param_values, impl).reshape(a, s, s)

    def dq(self, m, impl=None):
        """Partial derivatives of every rate entry, shape (A, S, S, S)."""
        if self._dq_set is None:
            a, s = self.action_count, self.state_count
            flat = [ex.diff_expr(self._q_exprs[ai][i][j], k + 1)
                    for ai in range(a)
                    for i in range(s)
                    for j in range(s)
                    for k in range(s)]
            self._dq_set = TapeSet(flat, self.param_index)
        m = np.asarray(m, dtype=np.float64)
        a, s = self.action_count, self.state_count
        return self._dq_set.eval(m, self.param_values, impl).reshape(a, s, s, s)

    def slog_kink_distances(self, m):
        """|x - delta| / delta for every slog occurrence, evaluated at m.

        Used to flag points too close to the C1 joint of slog for
        second-derivative-based checks to be trusted.
        """
        if self._slog_set is None:
            pairs = []
            for a in range(self.action_count):
                for i in range(self.state_count):
                    for j in range(self.state_count):
                        _collect_slog(self._q_exprs[a][i][j], pairs)
                    _collect_slog(self._r_exprs[a][i], pairs)
            flat = [node for pair in pairs for node in pair]
            self._slog_set = TapeSet(flat, self.param_index) if flat else ()
        if self._slog_set == ():
            return np.empty(0, dtype=np.float64)
        values = self._slog_set.eval(np.asarray(m, dtype=np.float64), self.param_values)
        x = values[0::2]
        delta = values[1::2]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(x - delta) / np.abs(delta)


def _collect_slog(node, out):
    if isinstance(node, ex.Call):
        if node.func in ("slog", "dslog"):
            out.append((node.args[0], node.args[1]))
        for a in node.args:
            _collect_slog(a, out)
    elif isinstance(node, ex.Neg):
        _collect_slog(node.arg, out)
    elif isinstance(node, ex.Bin):
        _collect_slog(node.left, out)
        _collect_slog(node.right, out)
