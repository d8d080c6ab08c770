"""Pure-Python tape evaluator (fallback when the extension is not built).

Semantics must match mfgdyn._kernel exactly; both are tested against the
AST walker in mfgdyn.expr.
"""

import math

from .expr import EvalError

NAME = "python"


def eval_range(code, consts, start, stop, m, params, stack):
    sp = 0
    pc = start
    while pc < stop:
        op = code[pc]
        arg = code[pc + 1]
        pc += 2
        if op == 0:  # CONST
            stack[sp] = consts[arg]
            sp += 1
        elif op == 1:  # VAR
            stack[sp] = m[arg]
            sp += 1
        elif op == 2:  # PARAM
            stack[sp] = params[arg]
            sp += 1
        elif op == 3:  # NEG
            stack[sp - 1] = -stack[sp - 1]
        elif op == 4:  # ADD
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == 5:  # SUB
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == 6:  # MUL
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == 7:  # DIV
            sp -= 1
            if stack[sp] == 0.0:
                raise EvalError("division by zero")
            stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == 8:  # EXP
            try:
                stack[sp - 1] = math.exp(stack[sp - 1])
            except OverflowError:
                stack[sp - 1] = math.inf
        elif op == 9:  # LN
            if stack[sp - 1] <= 0.0:
                raise EvalError(f"ln of non-positive value {stack[sp - 1]}")
            stack[sp - 1] = math.log(stack[sp - 1])
        elif op == 10:  # SQRT
            if stack[sp - 1] < 0.0:
                raise EvalError(f"sqrt of negative value {stack[sp - 1]}")
            stack[sp - 1] = math.sqrt(stack[sp - 1])
        elif op == 11:  # MIN
            sp -= 1
            if stack[sp] < stack[sp - 1]:
                stack[sp - 1] = stack[sp]
        elif op == 12:  # MAX
            sp -= 1
            if stack[sp] > stack[sp - 1]:
                stack[sp - 1] = stack[sp]
        elif op == 13:  # SLOG
            sp -= 1
            stack[sp - 1] = _slog(stack[sp - 1], stack[sp])
        elif op == 14:  # DSLOG
            sp -= 1
            stack[sp - 1] = _dslog(stack[sp - 1], stack[sp])
        elif op == 15:  # SELLTE
            sp -= 3
            if stack[sp - 1] <= stack[sp]:
                stack[sp - 1] = stack[sp + 1]
            else:
                stack[sp - 1] = stack[sp + 2]
        else:
            raise EvalError(f"bad opcode {op}")
    return stack[0]


def _slog(x, delta):
    if x <= delta:
        if delta == 0.0:
            raise EvalError("slog with delta = 0 on the smoothed branch")
        f = x * x / (2.0 * delta) + delta / 2.0
    else:
        f = x
    if f <= 0.0:
        raise EvalError(f"slog: smoothed argument {f} is not positive")
    return math.log(f)


def _dslog(x, delta):
    if x <= delta:
        if delta == 0.0:
            raise EvalError("dslog with delta = 0 on the smoothed branch")
        f = x * x / (2.0 * delta) + delta / 2.0
        if f == 0.0:
            raise EvalError("dslog: smoothed argument is zero")
        return (x / delta) / f
    return 1.0 / x


def eval_program(code, consts, m, params, stack):
    return eval_range(code, consts, 0, len(code), m, params, stack)


def eval_table(code, consts, offsets, m, params, stack, out):
    for k in range(len(offsets) - 1):
        out[k] = eval_range(code, consts, offsets[k], offsets[k + 1], m, params, stack)
