# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled tape evaluator. Mirrors mfgdyn._kernel_py instruction for
instruction; domain errors surface as mfgdyn.expr.EvalError."""

from libc.math cimport exp, log, sqrt, INFINITY

import numpy as np
cimport numpy as cnp

from .expr import EvalError

NAME = "cython"

cdef int ERR_NONE = 0
cdef int ERR_DIV = 1
cdef int ERR_LN = 2
cdef int ERR_SQRT = 3
cdef int ERR_SLOG = 4
cdef int ERR_OPCODE = 5

_MESSAGES = {
    1: "division by zero",
    2: "ln of non-positive value",
    3: "sqrt of negative value",
    4: "slog/dslog domain error",
    5: "bad opcode",
}


cdef inline double _run(const cnp.int32_t* code, Py_ssize_t start, Py_ssize_t stop,
                        const double* consts, const double* m, const double* params,
                        double* stack, int* err) nogil:
    cdef Py_ssize_t pc = start
    cdef Py_ssize_t sp = 0
    cdef cnp.int32_t op, arg
    cdef double a, b, f
    while pc < stop:
        op = code[pc]
        arg = code[pc + 1]
        pc += 2
        if op == 0:
            stack[sp] = consts[arg]
            sp += 1
        elif op == 1:
            stack[sp] = m[arg]
            sp += 1
        elif op == 2:
            stack[sp] = params[arg]
            sp += 1
        elif op == 3:
            stack[sp - 1] = -stack[sp - 1]
        elif op == 4:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] + stack[sp]
        elif op == 5:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] - stack[sp]
        elif op == 6:
            sp -= 1
            stack[sp - 1] = stack[sp - 1] * stack[sp]
        elif op == 7:
            sp -= 1
            if stack[sp] == 0.0:
                err[0] = ERR_DIV
                return 0.0
            stack[sp - 1] = stack[sp - 1] / stack[sp]
        elif op == 8:
            stack[sp - 1] = exp(stack[sp - 1])
        elif op == 9:
            if stack[sp - 1] <= 0.0:
                err[0] = ERR_LN
                return 0.0
            stack[sp - 1] = log(stack[sp - 1])
        elif op == 10:
            if stack[sp - 1] < 0.0:
                err[0] = ERR_SQRT
                return 0.0
            stack[sp - 1] = sqrt(stack[sp - 1])
        elif op == 11:
            sp -= 1
            if stack[sp] < stack[sp - 1]:
                stack[sp - 1] = stack[sp]
        elif op == 12:
            sp -= 1
            if stack[sp] > stack[sp - 1]:
                stack[sp - 1] = stack[sp]
        elif op == 13 or op == 14:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if a <= b:
                if b == 0.0:
                    err[0] = ERR_SLOG
                    return 0.0
                f = a * a / (2.0 * b) + b / 2.0
            else:
                f = a
            if op == 13:
                if f <= 0.0:
                    err[0] = ERR_SLOG
                    return 0.0
                stack[sp - 1] = log(f)
            else:
                if f == 0.0:
                    err[0] = ERR_SLOG
                    return 0.0
                if a <= b:
                    stack[sp - 1] = (a / b) / f
                else:
                    stack[sp - 1] = 1.0 / a
        elif op == 15:
            sp -= 3
            if stack[sp - 1] <= stack[sp]:
                stack[sp - 1] = stack[sp + 1]
            else:
                stack[sp - 1] = stack[sp + 2]
        else:
            err[0] = ERR_OPCODE
            return 0.0
    return stack[0]


def eval_program(cnp.int32_t[::1] code, double[::1] consts, double[::1] m,
                 double[::1] params, double[::1] stack):
    cdef int err = ERR_NONE
    cdef double result
    cdef const double* consts_p = &consts[0] if consts.shape[0] > 0 else NULL
    cdef const double* m_p = &m[0] if m.shape[0] > 0 else NULL
    cdef const double* params_p = &params[0] if params.shape[0] > 0 else NULL
    result = _run(&code[0], 0, code.shape[0], consts_p, m_p, params_p, &stack[0], &err)
    if err != ERR_NONE:
        raise EvalError(_MESSAGES[err])
    return result


def eval_table(cnp.int32_t[::1] code, double[::1] consts, cnp.int32_t[::1] offsets,
               double[::1] m, double[::1] params, double[::1] stack, double[::1] out):
    cdef int err = ERR_NONE
    cdef Py_ssize_t k, count = offsets.shape[0] - 1
    cdef const double* consts_p = &consts[0] if consts.shape[0] > 0 else NULL
    cdef const double* m_p = &m[0] if m.shape[0] > 0 else NULL
    cdef const double* params_p = &params[0] if params.shape[0] > 0 else NULL
    with nogil:
        for k in range(count):
            out[k] = _run(&code[0], offsets[k], offsets[k + 1],
                          consts_p, m_p, params_p, &stack[0], &err)
            if err != ERR_NONE:
                break
    if err != ERR_NONE:
        raise EvalError(f"{_MESSAGES[err]} (program {k})")
