"""Both tape backends must agree bit-for-bit with the AST walker."""

import numpy as np
import pytest

from mfgdyn.expr import EvalError, eval_expr, parse_expr
from mfgdyn.kernels import backends
from mfgdyn.tape import TapeSet

from conftest import random_expr_text

PARAMS = {"alpha": 0.7, "beta_p": 1.3}
PARAM_INDEX = {"alpha": 0, "beta_p": 1}
PARAM_VALUES = np.array([0.7, 1.3])


def test_compiled_backend_is_built():
    assert "cython" in backends(), "extension missing; build with pip install -e ."


@pytest.mark.parametrize("backend", sorted(backends()))
def test_backend_matches_ast_walker(backend):
    impl = backends()[backend]
    rng = np.random.default_rng(3)
    exprs, texts = [], []
    for _ in range(300):
        text = random_expr_text(rng, 3, PARAMS, depth=4)
        exprs.append(parse_expr(text, 3, PARAMS))
        texts.append(text)
    tapes = TapeSet(exprs, PARAM_INDEX)
    for _ in range(20):
        m = rng.dirichlet(np.ones(3))
        out = np.empty(tapes.count)
        try:
            tapes.eval_into(m, PARAM_VALUES, out, impl=impl)
        except EvalError:
            continue
        for text, expr, got in zip(texts, exprs, out):
            assert got == eval_expr(expr, m, PARAMS), (backend, text)


@pytest.mark.parametrize("backend", sorted(backends()))
def test_backend_domain_errors(backend):
    impl = backends()[backend]
    cases = ["ln(m1 - 1)", "sqrt(m1 - 2)", "m1 / (m1 - m1)"]
    for text in cases:
        tapes = TapeSet([parse_expr(text, 1)], {})
        with pytest.raises(EvalError):
            tapes.eval(np.array([0.5]), np.empty(0), impl=impl)


@pytest.mark.parametrize("backend", sorted(backends()))
def test_backend_sellte_and_slog(backend):
    impl = backends()[backend]
    texts = ["sellte(m1, m2, 10, 20)", "slog(m1 - 0.6, 0.01)", "dslog(m1, 0.01)",
             "min(m1, m2)", "max(m1, m2)"]
    tapes = TapeSet([parse_expr(t, 2) for t in texts], {})
    for m1 in (0.2, 0.5, 0.8):
        m = np.array([m1, 1 - m1])
        got = tapes.eval(m, np.empty(0), impl=impl)
        want = [eval_expr(parse_expr(t, 2), m) for t in texts]
        assert got.tolist() == want


def test_backends_agree_on_model_tables(congestion):
    impls = backends()
    if len(impls) < 2:
        pytest.skip("only one backend built")
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = rng.dirichlet(np.ones(3))
        results = {}
        for name, impl in impls.items():
            q = congestion.tables._q_set.eval(m, congestion.tables.param_values, impl)
            results[name] = q
        base = results.pop("python")
        for name, q in results.items():
            assert np.array_equal(base, q), name
