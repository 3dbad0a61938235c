"""Smoke test for the pyqmfs extension module.

Build and install first:
    cd crates/python && maturin develop --release
then run `python python/smoke_test.py`.
"""

import json
import math
import sys

import numpy as np
from scipy.linalg import expm

import pyqmfs


def omega(n):
    return np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def check_pair():
    m, w = 1.0, 1.0
    pair = pyqmfs.LinearModel.builtin("pair", m=m, omega=w)
    assert pair.dim == 4
    a = np.array(pair.drift())
    g = np.diag([m * w * w, 1 / m, -m * w * w, -1 / m])
    assert np.allclose(a, omega(2) @ g)

    phi = np.array(pair.transfer_matrix(0.7))
    assert np.allclose(phi, expm(a * 0.7), atol=1e-12)
    assert np.allclose(phi @ omega(2) @ phi.T, omega(2), atol=1e-12)

    ok, residual, _ = pair.is_qmfs(["Q", "Pi"])
    assert ok and residual < 1e-10
    ok, _, witness = pair.is_qmfs(["Q", "P"])
    assert not ok and witness is not None

    # [Q(t), P(t')] = i hbar cos(w (t - t')) for the collective pair
    c = np.array(pair.two_time_commutator(["Q", "P"], 0.4, 1.1))
    assert abs(c[0][1] - math.cos(0.4 - 1.1)) < 1e-10
    assert pair.max_commutator_on_grid(["Q", "Pi"], list(np.linspace(0, 5, 11))) < 1e-10


def check_filter():
    single = pyqmfs.LinearModel.builtin("single")
    v = np.array(single.steady_covariance(["q"], 2.0))
    assert np.allclose(v, v.T)
    assert np.linalg.eigvalsh(v + 0.5j * omega(1)).min() > -1e-9

    runs = single.simulate(["q"], 2.0, dt=0.01, t_final=0.5, seed=3, batch=2)
    again = single.simulate(["q"], 2.0, dt=0.01, t_final=0.5, seed=3, batch=2)
    assert runs == again and len(runs) == 2
    times, means, records = runs[0]
    assert len(times) == len(means) == 51 and np.isfinite(records).all()

    filt, aug = pyqmfs.LinearModel.builtin("pair").force_posterior_std(["Q"], 10.0)
    assert abs(filt - aug) / aug < 1e-2


def check_koopman():
    gen = {"M": 1, "f": [{"a": 0, "b": 1, "coef": 1.0}, {"a": 2, "b": 0, "coef": 0.1}],
           "g": [{"a": 1, "b": 0, "coef": 1.0}]}
    r = [pyqmfs.koopman_residual(json.dumps(gen), n, [0.5, 1.0]) for n in (10, 15)]
    assert r[1] < r[0]


def check_spin():
    rows = pyqmfs.spin_sweep([2.0, 4.0, 8.0])
    assert all(r[1] < 1e-10 for r in rows)
    assert rows[0][3] > rows[1][3] > rows[2][3]


def check_circuit():
    toffoli = pyqmfs.ReversibleCircuit.from_text("bits 3\nCCX 0 1 2\n")
    assert toffoli.n_bits == 3 and toffoli.verify_dense()
    for x in range(8):
        expect = x ^ (4 if (x & 1) and (x & 2) else 0)
        assert toffoli.apply(x) == expect
    assert toffoli.propagate_z(2) == [bool((x >> 2) & 1) ^ bool(x & 1 and x & 2) for x in range(8)]

    table = [[bool(x & 1) != bool(x & 2) for x in range(4)]]
    circuit, outs = pyqmfs.ReversibleCircuit.synthesize(table)
    for x in range(4):
        assert bool((circuit.apply(x) >> outs[0]) & 1) == table[0][x]


def main():
    for check in (check_pair, check_filter, check_koopman, check_spin, check_circuit):
        check()
        print(f"ok {check.__name__}")
    print(f"pyqmfs {pyqmfs.__version__}: all smoke checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
