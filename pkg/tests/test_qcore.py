import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heraldgate import optics
from heraldgate.qcore import (
    ATOM_A,
    ATOM_B,
    ATOMS,
    POL,
    POLARIZATION,
    QUBIT_A,
    QUBIT_B,
    DOWN_Z,
    UP_X,
    UP_Z,
    DensityOp,
    HilbertLabel,
    LabelError,
    LinearOp,
    QuantumState,
    apply,
    dump,
    embed,
    fidelity_pure,
    load_dump,
    partial_trace,
    project,
    same_up_to_phase,
    tensor,
    trace_distance,
)

S2 = np.sqrt(2)


def _ket(label, v):
    return QuantumState(label, np.asarray(v, complex))


def test_tensor_basis_vectors():
    s = tensor(_ket(QUBIT_A, UP_Z), _ket(QUBIT_B, DOWN_Z))
    assert np.allclose(s.amplitudes, [0, 1, 0, 0])
    assert s.label == ATOMS


def test_tensor_identities():
    i2a = LinearOp(QUBIT_A, np.eye(2), unitary=True)
    i2b = LinearOp(QUBIT_B, np.eye(2), unitary=True)
    assert np.allclose(tensor(i2a, i2b).matrix, np.eye(4))


def test_tensor_up_x_up_x():
    s = tensor(_ket(QUBIT_A, UP_X), _ket(QUBIT_B, UP_X))
    assert np.allclose(s.amplitudes, [0.5, 0.5, 0.5, 0.5])


def test_tensor_name_collision():
    with pytest.raises(LabelError):
        tensor(_ket(QUBIT_A, UP_Z), _ket(QUBIT_A, UP_Z))


def test_apply_tx_pi_on_atom_a():
    s = _ket(ATOMS, [1, 0, 0, 0])
    out = apply(optics.qubit_rotation("x", "pi"), s, [ATOM_A])
    assert np.allclose(out.amplitudes, [0, 0, -1j, 0])


def test_apply_ty_pi_flips_up():
    out = apply(optics.qubit_rotation("y", "pi"), _ket(QUBIT_A, UP_Z))
    assert np.allclose(out.amplitudes, DOWN_Z)


def test_apply_identity_and_dimension_mismatch():
    s = _ket(ATOMS, [0.5, 0.5, 0.5, 0.5])
    assert np.allclose(apply(np.eye(2), s, [ATOM_B]).amplitudes, s.amplitudes)
    with pytest.raises(LabelError):
        apply(np.eye(4), s, [ATOM_B])


def test_embed_acts_on_second_subsystem():
    x = np.array([[0, 1], [1, 0]])
    assert np.allclose(embed(x, ATOMS, [ATOM_B]), np.kron(np.eye(2), x))
    assert np.allclose(embed(x, ATOMS, [ATOM_A]), np.kron(x, np.eye(2)))


def test_partial_trace_examples():
    prod = _ket(ATOMS, [1, 0, 0, 0]).density()
    assert np.allclose(partial_trace(prod, [ATOM_A]).matrix, np.diag([1, 0]))
    phi = _ket(ATOMS, np.array([1, 0, 0, 1]) / S2).density()
    assert np.allclose(partial_trace(phi, [ATOM_A]).matrix, np.eye(2) / 2)
    lab = QUBIT_A.concat(POLARIZATION)
    s = _ket(lab, np.array([1, 0, 0, 1]) / S2)  # (up R + down L)/sqrt2
    assert np.allclose(partial_trace(s.density(), [ATOM_A]).matrix, np.eye(2) / 2)
    with pytest.raises(LabelError):
        partial_trace(phi, ["nope"])


def test_project_examples():
    a_proj = LinearOp(POLARIZATION, np.outer(optics.A, optics.A.conj()))
    _, p = project(_ket(POLARIZATION, optics.A), a_proj)
    assert p == pytest.approx(1)
    branch, p = project(_ket(POLARIZATION, optics.R), a_proj)
    assert p == pytest.approx(0.5)
    assert branch.norm_sq() == pytest.approx(0.5)
    with pytest.raises(ValueError):
        project(_ket(POLARIZATION, optics.R), np.array([[1, 1], [0, 0]]))


def test_project_uniform_two_reflection_branch():
    # atoms uniform, photon R through the ideal element chain, then A
    psi = _ket(ATOMS, [0.5, 0.5, 0.5, 0.5])
    from heraldgate.protocol import run_ideal
    assert run_ideal(psi)["A"][0] == pytest.approx(0.5)


def test_fidelity_pure_and_phase_invariance():
    phi = _ket(ATOMS, np.array([1, 0, 0, 1]) / S2)
    rho = phi.density()
    assert fidelity_pure(rho, phi) == pytest.approx(1)
    assert fidelity_pure(rho, _ket(ATOMS, 1j * phi.amplitudes)) == pytest.approx(1)
    assert fidelity_pure(DensityOp(ATOMS, np.eye(4) / 4), phi) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        fidelity_pure(rho, _ket(ATOMS, [0.5, 0, 0, 0]))


def test_density_invariants_rejected():
    with pytest.raises(ValueError):
        DensityOp(QUBIT_A, np.array([[1, 1], [0, 0]]))
    with pytest.raises(ValueError):
        DensityOp(QUBIT_A, np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        QuantumState(QUBIT_A, np.array([1, 1]))
    with pytest.raises(ValueError):
        LinearOp(QUBIT_A, np.array([[1, 1], [0, 1]]), unitary=True)


def test_label_helpers():
    lab = HilbertLabel.of((ATOM_A, 2), (POL, 2), (ATOM_B, 2))
    assert lab.dim == 8
    assert lab.index(POL) == 1
    assert lab.restrict([ATOM_B, ATOM_A]).names == (ATOM_A, ATOM_B)


def test_dump_roundtrip():
    m = np.array([[1 + 2j, 0.5], [-0.25j, 3]])
    assert np.allclose(load_dump(dump(m)), m)


def test_same_up_to_phase():
    a = _ket(QUBIT_A, UP_X)
    assert same_up_to_phase(a, _ket(QUBIT_A, -1j * UP_X))
    assert not same_up_to_phase(a, _ket(QUBIT_A, UP_Z))


complex_vecs = st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=4, max_size=4)


@settings(max_examples=50, deadline=None)
@given(complex_vecs, complex_vecs)
def test_unitaries_preserve_norm_and_partial_trace_preserves_trace(va, vb):
    v = np.array([complex(a, b) for a, b in va])
    if np.linalg.norm(v) < 1e-3:
        return
    s = _ket(ATOMS, v / np.linalg.norm(v))
    u = optics.qubit_rotation("x", "pi/2").matrix
    out = apply(u, s, [ATOM_B])
    assert out.norm_sq() == pytest.approx(1, abs=1e-12)
    r = partial_trace(s.density(), [ATOM_B])
    assert r.trace() == pytest.approx(1, abs=1e-12)
    w = np.array([complex(a, b) for a, b in vb])
    if np.linalg.norm(w) > 1e-3:
        t = _ket(ATOMS, w / np.linalg.norm(w)).density().matrix
        d = trace_distance(s.density().matrix, t)
        assert -1e-12 <= d <= 1 + 1e-12
