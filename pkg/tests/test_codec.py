import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zoomsat.codec import (
    DecoderState,
    EncoderState,
    Packet,
    decoder_delivery_jump,
    default_growth_constants,
    design_contraction,
    deserialize_packet,
    encoder_sample_jump,
    codec_flow,
    initialize,
    omega_delivery_jump,
    serialize_packet,
)
from zoomsat.controller import control_original, manual
from zoomsat.errors import (
    ConfigError,
    DecodeError,
    ProtocolError,
    QuantizerOverflowError,
)
from zoomsat.plant import FeedforwardPlant, integrator_chain


def unit_mix():
    """Parameters whose mixing matrix is the 1x1 identity."""
    cp = manual(1, 1.0, 0.1, 1.0, 1.0)
    return cp, cp.coord_matrix()


# -- contraction design ---------------------------------------------------------


def test_contraction_scalar():
    lam = design_contraction(1, np.zeros(0), 1.0)
    assert lam.mat.tolist() == [[0.5]]


def test_contraction_two_level_unrolled():
    lam = design_contraction(2, np.array([1.0]), 1.0)
    assert np.allclose(lam.mat, [[0.5, 0.5], [0.0, 0.5]])


def test_contraction_eigenvalues_and_shape():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3, 5):
        growth = rng.uniform(0.5, 3.0, size=n - 1)
        lam = design_contraction(n, growth, 2.0)
        eig = np.linalg.eigvals(lam.mat)
        assert np.allclose(eig, 0.5)
        assert np.allclose(lam.mat, np.triu(lam.mat))
        assert np.all(lam.mat >= 0.0)


def test_contraction_powers_decay():
    lam = design_contraction(3, np.array([1.0, 2.0]), 4.0)
    widths = np.array([5.0, 3.0, 2.0])
    norms = []
    w = widths
    for _ in range(60):
        w = lam.mat @ w
        norms.append(np.linalg.norm(w))
    # eigenvalue 1/2: any rate strictly between 1/2 and 1 eventually dominates
    assert norms[-1] < norms[20] * 0.6 ** (60 - 21)


def test_contraction_input_validation():
    with pytest.raises(ConfigError):
        design_contraction(2, np.array([-1.0]), 1.0)
    with pytest.raises(ConfigError):
        design_contraction(2, np.array([1.0]), 0.0)
    with pytest.raises(ConfigError):
        design_contraction(3, np.array([1.0]), 1.0)


def test_default_growth_chain_is_one():
    plant = integrator_chain(3, init_box=[1, 1, 1])
    cp = manual(3, 1.0, 0.1, 2.0, 0.5)
    g = default_growth_constants(plant, cp.transform_params(), cp.coord_matrix())
    assert np.allclose(g, 1.0)


def test_default_growth_dominates_quadratic_stage():
    plant = FeedforwardPlant(
        n=2, stages=((((2,), 0.5),),), quad_bound=1.0, init_box=[0.1, 0.1]
    )
    cp = manual(2, 1.0, 0.1, 2.0, 0.5)
    g = default_growth_constants(plant, cp.transform_params(), cp.coord_matrix())
    assert g.shape == (1,)
    assert g[0] > 1.0


# -- jumps ---------------------------------------------------------------------


def test_encoder_split_scalar_example():
    cp, cm = unit_mix()
    lam = design_contraction(1, np.zeros(0), 1.0)
    enc = EncoderState(replica=np.zeros(1), estimate=np.array([0.1]), cell=np.array([1.0]))
    x = np.array([0.5])  # residual 0.4, half cell 0.5
    enc2, pkt = encoder_sample_jump(enc, x, cm, lam, k=0, t=0.0)
    assert pkt.symbols.tolist() == [1]
    assert enc2.estimate[0] == pytest.approx(0.35)  # moved a quarter cell
    assert enc2.cell[0] == pytest.approx(0.5)
    assert abs(x[0] - enc2.estimate[0]) == pytest.approx(0.15)
    assert abs(x[0] - enc2.estimate[0]) <= enc2.cell[0] / 2


def test_encoder_tie_sends_zero():
    cp, cm = unit_mix()
    lam = design_contraction(1, np.zeros(0), 1.0)
    enc = EncoderState(replica=np.zeros(1), estimate=np.array([0.2]), cell=np.array([1.0]))
    enc2, pkt = encoder_sample_jump(enc, np.array([0.2]), cm, lam, k=0, t=0.0)
    assert pkt.symbols.tolist() == [0]
    assert enc2.estimate[0] == 0.2


def test_post_split_residual_quartered():
    cp = manual(3, 1.0, 0.1, 2.0, 0.5)
    cm = cp.coord_matrix()
    lam = design_contraction(3, np.ones(2), 1.0)
    rng = np.random.default_rng(5)
    for _ in range(100):
        cell = np.abs(rng.normal(size=3)) + 0.1
        est = rng.normal(size=3)
        # place the state inside the cell in mixed coordinates
        mixed_off = rng.uniform(-0.5, 0.5, size=3) * cell
        x = cm.inv @ (cm.mat @ est + mixed_off)
        enc = EncoderState(replica=np.zeros(3), estimate=est, cell=cell)
        enc2, _ = encoder_sample_jump(enc, x, cm, lam, k=0, t=0.0)
        resid = np.abs(cm.mat @ (x - enc2.estimate))
        assert np.all(resid <= cell / 4 * (1 + 1e-9) + 1e-15)


def test_encoder_overflow_raises():
    cp, cm = unit_mix()
    lam = design_contraction(1, np.zeros(0), 1.0)
    enc = EncoderState(replica=np.zeros(1), estimate=np.zeros(1), cell=np.array([1.0]))
    with pytest.raises(QuantizerOverflowError):
        encoder_sample_jump(enc, np.array([0.51]), cm, lam, k=3, t=1.0)


def test_decoder_zero_symbols_only_contracts_cell():
    cp, cm = unit_mix()
    lam = design_contraction(1, np.zeros(0), 1.0)
    dec = DecoderState(estimate=np.array([0.3]), cell=np.array([0.8]), next_k=0)
    dec2 = decoder_delivery_jump(dec, Packet(0, 0.0, np.array([0])), cm, lam)
    assert dec2.estimate[0] == 0.3
    assert dec2.cell[0] == pytest.approx(0.4)


def test_decoder_mirrors_encoder_increment():
    cp = manual(2, 1.0, 0.1, 2.0, 0.5)
    cm = cp.coord_matrix()
    lam = design_contraction(2, np.ones(1), 1.0)
    est = np.array([0.01, -0.02])
    cell = np.array([0.5, 0.4])
    x = cm.inv @ (cm.mat @ est + np.array([0.2, -0.1]) * cell)
    enc = EncoderState(replica=np.zeros(2), estimate=est.copy(), cell=cell.copy())
    enc2, pkt = encoder_sample_jump(enc, x, cm, lam, k=0, t=0.0)
    dec = DecoderState(estimate=est.copy(), cell=cell.copy(), next_k=0)
    dec2 = decoder_delivery_jump(dec, pkt, cm, lam)
    assert np.array_equal(dec2.estimate, enc2.estimate)
    assert np.array_equal(dec2.cell, enc2.cell)


def test_decoder_cell_independent_of_symbols():
    cp = manual(2, 1.0, 0.1, 2.0, 0.5)
    cm = cp.coord_matrix()
    lam = design_contraction(2, np.ones(1), 1.0)
    cell = np.array([0.5, 0.4])
    outs = []
    for sym in ([0, 0], [1, -1], [-1, 1]):
        dec = DecoderState(estimate=np.zeros(2), cell=cell.copy(), next_k=0)
        outs.append(decoder_delivery_jump(dec, Packet(0, 0.0, np.array(sym)), cm, lam).cell)
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])


def test_decoder_rejects_out_of_order():
    cp, cm = unit_mix()
    lam = design_contraction(1, np.zeros(0), 1.0)
    dec = DecoderState(estimate=np.zeros(1), cell=np.ones(1), next_k=2)
    with pytest.raises(ProtocolError):
        decoder_delivery_jump(dec, Packet(3, 0.0, np.array([1])), cm, lam)


def test_replica_jump_replays_decoder():
    """With equal starting values and the same split arguments, the replica
    lands exactly on the decoder estimate."""
    cp = manual(2, 1.0, 0.1, 2.0, 0.5)
    cm = cp.coord_matrix()
    lam = design_contraction(2, np.ones(1), 1.0)
    est = np.array([0.01, -0.02])
    cell = np.array([0.5, 0.4])
    x = cm.inv @ (cm.mat @ est + np.array([0.3, 0.2]) * cell)
    enc = EncoderState(replica=np.array([0.4, 0.1]), estimate=est.copy(), cell=cell.copy())
    _, pkt = encoder_sample_jump(enc, x, cm, lam, k=0, t=0.0)
    dec = DecoderState(estimate=enc.replica.copy(), cell=cell.copy(), next_k=0)
    dec2 = decoder_delivery_jump(dec, pkt, cm, lam)
    enc2 = omega_delivery_jump(enc, x, est, cell, cm)
    assert np.array_equal(enc2.replica, dec2.estimate)


def test_initialize_values():
    cp = manual(2, 1.0, 0.1, 3.0, 0.5)
    cm = cp.coord_matrix()
    plant = integrator_chain(2, init_box=[1.0, 1.0])
    enc, dec = initialize(plant, cm)
    scale = cp.quad_bound / cp.gain
    expected = 2.0 * scale * np.array([1.0 + 3.0, 3.0])
    assert np.allclose(enc.cell, expected)
    assert np.array_equal(enc.cell, dec.cell)
    assert np.all(enc.estimate == 0) and np.all(dec.estimate == 0)
    assert np.all(enc.replica == 0)
    assert dec.next_k == 0


def test_initial_containment_from_the_box():
    cp = manual(2, 1.0, 0.1, 3.0, 0.5)
    cm = cp.coord_matrix()
    plant = integrator_chain(2, init_box=[1.0, 1.0])
    enc, _ = initialize(plant, cm)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x0 = rng.uniform(-1, 1, size=2)
        resid = np.abs(cm.mat @ (x0 - enc.estimate))
        assert np.all(resid <= enc.cell / 2 * (1 + 1e-12))


def test_codec_flow_matches_model_copies():
    plant = integrator_chain(2, init_box=[1, 1])
    cp = manual(2, 1.0, 0.1, 2.0, 0.5)
    cm = cp.coord_matrix()
    enc = EncoderState(
        replica=np.array([0.01, 0.0]), estimate=np.array([0.02, -0.01]), cell=np.ones(2)
    )
    dec = DecoderState(estimate=np.array([0.01, 0.0]), cell=np.ones(2), next_k=0)
    om_d = np.array([0.005, 0.001])
    ps_d = np.array([0.004, 0.002])
    d_rep, d_est, d_dec = codec_flow(enc, dec, plant, cp, cm, om_d, ps_d)
    assert np.allclose(
        d_rep, plant.vector_field(enc.replica, control_original(cp, cm, om_d))
    )
    assert np.allclose(
        d_est, plant.vector_field(enc.estimate, control_original(cp, cm, enc.replica))
    )
    assert np.allclose(
        d_dec, plant.vector_field(dec.estimate, control_original(cp, cm, ps_d))
    )


def test_codec_flow_zero_state():
    plant = integrator_chain(1, init_box=[1.0])
    cp = manual(1, 1.0, 0.1, 2.0, 0.5)
    cm = cp.coord_matrix()
    enc = EncoderState(replica=np.zeros(1), estimate=np.zeros(1), cell=np.ones(1))
    dec = DecoderState(estimate=np.zeros(1), cell=np.ones(1))
    outs = codec_flow(enc, dec, plant, cp, cm, np.zeros(1), np.zeros(1))
    for out in outs:
        assert np.all(out == 0.0)


# -- wire format --------------------------------------------------------------------


def test_serialize_reference_bytes():
    pkt = Packet(k=0, t_sent=0.0, symbols=np.array([1, -1]))
    data = serialize_packet(pkt)
    assert data == b"\x00\x00\x00\x00" + bytes([0b0110_0000])


def test_serialize_header_little_endian():
    pkt = Packet(k=258, t_sent=0.0, symbols=np.array([0]))
    assert serialize_packet(pkt)[:4] == b"\x02\x01\x00\x00"


def test_bit_count_rule():
    assert Packet(k=0, t_sent=0.0, symbols=np.zeros(3, dtype=np.int8)).bits == 6


@settings(max_examples=200)
@given(
    k=st.integers(0, 2**32 - 1),
    syms=st.lists(st.sampled_from([-1, 0, 1]), min_size=1, max_size=9),
)
def test_packet_roundtrip(k, syms):
    pkt = Packet(k=k, t_sent=1.5, symbols=np.array(syms, dtype=np.int8))
    back = deserialize_packet(serialize_packet(pkt), n=len(syms))
    assert back.k == k
    assert back.symbols.tolist() == syms


def test_deserialize_rejects_garbage():
    with pytest.raises(DecodeError):
        deserialize_packet(b"\x00\x00\x00\x00\xc0", n=1)  # code 0b11
    with pytest.raises(DecodeError):
        deserialize_packet(b"\x00\x00\x00\x00", n=1)  # short
    with pytest.raises(DecodeError):
        deserialize_packet(b"\x00\x00\x00\x00" + bytes([0b0100_0100]), n=1)  # padding
