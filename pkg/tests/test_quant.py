import dataclasses
import struct

import numpy as np
import pytest

from canids.errors import (
    AccumulatorOverflow,
    ChecksumMismatch,
    EmptyCalibrationSet,
    ModelFormatError,
    ShapeMismatch,
    VersionMismatch,
)
from canids.nn import build_cae
from canids.quant import (
    DEGENERATE_EXPONENT,
    CalibrationStats,
    QuantLayer,
    _int_conv_same,
    _int_maxpool,
    _int_tconv,
    _quantize_tensor,
    _requant_shift,
    calibrate,
    forward_quant,
    load_qmodel,
    quantize,
    save_qmodel,
    scale_exponent,
)


def _binary_blocks(n, shape=(8, 4, 1), seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n, *shape)).astype(np.float32)


def _small_setup(seed=3, n_cal=16):
    model = build_cae(seed=seed, filters=(8, 4), input_shape=(8, 4, 1))
    x = _binary_blocks(n_cal, seed=seed + 1)
    stats = calibrate(model, x)
    return model, x, quantize(model, stats)


# ---------------------------------------------------------------- exponents


@pytest.mark.parametrize(
    "max_abs,expected",
    [
        (128.0, 0),
        (127.0, 0),
        (129.0, 1),
        (1.0, -7),
        (0.5, -8),
        (256.0, 1),
        (0.30, -8),  # 128 * 2^-9 = 0.25 < 0.30 <= 0.5 = 128 * 2^-8
    ],
)
def test_scale_exponent_cases(max_abs, expected):
    assert scale_exponent(max_abs) == expected


def test_scale_exponent_is_tight_for_random_values():
    # oracle: e is valid iff max_abs <= 128*2^e, and minimal iff e-1 is not
    rng = np.random.default_rng(7)
    for m in 10.0 ** rng.uniform(-4, 4, size=200):
        e = scale_exponent(float(m))
        assert m <= 128.0 * 2.0**e
        assert m > 128.0 * 2.0 ** (e - 1)


def test_scale_exponent_degenerate_zero_logs_warning(caplog):
    with caplog.at_level("WARNING", logger="canids.quant"):
        assert scale_exponent(0.0) == DEGENERATE_EXPONENT
    assert any("degenerate" in rec.message for rec in caplog.records)


@pytest.mark.parametrize("bad", [-1.0, float("inf"), float("nan")])
def test_scale_exponent_rejects_invalid(bad):
    with pytest.raises(ShapeMismatch):
        scale_exponent(bad)


def test_quantize_tensor_clamps_the_topmost_code():
    # max_abs exactly on the scale boundary would round to 128; it must clamp
    q = _quantize_tensor(np.array([1.0, -1.0, 0.9921875]), -7, bits=8)
    assert q.tolist() == [127, -128, 127]
    assert q.dtype == np.int8


def test_quantize_tensor_rounds_half_away_from_zero():
    # exponent 0: grid step 1, so .5 fractions decide the rounding rule
    q = _quantize_tensor(np.array([0.5, -0.5, 1.5, -1.5, 2.4]), 0, bits=8)
    assert q.tolist() == [1, -1, 2, -2, 2]


def test_dequantization_error_within_half_step():
    rng = np.random.default_rng(11)
    w = rng.normal(0, 0.3, size=500)
    e = scale_exponent(float(np.abs(w).max()))
    q = _quantize_tensor(w, e, bits=8).astype(np.float64)
    err = np.abs(w - q * 2.0**e)
    # interior codes round within half a step; the clamped extreme within one
    assert err.max() <= 2.0**e


# ---------------------------------------------------------------- calibration


def test_calibrate_matches_manual_layer_walk():
    from canids.nn import layers as L
    from canids.nn.model import LayerKind

    model = build_cae(seed=5, filters=(8, 4), input_shape=(8, 4, 1))
    x = _binary_blocks(6, seed=9)
    stats = calibrate(model, x)
    a = x
    expected = []
    for i, spec in enumerate(model.specs):
        if spec.kind is LayerKind.POOL:
            a, _ = L.maxpool2x2_forward(a)
        elif spec.kind is LayerKind.CONV:
            a = model._activate(spec, L.conv2d_forward(a, model.kernels[i], model.biases[i]))
        else:
            a = model._activate(spec, L.tconv2d_forward(a, model.kernels[i], model.biases[i]))
        expected.append(float(np.abs(a).max()))
    assert len(stats.layer_max_abs) == len(model.specs)
    assert list(stats.layer_max_abs) == expected
    assert stats.block_count == 6


def test_calibrate_chunking_is_invisible():
    model = build_cae(seed=2, filters=(8, 4), input_shape=(8, 4, 1))
    x = _binary_blocks(10, seed=3)
    assert calibrate(model, x, chunk=3).layer_max_abs == calibrate(model, x).layer_max_abs


def test_calibrate_rejects_empty():
    model = build_cae(seed=2, filters=(8, 4), input_shape=(8, 4, 1))
    with pytest.raises(EmptyCalibrationSet):
        calibrate(model, np.zeros((0, 8, 4, 1), dtype=np.float32))


def test_calibration_stats_validate():
    with pytest.raises(EmptyCalibrationSet):
        CalibrationStats((1.0,), 0)
    with pytest.raises(ShapeMismatch):
        CalibrationStats((-1.0,), 4)


# ---------------------------------------------------------------- quantize


def test_quantize_layer_structure_and_exponent_chain():
    model, _, qm = _small_setup()
    assert len(qm.layers) == len(model.specs)
    in_exp = 0
    for spec, ql, kernel in zip(model.specs, qm.layers, model.kernels):
        if kernel is None:
            assert ql is None
            continue
        assert ql.kernel.dtype == np.int8
        assert ql.bias.dtype == np.int32
        assert ql.weight_exp == scale_exponent(float(np.abs(kernel).max()))
        assert ql.input_exp == in_exp
        if spec.activation.value == "sigmoid":
            assert ql.output_exp is None
        else:
            assert ql.output_exp is not None
            in_exp = ql.output_exp


def test_quantize_rejects_mismatched_stats():
    model, x, _ = _small_setup()
    with pytest.raises(ShapeMismatch):
        quantize(model, CalibrationStats((1.0, 1.0), 4))


def test_quantize_is_deterministic():
    model, x, qa = _small_setup(seed=8)
    stats = calibrate(model, x)
    qb = quantize(model, stats)
    for a, b in zip(qa.layers, qb.layers):
        if a is None:
            assert b is None
            continue
        assert np.array_equal(a.kernel, b.kernel)
        assert np.array_equal(a.bias, b.bias)
        assert (a.weight_exp, a.input_exp, a.output_exp) == (
            b.weight_exp,
            b.input_exp,
            b.output_exp,
        )


# ---------------------------------------------------------------- int kernels


def test_int_conv_fast_path_matches_wide_path():
    rng = np.random.default_rng(4)
    x8 = rng.integers(-128, 128, size=(3, 8, 6, 5), dtype=np.int8)
    w8 = rng.integers(-128, 128, size=(3, 3, 5, 7), dtype=np.int8)
    fast = _int_conv_same(x8, w8, exact=True)
    wide = _int_conv_same(x8, w8, exact=False)
    assert fast.dtype == np.int64
    assert np.array_equal(fast, wide)


def test_int_tconv_fast_path_matches_wide_path():
    rng = np.random.default_rng(5)
    x8 = rng.integers(-128, 128, size=(2, 4, 3, 6), dtype=np.int8)
    w8 = rng.integers(-128, 128, size=(3, 3, 6, 4), dtype=np.int8)
    fast = _int_tconv(x8, w8, exact=True)
    wide = _int_tconv(x8, w8, exact=False)
    assert fast.shape == (2, 8, 6, 4)
    assert np.array_equal(fast, wide)


def test_int_conv_against_brute_force():
    # independent oracle: direct per-pixel tap loops in python ints
    rng = np.random.default_rng(6)
    x8 = rng.integers(-128, 128, size=(1, 4, 3, 2), dtype=np.int8)
    w8 = rng.integers(-128, 128, size=(3, 3, 2, 2), dtype=np.int8)
    got = _int_conv_same(x8, w8, exact=True)
    for r in range(4):
        for c in range(3):
            for o in range(2):
                acc = 0
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        rr, cc = r + dr, c + dc
                        if 0 <= rr < 4 and 0 <= cc < 3:
                            for ch in range(2):
                                acc += int(x8[0, rr, cc, ch]) * int(
                                    w8[dr + 1, dc + 1, ch, o]
                                )
                assert got[0, r, c, o] == acc


def test_gemm_exact_bound_flips_on_pathological_kernels():
    small = QuantLayer(
        np.ones((3, 3, 4, 2), dtype=np.int8),
        np.zeros(2, dtype=np.int32),
        0,
        0,
        0,
    )
    assert small.gemm_exact  # 9*4*128 well under 2^24
    big = QuantLayer(
        np.full((3, 3, 146, 1), 127, dtype=np.int8),
        np.zeros(1, dtype=np.int32),
        0,
        0,
        0,
    )
    assert not big.gemm_exact  # 127*9*146*128 > 2^24


def test_wide_path_survives_pathological_magnitudes():
    # kernels past the f32 bound must still accumulate exactly via the
    # per-tap float64 route; checked against python-int row sums
    rng = np.random.default_rng(12)
    x8 = rng.integers(-128, 128, size=(1, 2, 2, 150), dtype=np.int8)
    w8 = np.full((3, 3, 150, 1), 127, dtype=np.int8)
    got = _int_conv_same(x8, w8, exact=False)
    acc = 0
    for rr in range(2):
        for cc in range(2):
            acc += int(x8[0, rr, cc, :].astype(np.int64).sum()) * 127
    assert got[0, 0, 0, 0] == acc  # centre tap window covers the whole input


def test_int_maxpool_matches_reshape_maximum():
    rng = np.random.default_rng(8)
    x8 = rng.integers(-128, 128, size=(2, 6, 4, 3), dtype=np.int8)
    got = _int_maxpool(x8)
    for b in range(2):
        for r in range(3):
            for c in range(2):
                for ch in range(3):
                    window = x8[b, 2 * r : 2 * r + 2, 2 * c : 2 * c + 2, ch]
                    assert got[b, r, c, ch] == window.max()


# ---------------------------------------------------------------- requantize


def test_requant_shift_rounds_half_away():
    acc = np.array([5, 6, -5, -6, 0, 2], dtype=np.int64)
    got = _requant_shift(acc, 2)
    assert got.tolist() == [1, 2, -1, -2, 0, 1]
    assert got.dtype == np.int8


def test_requant_shift_zero_and_negative_shift():
    acc = np.array([3, -2], dtype=np.int64)
    assert _requant_shift(acc, 0).tolist() == [3, -2]
    assert _requant_shift(acc, -3).tolist() == [24, -16]


def test_requant_shift_clamps_to_int8():
    acc = np.array([100000, -100000], dtype=np.int64)
    assert _requant_shift(acc, 1).tolist() == [127, -128]


def test_requant_non_negative_fast_path_equals_signed_path():
    rng = np.random.default_rng(9)
    pos = rng.integers(0, 1 << 20, size=1000, dtype=np.int64)
    mixed = np.concatenate([pos, -pos])
    for shift in (1, 3, 7):
        fast = _requant_shift(pos, shift)
        general = _requant_shift(mixed, shift)[: len(pos)]
        assert np.array_equal(fast, general)


# ---------------------------------------------------------------- forward


def test_forward_quant_shape_and_range():
    _, x, qm = _small_setup()
    y = forward_quant(qm, x[:4])
    assert y.shape == (4, 8, 4, 1)
    assert y.dtype == np.float32
    assert np.all((y > 0) & (y < 1))


def test_forward_quant_rejects_wrong_shape():
    _, _, qm = _small_setup()
    with pytest.raises(ShapeMismatch):
        forward_quant(qm, np.zeros((2, 8, 5, 1), dtype=np.float32))


def test_forward_quant_zero_model_outputs_half():
    model = build_cae(seed=0, filters=(8, 4), input_shape=(8, 4, 1))
    for i, k in enumerate(model.kernels):
        if k is not None:
            model.kernels[i] = np.zeros_like(k)
    x = _binary_blocks(3, seed=2)
    qm = quantize(model, calibrate(model, x))
    assert np.all(forward_quant(qm, x) == 0.5)


def test_forward_quant_bit_identical_across_calls():
    _, x, qm = _small_setup(seed=13)
    a = forward_quant(qm, x)
    b = forward_quant(qm, x)
    assert a.tobytes() == b.tobytes()


def test_forward_quant_tracks_float_model():
    model, x, qm = _small_setup(seed=21, n_cal=32)
    yf = model.forward(x)
    yq = forward_quant(qm, x)
    # per-tensor power-of-two scales on an untrained model stay within a few
    # quantization steps of the float path
    assert float(np.abs(yf - yq).max()) < 0.1


def test_accumulator_overflow_detected():
    model, x, qm = _small_setup()
    idx = next(i for i, ql in enumerate(qm.layers) if ql is not None)
    huge = dataclasses.replace(qm.layers[idx], bias=np.full_like(qm.layers[idx].bias, 2**31 - 1))
    qm.layers[idx] = huge
    with pytest.raises(AccumulatorOverflow):
        forward_quant(qm, x[:1])


# ---------------------------------------------------------------- file format


def test_qmodel_round_trip_bit_exact(tmp_path):
    _, x, qm = _small_setup(seed=30)
    path = tmp_path / "q.qcae"
    save_qmodel(qm, path)
    loaded = load_qmodel(path)
    assert loaded.input_shape == qm.input_shape
    assert np.array_equal(forward_quant(loaded, x), forward_quant(qm, x))
    for a, b in zip(qm.layers, loaded.layers):
        if a is None:
            assert b is None
            continue
        assert np.array_equal(a.kernel, b.kernel)
        assert np.array_equal(a.bias, b.bias)


def test_qmodel_save_load_save_byte_identical(tmp_path):
    _, _, qm = _small_setup(seed=31)
    first = tmp_path / "a.qcae"
    second = tmp_path / "b.qcae"
    save_qmodel(qm, first)
    save_qmodel(load_qmodel(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_qmodel_bad_magic_and_truncation(tmp_path):
    _, _, qm = _small_setup(seed=32)
    path = tmp_path / "q.qcae"
    save_qmodel(qm, path)
    raw = path.read_bytes()

    bad = tmp_path / "bad.qcae"
    bad.write_bytes(b"ZZZZ" + raw[4:])
    with pytest.raises(ModelFormatError):
        load_qmodel(bad)

    cut = tmp_path / "cut.qcae"
    cut.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ChecksumMismatch):
        load_qmodel(cut)

    extra = tmp_path / "extra.qcae"
    extra.write_bytes(raw + b"\x00")
    with pytest.raises(ModelFormatError):
        load_qmodel(extra)


def test_qmodel_version_mismatch(tmp_path):
    import zlib

    _, _, qm = _small_setup(seed=33)
    path = tmp_path / "q.qcae"
    save_qmodel(qm, path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 99)
    struct.pack_into("<I", raw, len(raw) - 4, zlib.crc32(bytes(raw[:-4])))
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        load_qmodel(path)
