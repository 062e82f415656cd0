import numpy as np
import pytest

from fedchain.ring import (
    DEFAULT_PRIME,
    FixedPointConfig,
    HeadroomError,
    Modulus,
    ModulusMismatchError,
    RingElement,
    decode_fixed,
    decode_fixed_array,
    encode_fixed,
    encode_fixed_array,
    mod_add,
    mod_mul,
    mod_sub,
    ring_add,
    ring_mul,
    ring_sub,
    signed_i64_array,
)

Q = DEFAULT_PRIME
CFG_Q = FixedPointConfig(10**4, Modulus.prime())
CFG_63 = FixedPointConfig(10**4, Modulus.power_of_two(63))


class TestModulus:
    def test_default_prime_is_mersenne_61(self):
        assert Modulus.prime().value == 2**61 - 1

    def test_rejects_composite(self):
        with pytest.raises(ValueError):
            Modulus("prime", 2**61 - 3)

    def test_power_of_two_widths(self):
        for bits in (8, 12, 16, 32, 63):
            assert Modulus.power_of_two(bits).value == 2**bits

    def test_rejects_unsupported_width(self):
        with pytest.raises(ValueError):
            Modulus.power_of_two(20)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            Modulus("galois", 8)


class TestEncodeFixed:
    def test_one_point_five_encodes_to_15000(self):
        # Truncation to the fourth decimal fixes scale 10^4.
        assert encode_fixed(1.5, CFG_Q).value == 15000

    def test_zero_encodes_to_zero(self):
        assert encode_fixed(0.0, CFG_Q).value == 0

    def test_small_negative_maps_to_top_of_ring(self):
        assert encode_fixed(-0.0001, CFG_Q).value == Q - 1

    def test_truncates_toward_zero(self):
        assert encode_fixed(0.00019, CFG_Q).value == 1
        assert encode_fixed(-0.00019, CFG_Q).value == Q - 1

    def test_overflow_rejected(self):
        with pytest.raises(HeadroomError):
            encode_fixed(float(Q), CFG_Q)


class TestDecodeFixed:
    def test_15000_decodes_to_one_point_five(self):
        assert decode_fixed(RingElement(15000, CFG_Q.modulus), CFG_Q) == 1.5

    def test_top_of_ring_decodes_negative(self):
        assert decode_fixed(RingElement(Q - 1, CFG_Q.modulus), CFG_Q) == -0.0001

    def test_zero(self):
        assert decode_fixed(RingElement(0, CFG_Q.modulus), CFG_Q) == 0.0

    def test_modulus_mismatch(self):
        with pytest.raises(ModulusMismatchError):
            decode_fixed(RingElement(1, Modulus.power_of_two(32)), CFG_Q)


class TestRingOps:
    def test_add_mod_11(self):
        m = Modulus("prime", 11)
        assert ring_add(RingElement(3, m), RingElement(5, m)).value == 8

    def test_sub_mod_11(self):
        m = Modulus("prime", 11)
        assert ring_sub(RingElement(5, m), RingElement(9, m)).value == 7

    def test_mul_wide_intermediate(self):
        # 2^60 * 2 = 2^61 = 1 mod (2^61 - 1); overflows 64 bits without
        # a wide intermediate.
        m = Modulus.prime()
        assert ring_mul(RingElement(2**60, m), RingElement(2, m)).value == 1

    def test_modulus_mismatch(self):
        with pytest.raises(ModulusMismatchError):
            ring_add(RingElement(1, Modulus.prime()), RingElement(1, Modulus.power_of_two(32)))

    def test_operators(self):
        m = Modulus("prime", 11)
        a, b = RingElement(7, m), RingElement(6, m)
        assert (a + b).value == 2
        assert (a - b).value == 1
        assert (a * b).value == 9


class TestRoundTripAndHomomorphism:
    @pytest.mark.parametrize("cfg", [CFG_Q, CFG_63], ids=["prime", "pow2_63"])
    def test_round_trip_truncation_only(self, cfg):
        rng = np.random.Generator(np.random.PCG64(1))
        vals = rng.uniform(-1e9, 1e9, 2000)
        dec = decode_fixed_array(encode_fixed_array(vals, cfg), cfg)
        assert np.max(np.abs(dec - vals)) < 1e-4

    def test_round_trip_is_exact_truncation(self):
        rng = np.random.Generator(np.random.PCG64(2))
        vals = rng.uniform(-100, 100, 500)
        dec = decode_fixed_array(encode_fixed_array(vals, CFG_Q), CFG_Q)
        expect = np.trunc(vals * 10**4) / 10**4
        assert np.array_equal(dec, expect)

    def test_addition_homomorphism(self):
        rng = np.random.Generator(np.random.PCG64(3))
        a = rng.uniform(-1e5, 1e5, 1000)
        b = rng.uniform(-1e5, 1e5, 1000)
        ea, eb = encode_fixed_array(a, CFG_Q), encode_fixed_array(b, CFG_Q)
        total = decode_fixed_array(mod_add(ea, eb, CFG_Q.modulus), CFG_Q)
        expect = decode_fixed_array(ea, CFG_Q) + decode_fixed_array(eb, CFG_Q)
        assert np.allclose(total, expect, atol=1e-12)


@pytest.mark.parametrize("modulus", [Modulus.prime(), Modulus.power_of_two(63),
                                     Modulus.power_of_two(32)],
                         ids=["prime", "pow2_63", "pow2_32"])
def test_vector_ops_match_bigint_oracle(modulus):
    # 10^4 random triples per modulus against plain Python integers.
    rng = np.random.Generator(np.random.PCG64(4))
    n = 10**4
    a = rng.integers(0, modulus.value, n, dtype=np.uint64)
    b = rng.integers(0, modulus.value, n, dtype=np.uint64)
    got_add = mod_add(a, b, modulus)
    got_sub = mod_sub(a, b, modulus)
    got_mul = mod_mul(a, b, modulus)
    m = modulus.value
    for i in range(0, n, 97):
        ai, bi = int(a[i]), int(b[i])
        assert int(got_add[i]) == (ai + bi) % m
        assert int(got_sub[i]) == (ai - bi) % m
        assert int(got_mul[i]) == (ai * bi) % m
    # Full-vector check through Python objects for add/mul.
    assert np.array_equal(got_mul.astype(object), (a.astype(object) * b.astype(object)) % m)


def test_signed_i64_array_boundaries():
    m63 = Modulus.power_of_two(63)
    arr = np.array([0, 1, 2**62 - 1, 2**62, 2**63 - 1], dtype=np.uint64)
    signed = signed_i64_array(arr, m63)
    assert list(signed) == [0, 1, 2**62 - 1, -(2**62), -1]
    mq = Modulus.prime()
    arr = np.array([0, 1, (Q - 1) // 2, (Q + 1) // 2, Q - 1], dtype=np.uint64)
    assert list(signed_i64_array(arr, mq)) == [0, 1, (Q - 1) // 2, -(Q - 1) // 2, -1]
