import numpy as np
import pytest

from fedchain.ring import (
    FixedPointConfig,
    Modulus,
    ModulusMismatchError,
    decode_fixed_array,
    encode_fixed_array,
    mod_mul,
)
from fedchain.sharing import (
    Dealer,
    MissingShareError,
    ShareVector,
    TripleReuseError,
    beaver_matmul,
    beaver_mul,
    gen_matmul_triple,
    gen_triple,
    local_sum,
    open_pair,
    reconstruct,
    split,
    split_pair,
    truncate_shares,
)

M11 = Modulus("prime", 11)
MQ = Modulus.prime()


class FixedDealer:
    """Test double that deals a scripted uniform stream."""

    def __init__(self, values, modulus=M11):
        self.values = list(values)
        self.modulus = modulus

    def uniform(self, count):
        out, self.values = self.values[:count], self.values[count:]
        return np.array(out, dtype=np.uint64)


class TestSplit:
    def test_scripted_closing_share(self):
        # Q = 11, s = 5, dealer emits (2, 7): closing share is (5 - 9) mod 11 = 7.
        shares = split(np.array([5], dtype=np.uint64), 3, FixedDealer([2, 7]))
        assert [int(s.values[0]) for s in shares] == [2, 7, 7]

    def test_zero_secret_sums_to_zero(self):
        for n in (2, 3, 5):
            dealer = Dealer(n, MQ)
            shares = split(np.zeros(4, dtype=np.uint64), n, dealer)
            assert np.all(reconstruct(shares) == 0)

    def test_single_party_rejected(self):
        with pytest.raises(ValueError):
            split(np.array([1], dtype=np.uint64), 1, Dealer(0, MQ))

    @pytest.mark.parametrize("n", [2, 3, 5, 10, 20])
    def test_round_trip(self, n):
        dealer = Dealer(100 + n, MQ)
        secrets = dealer.uniform(50)
        assert np.array_equal(reconstruct(split(secrets, n, dealer)), secrets)

    def test_thousand_random_pairs(self):
        dealer = Dealer(7, MQ)
        rng = np.random.Generator(np.random.PCG64(8))
        for _ in range(10**3):
            n = int(rng.integers(2, 8))
            secrets = dealer.uniform(3)
            assert np.array_equal(reconstruct(split(secrets, n, dealer)), secrets)


class TestReconstruct:
    def test_explicit_sum_mod_11(self):
        shares = [ShareVector(i, 3, M11, np.array([v], dtype=np.uint64))
                  for i, v in enumerate((2, 7, 7))]
        assert int(reconstruct(shares)[0]) == 5

    def test_missing_share(self):
        dealer = Dealer(1, MQ)
        shares = split(dealer.uniform(4), 3, dealer)
        with pytest.raises(MissingShareError):
            reconstruct(shares[:2])

    def test_degenerate_single_party(self):
        with pytest.raises(MissingShareError):
            reconstruct([ShareVector(0, 1, M11, np.array([5], dtype=np.uint64))])

    def test_modulus_mismatch(self):
        a = ShareVector(0, 2, M11, np.array([1], dtype=np.uint64))
        b = ShareVector(1, 2, MQ, np.array([1], dtype=np.uint64))
        with pytest.raises(ModulusMismatchError):
            reconstruct([a, b])


class TestLocalSum:
    def test_two_secrets_over_two_parties(self):
        # u = 3 and s = 5 shared over 2 parties mod 11: reconstructed sum is 8.
        dealer = FixedDealer([9, 2])
        u_shares = split(np.array([3], dtype=np.uint64), 2, dealer)
        s_shares = split(np.array([5], dtype=np.uint64), 2, dealer)
        sums = [local_sum([u_shares[p], s_shares[p]]) for p in range(2)]
        assert int(reconstruct(sums)[0]) == 8

    def test_all_zero(self):
        dealer = Dealer(3, M11)
        a = split(np.zeros(2, dtype=np.uint64), 3, dealer)
        b = split(np.zeros(2, dtype=np.uint64), 3, dealer)
        sums = [local_sum([a[p], b[p]]) for p in range(3)]
        assert np.all(reconstruct(sums) == 0)

    def test_exhaustive_mod_11(self):
        # All 121 (u, s) pairs: reconstructed local sums equal (u + s) mod 11.
        for u in range(11):
            for s in range(11):
                dealer = Dealer(u * 11 + s, M11)
                us = split(np.array([u], dtype=np.uint64), 3, dealer)
                ss = split(np.array([s], dtype=np.uint64), 3, dealer)
                sums = [local_sum([us[p], ss[p]]) for p in range(3)]
                assert int(reconstruct(sums)[0]) == (u + s) % 11

    def test_mixed_party_rejected(self):
        dealer = Dealer(4, M11)
        shares = split(np.array([1], dtype=np.uint64), 2, dealer)
        with pytest.raises(ValueError):
            local_sum([shares[0], shares[1]])


class TestBeaverMul:
    def test_two_times_three(self):
        dealer = Dealer(5, MQ)
        x = split_pair(np.array([2], dtype=np.uint64), dealer)
        y = split_pair(np.array([3], dtype=np.uint64), dealer)
        z = beaver_mul(x, y, gen_triple(1, dealer))
        assert int(reconstruct(list(z))[0]) == 6

    def test_zero_annihilates(self):
        dealer = Dealer(6, MQ)
        x = split_pair(np.zeros(5, dtype=np.uint64), dealer)
        y = split_pair(dealer.uniform(5), dealer)
        z = beaver_mul(x, y, gen_triple(5, dealer))
        assert np.all(reconstruct(list(z)) == 0)

    def test_matches_reconstruct_and_multiply_oracle(self):
        dealer = Dealer(7, MQ)
        a, b = dealer.uniform(200), dealer.uniform(200)
        z = beaver_mul(split_pair(a, dealer), split_pair(b, dealer),
                       gen_triple(200, dealer))
        assert np.array_equal(reconstruct(list(z)), mod_mul(a, b, MQ))

    def test_fixed_point_product_with_truncation(self):
        cfg = FixedPointConfig(10**4, MQ)
        dealer = Dealer(8, MQ)
        x = split_pair(encode_fixed_array(np.array([1.5]), cfg), dealer)
        y = split_pair(encode_fixed_array(np.array([2.0]), cfg), dealer)
        z = truncate_shares(beaver_mul(x, y, gen_triple(1, dealer)), cfg)
        got = decode_fixed_array(open_pair(z), cfg)[0]
        assert 2.9999 <= got <= 3.0001

    def test_triple_reuse_rejected(self):
        dealer = Dealer(9, MQ)
        x = split_pair(dealer.uniform(2), dealer)
        y = split_pair(dealer.uniform(2), dealer)
        triple = gen_triple(2, dealer)
        beaver_mul(x, y, triple)
        with pytest.raises(TripleReuseError):
            beaver_mul(x, y, triple)

    def test_modulus_mismatch(self):
        dealer = Dealer(10, MQ)
        other = Dealer(10, Modulus.power_of_two(63))
        x = split_pair(dealer.uniform(2), dealer)
        y = split_pair(dealer.uniform(2), dealer)
        with pytest.raises(ModulusMismatchError):
            beaver_mul(x, y, gen_triple(2, other))


class TestBeaverMatmul:
    @pytest.mark.parametrize("modulus", [MQ, Modulus.power_of_two(63)], ids=["prime", "pow2"])
    def test_matches_modular_matmul(self, modulus):
        dealer = Dealer(11, modulus)
        a = dealer.uniform_shaped((4, 6))
        b = dealer.uniform_shaped((6, 3))
        a0 = dealer.uniform_shaped((4, 6))
        b0 = dealer.uniform_shaped((6, 3))
        from fedchain.ring import mod_matmul, mod_sub

        z0, z1 = beaver_matmul(a0, mod_sub(a, a0, modulus), b0, mod_sub(b, b0, modulus),
                               gen_matmul_triple(4, 6, 3, dealer))
        got = (z0.astype(object) + z1.astype(object)) % modulus.value
        want = mod_matmul(a, b, modulus).astype(object)
        assert np.array_equal(got, want)

    def test_matmul_triple_reuse_rejected(self):
        dealer = Dealer(12, MQ)
        t = gen_matmul_triple(2, 2, 2, dealer)
        z = dealer.uniform_shaped((2, 2))
        beaver_matmul(z, z, z, z, t)
        with pytest.raises(TripleReuseError):
            beaver_matmul(z, z, z, z, t)


class TestTruncateShares:
    def test_scale_squared_product_comes_back(self):
        cfg = FixedPointConfig(10**4, MQ)
        dealer = Dealer(13, MQ)
        raw = np.array([30000 * 10**4], dtype=np.uint64)
        out = truncate_shares(split_pair(raw, dealer), cfg)
        assert abs(decode_fixed_array(open_pair(out), cfg)[0] - 3.0) <= 1e-4

    def test_zero_stays_zero(self):
        cfg = FixedPointConfig(10**4, MQ)
        dealer = Dealer(14, MQ)
        out = truncate_shares(split_pair(np.zeros(8, dtype=np.uint64), dealer), cfg)
        assert np.all(open_pair(out) == 0)

    @pytest.mark.parametrize("modulus", [MQ, Modulus.power_of_two(63)], ids=["prime", "pow2"])
    def test_error_at_most_one_lsb_statistical(self, modulus):
        cfg = FixedPointConfig(10**4, modulus)
        dealer = Dealer(15, modulus)
        rng = np.random.Generator(np.random.PCG64(16))
        vals = rng.uniform(-50, 50, 10**4)
        enc = mod_mul(encode_fixed_array(vals, cfg),
                      np.full(vals.size, np.uint64(10**4)), modulus)  # scale^2
        out = truncate_shares(split_pair(enc, dealer), cfg)
        dec = decode_fixed_array(open_pair(out), cfg)
        want = decode_fixed_array(encode_fixed_array(vals, cfg), cfg)
        assert np.max(np.abs(dec - want)) <= 1e-4 + 1e-12

    def test_headroom_check_flags_boundary_values(self):
        cfg = FixedPointConfig(10**4, MQ)
        dealer = Dealer(17, MQ)
        boundary = np.array([(MQ.value - 1) // 2], dtype=np.uint64)
        pair = split_pair(boundary, dealer)
        with pytest.raises(ValueError, match="headroom"):
            truncate_shares(pair, cfg, check_headroom=True)


def test_single_share_uniformity_chi_square():
    # Privacy proxy: the first share of a fixed secret is uniform over Q = 11.
    # Chi-square with 10 degrees of freedom; critical value at alpha = 0.01.
    counts = np.zeros(11)
    trials = 10**4
    for seed in range(trials):
        dealer = Dealer(seed, M11)
        share0 = split(np.array([5], dtype=np.uint64), 3, dealer)[0]
        counts[int(share0.values[0])] += 1
    expected = trials / 11
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 23.209, f"chi-square {chi2} rejects uniformity"


def test_share_vector_party_bounds():
    with pytest.raises(ValueError):
        ShareVector(3, 3, M11, np.array([1], dtype=np.uint64))
