"""Function secret sharing for comparison predicates.

Two evaluation keys realize the comparison function f_alpha(x) = 1{x < alpha}
in shared form: for every public x the two parties' outputs sum to f_alpha(x)
in the output ring, while either key alone reveals nothing about alpha.

The construction is the standard seed-expansion tree for distributed
comparison functions: walking the bits of x from most significant to least,
each level expands a 128-bit seed into two child seeds, two group payloads
and two control bits, and a per-level correction word steers the two
parties' walks so their payload sums telescope to the comparison outcome.
Key size is one root seed plus one correction word per input bit.

``shared_sign`` builds the sign-extraction protocol on top: the dealer
draws a mask alpha, the parties open x = y + alpha, and evaluation of two
comparison keys (at alpha and at alpha + 2^(n-1)) plus a dealer-shared wrap
constant turns the masked comparison into additive shares of 1{y >= 0}.

Everything is vectorised: a batch of K independent instances is processed
as K lanes through the batched PRG in :mod:`fedchain.prg`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import prg
from .ring import Modulus, RingElement
from .sharing import SharePair, ShareVector

_MAGIC = b"FSS1"
_VERSION = 1

SUPPORTED_BIT_WIDTHS = (8, 12, 16, 32)


class MalformedKeyError(ValueError):
    """Key bytes failed structural validation."""


class KeyReuseError(RuntimeError):
    """A one-shot key or correlation bundle was used twice."""


@dataclass(frozen=True)
class FssConfig:
    """Comparison domain width and the ring the outputs live in."""

    bit_width: int = 32
    out_modulus: Modulus = Modulus.power_of_two(63)

    def __post_init__(self) -> None:
        if self.bit_width not in SUPPORTED_BIT_WIDTHS:
            raise ValueError(f"bit_width must be one of {SUPPORTED_BIT_WIDTHS}")
        if self.out_modulus.kind != "power_of_two":
            raise ValueError("output modulus must be a power of two")

    @property
    def domain_size(self) -> int:
        return 1 << self.bit_width


def _gmask(cfg: FssConfig) -> np.uint64:
    return np.uint64(cfg.out_modulus.value - 1)


def _gneg(v: np.ndarray, mask: np.uint64) -> np.ndarray:
    return (np.uint64(0) - v) & mask


@dataclass
class DcfKeyBatch:
    """K comparison keys laid out lane-wise (correction words are shared)."""

    cfg: FssConfig
    roots: tuple[np.ndarray, np.ndarray]  # per party, (4, K) uint32
    s_cw: np.ndarray    # (levels, 4, K) uint32
    v_cw: np.ndarray    # (levels, K) uint64
    t_cw_l: np.ndarray  # (levels, K) uint8
    t_cw_r: np.ndarray  # (levels, K) uint8
    leaf_cw: np.ndarray  # (K,) uint64

    @property
    def size(self) -> int:
        return self.roots[0].shape[1]


def dcf_gen_batch(alphas: np.ndarray, cfg: FssConfig, dealer) -> DcfKeyBatch:
    """Generate comparison keys for K mask points at once."""
    alphas = np.asarray(alphas, dtype=np.uint64)
    if alphas.ndim != 1:
        raise ValueError("alphas must be a flat vector")
    if np.any(alphas >= np.uint64(cfg.domain_size)):
        raise ValueError("alpha outside comparison domain")
    n, k = cfg.bit_width, alphas.size
    mask = _gmask(cfg)

    s0 = _random_seeds(dealer, k)
    s1 = _random_seeds(dealer, k)
    roots = (s0.copy(), s1.copy())
    t0 = np.zeros(k, dtype=np.uint8)
    t1 = np.ones(k, dtype=np.uint8)
    v_alpha = np.zeros(k, dtype=np.uint64)

    s_cw = np.empty((n, 4, k), dtype=np.uint32)
    v_cw_all = np.empty((n, k), dtype=np.uint64)
    t_cw_l_all = np.empty((n, k), dtype=np.uint8)
    t_cw_r_all = np.empty((n, k), dtype=np.uint8)

    for i in range(n):
        s0l, v0l, t0l, s0r, v0r, t0r = prg.expand_node(s0)
        s1l, v1l, t1l, s1r, v1r, t1r = prg.expand_node(s1)
        ai = ((alphas >> np.uint64(n - 1 - i)) & np.uint64(1)).astype(np.uint8)
        keep_r = ai.astype(bool)          # alpha bit 1 -> keep right, lose left
        lane = keep_r[np.newaxis, :]

        s_lose0 = np.where(lane, s0l, s0r)
        s_lose1 = np.where(lane, s1l, s1r)
        cw_s = s_lose0 ^ s_lose1

        v_lose0 = np.where(keep_r, v0l, v0r) & mask
        v_lose1 = np.where(keep_r, v1l, v1r) & mask
        base = (v_lose1 - v_lose0 - v_alpha) & mask
        # Payload beta = 1 enters on the lose-left levels (alpha bit 1).
        base = (base + ai.astype(np.uint64)) & mask
        t1_on = t1.astype(bool)
        v_cw = np.where(t1_on, _gneg(base, mask), base)

        v_keep0 = np.where(keep_r, v0r, v0l) & mask
        v_keep1 = np.where(keep_r, v1r, v1l) & mask
        signed_cw = np.where(t1_on, _gneg(v_cw, mask), v_cw)
        v_alpha = (v_alpha - v_keep1 + v_keep0 + signed_cw) & mask

        t_cw_l = t0l ^ t1l ^ ai ^ np.uint8(1)
        t_cw_r = t0r ^ t1r ^ ai

        s_cw[i] = cw_s
        v_cw_all[i] = v_cw
        t_cw_l_all[i] = t_cw_l
        t_cw_r_all[i] = t_cw_r

        s_keep0 = np.where(lane, s0r, s0l)
        s_keep1 = np.where(lane, s1r, s1l)
        t_keep0 = np.where(keep_r, t0r, t0l)
        t_keep1 = np.where(keep_r, t1r, t1l)
        t_cw_keep = np.where(keep_r, t_cw_r, t_cw_l)

        s0 = np.where(t0.astype(bool)[np.newaxis, :], s_keep0 ^ cw_s, s_keep0)
        s1 = np.where(t1_on[np.newaxis, :], s_keep1 ^ cw_s, s_keep1)
        t0 = t_keep0 ^ (t0 & t_cw_keep)
        t1 = t_keep1 ^ (t1 & t_cw_keep)

    conv0 = prg.convert_seed(s0) & mask
    conv1 = prg.convert_seed(s1) & mask
    leaf = (conv1 - conv0 - v_alpha) & mask
    leaf = np.where(t1.astype(bool), _gneg(leaf, mask), leaf)

    return DcfKeyBatch(cfg, roots, s_cw, v_cw_all, t_cw_l_all, t_cw_r_all, leaf)


def dcf_eval_batch(party: int, batch: DcfKeyBatch, xs: np.ndarray) -> np.ndarray:
    """Evaluate lane k's key at public point xs[k]; returns (K,) uint64 shares."""
    if party not in (0, 1):
        raise ValueError("party must be 0 or 1")
    cfg = batch.cfg
    xs = np.asarray(xs, dtype=np.uint64)
    if xs.shape != (batch.size,):
        raise ValueError("one evaluation point per key lane required")
    if np.any(xs >= np.uint64(cfg.domain_size)):
        raise ValueError("x outside comparison domain")
    n, mask = cfg.bit_width, _gmask(cfg)

    s = batch.roots[party].copy()
    t = np.full(batch.size, party, dtype=np.uint8)
    out = np.zeros(batch.size, dtype=np.uint64)

    for i in range(n):
        sl, vl, tl, sr, vr, tr = prg.expand_node(s)
        t_on = t.astype(bool)
        lane = t_on[np.newaxis, :]
        csl = np.where(lane, sl ^ batch.s_cw[i], sl)
        csr = np.where(lane, sr ^ batch.s_cw[i], sr)
        ctl = tl ^ (t & batch.t_cw_l[i])
        ctr = tr ^ (t & batch.t_cw_r[i])

        xi = ((xs >> np.uint64(n - 1 - i)) & np.uint64(1)).astype(bool)
        v_sel = np.where(xi, vr, vl) & mask
        v_curr = (v_sel + np.where(t_on, batch.v_cw[i], np.uint64(0))) & mask
        out = (out - v_curr if party else out + v_curr) & mask

        s = np.where(xi[np.newaxis, :], csr, csl)
        t = np.where(xi, ctr, ctl)

    final = (prg.convert_seed(s) + np.where(t.astype(bool), batch.leaf_cw, np.uint64(0))) & mask
    return (out - final if party else out + final) & mask


def _resolve_rng(dealer) -> np.random.Generator:
    return dealer if isinstance(dealer, np.random.Generator) else dealer.rng


def _random_seeds(dealer, k: int) -> np.ndarray:
    """Draw (4, K) uint32 seed lanes from the dealer's stream."""
    return _resolve_rng(dealer).integers(0, 1 << 32, size=(4, k), dtype=np.uint32)


# ---------------------------------------------------------------------------
# Scalar key API with framed serialization.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sBBBB")   # magic, version, party, bit_width, out_bits
_LEVEL = struct.Struct("<16sQB")     # s_cw, v_cw, packed t bits


@dataclass
class FssKeyPair:
    """Both parties' serialized keys plus the dealer-side mask point."""

    k0: bytes
    k1: bytes
    alpha: int
    cfg: FssConfig
    _consumed: bool = field(default=False, repr=False)

    def consume(self) -> None:
        """Bind this pair to one masked opening; a second binding is an error."""
        if self._consumed:
            raise KeyReuseError("comparison key pair already bound to a masked value")
        self._consumed = True


def serialize_key(batch: DcfKeyBatch, lane: int, party: int) -> bytes:
    cfg = batch.cfg
    out = bytearray(_HEADER.pack(_MAGIC, _VERSION, party, cfg.bit_width,
                                 cfg.out_modulus.bits))
    out += prg.seeds_to_bytes(batch.roots[party], lane)
    for i in range(cfg.bit_width):
        flags = int(batch.t_cw_l[i, lane]) | (int(batch.t_cw_r[i, lane]) << 1)
        out += _LEVEL.pack(prg.seeds_to_bytes(batch.s_cw[i], lane),
                           int(batch.v_cw[i, lane]), flags)
    out += struct.pack("<Q", int(batch.leaf_cw[lane]))
    return bytes(out)


def parse_key(raw: bytes) -> tuple[int, DcfKeyBatch]:
    """Decode one serialized key into a single-lane batch."""
    try:
        magic, version, party, bit_width, out_bits = _HEADER.unpack_from(raw, 0)
    except struct.error as exc:
        raise MalformedKeyError("key too short for header") from exc
    if magic != _MAGIC or version != _VERSION:
        raise MalformedKeyError("bad magic or version")
    if party not in (0, 1):
        raise MalformedKeyError("bad party id")
    try:
        cfg = FssConfig(bit_width, Modulus.power_of_two(out_bits))
    except ValueError as exc:
        raise MalformedKeyError(str(exc)) from exc
    expected = _HEADER.size + 16 + cfg.bit_width * _LEVEL.size + 8
    if len(raw) != expected:
        raise MalformedKeyError(f"key length {len(raw)}, expected {expected}")

    pos = _HEADER.size
    root = prg.seeds_from_bytes(raw[pos : pos + 16])
    pos += 16
    n = cfg.bit_width
    s_cw = np.empty((n, 4, 1), dtype=np.uint32)
    v_cw = np.empty((n, 1), dtype=np.uint64)
    t_l = np.empty((n, 1), dtype=np.uint8)
    t_r = np.empty((n, 1), dtype=np.uint8)
    for i in range(n):
        seed_bytes, v, flags = _LEVEL.unpack_from(raw, pos)
        pos += _LEVEL.size
        s_cw[i] = prg.seeds_from_bytes(seed_bytes)
        v_cw[i, 0] = v
        t_l[i, 0] = flags & 1
        t_r[i, 0] = (flags >> 1) & 1
    (leaf,) = struct.unpack_from("<Q", raw, pos)
    leaf_arr = np.array([leaf], dtype=np.uint64)
    roots = (root, root)  # evaluation touches only roots[party]
    return party, DcfKeyBatch(cfg, roots, s_cw, v_cw, t_l, t_r, leaf_arr)


def dcf_gen(alpha: int, cfg: FssConfig, dealer) -> FssKeyPair:
    """Keys for f_alpha(x) = 1{x < alpha} over the configured domain."""
    if not 0 <= alpha < cfg.domain_size:
        raise ValueError(f"alpha {alpha} outside domain of width {cfg.bit_width}")
    batch = dcf_gen_batch(np.array([alpha], dtype=np.uint64), cfg, dealer)
    return FssKeyPair(serialize_key(batch, 0, 0), serialize_key(batch, 0, 1), alpha, cfg)


def dcf_eval(party: int, key: bytes, x: int) -> RingElement:
    """Deterministic evaluation of a serialized key at a public point."""
    key_party, batch = parse_key(key)
    if party != key_party:
        raise MalformedKeyError(f"key belongs to party {key_party}, not {party}")
    if not 0 <= x < batch.cfg.domain_size:
        raise ValueError(f"x {x} outside domain of width {batch.cfg.bit_width}")
    out = dcf_eval_batch(party, batch, np.array([x], dtype=np.uint64))
    return RingElement(int(out[0]), batch.cfg.out_modulus)


# ---------------------------------------------------------------------------
# Sign extraction on shared values.
# ---------------------------------------------------------------------------


@dataclass
class SignCorrelation:
    """Dealer bundle for one batch of sign extractions: two comparison key
    batches (at alpha and alpha + half), additive shares of alpha over the
    comparison domain, and shares of the wrap constant in the output ring."""

    cfg: FssConfig
    keys_at_alpha: DcfKeyBatch
    keys_at_shift: DcfKeyBatch
    alpha_shares: tuple[np.ndarray, np.ndarray]
    wrap_shares: tuple[np.ndarray, np.ndarray]
    _consumed: bool = field(default=False, repr=False)

    @property
    def size(self) -> int:
        return self.keys_at_alpha.size

    def consume(self) -> None:
        if self._consumed:
            raise KeyReuseError("sign correlation already used for a masked opening")
        self._consumed = True


def gen_sign_correlation(count: int, cfg: FssConfig, dealer) -> SignCorrelation:
    rng = _resolve_rng(dealer)
    dmask = np.uint64(cfg.domain_size - 1)
    gmask = _gmask(cfg)
    half = np.uint64(cfg.domain_size >> 1)

    alphas = rng.integers(0, cfg.domain_size, size=count, dtype=np.uint64)
    shifted = (alphas + half) & dmask
    both = dcf_gen_batch(np.concatenate([alphas, shifted]), cfg, dealer)
    keys_a = _slice_batch(both, 0, count)
    keys_b = _slice_batch(both, count, 2 * count)

    wrap = (alphas >> np.uint64(cfg.bit_width - 1)) & np.uint64(1)
    a0 = rng.integers(0, cfg.domain_size, size=count, dtype=np.uint64)
    a1 = (alphas - a0) & dmask
    w0 = rng.integers(0, cfg.out_modulus.value, size=count, dtype=np.uint64)
    w1 = (wrap - w0) & gmask
    return SignCorrelation(cfg, keys_a, keys_b, (a0, a1), (w0, w1))


def _slice_batch(batch: DcfKeyBatch, lo: int, hi: int) -> DcfKeyBatch:
    return DcfKeyBatch(
        batch.cfg,
        (batch.roots[0][:, lo:hi], batch.roots[1][:, lo:hi]),
        batch.s_cw[:, :, lo:hi],
        batch.v_cw[:, lo:hi],
        batch.t_cw_l[:, lo:hi],
        batch.t_cw_r[:, lo:hi],
        batch.leaf_cw[lo:hi],
    )


def apply_sign_correlation(y: SharePair, corr: SignCorrelation) -> SharePair:
    """Run the masked-comparison protocol; outputs share 1{y >= 0}.

    Parties reveal x = (y + alpha) mod 2^n, evaluate both comparison keys at
    x, and add their wrap share: the outputs sum to
    f_shift(x) - f_alpha(x) + wrap = 1{(x - alpha) mod 2^n < 2^(n-1)}.
    """
    corr.consume()
    cfg = corr.cfg
    if y[0].modulus != cfg.out_modulus:
        raise ValueError("share ring does not match the configured output ring")
    if len(y[0]) != corr.size:
        raise ValueError("correlation sized for a different batch")
    dmask = np.uint64(cfg.domain_size - 1)
    gmask = _gmask(cfg)

    # Ring reduction to the comparison domain is share-local and exact.
    x_pub = (
        (y[0].values & dmask) + corr.alpha_shares[0]
        + (y[1].values & dmask) + corr.alpha_shares[1]
    ) & dmask

    outs = []
    for party in (0, 1):
        lt_shift = dcf_eval_batch(party, corr.keys_at_shift, x_pub)
        lt_alpha = dcf_eval_batch(party, corr.keys_at_alpha, x_pub)
        share = (lt_shift - lt_alpha + corr.wrap_shares[party]) & gmask
        outs.append(ShareVector(party, 2, cfg.out_modulus, share))
    return (outs[0], outs[1])


def shared_sign(y: SharePair, cfg: FssConfig, dealer,
                check_guard: bool = False) -> SharePair:
    """Additive bit shares of 1{y >= 0} for every element of a shared vector.

    The sign is read from the low ``cfg.bit_width`` bits, so callers must
    keep |y| below 2^(bit_width - 2).  ``check_guard`` reconstructs y to
    enforce that precondition; it is a test/debug facility and defeats
    privacy, so protocol code leaves it off.
    """
    if check_guard:
        from .ring import signed_i64_array
        from .sharing import open_pair

        v = signed_i64_array(open_pair(y), y[0].modulus)
        bound = 1 << (cfg.bit_width - 2)
        if np.any(np.abs(v) >= bound):
            raise ValueError(f"|y| >= 2^{cfg.bit_width - 2}: comparison undefined near ring boundary")
    corr = gen_sign_correlation(len(y[0]), cfg, dealer)
    return apply_sign_correlation(y, corr)
