"""Brute-force protocol oracles runnable from the command line.

Each suite checks a protocol against an independent reference: the sum
protocol against exhaustive small-ring enumeration, the comparison keys
against the plain predicate over the whole n=8 domain, and Beaver
multiplication against reconstruct-then-multiply.  ``FEDCHAIN_SELFTEST_FAULT``
names a suite to sabotage deliberately; it exists so harnesses can confirm
a failing suite is actually reported as failing.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from . import fss
from .ring import Modulus, mod_mul
from .sharing import Dealer, beaver_mul, gen_triple, reconstruct, split, split_pair

FAULT_ENV = "FEDCHAIN_SELFTEST_FAULT"


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _fault(name: str) -> bool:
    return os.environ.get(FAULT_ENV, "") == name


def suite_sharing() -> SuiteResult:
    t0 = time.perf_counter()
    failures = 0
    # Exhaustive sum protocol on the 11-element ring via direct arithmetic.
    q = 11
    for u in range(q):
        for s in range(q):
            rng = np.random.Generator(np.random.PCG64(u * q + s))
            u_shares = [int(rng.integers(0, q)) for _ in range(2)]
            u_shares.append((u - sum(u_shares)) % q)
            s_shares = [int(rng.integers(0, q)) for _ in range(2)]
            s_shares.append((s - sum(s_shares)) % q)
            local = [(a + b) % q for a, b in zip(u_shares, s_shares)]
            got = sum(local) % q
            want = (u + s) % q
            if _fault("sharing"):
                want = (want + 1) % q
            failures += got != want
    # Random split/reconstruct round trips at the production prime.
    dealer = Dealer(2024, Modulus.prime())
    for n in (2, 3, 5, 10):
        secrets = dealer.uniform(500)
        if not np.array_equal(reconstruct(split(secrets, n, dealer)), secrets):
            failures += 1
    return SuiteResult("sharing", failures == 0,
                       f"121 exhaustive pairs + 2000 round trips, {failures} failures",
                       time.perf_counter() - t0)


def suite_fss() -> SuiteResult:
    t0 = time.perf_counter()
    cfg = fss.FssConfig(8, Modulus.power_of_two(16))
    dealer = Dealer(77, Modulus.power_of_two(16))
    alphas = np.arange(256, dtype=np.uint64)
    batch = fss.dcf_gen_batch(alphas, cfg, dealer)
    reps = 256
    big = fss.DcfKeyBatch(
        cfg,
        (np.repeat(batch.roots[0], reps, axis=1), np.repeat(batch.roots[1], reps, axis=1)),
        np.repeat(batch.s_cw, reps, axis=2),
        np.repeat(batch.v_cw, reps, axis=1),
        np.repeat(batch.t_cw_l, reps, axis=1),
        np.repeat(batch.t_cw_r, reps, axis=1),
        np.repeat(batch.leaf_cw, reps),
    )
    xs = np.tile(np.arange(256, dtype=np.uint64), 256)
    total = (fss.dcf_eval_batch(0, big, xs) + fss.dcf_eval_batch(1, big, xs)) & np.uint64(0xFFFF)
    want = (xs < np.repeat(alphas, reps)).astype(np.uint64)
    if _fault("fss"):
        want = 1 - want
    failures = int(np.sum(total != want))
    return SuiteResult("fss", failures == 0,
                       f"65536 (alpha, x) pairs at n=8, {failures} failures",
                       time.perf_counter() - t0)


def suite_beaver() -> SuiteResult:
    t0 = time.perf_counter()
    modulus = Modulus.prime()
    dealer = Dealer(31337, modulus)
    count = 2000
    x = dealer.uniform(count)
    y = dealer.uniform(count)
    xs = split_pair(x, dealer)
    ys = split_pair(y, dealer)
    triple = gen_triple(count, dealer)
    z = beaver_mul(xs, ys, triple)
    got = reconstruct(list(z))
    want = mod_mul(x, y, modulus)
    if _fault("beaver"):
        want = mod_mul(want, np.full(count, np.uint64(2)), modulus)
    failures = int(np.sum(got != want))
    return SuiteResult("beaver", failures == 0,
                       f"{count} random products mod Q, {failures} failures",
                       time.perf_counter() - t0)


SUITES = (suite_sharing, suite_fss, suite_beaver)


def run_all() -> list[SuiteResult]:
    return [s() for s in SUITES]
