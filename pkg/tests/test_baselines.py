"""Reference-strategy checks.

The closed forms are pinned by hand-solvable limits (one user, huge
noise, orthogonal channels) and by Monte Carlo maximality of the
leakage ratio. The priced best response is cross-checked against an
independent projected-gradient solve and a dense grid, and the ascent
oracle against exact single-user and decoupled rates.
"""

import math

import numpy as np
import pytest

from gainfield.baselines import (
    OracleResult,
    SolverError,
    beamformer_gains,
    dp_best_response,
    max_vsinr,
    mrt_beamformers,
    oracle_best_utility,
    polish_beamformers,
    virtual_sinr,
)
from gainfield.channel import ChannelSet, CouplingProfile, generate_instance, local_view
from gainfield.region import (
    ProjectionError,
    RegionHandle,
    power_gain,
    scaled_projection,
    support_function,
)
from gainfield.utility import LN2, pf_utility_bits, rates, row_gradient

from refloop import jacobi_reference


def region_of(instance, k):
    return RegionHandle.from_local_csi(local_view(instance, k))


def mrt_vertex(region):
    """Gain vector of the full-power matched filter."""
    eta = np.zeros(region.n_links)
    eta[region.owner] = 1.0
    _, q = support_function(region, eta)
    return power_gain(q, region, validate=False), q


def priced_value(x, own, c, prices):
    cross = float(prices @ x) - prices[own] * x[own]
    return math.log(math.log1p(x[own] / c)) + cross


def realistic_subproblem(seed, k, n_users=4):
    """Prices and interference as seen from the matched-filter point."""
    inst = generate_instance(n_users, 2, seed=seed)
    x = beamformer_gains(inst, mrt_beamformers(inst))
    prices = np.array([row_gradient(x[l], l, inst.sigma2)[k]
                       for l in range(n_users)])
    c = inst.sigma2 + float(x[k].sum()) - x[k, k]
    return inst, region_of(inst, k), c, prices


class TestMaxVsinr:
    def test_single_user_is_matched_filter(self):
        inst = generate_instance(1, 2, seed=4)
        w, bits = max_vsinr(inst)
        mrt = mrt_beamformers(inst)
        assert np.allclose(w, mrt, atol=1e-12)
        snr = inst.gains[0, 0] / inst.sigma2
        assert bits == pytest.approx(math.log1p(snr) / LN2, abs=1e-12)

    def test_high_noise_limit_is_matched_filter(self):
        inst = generate_instance(3, 2, sigma2=1e9, seed=5)
        w, _ = max_vsinr(inst)
        mrt = mrt_beamformers(inst)
        for k in range(3):
            overlap = abs(np.vdot(w[k], mrt[k]))
            assert overlap == pytest.approx(1.0, abs=1e-6)

    def test_rows_have_unit_power_and_utility_matches_pipeline(self):
        inst = generate_instance(4, 2, seed=9)
        w, bits = max_vsinr(inst)
        assert np.allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-12)
        again = pf_utility_bits(beamformer_gains(inst, w), inst.sigma2)
        assert bits == again

    def test_monte_carlo_maximality_of_leakage_ratio(self):
        inst = generate_instance(3, 2, seed=7)
        w, _ = max_vsinr(inst)
        rng = np.random.default_rng(11)
        draws = rng.standard_normal((10_000, 2)) + 1j * rng.standard_normal(
            (10_000, 2))
        draws /= np.linalg.norm(draws, axis=1, keepdims=True)
        for k in range(3):
            num = np.abs(draws @ inst.h[k, k].conj()) ** 2
            leak = sum(np.abs(draws @ inst.h[k, l].conj()) ** 2
                       for l in range(3) if l != k)
            sampled = num / (inst.sigma2 + leak)
            assert virtual_sinr(inst, k, w[k]) + 1e-9 >= sampled.max()


class TestDpBestResponse:
    def test_zero_prices_return_matched_filter_vertex(self):
        inst = generate_instance(2, 2, seed=3)
        region = region_of(inst, 0)
        x, q = dp_best_response(region, inst.sigma2, np.zeros(2))
        xm, _ = mrt_vertex(region)
        assert np.abs(x - xm).max() <= 1e-12
        assert float(np.trace(q).real) == pytest.approx(1.0, abs=1e-9)

    def test_huge_negative_prices_reach_the_zero_forcing_face(self):
        inst = generate_instance(2, 2, seed=3)
        region = region_of(inst, 0)
        prices = np.array([0.0, -1e6])
        x, q = dp_best_response(region, inst.sigma2, prices,
                                tol=1e-3, max_iter=5000)
        assert x[1] <= 1e-3
        assert x[0] > 1e-3

        # dense direction-and-scale grid must not beat the solver
        a = np.linspace(0.0, np.pi / 2, 91)
        phi = np.linspace(0.0, 2 * np.pi, 120, endpoint=False)
        aa, pp = np.meshgrid(a, phi, indexing="ij")
        v = np.stack([np.cos(aa), np.sin(aa) * np.exp(1j * pp)], axis=-1)
        g_own = np.abs(v @ inst.h[0, 0].conj()) ** 2
        g_cross = np.abs(v @ inst.h[0, 1].conj()) ** 2
        best = -math.inf
        for t in np.linspace(1e-6, 1.0, 40):
            u = np.log(np.log1p(t * g_own / inst.sigma2)) - 1e6 * t * g_cross
            best = max(best, float(u.max()))
        assert priced_value(x, 0, inst.sigma2, prices) >= best - 1e-6

    def test_matches_projected_gradient_solve(self):
        for seed, k in [(0, 1), (3, 0), (8, 2)]:
            inst, region, c, prices = realistic_subproblem(seed, k)
            x, q = dp_best_response(region, c, prices)
            xp, vp = self._pg_solve(region, c, prices)
            vf = priced_value(x, k, c, prices)
            assert vf == pytest.approx(vp, abs=1e-5)

    @staticmethod
    def _pg_solve(region, c, prices, iters=3000):
        own = region.owner
        x, q = mrt_vertex(region)
        ones = np.ones(region.n_links)
        step = 0.1
        val = priced_value(x, own, c, prices)
        for _ in range(iters):
            g = prices.copy()
            g[own] = 1.0 / ((c + x[own]) * math.log1p(x[own] / c))
            accepted = False
            for _ in range(60):
                try:
                    xp, q2 = scaled_projection(x + step * g, ones, region,
                                               q0=q)
                except ProjectionError:
                    step *= 0.5
                    continue
                if xp[own] > 0.0:
                    v2 = priced_value(xp, own, c, prices)
                    if v2 >= val - 1e-15:
                        x, q, val = xp, q2, v2
                        step = min(step * 1.3, 4.0)
                        accepted = True
                        break
                step *= 0.5
                if step < 1e-14:
                    break
            if not accepted:
                break
        return x, val

    def test_result_stays_inside_the_region(self):
        inst, region, c, prices = realistic_subproblem(0, 1)
        x, q = dp_best_response(region, c, prices)
        proj, _ = scaled_projection(x, np.ones(region.n_links), region, q0=q)
        assert float(np.linalg.norm(proj - x)) <= 1e-6

    def test_gap_certificate_is_nonincreasing_and_certified(self):
        inst, region, c, prices = realistic_subproblem(0, 1)
        gaps = []
        dp_best_response(region, c, prices,
                         callback=lambda i, g, v: gaps.append(g))
        assert len(gaps) >= 1
        assert all(b <= a + 1e-18 for a, b in zip(gaps, gaps[1:]))
        x, _ = dp_best_response(region, c, prices)
        final = []
        dp_best_response(region, c, prices,
                         callback=lambda i, g, v: final.append(g))
        assert final[-1] <= 1e-6

    def test_iteration_cap_raises_with_gap_attached(self):
        inst, region, c, prices = realistic_subproblem(0, 1)
        with pytest.raises(SolverError) as err:
            dp_best_response(region, c, prices, max_iter=1)
        assert err.value.gap is not None
        assert 0.0 <= err.value.gap < math.inf

    def test_own_price_entry_is_ignored(self):
        inst, region, c, prices = realistic_subproblem(3, 0)
        a, _ = dp_best_response(region, c, prices)
        loud = prices.copy()
        loud[region.owner] = 1e6
        b, _ = dp_best_response(region, c, loud)
        assert np.abs(a - b).max() <= 1e-9

    def test_warm_start_agrees_with_cold_start(self):
        inst, region, c, prices = realistic_subproblem(8, 2)
        x_cold, q = dp_best_response(region, c, prices)
        x_warm, _ = dp_best_response(region, c, prices, q0=q)
        v_cold = priced_value(x_cold, 2, c, prices)
        v_warm = priced_value(x_warm, 2, c, prices)
        assert v_warm == pytest.approx(v_cold, abs=1e-8)

    def test_rejects_bad_inputs(self):
        inst = generate_instance(2, 2, seed=3)
        region = region_of(inst, 0)
        with pytest.raises(ValueError, match="positive"):
            dp_best_response(region, 0.0, np.zeros(2))
        with pytest.raises(ValueError, match="prices"):
            dp_best_response(region, 1.0, np.zeros(3))


class TestOracle:
    def test_single_user_rate_is_exact(self):
        inst = generate_instance(1, 2, seed=4)
        res = oracle_best_utility(inst, restarts=3, seed=0)
        snr = inst.gains[0, 0] / inst.sigma2
        assert res.utility_bits == pytest.approx(math.log1p(snr) / LN2,
                                                 abs=1e-9)

    def test_orthogonal_channels_decouple_into_matched_filters(self):
        h = np.zeros((2, 2, 2), dtype=np.complex128)
        h[0, 0] = [1.3, 0.4j]
        h[1, 1] = [0.2 - 0.1j, 1.1]
        inst = ChannelSet(h=h, sigma2=1e-2, seed=0,
                          profile=CouplingProfile(kind="uniform"))
        res = oracle_best_utility(inst, restarts=3, seed=1)
        r = [math.log1p(inst.gains[k, k] / inst.sigma2) for k in range(2)]
        expected = math.sqrt(r[0] * r[1]) / LN2
        assert res.utility_bits == pytest.approx(expected, abs=1e-9)

    def test_dominates_both_closed_forms(self):
        for seed in (0, 1, 2):
            inst = generate_instance(4, 2, seed=seed)
            res = oracle_best_utility(inst, restarts=4, seed=seed)
            _, v_bits = max_vsinr(inst)
            m_bits = pf_utility_bits(
                beamformer_gains(inst, mrt_beamformers(inst)), inst.sigma2)
            assert res.utility_bits >= max(v_bits, m_bits) - 1e-9

    def test_dominates_the_distributed_limit(self):
        inst = generate_instance(4, 2, seed=0)
        utils, _, _ = jacobi_reference(inst, rounds=300, mode="s1s2")
        limit_bits = math.exp(utils[-1] / 4) / LN2
        res = oracle_best_utility(inst, restarts=8, seed=0)
        assert res.utility_bits >= limit_bits - 1e-6

    def test_reports_every_start(self):
        inst = generate_instance(3, 2, seed=6)
        res = oracle_best_utility(inst, restarts=5, seed=2)
        assert isinstance(res, OracleResult)
        assert res.restarts == 6
        assert res.per_start_bits.shape == (6,)
        assert res.utility_bits == np.nanmax(res.per_start_bits)
        assert res.beamformers.shape == (3, 2)

    def test_polish_never_decreases_the_start_value(self):
        inst = generate_instance(4, 2, seed=2)
        rng = np.random.default_rng(0)
        w0 = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        w0 /= np.linalg.norm(w0, axis=1, keepdims=True)
        start_bits = pf_utility_bits(beamformer_gains(inst, w0), inst.sigma2)
        bits, w = polish_beamformers(inst, w0)
        assert bits >= start_bits - 1e-12
        assert np.all(np.linalg.norm(w, axis=1) <= 1.0 + 1e-12)
