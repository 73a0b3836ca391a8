"""Acceptance criteria, each run at its stated tolerance.

Every criterion prints one PASS/FAIL line (also collected into the pytest
terminal summary). Run directly with ``python3 tests/test_acceptance.py`` to
get only those lines.
"""

import time

import numpy as np
import pytest
from scipy.linalg import expm

from relayrange import analytics, dynamics
from relayrange.couplings import (
    PhysicalParams,
    forster_detuning,
    full_dd_coupling,
    full_dd_near_field_limit,
    near_field_coupling,
)
from relayrange.effective import (
    adiabaticity_report,
    effective_couplings,
    effective_couplings_diagonal_relay,
    effective_detunings,
    eliminate,
)
from relayrange.exceptions import GeometryError
from relayrange.geometry import MAGIC_ANGLE, build_chain_mirrored, build_pair_mirrored, pair_geometry

PARAMS = PhysicalParams()
RNG_SEED = 20240601


def fig1c_chain():
    return build_chain_mirrored(21, 10.0, 12.0, np.pi / 2)


def c01_forster():
    delta = forster_detuning(PARAMS)
    at_resonance = forster_detuning(PARAMS, F=1.6)
    ok = abs(abs(delta) - 548.5) <= 0.01 * 548.5 and abs(at_resonance) < 1e-9
    return ok, f"|Δ(3.5 V/cm)| = {abs(delta):.3f} MHz, Δ(1.6 V/cm) = {at_resonance:.2e}"


def c02_magic_null():
    rng = np.random.default_rng(RNG_SEED)
    C3 = rng.uniform(1.0, 1e5, 1000)
    r = rng.uniform(0.5, 100.0, 1000)
    v = near_field_coupling(C3, r, MAGIC_ANGLE)
    worst = float(np.max(np.abs(v) / (C3 / r**3)))
    return worst < 1e-12, f"max |V|/(C3/r³) = {worst:.2e}"


def c03_pair_exponent():
    r = analytics.PairWindow(10.0, 30.0, 0.5).values()
    J, _ = analytics.pair_coupling_curve(r, 6.0, 0.0, PARAMS)
    fit = analytics.fit_power_law(r, np.abs(J))
    return abs(fit.b - 5.1) <= 0.2, f"b = {fit.b:.3f} (target 5.1 ± 0.2), rmse = {fit.rmse:.3g}"


def c04_pair_tunability():
    scan = analytics.exponent_scan("pair", analytics.ScanGrid.default("pair"), PARAMS)
    good = scan.succeeded & ~scan.excluded & np.isfinite(scan.b)
    b = scan.b[good]
    ok = b.size > 0 and b.min() <= 3.3 and b.max() >= 5.7
    return ok, (f"outside mask: min b = {b.min():.3f}, max b = {b.max():.3f} "
                f"({good.sum()} of {len(scan)} points; {scan.excluded.sum()} excluded, "
                f"{(~scan.succeeded).sum()} failed)")


def c05_chain_tunability():
    scan = analytics.exponent_scan("chain", analytics.ScanGrid.default("chain"), PARAMS, N=21)
    b = scan.b[scan.succeeded]
    inside = (b >= 3.8) & (b <= 5.2)
    ok = bool(np.all(inside)) and scan.succeeded.all()
    return ok, (f"b in [{b.min():.3f}, {b.max():.3f}]; {np.sum(~inside)} of {b.size} fitted points "
                f"outside [3.8, 5.2]; {(~scan.succeeded).sum()} grid points failed")


def c06_eq4_vs_eq5():
    chain = fig1c_chain()
    J4 = effective_couplings(chain, PARAMS)
    J5 = effective_couplings_diagonal_relay(chain, PARAMS)
    mask = np.abs(J4) > 1e-6
    rel = np.abs(J5[mask] - J4[mask]) / np.abs(J4[mask])
    return rel.max() < 0.05, f"max relative difference {rel.max():.4f} over {mask.sum()} entries"


def _oracle_two_relay_sum(r_ij, r_imu, theta_imu, delta, C3):
    """Direct -(1/Δ) Σ_mu V_i,mu V_j,mu with hand-placed mirrored relays."""
    e = np.array([np.sin(MAGIC_ANGLE), np.cos(MAGIC_ANGLE)])
    ri, rj = np.zeros(2), r_ij * e
    mu = ri + r_imu * np.array([np.sin(theta_imu), np.cos(theta_imu)])
    nu = ri + rj - mu

    def V(a, b):
        d = a - b
        rr = np.hypot(*d)
        return C3 * (3 * (d[1] / rr) ** 2 - 1) / rr**3

    return -(V(ri, mu) * V(rj, mu) + V(ri, nu) * V(rj, nu)) / delta


def c07_closed_form():
    rng = np.random.default_rng(RNG_SEED + 7)
    delta = forster_detuning(PARAMS)
    C3 = PARAMS.C3_up_alpha
    worst, n = 0.0, 0
    while n < 1000:
        r_ij, r_imu, theta = rng.uniform(8, 40), rng.uniform(2, 12), rng.uniform(0, np.pi)
        try:
            build_pair_mirrored(r_ij, r_imu, theta)
        except GeometryError:
            continue
        ref = _oracle_two_relay_sum(r_ij, r_imu, theta, delta, C3)
        if abs(ref) < 1e-14:
            continue
        got = analytics.mirrored_pair_closed_form(r_ij, r_imu, theta, delta, C3)
        worst = max(worst, abs(got - ref) / abs(ref))
        n += 1
    return worst < 1e-6, f"max relative error {worst:.2e} over {n} geometries"


def c08_taylor():
    rng = np.random.default_rng(RNG_SEED + 8)
    delta, C3 = forster_detuning(PARAMS), PARAMS.C3_up_alpha
    r_imu = rng.uniform(3, 12, 100)
    theta = rng.uniform(0, np.pi, 100)
    far = 100 * r_imu
    exact_far = analytics.mirrored_pair_closed_form(far, r_imu, theta, delta, C3)
    t4_far = analytics.mirrored_pair_taylor(far, r_imu, theta, delta, C3, order=4)
    err4_far = np.abs(t4_far - exact_far) / np.abs(exact_far)
    near = 5 * r_imu
    exact_near = analytics.mirrored_pair_closed_form(near, r_imu, theta, delta, C3)
    e4 = np.abs(analytics.mirrored_pair_taylor(near, r_imu, theta, delta, C3, order=4) - exact_near)
    e6 = np.abs(analytics.mirrored_pair_taylor(near, r_imu, theta, delta, C3, order=6) - exact_near)
    n_far = int(np.sum(err4_far >= 0.02))
    n_near = int(np.sum(~(e6 < e4)))
    return n_far == 0 and n_near == 0, (
        f"order-4 at 100·r_imu: {n_far}/100 samples off by >= 2% (median {np.median(err4_far):.3%}); "
        f"order-6 not better than order-4 at 5·r_imu: {n_near}/100")


def c09_detuning_symmetry():
    pair = build_pair_mirrored(10.0, 6.0, 0.0)
    d_pair = effective_detunings(pair, PARAMS)
    pair_diff = abs(d_pair[0] - d_pair[1])
    d = effective_detunings(fig1c_chain(), PARAMS) * 1e-3  # GHz
    bulk = d[1:20]
    spread = float(bulk.max() - bulk.min())
    edge = float(max(abs(d[0] - bulk.mean()), abs(d[-1] - bulk.mean())))
    ok = pair_diff < 1e-6 and spread < 1e-2 and edge > 10 * spread
    return ok, f"pair |Δδ| = {pair_diff:.2e} MHz, bulk spread {spread:.2e} GHz, edge offset {edge:.2e} GHz"


def c10_adiabaticity():
    checked, bad, worst = 0, [], np.inf
    for theta in np.linspace(0, np.pi, 721):
        try:
            pair = build_pair_mirrored(10.0, 8.0, theta)
        except GeometryError:
            continue
        if pair_geometry(pair, 2, 3)[0] <= 5.0:
            continue
        rep = adiabaticity_report(pair, PARAMS)
        checked += 1
        worst = min(worst, rep.ratio)
        if not rep.valid:
            bad.append(theta)
    return checked > 0 and not bad, f"{checked} angles with r_μν > 5 μm, {len(bad)} invalid, min ratio {worst:.2f}"


def c11_dynamics_agreement():
    devs = {}
    for r_ij in (10.0, 15.0):
        cmp = dynamics.compare_full_vs_effective(build_pair_mirrored(r_ij, 6.0, 0.0), PARAMS)
        devs[r_ij] = cmp.max_deviation
    ok = all(v < 0.05 for v in devs.values())
    return ok, ", ".join(f"r_ij = {k:g}: max deviation {v:.4f}" for k, v in devs.items())


def _standard_form_generator(L):
    """Column-major oracle: vec(dρ/dt) for 2LρL† - {L†L, ρ}, with vec(AXB) = (Bᵀ ⊗ A) vec X."""
    d = L.shape[0]
    eye = np.eye(d)
    LdL = L.conj().T @ L
    return 2 * np.kron(L.conj(), L) - np.kron(eye, LdL) - np.kron(LdL.T, eye)


def c12_lindblad_lock():
    g = 0.37
    L = np.sqrt(g) * np.array([[0, 1], [0, 0]], complex)  # |down><up|, index 1 = up
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    times = np.linspace(0, 5.0, 51)
    oracle = _standard_form_generator(L)
    gen = dynamics.liouvillian(np.zeros((2, 2)), [L]).toarray()
    P_oracle = np.array([expm(oracle * t) @ rho0.ravel(order="F") for t in times])[:, 3].real
    P_gen = np.array([expm(gen * t) @ rho0.ravel() for t in times])[:, 3].real
    traj = dynamics.evolve_master_equation(np.zeros((2, 2)), [L], rho0, times,
                                           {"P_up": np.diag([0.0, 1.0])}, rtol=1e-12, atol=1e-14)
    err = max(np.max(np.abs(P_gen - P_oracle)), np.max(np.abs(traj["P_up"] - P_oracle)),
              np.max(np.abs(P_oracle - np.exp(-2 * g * times))))
    return err < 1e-9, f"max |P_up - oracle| = {err:.2e} (oracle vs exp(-2gt) included)"


def c13_loss_protocol():
    res = dynamics.loss_repump_protocol(build_pair_mirrored(10.0, 6.0, 0.0), PARAMS)
    t = res.no_loss.times
    amp_ref = np.ptp(res.no_loss["P_up[0]"])
    after_loss = t > res.t_loss
    amp_loss = np.ptp(res.loss["P_up[0]"][after_loss])
    after_rep = t > res.t_reinjection
    amp_rep = np.ptp(res.loss_repump["P_up[0]"][after_rep])
    pre_fid = float(res.loss_repump["fidelity"][t <= res.t_loss].min())
    post_fid = float(res.loss_repump["fidelity"][after_rep].max())
    ok = amp_loss < 0.5 * amp_ref and amp_rep > amp_loss and post_fid < pre_fid
    return ok, (f"amplitude no-loss {amp_ref:.3f}, after loss {amp_loss:.3f}, after repump {amp_rep:.3f}; "
                f"fidelity pre-loss {pre_fid:.4f}, max after repump {post_fid:.4f}")


def c14_gamma_p():
    pair = build_pair_mirrored(10.0, 6.0, 0.0)
    runs = dynamics.gamma_p_sweep(pair, PARAMS, gammas=(0.0, 0.001, 100.0))
    ref = runs[0.0]["P_up[0]"]
    small = float(np.max(np.abs(runs[0.001]["P_up[0]"] - ref)))
    large = float(np.max(np.abs(runs[100.0]["P_up[0]"] - ref)))
    return small < 0.05 and large > 0.20, f"γ_P = 0.001: {small:.2e}, γ_P = 100: {large:.3f}"


def c15_near_field_validity():
    lam = PARAMS.lambda_mn
    theta = np.pi / 2
    r_small = np.geomspace(1e-7, 1e-4, 200)
    full = full_dd_coupling(1.0, 1.0, lam, r_small, theta)
    nf = full_dd_near_field_limit(1.0, 1.0, lam, r_small, theta)
    agree = float(np.max(np.abs(full - nf) / np.abs(nf)))
    ratio = float(np.max(np.abs(full.imag) / np.abs(full.real)))
    far_full = full_dd_coupling(1.0, 1.0, lam, 3e-3, theta)
    far_nf = full_dd_near_field_limit(1.0, 1.0, lam, 3e-3, theta)
    far = abs(far_full - far_nf) / abs(far_nf)
    ok = agree < 0.01 and far > 0.10 and ratio < 1e-2
    return ok, f"r ≤ 1e-4 m: rel diff {agree:.2e}, |Im|/|Re| {ratio:.2e}; r = 3e-3 m: rel diff {far:.2f}"


def c16_crossing():
    chain = fig1c_chain()
    model = eliminate(chain, PARAMS, "room")
    curve = analytics.average_coupling_by_separation(model.J)
    d = [c[0] for c in curve]
    mean_abs = [c[1] for c in curve]
    level = float(np.mean(model.gamma_eff))
    cross = analytics.crossing_separation(d, mean_abs, level)
    ok = cross is not None and 3 <= cross <= 6
    return ok, f"mean|J| drops below γ^eff = {level:.3e} MHz at d = {cross}"


CRITERIA = [
    (1, "Förster calibration", c01_forster),
    (2, "magic-angle null", c02_magic_null),
    (3, "pair exponent b = 5.1 ± 0.2", c03_pair_exponent),
    (4, "pair tunability", c04_pair_tunability),
    (5, "chain tunability", c05_chain_tunability),
    (6, "full vs diagonal-relay couplings", c06_eq4_vs_eq5),
    (7, "closed-form algebra", c07_closed_form),
    (8, "Taylor consistency", c08_taylor),
    (9, "mirrored-detuning symmetry", c09_detuning_symmetry),
    (10, "adiabaticity", c10_adiabaticity),
    (11, "full vs effective dynamics", c11_dynamics_agreement),
    (12, "Lindblad convention lock", c12_lindblad_lock),
    (13, "loss/repump protocol", c13_loss_protocol),
    (14, "γ_P robustness", c14_gamma_p),
    (15, "near-field validity", c15_near_field_validity),
    (16, "crossing point", c16_crossing),
]


@pytest.mark.parametrize("number,title,check", CRITERIA, ids=[f"c{n:02d}" for n, _, _ in CRITERIA])
def test_criterion(number, title, check, record_criterion):
    ok, detail = check()
    record_criterion(number, title, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    from conftest import format_criterion

    for number, title, check in CRITERIA:
        start = time.perf_counter()
        ok, detail = check()
        print(format_criterion(number, title, ok, f"{detail} [{time.perf_counter() - start:.1f} s]"))
