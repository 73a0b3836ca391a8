"""Dense quantum dynamics of the full main/relay system and of the effective spin model.

Units: energies in MHz (ordinary frequency) and times in μs, so the coherent
part of every generator is ``-2πi [H, ρ]``. Jump rates are in 1/μs and enter
the dissipator without a 2π.

The dissipator of a jump operator L is

    D[L] ρ = [L ρ, L†] + [L, ρ L†] = 2 L ρ L† - {L† L, ρ},

so a single channel L = √g |down⟩⟨up| empties |up⟩ as exp(-2 g t).

Level ordering: main atoms ``(Down, down, up, Up)`` = indices 0..3
(``Down``/``Up`` being the spectator circular levels below/above the spin
pair); relays ``(alpha, beta)`` = 0, 1; effective spins ``(down, up)`` = 0, 1.
In the rotating frame the spin state ``up`` sits at ``omega_up_dressed``
(default 0) and the relay ``beta`` at ``Δ + omega_up_dressed``; the spectator
levels sit at zero, which is immaterial since they carry no coherent coupling.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy.integrate import DOP853

from .couplings import PhysicalParams, forster_detuning, near_field_from_vectors
from .effective import EffectiveModel, eliminate
from .exceptions import DimensionError, IntegrationError
from .geometry import AtomArray, AtomRole

DEFAULT_MAX_DIM = 4096
MAX_PURE_SITES = 12
MAX_MIXED_SITES = 6


class MainLevel(IntEnum):
    DOWN2 = 0  # spectator below |down>
    DOWN = 1
    UP = 2
    UP2 = 3  # spectator above |up>


class RelayLevel(IntEnum):
    ALPHA = 0
    BETA = 1


@dataclass(frozen=True)
class LevelScheme:
    main_levels: tuple = tuple(MainLevel)
    relay_levels: tuple = tuple(RelayLevel)

    def __post_init__(self):
        if len(self.main_levels) != 4 or len(self.relay_levels) != 2:
            raise ValueError("the level scheme has 4 main and 2 relay levels")

    def dims(self, array: AtomArray) -> tuple[int, ...]:
        return tuple(len(self.main_levels) if role is AtomRole.MAIN else len(self.relay_levels)
                     for role in array.roles)


LEVELS = LevelScheme()


@dataclass(frozen=True)
class JumpOperatorSpec:
    """Jump operator ``sqrt(rate) |to_level><from_level|`` on one atom (rate in 1/μs)."""

    atom: int
    from_level: int
    to_level: int
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("jump rates must be non-negative")


@dataclass
class QuantumState:
    """State vector (1-D) or density matrix (2-D) over a composite space."""

    data: np.ndarray
    dims: tuple[int, ...]

    @property
    def is_pure(self) -> bool:
        return np.ndim(self.data) == 1

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def density_matrix(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.asarray(self.data)

    def check(self, tol: float = 1e-9) -> None:
        data = np.asarray(self.data)
        if data.shape[0] != self.dim:
            raise DimensionError(f"state has dimension {data.shape[0]}, dims give {self.dim}")
        if self.is_pure:
            if abs(np.linalg.norm(data) - 1) > tol:
                raise ValueError("state vector is not normalized")
            return
        if abs(np.trace(data) - 1) > tol:
            raise ValueError("density matrix trace differs from 1")
        if np.max(np.abs(data - data.conj().T)) > 1e-12:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (data + data.conj().T)).min() < -1e-10:
            raise ValueError("density matrix has negative eigenvalues")


@dataclass
class Trajectory:
    """Observables recorded at ``times`` (μs) plus the state at the last time."""

    times: np.ndarray
    observables: dict[str, np.ndarray]
    final_state: QuantumState | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        for name, series in self.observables.items():
            if len(series) != len(self.times):
                raise ValueError(f"observable {name!r} has the wrong length")

    def __getitem__(self, name):
        return self.observables[name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = list(self.observables)
        writer.writerow(["t"] + names)
        for k, t in enumerate(self.times):
            writer.writerow([f"{t:.17g}"] + [f"{self.observables[n][k]:.17g}" for n in names])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "times": self.times.tolist(),
            "observables": {k: np.asarray(v).tolist() for k, v in self.observables.items()},
            "metadata": self.metadata,
        }, indent=2)


# --------------------------------------------------------------------------
# operators


def _ket(k, d):
    v = np.zeros(d)
    v[k] = 1.0
    return v


def _projector(m, n, d):
    """|m><n| on a d-level system."""
    return sp.csr_matrix(np.outer(_ket(m, d), _ket(n, d)))


def local_operator(single, site: int, dims) -> sp.csr_matrix:
    """Embed a single-site operator into the tensor-product space."""
    factors = [sp.identity(d, format="csr") for d in dims]
    factors[site] = sp.csr_matrix(single)
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)


def product_state(levels, dims) -> np.ndarray:
    """Computational-basis product state with atom ``a`` in ``levels[a]``."""
    return reduce(np.kron, [_ket(k, d) for k, d in zip(levels, dims)]).astype(complex)


def _check_dim(dims, max_dim):
    dim = math.prod(dims)
    if dim > max_dim:
        raise DimensionError(f"Hilbert-space dimension {dim} exceeds the cap {max_dim}")
    return dim


def build_full_hamiltonian(
    array: AtomArray,
    params: PhysicalParams,
    omega_up_dressed: float = 0.0,
    max_dim: int = DEFAULT_MAX_DIM,
) -> sp.csr_matrix:
    """Hamiltonian (MHz) of all main and relay atoms with pairwise exchange.

    Main-main exchange acts on down↔up, relay-relay on alpha↔beta, and
    main-relay couples up/alpha with down/beta. The spectator levels have no
    coherent terms.
    """
    dims = LEVELS.dims(array)
    dim = _check_dim(dims, max_dim)
    delta = forster_detuning(params)
    H = sp.csr_matrix((dim, dim), dtype=complex)
    raise_op = []
    for a, role in enumerate(array.roles):
        if role is AtomRole.MAIN:
            H = H + omega_up_dressed * local_operator(_projector(MainLevel.UP, MainLevel.UP, 4), a, dims)
            raise_op.append(local_operator(_projector(MainLevel.UP, MainLevel.DOWN, 4), a, dims))
        else:
            H = H + (delta + omega_up_dressed) * local_operator(
                _projector(RelayLevel.BETA, RelayLevel.BETA, 2), a, dims)
            raise_op.append(local_operator(_projector(RelayLevel.BETA, RelayLevel.ALPHA, 2), a, dims))
    pos = array.positions
    for a in range(array.M):
        for b in range(a + 1, array.M):
            main_a = array.roles[a] is AtomRole.MAIN
            main_b = array.roles[b] is AtomRole.MAIN
            if main_a and main_b:
                C3 = params.C3_up_down
            elif main_a or main_b:
                C3 = params.C3_up_alpha
            else:
                C3 = params.C3_beta_alpha
            v = float(near_field_from_vectors(C3, pos[a] - pos[b]))
            if v == 0.0:
                continue
            hop = raise_op[a] @ raise_op[b].conj().T
            H = H + v * (hop + hop.conj().T)
    return H.tocsr()


def build_jump_operators(
    array: AtomArray,
    params: PhysicalParams,
    regime: str = "room",
    gamma_P: float = 0.0,
) -> list[JumpOperatorSpec]:
    """Dissipation channels of the full model.

    Room temperature: all six nearest-neighbour transitions of each main atom
    at the BBR rate and both relay transitions at the low-ℓ rate. Cryogenic:
    only the three downward emission channels of each main atom (relay
    channels only if ``gamma_ell_cryo > 0``). ``gamma_P > 0`` adds a
    ``sqrt(gamma_P)|alpha><alpha|`` channel on every relay.
    """
    M = MainLevel
    if regime == "room":
        main_channels = [(M.UP2, M.UP), (M.UP, M.UP2), (M.UP, M.DOWN),
                         (M.DOWN, M.UP), (M.DOWN, M.DOWN2), (M.DOWN2, M.DOWN)]
    else:
        main_channels = [(M.DOWN2, M.DOWN), (M.DOWN, M.UP), (M.UP, M.UP2)]
    main_rate = params.main_rate(regime)
    relay_rate = params.relay_rate(regime)
    specs = []
    for a, role in enumerate(array.roles):
        if role is AtomRole.MAIN:
            if main_rate > 0:
                specs += [JumpOperatorSpec(a, int(n), int(m), main_rate) for m, n in main_channels]
        else:
            if relay_rate > 0:
                specs += [JumpOperatorSpec(a, int(RelayLevel.BETA), int(RelayLevel.ALPHA), relay_rate),
                          JumpOperatorSpec(a, int(RelayLevel.ALPHA), int(RelayLevel.BETA), relay_rate)]
            if gamma_P > 0:
                specs.append(JumpOperatorSpec(a, int(RelayLevel.ALPHA), int(RelayLevel.ALPHA), gamma_P))
    return specs


def jump_operator_matrices(specs, dims) -> list[sp.csr_matrix]:
    """Sparse matrices ``sqrt(rate)|to><from|`` for the given channel specs."""
    return [np.sqrt(s.rate) * local_operator(_projector(s.to_level, s.from_level, dims[s.atom]),
                                             s.atom, dims)
            for s in specs if s.rate > 0]


# --------------------------------------------------------------------------
# superoperators (row-major vectorization: vec(A X B) = (A ⊗ Bᵀ) vec X)


def _left(A, dim):
    return sp.kron(sp.csr_matrix(A), sp.identity(dim, format="csr"), format="csr")


def _right(B, dim):
    return sp.kron(sp.identity(dim, format="csr"), sp.csr_matrix(B).T, format="csr")


def dissipator(L) -> sp.csr_matrix:
    """Superoperator of ρ ↦ [Lρ, L†] + [L, ρL†]."""
    L = sp.csr_matrix(L)
    dim = L.shape[0]
    Ld = L.conj().T
    comm_1 = _right(Ld, dim) @ _left(L, dim) - _left(Ld, dim) @ _left(L, dim)
    comm_2 = _left(L, dim) @ _right(Ld, dim) - _right(L, dim) @ _right(Ld, dim)
    return (comm_1 + comm_2).tocsr()


def liouvillian(H, jumps) -> sp.csr_matrix:
    """Generator of dρ/dt = -2πi[H, ρ] + Σ D[L]ρ acting on row-major vec(ρ)."""
    H = sp.csr_matrix(H)
    dim = H.shape[0]
    gen = -2j * np.pi * (_left(H, dim) - _right(H, dim))
    for L in jumps:
        gen = gen + dissipator(L)
    return gen.tocsr()


# --------------------------------------------------------------------------
# integrators


def _check_times(times):
    times = np.asarray(times, float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a nonempty 1-D sequence")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    return times


def _expectation_fn(obs, dim):
    obs = sp.coo_matrix(obs)
    rows, cols, vals = obs.row, obs.col, obs.data

    def value(rho):
        return float(np.real(np.sum(vals * rho[cols, rows])))
    return value


def evolve_master_equation(
    H,
    jumps,
    rho0,
    times,
    observables: dict | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    trace_tol: float = 1e-6,
    dims: tuple | None = None,
) -> Trajectory:
    """Integrate the Lindblad equation with an adaptive 8th-order Runge-Kutta scheme.

    ``observables`` maps names to operators; ``tr(O ρ)`` is recorded at every
    requested time, together with ``"trace"``. Raises :class:`IntegrationError`
    if the integrator fails or the trace drifts by more than ``trace_tol``.
    """
    times = _check_times(times)
    H = sp.csr_matrix(H)
    dim = H.shape[0]
    rho0 = np.asarray(rho0, complex)
    if rho0.shape != (dim, dim):
        raise DimensionError(f"rho0 has shape {rho0.shape}, Hamiltonian has dimension {dim}")
    QuantumState(rho0, dims or (dim,)).check()
    gen = liouvillian(H, [sp.csr_matrix(L) for L in jumps])
    for L in jumps:
        if L.shape != (dim, dim):
            raise DimensionError("jump operator dimension does not match the Hamiltonian")
    fns = {name: _expectation_fn(op, dim) for name, op in (observables or {}).items()}
    records = {name: np.empty(len(times)) for name in fns}
    records["trace"] = np.empty(len(times))

    def record(k, y):
        rho = y.reshape(dim, dim)
        for name, fn in fns.items():
            records[name][k] = fn(rho)
        records["trace"][k] = float(np.real(np.trace(rho)))

    y0 = rho0.ravel()
    record(0, y0)
    k = 1
    y_last = y0
    if len(times) > 1:
        solver = DOP853(lambda t, y: gen @ y, times[0], y0, times[-1], rtol=rtol, atol=atol)
        while k < len(times):
            message = solver.step()
            if solver.status == "failed":
                raise IntegrationError(f"integrator failed: {message}")
            interp = solver.dense_output()
            while k < len(times) and times[k] <= solver.t:
                y_last = interp(times[k]) if times[k] < solver.t else solver.y.copy()
                record(k, y_last)
                k += 1
            if solver.status == "finished" and k < len(times):
                y_last = solver.y.copy()
                while k < len(times):
                    record(k, y_last)
                    k += 1
    drift = float(np.max(np.abs(records["trace"] - 1.0)))
    if drift > trace_tol:
        raise IntegrationError(f"trace drifted by {drift:.3g} (tolerance {trace_tol:g})")
    rho_final = y_last.reshape(dim, dim)
    return Trajectory(times, records, QuantumState(rho_final, dims or (dim,)),
                      metadata={"rtol": rtol, "atol": atol, "trace_drift": drift})


def evolve_pure(H, psi0, times, observables: dict | None = None, dims=None,
                return_states: bool = False):
    """Exact state-vector evolution under a time-independent Hermitian H (MHz, μs).

    Returns a :class:`Trajectory`; with ``return_states`` also the array of
    states, shape ``(len(times), dim)``.
    """
    times = _check_times(times)
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    psi0 = np.asarray(psi0, complex)
    if psi0.shape != (Hd.shape[0],):
        raise DimensionError("psi0 does not match the Hamiltonian dimension")
    w, U = np.linalg.eigh(Hd)
    coeff = U.conj().T @ psi0
    phases = np.exp(-2j * np.pi * np.outer(times - times[0], w))
    states = (phases * coeff[None, :]) @ U.T
    records = {}
    for name, op in (observables or {}).items():
        op = sp.csr_matrix(op)
        records[name] = np.real(np.einsum("ti,ti->t", states.conj(), (op @ states.T).T))
    traj = Trajectory(times, records, QuantumState(states[-1], dims or (len(psi0),)))
    return (traj, states) if return_states else traj


# --------------------------------------------------------------------------
# effective spin model


def _spin_dims(n):
    return (2,) * n


def effective_hamiltonian(model: EffectiveModel) -> sp.csr_matrix:
    """Σ_{i<j} J_ij (σ_i†σ_j + h.c.) + Σ_i δ_i |up><up|_i on N two-level spins."""
    n = model.N
    dims = _spin_dims(n)
    raise_ops = [local_operator(_projector(1, 0, 2), i, dims) for i in range(n)]
    dim = 2**n
    H = sp.csr_matrix((dim, dim), dtype=complex)
    for i in range(n):
        H = H + model.delta_eff[i] * (raise_ops[i] @ raise_ops[i].conj().T)
        for j in range(i + 1, n):
            if model.J[i, j] != 0:
                hop = raise_ops[i] @ raise_ops[j].conj().T
                H = H + model.J[i, j] * (hop + hop.conj().T)
    return H.tocsr()


def spin_population_ops(n):
    dims = _spin_dims(n)
    return {f"P_up[{i}]": local_operator(_projector(1, 1, 2), i, dims) for i in range(n)}


def spin_basis_state(n, up_sites) -> np.ndarray:
    up = set(up_sites)
    return product_state([1 if i in up else 0 for i in range(n)], _spin_dims(n))


def evolve_effective(model: EffectiveModel, state0, times, dissipative: bool = False) -> Trajectory:
    """Evolve N effective spins; adds decay ``sqrt(γ_i) |down><up|_i`` when ``dissipative``.

    The non-dissipative path uses exact state-vector propagation (N ≤ 12); the
    dissipative path integrates the density matrix (N ≤ 6).
    """
    n = model.N
    H = effective_hamiltonian(model)
    obs = spin_population_ops(n)
    state0 = np.asarray(state0, complex)
    if not dissipative:
        if n > MAX_PURE_SITES:
            raise DimensionError(f"pure-state evolution supports N <= {MAX_PURE_SITES}")
        if state0.ndim != 1:
            raise ValueError("non-dissipative evolution needs a state vector")
        return evolve_pure(H, state0, times, obs, dims=_spin_dims(n))
    if n > MAX_MIXED_SITES:
        raise DimensionError(f"density-matrix evolution supports N <= {MAX_MIXED_SITES}")
    rho0 = np.outer(state0, state0.conj()) if state0.ndim == 1 else state0
    dims = _spin_dims(n)
    jumps = [np.sqrt(g) * local_operator(_projector(0, 1, 2), i, dims)
             for i, g in enumerate(model.gamma_eff) if g > 0]
    return evolve_master_equation(H, jumps, rho0, times, obs, dims=dims)


def fidelity(a, b) -> float:
    """Squared overlap of two pure states."""
    a = np.asarray(a.data if isinstance(a, QuantumState) else a)
    b = np.asarray(b.data if isinstance(b, QuantumState) else b)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("fidelity is only defined here for pure states")
    if a.shape != b.shape:
        raise DimensionError("states have different dimensions")
    return float(min(1.0, abs(np.vdot(a, b)) ** 2))


# --------------------------------------------------------------------------
# full-model pipelines


def full_population_ops(array: AtomArray):
    dims = LEVELS.dims(array)
    obs = {}
    for a, role in enumerate(array.roles):
        if role is AtomRole.MAIN:
            obs[f"P_up[{a}]"] = local_operator(_projector(MainLevel.UP, MainLevel.UP, 4), a, dims)
        else:
            obs[f"P_beta[{a - array.N}]"] = local_operator(
                _projector(RelayLevel.BETA, RelayLevel.BETA, 2), a, dims)
    return obs


def full_initial_state(array: AtomArray, site0: int) -> np.ndarray:
    """Main ``site0`` in up, other mains down, all relays in alpha."""
    levels = [MainLevel.UP if a == site0 else MainLevel.DOWN for a in range(array.N)]
    levels += [RelayLevel.ALPHA] * array.N_R
    return product_state(levels, LEVELS.dims(array))


def exchange_period(model: EffectiveModel, site0: int = 0) -> float:
    """Population-exchange period 1/(2|J|) (μs) with the strongest partner of ``site0``."""
    J = np.abs(model.J[site0])
    if J.max() == 0:
        raise ValueError("site has no effective coupling")
    return 1.0 / (2.0 * J.max())


def run_full_model(array, params, site0=0, times=None, regime="room", gamma_P=0.0,
                   max_dim=DEFAULT_MAX_DIM, rtol=1e-8, atol=1e-10) -> Trajectory:
    H = build_full_hamiltonian(array, params, max_dim=max_dim)
    dims = LEVELS.dims(array)
    jumps = jump_operator_matrices(build_jump_operators(array, params, regime, gamma_P), dims)
    psi0 = full_initial_state(array, site0)
    return evolve_master_equation(H, jumps, np.outer(psi0, psi0.conj()), times,
                                  full_population_ops(array), rtol=rtol, atol=atol, dims=dims)


@dataclass
class Comparison:
    full: Trajectory
    effective: Trajectory
    max_deviation: float
    deviation_per_site: dict[str, float]

    def summary(self) -> dict:
        return {"max_deviation": self.max_deviation, "deviation_per_site": self.deviation_per_site,
                "t_start": float(self.full.times[0]), "t_end": float(self.full.times[-1]),
                "n_times": int(len(self.full.times))}


def default_times(model: EffectiveModel, site0=0, periods=1.0, n=2001):
    return np.linspace(0.0, periods * exchange_period(model, site0), n)


def compare_full_vs_effective(
    array: AtomArray,
    params: PhysicalParams,
    site0: int = 0,
    times=None,
    regime: str = "room",
    dissipative: bool = True,
    max_dim: int = DEFAULT_MAX_DIM,
) -> Comparison:
    """Run the full master equation and the effective model from the same initial excitation."""
    model = eliminate(array, params, regime)
    times = default_times(model, site0) if times is None else _check_times(times)
    full = run_full_model(array, params, site0, times, regime, max_dim=max_dim)
    effective = evolve_effective(model, spin_basis_state(array.N, [site0]), times, dissipative)
    per_site = {}
    for i in range(array.N):
        key = f"P_up[{i}]"
        per_site[key] = float(np.max(np.abs(full[key] - effective[key])))
    return Comparison(full, effective, max(per_site.values()), per_site)


def gamma_p_sweep(
    array: AtomArray,
    params: PhysicalParams,
    gammas=(0.0, 0.001, 1.0, 100.0),
    times=None,
    site0: int = 0,
    regime: str = "room",
) -> dict[float, Trajectory]:
    """Full-model trajectories with an extra |alpha><alpha| channel of rate γ_P (MHz) per relay."""
    if times is None:
        times = default_times(eliminate(array, params, regime), site0)
    return {float(g): run_full_model(array, params, site0, times, regime, gamma_P=g) for g in gammas}


@dataclass
class ProtocolResult:
    no_loss: Trajectory
    loss: Trajectory
    loss_repump: Trajectory
    t_loss: float
    t_reinjection: float
    period: float


def _piecewise_pure(segments, psi0, times, obs):
    """Evolve through ``[(t_start, H), ...]`` (each H valid until the next start)."""
    states = np.empty((len(times), len(psi0)), complex)
    psi = np.asarray(psi0, complex)
    for k, (t0, H) in enumerate(segments):
        t1 = segments[k + 1][0] if k + 1 < len(segments) else np.inf
        w, U = np.linalg.eigh(H.toarray() if sp.issparse(H) else H)
        coeff = U.conj().T @ psi
        sel = np.flatnonzero((times >= t0) & (times < t1)) if k else np.flatnonzero(times < t1)
        if sel.size:
            ph = np.exp(-2j * np.pi * np.outer(times[sel] - t0, w))
            states[sel] = (ph * coeff) @ U.T
        if np.isfinite(t1):
            psi = U @ (np.exp(-2j * np.pi * w * (t1 - t0)) * coeff)
    records = {name: np.real(np.einsum("ti,ti->t", states.conj(), (sp.csr_matrix(op) @ states.T).T))
               for name, op in obs.items()}
    return states, records


def loss_repump_protocol(
    array: AtomArray,
    params: PhysicalParams,
    t_loss: float | None = None,
    t_reinjection: float | None = None,
    t_final: float | None = None,
    times=None,
    removed_relay: int = 0,
    site0: int = 0,
    regime: str = "room",
    n_times: int = 2001,
) -> ProtocolResult:
    """Effective-model dynamics with a relay lost at ``t_loss`` and repumped at ``t_reinjection``.

    Three non-dissipative runs on the same spin space: no loss, loss without
    repumping, and loss with repumping. The loss variants also record
    ``"fidelity"`` with respect to the no-loss state. Default times are
    fractions of the exchange period ``T``: ``t_loss = T/4``,
    ``t_reinjection = T/2``, ``t_final = 2T``.
    """
    full = eliminate(array, params, regime)
    reduced = eliminate(array.without_relays([removed_relay]), params, regime)
    T = exchange_period(full, site0)
    t_loss = 0.25 * T if t_loss is None else float(t_loss)
    t_reinjection = 0.5 * T if t_reinjection is None else float(t_reinjection)
    t_final = 2.0 * T if t_final is None else float(t_final)
    if t_loss > t_reinjection:
        raise ValueError("t_loss must not exceed t_reinjection")
    if times is None:
        times = np.linspace(0.0, t_final, n_times)
    times = _check_times(times)
    H_full = effective_hamiltonian(full)
    H_red = effective_hamiltonian(reduced)
    psi0 = spin_basis_state(array.N, [site0])
    obs = spin_population_ops(array.N)
    runs = {
        "no_loss": [(times[0], H_full)],
        "loss": [(times[0], H_full), (t_loss, H_red)],
        "loss_repump": [(times[0], H_full), (t_loss, H_red), (t_reinjection, H_full)],
    }
    out = {}
    ref_states = None
    for name, segments in runs.items():
        states, records = _piecewise_pure(segments, psi0, times, obs)
        if ref_states is None:
            ref_states = states
        records["fidelity"] = np.minimum(1.0, np.abs(np.einsum("ti,ti->t", ref_states.conj(), states)) ** 2)
        out[name] = Trajectory(times, records, QuantumState(states[-1], _spin_dims(array.N)),
                               metadata={"segments": [float(s[0]) for s in segments]})
    return ProtocolResult(out["no_loss"], out["loss"], out["loss_repump"], t_loss, t_reinjection, T)
