"""Iterative regularization schemes.

All methods solve K f = y^delta iteratively from a starting guess f0 and are
stopped either a priori, by Morozov's discrepancy principle, or by an
iteration cap.  The accelerated schemes discretize a second-order flow with
vanishing damping (1+2s)/t; they admit an equivalent three-term form

    f^{k+1} = f^k + a_k (f^k - f^{k-1}) + w_k K*(y^delta - K f^k)

which is exposed through the coefficient functions and the generic
``run_semi_iterative`` engine (this is also the hook for variable step
sizes: pass a coefficient sequence built from dt_k).
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import estimate_norm

DIVERGENCE_FACTOR = 1e6

METHODS = ("arm", "msvm", "nu", "nesterov", "landweber")


@dataclass(frozen=True)
class SchemeParams:
    """Tuning knobs shared by the schemes.

    s      damping exponent of the second-order flow, s >= -1/2
    dt     artificial time step for arm/msvm/landweber
    nu     order of the nu-method (1/2 reproduces the Chebyshev method)
    alpha  Nesterov momentum offset, alpha >= 3
    omega  normalization weight for nu/nesterov; defaults to 1/||K*K||
    """

    s: float = 1.0
    dt: float = 0.1
    nu: float = 0.5
    alpha: float = 3.0
    omega: float | None = None

    def __post_init__(self):
        if self.s < -0.5:
            raise ValueError("damping exponent s must be >= -1/2")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.nu <= 0.0:
            raise ValueError("nu must be positive")
        if self.alpha < 3.0:
            raise ValueError("alpha must be >= 3")
        if self.omega is not None and self.omega <= 0.0:
            raise ValueError("omega must be positive")


@dataclass
class IterationState:
    """Iterate pair and velocity of a scheme at step index k (time t = k dt)."""

    f_curr: np.ndarray
    f_prev: np.ndarray
    q: np.ndarray
    k: int
    t: float
    grad: np.ndarray | None = None  # cached K*(y - K f_curr), cost only
    residual: np.ndarray | None = None  # cached y - K f_curr, cost only

    @classmethod
    def initial(cls, f0):
        f0 = np.asarray(f0, dtype=float)
        return cls(f_curr=f0, f_prev=f0.copy(), q=np.zeros_like(f0), k=0, t=0.0)


@dataclass(frozen=True)
class StoppingRule:
    """A priori index, discrepancy principle, or plain cap; composable.

    The discrepancy rule fires at the first k with ||y^delta - K f^k|| <=
    tau * delta and is always paired with the cap n_max.
    """

    kind: str
    k_star: int | None = None
    tau: float | None = None
    delta: float | None = None
    n_max: int = 5000

    @classmethod
    def a_priori(cls, k_star):
        if k_star < 1:
            raise ValueError("a priori stopping index must be >= 1")
        return cls(kind="a_priori", k_star=int(k_star), n_max=int(k_star))

    @classmethod
    def discrepancy(cls, tau, delta, n_max=5000):
        if tau <= 0.0:
            raise ValueError("tau must be positive")
        if tau <= 1.0:
            # theory needs tau > 1; smaller values are still useful in sweeps
            warnings.warn("discrepancy principle with tau <= 1 has no convergence guarantee")
        if delta < 0.0:
            raise ValueError("delta must be >= 0")
        return cls(kind="discrepancy", tau=float(tau), delta=float(delta), n_max=int(n_max))

    @classmethod
    def max_iter(cls, n_max):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        return cls(kind="max_iter", n_max=int(n_max))


@dataclass
class RunRecord:
    """Outcome of one solver run.

    residual_history[k] is ||y^delta - K f^k|| for k = 0..k_star, so the
    history always has k_star + 1 entries.  error_history holds the relative
    errors E_k when a ground truth was supplied.  stopped_by is one of
    "discrepancy", "a_priori", "max_iter", "initial_discrepancy",
    "divergence".
    """

    method: str
    params: SchemeParams
    residual_history: np.ndarray
    error_history: np.ndarray | None
    k_star: int
    stopped_by: str
    f_final: np.ndarray | None = None
    lyapunov_history: np.ndarray | None = None
    iterates: list = field(default_factory=list)

    @property
    def final_error(self):
        if self.error_history is None:
            return None
        return float(self.error_history[-1])


# ---------------------------------------------------------------------------
# coefficient pairs of the three-term form


def arm_coefficients(k, s, dt):
    """(a_k, w_k) of the damped Verlet scheme at step k >= 1.

    a_k = (2k - (1+2s)) / (2k + (1+2s)),  w_k = 2 dt^2 k / (2k + (1+2s)),
    with w_k lifted to dt^2/2 for k <= s + 1/2, so w_k >= dt^2/2 throughout.
    """
    if k < 1:
        raise ValueError("coefficients are defined for k >= 1; the k = 0 step is w_0 = dt^2/2")
    two_k = 2.0 * k
    d = 1.0 + 2.0 * s
    a = (two_k - d) / (two_k + d)
    if k <= s + 0.5:
        w = 0.5 * dt * dt
    else:
        w = 2.0 * dt * dt * k / (two_k + d)
    return a, w


def msv_coefficients(k, s, dt):
    """(a_k, w_k) of the modified (explicit-damping) Verlet scheme, k >= 1.

    With b = (1+2s)/(2k):  a_k = (1-b)^2,  w_k = (dt^2/2)(2-b).
    """
    if k < 1:
        raise ValueError("coefficients are defined for k >= 1; the k = 0 step is w_0 = dt^2/2")
    b = (1.0 + 2.0 * s) / (2.0 * k)
    return (1.0 - b) ** 2, 0.5 * dt * dt * (2.0 - b)


def euler_coefficients(k, s, dt):
    """(a_k, w_k) of the plain damped Euler discretization, k >= 1."""
    if k < 1:
        raise ValueError("coefficients are defined for k >= 1")
    return 1.0 - (1.0 + 2.0 * s) / k, dt


def nu_coefficients(k, nu):
    """(mu_k, w_k) of the nu-method, k >= 1; mu_1 = 0, w_1 = (4nu+2)/(4nu+1)."""
    if k < 1:
        raise ValueError("nu-method coefficients are defined for k >= 1")
    if k == 1:
        return 0.0, (4.0 * nu + 2.0) / (4.0 * nu + 1.0)
    mu = ((k - 1.0) * (2.0 * k - 3.0) * (2.0 * k + 2.0 * nu - 1.0)) / (
        (k + 2.0 * nu - 1.0) * (2.0 * k + 4.0 * nu - 1.0) * (2.0 * k + 2.0 * nu - 3.0)
    )
    w = 4.0 * ((2.0 * k + 2.0 * nu - 1.0) * (k + nu - 1.0)) / (
        (k + 2.0 * nu - 1.0) * (2.0 * k + 4.0 * nu - 1.0)
    )
    return mu, w


def theta_sequence(k, s):
    """theta_k = (2s+1)/(2k+2), the auxiliary sequence behind a_k."""
    return (2.0 * s + 1.0) / (2.0 * k + 2.0)


# ---------------------------------------------------------------------------
# single steps


def _gradient(op, y_delta, f):
    return op.apply_adjoint(y_delta - op.apply(f))


def semi_iterative_step(state, a_k, omega_k, op, y_delta, dt=None):
    """One step of the generic three-term recurrence.

    Advances f only; the velocity is kept consistent as the forward
    difference of the position update (q tracking for the Verlet schemes is
    done by their own steppers).
    """
    g = state.grad if state.grad is not None else _gradient(op, y_delta, state.f_curr)
    f_next = state.f_curr + a_k * (state.f_curr - state.f_prev) + omega_k * g
    dt = dt if dt is not None else (state.t / state.k if state.k > 0 else 1.0)
    k_next = state.k + 1
    return IterationState(
        f_curr=f_next,
        f_prev=state.f_curr,
        q=(f_next - state.f_curr) / dt,
        k=k_next,
        t=k_next * dt,
    )


def _half_velocity(state, params, g):
    """Half-step velocity q^{k+1/2} of the damped Verlet scheme."""
    s, dt, k = params.s, params.dt, state.k
    if k == 0:
        # t_0 = 0 makes the implicit damping singular; the no-damping limit
        # reproduces the semi-iterative first step f^1 = f^0 + (dt^2/2) g^0
        return 0.5 * dt * g
    if k <= s + 0.5:
        a, w = arm_coefficients(k, s, dt)
        return a * (state.f_curr - state.f_prev) / dt + (w / dt) * g
    beta = dt * (1.0 + 2.0 * s) / (2.0 * state.t)
    return (state.q + 0.5 * dt * g) / (1.0 + beta)


def _finish_step(state, params, op, y_delta, q_half):
    dt, s = params.dt, params.s
    f_next = state.f_curr + dt * q_half
    res_next = y_delta - op.apply(f_next)
    g_next = op.apply_adjoint(res_next)
    k_next = state.k + 1
    t_next = k_next * dt
    damp = dt * (1.0 + 2.0 * s) / (2.0 * t_next)
    q_next = (1.0 - damp) * q_half + 0.5 * dt * g_next
    return IterationState(
        f_curr=f_next, f_prev=state.f_curr, q=q_next, k=k_next, t=t_next,
        grad=g_next, residual=res_next,
    )


def sv_step(state, params, op, y_delta):
    """One step of the damped Stormer-Verlet scheme (implicit half-damping)."""
    g = state.grad if state.grad is not None else _gradient(op, y_delta, state.f_curr)
    q_half = _half_velocity(state, params, g)
    return _finish_step(state, params, op, y_delta, q_half)


def msv_step(state, params, op, y_delta):
    """One step of the modified scheme (explicit damping sub-step)."""
    s, dt, k = params.s, params.dt, state.k
    g = state.grad if state.grad is not None else _gradient(op, y_delta, state.f_curr)
    if k == 0:
        q_half = 0.5 * dt * g
    else:
        beta = dt * (1.0 + 2.0 * s) / (2.0 * state.t)
        q_half = (1.0 - beta) * state.q + 0.5 * dt * g
    return _finish_step(state, params, op, y_delta, q_half)


def nu_step(state, params, op, y_delta):
    """One nu-method step; the update producing f^k uses (mu_k, w_k)."""
    mu, w = nu_coefficients(state.k + 1, params.nu)
    omega = params.omega if params.omega is not None else 1.0
    g = state.grad if state.grad is not None else _gradient(op, y_delta, state.f_curr)
    f_next = state.f_curr + mu * (state.f_curr - state.f_prev) + omega * w * g
    k_next = state.k + 1
    dt = params.dt
    return IterationState(
        f_curr=f_next, f_prev=state.f_curr, q=(f_next - state.f_curr) / dt, k=k_next, t=k_next * dt
    )


def nesterov_step(state, params, op, y_delta):
    """One Nesterov step; the gradient is evaluated at the extrapolated point."""
    k = state.k
    omega = params.omega if params.omega is not None else 1.0
    m = (k - 1.0) / (k + params.alpha - 1.0) if k >= 1 else 0.0
    z = state.f_curr + m * (state.f_curr - state.f_prev)
    f_next = z + omega * _gradient(op, y_delta, z)
    k_next = k + 1
    dt = params.dt
    return IterationState(
        f_curr=f_next, f_prev=state.f_curr, q=(f_next - state.f_curr) / dt, k=k_next, t=k_next * dt
    )


def landweber_step(state, params, op, y_delta):
    """One Landweber step f^{k+1} = f^k + dt K*(y^delta - K f^k)."""
    g = state.grad if state.grad is not None else _gradient(op, y_delta, state.f_curr)
    f_next = state.f_curr + params.dt * g
    k_next = state.k + 1
    return IterationState(
        f_curr=f_next,
        f_prev=state.f_curr,
        q=(f_next - state.f_curr) / params.dt,
        k=k_next,
        t=k_next * params.dt,
    )


_STEPPERS = {
    "arm": sv_step,
    "msvm": msv_step,
    "nu": nu_step,
    "nesterov": nesterov_step,
    "landweber": landweber_step,
}


# ---------------------------------------------------------------------------
# step-size admissibility


def validate_step(method, params, op_norm, enforce=True):
    """Check the step size against the operator norm estimate.

    Landweber requires dt in (0, 2/||K||^2) and is always rejected outside
    it.  The second-order schemes are checked against dt <= 1/||K||, the
    condition under which |r_k| <= 1 holds; with enforce=False a violation
    only warns, which is what the step-size sweeps and the reference BLT
    configurations (dt beyond 1/||K|| but inside the 2/||K|| stability bound)
    rely on.  nu/nesterov check omega <= 1/||K||^2 the same way.
    """
    if op_norm <= 0.0:
        return
    if method == "landweber":
        if params.dt >= 2.0 / op_norm**2:
            raise ValueError(
                f"Landweber step {params.dt} outside (0, {2.0 / op_norm ** 2:.6g})"
            )
        return
    if method in ("arm", "msvm"):
        if params.dt * op_norm > 1.0 + 1e-12:
            msg = (
                f"dt * ||K|| = {params.dt * op_norm:.4g} > 1; "
                "residual polynomials may exceed 1 and the scheme can diverge"
            )
            if enforce:
                raise ValueError(msg)
            warnings.warn(msg)
        return
    if method in ("nu", "nesterov"):
        omega = params.omega
        if omega is not None and omega * op_norm**2 > 1.0 + 1e-12:
            msg = f"omega * ||K||^2 = {omega * op_norm ** 2:.4g} > 1"
            if enforce:
                raise ValueError(msg)
            warnings.warn(msg)
        return
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------------------
# run driver


def run(
    method,
    op,
    y_delta,
    f0,
    params,
    stop,
    truth=None,
    keep_iterates=False,
    op_norm=None,
    enforce_step_bound=True,
    norm_seed=0,
):
    """Iterate a scheme until the stopping rule fires.

    Returns a RunRecord with the residual history ||y^delta - K f^k|| for
    k = 0..k_star and, when truth is given, the relative error history
    E_k = ||f^k - truth|| / ||truth|| in the domain norm.  k_star is the
    first index satisfying the rule.  If the residual ever exceeds 1e6 times
    the initial residual the run is aborted with status "divergence".

    op_norm may be passed to skip the power-iteration estimate (matrix-free
    operators).  enforce_step_bound=False downgrades the second-order step
    bound dt <= 1/||K|| to a warning.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    y_delta = np.asarray(y_delta, dtype=float)
    f0 = np.asarray(f0, dtype=float)

    if op_norm is None:
        op_norm = estimate_norm(op, iters=100, seed=norm_seed)
    if params.omega is None and method in ("nu", "nesterov"):
        if op_norm <= 0.0:
            raise ValueError("cannot default omega for a zero operator")
        params = replace(params, omega=1.0 / op_norm**2)
    validate_step(method, params, op_norm, enforce=enforce_step_bound)

    truth_norm = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        truth_norm = op.domain.norm(truth)

    second_order = method in ("arm", "msvm")
    needs_grad = method in ("arm", "msvm", "nu", "landweber")
    stepper = _STEPPERS[method]

    state = IterationState.initial(f0)
    residual = y_delta - op.apply(state.f_curr)
    resnorm = op.range.norm(residual)
    if needs_grad:
        state.grad = op.apply_adjoint(residual)

    residuals = [resnorm]
    errors = None
    if truth is not None:
        errors = [_relative_error(state.f_curr, truth, truth_norm, op)]
    lyap = [0.5 * op.domain.norm(state.q) ** 2 + 0.5 * resnorm**2] if second_order else None
    iterates = [state.f_curr.copy()] if keep_iterates else []

    guard = DIVERGENCE_FACTOR * resnorm if resnorm > 0.0 else np.inf
    stopped_by = None

    if stop.kind == "discrepancy" and resnorm <= stop.tau * stop.delta:
        stopped_by = "initial_discrepancy"

    while stopped_by is None:
        if state.k >= stop.n_max:
            stopped_by = "max_iter"
            break
        state = stepper(state, params, op, y_delta)
        if state.residual is None:
            state.residual = y_delta - op.apply(state.f_curr)
        if needs_grad and state.grad is None:
            state.grad = op.apply_adjoint(state.residual)
        resnorm = op.range.norm(state.residual)

        residuals.append(resnorm)
        if truth is not None:
            errors.append(_relative_error(state.f_curr, truth, truth_norm, op))
        if second_order:
            lyap.append(0.5 * op.domain.norm(state.q) ** 2 + 0.5 * resnorm**2)
        if keep_iterates:
            iterates.append(state.f_curr.copy())

        if not np.isfinite(resnorm) or resnorm > guard:
            stopped_by = "divergence"
            break
        if stop.kind == "discrepancy" and resnorm <= stop.tau * stop.delta:
            stopped_by = "discrepancy"
            break
        if stop.kind == "a_priori" and state.k >= stop.k_star:
            stopped_by = "a_priori"
            break

    return RunRecord(
        method=method,
        params=params,
        residual_history=np.asarray(residuals),
        error_history=None if errors is None else np.asarray(errors),
        k_star=state.k,
        stopped_by=stopped_by,
        f_final=state.f_curr.copy(),
        lyapunov_history=None if lyap is None else np.asarray(lyap),
        iterates=iterates,
    )


def _relative_error(f, truth, truth_norm, op):
    if truth_norm == 0.0:
        return op.domain.norm(f - truth)
    return op.domain.norm(f - truth) / truth_norm


def run_semi_iterative(op, y_delta, f0, coefficients, stop, dt=1.0, truth=None):
    """Drive the three-term engine with an arbitrary coefficient sequence.

    coefficients(k) must return (a_k, w_k) for k >= 1; the first step always
    uses (0, w_0) with w_0 = coefficients(0), which may return the pair for
    k = 0 or raise, in which case dt^2/2 is used.  This is the entry point
    for variable step sizes dt_k.
    """
    y_delta = np.asarray(y_delta, dtype=float)
    state = IterationState.initial(f0)
    truth_norm = op.domain.norm(np.asarray(truth, float)) if truth is not None else None

    residual = y_delta - op.apply(state.f_curr)
    resnorm = op.range.norm(residual)
    state.grad = op.apply_adjoint(residual)
    residuals = [resnorm]
    errors = [_relative_error(state.f_curr, truth, truth_norm, op)] if truth is not None else None
    guard = DIVERGENCE_FACTOR * resnorm if resnorm > 0.0 else np.inf
    stopped_by = None

    if stop.kind == "discrepancy" and resnorm <= stop.tau * stop.delta:
        stopped_by = "initial_discrepancy"

    while stopped_by is None:
        if state.k >= stop.n_max:
            stopped_by = "max_iter"
            break
        if state.k == 0:
            try:
                a_k, w_k = coefficients(0)
            except ValueError:
                a_k, w_k = 0.0, 0.5 * dt * dt
        else:
            a_k, w_k = coefficients(state.k)
        state = semi_iterative_step(state, a_k, w_k, op, y_delta, dt=dt)
        residual = y_delta - op.apply(state.f_curr)
        resnorm = op.range.norm(residual)
        state.grad = op.apply_adjoint(residual)
        residuals.append(resnorm)
        if truth is not None:
            errors.append(_relative_error(state.f_curr, truth, truth_norm, op))
        if not np.isfinite(resnorm) or resnorm > guard:
            stopped_by = "divergence"
            break
        if stop.kind == "discrepancy" and resnorm <= stop.tau * stop.delta:
            stopped_by = "discrepancy"
            break
        if stop.kind == "a_priori" and state.k >= stop.k_star:
            stopped_by = "a_priori"
            break

    return RunRecord(
        method="semi_iterative",
        params=SchemeParams(dt=dt),
        residual_history=np.asarray(residuals),
        error_history=None if errors is None else np.asarray(errors),
        k_star=state.k,
        stopped_by=stopped_by,
        f_final=state.f_curr.copy(),
    )


# ---------------------------------------------------------------------------
# residual polynomials


def residual_polynomial(method, k, lam, params):
    """r_k(lambda) = 1 - lambda g_k(lambda) of a scheme.

    Evaluated by running the scheme on the scalar problem K = sqrt(lambda),
    y^delta = 0, f_0 = 1, for which f^k = r_k(lambda).  r_0 = 1 and
    r_k(0) = 1 for every method.
    """
    if lam < 0.0:
        raise ValueError("lambda must be >= 0")
    if k < 0:
        raise ValueError("k must be >= 0")
    return float(residual_polynomial_grid(method, [k], np.asarray([lam]), params)[0, 0])


def residual_polynomial_grid(method, ks, lams, params):
    """r_k(lambda) on a lambda grid for each requested k (vectorized).

    Returns an array of shape (len(ks), len(lams)).
    """
    lams = np.asarray(lams, dtype=float)
    if np.any(lams < 0.0):
        raise ValueError("lambda must be >= 0")
    ks = list(ks)
    k_max = max(ks) if ks else 0
    want = {k: i for i, k in enumerate(sorted(set(ks)))}
    out = np.empty((len(want), lams.size))

    omega = params.omega if params.omega is not None else 1.0
    r = np.ones_like(lams)  # r_0
    r_prev = np.ones_like(lams)  # r_{-1}
    if 0 in want:
        out[want[0]] = r

    for k in range(k_max):
        # step producing r_{k+1} from (r_k, r_{k-1}); gradient term is -lam*r
        if method in ("arm", "msvm"):
            coeff = arm_coefficients if method == "arm" else msv_coefficients
            if k == 0:
                a, w = 0.0, 0.5 * params.dt**2
            else:
                a, w = coeff(k, params.s, params.dt)
            r_next = r + a * (r - r_prev) - w * lams * r
        elif method == "nu":
            mu, w = nu_coefficients(k + 1, params.nu)
            r_next = r + mu * (r - r_prev) - omega * w * lams * r
        elif method == "nesterov":
            m = (k - 1.0) / (k + params.alpha - 1.0) if k >= 1 else 0.0
            z = r + m * (r - r_prev)
            r_next = z - omega * lams * z
        elif method == "landweber":
            r_next = r - params.dt * lams * r
        else:
            raise ValueError(f"unknown method {method!r}")
        r_prev, r = r, r_next
        if k + 1 in want:
            out[want[k + 1]] = r

    return out[[want[k] for k in ks]]
