"""Hybrid Monte Carlo over either coordinate system of a factor graph.

The chain targets the free coordinates of a model conditioned on observed
data with fixed parameters.  It can run in the model's own latent
coordinates, in the auxiliary-noise coordinates of a reparameterization
plan, or as a mixture kernel that flips a coin each iteration and performs
the update in whichever system it picked, translating the current point
exactly between systems.  Draws are always stored in latent (z)
coordinates regardless of where the updates happened.

Step sizes adapt multiplicatively during burn-in and freeze afterwards.
The mixture kernel keeps one adapted step size per system: the two
posteriors have very different curvature precisely in the regimes where
the mixture is interesting, and a shared step collapses to the smaller of
the two scales, immobilizing the other component.

Replicate chains with different seeds evolve as rows of one batched state,
so the gradient tape runs once per leapfrog step for all replicates.  Each
row draws its momenta and acceptance variables from its own generator; the
mixture coin is shared across rows (drawn from the first row's generator),
which keeps every row in the same coordinate system without affecting any
single row's transition law.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import graph
from .errors import (
    ConfigurationError,
    DomainError,
    NonFinite,
    ShapeError,
    StepUnderflow,
    UnboundInput,
)
from .graph import pack_coords, unpack_coords
from .reparam import apply_plan, eps_from_z, full_dncp_plan, z_from_eps

STEP_FLOOR = 1e-12
GROW = 1.02

_SYSTEM_OF = {"cp": "z", "dncp": "eps"}


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings.

    ``step_size`` is the initial integrator step; adaptation retunes it
    during the first ``burn_in`` iterations and freezes it afterwards.
    """

    step_size: float
    leapfrog_steps: int = 10
    target_accept: float = 0.9
    burn_in: int = 1000
    samples: int = 4000
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ConfigurationError("step_size must be a positive real")
        if int(self.leapfrog_steps) < 1:
            raise ConfigurationError("leapfrog_steps must be at least 1")
        if not (0.0 < self.target_accept < 1.0):
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if int(self.burn_in) < 0:
            raise ConfigurationError("burn_in cannot be negative")
        if int(self.samples) < 1:
            raise ConfigurationError("samples must be at least 1")


@dataclass(frozen=True)
class ChainState:
    """Current point of a chain.

    ``system`` tags which coordinates ``coords`` lives in: "z" for the
    model's own latents, "eps" for auxiliary noise under a plan.  The log
    density and its gradient are cached for the tagged system and must be
    recomputed on any system switch.
    """

    coords: np.ndarray
    system: str
    log_density: float
    grad: np.ndarray


@dataclass(frozen=True)
class ChainResult:
    """Stored draws plus per-iteration traces.

    ``draws`` has one row per retained sample, always in z-coordinates.
    The traces cover every iteration including burn-in, so the realized
    acceptance rate after warmup is ``accept_trace[burn_in:].mean()``.
    ``system_trace`` records which parameterization each iteration used
    ("cp" or "dncp"); ``final_step_sizes`` maps those names to the frozen
    post-adaptation step sizes.
    """

    draws: np.ndarray
    accept_trace: np.ndarray
    step_trace: np.ndarray
    system_trace: np.ndarray
    final_step_sizes: dict


class LatentPosterior:
    """Log density of the free coordinates given data, with gradient.

    Bindings for the compiled joint are prepared once; each call only
    writes the free-coordinate slices before running the tape, so this is
    the hot path for samplers.  Accepts a single ``(dim,)`` point or a
    ``(rows, dim)`` batch.  Out-of-support and numerically exploded points
    come back as ``-inf`` with zero gradient instead of raising: the
    sampler treats them as rejections.

    Instances reuse one bindings dictionary across calls, so share one
    chain per instance, never one instance across threads.
    """

    def __init__(self, model, theta, data):
        self.model = model
        self.theta = np.asarray(theta, dtype=np.float64)
        if self.theta.shape != (model.layout.size,):
            raise ShapeError(
                f"parameter vector must have shape ({model.layout.size},), "
                f"got {self.theta.shape}"
            )
        self.compiled = graph._compile(model)
        self.slices, self.dim = graph.coord_slices(model)
        self.free_ids = model.free_ids
        self._wrt = frozenset(self.free_ids)

        bindings = {}
        env = model.layout.unpack(self.theta)
        for name in model.layout:
            bindings[f"theta:{name}"] = env[name]
        data = dict(data or {})
        for node_id in self.compiled.value_ids:
            if node_id in self.slices:
                continue
            node = model.nodes[node_id]
            try:
                value = np.asarray(data.pop(node_id), dtype=np.float64)
            except KeyError:
                raise UnboundInput(
                    f"no observed value for node '{node_id}'"
                ) from None
            if value.ndim == 0:
                value = value.reshape(1)
            if value.shape != (node.dim,):
                raise ShapeError(
                    f"observed node '{node_id}' expects a vector of length "
                    f"{node.dim}, got shape {value.shape}"
                )
            bindings[node_id] = value
        if data:
            raise ShapeError(
                f"data assigns non-observed nodes: {sorted(data)}"
            )
        self._bindings = bindings

        # support constraints split into fixed (checked once) and free
        self._checks = []
        for node_id, kind in self.compiled.support_checks:
            if node_id in self.slices:
                self._checks.append((self.slices[node_id], kind))
            elif np.any(_support_mask(bindings[node_id], kind)):
                raise DomainError(
                    f"observed value for '{node_id}' lies outside the "
                    f"support of its family"
                )

    def value_and_grad(self, q):
        """Log density and gradient at ``q``; ``(rows, dim)`` batches allowed."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape[-1] != self.dim or q.ndim > 2:
            raise ShapeError(
                f"expected coordinates of length {self.dim}, got shape {q.shape}"
            )
        bad = False
        for sl, kind in self._checks:
            bad = np.logical_or(bad, np.any(_support_mask(q[..., sl], kind), axis=-1))

        if q.ndim == 1:
            if bad:
                return -np.inf, np.zeros(self.dim)
            value, grad = self._run(q)
            if not np.isfinite(value):
                return -np.inf, np.zeros(self.dim)
            return float(value), grad

        rows = q.shape[0]
        if np.any(bad):
            q = np.where(np.asarray(bad)[:, None], 0.5, q)
        value, grad = self._run(q, rows)
        keep = np.isfinite(value)
        if np.ndim(bad):
            keep &= ~bad
        if not np.all(keep):
            value = np.where(keep, value, -np.inf)
            grad = grad * keep[:, None]
        return value, grad

    def _run(self, q, rows=None):
        bindings = self._bindings
        for node_id, sl in self.slices.items():
            bindings[node_id] = q[..., sl]
        seed = None if rows is None else np.ones(rows)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            record = ad.evaluate_with_gradient(
                self.compiled.root, bindings, seed_adjoint=seed, wrt=self._wrt
            )
            parts = []
            for i in self.free_ids:
                g = record.grads.get(i)
                if g is None:
                    d = self.model.nodes[i].dim
                    g = np.zeros(d if rows is None else (rows, d))
                parts.append(g)
            grad = np.concatenate(parts, axis=-1)
        grad = np.where(np.isfinite(grad), grad, 0.0)
        return record.value, grad


def _support_mask(values, kind):
    if kind == "nonnegative":
        return values < 0.0
    if kind == "positive":
        return values <= 0.0
    return (values <= 0.0) | (values >= 1.0)


def _integrate(q, p, value_and_grad, step_size, n_steps, grad0=None):
    """Leapfrog trajectory returning the final log density and gradient.

    ``step_size`` may be a scalar or one step per batch row.  Reuses
    ``grad0`` for the first half-kick when supplied, so one call costs
    exactly ``n_steps`` density evaluations.
    """
    h = np.asarray(step_size, dtype=np.float64)
    if h.ndim:
        h = h[:, None]
    g = value_and_grad(q)[1] if grad0 is None else grad0
    p = p + (0.5 * h) * g
    logp = None
    for k in range(n_steps):
        q = q + h * p
        logp, g = value_and_grad(q)
        p = p + ((0.5 if k == n_steps - 1 else 1.0) * h) * g
    return q, p, logp, g


def _propose(q0, logp0, g0, p0, target, step_size, n_steps):
    """Integrate one trajectory and compute the energy change."""
    q1, p1, logp1, g1 = _integrate(
        q0, p0, target.value_and_grad, step_size, n_steps, grad0=g0
    )
    with np.errstate(invalid="ignore"):
        dh = (logp1 - 0.5 * np.sum(p1 * p1, axis=-1)) - (
            logp0 - 0.5 * np.sum(p0 * p0, axis=-1)
        )
    return q1, logp1, g1, dh


def leapfrog(q, p, step_size, n_steps, grad_fn):
    """Volume-preserving half-kick / drift / half-kick integrator.

    ``grad_fn`` maps a position to the gradient of the log density.
    Raises :class:`NonFinite` when the trajectory leaves the representable
    range, which callers treat as a rejected proposal.
    """
    if not step_size > 0:
        raise ConfigurationError("step_size must be positive")
    if int(n_steps) < 1:
        raise ConfigurationError("n_steps must be at least 1")
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    q, p, _, _ = _integrate(
        q, p, lambda x: (0.0, np.asarray(grad_fn(x), dtype=np.float64)),
        float(step_size), int(n_steps),
    )
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise NonFinite("leapfrog trajectory diverged")
    return q, p


def hmc_step(state, target, step_size, config, rng):
    """One Metropolis-adjusted leapfrog proposal.

    Momentum is resampled from a standard normal; the proposal is accepted
    with probability min(1, exp(dH)).  Divergent trajectories (non-finite
    energy change) count as rejections and never raise.
    """
    q0 = state.coords
    p0 = rng.standard_normal(q0.shape)
    q1, logp1, g1, dh = _propose(
        q0, state.log_density, state.grad, p0, target, step_size,
        config.leapfrog_steps,
    )
    accept = bool(np.log(rng.random()) < dh)  # NaN compares False
    if accept:
        return replace(state, coords=q1, log_density=float(logp1), grad=g1), True
    return state, False


def adapt_step_size(step_size, accepted, iteration, config):
    """Multiplicative step-size update, active only during burn-in.

    Grows by 1.02 on accept and shrinks by 1.02^(-target/(1-target)) on
    reject, so the zero-drift point sits at the target acceptance rate.
    """
    if iteration >= config.burn_in:
        return step_size
    new = step_size * (GROW if accepted else _shrink(config))
    if new < STEP_FLOOR:
        raise StepUnderflow(
            f"step size collapsed to {new:.3e}; the target geometry is "
            f"likely degenerate in these coordinates"
        )
    return new


def _shrink(config):
    return GROW ** (-config.target_accept / (1.0 - config.target_accept))


def _translate(state, system, cp_target, dncp_target, plan):
    """Re-express the current point in the other coordinate system."""
    if state.system == system:
        return state
    model = cp_target.model
    theta = cp_target.theta
    if system == "eps":
        zvals = unpack_coords(model, state.coords)
        evals = eps_from_z(model, plan, zvals, theta)
        coords = pack_coords(dncp_target.model, evals)
        logp, grad = dncp_target.value_and_grad(coords)
    else:
        evals = unpack_coords(dncp_target.model, state.coords)
        zvals = z_from_eps(model, plan, evals, theta)
        coords = pack_coords(model, zvals)
        logp, grad = cp_target.value_and_grad(coords)
    return ChainState(coords, system, logp, grad)


def mixture_step(state, cp_target, dncp_target, plan, step_sizes, config,
                 rng, mix_rho=0.5):
    """One update of the coin-flip mixture kernel.

    With probability ``mix_rho`` the update runs in z-coordinates,
    otherwise in auxiliary-noise coordinates; the current point is mapped
    exactly into the chosen system first and back into z-coordinates
    afterwards, so the returned state is always in the model's own
    latents.  Returns the new state, the accept flag, and which
    parameterization was used.  The degenerate weights 0 and 1 skip the
    coin flip entirely so they reproduce the pure chains draw for draw.
    """
    if mix_rho >= 1.0:
        use_cp = True
    elif mix_rho <= 0.0:
        use_cp = False
    else:
        use_cp = rng.random() < mix_rho
    name = "cp" if use_cp else "dncp"
    state = _translate(state, _SYSTEM_OF[name], cp_target, dncp_target, plan)
    target = cp_target if use_cp else dncp_target
    state, accepted = hmc_step(state, target, step_sizes[name], config, rng)
    state = _translate(state, "z", cp_target, dncp_target, plan)
    return state, accepted, name


def run_chains(model, theta, data, config, parameterization="cp", plan=None,
               mix_rho=0.5, seeds=None):
    """Run replicate chains as rows of one batched state.

    ``seeds`` (default: ``(config.seed,)``) gives one independent chain per
    entry; every gradient evaluation covers all rows at once.  Rows draw
    momenta and acceptance variables from their own generators.  Under
    "mix" the per-iteration coin comes from the first row's generator and
    is shared, so all rows move in the same system each iteration; the
    first row's trajectory is identical to a single-seed run.  Returns one
    :class:`ChainResult` per seed.
    """
    par = str(parameterization).lower()
    if par not in ("cp", "dncp", "mix"):
        raise ConfigurationError(
            f"parameterization must be 'cp', 'dncp', or 'mix', got "
            f"{parameterization!r}"
        )
    if seeds is None:
        seeds = (config.seed,)
    gens = [np.random.default_rng(s) for s in seeds]
    rows = len(gens)

    dncp_target = None
    if par != "cp":
        if plan is None:
            plan = full_dncp_plan(model)
        dncp_target = LatentPosterior(apply_plan(model, plan), theta, data)
    cp_target = None
    if par != "dncp":
        cp_target = LatentPosterior(model, theta, data)

    prior_rows = [graph.ancestral_sample(model, theta, g) for g in gens]
    q = np.stack([pack_coords(model, d) for d in prior_rows])
    if par == "dncp":
        evals = eps_from_z(model, plan, unpack_coords(model, q), theta)
        q = pack_coords(dncp_target.model, evals)
        system = "eps"
    else:
        system = "z"
    target = dncp_target if par == "dncp" else cp_target
    logp, grad = target.value_and_grad(q)
    if not np.all(np.isfinite(logp)):
        raise NonFinite("initial point has zero posterior density")

    total = config.burn_in + config.samples
    dim = q.shape[-1]
    n_steps = config.leapfrog_steps
    draws = np.empty((rows, config.samples, dim))
    stored_in_eps = np.zeros(config.samples, dtype=bool)
    accept_trace = np.zeros((rows, total), dtype=bool)
    system_trace = np.empty(total, dtype="<U4")
    step_trace = np.empty((rows, total))
    steps = {
        "cp": np.full(rows, float(config.step_size)),
        "dncp": np.full(rows, float(config.step_size)),
    }
    shrink = _shrink(config)

    for it in range(total):
        if par == "mix":
            if mix_rho >= 1.0:
                use_cp = True
            elif mix_rho <= 0.0:
                use_cp = False
            else:
                use_cp = gens[0].random() < mix_rho
            name = "cp" if use_cp else "dncp"
        else:
            name = par
        want = _SYSTEM_OF[name]
        if want != system:
            if want == "eps":
                evals = eps_from_z(model, plan, unpack_coords(model, q), theta)
                q = pack_coords(dncp_target.model, evals)
                target = dncp_target
            else:
                zvals = z_from_eps(
                    model, plan, unpack_coords(dncp_target.model, q), theta
                )
                q = pack_coords(model, zvals)
                target = cp_target
            system = want
            logp, grad = target.value_and_grad(q)

        p0 = np.stack([g.standard_normal(dim) for g in gens])
        q1, logp1, g1, dh = _propose(q, logp, grad, p0, target, steps[name],
                                     n_steps)
        u = np.array([g.random() for g in gens])
        with np.errstate(invalid="ignore"):
            acc = np.log(u) < dh
        if np.any(acc):
            keep = acc[:, None]
            q = np.where(keep, q1, q)
            logp = np.where(acc, logp1, logp)
            grad = np.where(keep, g1, grad)

        accept_trace[:, it] = acc
        system_trace[it] = name
        step_trace[:, it] = steps[name]
        if it < config.burn_in:
            steps[name] = steps[name] * np.where(acc, GROW, shrink)
            if np.any(steps[name] < STEP_FLOOR):
                raise StepUnderflow(
                    f"step size collapsed below {STEP_FLOOR:g} during "
                    f"adaptation in the '{name}' system"
                )
        if it >= config.burn_in:
            k = it - config.burn_in
            draws[:, k, :] = q
            stored_in_eps[k] = system == "eps"

    if np.any(stored_in_eps):
        sel = stored_in_eps
        flat = draws[:, sel, :].reshape(-1, dim)
        zvals = z_from_eps(
            model, plan, unpack_coords(dncp_target.model, flat), theta
        )
        draws[:, sel, :] = pack_coords(model, zvals).reshape(rows, -1, dim)

    results = []
    for i in range(rows):
        if par == "mix":
            final = {n: float(steps[n][i]) for n in ("cp", "dncp")}
        else:
            final = {par: float(steps[par][i])}
        results.append(ChainResult(
            draws=draws[i],
            accept_trace=accept_trace[i],
            step_trace=step_trace[i],
            system_trace=system_trace.copy(),
            final_step_sizes=final,
        ))
    return results


def run_chain(model, theta, data, config, parameterization="cp", plan=None,
              mix_rho=0.5):
    """Run one adaptive HMC chain and return its draws and traces.

    ``parameterization`` picks where updates happen: "cp" uses the model's
    own latent coordinates, "dncp" the auxiliary coordinates of ``plan``
    (a full plan is built when none is given), and "mix" the coin-flip
    combination of both with weight ``mix_rho`` on "cp".  The first
    ``config.burn_in`` iterations adapt step sizes and are discarded; the
    next ``config.samples`` points are stored, always in z-coordinates.
    """
    return run_chains(model, theta, data, config, parameterization, plan,
                      mix_rho, seeds=(config.seed,))[0]
