"""Directed factor-graph models over named vector nodes.

A model is a DAG of nodes, each carrying one conditional factor: a
distribution family plus a link function mapping parent values to the
family's location parameter (mean, logits, or rate).  The joint log-density
is compiled once into a reverse-mode expression (see :mod:`.autodiff`) and
reused across evaluations, so repeated gradient calls during sampling and
learning pay only for array work.

Node kinds
----------
``latent``
    Free coordinates of the posterior; sampled by inference.
``observed``
    Data leaves.  Observed nodes may not be parents of anything.
``auxiliary``
    Parameter-free root noise (standard normal or uniform) introduced by
    reparameterization.
``deterministic``
    A pure function of parents; carries no density term and is excluded
    from the sampled coordinate set.  A Gaussian latent whose fixed scale
    is exactly zero is converted to this kind at build time.

Parameters live in one flat vector.  Named blocks (weight matrices, biases,
scales) map to disjoint slices via :class:`ParamLayout`; factors reference
blocks by name, so several factors may share one block (tied weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.special import expit

from . import autodiff as ad
from .errors import (
    CycleError,
    DomainError,
    NonFinite,
    ObservedNotLeaf,
    ShapeError,
    UnboundInput,
    UnsupportedFamily,
    ZeroScale,
)

LATENT, OBSERVED, AUXILIARY, DETERMINISTIC = (
    "latent", "observed", "auxiliary", "deterministic",
)

_DENSITY_FAMILIES = {"gaussian", "bernoulli", "exponential", "lognormal"}
_AUX_FAMILIES = {"std_normal_aux", "uniform_aux"}
_ACTIVATIONS = {"identity", "tanh", "sigmoid"}

# An assignment is a plain dict: node id -> value array of shape (dim,) or,
# for row-batched evaluation, (B, dim).
Assignment = dict


@dataclass(frozen=True)
class ParamRef:
    """Reference to a named block of the flat parameter vector."""

    name: str


@dataclass(frozen=True)
class AffineLink:
    """Location map ``activation(sum_p W_p @ parent_p + bias)``.

    ``weights`` pairs each parent id with either a fixed matrix of shape
    ``(dim, parent_dim)`` or a :class:`ParamRef`; ``bias`` is a fixed vector
    or a :class:`ParamRef`.
    """

    weights: tuple = ()
    bias: object = 0.0
    activation: str = "identity"


@dataclass(frozen=True)
class CustomLink:
    """Location map given directly as expression-builder and numeric closures.

    ``build(parent_exprs, param_exprs)`` returns an autodiff expression;
    ``evaluate(parent_values, param_env)`` computes the same function on
    arrays (row-batched inputs included).
    """

    build: object
    evaluate: object


@dataclass(frozen=True)
class Factor:
    """Conditional family attached to a node."""

    family: str
    link: object = None
    scale: object = None  # fixed array, ParamRef, or None


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    dim: int
    parents: tuple
    factor: Factor


class ParamLayout:
    """Disjoint contiguous slices of one flat parameter vector."""

    def __init__(self, blocks):
        # blocks: iterable of (name, shape) in registration order
        self.blocks = {}
        offset = 0
        for name, shape in blocks:
            size = int(np.prod(shape, dtype=int)) if shape else 1
            self.blocks[name] = (offset, tuple(shape))
            offset += size
        self.size = offset

    def slice_of(self, name):
        offset, shape = self.blocks[name]
        size = int(np.prod(shape, dtype=int)) if shape else 1
        return slice(offset, offset + size)

    def unpack(self, theta):
        """Views of ``theta`` reshaped per block, keyed by block name."""
        env = {}
        for name, (offset, shape) in self.blocks.items():
            size = int(np.prod(shape, dtype=int)) if shape else 1
            env[name] = theta[offset:offset + size].reshape(shape)
        return env

    def pack(self, env):
        theta = np.zeros(self.size)
        for name, (offset, shape) in self.blocks.items():
            size = int(np.prod(shape, dtype=int)) if shape else 1
            theta[offset:offset + size] = np.asarray(env[name]).reshape(-1)
        return theta

    def __contains__(self, name):
        return name in self.blocks

    def __iter__(self):
        return iter(self.blocks)


class FactorGraphModel:
    """Validated DAG of nodes plus the parameter layout.

    Instances are immutable after construction; compiled expressions are
    cached internally and shared across evaluations.
    """

    def __init__(self, nodes, layout):
        self.nodes = {n.id: n for n in nodes}
        self.layout = layout
        self.topo_order = _toposort(nodes)
        self._compiled = {}

    @property
    def free_ids(self):
        """Sampled coordinates: latent and auxiliary nodes in topological order."""
        return tuple(
            i for i in self.topo_order
            if self.nodes[i].kind in (LATENT, AUXILIARY)
        )

    @property
    def observed_ids(self):
        return tuple(i for i in self.topo_order if self.nodes[i].kind == OBSERVED)

    @property
    def deterministic_ids(self):
        return tuple(
            i for i in self.topo_order if self.nodes[i].kind == DETERMINISTIC
        )

    @property
    def param_size(self):
        return self.layout.size

    def free_dim(self):
        return sum(self.nodes[i].dim for i in self.free_ids)

    def node(self, node_id):
        return self.nodes[node_id]


def _toposort(nodes):
    by_id = {n.id: n for n in nodes}
    children = {n.id: [] for n in nodes}
    indegree = {n.id: len(n.parents) for n in nodes}
    for n in nodes:
        for p in n.parents:
            children[p].append(n.id)
    ready = [i for i, d in indegree.items() if d == 0]
    order = []
    while ready:
        ready.sort()  # stable, declaration-independent order among roots
        i = ready.pop(0)
        order.append(i)
        for c in children[i]:
            indegree[c] -= 1
            if indegree[c] == 0:
                ready.append(c)
    if len(order) != len(by_id):
        stuck = sorted(set(by_id) - set(order))
        raise CycleError(f"parent relation has a cycle through {stuck}")
    return tuple(order)


# -- model construction from a declarative description -----------------------

def build_model(spec) -> FactorGraphModel:
    """Build and validate a model from a declarative description.

    ``spec`` is a mapping with a ``nodes`` list (or YAML text parsing to
    one).  Each node entry gives ``id``, ``kind``, ``dim``, ``family``, and
    optionally ``parents``, ``link`` (``activation``, ``weights``, ``bias``)
    and ``scale``.  Weight, bias, and scale entries are fixed numbers/lists,
    the string ``"param"`` (auto-named learnable block), or
    ``{"param": name}`` (shared learnable block).
    """
    if isinstance(spec, str):
        spec = yaml.safe_load(spec)
    if not isinstance(spec, dict) or "nodes" not in spec:
        raise ShapeError("model description must be a mapping with a 'nodes' list")
    entries = spec["nodes"]
    if not entries:
        raise ShapeError("model description has no nodes")

    registry = _BlockRegistry()
    seen = set()
    dims = {}
    kinds = {}
    raw = []
    for entry in entries:
        node_id = str(entry.get("id", ""))
        if not node_id:
            raise ShapeError("every node needs an id")
        if node_id in seen:
            raise ShapeError(f"duplicate node id '{node_id}'")
        if node_id.startswith("theta:"):
            raise ShapeError(f"node id '{node_id}' uses the reserved prefix 'theta:'")
        seen.add(node_id)
        dim = int(entry.get("dim", 1))
        if dim < 1:
            raise ShapeError(f"node '{node_id}': dim must be >= 1")
        dims[node_id] = dim
        kinds[node_id] = entry.get("kind", LATENT)
        raw.append(entry)

    nodes = []
    for entry in raw:
        nodes.append(_build_node(entry, dims, kinds, registry))

    layout = ParamLayout(registry.ordered())
    model = FactorGraphModel(nodes, layout)
    _validate_structure(model)
    return model


class _BlockRegistry:
    def __init__(self):
        self._shapes = {}
        self._order = []

    def register(self, name, shape, node_id):
        shape = tuple(shape)
        if name in self._shapes:
            if self._shapes[name] != shape:
                raise ShapeError(
                    f"parameter block '{name}' used with shape {shape} at node "
                    f"'{node_id}' but registered with {self._shapes[name]}"
                )
        else:
            self._shapes[name] = shape
            self._order.append(name)
        return ParamRef(name)

    def ordered(self):
        return [(name, self._shapes[name]) for name in self._order]


def _build_node(entry, dims, kinds, registry):
    node_id = str(entry["id"])
    kind = entry.get("kind", LATENT)
    if kind not in (LATENT, OBSERVED, AUXILIARY):
        raise UnsupportedFamily(f"node '{node_id}': unknown kind '{kind}'")
    dim = dims[node_id]
    family = entry.get("family")
    parents = tuple(str(p) for p in entry.get("parents", ()))
    for p in parents:
        if p not in dims:
            raise ShapeError(f"node '{node_id}': unknown parent '{p}'")
        if kinds.get(p) == OBSERVED:
            raise ObservedNotLeaf(
                f"observed node '{p}' cannot be a parent of '{node_id}'"
            )

    if family in _AUX_FAMILIES:
        if kind != AUXILIARY:
            raise UnsupportedFamily(
                f"node '{node_id}': family '{family}' requires kind 'auxiliary'"
            )
        if parents:
            raise ShapeError(f"auxiliary node '{node_id}' cannot have parents")
        return NodeSpec(node_id, AUXILIARY, dim, (), Factor(family))
    if kind == AUXILIARY:
        raise UnsupportedFamily(
            f"node '{node_id}': auxiliary nodes need an auxiliary family"
        )
    if family not in _DENSITY_FAMILIES:
        raise UnsupportedFamily(f"node '{node_id}': unknown family '{family}'")
    if family == "bernoulli" and kind != OBSERVED:
        raise UnsupportedFamily(
            f"node '{node_id}': discrete latent nodes are not supported"
        )

    link = _build_link(entry.get("link", {}), node_id, dim, parents, dims, registry)

    scale = None
    if family in ("gaussian", "lognormal"):
        scale = _build_scale(entry.get("scale"), node_id, registry)
    elif "scale" in entry:
        raise ShapeError(f"node '{node_id}': family '{family}' takes no scale")

    # a Gaussian latent with fixed zero scale is a deterministic function
    # of its parents
    if (
        family == "gaussian"
        and kind == LATENT
        and isinstance(scale, np.ndarray)
        and np.all(scale == 0.0)
    ):
        return NodeSpec(node_id, DETERMINISTIC, dim, parents,
                        Factor("deterministic", link=link))
    if isinstance(scale, np.ndarray):
        if np.any(scale < 0.0):
            raise ZeroScale(f"node '{node_id}': negative scale")
        if np.any(scale == 0.0):
            raise ZeroScale(
                f"node '{node_id}': zero scale where a density is required"
            )

    return NodeSpec(node_id, kind, dim, parents, Factor(family, link, scale))


def _build_link(raw, node_id, dim, parents, dims, registry):
    if not isinstance(raw, dict):
        raise ShapeError(f"node '{node_id}': link must be a mapping")
    activation = raw.get("activation", "identity")
    if activation not in _ACTIVATIONS:
        raise UnsupportedFamily(
            f"node '{node_id}': unknown link activation '{activation}'"
        )
    weight_spec = raw.get("weights", {})
    weights = []
    for p in parents:
        wspec = weight_spec.get(p, "identity") if isinstance(weight_spec, dict) else weight_spec
        shape = (dim, dims[p])
        if isinstance(wspec, str) and wspec == "identity":
            if dims[p] != dim:
                raise ShapeError(
                    f"node '{node_id}': identity weights need parent '{p}' of "
                    f"dim {dim}, got {dims[p]}"
                )
            weights.append((p, np.eye(dim)))
        elif isinstance(wspec, str) and wspec == "param":
            weights.append((p, registry.register(f"{node_id}.W.{p}", shape, node_id)))
        elif isinstance(wspec, dict) and "param" in wspec:
            weights.append((p, registry.register(str(wspec["param"]), shape, node_id)))
        else:
            w = np.asarray(wspec, dtype=np.float64)
            if w.shape != shape:
                raise ShapeError(
                    f"node '{node_id}': weights for parent '{p}' must have "
                    f"shape {shape}, got {w.shape}"
                )
            weights.append((p, w))

    braw = raw.get("bias", 0.0)
    if isinstance(braw, str) and braw == "param":
        bias = registry.register(f"{node_id}.b", (dim,), node_id)
    elif isinstance(braw, dict) and "param" in braw:
        bias = registry.register(str(braw["param"]), (dim,), node_id)
    else:
        bias = np.asarray(braw, dtype=np.float64)
        if bias.ndim == 0:
            bias = np.full(dim, float(bias))
        if bias.shape != (dim,):
            raise ShapeError(
                f"node '{node_id}': bias must be scalar or length {dim}"
            )
    return AffineLink(tuple(weights), bias, activation)


def _build_scale(raw, node_id, registry):
    if raw is None:
        raise ZeroScale(f"node '{node_id}': a scale is required")
    if isinstance(raw, str) and raw == "param":
        return registry.register(f"{node_id}.sigma", (1,), node_id)
    if isinstance(raw, dict) and "param" in raw:
        return registry.register(str(raw["param"]), (1,), node_id)
    scale = np.asarray(raw, dtype=np.float64)
    if scale.ndim == 0:
        scale = scale.reshape(1)
    if scale.ndim != 1:
        raise ShapeError(f"node '{node_id}': scale must be scalar or vector")
    return scale


def _validate_structure(model):
    for node in model.nodes.values():
        if node.kind == OBSERVED and node.factor.family not in _DENSITY_FAMILIES:
            raise UnsupportedFamily(
                f"observed node '{node.id}' needs a density family"
            )
        for p in node.parents:
            if model.nodes[p].kind == OBSERVED:
                raise ObservedNotLeaf(
                    f"observed node '{p}' cannot be a parent of '{node.id}'"
                )


# -- compiled joint density ---------------------------------------------------

class _Compiled:
    __slots__ = ("root", "value_ids", "support_checks", "param_names")

    def __init__(self, root, value_ids, support_checks, param_names):
        self.root = root
        self.value_ids = value_ids
        self.support_checks = support_checks
        self.param_names = param_names


def _link_expr(link, node, parent_exprs, param_exprs):
    if isinstance(link, CustomLink):
        return link.build(parent_exprs, param_exprs)
    expr = _coeff_expr(link.bias, param_exprs)
    for pid, w in link.weights:
        expr = ad.affine(_coeff_expr(w, param_exprs), parent_exprs[pid], expr)
    if link.activation == "tanh":
        expr = ad.tanh(expr)
    elif link.activation == "sigmoid":
        expr = ad.sigmoid(expr)
    return expr


def _coeff_expr(coeff, param_exprs):
    if isinstance(coeff, ParamRef):
        return param_exprs[coeff.name]
    return ad.constant(coeff)


def _compile(model, observed_only=False):
    key = "obs" if observed_only else "joint"
    cached = model._compiled.get(key)
    if cached is not None:
        return cached

    param_exprs = {name: ad.inp(f"theta:{name}") for name in model.layout}
    value_exprs = {}
    support_checks = []
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        if node.kind == DETERMINISTIC:
            parent_exprs = {p: value_exprs[p] for p in node.parents}
            value_exprs[node_id] = _link_expr(
                node.factor.link, node, parent_exprs, param_exprs
            )
        else:
            value_exprs[node_id] = ad.inp(node_id)
            family = node.factor.family
            if family == "exponential":
                support_checks.append((node_id, "nonnegative"))
            elif family == "lognormal":
                support_checks.append((node_id, "positive"))
            elif family == "uniform_aux":
                support_checks.append((node_id, "unit_interval"))

    terms = []
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        if node.kind == DETERMINISTIC:
            continue
        if observed_only and node.kind != OBSERVED:
            continue
        factor = node.factor
        value = value_exprs[node_id]
        parent_exprs = {p: value_exprs[p] for p in node.parents}
        family = factor.family
        if family == "gaussian":
            mean = _link_expr(factor.link, node, parent_exprs, param_exprs)
            terms.append(ad.gaussian_log_pdf(value, mean, _coeff_expr(factor.scale, param_exprs)))
        elif family == "bernoulli":
            logits = _link_expr(factor.link, node, parent_exprs, param_exprs)
            terms.append(ad.bernoulli_log_pmf(value, logits))
        elif family == "exponential":
            rate = _link_expr(factor.link, node, parent_exprs, param_exprs)
            terms.append(ad.total(ad.log(rate)) - ad.total(ad.mul(rate, value)))
        elif family == "lognormal":
            mean = _link_expr(factor.link, node, parent_exprs, param_exprs)
            terms.append(
                ad.gaussian_log_pdf(ad.log(value), mean, _coeff_expr(factor.scale, param_exprs))
                - ad.total(ad.log(value))
            )
        elif family == "std_normal_aux":
            terms.append(ad.gaussian_log_pdf(value, ad.constant(0.0), ad.constant(1.0)))
        elif family == "uniform_aux":
            pass  # density 1 on (0, 1); support enforced separately

    root = ad.add(*terms) if terms else ad.constant(0.0)
    value_ids = tuple(
        i for i in model.topo_order if model.nodes[i].kind != DETERMINISTIC
    )
    compiled = _Compiled(root, value_ids, tuple(support_checks),
                         tuple(f"theta:{n}" for n in model.layout))
    model._compiled[key] = compiled
    return compiled


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.layout.size,):
        raise ShapeError(
            f"parameter vector must have shape ({model.layout.size},), "
            f"got {theta.shape}"
        )
    return theta


def _bindings(model, compiled, theta, assignment):
    bindings = {}
    for node_id in compiled.value_ids:
        node = model.nodes[node_id]
        try:
            value = assignment[node_id]
        except KeyError:
            raise UnboundInput(f"assignment is missing node '{node_id}'") from None
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1)
        if value.shape[-1] != node.dim or value.ndim > 2:
            raise ShapeError(
                f"node '{node_id}' expects vectors of length {node.dim}, "
                f"got shape {value.shape}"
            )
        bindings[node_id] = value
    env = model.layout.unpack(theta)
    for name in model.layout:
        bindings[f"theta:{name}"] = env[name]
    return bindings


def _support_violations(compiled, bindings):
    """Mask of batch rows (or a bare bool) violating any support constraint."""
    bad = False
    for node_id, kind in compiled.support_checks:
        v = bindings[node_id]
        if kind == "nonnegative":
            mask = v < 0.0
        elif kind == "positive":
            mask = v <= 0.0
        else:
            mask = (v <= 0.0) | (v >= 1.0)
        rows = np.any(mask, axis=-1)
        bad = np.logical_or(bad, rows)
    return bad


def _neutralize_bad_rows(compiled, bindings, bad):
    """Replace out-of-support values so the forward pass stays NaN-free."""
    for node_id, _ in compiled.support_checks:
        v = bindings[node_id]
        safe = np.where(np.isfinite(v) & (v > 0.0) & (v < 1.0), v, 0.5)
        bindings[node_id] = safe


def log_joint(model, theta, assignment):
    """Joint log-density of a full assignment under parameters ``theta``.

    Deterministic nodes are recomputed from their parents inside the
    compiled expression; any values supplied for them are ignored.  Returns
    ``-inf`` when a value lies outside its family's support, and raises
    :class:`NonFinite` if the result is NaN with in-support inputs.
    Row-batched assignments give a vector of per-row log-densities.
    """
    theta = _check_theta(model, theta)
    compiled = _compile(model)
    bindings = _bindings(model, compiled, theta, assignment)
    bad = _support_violations(compiled, bindings)
    if np.ndim(bad) == 0 and bad:
        return -np.inf
    if np.any(bad):
        _neutralize_bad_rows(compiled, bindings, bad)
    value = ad.evaluate(compiled.root, bindings)
    if np.any(bad):
        value = np.where(bad, -np.inf, value)
    if np.any(np.isnan(value)):
        raise NonFinite("log-joint evaluated to NaN")
    return value


def observed_log_likelihood(model, theta, assignment):
    """Sum of the observed nodes' factor terms only (no latent priors)."""
    theta = _check_theta(model, theta)
    compiled = _compile(model, observed_only=True)
    bindings = _bindings(model, compiled, theta, assignment)
    value = ad.evaluate(compiled.root, bindings)
    if np.any(np.isnan(value)):
        raise NonFinite("observed log-likelihood evaluated to NaN")
    return value


def grad_log_joint_latents(model, theta, assignment):
    """Log-joint and its gradient with respect to the free coordinates.

    Returns ``(value, grads)`` where ``grads`` maps each latent and
    auxiliary node id to the adjoint array.  At out-of-support points the
    value is ``-inf`` and the gradients are zero.
    """
    theta = _check_theta(model, theta)
    compiled = _compile(model)
    bindings = _bindings(model, compiled, theta, assignment)
    bad = _support_violations(compiled, bindings)
    scalar_bad = np.ndim(bad) == 0 and bool(bad)
    if scalar_bad:
        return -np.inf, {
            i: np.zeros(model.nodes[i].dim) for i in model.free_ids
        }
    if np.any(bad):
        _neutralize_bad_rows(compiled, bindings, bad)
    record = _gradient(compiled, bindings)
    grads = {i: record.grads.get(i, np.zeros(model.nodes[i].dim))
             for i in model.free_ids}
    value = record.value
    if np.any(bad):
        value = np.where(bad, -np.inf, value)
        keep = ~bad
        for i in grads:
            grads[i] = grads[i] * keep[..., None]
    return value, grads


def grad_log_joint_params(model, theta, assignment):
    """Log-joint and its gradient with respect to the flat parameter vector."""
    theta = _check_theta(model, theta)
    compiled = _compile(model)
    bindings = _bindings(model, compiled, theta, assignment)
    record = _gradient(compiled, bindings)
    return record.value, _pack_param_grads(model, record.grads)


def _gradient(compiled, bindings):
    probe = bindings[compiled.value_ids[0]] if compiled.value_ids else None
    batched = probe is not None and any(
        np.ndim(bindings[i]) == 2 for i in compiled.value_ids
    )
    if batched:
        rows = max(
            bindings[i].shape[0]
            for i in compiled.value_ids
            if np.ndim(bindings[i]) == 2
        )
        seed = np.ones(rows)
        return ad.evaluate_with_gradient(compiled.root, bindings, seed_adjoint=seed)
    return ad.evaluate_with_gradient(compiled.root, bindings)


def _pack_param_grads(model, grads):
    out = np.zeros(model.layout.size)
    for name in model.layout:
        g = grads.get(f"theta:{name}")
        if g is not None:
            out[model.layout.slice_of(name)] = np.asarray(g).reshape(-1)
    return out


# -- numeric link evaluation and sampling -------------------------------------

def _resolve(coeff, env):
    if isinstance(coeff, ParamRef):
        return env[coeff.name]
    return coeff


def eval_link(link, parent_values, env):
    """Numeric counterpart of the compiled link expression."""
    if isinstance(link, CustomLink):
        return link.evaluate(parent_values, env)
    acc = np.asarray(_resolve(link.bias, env), dtype=np.float64)
    for pid, w in link.weights:
        w = np.asarray(_resolve(w, env), dtype=np.float64)
        v = np.asarray(parent_values[pid], dtype=np.float64)
        acc = acc + (w @ v if v.ndim <= 1 else v @ w.T)
    if link.activation == "tanh":
        return np.tanh(acc)
    if link.activation == "sigmoid":
        return expit(acc)
    return acc


def recompute_deterministic(model, theta, assignment):
    """Fill in deterministic node values from their parents.

    Idempotent: supplied deterministic values are replaced by the
    recomputed ones; all other entries are passed through.
    """
    theta = _check_theta(model, theta)
    env = model.layout.unpack(theta)
    out = dict(assignment)
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        if node.kind != DETERMINISTIC:
            continue
        parents = {p: out[p] for p in node.parents}
        out[node_id] = eval_link(node.factor.link, parents, env)
    return out


def ancestral_sample(model, theta, rng, size=None):
    """Draw a full joint assignment by sampling nodes in topological order.

    With ``size=n`` every node value is an ``(n, dim)`` row batch drawn with
    shared parameters; otherwise values are ``(dim,)`` vectors.  Observed
    nodes are sampled too, so the result is a draw from the full joint.
    """
    theta = _check_theta(model, theta)
    env = model.layout.unpack(theta)
    out = {}
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        shape = (node.dim,) if size is None else (int(size), node.dim)
        family = node.factor.family
        parents = {p: out[p] for p in node.parents}
        if node.kind == DETERMINISTIC:
            value = eval_link(node.factor.link, parents, env)
            value = np.broadcast_to(np.asarray(value, dtype=np.float64), shape).copy()
        elif family == "gaussian":
            mean = eval_link(node.factor.link, parents, env)
            scale = np.asarray(_resolve(node.factor.scale, env), dtype=np.float64)
            value = mean + scale * rng.standard_normal(shape)
        elif family == "lognormal":
            mean = eval_link(node.factor.link, parents, env)
            scale = np.asarray(_resolve(node.factor.scale, env), dtype=np.float64)
            value = np.exp(mean + scale * rng.standard_normal(shape))
        elif family == "bernoulli":
            p = expit(eval_link(node.factor.link, parents, env))
            value = (rng.random(shape) < p).astype(np.float64)
        elif family == "exponential":
            rate = np.asarray(
                eval_link(node.factor.link, parents, env), dtype=np.float64
            )
            if np.any(rate <= 0.0):
                raise DomainError(
                    f"node '{node_id}': exponential rate must be positive"
                )
            value = rng.exponential(1.0, shape) / rate
        elif family == "std_normal_aux":
            value = rng.standard_normal(shape)
        elif family == "uniform_aux":
            value = rng.random(shape)
        else:  # pragma: no cover - families are validated at build time
            raise UnsupportedFamily(family)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != shape:
            value = np.broadcast_to(value, shape).copy()
        out[node_id] = value
    return out


# -- flat views of the free coordinates ---------------------------------------

def coord_slices(model, ids=None):
    """Contiguous slices of a flat vector over the given node ids."""
    ids = tuple(ids) if ids is not None else model.free_ids
    slices = {}
    offset = 0
    for i in ids:
        d = model.nodes[i].dim
        slices[i] = slice(offset, offset + d)
        offset += d
    return slices, offset


def pack_coords(model, assignment, ids=None):
    """Concatenate node values (free coordinates by default) into one vector."""
    ids = tuple(ids) if ids is not None else model.free_ids
    parts = [np.asarray(assignment[i], dtype=np.float64) for i in ids]
    return np.concatenate(parts, axis=-1)


def unpack_coords(model, vector, ids=None):
    """Split a flat (or row-batched) vector back into per-node values."""
    ids = tuple(ids) if ids is not None else model.free_ids
    slices, total = coord_slices(model, ids)
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape[-1] != total:
        raise ShapeError(
            f"coordinate vector has trailing length {vector.shape[-1]}, "
            f"expected {total}"
        )
    return {i: vector[..., s] for i, s in slices.items()}


def random_params(model, rng, scale=1.0):
    """Standard-normal initial parameter vector (scaled)."""
    return scale * rng.standard_normal(model.layout.size)
