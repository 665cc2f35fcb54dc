"""Switching latent nodes between centered and non-centered form.

A latent node is *centered* (CP) when the sampler works on the node's value
``z`` directly, with density ``p(z | parents)``.  The *non-centered* form
(DNCP) rewrites the node as a deterministic map ``z = g(parents, eps)`` of a
fresh auxiliary root ``eps`` whose marginal is parameter-free.  The map must
be smooth and invertible in ``eps``, which ties the two densities together
through the usual change of variables:

    p(eps) = p(z = g(parents, eps) | parents) * |det dg/deps|

Three standard constructions are provided:

* location-scale for Gaussian nodes: ``g = mean(parents) + scale * eps``
  with standard-normal ``eps``;
* inverse CDF for exponential nodes: ``g = -log(1 - eps) / rate(parents)``
  with uniform ``eps``;
* composition for log-normal nodes: ``g = exp(mean(parents) + scale * eps)``
  with standard-normal ``eps``.

A plan maps node ids to transforms; nodes absent from the plan stay
centered, so mixed parameterizations are ordinary.  :func:`apply_plan`
rewrites the model graph (auxiliary roots plus deterministic nodes), while
:func:`z_from_eps` / :func:`eps_from_z` translate assignments between the
two coordinate systems without rebuilding anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (
    DomainError,
    NonInvertible,
    ShapeError,
    UnboundInput,
    UnsupportedFamily,
)
from .graph import (
    AUXILIARY,
    DETERMINISTIC,
    LATENT,
    CustomLink,
    Factor,
    FactorGraphModel,
    NodeSpec,
    _coeff_expr,
    _link_expr,
    _resolve,
    eval_link,
)


@dataclass(frozen=True)
class DncpTransform:
    """Invertible noise map for one latent node.

    ``g``, ``g_inverse``, and ``jacobian_log_abs_det`` are numeric closures
    taking ``(parent_values, array, param_env)``; ``build_expr`` assembles
    the same map as a differentiable expression for the rewritten graph.
    """

    node_id: str
    aux_id: str
    aux_family: str
    g: object
    g_inverse: object
    jacobian_log_abs_det: object
    build_expr: object


def _sum_trailing(t):
    return np.sum(np.atleast_1d(t), axis=-1)


def _require_latent(model, node_id, family):
    node = model.nodes.get(node_id)
    if node is None:
        raise ShapeError(f"no node '{node_id}' in model")
    if node.kind != LATENT:
        raise UnsupportedFamily(
            f"node '{node_id}' has kind '{node.kind}'; only latent nodes "
            "can be reparameterized"
        )
    if node.factor.family != family:
        raise UnsupportedFamily(
            f"node '{node_id}' has family '{node.factor.family}', expected "
            f"'{family}'"
        )
    return node


def location_scale_transform(model, node_id) -> DncpTransform:
    """Non-centered form of a Gaussian node: ``z = mean(parents) + scale * eps``."""
    node = _require_latent(model, node_id, "gaussian")
    link, scale, dim = node.factor.link, node.factor.scale, node.dim

    def g(parents, eps, env):
        return eval_link(link, parents, env) + _resolve(scale, env) * eps

    def g_inverse(parents, z, env):
        s = np.asarray(_resolve(scale, env), dtype=np.float64)
        if np.any(s <= 0.0):
            raise NonInvertible(f"node '{node_id}': scale must be positive")
        return (z - eval_link(link, parents, env)) / s

    def jacobian_log_abs_det(parents, eps, env):
        s = np.broadcast_to(np.asarray(_resolve(scale, env), dtype=np.float64), (dim,))
        if np.any(s <= 0.0):
            raise NonInvertible(f"node '{node_id}': scale must be positive")
        return float(np.sum(np.log(s)))

    def build_expr(parent_exprs, eps_expr, param_exprs):
        mean = _link_expr(link, node, parent_exprs, param_exprs)
        return ad.add(mean, ad.mul(_coeff_expr(scale, param_exprs), eps_expr))

    return DncpTransform(node_id, f"eps_{node_id}", "std_normal_aux",
                         g, g_inverse, jacobian_log_abs_det, build_expr)


def inverse_cdf_transform(model, node_id) -> DncpTransform:
    """Non-centered form of an exponential node via its inverse CDF.

    ``eps`` is uniform on (0, 1) and ``z = -log(1 - eps) / rate(parents)``.
    """
    node = _require_latent(model, node_id, "exponential")
    link = node.factor.link

    def _rate(parents, env):
        rate = np.asarray(eval_link(link, parents, env), dtype=np.float64)
        if np.any(rate <= 0.0):
            raise DomainError(f"node '{node_id}': rate must be positive")
        return rate

    def g(parents, eps, env):
        eps = np.asarray(eps, dtype=np.float64)
        if np.any(eps <= 0.0) or np.any(eps >= 1.0):
            raise DomainError(f"node '{node_id}': eps must lie in (0, 1)")
        return -np.log1p(-eps) / _rate(parents, env)

    def g_inverse(parents, z, env):
        z = np.asarray(z, dtype=np.float64)
        if np.any(z < 0.0):
            raise DomainError(f"node '{node_id}': value outside support")
        return -np.expm1(-_rate(parents, env) * z)

    def jacobian_log_abs_det(parents, eps, env):
        eps = np.asarray(eps, dtype=np.float64)
        rate = _rate(parents, env)
        t = -np.log(rate) - np.log1p(-eps)
        return _sum_trailing(np.broadcast_to(t, eps.shape))

    def build_expr(parent_exprs, eps_expr, param_exprs):
        rate = _link_expr(link, node, parent_exprs, param_exprs)
        return -ad.log(1.0 - eps_expr) / rate

    return DncpTransform(node_id, f"eps_{node_id}", "uniform_aux",
                         g, g_inverse, jacobian_log_abs_det, build_expr)


def composition_transform(model, node_id) -> DncpTransform:
    """Non-centered form of a log-normal node: ``z = exp(mean + scale * eps)``."""
    node = _require_latent(model, node_id, "lognormal")
    link, scale = node.factor.link, node.factor.scale

    def g(parents, eps, env):
        mean = eval_link(link, parents, env)
        return np.exp(mean + _resolve(scale, env) * eps)

    def g_inverse(parents, z, env):
        z = np.asarray(z, dtype=np.float64)
        if np.any(z <= 0.0):
            raise DomainError(f"node '{node_id}': value outside support")
        s = np.asarray(_resolve(scale, env), dtype=np.float64)
        if np.any(s <= 0.0):
            raise NonInvertible(f"node '{node_id}': scale must be positive")
        return (np.log(z) - eval_link(link, parents, env)) / s

    def jacobian_log_abs_det(parents, eps, env):
        eps = np.asarray(eps, dtype=np.float64)
        s = np.asarray(_resolve(scale, env), dtype=np.float64)
        if np.any(s <= 0.0):
            raise NonInvertible(f"node '{node_id}': scale must be positive")
        mean = eval_link(link, parents, env)
        t = np.log(s) + mean + s * eps
        return _sum_trailing(np.broadcast_to(t, eps.shape))

    def build_expr(parent_exprs, eps_expr, param_exprs):
        mean = _link_expr(link, node, parent_exprs, param_exprs)
        return ad.exp(ad.add(mean, ad.mul(_coeff_expr(scale, param_exprs), eps_expr)))

    return DncpTransform(node_id, f"eps_{node_id}", "std_normal_aux",
                         g, g_inverse, jacobian_log_abs_det, build_expr)


_TRANSFORM_BUILDERS = {
    "gaussian": location_scale_transform,
    "exponential": inverse_cdf_transform,
    "lognormal": composition_transform,
}


def full_dncp_plan(model) -> dict:
    """A plan reparameterizing every latent node of the model."""
    plan = {}
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        if node.kind != LATENT:
            continue
        builder = _TRANSFORM_BUILDERS.get(node.factor.family)
        if builder is None:
            raise UnsupportedFamily(
                f"node '{node_id}': no transform for family "
                f"'{node.factor.family}'"
            )
        plan[node_id] = builder(model, node_id)
    return plan


def apply_plan(model, plan) -> FactorGraphModel:
    """Rewrite the graph so planned nodes become deterministic maps of noise.

    Each planned latent node keeps its id but becomes deterministic with an
    extra auxiliary parent carrying the noise; unplanned nodes are copied
    unchanged.  The parameter layout is shared with the original model, so
    the same flat parameter vector drives both graphs.
    """
    for node_id, transform in plan.items():
        _require_latent(model, node_id, model.nodes[node_id].factor.family)
        if transform.node_id != node_id:
            raise ShapeError(
                f"plan entry '{node_id}' holds a transform for "
                f"'{transform.node_id}'"
            )
        if transform.aux_id in model.nodes:
            raise ShapeError(
                f"auxiliary id '{transform.aux_id}' collides with an "
                "existing node"
            )
    nodes = []
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        transform = plan.get(node_id)
        if transform is None:
            nodes.append(node)
            continue
        nodes.append(NodeSpec(transform.aux_id, AUXILIARY, node.dim, (),
                              Factor(transform.aux_family)))
        original_parents = node.parents

        def build(parent_exprs, param_exprs, t=transform, pids=original_parents):
            pe = {p: parent_exprs[p] for p in pids}
            return t.build_expr(pe, parent_exprs[t.aux_id], param_exprs)

        def evaluate(parent_values, env, t=transform, pids=original_parents):
            pv = {p: parent_values[p] for p in pids}
            return t.g(pv, parent_values[t.aux_id], env)

        nodes.append(NodeSpec(node_id, DETERMINISTIC, node.dim,
                              original_parents + (transform.aux_id,),
                              Factor("deterministic",
                                     link=CustomLink(build, evaluate))))
    return FactorGraphModel(nodes, model.layout)


def z_from_eps(model, plan, assignment, theta) -> dict:
    """Recover latent values from auxiliary noise under a plan.

    ``assignment`` supplies ``eps`` for every planned node (keyed by the
    transform's ``aux_id``) and plain values for unplanned latent nodes.
    Returns values for every latent and deterministic node of the original
    model.
    """
    env = model.layout.unpack(np.asarray(theta, dtype=np.float64))
    out = {}

    def parent_values(node):
        vals = {}
        for p in node.parents:
            if p in out:
                vals[p] = out[p]
            elif p in assignment:
                vals[p] = np.asarray(assignment[p], dtype=np.float64)
            else:
                raise UnboundInput(f"no value for parent '{p}'")
        return vals

    for node_id in model.topo_order:
        node = model.nodes[node_id]
        if node.kind == DETERMINISTIC:
            out[node_id] = eval_link(node.factor.link, parent_values(node), env)
        elif node.kind == LATENT:
            transform = plan.get(node_id)
            if transform is None:
                if node_id not in assignment:
                    raise UnboundInput(f"no value for centered node '{node_id}'")
                out[node_id] = np.asarray(assignment[node_id], dtype=np.float64)
            else:
                if transform.aux_id not in assignment:
                    raise UnboundInput(f"no value for noise '{transform.aux_id}'")
                eps = np.asarray(assignment[transform.aux_id], dtype=np.float64)
                out[node_id] = transform.g(parent_values(node), eps, env)
        elif node.kind == AUXILIARY and node_id in assignment:
            out[node_id] = np.asarray(assignment[node_id], dtype=np.float64)
    return out


def eps_from_z(model, plan, assignment, theta) -> dict:
    """Invert :func:`z_from_eps`: recover noise values from latent values.

    ``assignment`` supplies a value for every latent node.  Returns ``eps``
    for planned nodes (keyed by ``aux_id``) and passes unplanned latent
    values through unchanged.
    """
    env = model.layout.unpack(np.asarray(theta, dtype=np.float64))
    values = {}

    def parent_values(node):
        vals = {}
        for p in node.parents:
            if p in values:
                vals[p] = values[p]
            elif p in assignment:
                vals[p] = np.asarray(assignment[p], dtype=np.float64)
            else:
                raise UnboundInput(f"no value for parent '{p}'")
        return vals

    out = {}
    for node_id in model.topo_order:
        node = model.nodes[node_id]
        if node.kind == DETERMINISTIC:
            values[node_id] = eval_link(node.factor.link, parent_values(node), env)
        elif node.kind == LATENT:
            if node_id not in assignment:
                raise UnboundInput(f"no value for latent node '{node_id}'")
            z = np.asarray(assignment[node_id], dtype=np.float64)
            values[node_id] = z
            transform = plan.get(node_id)
            if transform is None:
                out[node_id] = z
            else:
                out[transform.aux_id] = transform.g_inverse(
                    parent_values(node), z, env
                )
        elif node.kind == AUXILIARY and node_id in assignment:
            values[node_id] = np.asarray(assignment[node_id], dtype=np.float64)
    return out
