"""Finite-difference verification of every analytic gradient.

Two families of checks:

* embedding-space: each loss's returned gradients against central
  differences over its live matrix inputs (previous-model inputs are frozen
  by contract and carry no returned gradient, so they are not probed here;
  a structural test asserts their absence);
* parameter-space: the full chain (inputs -> stack -> normalization ->
  loss) differentiated with respect to every stack parameter.

Plus the closed-form per-anchor gradient against the production loss path.

Probe points are drawn deterministically; configurations that land too close
to a non-smooth point (a ReLU preactivation near zero; VICReg standard
deviations near the hinge are avoided by construction) are redrawn with the
next derived seed, since central differences are only a valid oracle where
the function is differentiable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .continual import backprop_views, encode_views
from .losses import (
    ContrastiveViews,
    Method,
    PnrConfig,
    Regime,
    barlow_loss,
    byol_loss,
    byol_pnr_l2,
    closed_form_grad,
    closed_form_parts,
    cssl_total,
    noncontrastive_pnr_total,
    pnr_l1,
    pnr_l2,
    total_loss,
    vicreg_loss,
    vicreg_pnr_l2,
)
from .model import (
    TargetNetwork,
    flat_grads,
    get_flat_params,
    init_stack,
    set_flat_params,
    snapshot_frozen,
)
from .numerics import Rng, finite_difference_gradient, row_l2_normalize

FD_EPS = 1e-5
REL_TOL = 1e-6
RELU_MARGIN = 1e-4

EMBEDDING_LOSSES = (
    "pnr_l1", "pnr_l2", "cssl_total", "byol_loss", "byol_pnr_l2",
    "vicreg_loss", "vicreg_pnr_l2", "barlow_loss", "noncontrastive_pnr_total",
)
PARAM_METHODS = ("simclr", "moco", "byol", "vicreg", "barlow")


@dataclass
class CheckReport:
    name: str
    trials: int
    max_err: float
    tol: float
    elapsed: float

    @property
    def passed(self) -> bool:
        return self.max_err < self.tol


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(fd))), 1e-10)
    return float(np.max(np.abs(analytic - fd))) / scale


def _unit_rows(rng: Rng, n: int, d: int) -> np.ndarray:
    return row_l2_normalize(rng.gaussian_matrix(n, d))


def random_views(rng: Rng, n: int = 5, d: int = 6, with_pred: bool = True,
                 with_target: bool = False, queue_rows: int = 0,
                 normalized: bool = True) -> ContrastiveViews:
    def draw(rows: int) -> np.ndarray:
        m = rng.gaussian_matrix(rows, d)
        return row_l2_normalize(m) if normalized else m

    return ContrastiveViews(
        zA_t=draw(n), zB_t=draw(n), zA_prev=draw(n), zB_prev=draw(n),
        gA_t=draw(n) if with_pred else None,
        gB_t=draw(n) if with_pred else None,
        zA_target=draw(n) if with_target else None,
        zB_target=draw(n) if with_target else None,
        extra_neg_cur=draw(queue_rows) if queue_rows else None,
        extra_neg_prev=draw(queue_rows) if queue_rows else None,
    )


def _vicreg_inputs(rng: Rng, n: int = 6, d: int = 5) -> np.ndarray:
    """Raw batch whose per-dim stds sit safely away from the hinge at 1."""
    z = rng.gaussian_matrix(n, d, 0.0, 0.4)
    z[:, ::2] *= 5.0  # alternate dims clearly above the hinge
    return z


def _fd_on_field(loss_fn, views: ContrastiveViews, name: str) -> np.ndarray:
    base = getattr(views, name)

    def f(x: np.ndarray) -> float:
        return loss_fn(replace(views, **{name: x})).value

    return finite_difference_gradient(f, base, FD_EPS)


def _check_views_loss(loss_fn, views: ContrastiveViews,
                      grad_fields: dict[str, str]) -> float:
    res = loss_fn(views)
    worst = 0.0
    for field_name, grad_attr in grad_fields.items():
        analytic = getattr(res, grad_attr)
        fd = _fd_on_field(loss_fn, views, field_name)
        if analytic is None:
            analytic = np.zeros_like(fd)
        worst = max(worst, rel_err(analytic, fd))
    return worst


_LIVE_FIELDS = {"zA_t": "grad_zA_t", "zB_t": "grad_zB_t",
                "gA_t": "grad_gA_t", "gB_t": "grad_gB_t"}


def _embedding_trial(name: str, rng: Rng) -> float:
    n = 3 + int(rng.uniform(1)[0] * 4)  # batch in [3, 6]
    d = 5 + int(rng.uniform(1)[0] * 4)
    if name == "pnr_l1":
        v = random_views(rng, n, d, queue_rows=3)
        return _check_views_loss(
            lambda vv: pnr_l1(vv, 0.2, norm_tol=None), v,
            {"zA_t": "grad_zA_t", "zB_t": "grad_zB_t"})
    if name == "pnr_l2":
        v = random_views(rng, n, d, queue_rows=3)
        return _check_views_loss(
            lambda vv: pnr_l2(vv, 0.2, norm_tol=None), v,
            {"zA_t": "grad_zA_t", "zB_t": "grad_zB_t", "gA_t": "grad_gA_t"})
    if name == "cssl_total":
        cfg = PnrConfig(method=Method.MOCO, regime=Regime.PNR, tau=0.2)
        v = random_views(rng, n, d, queue_rows=4)
        return _check_views_loss(
            lambda vv: cssl_total(vv, cfg, norm_tol=None), v, _LIVE_FIELDS)
    if name == "byol_loss":
        p, t = _unit_rows(rng, n, d), _unit_rows(rng, n, d)
        fd = finite_difference_gradient(lambda x: byol_loss(x, t).value, p,
                                        FD_EPS)
        return rel_err(byol_loss(p, t).grad_gA_t, fd)
    if name == "byol_pnr_l2":
        g = _unit_rows(rng, n, d)
        zpa, zpb = _unit_rows(rng, n, d), _unit_rows(rng, n, d)
        fd = finite_difference_gradient(
            lambda x: byol_pnr_l2(x, zpa, zpb, 0.5).value, g, FD_EPS)
        return rel_err(byol_pnr_l2(g, zpa, zpb, 0.5).grad_gA_t, fd)
    if name == "vicreg_loss":
        za, zb = _vicreg_inputs(rng), _vicreg_inputs(rng)
        res = vicreg_loss(za, zb)
        worst = rel_err(res.grad_zA_t, finite_difference_gradient(
            lambda x: vicreg_loss(x, zb).value, za, FD_EPS))
        return max(worst, rel_err(res.grad_zB_t, finite_difference_gradient(
            lambda x: vicreg_loss(za, x).value, zb, FD_EPS)))
    if name == "vicreg_pnr_l2":
        g = rng.gaussian_matrix(n, d)
        zpa, zpb = rng.gaussian_matrix(n, d), rng.gaussian_matrix(n, d)
        fd = finite_difference_gradient(
            lambda x: vicreg_pnr_l2(x, zpa, zpb, 25.0, 23.0).value, g, FD_EPS)
        return rel_err(vicreg_pnr_l2(g, zpa, zpb, 25.0, 23.0).grad_gA_t, fd)
    if name == "barlow_loss":
        za, zb = rng.gaussian_matrix(n + 3, d), rng.gaussian_matrix(n + 3, d)
        res = barlow_loss(za, zb)
        worst = rel_err(res.grad_zA_t, finite_difference_gradient(
            lambda x: barlow_loss(x, zb).value, za, FD_EPS))
        return max(worst, rel_err(res.grad_zB_t, finite_difference_gradient(
            lambda x: barlow_loss(za, x).value, zb, FD_EPS)))
    if name == "noncontrastive_pnr_total":
        worst = 0.0
        for method in (Method.BYOL, Method.VICREG, Method.BARLOW):
            cfg = PnrConfig(method=method, regime=Regime.PNR)
            v = random_views(rng, n + 2, d, with_target=True,
                             normalized=method == Method.BYOL)

            def f_total(vv, m=method, c=cfg):
                return noncontrastive_pnr_total(m, vv, c)

            fields = dict(_LIVE_FIELDS)
            if method == Method.BYOL:
                fields.pop("zA_t")
                fields.pop("zB_t")
            worst = max(worst, _check_views_loss(f_total, v, fields))
        return worst
    raise ValueError(f"unknown loss {name}")


def check_embedding_gradients(trials: int = 20, seed: int = 2024
                              ) -> list[CheckReport]:
    reports = []
    for name in EMBEDDING_LOSSES:
        t0 = time.perf_counter()
        worst = 0.0
        for k in range(trials):
            rng = Rng(seed).derive(f"emb-{name}-{k}")
            worst = max(worst, _embedding_trial(name, rng))
        reports.append(CheckReport(f"embedding/{name}", trials, worst,
                                   REL_TOL, time.perf_counter() - t0))
    return reports


def _param_setup(method: str, attempt_seed: int):
    rng = Rng(attempt_seed)
    dims_enc, dims_proj, dims_pred = [4, 6, 5], [5, 6, 5], [5, 5]
    stack = init_stack(rng.derive("stack"), dims_enc, dims_proj, dims_pred)
    frozen = snapshot_frozen(
        init_stack(rng.derive("frozen"), dims_enc, dims_proj, dims_pred))
    xA = rng.gaussian_matrix(8, 4)
    xB = rng.gaussian_matrix(8, 4)
    cfg = PnrConfig(method=Method(method), regime=Regime.PNR, tau=0.2)
    target = None
    extra_cur = extra_prev = None
    if method == "byol":
        target = TargetNetwork.from_online(
            init_stack(rng.derive("target"), dims_enc, dims_proj, dims_pred),
            0.99)
    if method == "moco":
        extra_cur = _unit_rows(rng.derive("qc"), 4, 5)
        extra_prev = _unit_rows(rng.derive("qp"), 4, 5)
    return stack, frozen, xA, xB, cfg, target, extra_cur, extra_prev


def _chain_relu_margin(nets, xs) -> tuple[float, float]:
    """(smallest |hidden preactivation|, smallest output row norm) across
    stacks and inputs. Small margins invalidate FD probes; near-zero rows
    would make normalization degenerate."""
    margin = np.inf
    min_norm = np.inf
    for net in nets:
        for x in xs:
            out = x
            for mlp in (net.encoder, net.projector, net.predictor):
                for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                    pre = out @ w.T + b
                    if k < len(mlp.weights) - 1:
                        margin = min(margin, float(np.min(np.abs(pre))))
                    out = (pre if k == len(mlp.weights) - 1
                           else np.maximum(pre, 0.0))
                min_norm = min(min_norm,
                               float(np.min(np.sqrt(np.sum(out * out, 1)))))
    return margin, min_norm


def check_param_gradients(trials: int = 4, seed: int = 515
                          ) -> list[CheckReport]:
    """Full-chain finite differences over every stack parameter."""
    reports = []
    for method in PARAM_METHODS:
        t0 = time.perf_counter()
        worst = 0.0
        done = 0
        attempt = 0
        while done < trials:
            attempt += 1
            (stack, frozen, xA, xB, cfg, target,
             extra_cur, extra_prev) = _param_setup(method,
                                                   seed + 1000 * attempt)
            margin, min_norm = _chain_relu_margin([stack, frozen], [xA, xB])
            if margin < RELU_MARGIN or min_norm < 1e-2:
                continue  # redraw: FD invalid at a kink / degenerate row

            def loss_value() -> float:
                enc = encode_views(stack, xA, xB, frozen, cfg, target=target,
                                   extra_neg_cur=extra_cur,
                                   extra_neg_prev=extra_prev)
                return total_loss(enc.views, cfg, norm_tol=None).value

            enc = encode_views(stack, xA, xB, frozen, cfg, target=target,
                               extra_neg_cur=extra_cur,
                               extra_neg_prev=extra_prev)
            res = total_loss(enc.views, cfg, norm_tol=None)
            analytic = flat_grads(backprop_views(stack, enc, cfg, res))

            theta0 = get_flat_params(stack)
            fd = np.zeros_like(theta0)
            for idx in range(theta0.size):
                acc = 0.0
                for sign in (+1.0, -1.0):
                    theta = theta0.copy()
                    theta[idx] += sign * FD_EPS
                    set_flat_params(stack, theta)
                    acc += sign * loss_value()
                fd[idx] = acc / (2.0 * FD_EPS)
            set_flat_params(stack, theta0)
            worst = max(worst, rel_err(analytic, fd))
            done += 1
        reports.append(CheckReport(f"params/{method}", trials, worst,
                                   REL_TOL, time.perf_counter() - t0))
    return reports


def check_closed_form(instances: int = 50, seed: int = 99) -> list[CheckReport]:
    """Closed-form per-anchor gradient vs the production loss gradients.

    With batch size 1 and the (A, B) ordering, the anchor appears only in
    its own loss terms, so the closed form must equal half the sum of the
    plasticity gradient (zA_t slot) and the distillation gradient, which with
    an identity predictor lands entirely in the gA_t slot. The softmax mass
    identity is checked on every instance.
    """
    t0 = time.perf_counter()
    worst_grad = 0.0
    worst_mass = 0.0
    for k in range(instances):
        rng = Rng(seed).derive(f"closed-{k}")
        v = random_views(rng, 1, 6, queue_rows=int(rng.uniform(1)[0] * 3))
        v = replace(v, gA_t=v.zA_t.copy(), gB_t=v.zB_t.copy())
        _, _, mass = closed_form_parts(v, 0.2)
        worst_mass = max(worst_mass, float(np.max(np.abs(mass - 1.0))))
        cf = closed_form_grad(v, 0.2)
        r1 = pnr_l1(v, 0.2, norm_tol=None)
        r2 = pnr_l2(v, 0.2, norm_tol=None)
        full = 0.5 * (r1.grad_zA_t + r2.grad_gA_t)
        worst_grad = max(worst_grad, float(np.max(np.abs(cf - full))))
    elapsed = time.perf_counter() - t0
    return [
        CheckReport("closed_form/grad_abs_err", instances, worst_grad,
                    1e-10, elapsed),
        CheckReport("closed_form/mass_sum_dev", instances, worst_mass,
                    1e-12, 0.0),
    ]


def run_gradcheck(trials: int = 20, loss: str | None = None,
                  seed: int = 2024) -> list[CheckReport]:
    """The CI gate: embedding + parameter + closed-form checks."""
    if loss is not None:
        if loss not in EMBEDDING_LOSSES:
            raise ValueError(f"unknown loss {loss!r}; pick from "
                             f"{', '.join(EMBEDDING_LOSSES)}")
        t0 = time.perf_counter()
        worst = 0.0
        for k in range(trials):
            rng = Rng(seed).derive(f"emb-{loss}-{k}")
            worst = max(worst, _embedding_trial(loss, rng))
        return [CheckReport(f"embedding/{loss}", trials, worst, REL_TOL,
                            time.perf_counter() - t0)]
    reports = check_embedding_gradients(trials, seed)
    reports.extend(check_param_gradients(trials=4, seed=seed + 1))
    reports.extend(check_closed_form(instances=50, seed=seed + 2))
    return reports
