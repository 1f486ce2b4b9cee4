"""Central-difference certification of the analytic gradients.

``fd_check`` compares the tape gradient of a scalar function against
``(f(x + h e_i) - f(x - h e_i)) / 2h`` coordinate by coordinate and reports
``max |analytic - numeric| / max(1, |numeric|)``. ``OP_CHECKS`` holds one
randomized f64 instance per differentiable operation, each built so that
inputs stay at least ``10 h`` away from kinks (ReLU zero, lattice points).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import affinity, codec, fam, ops, ptm
from .tensor import ParamSet, Tensor, backward, no_grad, softmax, tsum

DEFAULT_STEP = 1e-4
GATE = 1e-4


class GradientCheckError(RuntimeError):
    pass


def fd_check(f: Callable[[Tensor], Tensor], x, h: float = DEFAULT_STEP,
             indices=None, max_coords: int | None = None, rng=None) -> float:
    """Max relative error between tape and central-difference gradients of ``f`` at ``x``.

    ``indices`` (flat positions) restricts the coordinates checked;
    ``max_coords`` picks that many at random instead.
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x, requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise GradientCheckError(f"function must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradientCheckError("function value is not finite")
    analytic = backward(out).get(xt)
    analytic = np.zeros_like(x) if analytic is None else np.asarray(analytic).reshape(x.shape)

    if indices is None:
        indices = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            rng = rng or np.random.default_rng(0)
            indices = np.sort(rng.choice(x.size, size=max_coords, replace=False))
    flat = x.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in indices:
            xp = flat.copy()
            xm = flat.copy()
            xp[i] += h
            xm[i] -= h
            fp = float(f(Tensor(xp.reshape(x.shape))).data)
            fm = float(f(Tensor(xm.reshape(x.shape))).data)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise GradientCheckError(f"non-finite function value at coordinate {i}")
            numeric = (fp - fm) / (2 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def check_inputs(fn: Callable[[dict], Tensor], inputs: dict, h: float = DEFAULT_STEP,
                 max_coords: int | None = None) -> dict:
    """Run :func:`fd_check` once per named input, holding the others fixed."""
    errors = {}
    for name, value in inputs.items():
        def f(t, name=name):
            args = {k: (t if k == name else Tensor(v)) for k, v in inputs.items()}
            return fn(args)
        errors[name] = fd_check(f, value, h, max_coords=max_coords)
    return errors


def _projection(rng, shape):
    r = Tensor(rng.standard_normal(shape))
    return lambda y: tsum(y * r)


def _params_dict(params: ParamSet) -> dict:
    return {k: v.data.astype(np.float64) for k, v in params.items()}


def _as_paramset(d: dict) -> ParamSet:
    ps = ParamSet(np.float64)
    for k, v in d.items():
        ps._params[k] = v
    return ps


def _away_from_integers(rng, shape, lo, hi, margin=0.05):
    base = rng.integers(lo, hi, size=shape).astype(np.float64)
    return base + rng.uniform(margin, 1 - margin, size=shape)


# -- per-op instances ------------------------------------------------------------

def _check_conv2d(rng):
    x = rng.standard_normal((6, 5, 2))
    k = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    out = {}
    for stride in (1, 2):
        proj = _projection(rng, ops.conv2d(Tensor(x), Tensor(k), stride=stride).shape)
        errs = check_inputs(lambda a, s=stride: proj(ops.conv2d(a["x"], a["k"], a["b"], stride=s)),
                            {"x": x, "k": k, "b": b})
        out.update({f"{n}@s{stride}": e for n, e in errs.items()})
    return out


def _check_separable(rng):
    x = rng.standard_normal((5, 5, 3))
    dw = rng.standard_normal((3, 3, 3))
    pw = rng.standard_normal((1, 1, 3, 2))
    proj = _projection(rng, (5, 5, 2))
    return check_inputs(lambda a: proj(ops.separable_conv2d(a["x"], a["dw"], a["pw"])),
                        {"x": x, "dw": dw, "pw": pw})


def _check_softmax(rng):
    x = rng.standard_normal((4, 5))
    proj = _projection(rng, (4, 5))
    return {f"x@axis{ax}": check_inputs(lambda a, ax=ax: proj(softmax(a["x"], axis=ax)), {"x": x})["x"]
            for ax in (0, 1)}


def _mlp_instance(rng, cin, hidden, cout):
    ps = ParamSet(np.float64)
    ops.init_mlp(ps, "m", rng, cin, hidden, cout)
    d = _params_dict(ps.subset("m"))
    d = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in d.items()}
    return d


def _check_mlp(rng):
    x = rng.standard_normal((3, 4, 5))
    p = _mlp_instance(rng, 5, 6, 3)
    proj = _projection(rng, (3, 4, 3))

    def fn(a):
        ps = _as_paramset({k: a[k] for k in p})
        return proj(ops.mlp(a["x"], ps))

    return check_inputs(fn, {"x": x, **p})


def _check_channel_attention(rng):
    x = rng.standard_normal((4, 4, 4))
    p = _mlp_instance(rng, 4, 2, 4)
    proj = _projection(rng, x.shape)

    def fn(a):
        return proj(ops.channel_attention(a["x"], _as_paramset({k: a[k] for k in p})))

    return check_inputs(fn, {"x": x, **p})


def _check_spatial_attention(rng):
    # distinct channel values so the channel max has a clear winner
    x = rng.standard_normal((5, 5, 3)) + np.array([0.0, 1.5, 3.0])
    p = {"w": 0.3 * rng.standard_normal((7, 7, 2, 1)), "b": rng.standard_normal(1)}
    proj = _projection(rng, x.shape)

    def fn(a):
        return proj(ops.spatial_attention(a["x"], _as_paramset({k: a[k] for k in p})))

    return check_inputs(fn, {"x": x, **p})


def _check_bilinear(rng):
    H, W, C = 5, 6, 2
    v = rng.standard_normal((H, W, C))
    # pixel coords strictly inside cells, some partly outside the map
    px = _away_from_integers(rng, (4, 4), -1, W)
    py = _away_from_integers(rng, (4, 4), -1, H)
    coords = np.stack([px / ((W - 1) / 2) - 1, py / ((H - 1) / 2) - 1], axis=-1)
    proj = _projection(rng, (4, 4, C))
    return check_inputs(lambda a: proj(ops.bilinear_sample(a["v"], a["coords"])),
                        {"v": v, "coords": coords})


def _check_resize(rng):
    x = rng.standard_normal((3, 4, 2))
    proj = _projection(rng, (6, 8, 2))
    return check_inputs(lambda a: proj(ops.resize_bilinear(a["x"], 6, 8)), {"x": x})


def _check_deform_conv(rng):
    H, W, C, Co = 5, 5, 2, 3
    x = rng.standard_normal((H, W, C))
    off = _away_from_integers(rng, (H, W, 18), -2, 2)
    mod = rng.uniform(0.1, 0.9, size=(H, W, 9))
    k = rng.standard_normal((3, 3, C, Co))
    proj = _projection(rng, (H, W, Co))

    def fn(a):
        return proj(fam.deform_conv(a["x"], fam.DeformParams(a["offsets"], a["modulation"]), a["kernel"]))

    return check_inputs(fn, {"x": x, "offsets": off, "modulation": mod, "kernel": k})


def _check_affinity_readout(rng):
    kg = rng.standard_normal((2, 3, 3, 4))
    kq = rng.standard_normal((3, 3, 4))
    vg = rng.standard_normal((2, 3, 3, 3))
    proj = _projection(rng, (3, 3, 3))
    return check_inputs(lambda a: proj(affinity.memory_read(a["kg"], a["vg"], a["kq"])),
                        {"kg": kg, "kq": kq, "vg": vg})


def _ptm_params(rng, cv, hw, rounds=1):
    ps = ParamSet(np.float64)
    ptm.init_ptm(ps, "ptm", rng, cv, hw, rounds)
    # jitter so no hidden unit sits dead at the zero-bias init
    return {k: v + 0.1 * rng.standard_normal(v.shape) + 0.1 for k, v in _params_dict(ps.subset("ptm")).items()}


def _check_init_prototype(rng):
    cv = 4
    vg = rng.standard_normal((2, 3, 3, cv))
    p = {k: v for k, v in _ptm_params(rng, cv, 9).items() if k.startswith("proto_")}
    proj = _projection(rng, (1, cv))

    def fn(a):
        return proj(ptm.init_prototype(a["vg"], _as_paramset({k: a[k] for k in p})))

    return check_inputs(fn, {"vg": vg, **p})


def _check_fuse(rng):
    cv = 3
    fm = rng.standard_normal((4, 4, cv))
    fl = rng.standard_normal((4, 4, cv))
    p = {k[5:]: v for k, v in _ptm_params(rng, cv, 16).items() if k.startswith("fuse.")}
    proj = _projection(rng, (4, 4, cv))

    def fn(a):
        return proj(ptm.fuse(a["f_mem"], a["f_loc"], _as_paramset({k: a[k] for k in p})))

    return check_inputs(fn, {"f_mem": fm, "f_loc": fl, **p}, max_coords=40)


def _check_update_prototype(rng):
    cv = 4
    g = rng.standard_normal((1, cv))
    f = rng.standard_normal((3, 3, cv))
    p = {k[12:]: v for k, v in _ptm_params(rng, cv, 9).items() if k.startswith("round0.attn.")}
    proj = _projection(rng, (1, cv))

    def fn(a):
        return proj(ptm.update_prototype(a["G"], a["F"], _as_paramset({k: a[k] for k in p})))

    return check_inputs(fn, {"G": g, "F": f, **p})


def _check_activate_pixels(rng):
    cv = 3
    g = rng.standard_normal((1, cv))
    f = rng.standard_normal((4, 4, cv))
    p = {k[11:]: v for k, v in _ptm_params(rng, cv, 16).items() if k.startswith("round0.act.")}
    proj = _projection(rng, (4, 4, cv))

    def fn(a):
        return proj(ptm.activate_pixels(a["G"], a["F"], _as_paramset({k: a[k] for k in p})))

    return check_inputs(fn, {"G": g, "F": f, **p}, max_coords=40)


def _check_fam(rng):
    ck, cv = 2, 2
    ps = ParamSet(np.float64)
    fam.init_fam(ps, "fam", rng, ck, cv)
    # move off the zero init so offsets are non-trivial and lattice points are avoided
    p = {k: v + 0.05 * rng.standard_normal(v.shape) for k, v in _params_dict(ps.subset("fam")).items()}
    inputs = {"kq": rng.standard_normal((4, 4, ck)), "vq": rng.standard_normal((4, 4, cv)),
              "kl": rng.standard_normal((4, 4, ck)), "vl": rng.standard_normal((4, 4, cv)), **p}
    proj = _projection(rng, (4, 4, cv))

    def fn(a):
        out, _ = fam.run_fam(a["kq"], a["vq"], a["kl"], a["vl"], _as_paramset({k: a[k] for k in p}))
        return proj(out)

    return check_inputs(fn, inputs, max_coords=30)


def _check_soft_aggregate(rng):
    l1 = rng.standard_normal((3, 3, 1))
    l2 = rng.standard_normal((3, 3, 1))
    labels = rng.integers(0, 3, size=(3, 3))
    return check_inputs(lambda a: codec.cross_entropy(codec.soft_aggregate([a["l1"], a["l2"]]), labels),
                        {"l1": l1, "l2": l2})


OP_CHECKS = {
    "conv2d": _check_conv2d,
    "separable_conv2d": _check_separable,
    "softmax": _check_softmax,
    "mlp": _check_mlp,
    "channel_attention": _check_channel_attention,
    "spatial_attention": _check_spatial_attention,
    "bilinear_sample": _check_bilinear,
    "resize_bilinear": _check_resize,
    "deform_conv": _check_deform_conv,
    "affinity_readout": _check_affinity_readout,
    "init_prototype": _check_init_prototype,
    "fuse": _check_fuse,
    "update_prototype": _check_update_prototype,
    "activate_pixels": _check_activate_pixels,
    "fam": _check_fam,
    "soft_aggregate_ce": _check_soft_aggregate,
}


def run_checks(names=None, seed: int = 0) -> dict:
    """``{op: {input: max relative error}}`` for the selected ops."""
    names = list(OP_CHECKS) if names is None else list(names)
    results = {}
    for name in names:
        if name not in OP_CHECKS:
            raise KeyError(f"unknown op {name!r}; known: {', '.join(OP_CHECKS)}")
        results[name] = OP_CHECKS[name](np.random.default_rng(seed))
    return results


def format_table(results: dict, gate: float = GATE) -> str:
    lines = [f"{'op':<20s} {'input':<22s} {'max rel err':>12s}  status"]
    for op, errs in results.items():
        for inp, err in errs.items():
            lines.append(f"{op:<20s} {inp:<22s} {err:12.3e}  {'ok' if err <= gate else 'FAIL'}")
    return "\n".join(lines)
