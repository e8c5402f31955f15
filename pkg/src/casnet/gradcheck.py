"""Finite-difference verification of analytic gradients.

``grad_check`` probes a scalar-valued computation coordinate by coordinate
with central differences and reports the worst relative error against the
gradients produced by ``backward()``.  ``run_suite`` bundles the checks for
every primitive op and the deep composite paths; the CLI ``grad-check``
command and the acceptance tests both run it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def grad_check(fn, wrt, step=1e-5, min_coords=32, rng=None, denom_floor=1e-3):
    """Max relative error of analytic vs central-difference gradients.

    ``fn`` is a nullary callable returning a scalar Tensor recomputed from the
    ``wrt`` tensors, whose ``data`` is perturbed in place per coordinate.  At
    least ``min_coords`` coordinates are probed in total (all of them when the
    tensors are smaller).  Relative error uses ``max(|a|, |n|, denom_floor)``
    as denominator so near-zero gradient pairs compare on an absolute scale.
    """
    rng = rng or np.random.default_rng(0)
    for t in wrt:
        t.grad = None
    fn().backward()
    analytic = []
    for t in wrt:
        if t.grad is None:
            raise AssertionError("probed tensor received no gradient")
        analytic.append(t.grad.copy())

    per_tensor = max(1, math.ceil(min_coords / len(wrt)))
    worst = 0.0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        n_probe = min(flat.size, per_tensor)
        idx = (
            np.arange(flat.size)
            if flat.size <= n_probe
            else rng.choice(flat.size, size=n_probe, replace=False)
        )
        for i in idx:
            saved = flat[i]
            flat[i] = saved + step
            f_plus = fn().item()
            flat[i] = saved - step
            f_minus = fn().item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            ai = a.reshape(-1)[i]
            denom = max(abs(ai), abs(numeric), denom_floor)
            worst = max(worst, abs(ai - numeric) / denom)
    return worst


def nudge_from_kinks(data, margin=0.05):
    """Push entries away from 0 so ReLU/PReLU probes stay off the kink."""
    small = np.abs(data) < margin
    return data + small * np.where(data >= 0, margin, -margin)


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return self.error < self.tol


def run_suite(seed=0):
    """Finite-difference checks for every primitive op and composite path."""
    from . import nn
    from . import tensor as T
    from .chanenc import ChannelEncoder, ChannelEncoderConfig
    from .film import CasNet, EmbeddingSource
    from .objectives import channel_id_loss, pit_loss, si_snr
    from .separator import SeparatorConfig, TasNet

    rng = np.random.default_rng(seed)
    results = []

    def check(name, fn, wrt, tol=PRIMITIVE_TOL):
        results.append(CheckResult(name, grad_check(fn, wrt, rng=rng), tol))

    # -- primitives ---------------------------------------------------------
    x = T.Tensor(rng.standard_normal((2, 3, 12)), requires_grad=True)
    k = T.Tensor(rng.standard_normal((4, 3, 5)), requires_grad=True)
    check("conv1d", lambda: (T.conv1d(x, k, 2, 2) ** 2).sum(), [x, k])

    xt = T.Tensor(rng.standard_normal((2, 3, 6)), requires_grad=True)
    kt = T.Tensor(rng.standard_normal((3, 2, 4)), requires_grad=True)
    check(
        "conv_transpose1d",
        lambda: (T.conv_transpose1d(xt, kt, 3) ** 2).sum(),
        [xt, kt],
    )

    xl = T.Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    wl = T.Tensor(rng.standard_normal((5, 6)), requires_grad=True)
    bl = T.Tensor(rng.standard_normal(5), requires_grad=True)
    check("linear", lambda: (T.linear(xl, wl, bl) ** 2).sum(), [xl, wl, bl])

    xa = T.Tensor(nudge_from_kinks(rng.standard_normal(40)), requires_grad=True)
    check("relu", lambda: (xa.relu() ** 2).sum(), [xa])
    slope = T.Tensor(np.array([0.3]), requires_grad=True)
    check("prelu", lambda: (T.prelu(xa, slope) ** 2).sum(), [xa, slope])
    check("sigmoid", lambda: (xa.sigmoid() ** 2).sum(), [xa])
    check("tanh", lambda: (xa.tanh() ** 2).sum(), [xa])

    xb = T.Tensor(rng.standard_normal((3, 4, 7)), requires_grad=True)
    bn = nn.BatchNorm1d(4)
    bn.scale.data = rng.standard_normal(4)
    bn.shift.data = rng.standard_normal(4)
    check(
        "batch_norm",
        lambda: (bn(xb) ** 2).sum(),
        [xb, bn.scale, bn.shift],
    )

    xi = T.Tensor(rng.standard_normal((3, 4, 7)), requires_grad=True)
    check("instance_norm", lambda: (nn.instance_norm(xi) ** 2).sum(), [xi])

    xp = T.Tensor(rng.standard_normal((2, 3, 9)), requires_grad=True)
    check("avg_pool_time", lambda: (T.avg_pool_time(xp) ** 2).sum(), [xp])

    lstm = nn.LSTM(5, 4, rng, bidirectional=True)
    xr = T.Tensor(rng.standard_normal((2, 3, 5)), requires_grad=True)
    check(
        "recurrent_layer",
        lambda: (lstm(xr) ** 2).sum(),
        [xr, lstm.w_ih, lstm.w_hh, lstm.b, lstm.w_ih_rev, lstm.w_hh_rev, lstm.b_rev],
    )

    xu = T.Tensor(rng.standard_normal((2, 10, 3)), requires_grad=True)
    check(
        "unfold_fold_time",
        lambda: (T.fold_time(T.unfold_time(xu, 4, 2), 2, 10) ** 2).sum(),
        [xu],
    )

    est = T.Tensor(rng.standard_normal(24), requires_grad=True)
    ref = rng.standard_normal(24)
    check("si_snr", lambda: si_snr(est, ref), [est])

    est2 = T.Tensor(rng.standard_normal((2, 24)), requires_grad=True)
    refs = rng.standard_normal((2, 24))
    check("pit_loss", lambda: pit_loss(est2, refs)[0], [est2])

    logits = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    check("channel_id_loss", lambda: channel_id_loss(logits, [0, 2, 1]), [logits])

    # -- composites ---------------------------------------------------------
    sep_cfg = SeparatorConfig(
        enc_dim=8, win=8, stride=4, n_blocks=1, chunk_size=4, hidden=6
    )
    enc_cfg = ChannelEncoderConfig(n_blocks=2, width=6, embed_dim=5, n_channel_classes=3)

    tasnet = TasNet(sep_cfg, seed=int(rng.integers(2**31)))
    chan = ChannelEncoder(enc_cfg, in_ch=sep_cfg.enc_dim, seed=int(rng.integers(2**31)))
    wave = T.Tensor(0.5 * rng.standard_normal((2, 80)), requires_grad=True)

    def chan_composite():
        return (chan(tasnet.encode(wave)) ** 2).sum()

    chan_params = [p for _, p in chan.named_parameters()]
    check(
        "channel_encoder_composite",
        chan_composite,
        [wave] + chan_params,
        tol=COMPOSITE_TOL,
    )

    casnet = CasNet(sep_cfg, enc_cfg, seed=int(rng.integers(2**31)))
    mix = T.Tensor(0.5 * rng.standard_normal((2, 80)), requires_grad=True)
    targets = 0.5 * rng.standard_normal((2, 2, 80))

    def casnet_loss():
        est_all, emb, logits = casnet(mix, EmbeddingSource.SAME_MIXTURE, aux=mix)
        l_rc = sum(pit_loss(est_all[b], targets[b])[0] for b in range(2)) / 2.0
        l_ci = channel_id_loss(logits, [0, 1])
        return l_rc + 0.1 * l_ci

    film_params = [
        p
        for name, p in casnet.named_parameters()
        if name.startswith(("film", "classifier"))
    ]
    check(
        "film_loss_composite",
        casnet_loss,
        [mix] + film_params,
        tol=COMPOSITE_TOL,
    )

    return results
