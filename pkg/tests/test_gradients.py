"""Backprop vs central finite differences in float64 (relative error < 1e-4)."""
import numpy as np
import pytest
import torch

from dmnet.cprm import CPRM
from dmnet.decoder import Decoder, segmentation_loss

REL_TOL = 1e-4
EPS = 1e-6


def _setup(seed=0, c=4, h=4, w=4):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    cprm = CPRM(c, channel_rank=4).double()
    decoder = Decoder(c).double()
    with torch.no_grad():
        cprm.w_p.add_(torch.as_tensor(rng.normal(size=(c, c)) * 0.2))
        cprm.alpha1.fill_(0.7)
        cprm.beta1.fill_(0.3)
        # the head starts at zero, which would zero every upstream gradient
        decoder.cls.weight.copy_(torch.as_tensor(rng.normal(size=decoder.cls.weight.shape) * 0.3))
    fq = torch.as_tensor(rng.normal(size=(1, c, h, w)))
    fs = torch.as_tensor(rng.normal(size=(1, c, h, w)))
    ms = torch.as_tensor(rng.integers(0, 2, (1, h, w)), dtype=torch.float64)
    ms[0, 0, 0] = 1
    act_a = torch.as_tensor(rng.uniform(size=(1, h, w)))
    target = torch.as_tensor(rng.integers(0, 2, (1, h, w)))

    def loss():
        out = cprm(fq, fs, ms)
        y = decoder(out.query, out.prototype, out.activation, act_a)
        return segmentation_loss(y, None, target)

    return cprm, decoder, loss


def _relative_error(param, loss_fn, entries=None):
    param.grad = None
    loss_fn().backward()
    analytic = param.grad.detach().clone().flatten()
    flat = param.data.view(-1)
    idx = range(flat.numel()) if entries is None else entries
    numeric, chosen = [], []
    for i in idx:
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + EPS
            up = loss_fn().item()
            flat[i] = orig - EPS
            down = loss_fn().item()
            flat[i] = orig
        numeric.append((up - down) / (2 * EPS))
        chosen.append(analytic[i].item())
    a, n = np.array(chosen), np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12), a


@pytest.mark.parametrize("name", ["alpha1", "beta1", "w_p"])
def test_cprm_parameter_gradients(name):
    cprm, _, loss = _setup()
    err, grad = _relative_error(getattr(cprm, name), loss)
    assert np.abs(grad).max() > 0, "gradient is identically zero; check is vacuous"
    assert err < REL_TOL


@pytest.mark.parametrize("name", ["merge.0.weight", "refine.0.weight", "aspp.branches.1.0.weight",
                                  "aspp.project.0.weight", "cls.weight", "cls.bias"])
def test_decoder_weight_gradients(name):
    _, decoder, loss = _setup(seed=1)
    param = dict(decoder.named_parameters())[name]
    entries = np.random.default_rng(0).choice(param.numel(), min(12, param.numel()), replace=False)
    err, grad = _relative_error(param, loss, entries.tolist())
    assert np.abs(grad).max() > 0
    assert err < REL_TOL
