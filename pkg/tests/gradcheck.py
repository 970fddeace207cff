"""Central finite-difference check of the full DAE training loss."""
import numpy as np
import torch

from postdae._torch import batch_soft_dice_loss, to_batch
from postdae.dae import DAEArchitectureSpec, build_dae, load_dae
from postdae.degrade import degrade


def _problem(input_size: int, rng: np.random.Generator):
    clean = np.zeros((input_size, input_size), bool)
    q = input_size // 8
    clean[q : 7 * q, q : 3 * q + 1] = True
    clean[q : 7 * q, 5 * q : 7 * q] = True
    noisy = degrade(clean, rng=rng)
    return to_batch([noisy], torch.float64), to_batch([clean], torch.float64)


def _norm(tensors) -> torch.Tensor:
    return torch.sqrt(sum((t**2).sum() for t in tensors))


def dae_gradient_errors(n_points=100, seed=0, h=1e-8, input_size=32, code_size=8):
    """Relative errors of autograd vs central differences at random parameter points.

    Each point is a freshly initialised network (biases randomised too, so no
    unit sits exactly on a ReLU kink) together with a unit direction ``v`` in
    parameter space. The analytic directional derivative ``grad . v``
    of ``1 - softDice(net(degrade(S)), S)`` (``v`` mixes a random direction
    with the normalised autograd gradient) is compared with
    ``(L(w + h v) - L(w - h v)) / 2h``, all in float64.
    """
    spec = DAEArchitectureSpec(input_size=input_size, code_size=code_size)
    errors = []
    for point in range(n_points):
        rng = np.random.default_rng([seed, point])
        net = load_dae(build_dae(spec, seed * 100_003 + point), dtype=torch.float64)
        params = list(net.parameters())
        with torch.no_grad():
            for name, p in net.named_parameters():
                if name.endswith("bias"):
                    p.copy_(torch.as_tensor(rng.normal(0, 0.05, tuple(p.shape))))
        x, y = _problem(input_size, rng)

        def loss():
            return batch_soft_dice_loss(net(x), y)

        net.zero_grad()
        loss().backward()
        # half random, half along the autograd gradient: a purely random unit
        # direction in ~1e5 dimensions sees only ~|g|/sqrt(N) of the slope and
        # the difference quotient would then be dominated by rounding error
        rand = [torch.as_tensor(rng.standard_normal(tuple(p.shape))) for p in params]
        direction = [r / _norm(rand) + p.grad / _norm([q.grad for q in params])
                     for r, p in zip(rand, params)]
        direction = [d / _norm(direction) for d in direction]
        analytic = float(sum((p.grad * d).sum() for p, d in zip(params, direction)))
        with torch.no_grad():
            for p, d in zip(params, direction):
                p.add_(h * d)
            up = float(loss())
            for p, d in zip(params, direction):
                p.add_(-2 * h * d)
            down = float(loss())
            for p, d in zip(params, direction):
                p.add_(h * d)
        numeric = (up - down) / (2 * h)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300))
    return np.array(errors)
