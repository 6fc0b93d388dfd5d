# optimizer.py

"""AdaBelief: Adam with the second moment tracking (g - m)^2, the 'belief' in the gradient."""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from errors import NonFiniteGradientError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaBeliefHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.98
    beta2: float = 0.98
    eps: float = 1e-8


@dataclass
class OptimizerState:
    first_moment: Dict[str, np.ndarray]
    belief: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "OptimizerState":
        return cls(first_moment={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
                   belief={name: np.zeros_like(value, dtype=np.float64) for name, value in params.items()},
                   step=0)


def adabelief_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
                   state: OptimizerState, hyper: AdaBeliefHyper
                   ) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """One update; returns new parameters and state, inputs are left untouched.

    Missing gradients count as zero. Any NaN/Inf gradient aborts the step.
    """
    bad = sorted(name for name, g in grads.items() if not np.all(np.isfinite(g)))
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient for {', '.join(bad)}", names=bad)

    t = state.step + 1
    b1, b2, eps = hyper.beta1, hyper.beta2, hyper.eps
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    new_params, first, belief = {}, {}, {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        s = b2 * state.belief[name] + (1.0 - b2) * (g - m) ** 2 + eps
        step = hyper.learning_rate * (m / correction1) / (np.sqrt(s / correction2) + eps)
        new_params[name] = theta - step
        first[name], belief[name] = m, s
    return new_params, OptimizerState(first_moment=first, belief=belief, step=t)


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float
                        ) -> Tuple[Dict[str, np.ndarray], float]:
    """Rescale all gradients together so their joint L2 norm is at most max_norm."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    logger.debug(f"clipping gradient norm {norm:.3e} -> {max_norm:.3e}")
    return {name: g * factor for name, g in grads.items()}, norm
