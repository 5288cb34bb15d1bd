"""Selective reinitialization of low-utility hidden units.

Each hidden unit carries a contribution utility, an exponentially decayed
running product of its activation magnitude and total outgoing weight
magnitude:

    u <- eta * u + (1 - eta) * |h| * sum_j |w_out_j|

Units also carry an age (steps since their last reset) and each hidden
layer a fractional counter c. Per step, c grows by rho * s_m where s_m is
the number of units older than the maturity threshold; whenever c >= 1 the
lowest-utility mature unit is recycled: incoming weights redrawn
Kaiming-uniform, outgoing weights and bias zeroed, utility and age cleared.

Zeroing the outgoing weights makes a reset prediction-neutral at the moment
it happens; the recycled unit re-enters the model only through subsequent
gradient steps.
"""

from dataclasses import dataclass

import numpy as np

from .nets import kaiming_bound


@dataclass(frozen=True)
class ResetEvent:
    layer: int   # hidden layer index, 0-based
    unit: int
    step: int    # value of the per-network step counter when the reset fired


class UtilityState:
    """Per-unit utilities, ages and per-layer counters for one network.

    Owns its own RNG so redraws never disturb any other random stream;
    with rho == 0 a network's trajectory is bit-identical to one without
    any utility tracking at all.
    """

    def __init__(self, net, decay=0.9, maturity=100, seed=0,
                 single_reset_per_step=False):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"decay must be in [0, 1], got {decay}")
        if maturity < 0:
            raise ValueError(f"maturity must be >= 0, got {maturity}")
        hidden = net.shape.hidden
        self.decay = float(decay)
        self.maturity = int(maturity)
        self.single_reset_per_step = bool(single_reset_per_step)
        self.utilities = [np.zeros(n) for n in hidden]
        self.ages = [np.zeros(n, dtype=np.int64) for n in hidden]
        self.counters = [0.0] * len(hidden)
        self.step = 0
        self.rng = np.random.default_rng(seed)

    def _check(self, net, trace=None):
        hidden = net.shape.hidden
        if len(self.utilities) != len(hidden) or \
                any(u.shape != (n,) for u, n in zip(self.utilities, hidden)):
            raise ValueError("utility state does not match network hidden widths")
        if trace is not None and len(trace.hidden) != len(hidden):
            raise ValueError("trace does not match network hidden layers")

    def update_utilities(self, net, trace):
        """Decay-average each unit's |activation| * sum|outgoing|; age everyone."""
        self._check(net, trace)
        eta = self.decay
        for k, h in enumerate(trace.hidden):
            out_mag = np.abs(net.weights[k + 1]).sum(axis=1)
            self.utilities[k] = eta * self.utilities[k] + (1.0 - eta) * np.abs(h) * out_mag
            self.ages[k] += 1
        self.step += 1

    def accumulate_and_maybe_reset(self, net, rho):
        """Grow the per-layer counters by rho * s_m and recycle units while c >= 1.

        Returns the list of ResetEvents. The output layer has no counter: its
        single unit is never a reset candidate.
        """
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {rho}")
        self._check(net)
        events = []
        widths = net.shape.widths
        for k in range(len(self.utilities)):
            mature = self.ages[k] > self.maturity
            s_m = int(mature.sum())
            self.counters[k] += rho * s_m
            while self.counters[k] >= 1.0 and mature.any():
                candidates = np.flatnonzero(mature)
                victim = int(candidates[np.argmin(self.utilities[k][candidates])])
                bound = kaiming_bound(widths[k])
                net.weights[k][:, victim] = self.rng.uniform(-bound, bound, size=widths[k])
                net.weights[k + 1][victim, :] = 0.0
                net.biases[k][victim] = 0.0
                self.utilities[k][victim] = 0.0
                self.ages[k][victim] = 0
                self.counters[k] -= 1.0
                mature[victim] = False
                events.append(ResetEvent(layer=k, unit=victim, step=self.step))
                if self.single_reset_per_step:
                    break
        return events

    def sere_step(self, net, trace, rho):
        """Utility update followed by counter accumulation and any resets."""
        self.update_utilities(net, trace)
        return self.accumulate_and_maybe_reset(net, rho)
