"""Page-Hinkley change detection over absolute prediction errors.

The statistic accumulates |r - r_hat| - delta each round and tracks its
running minimum; a drift is declared when the gap to that minimum exceeds
the threshold. The gap also drives the replacement rate: rho sits at
rho_min in stable phases, rises linearly with the gap, and jumps to
rho_max on the round a drift is declared.
"""

import numpy as np


class DetectorConfigError(ValueError):
    pass


class PhaDetector:
    def __init__(self, offset=0.1, threshold=0.5, scale=0.01,
                 rho_min=0.01, rho_max=0.1, rearm_on_detection=True):
        if offset <= 0:
            raise DetectorConfigError(f"offset must be > 0, got {offset}")
        if threshold <= 0:
            raise DetectorConfigError(f"threshold must be > 0, got {threshold}")
        if scale <= 0:
            raise DetectorConfigError(f"scale must be > 0, got {scale}")
        if not 0.0 <= rho_min <= rho_max < 1.0:
            raise DetectorConfigError(
                f"need 0 <= rho_min <= rho_max < 1, got {rho_min}, {rho_max}")
        # rho_min == rho_max pins rho outright (degenerate no-op detector),
        # otherwise the linear branch must stay below rho_max.
        if rho_min != rho_max and scale * threshold > rho_max - rho_min:
            raise DetectorConfigError(
                f"scale * threshold = {scale * threshold:.6g} exceeds "
                f"rho_max - rho_min = {rho_max - rho_min:.6g}")
        self.offset = float(offset)
        self.threshold = float(threshold)
        self.scale = float(scale)
        self.rho_min = float(rho_min)
        self.rho_max = float(rho_max)
        self.rearm_on_detection = bool(rearm_on_detection)
        self.pha = 0.0
        self.pha_min = 0.0
        self.detections = 0

    def observe(self, abs_error):
        """Fold one absolute prediction error into the statistic."""
        abs_error = float(abs_error)
        if not np.isfinite(abs_error) or abs_error < 0:
            raise ValueError(f"abs_error must be finite and >= 0, got {abs_error}")
        self.pha += abs_error - self.offset
        self.pha_min = min(self.pha_min, self.pha)

    @property
    def deviation(self):
        return self.pha - self.pha_min

    def current_rho(self):
        """(rho, drift_detected) for the current round.

        On detection the statistic re-arms (pha and its minimum return to 0)
        unless rearm_on_detection is off, in which case rho stays pinned at
        rho_max until the gap decays on its own.
        """
        deviation = self.deviation
        if deviation > self.threshold:
            self.detections += 1
            if self.rearm_on_detection:
                self.pha = 0.0
                self.pha_min = 0.0
            return self.rho_max, True
        rho = self.rho_min + self.scale * deviation
        return min(max(rho, self.rho_min), self.rho_max), False
