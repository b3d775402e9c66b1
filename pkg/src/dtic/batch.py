"""Padded array view of a cohort, the layout every kernel consumes."""
from dataclasses import dataclass

import numpy as np

from .timeseries import VARIABLES, extrema_labels


@dataclass
class PaddedCohort:
    ids: list
    t: np.ndarray  # (n, 6, I) minutes
    x: np.ndarray  # (n, 6, I) scaled values
    cnt: np.ndarray  # (n, 6) int64, valid prefix length per row
    extrema: np.ndarray  # (n, 6) seventh-hour labels, NaN when absent
    is_fake: np.ndarray  # (n,) bool

    def __len__(self):
        return len(self.ids)

    @property
    def width(self):
        return self.t.shape[2]

    @classmethod
    def from_encounters(cls, encounters):
        n = len(encounters)
        width = max([1] + [len(s) for e in encounters for s in e.series])
        t = np.zeros((n, len(VARIABLES), width))
        x = np.zeros((n, len(VARIABLES), width))
        cnt = np.zeros((n, len(VARIABLES)), dtype=np.int64)
        extrema = np.full((n, len(VARIABLES)), np.nan)
        for b, enc in enumerate(encounters):
            for d, s in enumerate(enc.series):
                cnt[b, d] = len(s)
                t[b, d, :len(s)] = s.t
                x[b, d, :len(s)] = s.x
            extrema[b] = extrema_labels(enc)
        is_fake = np.array([bool(e.is_fake) for e in encounters], dtype=bool)
        return cls([e.id for e in encounters], t, x, cnt, extrema, is_fake)

    def take(self, idx):
        """Rows ``idx`` with the padding trimmed to the longest selected series."""
        idx = np.asarray(idx, dtype=np.int64)
        cnt = self.cnt[idx]
        width = max(1, int(cnt.max())) if cnt.size else 1
        return PaddedCohort([self.ids[i] for i in idx], self.t[idx, :, :width], self.x[idx, :, :width],
                            cnt, self.extrema[idx], self.is_fake[idx])

    @staticmethod
    def stack(a, b):
        width = max(a.width, b.width)

        def pad(arr):
            out = np.zeros(arr.shape[:2] + (width,))
            out[:, :, :arr.shape[2]] = arr
            return out

        return PaddedCohort(a.ids + b.ids, np.concatenate([pad(a.t), pad(b.t)]),
                            np.concatenate([pad(a.x), pad(b.x)]), np.concatenate([a.cnt, b.cnt]),
                            np.concatenate([a.extrema, b.extrema]), np.concatenate([a.is_fake, b.is_fake]))

    def valid_mask(self):
        return np.arange(self.width)[None, None, :] < self.cnt[:, :, None]
