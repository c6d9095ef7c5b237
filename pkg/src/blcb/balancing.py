"""Two-level class balancing of dense patch sets.

Level I equalizes vessel and non-vessel patches, drawing the non-vessel half
from partial-background (patch mean >= v) and full-background (< v) patches
in a ``rho : 1 - rho`` split.  Level II first subsamples thick-vessel patches
relative to the thin-vessel count, then selects background as in Level I.

Random draws use :class:`Sampler`: numpy's PCG64 bit generator (seeded via
``SeedSequence``) feeding a rejection-sampled bounded integer and a partial
Fisher-Yates shuffle.  Only raw 64-bit PCG64 outputs are consumed, so the
draws do not depend on numpy's higher-level sampling routines.
"""
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BalanceError, ConfigError, PreconditionError
from .patching import NONVESSEL, STRATUM, VESSEL, PatchSet

log = logging.getLogger(__name__)

SAMPLER_ALGORITHM = "pcg64-seedsequence/rejection-modulo/partial-fisher-yates v1"
THICK_RULES = ("thin", "literal")


@dataclass
class BalanceConfig:
    """``v``: patch-mean threshold; ``rho``: partial share of background;
    ``r``: thick-to-thin ratio; ``max_patches``: optional per-image output cap."""

    v: float = 0.05
    rho: float = 0.9
    r: float = 1.0
    seed: int = 0
    thick_rule: str = "thin"
    max_patches: int = 0

    def validate(self):
        if not 0 < self.rho <= 1:
            raise ConfigError("balance.rho must be in (0, 1]")
        if not 0 <= self.v <= 1:
            raise ConfigError("balance.v must be in [0, 1]")
        if not self.r > 0:
            raise ConfigError("balance.r must be > 0")
        if self.thick_rule not in THICK_RULES:
            raise ConfigError(f"balance.thick_rule must be one of {THICK_RULES}")
        if self.max_patches < 0:
            raise ConfigError("balance.max_patches must be >= 0")
        return self

    def to_dict(self):
        return asdict(self)


def round_half_up(x):
    return int(math.floor(x + 0.5))


class Sampler:
    """Deterministic uniform sampling on top of raw PCG64 output."""

    def __init__(self, seed):
        self.bitgen = np.random.PCG64(np.random.SeedSequence(seed))
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def _raw(self):
        if self._pos >= len(self._buf):
            self._buf = self.bitgen.random_raw(1024)
            self._pos = 0
        v = int(self._buf[self._pos])
        self._pos += 1
        return v

    def below(self, n):
        """Uniform integer in ``[0, n)``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self._raw()
            if v < limit:
                return v % n

    def sample(self, n, k):
        """``k`` distinct indices from ``range(n)``, in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        swapped = {}
        out = np.empty(k, dtype=np.int64)
        for i in range(k):
            j = i + self.below(n - i)
            out[i] = swapped.get(j, j)
            swapped[j] = swapped.get(i, i)
        return out

    def permutation(self, n):
        return self.sample(n, n)


@dataclass
class StratifiedPatches:
    alpha: PatchSet
    beta: PatchSet
    gamma_full: PatchSet
    c_alpha: PatchSet
    n_alpha: PatchSet
    warnings: list = field(default_factory=list)

    def counts(self):
        return {"vessel": len(self.alpha), "partial_bg": len(self.beta),
                "full_bg": len(self.gamma_full), "thin_vessel": len(self.c_alpha),
                "thick_vessel": len(self.n_alpha)}


def _focal(mask, patches):
    mask = np.asarray(mask, dtype=bool)
    return mask[patches.rows, patches.cols]


def _check_single_image(patches, *masks):
    if len(np.unique(patches.image)) > 1:
        raise PreconditionError("classification works on one image's patches at a time")
    if len(patches):
        h, w = masks[0].shape
        if patches.rows.max() >= h or patches.cols.max() >= w:
            raise PreconditionError("mask smaller than the patch grid")


def _background(patches, nonvessel, v):
    partial = nonvessel & (patches.means >= v)
    full = nonvessel & ~(patches.means >= v)
    return (patches.subset(np.nonzero(partial)[0]).with_strata(STRATUM["partial_bg"]),
            patches.subset(np.nonzero(full)[0]).with_strata(STRATUM["full_bg"]))


def _labelled(ps, label):
    ps.labels[:] = label
    return ps


def classify_level1(patches, gt, v):
    """Split into vessel (alpha), partial background (beta), full background (gamma)."""
    gt = np.asarray(gt, dtype=bool)
    _check_single_image(patches, gt)
    vessel = _focal(gt, patches)
    alpha = _labelled(patches.subset(np.nonzero(vessel)[0]).with_strata(STRATUM["vessel"]),
                      VESSEL)
    beta, gamma_full = _background(patches, ~vessel, v)
    empty = patches.subset([])
    return StratifiedPatches(alpha, _labelled(beta, NONVESSEL),
                             _labelled(gamma_full, NONVESSEL), empty, empty)


def classify_level2(patches, gt, thin, thick, v):
    """Thin-vessel (c_alpha), thick-vessel (n_alpha) and the two background strata."""
    gt, thin, thick = (np.asarray(m, dtype=bool) for m in (gt, thin, thick))
    if np.any(thin & thick):
        raise PreconditionError("thin and thick vessel masks overlap")
    _check_single_image(patches, gt, thin, thick)
    in_thin = _focal(thin, patches)
    in_thick = _focal(thick, patches) & ~in_thin
    vessel = _focal(gt, patches) | in_thin | in_thick
    c_alpha = _labelled(patches.subset(np.nonzero(in_thin)[0])
                        .with_strata(STRATUM["thin_vessel"]), VESSEL)
    n_alpha = _labelled(patches.subset(np.nonzero(in_thick)[0])
                        .with_strata(STRATUM["thick_vessel"]), VESSEL)
    orphan = vessel & ~in_thin & ~in_thick
    if np.any(orphan):
        raise PreconditionError(
            f"{int(orphan.sum())} vessel pixel(s) are in neither the thin nor the thick mask")
    beta, gamma_full = _background(patches, ~vessel, v)
    return StratifiedPatches(PatchSet.concat([c_alpha, n_alpha]), _labelled(beta, NONVESSEL),
                             _labelled(gamma_full, NONVESSEL), c_alpha, n_alpha)


def _draw(sampler, ps, k, name, warnings):
    if k > len(ps):
        msg = f"{name}: wanted {k} patches, only {len(ps)} available"
        warnings.append(msg)
        log.warning(msg)
        k = len(ps)
    return ps.subset(sampler.sample(len(ps), k))


def _cap_vessels(sampler, alpha, cfg):
    if cfg.max_patches and len(alpha) > cfg.max_patches // 2:
        return alpha.subset(np.sort(sampler.sample(len(alpha), cfg.max_patches // 2)))
    return alpha


def _select_background(sampler, alpha, s, cfg, warnings):
    y = round_half_up(cfg.rho * len(alpha))
    z = len(alpha) - y
    pb = _draw(sampler, s.beta, y, "partial_bg", warnings)
    fb = _draw(sampler, s.gamma_full, z, "full_bg", warnings)
    out = PatchSet.concat([alpha, pb, fb])
    return out.subset(sampler.permutation(len(out)))


def balance_level1(s, cfg, warnings=None):
    """Vessel patches plus an equal number of background patches, shuffled."""
    cfg.validate()
    if len(s.alpha) == 0:
        raise BalanceError("no vessel patches")
    warnings = s.warnings if warnings is None else warnings
    sampler = Sampler(cfg.seed)
    alpha = _cap_vessels(sampler, s.alpha, cfg)
    return _select_background(sampler, alpha, s, cfg, warnings)


def thick_target(s, cfg):
    if cfg.thick_rule == "literal":
        return round_half_up(cfg.rho * len(s.n_alpha))
    return round_half_up(cfg.r * len(s.c_alpha))


def balance_level2(s, cfg, warnings=None):
    """Thin patches, ``r`` times as many thick patches, then Level-I background."""
    cfg.validate()
    if len(s.c_alpha) == 0:
        raise BalanceError("no thin-vessel patches")
    warnings = s.warnings if warnings is None else warnings
    sampler = Sampler(cfg.seed)
    tp = _draw(sampler, s.n_alpha, thick_target(s, cfg), "thick_vessel", warnings)
    alpha = _cap_vessels(sampler, PatchSet.concat([s.c_alpha, tp]), cfg)
    return _select_background(sampler, alpha, s, cfg, warnings)


def balance_none(patches, gt, cfg):
    """Ablation baseline: every patch (optionally capped), stratum-tagged as Level I."""
    s = classify_level1(patches, gt, cfg.v)
    everything = PatchSet.concat([s.alpha, s.beta, s.gamma_full])
    sampler = Sampler(cfg.seed)
    if cfg.max_patches and len(everything) > cfg.max_patches:
        return everything.subset(sampler.sample(len(everything), cfg.max_patches))
    return everything.subset(sampler.permutation(len(everything)))


def stratum_counts(ps):
    codes, counts = np.unique(ps.strata, return_counts=True)
    from .patching import STRATA
    out = {name: 0 for name in STRATA[1:]}
    out.update({STRATA[c]: int(n) for c, n in zip(codes, counts)})
    out["vessel_total"] = int(np.sum(ps.labels == VESSEL))
    out["nonvessel_total"] = int(np.sum(ps.labels == NONVESSEL))
    return out
