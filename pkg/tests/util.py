"""Shared helpers for the test modules."""

from fdls.geometry import Disc, MediumConfig


def scaled(cfg, eps):
    """Same geometry with every contrast n - 1 multiplied by eps."""
    def s(d):
        nb = None if d.n_in_background is None else 1 + eps * (d.n_in_background - 1)
        return Disc(d.center, d.radius, 1 + eps * (d.n - 1), nb)
    return MediumConfig(tuple(s(d) for d in cfg.background), tuple(s(d) for d in cfg.defect))
