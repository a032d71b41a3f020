# -*- coding: utf-8 -*-
"""Dynamic axial graph construction and the greedy ViG model family."""

__version__ = "0.1.0"
