# -*- coding: utf-8 -*-
"""metapop module."""

__version__ = "0.1.0"
