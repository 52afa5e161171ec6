"""Tests for metapop."""
