"""Invariant and diagnostic checks"""
