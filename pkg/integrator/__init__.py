"""Batch sampling and implicit time stepping"""
