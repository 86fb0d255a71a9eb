"""Res2Net building blocks, analysis and training harness."""
