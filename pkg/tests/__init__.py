"""
Tests for the nonlocal smoothness lab.

This package contains unit tests for:
- The numerical library (geometry, pencil, consistency, classifier, solver)
- Spec and experiment loading
- The CLI, report files and the LAB_* configuration layer
"""
