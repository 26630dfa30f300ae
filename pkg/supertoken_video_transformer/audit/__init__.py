from .flops import Comparison, FlopReport, FlopRow, audit, compare

__all__ = ['Comparison', 'FlopReport', 'FlopRow', 'audit', 'compare']
