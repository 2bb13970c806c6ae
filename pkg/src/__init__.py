# src/__init__.py
"""
Marks 'src' as the package root of the downlink allocation toolkit so the
runner and the tests can import modules such as 'strategies' and 'channels'.
"""
