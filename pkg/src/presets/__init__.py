"""
Run configuration presets
"""
