"""Seconds-scale pipeline configuration shared by several tests."""

SMALL = """\
# tiny end-to-end run
[dataset]
preset = desk
n_train = 12
n_test_baseline = 4
n_test_damaged = 4

[representation]
size = 16
n_scales = 16

[methods]
nu_grid = 0.1, 0.5

[cae]
filters = 4, 8
epochs = 2
batch = 4

[run]
seed = 5
"""
