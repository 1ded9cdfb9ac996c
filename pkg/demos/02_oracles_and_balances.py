# ---
# jupyter:
#   jupytext:
#     formats: py:percent
# ---

# %% [markdown]
# # Checking the linear stepper against oracles
#
# Two independent checks back the linear solver. On a small grid the discrete
# generator fits in memory, so its matrix exponential is an exact reference.
# On the production grid, the sampled quadratic quantities must satisfy their
# energy balances: the time derivative of each quantity equals its
# dissipation and transport terms.

# %%
import numpy as np

from poiseuille_lab.hypocoercivity import balance_residuals
from poiseuille_lab.linear import LinearModeSystem, dense_propagator_oracle, evolve_linear, random_initial_data
from poiseuille_lab.spectral import Grid

# %% [markdown]
# ## Dense matrix exponential
#
# Crank-Nicolson is second order in time, so halving the step should cut the
# error by about four.

# %%
small = Grid(n_x=4, L=6.0, n_y=64, fd_order=8)
sys = LinearModeSystem(1, 0.01, small)
a0 = random_initial_data(small, 1, seed=0)
ref = dense_propagator_oracle(sys, 1.0) @ a0.values
for dt in (4e-3, 2e-3, 1e-3):
    got = evolve_linear(sys, a0, 1.0, dt, sample_every=10**9).final.values
    print(f"dt={dt:g}: relative error {np.linalg.norm(got - ref) / np.linalg.norm(ref):.3e}")

# %% [markdown]
# ## Energy balances
#
# Every step is sampled, and the balances are checked by centered differences
# in time. The residual is reported relative to the sum of the magnitudes of
# the terms.

# %%
grid = Grid(n_x=4, L=10.0, n_y=512, fd_order=8)
sys = LinearModeSystem(1, 1e-3, grid)
traj = evolve_linear(sys, random_initial_data(grid, 1, seed=0), 20.0, sys.dt_max / 2, sample_every=1)
for name, worst in balance_residuals(traj, 1e-3).worst().items():
    print(f"{name:<9} worst residual {worst:.2e}")
