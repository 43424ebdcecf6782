# %% [markdown]
# # Two agents: cooperative optimum and Nash equilibrium
#
# Two scalar agents share the aggregate `nu = (x1 + x2) / 2`. Their losses are
# `f1 = x1^2 + 4 nu^2` and `f2 = (x2 - 2)^2 + 4 nu^2`. Minimizing the sum gives the
# cooperative optimum; letting each agent minimize only its own loss gives a
# different point. The distributed tracker goes to the cooperative one.

# %%
import numpy as np

from aggregative_oco.engine import RunConfig, run
from aggregative_oco.harness import best_response_dynamics, nash_gap
from aggregative_oco.metrics import solve_instantaneous_optimum
from aggregative_oco.network import StaticSchedule, metropolis_weights
from aggregative_oco.problem import global_loss, make_example1

spec = make_example1(horizon=10_000)

# %% [markdown]
# The cooperative optimum solves a 2x2 linear system.

# %%
opt = solve_instantaneous_optimum(spec, 0)
print("cooperative optimum", opt.x, "value", opt.value)
print("linear solve       ", np.linalg.solve([[6, 4], [4, 6]], [0, 4]))

# %% [markdown]
# Damped best responses converge to the Nash point, which is not the optimum.

# %%
nash = best_response_dynamics(spec)
print("Nash point", nash.x, "after", nash.iterations, "iterations")
print("Nash gap at Nash point   ", nash_gap(spec, nash.x))
print("Nash gap at optimum      ", nash_gap(spec, opt.x))
print("total loss at Nash point ", global_loss(spec, 0, nash.x))

# %% [markdown]
# Run the tracker on the two-node graph and watch the running-average gap.

# %%
graph = StaticSchedule(metropolis_weights([(0, 1)], 2))
trace = run(spec, graph, RunConfig(horizon=10_000))
running = np.cumsum(trace.x[1:], axis=0) / np.arange(1, 10_001)[:, None]
for T in (10, 100, 1000, 10_000):
    gap = global_loss(spec, 0, running[T - 1]) - opt.value
    print(f"T={T:>6}  xbar={running[T - 1].round(4)}  gap={gap:.3e}")
