import numpy as np

from saferl.nlp_core import SolverConfig, solve
from saferl.policy import ExplorationConfig, random_stream, range_diagnostic, sample_exploration
from saferl.reference_problems import disc_problem
from saferl.sensitivities import full_sensitivities

# Projection onto the unit disc: min 1/2 ||y - (1.2, 0)||^2 + d^T y  s.t. ||y||^2 <= 1
disc = disc_problem()
theta = np.array([1.2, 0.0, 1.0])
params = disc.params(theta)
point = solve(disc, params, SolverConfig(tau=1e-2))
bundle = full_sensitivities(disc, point, params)

print("deterministic action:", point.y)
print("dg/dd:\n", bundle.dg_dd)
print("d2g/dd2[0]:\n", bundle.d2g_dd2[0])

config = ExplorationConfig(sigma=1e-3, tau=1e-2)
sample = sample_exploration(disc, theta, None, config, 2000, random_stream(0))
print("sampled mean e:", sample.mean, " predicted c:", sample.stats.c)
print("sampled cov e:\n", sample.cov)
print("predicted sigma M^-1:\n", config.sigma * np.linalg.inv(sample.stats.M))

# Pushed against the boundary, the radius theta3 is the only parameter the
# exploration cannot excite.
active = disc.params(np.array([2.0, 0.0, 1.0]))
tight = SolverConfig(tau=1e-6)
diag = range_diagnostic(
    full_sensitivities(disc, solve(disc, active, tight), active),
    ExplorationConfig(tau=1e-6, m_mode="pseudo_inverse"),
)
print("range residual per parameter:", diag.residuals)
