# ==========================
# parameters.py
# ==========================
# Default values for the linear-MPC reinforcement learning example.
# Every dictionary here is plain data; ExperimentConfig reads from them.

# ==========================
# Learning Parameters
# ==========================
learning_parameters = {
    "gamma": 0.99,                 # Discount factor
    "sigma": 1e-3,                 # Exploration scale (covariance sigma * Sigma)
    "Sigma": [[1.0, 0.0],          # Exploration shape matrix
              [0.0, 1.0]],
    "tau": 1e-2,                   # Interior-point relaxation of the policy NLP
    "beta_deg": 22.0,              # Real system angle (degrees)
    "beta_hat_deg": 20.0,          # Initial model angle (degrees)
    "N_t": 20,                     # Time steps per rollout
    "S": 30,                       # Rollouts per RL step
    "N": 10,                       # MPC horizon
    "N_M": 4,                      # Disturbance scenarios (polytope vertices)
}

# ==========================
# Case Parameters
# ==========================
case_parameters = {
    1: {"kappa": 0.95, "alpha": 0.05},   # Stable real system
    2: {"kappa": 1.05, "alpha": 0.01},   # Unstable real system
}

# ==========================
# Plant Parameters
# ==========================
plant_parameters = {
    "B_real": [[1.1, 0.0],
               [0.0, 0.9]],
    "noise_variance": 1.0 / 3.0 * 1e-2,  # Per-axis variance of the process noise
    "clip_radius": 0.5e-2,               # Noise is rescaled onto this ball when larger
    "s0_angle_deg": 60.0,                # Deterministic initial state on the unit circle
    "x_ref_radius": 0.95,                # Default target radius (not from the experiment description)
    "x_ref_angle_deg": 45.0,
    "state_weight": 1.0 / 20.0,          # Stage cost weight on ||s - x_ref||^2
    "input_weight": 0.5,                 # Stage cost weight on ||a - u_ref||^2
}

# ==========================
# Initial Model Parameters
# ==========================
model_parameters = {
    "W_vertices": [[-0.1, -0.1],
                   [0.1, -0.1],
                   [0.1, 0.1],
                   [-0.1, 0.1]],
    "lqr_state_weight": 1.0 / 20.0,
    "lqr_input_weight": 1.0,
}

# ==========================
# Solver Parameters
# ==========================
solver_parameters = {
    "residual_tolerance": 1e-10,
    "max_newton_iterations": 200,
    "fraction_to_boundary": 0.995,
    "regularization_floor": 1e-10,
    "pinv_floor": 1e-8,              # Relative singular-value floor for M in pseudo_inverse mode
    "critic_floor": 1e-6,            # Relative singular-value saturation for LSTD
    "membership_tolerance": 1e-8,
    "update_tau": 1e-6,              # Relaxation of the safe-update NLP
    "max_step_norm": 0.02,           # Trust region on ||alpha g|| per update
    "update_backtracks": 4,          # Halvings of alpha before falling back to the projection
}

# ==========================
# Run Parameters
# ==========================
run_parameters = {
    "rl_steps": 100,
    "seed": 0,
    "dataset_window": 600,
    "m_mode": "plain_inverse",
    "update_mode": "safe_constrained",
    "use_corrections": True,
    "workers": 1,
    "mc_samples": 100000,         # Monte-Carlo draws for the exploration estimator checks
    "report": True,
}
