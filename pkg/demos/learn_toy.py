"""Two ways to fit the parameters of a latent-variable model.

The first maximizes a Monte Carlo lower bound of the marginal likelihood
whose noise is reparameterized out of the model, so the gradient is exact
at fixed noise.  The second is Monte Carlo EM: HMC draws posterior
samples for the E-step and the M-step follows the complete-data gradient.
Both are scored against the marginal likelihood of the parameters that
generated the data.
"""

import numpy as np

from ncbayes.datasets import synthetic_dataset
from ncbayes.experiments import two_layer_model
from ncbayes.graph import random_params
from ncbayes.hmc import HmcConfig
from ncbayes.learning import (
    MmclConfig,
    TrainConfig,
    marginal_log_likelihood,
    train,
)
from ncbayes.reparam import apply_plan, full_dncp_plan

rng = np.random.default_rng(42)
generator = two_layer_model((2, 3), obs_dim=5)
theta_true = random_params(generator, rng)
handle = synthetic_dataset(generator, theta_true, 400, rng)
x_train, x_test = handle.data["x"][:300], handle.data["x"][300:]
train_data, test_data = {"x": x_train}, {"x": x_test}

model = two_layer_model((2, 3), obs_dim=5)
noncentered = apply_plan(model, full_dncp_plan(model))
truth = marginal_log_likelihood(noncentered, theta_true, train_data,
                                L=500, seed=99)
print(f"train log-likelihood at the generating parameters: {truth:.4f}")
print()

mmcl = TrainConfig(iterations=3, learning_rate=0.25,
                   mmcl=MmclConfig(L=10, seed=0), l_eval=500, eval_every=1,
                   eval_seed=99)
mmcl_trace = train("mmcl", model, train_data, test_data, mmcl)
print("bound maximization, 3 epochs of Adagrad:")
for row in mmcl_trace:
    print(f"  epoch {row.iteration:3d}  train {row.train_log_lik:8.4f}"
          f"  test {row.test_log_lik:8.4f}")
print()

mcem = TrainConfig(iterations=150, learning_rate=0.25,
                   mmcl=MmclConfig(L=10, seed=0),
                   hmc=HmcConfig(step_size=0.3, leapfrog_steps=10, seed=0),
                   e_step_samples=5, thin=2, l_eval=500, eval_every=50,
                   eval_seed=99)
mcem_trace = train("mcem", model, train_data, test_data, mcem)
print("Monte Carlo EM, 150 iterations:")
for row in mcem_trace:
    print(f"  iter  {row.iteration:3d}  train {row.train_log_lik:8.4f}"
          f"  test {row.test_log_lik:8.4f}")
print()
print(f"gap to truth, bound maximization: "
      f"{truth - mmcl_trace[-1].train_log_lik:+.4f}")
print(f"gap to truth, Monte Carlo EM:     "
      f"{truth - mcem_trace[-1].train_log_lik:+.4f}")
