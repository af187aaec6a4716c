"""Kalman filtering cross-checked against two independent oracles.

Simulates a random stable linear-Gaussian model, runs the recursive filter,
and compares the posterior at a few times against the batch joint-Gaussian
conditioning oracle (which never recurses).  Then iterates the Riccati map
to its fixed point and checks the filter covariance converges to it.
"""

import numpy as np

from ibsep import lgss

rng = np.random.default_rng(7)
model = lgss.random_stable_model(rng, n=3, m=2)
traj = lgss.simulate(model, controls=None, T=40, rng=rng)
print(f"simulated T={traj.T}, state dim {model.n}, obs dim {model.m}")

posteriors, predictives, loglik = lgss.run_filter(model, traj)
print(f"total predictive log-likelihood: {loglik:.4f}")
for t in (5, 20, 40):
    oracle = lgss.batch_posterior_oracle(model, traj, t)
    st = posteriors[t - 1]
    dev = max(np.max(np.abs(st.mean - oracle.mean)),
              np.max(np.abs(st.cov - oracle.cov)))
    print(f"  t={t:2d}: recursive vs batch-conditioning posterior, "
          f"max dev {dev:.3e}")

print("\nRiccati fixed point vs long-run filter covariance")
P_star = lgss.riccati_iterate(model, np.eye(model.n), 5000)
long_post, _, _ = lgss.run_filter(model, lgss.simulate(model, None, 1000, rng))
print(f"  ||P_filter(1000) - P*||_max = "
      f"{np.max(np.abs(long_post[-1].cov - P_star)):.3e}")
print(f"  steady posterior variance diag: {np.round(np.diag(P_star), 6)}")

print("\ntrajectory CSV round trip")
lgss.trajectory_to_csv(traj, "/tmp/demo_traj.csv")
back = lgss.trajectory_from_csv("/tmp/demo_traj.csv")
print(f"  y round trips exactly: {np.array_equal(back.y, traj.y)}")
