"""
Checking the Q-network gradients
================================

The network, its squared TD loss and the backward pass are written with
numpy alone, so the analytic gradients are compared against central
finite differences.
"""

import numpy as np

from highway_dqn import nn

spec = nn.NetworkSpec(input_dim=25, hidden=(16, 16), output_dim=5)
params = nn.init_params(spec, seed=0)
rng = np.random.default_rng(0)
states = rng.uniform(-1, 1, (8, 25))
actions = rng.integers(0, 5, 8)
targets = rng.normal(size=8)

loss, grads = nn.loss_and_gradients(params, states, actions, targets)
print(f"loss {loss:.6f}, gradient norm {grads.global_norm():.6f}")

# perturb a handful of weights and compare slopes
h = 1e-5
w = params.weights[0]
for idx in [(0, 0), (3, 7), (15, 24)]:
    old = w[idx]
    w[idx] = old + h
    up, _ = nn.loss_and_gradients(params, states, actions, targets)
    w[idx] = old - h
    down, _ = nn.loss_and_gradients(params, states, actions, targets)
    w[idx] = old
    print(f"W0{idx}: analytic {grads.weights[0][idx]: .8f}  numeric {(up - down) / (2 * h): .8f}")

# weights survive a trip through the binary format unchanged
blob = nn.serialize_params(params)
print(f"{len(blob)} bytes; round trip exact: {nn.deserialize_params(blob).equals(params)}")
