"""Dense networks, hand-written backprop and a finite-difference check."""

# %%
import numpy as np

from cnts.numerics import (
    OptimizerState,
    backward,
    cross_entropy,
    forward,
    grad_check,
    init_params,
    optimizer_step,
    softmax,
)

# %% A small tanh network: 8 inputs, one hidden layer of 16, 8 outputs.
params = init_params([8, 16, 8], ["tanh", "identity"], seed=1)
print("dims:", params.dims, "parameters:", params.n_params)
print("largest |weight|:", max(np.abs(l.weight).max() for l in params.layers))
print("init bound sqrt(6/24):", np.sqrt(6 / 24))

# %% Forward pass on a batch of three inputs keeps every intermediate.
x = np.random.default_rng(0).normal(size=(3, 8))
trace = forward(params, x)
print("pre-activation shapes:", [z.shape for z in trace.pre])
print("output:\n", trace.output.round(3))


# %% Half squared error against a random target, and its gradient wrt the output.
target = np.random.default_rng(1).normal(size=(3, 8))


def half_sq(out):
    d = out - target
    return 0.5 * float((d * d).sum()), d


# grad_check compares backward() to central differences on every parameter
print("max relative deviation:", grad_check(params, x, half_sq, eps=1e-4))

# %% Softmax subtracts the max first, so huge logits are harmless.
print(softmax([1000.0, 1001.0]))
print("H(p, logits) for p uniform, logits 0:", cross_entropy([0.5, 0.5], [0.0, 0.0]), "vs ln 2 =", np.log(2))

# %% A few Adam steps on the squared error.
state = OptimizerState.fresh(params, lr=1e-2)
for step in range(201):
    trace = forward(params, x)
    loss, g_out = half_sq(trace.output)
    params, state = optimizer_step(params, backward(params, trace, g_out), state)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss:.5f}")
