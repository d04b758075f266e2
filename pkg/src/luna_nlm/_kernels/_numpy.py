"""NumPy reference implementation of the MLP kernels.

Both backends implement the same two functions:

``mlp_forward(weights, biases, act_id, x)``
    returns ``(activations, preactivations)`` where ``activations[0]`` is the
    input batch and ``activations[-1]`` the feature matrix; the activation is
    applied after every layer.

``mlp_backward(weights, act_id, activations, preactivations, cotangent)``
    returns ``(weight_grads, bias_grads, input_grad)`` for a scalar loss whose
    gradient w.r.t. the features is ``cotangent``.
"""

import numpy as np

ACT_RELU = 0
ACT_TANH = 1


def mlp_forward(weights, biases, act_id, x):
    a = x
    acts = [x]
    pres = []
    for w, b in zip(weights, biases):
        z = a @ w.T + b
        a = np.maximum(z, 0.0) if act_id == ACT_RELU else np.tanh(z)
        pres.append(z)
        acts.append(a)
    return acts, pres


def mlp_backward(weights, act_id, acts, pres, cotangent):
    g = cotangent
    wgrads = [None] * len(weights)
    bgrads = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        if act_id == ACT_RELU:
            dz = g * (pres[layer] > 0.0)
        else:
            dz = g * (1.0 - acts[layer + 1] ** 2)
        wgrads[layer] = dz.T @ acts[layer]
        bgrads[layer] = dz.sum(axis=0)
        g = dz @ weights[layer]
    return wgrads, bgrads, g
