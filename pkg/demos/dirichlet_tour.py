"""A short tour of the Dirichlet machinery behind the relaxed codebook.

Run with ``python demos/dirichlet_tour.py``; it prints three small tables:

1. the closed-form KL divergence next to a Monte-Carlo estimate,
2. how the symmetric concentration controls how peaked the weights are,
3. pathwise (implicit) gradients of E[w] next to the analytic derivative.
"""

import numpy as np

from dirlatent import dirichlet
from dirlatent.codebook import Codebook, decode_convex
from dirlatent.tensor import Tape, Tensor


def kl_table(rng):
    print("KL(Dir(q) || Dir(p)): closed form vs Monte Carlo (2e5 draws)")
    for n in (2, 3, 8):
        q, p = rng.uniform(0.3, 5, n), rng.uniform(0.3, 5, n)
        w = rng.dirichlet(q, size=200_000)
        mc = np.mean(dirichlet.log_pdf(w, q) - dirichlet.log_pdf(w, p))
        print(f"  N={n}:  closed {dirichlet.kl_divergence(q, p):9.5f}   MC {mc:9.5f}")


def concentration_table(rng):
    print("\nE[max_k w_k] under Dir(a * 1), N=16 (smaller a -> sparser weights)")
    for a in (0.01, 0.1, 1.0, 10.0, 100.0):
        w = dirichlet.sample(np.full((20_000, 16), a), rng).data
        print(f"  a={a:<6g} E[max w] = {w.max(-1).mean():.3f}")


def gradient_table(rng):
    print("\nd E[w_0] / d alpha: implicit reparameterization vs analytic")
    alpha0 = np.array([0.5, 2.0, 4.0])
    n = 100_000
    alpha = Tensor(np.tile(alpha0, (n, 1)), requires_grad=True)
    with Tape() as tape:
        w = dirichlet.sample(alpha, rng)
        target = w.sum(axis=0) * Tensor(np.array([1.0, 0.0, 0.0])) / n
        total = target.sum()
    pathwise = tape.backward(total)[alpha].sum(axis=0)
    s = alpha0.sum()
    analytic = (np.array([s, 0, 0]) - alpha0[0]) / s ** 2
    for k in range(3):
        print(f"  alpha_{k}: pathwise {pathwise[k]: .5f}   analytic {analytic[k]: .5f}")


def latent_demo(rng):
    print("\nA latent is a convex mix of code items; it stays in their hull")
    items = rng.normal(size=(4, 2))
    w = dirichlet.sample(np.full((5, 4), 0.5), rng)
    z = decode_convex(w, Codebook(items)).data
    for wi, zi in zip(w.data, z):
        print(f"  w={np.round(wi, 3)}  ->  z={np.round(zi, 3)}")


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    kl_table(rng)
    concentration_table(rng)
    gradient_table(rng)
    latent_demo(rng)
