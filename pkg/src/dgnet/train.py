"""Training loops and losses for the DG surrogate.

The supervised loss compares a predicted coefficient vector with a DG label
through the mass/stiffness quadratic forms plus a linear-system residual; the
unsupervised loss needs no label at all: it penalizes the element-wise mass
error and the squared inter-element jumps.  Both are quadratic in the
prediction, so their gradients are computed analytically through the sparse
operators and handed to the network backward pass as images.
"""

import numpy as np

from . import dg, nn
from .mesh import DofLayout, build_mesh, image_to_vector, vector_to_image
from .nn import TrainingError
from .sparse import gauss_seidel, spmv, spmv_transpose


class SupervisedConfig:
    def __init__(self, beta=0.5, epochs=150, batch_size=None, lr0=1e-3, seed=0,
                 weight_decay=1e-7, clip_norm=1e-3):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.beta = float(beta)
        self.epochs = int(epochs)
        self.batch_size = batch_size          # None: min(32, dataset size)
        self.lr0 = float(lr0)
        self.seed = int(seed)
        self.weight_decay = float(weight_decay)
        self.clip_norm = clip_norm


class UnsupervisedConfig:
    def __init__(self, beta=0.5, sigma=1.0, eta=2.0, steps=5000, lr0=1e-3, seed=0,
                 weight_decay=1e-7, clip_norm=1e-3):
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        if eta < 0:
            raise ValueError("eta must be nonnegative")
        self.beta = float(beta)
        self.sigma = float(sigma)
        self.eta = float(eta)
        self.steps = int(steps)
        self.lr0 = float(lr0)
        self.seed = int(seed)
        self.weight_decay = float(weight_decay)
        self.clip_norm = clip_norm


_METRIC_FIELDS = ("l2_vs_exact", "h1_vs_exact", "l2_vs_dg", "h1_vs_dg")


class MetricsTable:
    """Per-sample error columns with recomputable aggregates."""

    def __init__(self, columns):
        self.columns = {k: np.asarray(v, dtype=np.float64) for k, v in columns.items()}
        sizes = {v.size for v in self.columns.values()}
        if len(sizes) > 1:
            raise ValueError("metric columns differ in length")

    @property
    def fields(self):
        return tuple(self.columns)

    @property
    def num_samples(self):
        return next(iter(self.columns.values())).size

    def aggregate(self, field):
        """(mean, std, median) of one column; std with ddof=0."""
        v = self.columns[field]
        return float(np.mean(v)), float(np.std(v)), float(np.median(v))


def supervised_loss_grad(alpha_hat, alpha, ops, beta, load=None):
    """Loss beta*d'(M+K)d + (1-beta)|A a_hat - load|^2 and its a_hat gradient."""
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha_hat.shape != alpha.shape:
        raise ValueError("prediction and label lengths differ")
    if load is None:
        load = ops.load
    d = alpha_hat - alpha
    mkd = spmv(ops.M_blk, d) + spmv(ops.K_blk, d)
    r = spmv(ops.A, alpha_hat) - load
    loss = beta * float(d @ mkd) + (1.0 - beta) * float(r @ r)
    g = 2.0 * beta * mkd + 2.0 * (1.0 - beta) * spmv_transpose(ops.A, r)
    return loss, g


def unsupervised_loss_grad(alpha_hat, ops, beta, eta):
    """Loss beta*|B a_hat - c|^2 + (1-beta)*eta*a_hat'J a_hat and gradient.

    Uses only source-derived data (B, c, J); no label appears.
    """
    alpha_hat = np.asarray(alpha_hat, dtype=np.float64)
    m = spmv(ops.B, alpha_hat) - ops.c
    ja = spmv(ops.J, alpha_hat)
    loss = beta * float(m @ m) + (1.0 - beta) * eta * float(alpha_hat @ ja)
    g = 2.0 * beta * spmv_transpose(ops.B, m) + 2.0 * (1.0 - beta) * eta * ja
    return loss, g


def _predict_batch(net, images):
    """Stack 2D images, run the network, return predicted coefficient vectors."""
    x = np.stack([img[None, :, :] for img in images])
    y, cache = nn.unet_forward(net, x)
    layout = DofLayout(images[0].shape[0] // 2)
    alphas = [image_to_vector(y[i, 0], layout) for i in range(len(images))]
    return alphas, cache, layout


def train_supervised(dataset, cfg, net_cfg):
    """Mini-batch training against DG labels; returns (net, per-epoch loss history)."""
    samples = dataset.samples
    if not samples:
        raise ValueError("dataset is empty")
    n = dataset.n
    if net_cfg.input_side != 2 * n:
        raise ValueError(f"network input side {net_cfg.input_side} != 2n = {2 * n}")
    mesh = build_mesh(n)
    ops = dg.assemble(mesh, dg.DgConfig(dataset.epsilon, dataset.sigma, n),
                      np.zeros(n * n))
    rng = np.random.default_rng(cfg.seed)
    net = nn.build_unet(net_cfg, rng)
    nsamp = len(samples)
    bs = min(32, nsamp) if cfg.batch_size is None else min(cfg.batch_size, nsamp)
    nbatch = (nsamp + bs - 1) // bs
    total_steps = cfg.epochs * nbatch
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(nsamp)
        epoch_losses = []
        for b in range(nbatch):
            idx = perm[b * bs:(b + 1) * bs]
            batch = [samples[i] for i in idx]
            alphas, cache, layout = _predict_batch(net, [s.pi_f_image for s in batch])
            g_imgs = []
            batch_loss = 0.0
            for s, ah in zip(batch, alphas):
                loss, g = supervised_loss_grad(ah, s.label, ops, cfg.beta, load=s.load)
                batch_loss += loss
                g_imgs.append(vector_to_image(g / len(batch), layout))
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b}")
            g_y = np.stack([gi[None, :, :] for gi in g_imgs])
            grads = nn.unet_backward(net, cache, g_y)
            lr = nn.cosine_lr(step, total_steps, cfg.lr0)
            nn.adam_step(net, grads, lr, weight_decay=cfg.weight_decay,
                         clip_norm=cfg.clip_norm)
            step += 1
            epoch_losses.append(batch_loss)
        history.append(float(np.mean(epoch_losses)))
    return net, history


def train_unsupervised(pi_f_image, ops, cfg, net_cfg):
    """Fit one source by loss descent alone; returns (best prediction, history).

    Keeps the prediction with the lowest loss seen at any step and returns
    that vector, not the final weights' output.
    """
    n = ops.mesh.n
    if net_cfg.input_side != 2 * n:
        raise ValueError(f"network input side {net_cfg.input_side} != 2n = {2 * n}")
    pi_f_image = np.asarray(pi_f_image, dtype=np.float64)
    if pi_f_image.shape != (2 * n, 2 * n):
        raise ValueError("input image side must be 2n")
    rng = np.random.default_rng(cfg.seed)
    net = nn.build_unet(net_cfg, rng)
    layout = DofLayout(n)
    x = pi_f_image[None, None, :, :]
    best_loss = np.inf
    best_alpha = None
    history = []
    for k in range(cfg.steps):
        y, cache = nn.unet_forward(net, x)
        alpha_hat = image_to_vector(y[0, 0], layout)
        loss, g = unsupervised_loss_grad(alpha_hat, ops, cfg.beta, cfg.eta)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {k}")
        if loss < best_loss:
            best_loss = loss
            best_alpha = alpha_hat
        history.append(loss)
        g_y = vector_to_image(g, layout)[None, None, :, :]
        grads = nn.unet_backward(net, cache, g_y)
        lr = nn.cosine_lr(k, cfg.steps, cfg.lr0)
        nn.adam_step(net, grads, lr, weight_decay=cfg.weight_decay,
                     clip_norm=cfg.clip_norm)
    return best_alpha, history


def predict(net, pi_f_image):
    """Single-input forward pass returning a coefficient vector."""
    img = np.asarray(pi_f_image, dtype=np.float64)
    y, _ = nn.unet_forward(net, img[None, None, :, :])
    return image_to_vector(y[0, 0], DofLayout(img.shape[0] // 2))


def evaluate(model_or_alphas, dataset, ops):
    """Per-sample errors of predictions against exact solutions and DG labels."""
    from . import symbolic
    samples = dataset.samples
    if isinstance(model_or_alphas, nn.UNet):
        alphas = [predict(model_or_alphas, s.pi_f_image) for s in samples]
    else:
        alphas = list(model_or_alphas)
        if len(alphas) != len(samples):
            raise ValueError("one prediction per sample required")
    cols = {k: [] for k in _METRIC_FIELDS}
    for s, ah in zip(samples, alphas):
        cand = dg.DgFunction(ah, ops.mesh)
        u = symbolic.parse_expr(s.expr_text)
        cols["l2_vs_exact"].append(dg.error_norm(u, cand, "L2"))
        cols["h1_vs_exact"].append(dg.error_norm(u, cand, "brokenH1"))
        cols["l2_vs_dg"].append(dg.error_norm(s.label, cand, "L2"))
        cols["h1_vs_dg"].append(dg.error_norm(s.label, cand, "brokenH1"))
    return MetricsTable(cols)


def interpolate_coarse_guess(coarse_image, fine_n):
    """Bilinear resize of a coarse prediction image onto the fine DOF layout."""
    img = np.asarray(coarse_image, dtype=np.float64)
    fine = nn.bilinear_resize(img[None, None, :, :], 2 * fine_n, 2 * fine_n)[0, 0]
    return image_to_vector(fine, DofLayout(fine_n))


def warmstart_benchmark(ops, guesses, b=None, tol=1e-6, max_iter=30000):
    """Gauss-Seidel from each initial guess; returns {name: SolveReport}.

    guesses maps names to coefficient vectors; None means the zero vector.
    """
    if b is None:
        b = ops.load
    out = {}
    for name, x0 in guesses.items():
        out[name] = gauss_seidel(ops.A, b, x0=x0, tol=tol, max_iter=max_iter)
    return out
