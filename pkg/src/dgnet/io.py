"""File formats and dataset generation.

Two binary containers, both little-endian and byte-identical under a
read/write round trip:

* DGDS dataset files: a fixed header (magic, version, grid size, sample
  count, epsilon, sigma, flags) followed by per-sample records holding the
  expression text of u, the source coefficient image, the load vector, and
  the solved label.
* DGCN checkpoints: network configuration, every parameter tensor with its
  shape, and optionally the Adam state.

Reports are comma-separated text with '.' decimals; run configuration can
also come from plain `key = value` files.
"""

import csv
import struct
from typing import NamedTuple

import numpy as np

from . import dg, nn, symbolic
from .mesh import DofLayout, build_mesh, vector_to_image
from .train import MetricsTable, _METRIC_FIELDS

_DGDS_MAGIC = b"DGDS"
_DGCN_MAGIC = b"DGCN"
_DGDS_VERSION = 1
_DGCN_VERSION = 1
_DGDS_HEADER = struct.Struct("<4sIIIbdB")


class FormatError(Exception):
    """Malformed binary file; offset is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(Exception):
    pass


class Sample(NamedTuple):
    expr_text: str
    pi_f_image: np.ndarray
    load: np.ndarray
    label: np.ndarray


class Dataset:
    def __init__(self, n, epsilon, sigma, samples, flags=0):
        self.n = int(n)
        self.epsilon = int(epsilon)
        self.sigma = float(sigma)
        self.samples = list(samples)
        self.flags = int(flags)

    def __len__(self):
        return len(self.samples)


def generate_dataset(n, count, bank_name, epsilon, sigma, seed):
    """Draw count random solutions from a symbol bank and solve for labels.

    One operator assembly serves every sample; only the load changes.
    Deterministic for a fixed seed.
    """
    mesh = build_mesh(n)
    ops = dg.assemble(mesh, dg.DgConfig(epsilon, sigma, n), np.zeros(n * n))
    bank = symbolic.symbol_bank(bank_name)
    rng = np.random.default_rng(seed)
    layout = DofLayout(n)
    samples = []
    for _ in range(count):
        u = symbolic.random_solution(rng, bank)
        f = symbolic.negate(symbolic.laplacian(u))
        load, proj = dg.source_terms(mesh, f)
        label = dg.solve_dg(ops, load=load).coeffs
        samples.append(Sample(symbolic.to_text(u),
                              vector_to_image(proj, layout), load, label))
    return Dataset(n, epsilon, sigma, samples)


class _Reader:
    """Byte cursor that reports the offset of any short read."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, nbytes, what):
        if self.pos + nbytes > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def array(self, count, what):
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def write_dataset(path, dataset):
    nd = 4 * dataset.n * dataset.n
    side = 2 * dataset.n
    with open(path, "wb") as fh:
        fh.write(_DGDS_HEADER.pack(_DGDS_MAGIC, _DGDS_VERSION, dataset.n,
                                   len(dataset.samples), dataset.epsilon,
                                   dataset.sigma, dataset.flags))
        for s in dataset.samples:
            text = s.expr_text.encode("utf-8")
            fh.write(struct.pack("<I", len(text)))
            fh.write(text)
            img = np.ascontiguousarray(s.pi_f_image, dtype=np.float64)
            if img.shape != (side, side):
                raise ValueError("sample image side does not match the grid")
            fh.write(img.astype("<f8").tobytes())
            for vec in (s.load, s.label):
                v = np.asarray(vec, dtype=np.float64)
                if v.size != nd:
                    raise ValueError("sample vector length does not match the grid")
                fh.write(v.astype("<f8").tobytes())


def read_dataset(path):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    header = r.take(_DGDS_HEADER.size, "header")
    magic, version, n, count, epsilon, sigma, flags = _DGDS_HEADER.unpack(header)
    if magic != _DGDS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_DGDS_MAGIC!r}", 0)
    if version != _DGDS_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    side = 2 * n
    nd = 4 * n * n
    samples = []
    for k in range(count):
        tlen = r.u32(f"sample {k} text length")
        text = r.take(tlen, f"sample {k} text").decode("utf-8")
        img = r.array(side * side, f"sample {k} image").reshape(side, side)
        load = r.array(nd, f"sample {k} load")
        label = r.array(nd, f"sample {k} label")
        samples.append(Sample(text, img, load, label))
    return Dataset(n, epsilon, sigma, samples, flags=flags)


def _write_tensor(fh, a):
    a = np.asarray(a, dtype=np.float64)
    fh.write(struct.pack("<I", a.ndim))
    fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
    fh.write(np.ascontiguousarray(a).astype("<f8").tobytes())


def _read_tensor(r, what):
    ndim = r.u32(f"{what} rank")
    shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{what} shape"))
    return r.array(int(np.prod(shape)) if ndim else 1, what).reshape(shape)


def save_checkpoint(path, net, with_optimizer=False):
    cfg = net.cfg
    act = nn._ACTIVATIONS.index(cfg.activation)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", _DGCN_MAGIC, _DGCN_VERSION))
        fh.write(struct.pack("<IIIIBB", cfg.channels, cfg.kernel,
                             cfg.input_side, cfg.depth, act,
                             1 if cfg.use_bias else 0))
        for p in net.parameters():
            _write_tensor(fh, p)
        fh.write(struct.pack("<B", 1 if with_optimizer else 0))
        if with_optimizer:
            fh.write(struct.pack("<Q", net.step))
            for m in net.m:
                _write_tensor(fh, m)
            for v in net.v:
                _write_tensor(fh, v)


def load_checkpoint(path, expected_input_side=None):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic, version = struct.unpack("<4sI", r.take(8, "header"))
    if magic != _DGCN_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_DGCN_MAGIC!r}", 0)
    if version != _DGCN_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    channels, kernel, input_side, depth, act, use_bias = struct.unpack(
        "<IIIIBB", r.take(18, "network configuration"))
    if act >= len(nn._ACTIVATIONS):
        raise FormatError(f"unknown activation code {act}", r.pos - 2)
    if expected_input_side is not None and input_side != expected_input_side:
        raise ConfigError(
            f"checkpoint was trained for input side {input_side}, "
            f"this grid needs {expected_input_side}")
    cfg = nn.UNetConfig(input_side=input_side, channels=channels,
                        kernel=kernel, depth=depth,
                        activation=nn._ACTIVATIONS[act], use_bias=bool(use_bias))
    shapes = cfg.conv_channels()
    params = []
    for i in range(len(shapes) * (2 if use_bias else 1)):
        params.append(_read_tensor(r, f"parameter {i}"))
    if use_bias:
        weights, biases = params[0::2], params[1::2]
    else:
        weights, biases = params, None
    for (c_in, c_out), w in zip(shapes, weights):
        if w.shape != (c_out, c_in, kernel, kernel):
            raise FormatError(
                f"parameter shape {w.shape} does not fit the architecture", r.pos)
    net = nn.UNet(cfg, weights, biases)
    has_opt = r.take(1, "optimizer flag")[0]
    if has_opt:
        net.step = struct.unpack("<Q", r.take(8, "optimizer step"))[0]
        count = len(net.parameters())
        net.m = [_read_tensor(r, f"moment m[{i}]") for i in range(count)]
        net.v = [_read_tensor(r, f"moment v[{i}]") for i in range(count)]
    return net


def _fmt(v):
    return repr(float(v))


def write_metrics_csv(path, table):
    """Per-sample rows plus mean/std/median footer rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample id", "L2_vs_exact", "H1_vs_exact",
                    "L2_vs_dg", "H1_vs_dg"])
        cols = [table.columns[k] for k in _METRIC_FIELDS]
        for i in range(table.num_samples):
            w.writerow([i] + [_fmt(c[i]) for c in cols])
        for stat in ("mean", "std", "median"):
            aggs = [table.aggregate(k) for k in _METRIC_FIELDS]
            j = ("mean", "std", "median").index(stat)
            w.writerow([stat] + [_fmt(a[j]) for a in aggs])


def read_metrics_csv(path):
    """Returns (MetricsTable, {stat: {field: value}}) from a metrics report."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "sample id":
        raise ValueError(f"{path} is not a metrics report")
    cols = {k: [] for k in _METRIC_FIELDS}
    aggregates = {}
    for row in rows[1:]:
        if row[0] in ("mean", "std", "median"):
            aggregates[row[0]] = {k: float(v)
                                  for k, v in zip(_METRIC_FIELDS, row[1:])}
        else:
            for k, v in zip(_METRIC_FIELDS, row[1:]):
                cols[k].append(float(v))
    return MetricsTable(cols), aggregates


def write_history_csv(path, history, index_name="step"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([index_name, "loss"])
        for i, loss in enumerate(history):
            w.writerow([i, _fmt(loss)])


def write_rates_csv(path, levels, l2_errors, h1_errors):
    """Error table over refinement levels with log2 ratio columns."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "L2_error", "L2_rate", "H1_error", "H1_rate"])
        for i, n in enumerate(levels):
            l2r = "" if i == 0 else _fmt(dg.convergence_rate(l2_errors[i - 1],
                                                             l2_errors[i]))
            h1r = "" if i == 0 else _fmt(dg.convergence_rate(h1_errors[i - 1],
                                                             h1_errors[i]))
            w.writerow([n, _fmt(l2_errors[i]), l2r, _fmt(h1_errors[i]), h1r])


def read_config_file(path):
    """Parse `key = value` lines; '#' starts a comment, blank lines skipped."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = text.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_alpha(path, alpha):
    """Raw little-endian f64 dump of a coefficient vector."""
    np.asarray(alpha, dtype=np.float64).astype("<f8").tofile(path)


def read_alpha(path):
    return np.fromfile(path, dtype="<f8").astype(np.float64)
