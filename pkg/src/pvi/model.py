"""Point-voxel interlaced compression network.

Three encoder stages run a voxel branch (two conditional sparse convolutions
and an inception-residual block) in parallel with a point branch (local graph
embedding, then geometry-aware point convolutions). At every scale the voxel
branch hands features to the point branch by trilinear interpolation, and the
point branch steers the voxel branch by producing routing weights that mix a
bank of expert kernels. The decoder mirrors the stages coarse-to-fine,
classifying occupancy on generatively upsampled candidates and pruning to the
transmitted per-scale counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import lattice, sparse
from .autodiff import Value
from .entropy import FactorizedPrior, quantize_latent, rate_bits
from .errors import DataError, DecodeError
from .geometry import PointSet, knn, trilinear_plan
from .nn import Linear, ParameterStore

STAGES = 3
ROUTING_SCALE = 65535

MODES = ("full", "voxel", "interlaced")


@dataclass
class ModelConfig:
    channels: tuple = (16, 32, 64)
    latent_channels: int = 8
    n_experts: int = 4
    knn: int = 8
    mode: str = "full"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != STAGES:
            raise DataError("exactly three per-stage channel widths required")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}")
        if self.mode != "interlaced" and self.n_experts < 2:
            raise DataError("at least two expert kernels required")
        if self.knn < 1 or self.latent_channels < 1:
            raise DataError("bad config value")

    @property
    def experts(self) -> int:
        return 1 if self.mode == "interlaced" else self.n_experts

    @property
    def has_point_branch(self) -> bool:
        return self.mode in ("full", "interlaced")

    @property
    def has_routing(self) -> bool:
        return self.mode in ("full", "voxel")

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"channels={','.join(map(str, self.channels))}\n")
            fh.write(f"latent_channels={self.latent_channels}\n")
            fh.write(f"n_experts={self.n_experts}\n")
            fh.write(f"knn={self.knn}\n")
            fh.write(f"mode={self.mode}\n")

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        kv = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise DataError(f"bad config line: {line!r}")
                key, val = line.split("=", 1)
                kv[key.strip()] = val.strip()
        cfg = cls()
        if "channels" in kv:
            cfg.channels = tuple(int(x) for x in kv["channels"].split(","))
        for name in ("latent_channels", "n_experts", "knn"):
            if name in kv:
                setattr(cfg, name, int(kv[name]))
        if "mode" in kv:
            cfg.mode = kv["mode"]
        cfg.__post_init__()
        return cfg


@dataclass(frozen=True)
class LatentCode:
    """Everything the bitstream carries about one cloud."""

    coords: np.ndarray  # (M, 3) int64 at the latent stride
    features: np.ndarray  # (M, latent_channels) int64
    routing_q: np.ndarray  # (stages, n) u16 fixed-point routing weights
    counts: tuple  # points per scale in the original cloud (N1, N2, N3)
    bit_depth: int
    stride: int

    def routing(self) -> np.ndarray:
        """Dequantized simplex routing weights, one row per stage."""
        return dequantize_routing(self.routing_q)


@dataclass(frozen=True)
class DecodeResult:
    points: PointSet
    warnings: tuple = ()


def quantize_routing(alpha: np.ndarray) -> np.ndarray:
    q = np.floor(np.asarray(alpha, dtype=np.float64) * ROUTING_SCALE + 0.5)
    return np.clip(q, 0, ROUTING_SCALE).astype(np.uint16)


def dequantize_routing(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    sums = q.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise DecodeError("routing weights sum to zero")
    return q / sums


class ExpertBank:
    """n expert kernels of identical shape (plus one plain kernel when n=1)."""

    def __init__(self, store: ParameterStore, name: str, n: int, k: int,
                 c_in: int, c_out: int, rng: np.random.Generator):
        self.n = n
        fan_in = k ** 3 * c_in
        self.w = [store.add(f"{name}.w{i}", _kaiming((k ** 3, c_in, c_out), fan_in, rng))
                  for i in range(n)]
        self.b = [store.add(f"{name}.b{i}", np.zeros(c_out)) for i in range(n)]

    def mixed(self, alpha: Value | None) -> tuple[Value, Value]:
        if self.n == 1 or alpha is None:
            return self.w[0].value, self.b[0].value
        flat = ad.reshape(alpha, (self.n,))
        return (ad.mix([p.value for p in self.w], flat),
                ad.mix([p.value for p in self.b], flat))


def _kaiming(shape, fan_in, rng):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Irb:
    """Inception-residual block: 1x1, 3x3 and 3x3-3x3 branches at half width,
    fused by a 1x1 convolution and added back to the input.

    The first taps of the 3x3 branch and the 3x3-3x3 branch share input and
    kernel map, so they run as one double-width convolution and split.
    """

    def __init__(self, store: ParameterStore, name: str, c: int, rng):
        cb = max(1, c // 2)
        self.cb = cb
        self.b1 = Linear(store, f"{name}.b1", c, cb, rng)
        self.b23a = _PlainConv(store, f"{name}.b23a", 3, c, 2 * cb, rng)
        self.b3b = _PlainConv(store, f"{name}.b3b", 3, cb, cb, rng)
        self.out = Linear(store, f"{name}.out", 3 * cb, c, rng)

    def __call__(self, x: Value, kmap: sparse.KernelMap) -> Value:
        p1 = ad.relu(self.b1(x))
        mid = ad.relu(self.b23a(x, kmap))
        p2 = ad.slice_cols(mid, 0, self.cb)
        p3 = ad.relu(self.b3b(ad.slice_cols(mid, self.cb, 2 * self.cb), kmap))
        return ad.add(x, self.out(ad.concat_cols([p1, p2, p3])))


class _PlainConv:
    def __init__(self, store, name, k, c_in, c_out, rng):
        fan_in = k ** 3 * c_in
        self.w = store.add(f"{name}.w", _kaiming((k ** 3, c_in, c_out), fan_in, rng))
        self.b = store.add(f"{name}.b", np.zeros(c_out))

    def __call__(self, x: Value, kmap: sparse.KernelMap) -> Value:
        return ad.kernel_map_conv(x, self.w.value, self.b.value, kmap.pairs, kmap.m_out)


@dataclass
class CloudGeometry:
    """Weight-independent, map-free geometry of one cloud.

    Small enough to cache for a whole training set: multiscale supports,
    point-branch neighbour graphs, carry-over rows, trilinear plans and the
    ground-truth decoder candidates/labels.
    """

    bit_depth: int
    supports: list  # G_0 .. G_3 coords
    counts: tuple  # (N1, N2, N3)
    graphs: list  # per stage, (idx (N,K), offsets (N,K,3)) or None
    carry: list  # per stage (s>=2), representative rows of the previous anchors
    tri: list  # per stage, (rows, weights) trilinear plan or None
    dec_cand: list  # candidate coords per decoder scale (scale 3 first)
    dec_labels: list  # (Q, 1) float labels per decoder scale
    dec_keep: list  # rows of candidates that survive ground-truth pruning

    @classmethod
    def build(cls, cloud: PointSet, cfg: ModelConfig) -> "CloudGeometry":
        supports = [cloud.coords]
        for s in range(STAGES):
            supports.append(lattice.downsample(supports[-1], 2 ** (s + 1)))
        counts = tuple(len(supports[s]) for s in range(STAGES))

        graphs, carry, tri = [], [], []
        for s in range(1, STAGES + 1):
            fine, coarse = supports[s - 1], supports[s]
            stride = 2 ** (s - 1)
            if cfg.has_point_branch:
                k_eff = min(cfg.knn, len(fine))
                g = knn(fine, fine, k_eff)
                idx, offs = g.neighbor_indices, g.offsets
                if k_eff < cfg.knn:  # pad tiny anchor sets with self-neighbours
                    pad = cfg.knn - k_eff
                    idx = np.concatenate([idx, np.tile(idx[:, :1], (1, pad))], axis=1)
                    offs = np.concatenate([offs, np.zeros((len(fine), pad, 3))], axis=1)
                graphs.append((idx, offs))
                tri.append(trilinear_plan(coarse, 2 * stride, fine.astype(np.float64)))
            else:
                graphs.append(None)
                tri.append(None)
            if s >= 2:
                _, first = lattice.first_row_per_cell(supports[s - 2], 2 ** (s - 1))
                carry.append(first)
            else:
                carry.append(None)

        dec_cand, dec_labels, dec_keep = [], [], []
        for s in range(STAGES, 0, -1):
            cand, _ = sparse.up_map(supports[s], 2 ** s)
            dec_cand.append(cand)
            inside = lattice.rows_in(cand, lattice.pack(supports[s - 1]))
            dec_labels.append(inside.astype(np.float64)[:, None])
            dec_keep.append(np.flatnonzero(inside))
        return cls(cloud.bit_depth, supports, counts, graphs, carry, tri,
                   dec_cand, dec_labels, dec_keep)


@dataclass
class EncoderContext:
    """CloudGeometry plus the kernel maps of every convolution in the encoder
    and the ground-truth decoder. Maps are the bulky part; training rebuilds
    them per pass from a cached CloudGeometry."""

    geom: CloudGeometry
    enc_k3: list  # per stage, submanifold map on G_{s-1}
    enc_k2: list  # per stage, down map G_{s-1} -> G_s
    enc_irb: list  # per stage, submanifold map on G_s
    dec_k3: list  # decoder scale s=3..1 (index 0 is scale 3)
    dec_up: list
    dec_irb: list

    # Convenience pass-throughs
    @property
    def bit_depth(self):
        return self.geom.bit_depth

    @property
    def supports(self):
        return self.geom.supports

    @property
    def counts(self):
        return self.geom.counts

    @property
    def graphs(self):
        return self.geom.graphs

    @property
    def carry(self):
        return self.geom.carry

    @property
    def tri(self):
        return self.geom.tri

    @property
    def dec_labels(self):
        return self.geom.dec_labels

    @property
    def dec_keep(self):
        return self.geom.dec_keep

    @classmethod
    def build(cls, cloud: PointSet, cfg: ModelConfig) -> "EncoderContext":
        return cls.from_geometry(CloudGeometry.build(cloud, cfg))

    @classmethod
    def from_geometry(cls, geom: CloudGeometry) -> "EncoderContext":
        supports = geom.supports
        enc_k3, enc_k2, enc_irb = [], [], []
        for s in range(1, STAGES + 1):
            stride = 2 ** (s - 1)
            enc_k3.append(sparse.submanifold_map(supports[s - 1], 3, stride))
            _, km2 = sparse.down_map(supports[s - 1], stride)
            enc_k2.append(km2)
            enc_irb.append(sparse.submanifold_map(supports[s], 3, 2 * stride))
        dec_k3, dec_up, dec_irb = [], [], []
        for i, s in enumerate(range(STAGES, 0, -1)):
            stride = 2 ** s
            dec_k3.append(sparse.submanifold_map(supports[s], 3, stride))
            _, kmu = sparse.up_map(supports[s], stride)
            dec_up.append(kmu)
            dec_irb.append(sparse.submanifold_map(geom.dec_cand[i], 3, stride // 2))
        return cls(geom, enc_k3, enc_k2, enc_irb, dec_k3, dec_up, dec_irb)


@dataclass
class LossTerms:
    total: float
    distortion: float
    rate: float
    lam: float


class PviModel:
    """Parameters plus forward passes for training and inference."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.store = ParameterStore()
        rng = np.random.default_rng(seed)
        n = cfg.experts
        ch = cfg.channels
        widths = (1,) + ch

        self.enc_conv1, self.enc_conv2, self.enc_irb = [], [], []
        self.lgc = None
        self.pconv_w1, self.pconv_w2, self.pconv_out = [], [], []
        self.route = []
        for s in range(1, STAGES + 1):
            c_in, c = widths[s - 1], widths[s]
            self.enc_conv1.append(ExpertBank(self.store, f"enc.s{s}.conv1", n, 3, c_in, c, rng))
            self.enc_conv2.append(ExpertBank(self.store, f"enc.s{s}.conv2", n, 2, c, c, rng))
            self.enc_irb.append(Irb(self.store, f"enc.s{s}.irb", c, rng))
            if cfg.has_point_branch:
                if s == 1:
                    self.lgc = Linear(self.store, "enc.s1.lgc", 3 * cfg.knn, c, rng)
                else:
                    self.pconv_w1.append(Linear(self.store, f"enc.s{s}.pconv.w1", 3, c_in, rng))
                    self.pconv_w2.append(Linear(self.store, f"enc.s{s}.pconv.w2", c_in, c_in, rng))
                    self.pconv_out.append(Linear(self.store, f"enc.s{s}.pconv.out", c_in, c, rng))
            if cfg.has_routing:
                pooled_in = c + c_in if cfg.mode == "full" else c_in
                self.route.append((Linear(self.store, f"route.s{s}.0", pooled_in, c, rng),
                                   Linear(self.store, f"route.s{s}.1", c, cfg.n_experts, rng)))
            else:
                self.route.append(None)

        self.latent_head = Linear(self.store, "enc.latent", ch[2], cfg.latent_channels, rng)

        self.dec_conv1, self.dec_up, self.dec_irb, self.dec_head = [], [], [], []
        d_in = cfg.latent_channels
        for s in range(STAGES, 0, -1):
            c = ch[s - 1]
            self.dec_conv1.append(ExpertBank(self.store, f"dec.s{s}.conv1", n, 3, d_in, c, rng))
            self.dec_up.append(ExpertBank(self.store, f"dec.s{s}.up", n, 2, c, c, rng))
            self.dec_irb.append(Irb(self.store, f"dec.s{s}.irb", c, rng))
            self.dec_head.append(Linear(self.store, f"dec.s{s}.head", c, 1, rng))
            d_in = c

        self.prior = FactorizedPrior(self.store, "prior", cfg.latent_channels, rng)

    # ------------------------------------------------------------- encoder

    def _cond_conv(self, x: Value, bank: ExpertBank, alpha, kmap) -> Value:
        w, b = bank.mixed(alpha)
        return ad.kernel_map_conv(x, w, b, kmap.pairs, kmap.m_out)

    def _point_stage(self, ctx: EncoderContext, s: int, p_prev: Value | None) -> Value:
        idx, offs = ctx.graphs[s - 1]
        n_pts, k = idx.shape
        if s == 1:
            return ad.relu(self.lgc(offs.reshape(n_pts, 3 * k)))
        carried = ad.gather_rows(p_prev, ctx.carry[s - 1], unique=True)
        w = self.pconv_w2[s - 2](ad.relu(self.pconv_w1[s - 2](offs.reshape(n_pts * k, 3))))
        fj = ad.gather_rows(carried, idx.reshape(-1))
        agg = ad.scale(ad.vsum(ad.reshape(ad.mul(w, fj), (n_pts, k, -1)), axis=1), 1.0 / k)
        return ad.relu(self.pconv_out[s - 2](agg))

    def _routing(self, s: int, p: Value | None, v: Value) -> Value | None:
        if not self.cfg.has_routing:
            return None
        pooled_v = ad.global_mean_pool(v)
        if self.cfg.mode == "full":
            pooled = ad.concat_cols([ad.global_mean_pool(p), pooled_v])
        else:
            pooled = pooled_v
        l0, l1 = self.route[s - 1]
        return ad.softmax(l1(ad.relu(l0(pooled))), axis=1)

    def encode_graph(self, ctx: EncoderContext):
        """Trace the encoder; returns (latent Value, list of alpha Values)."""
        v = Value(np.ones((len(ctx.supports[0]), 1)))
        p = None
        alphas = []
        for s in range(1, STAGES + 1):
            if self.cfg.has_point_branch:
                p = self._point_stage(ctx, s, p)
            alpha = self._routing(s, p, v)
            alphas.append(alpha)
            v = ad.relu(self._cond_conv(v, self.enc_conv1[s - 1], alpha, ctx.enc_k3[s - 1]))
            v = ad.relu(self._cond_conv(v, self.enc_conv2[s - 1], alpha, ctx.enc_k2[s - 1]))
            v = self.enc_irb[s - 1](v, ctx.enc_irb[s - 1])
            if self.cfg.has_point_branch:
                rows, wts = ctx.tri[s - 1]
                p = ad.add(p, ad.trilinear_gather(v, rows, wts))
        return self.latent_head(v), alphas

    def _decoder_scale(self, i: int, f: Value, alpha, kmap3, kmapu, kmapi):
        f = ad.relu(self._cond_conv(f, self.dec_conv1[i], alpha, kmap3))
        f = ad.relu(self._cond_conv(f, self.dec_up[i], alpha, kmapu))
        f = self.dec_irb[i](f, kmapi)
        return f, self.dec_head[i](f)

    # ------------------------------------------------------------ training

    def loss_graph(self, ctx: EncoderContext, lam: float, rng: np.random.Generator):
        """Training objective with additive-noise quantization relaxation and
        ground-truth-pruned decoder supports. Returns (total Value, LossTerms)."""
        latent, alphas = self.encode_graph(ctx)
        y_tilde = ad.uniform_noise(latent, rng)
        bits = rate_bits(y_tilde, self.prior)
        rate = ad.scale(bits, 1.0 / len(ctx.supports[0]))

        f = y_tilde
        bce_terms = []
        total_candidates = 0
        for i in range(STAGES):
            alpha = alphas[STAGES - 1 - i]
            f, logits = self._decoder_scale(i, f, alpha, ctx.dec_k3[i], ctx.dec_up[i],
                                            ctx.dec_irb[i])
            n_cand = logits.data.shape[0]
            bce_terms.append((ad.bce_with_logits(logits, ctx.dec_labels[i]), n_cand))
            total_candidates += n_cand
            if i + 1 < STAGES:
                f = ad.gather_rows(f, ctx.dec_keep[i], unique=True)
        dist = None
        for term, n_cand in bce_terms:  # pooled mean over all scales
            piece = ad.scale(term, n_cand / total_candidates)
            dist = piece if dist is None else ad.add(dist, piece)
        total = ad.add(dist, ad.scale(rate, lam))
        terms = LossTerms(float(total.data), float(dist.data), float(rate.data), lam)
        return total, terms

    def forward_loss(self, cloud: PointSet, lam: float, seed: int = 0) -> LossTerms:
        ctx = EncoderContext.build(cloud, self.cfg)
        rng = np.random.default_rng(seed)
        _, terms = self.loss_graph(ctx, lam, rng)
        return terms

    # ----------------------------------------------------------- inference

    def encode(self, cloud: PointSet, ctx: EncoderContext | None = None) -> LatentCode:
        if ctx is None:
            ctx = EncoderContext.build(cloud, self.cfg)
        latent, alphas = self.encode_graph(ctx)
        if self.cfg.has_routing:
            routing_q = np.stack([quantize_routing(a.data.ravel()) for a in alphas])
        else:
            routing_q = np.full((STAGES, 1), ROUTING_SCALE, dtype=np.uint16)
        return LatentCode(ctx.supports[STAGES], quantize_latent(latent.data),
                          routing_q, ctx.counts, cloud.bit_depth, 2 ** STAGES)

    def decode(self, latent: LatentCode) -> DecodeResult:
        cfg = self.cfg
        if latent.features.shape[1] != cfg.latent_channels:
            raise DecodeError("latent width does not match model")
        alphas = latent.routing()
        if alphas.shape != (STAGES, cfg.experts):
            raise DecodeError("routing weights do not match model")
        warnings = []
        support = np.asarray(latent.coords, dtype=np.int64)
        stride = latent.stride
        f = Value(latent.features.astype(np.float64))
        for i in range(STAGES):
            alpha = Value(alphas[i][None, :]) if cfg.has_routing else None
            kmap3 = sparse.submanifold_map(support, 3, stride)
            cand, kmapu = sparse.up_map(support, stride)
            kmapi = sparse.submanifold_map(cand, 3, stride // 2)
            f, logits = self._decoder_scale(i, f, alpha, kmap3, kmapu, kmapi)
            n_keep = int(latent.counts[STAGES - 1 - i])
            scores = logits.data.ravel()
            if n_keep > len(cand):
                warnings.append(f"scale {STAGES - i}: requested {n_keep} voxels, "
                                f"only {len(cand)} candidates")
                keep = np.arange(len(cand))
            else:
                order = np.lexsort((lattice.pack(cand), -scores))
                keep = np.sort(order[:n_keep])
            support = cand[keep]
            stride //= 2
            f = Value(f.data[keep])
        points = PointSet(support, latent.bit_depth)
        return DecodeResult(points, tuple(warnings))
