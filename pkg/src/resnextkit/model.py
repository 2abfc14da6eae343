"""ResNeXt network builder for 32x32 inputs.

A network is a 3x3/64 stem, S stages of 3 bottleneck blocks and a global
average pool + linear head, where S = (depth - 2) / 9. Each block aggregates
C transformation paths of width d (doubling per stage) and can be laid out
in three numerically equivalent forms:

  split    - C separate reduce/transform/expand paths summed together
  concat   - C reduce/transform paths concatenated, then one expand
  grouped  - single reduce, one grouped 3x3 (groups=C), one expand

translate_weights maps a block's parameters between the forms bijectively,
which the verification suite uses to machine-check the equivalence.
"""

import io
from dataclasses import dataclass

import numpy as np

from . import autograd
from .autograd import Variable, add, add_n, concat_channels
from .layers import BatchNorm2d, Conv2d, Linear, global_avg_pool, relu
from .tensor import ShapeError

BLOCK_FORMS = ("split", "concat", "grouped")
STEM_WIDTH = 64
BLOCKS_PER_STAGE = 3
STAGE_BASE_OUT = 256


class ConfigError(ValueError):
    """Raised for structurally invalid model configurations."""


@dataclass(frozen=True)
class ModelConfig:
    """Everything that determines a network instance."""

    depth: int
    cardinality: int
    base_width: int
    num_classes: int = 10
    block_form: str = "grouped"


@dataclass(frozen=True)
class StageSpec:
    index: int          # 1-based stage number
    blocks: int
    in_width: int       # channels entering the stage's first block
    inner_width: int
    out_width: int
    first_stride: int


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[StageSpec, ...]

    @property
    def final_width(self) -> int:
        return self.stages[-1].out_width


def validate_config(cfg: ModelConfig) -> StagePlan:
    """Check a config and derive the per-stage width/stride plan.

    Depth must satisfy (depth - 2) % 9 == 0: the stem and head contribute
    two layers, and every stage adds 3 blocks of 3 convolutions.
    """
    if cfg.depth < 11 or (cfg.depth - 2) % 9 != 0:
        raise ConfigError(
            f"invalid depth {cfg.depth}: depth minus 2 must be a positive multiple of 9 "
            f"(stem + head plus 9 convolution layers per stage)"
        )
    if cfg.cardinality < 1:
        raise ConfigError(f"cardinality must be >= 1, got {cfg.cardinality}")
    if cfg.base_width < 1:
        raise ConfigError(f"base_width must be >= 1, got {cfg.base_width}")
    if cfg.num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {cfg.num_classes}")
    if cfg.block_form not in BLOCK_FORMS:
        raise ConfigError(f"unknown block form {cfg.block_form!r}, expected one of {BLOCK_FORMS}")

    n_stages = (cfg.depth - 2) // 9
    stages = []
    in_width = STEM_WIDTH
    for s in range(1, n_stages + 1):
        out_width = STAGE_BASE_OUT * 2 ** (s - 1)
        stages.append(StageSpec(
            index=s,
            blocks=BLOCKS_PER_STAGE,
            in_width=in_width,
            inner_width=cfg.cardinality * cfg.base_width * 2 ** (s - 1),
            out_width=out_width,
            first_stride=1 if s == 1 else 2,
        ))
        in_width = out_width
    return StagePlan(stages=tuple(stages))


class BottleneckBlock:
    """One residual unit holding its parameters in a chosen layout."""

    def __init__(self, in_width: int, inner_width: int, out_width: int,
                 cardinality: int, stride: int, form: str,
                 rng: np.random.Generator, dtype=np.float32, name: str = "block"):
        if form not in BLOCK_FORMS:
            raise ConfigError(f"unknown block form {form!r}")
        if inner_width % cardinality != 0:
            raise ConfigError(f"{name}: inner width {inner_width} not divisible by cardinality {cardinality}")
        self.in_width = in_width
        self.inner_width = inner_width
        self.out_width = out_width
        self.cardinality = cardinality
        self.stride = stride
        self.form = form
        self.dtype = dtype
        self.name = name
        self.path_width = inner_width // cardinality
        self.has_projection = (stride != 1 or in_width != out_width)

        w = self.path_width
        c = cardinality
        if form == "grouped":
            self.reduce = Conv2d(in_width, inner_width, 1, rng=rng, dtype=dtype, name=f"{name}.reduce")
            self.bn1 = BatchNorm2d(inner_width, dtype=dtype, name=f"{name}.bn1")
            self.transform = Conv2d(inner_width, inner_width, 3, stride=stride, pad=1, groups=c,
                                    rng=rng, dtype=dtype, name=f"{name}.transform")
            self.bn2 = BatchNorm2d(inner_width, dtype=dtype, name=f"{name}.bn2")
            self.expand = Conv2d(inner_width, out_width, 1, rng=rng, dtype=dtype, name=f"{name}.expand")
        else:
            self.reduces = [Conv2d(in_width, w, 1, rng=rng, dtype=dtype, name=f"{name}.path{i}.reduce")
                            for i in range(c)]
            self.bn1s = [BatchNorm2d(w, dtype=dtype, name=f"{name}.path{i}.bn1") for i in range(c)]
            self.transforms = [Conv2d(w, w, 3, stride=stride, pad=1, rng=rng, dtype=dtype,
                                      name=f"{name}.path{i}.transform") for i in range(c)]
            self.bn2s = [BatchNorm2d(w, dtype=dtype, name=f"{name}.path{i}.bn2") for i in range(c)]
            if form == "split":
                self.expands = [Conv2d(w, out_width, 1, rng=rng, dtype=dtype, name=f"{name}.path{i}.expand")
                                for i in range(c)]
            else:
                self.expand = Conv2d(inner_width, out_width, 1, rng=rng, dtype=dtype, name=f"{name}.expand")
        self.bn3 = BatchNorm2d(out_width, dtype=dtype, name=f"{name}.bn3")
        if self.has_projection:
            self.projection = Conv2d(in_width, out_width, 1, stride=stride, rng=rng, dtype=dtype,
                                     name=f"{name}.projection")
            self.bn_proj = BatchNorm2d(out_width, dtype=dtype, name=f"{name}.bn_proj")

    # -- forward ------------------------------------------------------------

    def _shortcut(self, x: Variable, train: bool) -> Variable:
        if self.has_projection:
            return self.bn_proj.forward(self.projection.forward(x), train)
        return x

    def _path_pre_expand(self, x: Variable, i: int, train: bool) -> Variable:
        """Path i through reduce-bn-relu-3x3-bn-relu (split and concat forms)."""
        h = relu(self.bn1s[i].forward(self.reduces[i].forward(x), train))
        return relu(self.bn2s[i].forward(self.transforms[i].forward(h), train))

    def forward(self, x: Variable, train: bool = True, pre_activation: bool = False) -> Variable:
        if x.value.shape[1] != self.in_width:
            raise ShapeError(f"{self.name}: input has {x.value.shape[1]} channels, block expects {self.in_width}")
        if self.form == "grouped":
            h = relu(self.bn1.forward(self.reduce.forward(x), train))
            h = relu(self.bn2.forward(self.transform.forward(h), train))
            h = self.expand.forward(h)
        elif self.form == "concat":
            paths = [self._path_pre_expand(x, i, train) for i in range(self.cardinality)]
            h = self.expand.forward(concat_channels(paths))
        else:  # split
            expanded = [self.expands[i].forward(self._path_pre_expand(x, i, train))
                        for i in range(self.cardinality)]
            h = expanded[0] if len(expanded) == 1 else add_n(expanded)
        h = self.bn3.forward(h, train)
        y = add(h, self._shortcut(x, train))
        return y if pre_activation else relu(y)

    def path_functions(self, train: bool = True):
        """The C per-path transforms of the split form, as x -> Variable callables."""
        if self.form != "split":
            raise ConfigError(f"path_functions requires the split form, block is {self.form!r}")
        return [
            (lambda x, i=i: self.expands[i].forward(self._path_pre_expand(x, i, train)))
            for i in range(self.cardinality)
        ]

    # -- parameter access ----------------------------------------------------

    def _layers(self):
        if self.form == "grouped":
            convs = [self.reduce, self.transform, self.expand]
            bns = [self.bn1, self.bn2]
            for conv, bn in zip(convs[:2], bns):
                yield conv
                yield bn
            yield convs[2]
        else:
            for i in range(self.cardinality):
                yield self.reduces[i]
                yield self.bn1s[i]
                yield self.transforms[i]
                yield self.bn2s[i]
                if self.form == "split":
                    yield self.expands[i]
            if self.form == "concat":
                yield self.expand
        yield self.bn3
        if self.has_projection:
            yield self.projection
            yield self.bn_proj

    def parameters(self):
        for layer in self._layers():
            yield from layer.parameters()

    def batchnorms(self):
        for layer in self._layers():
            if isinstance(layer, BatchNorm2d):
                yield layer


def block_forward_split(x: Variable, block: BottleneckBlock, train: bool = True,
                        pre_activation: bool = False) -> Variable:
    if block.form != "split":
        raise ConfigError(f"block_forward_split: block is in {block.form!r} form")
    return block.forward(x, train=train, pre_activation=pre_activation)


def block_forward_concat(x: Variable, block: BottleneckBlock, train: bool = True,
                         pre_activation: bool = False) -> Variable:
    if block.form != "concat":
        raise ConfigError(f"block_forward_concat: block is in {block.form!r} form")
    return block.forward(x, train=train, pre_activation=pre_activation)


def block_forward_grouped(x: Variable, block: BottleneckBlock, train: bool = True,
                          pre_activation: bool = False) -> Variable:
    if block.form != "grouped":
        raise ConfigError(f"block_forward_grouped: block is in {block.form!r} form")
    return block.forward(x, train=train, pre_activation=pre_activation)


def aggregate_transform(x: Variable, paths) -> Variable:
    """Sum of per-path transforms: F(x) = sum_i T_i(x), without any shortcut."""
    if len(paths) == 0:
        raise ConfigError("aggregate_transform: empty path list")
    outs = [t(x) for t in paths]
    return outs[0] if len(outs) == 1 else add_n(outs)


# -- weight translation -----------------------------------------------------

def _merged_arrays(block: BottleneckBlock) -> dict:
    """Collect a block's parameters in the merged (grouped-form) layout."""

    def bn_merge(bns):
        return {
            "gamma": np.concatenate([b.gamma.value for b in bns]),
            "beta": np.concatenate([b.beta.value for b in bns]),
            "running_mean": np.concatenate([b.running_mean for b in bns]),
            "running_var": np.concatenate([b.running_var for b in bns]),
        }

    def bn_copy(bn):
        return {
            "gamma": bn.gamma.value.copy(),
            "beta": bn.beta.value.copy(),
            "running_mean": bn.running_mean.copy(),
            "running_var": bn.running_var.copy(),
        }

    if block.form == "grouped":
        m = {
            "reduce_w": block.reduce.weight.value.copy(),
            "bn1": bn_copy(block.bn1),
            "transform_w": block.transform.weight.value.copy(),
            "bn2": bn_copy(block.bn2),
            "expand_w": block.expand.weight.value.copy(),
        }
    else:
        m = {
            "reduce_w": np.concatenate([conv.weight.value for conv in block.reduces], axis=0),
            "bn1": bn_merge(block.bn1s),
            "transform_w": np.concatenate([conv.weight.value for conv in block.transforms], axis=0),
            "bn2": bn_merge(block.bn2s),
        }
        if block.form == "split":
            m["expand_w"] = np.concatenate([conv.weight.value for conv in block.expands], axis=1)
        else:
            m["expand_w"] = block.expand.weight.value.copy()
    m["bn3"] = bn_copy(block.bn3)
    if block.has_projection:
        m["projection_w"] = block.projection.weight.value.copy()
        m["bn_proj"] = bn_copy(block.bn_proj)
    return m


def _apply_merged(block: BottleneckBlock, m: dict) -> None:
    """Write merged-layout arrays into a block of any form."""
    c = block.cardinality
    w = block.path_width

    def bn_set(bn, src, lo=None, hi=None):
        sl = slice(lo, hi)
        bn.gamma.value = src["gamma"][sl].copy()
        bn.beta.value = src["beta"][sl].copy()
        bn.running_mean = src["running_mean"][sl].copy()
        bn.running_var = src["running_var"][sl].copy()

    if block.form == "grouped":
        block.reduce.weight.value = m["reduce_w"].copy()
        bn_set(block.bn1, m["bn1"])
        block.transform.weight.value = m["transform_w"].copy()
        bn_set(block.bn2, m["bn2"])
        block.expand.weight.value = m["expand_w"].copy()
    else:
        for i in range(c):
            lo, hi = i * w, (i + 1) * w
            block.reduces[i].weight.value = m["reduce_w"][lo:hi].copy()
            bn_set(block.bn1s[i], m["bn1"], lo, hi)
            block.transforms[i].weight.value = m["transform_w"][lo:hi].copy()
            bn_set(block.bn2s[i], m["bn2"], lo, hi)
            if block.form == "split":
                block.expands[i].weight.value = m["expand_w"][:, lo:hi].copy()
        if block.form == "concat":
            block.expand.weight.value = m["expand_w"].copy()
    bn_set(block.bn3, m["bn3"])
    if block.has_projection:
        block.projection.weight.value = m["projection_w"].copy()
        bn_set(block.bn_proj, m["bn_proj"])


def translate_weights(block: BottleneckBlock, to_form: str,
                      from_form: str | None = None) -> BottleneckBlock:
    """Re-express a block's parameters in another form.

    The mapping is a bijective remapping of the same scalars: per-path 1x1
    reduce weights stack into one reduce, per-path 3x3 weights become the
    block-diagonal grouped weight, per-path expand weights concatenate along
    the input-channel axis, and batch-norm vectors (including running stats)
    slice or concatenate consistently. Forward outputs agree across forms.

    from_form is optional cross-checking: when given it must name the form
    the block is actually in.
    """
    if to_form not in BLOCK_FORMS:
        raise ConfigError(f"unknown target form {to_form!r}")
    if from_form is not None and from_form != block.form:
        raise ConfigError(f"block is in {block.form!r} form, not {from_form!r}")
    merged = _merged_arrays(block)
    rng = np.random.default_rng(0)  # placeholder init, overwritten below
    out = BottleneckBlock(block.in_width, block.inner_width, block.out_width,
                          block.cardinality, block.stride, to_form, rng,
                          dtype=block.dtype, name=block.name)
    _apply_merged(out, merged)
    return out


# -- whole network ------------------------------------------------------------

class Model:
    """Stem + staged bottleneck blocks + global-pool/linear classifier."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = cfg
        self.plan = validate_config(cfg)
        self.dtype = dtype
        self.stem = Conv2d(3, STEM_WIDTH, 3, stride=1, pad=1, rng=rng, dtype=dtype, name="stem")
        self.stem_bn = BatchNorm2d(STEM_WIDTH, dtype=dtype, name="stem_bn")
        self.blocks: list[BottleneckBlock] = []
        for stage in self.plan.stages:
            in_width = stage.in_width
            for b in range(stage.blocks):
                stride = stage.first_stride if b == 0 else 1
                self.blocks.append(BottleneckBlock(
                    in_width, stage.inner_width, stage.out_width,
                    cfg.cardinality, stride, cfg.block_form, rng, dtype=dtype,
                    name=f"stage{stage.index}.block{b + 1}",
                ))
                in_width = stage.out_width
        self.head = Linear(self.plan.final_width, cfg.num_classes, rng=rng, dtype=dtype, name="head")

    def forward(self, x, train: bool = True) -> Variable:
        """Logits for a [n, 3, h, w] batch (Variable or plain array)."""
        if not isinstance(x, Variable):
            x = autograd.constant(np.asarray(x, dtype=self.dtype))
        h = relu(self.stem_bn.forward(self.stem.forward(x), train))
        for block in self.blocks:
            h = block.forward(h, train=train)
        pooled = global_avg_pool(h)
        return self.head.forward(pooled)

    def parameters(self) -> list[Variable]:
        out = list(self.stem.parameters()) + list(self.stem_bn.parameters())
        for block in self.blocks:
            out.extend(block.parameters())
        out.extend(self.head.parameters())
        return out

    def named_parameters(self) -> list[tuple[str, Variable]]:
        return [(p.name, p) for p in self.parameters()]

    def batchnorms(self) -> list[BatchNorm2d]:
        out = [self.stem_bn]
        for block in self.blocks:
            out.extend(block.batchnorms())
        return out

    def named_state(self) -> list[tuple[str, np.ndarray]]:
        """Non-learnable state: batch-norm running statistics."""
        out = []
        for bn in self.batchnorms():
            out.append((f"{bn.name}.running_mean", bn.running_mean))
            out.append((f"{bn.name}.running_var", bn.running_var))
        return out

    def layer_count(self) -> int:
        """Main-path depth: stem + 3 conv levels per block + head.

        Parallel paths within a block sit at the same depth level, and
        projection shortcuts are parallel to the main path, so neither
        adds depth.
        """
        return 1 + 3 * len(self.blocks) + 1

    def summary(self) -> str:
        """One line per parameterized layer: name, weight shape, scalar count."""
        buf = io.StringIO()
        total = 0
        for name, p in self.named_parameters():
            total += p.value.size
            buf.write(f"{name:<40} {str(tuple(p.value.shape)):<22} {p.value.size:>12,}\n")
        buf.write(f"{'total':<40} {'':<22} {total:>12,}\n")
        return buf.getvalue()


def build_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> Model:
    """Construct and initialize a network; same rng seed gives identical weights."""
    return Model(cfg, rng, dtype=dtype)


def count_parameters(model: Model) -> int:
    """Exact count of learnable scalars (running statistics excluded)."""
    return sum(p.value.size for p in model.parameters())
