"""Acceptance suite: one test and one PASS/FAIL line per criterion.

The long training runs are shared through module-scoped fixtures so that each
configuration trains once.
"""

import math
import time

import numpy as np
import pytest

from swin_tuna.backbone import backbone_forward, backbone_layout, swin_large, toy_config
from swin_tuna.checkpoint import load_checkpoint
from swin_tuna.cli import main
from swin_tuna.config import RunConfig
from swin_tuna.data import Dataset, SampleRecord, dataset_stats, gini_coefficient, resolution_range_ratio
from swin_tuna.errors import ContractError
from swin_tuna.experiment import load_data, model_from_config, run_training
from swin_tuna.gradcheck import TOLERANCE, run_gradcheck
from swin_tuna.head import HeadConfig
from swin_tuna.metrics import ConfusionMatrix
from swin_tuna.model import build_model, full_layout
from swin_tuna.tensor import Tensor
from swin_tuna.train import TrainConfig, evaluate, train
from swin_tuna.tuna import TunaConfig, ablation_arms, block_forward, count_params, tuna_forward, tuna_layout

pytestmark = pytest.mark.slow

LN3 = math.log(3)
STRUCTURES = ("parallel", "sequential")


def config(name, **overrides):
    cfg = RunConfig.load(name)
    for k, v in overrides.items():
        cfg.set(k, v)
    return cfg


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    """2,000-iteration runs of both structures and the linear probe, trained once."""
    out = {}
    for name in ("structure_parallel", "structure_sequential", "linear_probe"):
        t0 = time.perf_counter()
        run = run_training(config(name), tmp_path_factory.mktemp(name))
        out[name] = (run, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def freeze_runs(tmp_path_factory):
    """300-iteration runs of both structures, with the fingerprint of a fresh copy of the backbone."""
    out = {}
    for s in STRUCTURES:
        cfg = config(f"structure_{s}", **{"train.iters": 300})
        fresh = model_from_config(cfg, 0).store
        run = run_training(cfg, tmp_path_factory.mktemp(f"freeze_{s}"))
        same_bytes = all(fresh[n].data.tobytes() == run.model.store[n].data.tobytes() for n in fresh.frozen_names())
        out[s] = (run, fresh.fingerprint(), same_bytes)
    return out


# -- per-criterion checks that criterion 11 reuses for the sequential arm ----

def gradcheck_ok(names=None):
    t0 = time.perf_counter()
    results = run_gradcheck(names)
    worst = max(r.max_rel_err for r in results)
    return all(r.passed for r in results), worst, time.perf_counter() - t0, results


def neutral_equivalence_ok(structure, n_inputs=20):
    cfg = TunaConfig(bottleneck_dims=[16, 16, 24, 48], structure=structure, s1_init=1.0, s2_init=0.0)
    model = build_model(toy_config(), HeadConfig(32, 3), cfg, "tuna", seed=11)
    rng = np.random.default_rng(2024)
    for n in model.store.names(component="tuna"):
        model.store[n].data[...] = rng.standard_normal(model.store[n].shape)  # adapters far from zero
    for _ in range(n_inputs):
        h, w = (int(v) for v in rng.integers(8, 48, 2))
        img = Tensor(rng.random((int(rng.integers(1, 3)), 3, h, w)))
        a = backbone_forward(img, model.store, model.backbone, cfg)
        b = backbone_forward(img, model.store, model.backbone, None)
        if any(x.data.tobytes() != y.data.tobytes() for x, y in zip(a.features, b.features)):
            return False
    return True


def zero_adapter_ok(structure, n_inputs=20):
    rng = np.random.default_rng(7)
    C, d, k = 16, 8, 5
    zero = {n: Tensor(np.zeros(s)) for n, s in {
        "down_w": (C, d), "down_b": (d,), "dw_w": (d, 1, k, k), "dw_b": (d,),
        "pw_w": (d, d, 1, 1), "pw_b": (d,), "up_w": (d, C), "up_b": (C,)}.items()}
    for _ in range(n_inputs):
        x = Tensor(rng.standard_normal((2, 36, C)) * 10)
        if tuna_forward(x, zero, (6, 6)).data.tobytes() != x.data.tobytes():
            return False
    if structure == "sequential":
        # a zero adapter leaves the scaled vanilla block untouched whatever s2 is
        model = build_model(toy_config(), HeadConfig(32, 3), TunaConfig(structure=structure), "tuna", seed=0)
        host = model.store.group("backbone.stages.0.blocks.0")
        host["s1"].data[...] = 1.0
        host["s2"].data[...] = 0.7
        z = Tensor(rng.standard_normal((1, 64, 8)))
        zero8 = {n: Tensor(np.zeros_like(t.data)) for n, t in model.store.group("tuna.stages.0.blocks.0").items()}
        with_adapter = block_forward(z, host, zero8, TunaConfig(structure=structure), (8, 8), 1, 4, False)
        host["s2"].data[...] = 0.0
        without = block_forward(z, host, zero8, TunaConfig(structure=structure), (8, 8), 1, 4, False)
        return with_adapter.data.tobytes() == without.data.tobytes()
    return True


def freeze_ok(freeze_runs, structure):
    run, fp_fresh, same_bytes = freeze_runs[structure]
    res = run.result
    ok = res.fingerprint_before == res.fingerprint_after == fp_fresh == load_checkpoint(run.checkpoint).fingerprint
    ok = ok and same_bytes
    # a freeze-mask bug (frozen tensor recording gradients) must abort the run
    cfg = config(f"structure_{structure}")
    model = model_from_config(cfg, 0)
    model.store["backbone.stages.2.blocks.1.attn.qkv.w"].requires_grad = True
    try:
        train(model, load_data(cfg), TrainConfig(iters=1, batch=2, seed=0))
        aborted = False
    except ContractError:
        aborted = True
    return ok and aborted, f"fingerprint {res.fingerprint_after:016x}, final loss {res.final_loss:.4f}"


def overfit_ok(overfit, name):
    run, seconds = overfit[name]
    m = run.result.metrics
    return m["mIoU"] >= 0.95 and run.result.final_loss < 0.1 and seconds < 600, m["mIoU"], run.result.final_loss, seconds


# -- criteria -------------------------------------------------------------

def test_criterion_1_gradient_correctness(criterion):
    ok, worst, seconds, results = gradcheck_ok()
    names = {r.name for r in results}
    ok = ok and worst < TOLERANCE and seconds < 120
    ok = ok and {"tuna_forward", "tuna_block_parallel", "head_loss"} <= names
    assert criterion(1, "gradient correctness", ok, f"{len(results)} checks, max rel err {worst:.2e}, {seconds:.1f}s")


def test_criterion_2_neutral_injection(criterion):
    ok = neutral_equivalence_ok("parallel")
    assert criterion(2, "neutral-injection equivalence", ok, "20 random inputs, bit-exact")


def test_criterion_3_zero_adapter_identity(criterion):
    ok = zero_adapter_ok("parallel")
    assert criterion(3, "zero-adapter identity", ok, "20 random inputs, exact")


def test_criterion_4_freeze_invariance(criterion, freeze_runs):
    ok, detail = freeze_ok(freeze_runs, "parallel")
    assert criterion(4, "freeze invariance", ok, f"300 iters, {detail}")


def test_criterion_5_parameter_accounting(criterion):
    layout = full_layout(swin_large(), HeadConfig(num_classes=104), TunaConfig(), "tuna")
    adapters = count_params(layout, "adapters_only")
    backbone = count_params(backbone_layout(swin_large()))
    frac = adapters / backbone
    ok = adapters == 4_336_664 and frac < 0.03
    assert criterion(5, "parameter accounting", ok, f"adapters_only={adapters}, {100 * frac:.2f}% of backbone")


def test_criterion_6_hierarchical_arms(criterion, tmp_path):
    ok = True
    for ref in (TunaConfig(), TunaConfig(bottleneck_dims=[16, 16, 24, 48])):
        bb = swin_large() if ref.bottleneck_dims[0] == 64 else toy_config()
        for name, arm in ablation_arms(ref).items():
            shapes = {i.name: i.shape for i in tuna_layout(bb, arm)}
            for i in range(4):
                k = ref.kernel_sizes[i] if arm.adaptive_convolution else ref.kernel_sizes[3]
                d = ref.bottleneck_dims[i] if arm.adaptive_embedding else ref.bottleneck_dims[0]
                for j in range(bb.depths[i]):
                    ok &= shapes[f"tuna.stages.{i}.blocks.{j}.dw_w"] == (d, 1, k, k)
                    ok &= shapes[f"tuna.stages.{i}.blocks.{j}.down_w"] == (bb.embed_dims[i], d)
    losses = {}
    for conv in ("fixed", "adaptive"):
        for dim in ("fixed", "adaptive"):
            name = f"hier_conv-{conv}_dim-{dim}"
            run = run_training(config(name), tmp_path / name)
            stage0 = run.model.store["tuna.stages.0.blocks.0.dw_w"].shape
            stage3 = run.model.store["tuna.stages.3.blocks.0.dw_w"].shape
            k0 = 7 if conv == "adaptive" else 3
            ok &= stage0 == (16, 1, k0, k0)
            ok &= stage3[0] == (48 if dim == "adaptive" else 16)
            losses[name] = run.result.final_loss
            ok &= run.result.final_loss < LN3
    detail = ", ".join(f"{k[5:]}={v:.3f}" for k, v in losses.items())
    assert criterion(6, "hierarchical adaptation arms", bool(ok), f"final loss {detail}")


def test_criterion_7_overfit(criterion, overfit):
    ok, miou, loss, seconds = overfit_ok(overfit, "structure_parallel")
    probe = overfit["linear_probe"][0].result.metrics["mIoU"]
    ok = ok and probe < miou
    assert criterion(7, "overfit smoke test", ok,
                     f"mIoU={miou:.4f} loss={loss:.4f} in {seconds:.0f}s; linear probe mIoU={probe:.4f}")


class _FixedModel:
    """Stand-in model whose logits are one-hot predictions looked up by image."""

    def __init__(self, preds, K):
        self.head = HeadConfig(num_classes=K)
        self.preds = preds

    def __call__(self, image, training=False, out_size=None):
        pred = self.preds[int(image[0, 0, 0, 0])]
        return Tensor(np.eye(self.head.num_classes)[pred].transpose(2, 0, 1)[None])


def test_criterion_8_metric_oracle(criterion):
    rng = np.random.default_rng(8)
    K = 5
    preds, samples = [], []
    for i in range(100):
        h, w = (int(v) for v in rng.integers(3, 12, 2))
        gt = rng.integers(0, K, (h, w))
        gt[rng.random((h, w)) < 0.1] = 255
        preds.append(rng.integers(0, K, (h, w)))
        samples.append(SampleRecord(np.full((3, h, w), float(i)), gt, str(i)))
    m = evaluate(_FixedModel(preds, K), Dataset(samples, K))
    counts = np.zeros((K, K), dtype=np.int64)
    for p, s in zip(preds, samples):
        for a, b in zip(p.ravel(), s.mask.ravel()):
            if b != 255:
                counts[b, a] += 1
    ok = np.array_equal(m["confusion"].counts, counts)
    tp = np.diag(counts)
    iou = [tp[k] / (counts[k].sum() + counts[:, k].sum() - tp[k]) for k in range(K)]
    acc = [tp[k] / counts[k].sum() for k in range(K)]
    ok &= m["mIoU"] == sum(iou) / K and m["mAcc"] == sum(acc) / K and m["aAcc"] == tp.sum() / counts.sum()
    hand = ConfusionMatrix(2).update(np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1])).summary()
    ok &= abs(hand["mIoU"] - 0.58333333333) < 1e-10 and abs(hand["mAcc"] - 0.83333333333) < 1e-10
    ok &= abs(hand["aAcc"] - 0.75) < 1e-10
    assert criterion(8, "metric oracle", bool(ok), "100 random pairs with ignore_index, hand example")


def test_criterion_9_dataset_statistics(criterion):
    areas = np.random.default_rng(9).integers(1, 5_000_000, 1000).astype(float)
    slow = np.abs(areas[:, None] - areas[None, :]).sum() / (2 * areas.size**2 * areas.mean())
    ok = gini_coefficient([1, 3]) == 0.25 and resolution_range_ratio([100, 300]) == 3.0
    ok &= abs(gini_coefficient(areas) - slow) < 1e-12
    ok &= gini_coefficient([640 * 480] * 7) == 0.0
    st = dataset_stats([100, 300])
    ok &= st.format() == "n=2 r_range=3.0 gini=0.25 mean_area=200.0"
    assert criterion(9, "dataset statistics", bool(ok), f"fast vs O(n^2) diff {abs(gini_coefficient(areas) - slow):.1e}; corpus values need local data")


def test_criterion_10_determinism(criterion, tmp_path, capsys):
    args = ["--config", "toy", "--set", "train.iters=40", "--set", "train.eval_interval=20"]
    codes = [main(["train", *args, "--out", str(tmp_path / r)]) for r in ("a", "b")]
    capsys.readouterr()
    logs = [(tmp_path / r / "metrics.log").read_bytes() for r in ("a", "b")]
    ckpts = [(tmp_path / r / "checkpoint.tuna").read_bytes() for r in ("a", "b")]
    ok = codes == [0, 0] and logs[0] == logs[1] and ckpts[0] == ckpts[1] and len(logs[0]) > 0
    assert criterion(10, "determinism", ok, f"{len(logs[0])}-byte log, {len(ckpts[0])}-byte checkpoint, byte-identical")


def test_criterion_11_parallel_and_sequential(criterion, overfit, freeze_runs):
    parts = {}
    parts["1"] = gradcheck_ok(["tuna_block_parallel", "tuna_block_sequential"])[0]
    parts["2"] = all(neutral_equivalence_ok(s) for s in STRUCTURES)
    parts["3"] = all(zero_adapter_ok(s) for s in STRUCTURES)
    parts["4"] = all(freeze_ok(freeze_runs, s)[0] for s in STRUCTURES)
    fits = {s: overfit_ok(overfit, f"structure_{s}") for s in STRUCTURES}
    parts["7"] = all(f[0] for f in fits.values())
    detail = "; ".join(f"{s} mIoU={f[1]:.4f} loss={f[2]:.4f}" for s, f in fits.items())
    failed = [k for k, v in parts.items() if not v]
    assert criterion(11, "parallel vs sequential", not failed,
                     detail + (f"; failed criteria {','.join(failed)}" if failed else ""))
