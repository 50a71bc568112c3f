import numpy as np
import pytest

from nvsurv.cnn import ARCHITECTURES, LayerSpec, Network, build_architecture
from nvsurv.cost import (
    COST_CSV_HEADER,
    counted_forward,
    cost_csv,
    cost_table,
    flops,
    flops_instrumented,
    layer_flops,
    memory,
)

from oracles import random_stack


def single(spec, input_shape):
    return Network("x", [spec], input_shape).init_weights(0)


def test_fc_flops():
    assert layer_flops(LayerSpec("FC", units=4), (784,), (4,)) == 6276


def test_1x1_conv_flops():
    assert flops(single(LayerSpec("CONV2D", (1, 1), filters=1), (10, 10, 1))) == 300


def test_sepconv_vs_conv_flops():
    # 5x5 kernels, Cin=6, F=16, 15x15 output (19x19 input)
    sep = layer_flops(LayerSpec("SEPCONV", (5, 5), filters=16), (19, 19, 6), (15, 15, 16))
    conv = layer_flops(LayerSpec("CONV2D", (5, 5), filters=16), (19, 19, 6), (15, 15, 16))
    assert sep == 67_500 + 43_200 + 3_600 == 114_300
    assert conv == 1_080_000 + 3_600
    assert 9 < conv / sep < 10


def test_pool_gap_softmax_flops():
    assert layer_flops(LayerSpec("AVGPOOL", (2, 2)), (15, 15, 16), (7, 7, 16)) == 7 * 7 * 16 * 4
    assert layer_flops(LayerSpec("GLOBALAVGPOOL"), (7, 7, 16), (16,)) == 784
    assert layer_flops(LayerSpec("SOFTMAX"), (4,), (4,)) == 20
    assert layer_flops(LayerSpec("FLATTEN"), (7, 7, 16), (784,)) == 0


BL_FLOPS = {
    "BL": 2_179_684, "BN": 523_040, "MA": 1_210_384, "TN": 968_817,
    "LG": 1_996_148, "LK": 3_058_308, "SN": 1_976_760,
}


@pytest.mark.parametrize("label", list(ARCHITECTURES))
def test_flops_match_instrumented(label):
    net = build_architecture(label, 2).init_weights(0)
    assert flops(net) == flops_instrumented(net) == BL_FLOPS[label]


def test_instrumented_forward_matches_network(rng):
    net = build_architecture("BN", 2).init_weights(0)
    x = rng.random((42, 42, 2))
    np.testing.assert_allclose(counted_forward(net, x), net.forward(x[None])[0], atol=1e-12)


def test_empty_network_has_no_flops():
    assert flops_instrumented(Network("empty", [], (4, 4, 1))) == 0
    assert flops(([], (4, 4, 1))) == 0


def test_random_stacks(rng):
    for _ in range(30):
        specs, shape = random_stack(rng)
        net = Network("r", specs, shape).init_weights(int(rng.integers(0, 100)))
        assert flops(net) == flops_instrumented(net)


def test_adding_layers_never_decreases_flops(rng):
    for _ in range(30):
        specs, shape = random_stack(rng)
        totals = [flops((specs[:i], shape)) for i in range(len(specs) + 1)]
        assert totals == sorted(totals)


def test_sn_flops_exceed_tn():
    assert flops(build_architecture("SN", 2)) > flops(build_architecture("TN", 2))


def test_avgpool_tile_example():
    net = Network("pool", [LayerSpec("AVGPOOL", (2, 2))], (42, 42, 1))
    r = memory(net, "tiled", tile=21)
    assert r.act_bytes_tiled == 21 * 21 + 10 * 10 == 541
    assert r.param_bytes == 0
    assert r.total == 541
    assert memory(net, "layerwise").total == 42 * 42 + 21 * 21


@pytest.mark.parametrize("mode", ["tiled", "layerwise"])
def test_bl_bn_ma_share_memory(mode):
    totals = {lab: memory(build_architecture(lab, 2), mode).total for lab in ("BL", "BN", "MA")}
    assert len(set(totals.values())) == 1, totals


def test_bl_memory_breakdown():
    r = memory(build_architecture("BL", 2))
    assert r.param_bytes == 107_426
    # the 784->120 layer dominates: its weights plus its input and output buffers
    assert r.total_tiled == r.total_layerwise == 784 * 120 + 120 + 784 + 120 == 95_104


def test_sn_memory_reduction():
    bl = memory(build_architecture("BL", 2)).total
    sn = memory(build_architecture("SN", 2)).total
    assert sn == 3_928
    assert sn <= 0.5 * bl


def test_byte_widths_scale():
    net = build_architecture("SN", 2)
    r1 = memory(net, act_byte_width=1, weight_byte_width=1)
    r4 = memory(net, act_byte_width=4, weight_byte_width=4)
    assert r4.param_bytes == 4 * r1.param_bytes
    assert r4.total == 4 * r1.total


def test_tiled_activations_below_layerwise_for_conv_trunk():
    for label in ARCHITECTURES:
        r = memory(build_architecture(label, 2), strict=False)
        assert r.act_bytes_tiled <= r.act_bytes_layerwise


def test_fc_free_trunk_tile_memory_is_size_independent():
    specs = [LayerSpec("CONV2D", (3, 3), filters=4), LayerSpec("AVGPOOL", (2, 2)),
             LayerSpec("CONV2D", (3, 3), filters=4)]
    small = memory((specs, (42, 42, 2)), tile=21)
    large = memory((specs, (168, 168, 2)), tile=21)
    assert small.act_bytes_tiled == large.act_bytes_tiled
    assert large.act_bytes_layerwise > small.act_bytes_layerwise


def test_tile_errors():
    net = build_architecture("BL", 2)
    with pytest.raises(ValueError, match="exceeds"):
        memory(net, tile=43)
    with pytest.raises(ValueError):
        memory(net, tile=0)
    with pytest.raises(ValueError, match="shrinks"):
        memory(net, tile=4)
    with pytest.raises(ValueError, match="shrinks"):
        memory(build_architecture("LK", 2), tile=21)
    with pytest.raises(ValueError):
        memory(net, mode="streaming")


def test_non_strict_tile_charges_minimum_window():
    r = memory(build_architecture("LK", 2), tile=21, strict=False)
    assert r.total == 69_936


def test_cost_csv_has_seven_rows():
    text = cost_csv(cost_table())
    lines = text.strip().splitlines()
    assert lines[0] == ",".join(COST_CSV_HEADER)
    rows = [ln.split(",") for ln in lines[1:]]
    assert [r[0] for r in rows] == list(ARCHITECTURES)
    totals = {r[0]: int(r[5]) for r in rows}
    assert totals["BL"] == totals["BN"] == totals["MA"]
    assert int(rows[6][1]) > int(rows[3][1])  # SN flops > TN flops
