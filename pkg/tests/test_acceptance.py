"""End-to-end acceptance suite.

One test per shipped guarantee, in five groups: numerical equivalence with
the independent loop oracles in ``reference.py``, algebraic exactness of the
merge in engineered-redundancy and zero-redundancy limits, integer exactness
of the analytic cost ledger against measured operation counts, statistical
behaviour of the hashing stage, and the accuracy/cost trade-off of the
committed fixture network.  Every numeric expectation here is either
recomputed by an oracle at run time or was produced by one once and frozen
as a literal.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from haste.flops import averaged_components, flops_centering, flops_hashing
from haste.lsh import HashConfig, HyperplaneSet, generate_hyperplanes, hash_batch
from haste.op import HasteConfig, haste_forward
from haste.runner import EvalConfig, evaluate, load_dataset, load_model, predict_logits
from haste.tensors import FeatureMap, FilterBank, conv2d_direct, mac_count_regular

from reference import ref_grouped_forward

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"

COMPONENTS = ("centering", "hashing", "merge_fms", "merge_filters", "reduced_conv")


@pytest.fixture(scope="module")
def graph():
    return load_model((FIXTURE_DIR / "toy_model.hste").read_bytes())


@pytest.fixture(scope="module")
def dataset():
    images, labels, manifest = load_dataset((FIXTURE_DIR / "toy_test.hste").read_bytes())
    return images, labels, manifest


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(float(np.abs(want).max()), 1e-30)
    return float(np.abs(np.asarray(got, dtype=np.float64) - want).max()) / scale


def net_mean_r(report) -> float:
    vals = [row["mean_r"] for row in report.layer_rows if row["mean_r"] is not None]
    return float(np.mean(vals))


class TestOperatorEquivalence:
    def test_matches_grouped_oracle_on_random_instances(self):
        # 100 random 3x3 instances, channel counts up to 16, spatial sides
        # up to 12, 8 or 16 hash bits; odd trials plant duplicated channels.
        # The operator must agree with the independent group-by-group oracle
        # to 1e-4 relative and reproduce its bucket census, within 30 s.
        start = time.monotonic()
        rs = np.random.RandomState(4242)
        for trial in range(100):
            c_in = rs.randint(1, 17)
            c_out = rs.randint(1, 9)
            h = w = rs.randint(3, 13)
            bits = int(rs.choice([8, 16]))
            x = rs.randn(c_in, h, w).astype(np.float32)
            if trial % 2 == 1 and c_in >= 2:
                half = c_in // 2
                x[half:] = x[: c_in - half]
            f = rs.randn(c_out, c_in, 3, 3).astype(np.float32)
            cfg = HasteConfig(hash=HashConfig(bits, 0.5, 25, trial))
            planes = generate_hyperplanes(cfg.hash)
            out, stats, _ = haste_forward(FeatureMap(x), FilterBank(f), cfg, planes)
            ref, census = ref_grouped_forward(x, f, planes.planes, 1, (1, 1, 1, 1))
            assert out.data.shape == (c_out, h, w)
            assert rel_err(out.data, ref) < 1e-4, trial
            assert np.array_equal(stats.r_per_patch, np.array(census["r"])), trial
            assert np.array_equal(stats.m_per_patch, np.array(census["m"])), trial
        assert time.monotonic() - start < 30.0

    def test_duplicate_channel_groups_merge_exactly(self):
        # With channels duplicated in known groups the merged path is a pure
        # regrouping of the dense sum: outputs match the direct convolution
        # and the measured mean r equals 1 - groups/channels exactly.
        for gen_seed, c_in, picks, groups in (
            (22, 6, [0, 0, 0, 0, 0, 0], 1),
            (23, 8, [0, 0, 0, 1, 1, 2, 2, 2], 3),
        ):
            rs = np.random.RandomState(gen_seed)
            gens = rs.randn(groups, 7, 7).astype(np.float32)
            x = gens[picks]
            f = rs.randn(4, c_in, 3, 3).astype(np.float32)
            cfg = HasteConfig(hash=HashConfig(16, 0.5, 25, 0))
            planes = generate_hyperplanes(cfg.hash)
            out, stats, _ = haste_forward(FeatureMap(x), FilterBank(f), cfg, planes)
            assert (stats.reduced_per_patch == groups).all()
            assert stats.mean_r == 1 - groups / c_in
            dense = conv2d_direct(FeatureMap(x), FilterBank(f))
            assert rel_err(out.data, dense.data) < 1e-4

    def test_zero_merge_input_is_handled_exactly(self):
        # Antipodal channel pair with power-of-two pixels: centered vectors
        # are opposite strictly-signed patterns, so axis-aligned planes give
        # distinct codes in every patch.  Nothing merges, r is 0 everywhere,
        # and the output must still match the direct convolution.
        vals = 2.0 ** np.arange(36).reshape(6, 6)
        x = np.stack([vals, -vals]).astype(np.float32)
        rs = np.random.RandomState(24)

        f3 = rs.randn(2, 2, 3, 3).astype(np.float32)
        cfg = HasteConfig(hash=HashConfig(25, 0.5, 25, 0))
        out, stats, ledger = haste_forward(
            FeatureMap(x), FilterBank(f3), cfg, HyperplaneSet(np.eye(25, dtype=np.int8))
        )
        assert (stats.r_per_patch == 0.0).all()
        assert ledger.merge_fms == 0 and ledger.merge_filters == 0
        assert rel_err(out.data, conv2d_direct(FeatureMap(x), FilterBank(f3)).data) < 1e-4

        f1 = rs.randn(2, 2, 1, 1).astype(np.float32)
        cfg1 = HasteConfig(hash=HashConfig(9, 0.5, 9, 0))
        out1, stats1, _ = haste_forward(
            FeatureMap(x), FilterBank(f1), cfg1, HyperplaneSet(np.eye(9, dtype=np.int8))
        )
        assert (stats1.r_per_patch == 0.0).all()
        assert rel_err(out1.data, conv2d_direct(FeatureMap(x), FilterBank(f1)).data) < 1e-4


class TestCostModel:
    def test_exact_ledger_matches_measured_counts(self):
        # 20 random layers: every analytic component in exact mode must equal
        # the measured operation count integer-for-integer, and the averaged
        # closed forms must land within 0.5% of the exact total.
        rs = np.random.RandomState(777)
        planes_by_bits = {
            bits: generate_hyperplanes(HashConfig(bits, 0.5, 25, 181)) for bits in (8, 16)
        }
        for trial in range(20):
            c_in = rs.randint(3, 17)
            c_out = rs.randint(2, 9)
            h = w = int(rs.choice([16, 19, 22, 25, 28, 31]))
            bits = int(rs.choice([8, 16]))
            x = rs.randn(c_in, h, w).astype(np.float32)
            if trial % 2 == 1:
                half = c_in // 2
                x[half:] = x[: c_in - half]
            f = rs.randn(c_out, c_in, 3, 3).astype(np.float32)
            cfg = HasteConfig(hash=HashConfig(bits, 0.5, 25, 181))
            _, stats, ledger = haste_forward(
                FeatureMap(x), FilterBank(f), cfg, planes_by_bits[bits]
            )
            assert ledger.mode == "exact"
            for key in COMPONENTS:
                assert getattr(ledger, key) == getattr(ledger.measured, key), (trial, key)
            avg = averaged_components(
                c_in, c_out, h, w, 3, 1, bits, 0.5, stats.patch_count, stats.mean_r, stats.mean_m
            )
            assert abs(avg.total - ledger.total) / ledger.total < 0.005, trial

    def test_formula_spot_values(self):
        assert mac_count_regular(2, 3, 4, 4, 3) == 1728
        assert flops_centering(9, 2, 3, 1) == 900
        assert flops_hashing(9, 2, 16, 3, 1, 0.5) == 3600


class TestHashStatistics:
    def test_bits_are_balanced_on_isotropic_input(self):
        planes = generate_hyperplanes(HashConfig(16, 0.5, 25, 3))
        vecs = np.random.RandomState(8).randn(1000, 25)
        codes = hash_batch(vecs, planes)
        band = 4.0 * math.sqrt(0.25 / 1000)
        for p in range(16):
            frac = float(np.mean((codes >> np.uint64(p)) & np.uint64(1)))
            assert abs(frac - 0.5) <= band, p

    def test_codes_are_invariant_to_positive_scaling(self):
        planes = generate_hyperplanes(HashConfig(16, 0.5, 25, 5))
        rs = np.random.RandomState(13)
        vecs = rs.randn(1000, 25)
        scales = np.exp(rs.uniform(-8.0, 8.0, size=1000))
        assert np.array_equal(hash_batch(vecs, planes), hash_batch(vecs * scales[:, None], planes))

    def test_more_bits_only_refine_the_partition(self):
        # Same generator seed nests plane prefixes, so adding bits can only
        # split buckets: the number of distinct codes must be non-decreasing.
        vecs = np.random.RandomState(12).randn(500, 25)
        prev = 0
        for bits in (4, 8, 12, 16, 20):
            planes = generate_hyperplanes(HashConfig(bits, 0.5, 25, 11))
            distinct = len(np.unique(hash_batch(vecs, planes)))
            assert distinct >= prev, bits
            prev = distinct


class TestFixtureNetwork:
    def test_random_grouping_ablation(self, graph, dataset):
        images, labels, _ = dataset

        # Per-patch parity at the operator: random selection reuses the
        # hashed partition's bucket sizes, so on the same input the census
        # and therefore the analytic cost match exactly.
        conv0 = graph.layers[0]
        cfg_lsh = HasteConfig(hash=HashConfig(16, 0.5, 25, 0))
        cfg_rnd = HasteConfig(hash=HashConfig(16, 0.5, 25, 0), selection_mode="random", random_seed=7)
        planes = generate_hyperplanes(cfg_lsh.hash)
        x = FeatureMap(images[0])
        f = FilterBank(conv0.weights["weight"])
        _, stats_l, ledger_l = haste_forward(x, f, cfg_lsh, planes)
        _, stats_r, ledger_r = haste_forward(x, f, cfg_rnd, planes)
        assert np.array_equal(stats_l.reduced_per_patch, stats_r.reduced_per_patch)
        assert np.array_equal(stats_l.m_per_patch, stats_r.m_per_patch)
        assert ledger_l.total == ledger_r.total

        # Network level on a 250-image subset: equal cost at the first
        # hashed convolution (both modes see the same raw images there) but
        # far worse accuracy for random grouping.
        subset, sublab = images[:250], labels[:250]
        rep_base = evaluate(graph, subset, sublab, EvalConfig(mode="baseline", seeds=(0,)))
        rep_lsh = evaluate(graph, subset, sublab, EvalConfig(mode="haste", bits=16, seeds=(0, 1, 2)))
        rep_rnd = evaluate(graph, subset, sublab, EvalConfig(mode="random", bits=16, seeds=(0, 1, 2)))
        row_l, row_r = rep_lsh.layer_rows[0], rep_rnd.layer_rows[0]
        assert row_l["kind"] == "conv"
        assert row_l["mean_r"] == row_r["mean_r"]
        assert row_l["mean_m"] == row_r["mean_m"]
        assert row_l["flops_analytic"] == row_r["flops_analytic"]

        acc_base = rep_base.accuracy_per_seed[0]
        assert rep_rnd.accuracy_mean < rep_lsh.accuracy_mean
        assert (acc_base - rep_lsh.accuracy_mean) < (acc_base - rep_rnd.accuracy_mean) / 3

    def test_accuracy_cost_tradeoff_meets_thresholds(self, graph, dataset):
        images, labels, _ = dataset
        fixture = graph.manifest["fixture"]
        thresholds = fixture["thresholds"]

        rep_base = evaluate(graph, images, labels, EvalConfig(mode="baseline", seeds=(0,)))
        acc_base = rep_base.accuracy_per_seed[0]
        assert acc_base == fixture["baseline_accuracy"]

        rep = evaluate(
            graph,
            images,
            labels,
            EvalConfig(
                mode="haste",
                bits=thresholds["bits"],
                sparsity=thresholds["sparsity"],
                seeds=(0, 1, 2),
            ),
        )
        assert float(np.mean(rep.reduction_per_seed)) >= thresholds["min_reduction_pct"]
        drop_pp = (acc_base - rep.accuracy_mean) * 100.0
        assert drop_pp <= thresholds["max_accuracy_drop_pp"]

        # At the documented exact-regime width every image keeps its label.
        rep_exact = evaluate(
            graph,
            images,
            labels,
            EvalConfig(
                mode="haste",
                bits=thresholds["exact_bits"],
                sparsity=thresholds["sparsity"],
                seeds=(0, 1, 2),
            ),
        )
        for acc in rep_exact.accuracy_per_seed:
            assert acc == acc_base

    def test_larger_halo_increases_sharing(self, graph, dataset):
        # Bigger halos hash longer vectors over the same K x K core, which
        # separates channels more finely: the network mean r must fall
        # strictly as the halo grows.
        images, labels, _ = dataset
        means = []
        for halo in (1, 2, 3):
            rep = evaluate(
                graph,
                images[:200],
                labels[:200],
                EvalConfig(mode="haste", bits=16, halo=halo, seeds=(0,)),
            )
            means.append(net_mean_r(rep))
        assert means[0] > means[1] > means[2]

    def test_fixture_containers_round_trip(self, graph, dataset):
        # The committed model container validates on load, reproduces the
        # exporter's recorded probe logits through the dense path, and the
        # dataset container stands alone with shapes matching the model.
        probe = graph.manifest["fixture"]["probe"]
        probe_images = graph.extras[probe["images"]]
        probe_logits = graph.extras[probe["logits"]]
        assert probe_images.shape[1:] == graph.input_shape
        for img, want in zip(probe_images, probe_logits):
            got = predict_logits(graph, img)
            assert rel_err(got, want.astype(np.float64)) < 1e-4

        images, labels, manifest = dataset
        assert manifest["dataset"]["num_samples"] == images.shape[0] == labels.shape[0]
        assert images.shape[1:] == graph.input_shape
        n_classes = graph.layers[-1].weights["weight"].shape[0]
        assert 0 <= labels.min() and labels.max() < n_classes
