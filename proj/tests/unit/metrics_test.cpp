#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oodperm/error.hpp"
#include "oodperm/metrics.hpp"
#include "oracles.hpp"
#include "util.hpp"

using namespace oodperm;

namespace {

MetricSpec spec(std::string name, MetricKind kind, std::vector<ColumnSelector> inputs = {},
                std::map<std::string, double> params = {}) {
    MetricSpec s;
    s.name = std::move(name);
    s.kind = kind;
    s.inputs = std::move(inputs);
    s.params = std::move(params);
    return s;
}

std::vector<MetricVector> vectors(const std::vector<std::vector<double>>& rows, std::vector<std::string> names) {
    std::vector<MetricVector> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.push_back({"s" + std::to_string(i), rows[i], names});
    }
    return out;
}

}  // namespace

TEST(ReconstructionError, Examples) {
    const std::vector<double> x = {0.3, -1.2, 4.0};
    EXPECT_EQ(reconstruction_error(x, x, ReconMeasure::l2), 0.0);
    EXPECT_NEAR(reconstruction_error(x, x, ReconMeasure::ip), 0.0, 1e-15);
    const std::vector<double> a = {1, 0}, b = {0, 1};
    EXPECT_NEAR(reconstruction_error(a, b, ReconMeasure::l2), std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(reconstruction_error(a, b, ReconMeasure::ip), 1.0, 1e-15);
    const std::vector<double> zero = {0, 0};
    EXPECT_EQ(reconstruction_error(zero, a, ReconMeasure::ip), 1.0);
    EXPECT_THROW(reconstruction_error(x, a, ReconMeasure::l2), DataError);
}

TEST(ReconstructionError, SelfErrorIsZeroForRandomVectors) {
    oracle::Gen gen(3);
    for (int t = 0; t < 100; ++t) {
        const auto x = gen.rows(1, gen.index(1, 30))[0];
        if (std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; })) {
            continue;
        }
        EXPECT_EQ(reconstruction_error(x, x, ReconMeasure::l2), 0.0);
        EXPECT_NEAR(reconstruction_error(x, x, ReconMeasure::ip), 0.0, 1e-15);
    }
}

TEST(ManifoldDistance, ConstantIteratesGiveZero) {
    const Matrix c(11, 3, 2.5);
    const auto d = manifold_distance(c, c, c);
    EXPECT_EQ(d.x, 0.0);
    EXPECT_EQ(d.z, 0.0);
    EXPECT_EQ(d.y, 0.0);
}

TEST(ManifoldDistance, ThreeFourFive) {
    Matrix x(3, 2, 0.0);
    x(1, 0) = 100.0;  // intermediate steps do not matter
    x(2, 0) = 3.0;
    x(2, 1) = 4.0;
    const Matrix z(3, 1, 1.0);
    const auto d = manifold_distance(x, z, z);
    EXPECT_EQ(d.x, 5.0);
    EXPECT_EQ(iterate_offset(x, 1), 100.0);
}

TEST(ManifoldDistance, LengthMismatchThrows) {
    EXPECT_THROW(manifold_distance(Matrix(3, 2), Matrix(4, 2), Matrix(3, 2)), DataError);
    EXPECT_THROW(manifold_distance(Matrix(1, 2), Matrix(1, 2), Matrix(1, 2)), DataError);
    const std::vector<double> flat = {1, 2, 3, 4, 5};
    EXPECT_THROW(unflatten_iterates(flat, 2), DataError);
}

TEST(ManifoldDistance, UnflattenIsStepMajor) {
    const std::vector<double> flat = {1, 2, 3, 4, 5, 6};
    const auto m = unflatten_iterates(flat, 3);
    EXPECT_EQ(m.rows(), 3u);
    EXPECT_EQ(m.cols(), 2u);
    EXPECT_EQ(m(2, 0), 5.0);
    EXPECT_EQ(m(1, 1), 4.0);
}

TEST(Softmax, Examples) {
    const std::vector<double> uniform(10, 0.7);
    EXPECT_NEAR(one_minus_max_softmax(uniform), 0.9, 1e-15);
    const std::vector<double> saturated = {1000, 0};
    EXPECT_NEAR(one_minus_max_softmax(saturated), 0.0, 1e-12);
    const std::vector<double> l = {1, 2, 3};
    EXPECT_NEAR(one_minus_max_softmax(l), 0.33476, 1e-5);
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    EXPECT_NEAR(one_minus_max_softmax(l), 1.0 - e3 / (e1 + e2 + e3), 1e-15);
}

TEST(Softmax, Errors) {
    const std::vector<double> one = {1.0};
    EXPECT_THROW(one_minus_max_softmax(one), DataError);
    const std::vector<double> bad = {1.0, std::nan("")};
    EXPECT_THROW(one_minus_max_softmax(bad), DataError);
}

TEST(Softmax, ShiftInvariance) {
    oracle::Gen gen(12);
    for (int t = 0; t < 200; ++t) {
        auto l = gen.rows(1, gen.index(2, 12))[0];
        const double base = one_minus_max_softmax(l);
        const double c = gen.uniform(-50, 50);
        for (auto& v : l) {
            v += c;
        }
        EXPECT_NEAR(one_minus_max_softmax(l), base, 1e-12);
    }
}

TEST(Edl, Examples) {
    const std::vector<double> sum_one = {0.25, 0.25, 0.5};
    EXPECT_EQ(edl_uncertainty(sum_one), 0.0);
    const std::vector<double> zeros(4, 0.0);
    EXPECT_EQ(edl_uncertainty(zeros), 1.0);
    const std::vector<double> b = {0.2, 0.3};
    EXPECT_NEAR(edl_uncertainty(b), 0.5, 1e-15);
    const std::vector<double> big = {2.0, 1.5};
    EXPECT_EQ(edl_uncertainty(big), -2.5);
    const std::vector<double> bad = {std::numeric_limits<double>::infinity()};
    EXPECT_THROW(edl_uncertainty(bad), DataError);
}

TEST(Normalization, ZeroTwoGivesMeanOneStdOne) {
    const auto val = vectors({{0.0, 10.0}, {2.0, 10.0}}, {"m", "flat"});
    const auto p = fit_normalization(val);
    EXPECT_EQ(p.mean[0], 1.0);
    EXPECT_EQ(p.std[0], 1.0);
    EXPECT_EQ(p.std[1], kStdFloor);
    const auto out = apply_normalization(p, vectors({{3.0, 10.0}}, {"m", "flat"}));
    EXPECT_EQ(out[0].values[0], 2.0);
    EXPECT_EQ(out[0].values[1], 0.0);
}

TEST(Normalization, Errors) {
    EXPECT_THROW(fit_normalization(vectors({{1.0}}, {"m"})), DataError);
    const auto p = fit_normalization(vectors({{1.0}, {2.0}}, {"m"}));
    EXPECT_THROW(apply_normalization(p, vectors({{1.0}}, {"other"})), DataError);
}

TEST(NormalizationProperty, ValidationBecomesZeroMeanUnitVariance) {
    oracle::Gen gen(31);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = gen.index(2, 200);
        const std::size_t l = gen.index(1, 6);
        std::vector<std::vector<double>> rows(n, std::vector<double>(l));
        std::vector<double> scale(l), shift(l);
        for (std::size_t j = 0; j < l; ++j) {
            scale[j] = gen.uniform(0.01, 100.0);
            shift[j] = gen.uniform(-1000, 1000);
        }
        for (auto& r : rows) {
            for (std::size_t j = 0; j < l; ++j) {
                r[j] = shift[j] + scale[j] * gen.normal();
            }
        }
        const auto val = vectors(rows, std::vector<std::string>(l, "m"));
        const auto z = apply_normalization(fit_normalization(val), val);
        for (std::size_t j = 0; j < l; ++j) {
            double mean = 0.0, var = 0.0;
            for (const auto& v : z) {
                mean += v.values[j];
            }
            mean /= static_cast<double>(n);
            for (const auto& v : z) {
                var += (v.values[j] - mean) * (v.values[j] - mean);
            }
            var /= static_cast<double>(n);
            EXPECT_NEAR(mean, 0.0, 1e-9);
            EXPECT_NEAR(var, 1.0, 1e-6);
        }
        // Order preserving per metric.
        for (std::size_t i = 1; i < n; ++i) {
            for (std::size_t j = 0; j < l; ++j) {
                EXPECT_EQ(rows[i][j] < rows[i - 1][j], z[i].values[j] < z[i - 1].values[j]);
            }
        }
    }
}

namespace {

LatentResponseSet raw_fixture() {
    return parse_csv(
        "id,group,f0:feature,f1:feature,l0:logit,l1:logit,l2:logit,b0:belief,b1:belief,i0:image,i1:image,"
        "r0:reconstruction,r1:reconstruction,x0:iterate-x,x1:iterate-x,x2:iterate-x,x3:iterate-x,m:metric\n"
        "a,g,0,1,1,2,3,0.2,0.3,1,0,0,1,0,0,3,4,7.5\n"
        "b,h,1,1,0,0,0,0.5,0.5,2,2,2,2,1,1,1,1,-1\n",
        "raw");
}

AnchorIndex fixture_index() {
    return AnchorIndex(Matrix(2, 2, std::vector<double>{0, 0, 1, 0}), {"f0", "f1"}, "anchors");
}

}  // namespace

TEST(ComputeMetrics, ShapeAndValues) {
    const auto raw = raw_fixture();
    const auto index = fixture_index();
    const std::vector<MetricSpec> specs = {
        spec("knn", MetricKind::knn_l2, {}, {{"k", 2}}),
        spec("soft", MetricKind::one_minus_max_softmax),
        spec("edl", MetricKind::edl_uncertainty),
        spec("rec", MetricKind::recon_l2),
        spec("recip", MetricKind::recon_ip),
        spec("man", MetricKind::manifold_x, {}, {{"T", 1}}),
        spec("pass", MetricKind::passthrough),
    };
    MetricDiagnostics diag;
    const auto out = compute_metrics(raw, specs, &index, &diag);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].names, (std::vector<std::string>{"knn", "soft", "edl", "rec", "recip", "man", "pass"}));
    EXPECT_EQ(out[0].sample_id, "a");
    EXPECT_NEAR(out[0].values[0], (1.0 + std::sqrt(2.0)) / 2.0, 1e-12);
    EXPECT_NEAR(out[0].values[1], 0.33476, 1e-5);
    EXPECT_NEAR(out[0].values[2], 0.5, 1e-15);
    EXPECT_NEAR(out[0].values[3], std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(out[0].values[4], 1.0, 1e-15);
    EXPECT_EQ(out[0].values[5], 5.0);
    EXPECT_EQ(out[0].values[6], 7.5);
    EXPECT_EQ(out[1].values[6], -1.0);
    EXPECT_NEAR(out[1].values[1], 2.0 / 3.0, 1e-15);
    EXPECT_EQ(diag.knn_clamped, 0u);
}

TEST(ComputeMetrics, HundredRowsThreeMetrics) {
    oracle::Gen gen(100);
    std::string csv = "id,group,f0,f1,l0:logit,l1:logit,m:metric\n";
    for (int i = 0; i < 100; ++i) {
        csv += "r" + std::to_string(i) + ",g";
        for (int j = 0; j < 5; ++j) {
            csv += "," + std::to_string(gen.normal());
        }
        csv += "\n";
    }
    const auto raw = parse_csv(csv, "raw");
    const auto index = fixture_index();
    const std::vector<MetricSpec> specs = {spec("knn", MetricKind::knn_cosine), spec("soft", MetricKind::one_minus_max_softmax),
                                           spec("pass", MetricKind::passthrough)};
    MetricDiagnostics diag;
    const auto out = compute_metrics(raw, specs, &index, &diag);
    ASSERT_EQ(out.size(), 100u);
    for (const auto& v : out) {
        EXPECT_EQ(v.values.size(), 3u);
    }
    EXPECT_EQ(diag.knn_clamped, 100u);  // default k = 5 exceeds the 2 anchors
    EXPECT_EQ(diag.cosine_zero_norm, 100u);
}

TEST(ComputeMetrics, MultiColumnPassthroughAndIntermediates) {
    const auto raw = raw_fixture();
    const std::vector<MetricSpec> specs = {
        spec("p", MetricKind::passthrough, {ColumnSelector::of_names({"f0", "l2"})}),
        spec("man", MetricKind::manifold_x, {}, {{"T", 3}, {"emit_intermediate", 1}}),
    };
    EXPECT_EQ(metric_names(raw, specs), (std::vector<std::string>{"p/f0", "p/l2", "man", "man@1", "man@2"}));
    const auto out = compute_metrics(raw, specs, nullptr);
    // Each iterate-x step of row a is one scalar: 0, 0, 3, 4.
    EXPECT_EQ(out[0].values, (std::vector<double>{0, 3, 4, 0, 3}));
}

TEST(ComputeMetrics, Errors) {
    const auto raw = raw_fixture();
    const std::vector<MetricSpec> knn = {spec("knn", MetricKind::knn_l2)};
    EXPECT_THROW(compute_metrics(raw, knn, nullptr), ConfigError);
    const std::vector<MetricSpec> none;
    EXPECT_THROW(compute_metrics(raw, none, nullptr), ConfigError);
    const std::vector<MetricSpec> wrong_kind = {spec("s", MetricKind::one_minus_max_softmax,
                                                     {ColumnSelector::of_kind(ColumnKind::image)})};
    EXPECT_THROW(compute_metrics(raw, wrong_kind, nullptr), DataError);
    const std::vector<MetricSpec> recon_wrong = {
        spec("r", MetricKind::recon_l2,
             {ColumnSelector::of_kind(ColumnKind::feature), ColumnSelector::of_kind(ColumnKind::reconstruction)})};
    EXPECT_THROW(compute_metrics(raw, recon_wrong, nullptr), DataError);
    const std::vector<MetricSpec> missing = {spec("p", MetricKind::passthrough, {ColumnSelector::of_names({"nope"})})};
    EXPECT_THROW(compute_metrics(raw, missing, nullptr), DataError);
    const std::vector<MetricSpec> bad_t = {spec("m", MetricKind::manifold_x, {}, {{"T", 2}})};
    EXPECT_THROW(compute_metrics(raw, bad_t, nullptr), DataError);
    const std::vector<MetricSpec> bad_k = {spec("knn", MetricKind::knn_l2, {}, {{"k", 0}})};
    const auto index = fixture_index();
    EXPECT_THROW(compute_metrics(raw, bad_k, &index), ConfigError);
    const AnchorIndex other(Matrix(1, 2, 1.0), {"u", "v"}, "other");
    EXPECT_THROW(compute_metrics(raw, knn, &other), DataError);
}

TEST(ComputeMetrics, IndependentOfRowOrder) {
    const auto raw = read_response_set(testutil::fixture("test.csv"));
    const auto anchors = read_response_set(testutil::fixture("anchors.csv"));
    const auto index = build_index(anchors, anchors.columns_of_kind(ColumnKind::feature));
    const std::vector<MetricSpec> specs = {spec("knn", MetricKind::knn_l2), spec("rec", MetricKind::recon_ip),
                                           spec("mx", MetricKind::manifold_x)};
    std::vector<std::size_t> order(raw.size());
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    const auto shuffled = raw.subset(order, "raw");
    const auto a = compute_metrics(raw, specs, &index);
    const auto b = compute_metrics(shuffled, specs, &index);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i], b[a.size() - 1 - i]);
    }
}

TEST(ColumnSelectorTest, ParseResolveAndPrint) {
    const auto raw = raw_fixture();
    const auto kind = ColumnSelector::parse("kind:logit");
    EXPECT_EQ(kind.resolve(raw), (std::vector<std::size_t>{2, 3, 4}));
    EXPECT_EQ(kind.to_string(), "kind:logit");
    const auto names = ColumnSelector::parse("i1, f0");
    EXPECT_EQ(names.resolve(raw), (std::vector<std::size_t>{8, 0}));
    EXPECT_EQ(ColumnSelector::parse(names.to_string()), names);
    EXPECT_THROW(ColumnSelector::parse("kind:colour"), ConfigError);
    EXPECT_THROW(ColumnSelector::parse("a,,b"), ConfigError);
    EXPECT_THROW(ColumnSelector::of_kind(ColumnKind::iterate_z).resolve(raw), DataError);
}

TEST(MetricsExport, SetRoundTrip) {
    const auto v = vectors({{1.0, 2.0}, {3.0, 4.0}}, {"a", "b"});
    const std::vector<std::string> groups = {"g", "h"};
    const auto set = metrics_to_set("m", v, groups);
    EXPECT_EQ(set.columns()[1], (Column{"b", ColumnKind::metric}));
    EXPECT_EQ(metrics_from_set(set), v);
    EXPECT_EQ(to_matrix(v)(1, 0), 3.0);
}

namespace {

void expect_matches_golden(const std::string& raw_file, const std::string& golden_file) {
    const auto raw = read_response_set(testutil::fixture(raw_file));
    const auto golden = read_response_set(testutil::fixture(golden_file));
    const auto anchors = read_response_set(testutil::fixture("anchors.csv"));
    const auto index = build_index(anchors, anchors.columns_of_kind(ColumnKind::feature));
    const std::vector<MetricSpec> specs = {
        spec("knn_l2", MetricKind::knn_l2),           spec("knn_cos", MetricKind::knn_cosine),
        spec("rec_l2", MetricKind::recon_l2),         spec("rec_ip", MetricKind::recon_ip),
        spec("man_x", MetricKind::manifold_x),        spec("man_z", MetricKind::manifold_z),
        spec("man_y", MetricKind::manifold_y),        spec("msp", MetricKind::one_minus_max_softmax),
        spec("edl", MetricKind::edl_uncertainty),     spec("aux", MetricKind::passthrough),
    };
    const auto out = compute_metrics(raw, specs, &index);
    ASSERT_EQ(out.size(), golden.size());
    ASSERT_EQ(out[0].names.size(), golden.dimension());
    for (std::size_t i = 0; i < out.size(); ++i) {
        ASSERT_EQ(out[i].sample_id, golden.ids()[i]);
        for (std::size_t j = 0; j < golden.dimension(); ++j) {
            const double want = golden.values()(i, j);
            EXPECT_NEAR(out[i].values[j], want, 1e-12 * std::max(1.0, std::abs(want)))
                << golden.columns()[j].name << " row " << i;
        }
    }
}

}  // namespace

TEST(ComputeMetrics, MatchesGoldenValidation) {
    expect_matches_golden("validation.csv", "golden_validation_metrics.csv");
}

TEST(ComputeMetrics, MatchesGoldenTest) {
    expect_matches_golden("test.csv", "golden_test_metrics.csv");
}
