#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "omniforge/fusion.hpp"

using namespace omniforge;

namespace {

// Plain-loop reference for the whole connector stack, written without Eigen
// expressions so it cannot share bugs with the implementation.
Matrix forward_oracle(const Matrix& x, const ConnectorParams& p) {
    auto linear = [](const Matrix& in, const Matrix& w, const Vector& b) {
        Matrix out(in.rows(), w.cols());
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                double acc = b(c);
                for (Eigen::Index k = 0; k < w.rows(); ++k) acc += in(r, k) * w(k, c);
                out(r, c) = acc;
            }
        }
        return out;
    };
    auto gelu_all = [](Matrix m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                m(r, c) = 0.5 * m(r, c) * (1.0 + std::erf(m(r, c) / std::sqrt(2.0)));
            }
        }
        return m;
    };
    Matrix z3 = linear(gelu_all(linear(gelu_all(linear(x, p.w1, p.b1)), p.w2, p.b2)), p.w3, p.b3);
    Matrix out(z3.rows(), z3.cols());
    for (Eigen::Index r = 0; r < z3.rows(); ++r) {
        double mean = 0.0;
        for (Eigen::Index c = 0; c < z3.cols(); ++c) mean += z3(r, c);
        mean /= static_cast<double>(z3.cols());
        double var = 0.0;
        for (Eigen::Index c = 0; c < z3.cols(); ++c) var += (z3(r, c) - mean) * (z3(r, c) - mean);
        var /= static_cast<double>(z3.cols());
        for (Eigen::Index c = 0; c < z3.cols(); ++c) {
            out(r, c) = p.gamma(c) * (z3(r, c) - mean) / std::sqrt(var + p.eps) + p.beta(c);
        }
    }
    return out;
}

double loss_of(const ConnectorParams& p, const Matrix& x, const Matrix& upstream) {
    return connector_forward(x, p).cwiseProduct(upstream).sum();
}

Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = (2.0 * testutil::uniform(rng) - 1.0) * scale;
    }
    return m;
}

bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

std::vector<PositionTriplet> triplets(const SequenceSegment& seg) { return seg.positions; }

}  // namespace

TEST_CASE("exact gelu hand values and derivative") {
    CHECK(gelu_exact(0.0) == 0.0);
    CHECK(gelu_exact(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(gelu_exact(-1.0) == doctest::Approx(-0.15865525393145705).epsilon(1e-12));
    CHECK(gelu_exact(10.0) == doctest::Approx(10.0).epsilon(1e-12));  // saturates to identity
    CHECK(gelu_exact(-10.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(gelu_exact_grad(0.0) == doctest::Approx(0.5).epsilon(1e-14));

    std::mt19937_64 rng(5);
    for (int i = 0; i < 100; ++i) {
        double x = 8.0 * testutil::uniform(rng) - 4.0;
        double h = 1e-6;
        double fd = (gelu_exact(x + h) - gelu_exact(x - h)) / (2.0 * h);
        CHECK(close_rel(gelu_exact_grad(x), fd, 1e-6));
    }
}

TEST_CASE("model-size table") {
    CHECK(hidden_size_for_model("8B") == 4096);
    CHECK(hidden_size_for_model("32B") == 5120);
    CHECK(!hidden_size_for_model("7B").has_value());
    CHECK(kConnectorInputDim == 2048);
    CHECK(kConnectorHiddenDim == 8192);
    CHECK_THROWS_AS(ConnectorParams::for_model_size("70B"), std::invalid_argument);
}

TEST_CASE("parameter construction and validation") {
    auto p = ConnectorParams::zeros(3, 4, 5);
    CHECK(p.input_dim() == 3);
    CHECK(p.hidden_dim() == 4);
    CHECK(p.output_dim() == 5);
    CHECK(p.w2.rows() == 4);
    CHECK(p.w2.cols() == 4);
    CHECK(p.gamma.size() == 5);
    CHECK(p.gamma(0) == 1.0);
    CHECK_NOTHROW(p.validate());
    CHECK_THROWS_AS(ConnectorParams::zeros(0, 4, 5), std::invalid_argument);

    auto broken = p;
    broken.w2 = Matrix::Zero(3, 3);
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = p;
    broken.b1 = Vector::Zero(2);
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = p;
    broken.gamma = Vector::Ones(4);
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = p;
    broken.eps = 0.0;
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
    broken = p;
    broken.w1(1, 1) = std::nan("");
    CHECK_THROWS_AS(broken.validate(), std::invalid_argument);

    // seeded initialization is reproducible
    auto r1 = ConnectorParams::random(3, 4, 5, 7);
    auto r2 = ConnectorParams::random(3, 4, 5, 7);
    auto r3 = ConnectorParams::random(3, 4, 5, 8);
    CHECK(r1.w1 == r2.w1);
    CHECK(r1.beta == r2.beta);
    CHECK(r1.w1 != r3.w1);
    CHECK_NOTHROW(r1.validate());
}

TEST_CASE("forward pass matches the loop oracle") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        int in = 2 + static_cast<int>(rng() % 4);
        int hid = 2 + static_cast<int>(rng() % 5);
        int out = 2 + static_cast<int>(rng() % 4);
        int frames = 1 + static_cast<int>(rng() % 5);
        auto p = ConnectorParams::random(in, hid, out, rng());
        Matrix x = random_matrix(rng, frames, in, 2.0);

        Matrix got = connector_forward(x, p);
        Matrix want = forward_oracle(x, p);
        REQUIRE(got.rows() == frames);
        REQUIRE(got.cols() == out);
        CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);

        auto trace = connector_forward_traced(x, p);
        CHECK((trace.out - got).cwiseAbs().maxCoeff() == 0.0);
        CHECK(trace.z1.cols() == hid);
        CHECK(trace.xhat.rows() == frames);
    }
}

TEST_CASE("final layer norm standardizes each row") {
    std::mt19937_64 rng(77);
    auto p = ConnectorParams::random(4, 6, 8, 12);
    p.gamma = Vector::Ones(8);
    p.beta = Vector::Zero(8);
    Matrix x = random_matrix(rng, 5, 4, 1.5);
    auto trace = connector_forward_traced(x, p);
    for (Eigen::Index r = 0; r < trace.out.rows(); ++r) {
        double mean = trace.out.row(r).mean();
        double var = (trace.out.row(r).array() - mean).square().mean();
        double pre_mean = trace.z3.row(r).mean();
        double pre_var = (trace.z3.row(r).array() - pre_mean).square().mean();
        // eps in the denominator pulls the output variance slightly under 1
        double want = pre_var / (pre_var + p.eps);
        CHECK(std::abs(mean) <= 1e-12);
        CHECK(var == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("forward rejects bad inputs") {
    auto p = ConnectorParams::random(3, 4, 5, 3);
    CHECK_THROWS_AS(connector_forward(Matrix::Zero(2, 7), p), std::invalid_argument);
    CHECK_THROWS_AS(connector_forward(Matrix(0, 3), p), std::invalid_argument);
    Matrix bad = Matrix::Zero(2, 3);
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(connector_forward(bad, p), std::invalid_argument);
}

TEST_CASE("analytic gradients agree with central differences everywhere") {
    std::mt19937_64 rng(123);
    const double h = 1e-5, tol = 1e-4;
    for (int trial = 0; trial < 3; ++trial) {
        auto p = ConnectorParams::random(3, 4, 3, 100 + trial);
        Matrix x = random_matrix(rng, 2, 3, 1.5);
        Matrix upstream = random_matrix(rng, 2, 3, 1.0);
        auto g = connector_grad(p, x, upstream);

        auto fd_entry = [&](auto mutate) {
            ConnectorParams plus = p, minus = p;
            Matrix xp = x, xm = x;
            mutate(plus, xp, +h);
            mutate(minus, xm, -h);
            return (loss_of(plus, xp, upstream) - loss_of(minus, xm, upstream)) / (2.0 * h);
        };

        for (Eigen::Index r = 0; r < p.w1.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.w1.cols(); ++c) {
                double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.w1(r, c) += d; });
                CHECK(close_rel(g.dw1(r, c), fd, tol));
            }
        }
        for (Eigen::Index r = 0; r < p.w2.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.w2.cols(); ++c) {
                double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.w2(r, c) += d; });
                CHECK(close_rel(g.dw2(r, c), fd, tol));
            }
        }
        for (Eigen::Index r = 0; r < p.w3.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.w3.cols(); ++c) {
                double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.w3(r, c) += d; });
                CHECK(close_rel(g.dw3(r, c), fd, tol));
            }
        }
        for (Eigen::Index i = 0; i < p.b1.size(); ++i) {
            double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.b1(i) += d; });
            CHECK(close_rel(g.db1(i), fd, tol));
        }
        for (Eigen::Index i = 0; i < p.b2.size(); ++i) {
            double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.b2(i) += d; });
            CHECK(close_rel(g.db2(i), fd, tol));
        }
        for (Eigen::Index i = 0; i < p.b3.size(); ++i) {
            double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.b3(i) += d; });
            CHECK(close_rel(g.db3(i), fd, tol));
        }
        for (Eigen::Index i = 0; i < p.gamma.size(); ++i) {
            double fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.gamma(i) += d; });
            CHECK(close_rel(g.dgamma(i), fd, tol));
            fd = fd_entry([&](ConnectorParams& q, Matrix&, double d) { q.beta(i) += d; });
            CHECK(close_rel(g.dbeta(i), fd, tol));
        }
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                double fd = fd_entry([&](ConnectorParams&, Matrix& xq, double d) { xq(r, c) += d; });
                CHECK(close_rel(g.dinput(r, c), fd, tol));
            }
        }
    }

    auto p = ConnectorParams::random(3, 4, 3, 1);
    CHECK_THROWS_AS(connector_grad(p, Matrix::Zero(2, 3), Matrix::Zero(2, 4)),
                    std::invalid_argument);
}

TEST_CASE("sequence layout hand case: audio, vision grid, text") {
    auto seq = assign_positions(layout_sequence(3, {2, 2, 2}, 4));
    CHECK(seq.total == 15);
    REQUIRE(seq.segments.size() == 3);

    const auto& audio = seq.segments[0];
    CHECK(audio.modality == SegmentModality::audio);
    CHECK(audio.start == 0);
    CHECK(audio.end == 3);
    CHECK(triplets(audio) ==
          std::vector<PositionTriplet>{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}});

    const auto& vision = seq.segments[1];
    CHECK(vision.modality == SegmentModality::vision);
    CHECK(vision.start == 3);
    CHECK(vision.end == 11);
    CHECK(triplets(vision) ==
          std::vector<PositionTriplet>{{3, 0, 0}, {3, 0, 1}, {3, 1, 0}, {3, 1, 1},
                                       {4, 0, 0}, {4, 0, 1}, {4, 1, 0}, {4, 1, 1}});

    const auto& text = seq.segments[2];
    CHECK(text.modality == SegmentModality::text);
    CHECK(text.start == 11);
    CHECK(text.end == 15);
    CHECK(triplets(text) ==
          std::vector<PositionTriplet>{{5, 5, 5}, {6, 6, 6}, {7, 7, 7}, {8, 8, 8}});

    json j = seq.to_json();
    CHECK(j["total"] == 15);
    CHECK(j["segments"].size() == 3);
    CHECK(j["segments"][1]["modality"] == "vision");
    CHECK(j["segments"][1]["positions"][0][0] == 3);
}

TEST_CASE("sequence layout: empty modalities, custom order, errors") {
    auto no_audio = layout_sequence(0, {1, 2, 2}, 3);
    REQUIRE(no_audio.segments.size() == 2);
    CHECK(no_audio.segments[0].modality == SegmentModality::vision);
    CHECK(no_audio.total == 7);

    auto text_first = assign_positions(layout_sequence(
        2, {1, 1, 1}, 2,
        {SegmentModality::text, SegmentModality::vision, SegmentModality::audio}));
    CHECK(text_first.segments[0].modality == SegmentModality::text);
    CHECK(triplets(text_first.segments[0]) == std::vector<PositionTriplet>{{0, 0, 0}, {1, 1, 1}});
    CHECK(triplets(text_first.segments[1]) == std::vector<PositionTriplet>{{2, 0, 0}});
    CHECK(triplets(text_first.segments[2]) == std::vector<PositionTriplet>{{3, 3, 3}, {4, 4, 4}});

    CHECK_THROWS_AS(layout_sequence(-1, {1, 1, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(layout_sequence(1, {-1, 1, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(layout_sequence(0, {0, 0, 0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(layout_sequence(1, {1, 1, 1}, 1,
                                    {SegmentModality::text, SegmentModality::text,
                                     SegmentModality::audio}),
                    std::invalid_argument);
    CHECK_THROWS_AS(layout_sequence(1, {1, 1, 1}, 1, {SegmentModality::text}),
                    std::invalid_argument);
}
