#include "omniforge/fusion.hpp"

#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace omniforge {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

Matrix uniform_matrix(std::mt19937_64& rng, int rows, int cols, double scale) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            // Portable uniform in [0,1): top 53 bits of the generator output.
            double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            m(r, c) = (u - 0.5) * 2.0 * scale;
        }
    }
    return m;
}

void check_forward_shapes(const Matrix& features, const ConnectorParams& params) {
    params.validate();
    if (features.rows() < 1) throw std::invalid_argument("connector: need at least one frame");
    if (features.cols() != params.w1.rows()) {
        throw std::invalid_argument("connector: feature dim " + std::to_string(features.cols()) +
                                    " does not match input dim " + std::to_string(params.w1.rows()));
    }
    if (!features.allFinite()) throw std::invalid_argument("connector: non-finite input");
}

}  // namespace

std::optional<int> hidden_size_for_model(const std::string& model_size) {
    if (model_size == "8B") return 4096;
    if (model_size == "32B") return 5120;
    return std::nullopt;
}

double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_exact_grad(double x) {
    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

ConnectorParams ConnectorParams::zeros(int input, int hidden, int output) {
    if (input < 1 || hidden < 1 || output < 1) {
        throw std::invalid_argument("ConnectorParams: dims must be positive");
    }
    ConnectorParams p;
    p.w1 = Matrix::Zero(input, hidden);
    p.w2 = Matrix::Zero(hidden, hidden);
    p.w3 = Matrix::Zero(hidden, output);
    p.b1 = Vector::Zero(hidden);
    p.b2 = Vector::Zero(hidden);
    p.b3 = Vector::Zero(output);
    p.gamma = Vector::Ones(output);
    p.beta = Vector::Zero(output);
    return p;
}

ConnectorParams ConnectorParams::random(int input, int hidden, int output, uint64_t seed) {
    ConnectorParams p = zeros(input, hidden, output);
    std::mt19937_64 rng(seed);
    p.w1 = uniform_matrix(rng, input, hidden, 1.0 / std::sqrt(static_cast<double>(input)));
    p.w2 = uniform_matrix(rng, hidden, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.w3 = uniform_matrix(rng, hidden, output, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.b1 = uniform_matrix(rng, hidden, 1, 0.1).col(0);
    p.b2 = uniform_matrix(rng, hidden, 1, 0.1).col(0);
    p.b3 = uniform_matrix(rng, output, 1, 0.1).col(0);
    p.gamma = Vector::Ones(output) + uniform_matrix(rng, output, 1, 0.1).col(0);
    p.beta = uniform_matrix(rng, output, 1, 0.1).col(0);
    return p;
}

ConnectorParams ConnectorParams::for_model_size(const std::string& model_size) {
    auto h = hidden_size_for_model(model_size);
    if (!h) throw std::invalid_argument("unknown model size: " + model_size);
    return zeros(kConnectorInputDim, kConnectorHiddenDim, *h);
}

void ConnectorParams::validate() const {
    if (w1.rows() < 1 || w1.cols() < 1) throw std::invalid_argument("connector: empty w1");
    if (w2.rows() != w1.cols() || w2.cols() != w2.rows()) {
        throw std::invalid_argument("connector: w2 shape breaks the chain");
    }
    if (w3.rows() != w2.cols() || w3.cols() < 1) {
        throw std::invalid_argument("connector: w3 shape breaks the chain");
    }
    if (b1.size() != w1.cols() || b2.size() != w2.cols() || b3.size() != w3.cols()) {
        throw std::invalid_argument("connector: bias length mismatch");
    }
    if (gamma.size() != w3.cols() || beta.size() != w3.cols()) {
        throw std::invalid_argument("connector: norm affine length mismatch");
    }
    if (eps <= 0.0) throw std::invalid_argument("connector: eps must be positive");
    if (!w1.allFinite() || !w2.allFinite() || !w3.allFinite() || !b1.allFinite() ||
        !b2.allFinite() || !b3.allFinite() || !gamma.allFinite() || !beta.allFinite()) {
        throw std::invalid_argument("connector: non-finite parameter");
    }
}

ConnectorTrace connector_forward_traced(const Matrix& features, const ConnectorParams& params) {
    check_forward_shapes(features, params);

    ConnectorTrace t;
    t.z1 = (features * params.w1).rowwise() + params.b1.transpose();
    t.a1 = t.z1.unaryExpr([](double v) { return gelu_exact(v); });
    t.z2 = (t.a1 * params.w2).rowwise() + params.b2.transpose();
    t.a2 = t.z2.unaryExpr([](double v) { return gelu_exact(v); });
    t.z3 = (t.a2 * params.w3).rowwise() + params.b3.transpose();

    const auto rows = t.z3.rows();
    const auto cols = t.z3.cols();
    t.xhat.resize(rows, cols);
    t.inv_std.resize(rows);
    t.out.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double mean = t.z3.row(r).mean();
        double var = (t.z3.row(r).array() - mean).square().mean();
        double inv_std = 1.0 / std::sqrt(var + params.eps);
        t.inv_std(r) = inv_std;
        t.xhat.row(r) = (t.z3.row(r).array() - mean) * inv_std;
        t.out.row(r) =
            t.xhat.row(r).cwiseProduct(params.gamma.transpose()) + params.beta.transpose();
    }
    return t;
}

Matrix connector_forward(const Matrix& features, const ConnectorParams& params) {
    return connector_forward_traced(features, params).out;
}

ConnectorGrads connector_grad(const ConnectorParams& params, const Matrix& features,
                              const Matrix& upstream) {
    ConnectorTrace t = connector_forward_traced(features, params);
    if (upstream.rows() != t.out.rows() || upstream.cols() != t.out.cols()) {
        throw std::invalid_argument("connector_grad: upstream shape mismatch");
    }

    const auto rows = t.out.rows();
    const auto h = t.out.cols();

    ConnectorGrads g;
    g.dgamma = Vector::Zero(h);
    g.dbeta = Vector::Zero(h);
    Matrix dz3(rows, h);
    for (Eigen::Index r = 0; r < rows; ++r) {
        Eigen::RowVectorXd grow = upstream.row(r);
        Eigen::RowVectorXd xhat = t.xhat.row(r);
        g.dgamma += grow.cwiseProduct(xhat).transpose();
        g.dbeta += grow.transpose();
        // LayerNorm backward: with a = g .* gamma,
        // dz = inv_std * (a - mean(a) - xhat * mean(a .* xhat)).
        Eigen::RowVectorXd a = grow.cwiseProduct(params.gamma.transpose());
        double mean_a = a.mean();
        double mean_ax = a.cwiseProduct(xhat).mean();
        dz3.row(r) = t.inv_std(r) * (a.array() - mean_a - xhat.array() * mean_ax).matrix();
    }

    g.dw3 = t.a2.transpose() * dz3;
    g.db3 = dz3.colwise().sum().transpose();
    Matrix da2 = dz3 * params.w3.transpose();
    Matrix dz2 = da2.cwiseProduct(t.z2.unaryExpr([](double v) { return gelu_exact_grad(v); }));

    g.dw2 = t.a1.transpose() * dz2;
    g.db2 = dz2.colwise().sum().transpose();
    Matrix da1 = dz2 * params.w2.transpose();
    Matrix dz1 = da1.cwiseProduct(t.z1.unaryExpr([](double v) { return gelu_exact_grad(v); }));

    g.dw1 = features.transpose() * dz1;
    g.db1 = dz1.colwise().sum().transpose();
    g.dinput = dz1 * params.w1.transpose();
    return g;
}

const char* to_string(SegmentModality m) {
    switch (m) {
        case SegmentModality::audio: return "audio";
        case SegmentModality::vision: return "vision";
        case SegmentModality::text: return "text";
    }
    return "text";
}

bool operator==(const PositionTriplet& a, const PositionTriplet& b) {
    return a.t == b.t && a.h == b.h && a.w == b.w;
}

UnifiedSequence layout_sequence(int audio_tokens, VisionGrid vision_grid, int text_tokens,
                                const std::vector<SegmentModality>& order) {
    if (audio_tokens < 0 || text_tokens < 0 || vision_grid.t_frames < 0 ||
        vision_grid.h_patches < 0 || vision_grid.w_patches < 0) {
        throw std::invalid_argument("layout_sequence: negative token counts");
    }
    std::set<SegmentModality> seen(order.begin(), order.end());
    if (order.size() != 3 || seen.size() != 3) {
        throw std::invalid_argument("layout_sequence: order must be a permutation of the modalities");
    }
    long vision_tokens = vision_grid.token_count();
    if (audio_tokens == 0 && vision_tokens == 0 && text_tokens == 0) {
        throw std::invalid_argument("layout_sequence: every modality is empty");
    }

    UnifiedSequence seq;
    size_t cursor = 0;
    for (SegmentModality m : order) {
        size_t len = 0;
        SequenceSegment seg;
        seg.modality = m;
        switch (m) {
            case SegmentModality::audio: len = static_cast<size_t>(audio_tokens); break;
            case SegmentModality::vision:
                len = static_cast<size_t>(vision_tokens);
                seg.grid = vision_grid;
                break;
            case SegmentModality::text: len = static_cast<size_t>(text_tokens); break;
        }
        if (len == 0) continue;
        seg.start = cursor;
        seg.end = cursor + len;
        cursor = seg.end;
        seq.segments.push_back(std::move(seg));
    }
    seq.total = cursor;
    return seq;
}

UnifiedSequence assign_positions(UnifiedSequence seq) {
    long offset = 0;
    for (auto& seg : seq.segments) {
        seg.positions.clear();
        seg.positions.reserve(seg.length());
        long max_t = offset;
        switch (seg.modality) {
            case SegmentModality::text:
                for (size_t i = 0; i < seg.length(); ++i) {
                    long v = offset + static_cast<long>(i);
                    seg.positions.push_back({v, v, v});
                    max_t = v;
                }
                break;
            case SegmentModality::audio:
                for (size_t i = 0; i < seg.length(); ++i) {
                    long v = offset + static_cast<long>(i);
                    seg.positions.push_back({v, v, v});
                    max_t = v;
                }
                break;
            case SegmentModality::vision: {
                long hw = static_cast<long>(seg.grid.h_patches) * seg.grid.w_patches;
                for (size_t i = 0; i < seg.length(); ++i) {
                    long frame = static_cast<long>(i) / hw;
                    long within = static_cast<long>(i) % hw;
                    long t = offset + frame;
                    seg.positions.push_back({t, within / seg.grid.w_patches, within % seg.grid.w_patches});
                    max_t = t;
                }
                break;
            }
        }
        offset = max_t + 1;
    }
    return seq;
}

json UnifiedSequence::to_json() const {
    json segs = json::array();
    for (const auto& seg : segments) {
        json positions = json::array();
        for (const auto& p : seg.positions) positions.push_back({p.t, p.h, p.w});
        segs.push_back({{"modality", to_string(seg.modality)},
                        {"start", seg.start},
                        {"end", seg.end},
                        {"positions", positions}});
    }
    return json{{"total", total}, {"segments", segs}};
}

}  // namespace omniforge
