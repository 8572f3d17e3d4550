#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omniforge/jsonl.hpp"

namespace omniforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr int kConnectorInputDim = 2048;
inline constexpr int kConnectorHiddenDim = 8192;

// Named model sizes and their decoder hidden size H.
std::optional<int> hidden_size_for_model(const std::string& model_size);  // 8B->4096, 32B->5120

double gelu_exact(double x);       // 0.5 x (1 + erf(x/sqrt(2)))
double gelu_exact_grad(double x);

// Three linear layers I -> Dh -> Dh -> H with exact GELU between layers and
// a final LayerNorm (gain gamma, bias beta). Row-vector convention: rows are
// frames, layer k computes X W_k + 1 b_k^T.
struct ConnectorParams {
    Matrix w1, w2, w3;
    Vector b1, b2, b3;
    Vector gamma, beta;
    double eps = kNormEpsilon;

    static ConnectorParams zeros(int input, int hidden, int output);
    static ConnectorParams random(int input, int hidden, int output, uint64_t seed);
    // Full paper dims: I=2048, Dh=8192, H from the model-size table.
    static ConnectorParams for_model_size(const std::string& model_size);

    int input_dim() const { return static_cast<int>(w1.rows()); }
    int hidden_dim() const { return static_cast<int>(w1.cols()); }
    int output_dim() const { return static_cast<int>(w3.cols()); }

    void validate() const;  // shape chain consistent, all values finite
};

// Per row: LayerNorm(L3(GELU(L2(GELU(L1(x)))))). Throws on shape mismatch
// or non-finite input.
Matrix connector_forward(const Matrix& features, const ConnectorParams& params);

// Forward pass with every intermediate kept for the backward pass.
struct ConnectorTrace {
    Matrix z1, a1, z2, a2, z3;  // pre/post activations; z3 is pre-norm
    Matrix xhat;                // normalized rows before gamma/beta
    Vector inv_std;             // per-row 1/sqrt(var + eps)
    Matrix out;
};
ConnectorTrace connector_forward_traced(const Matrix& features, const ConnectorParams& params);

struct ConnectorGrads {
    Matrix dw1, dw2, dw3;
    Vector db1, db2, db3;
    Vector dgamma, dbeta;
    Matrix dinput;
};

// Analytic gradients of sum(upstream .* out) w.r.t. every parameter and the
// input features.
ConnectorGrads connector_grad(const ConnectorParams& params, const Matrix& features,
                              const Matrix& upstream);

enum class SegmentModality { audio, vision, text };

const char* to_string(SegmentModality m);

struct PositionTriplet {
    long t = 0, h = 0, w = 0;
};

bool operator==(const PositionTriplet& a, const PositionTriplet& b);

struct VisionGrid {
    int t_frames = 0, h_patches = 0, w_patches = 0;

    long token_count() const {
        return static_cast<long>(t_frames) * h_patches * w_patches;
    }
};

struct SequenceSegment {
    SegmentModality modality = SegmentModality::text;
    size_t start = 0, end = 0;  // token span [start, end)
    VisionGrid grid;            // meaningful for vision segments
    std::vector<PositionTriplet> positions;  // filled by assign_positions

    size_t length() const { return end - start; }
};

struct UnifiedSequence {
    std::vector<SequenceSegment> segments;  // contiguous, non-overlapping
    size_t total = 0;

    json to_json() const;
};

// Concatenated multimodal layout; empty modalities contribute no segment.
// Throws when every modality is empty or `order` is not a permutation of
// the three modalities.
UnifiedSequence layout_sequence(int audio_tokens, VisionGrid vision_grid, int text_tokens,
                                const std::vector<SegmentModality>& order = {
                                    SegmentModality::audio, SegmentModality::vision,
                                    SegmentModality::text});

// Layout-compatible position ids: text counts t=h=w along a running counter,
// audio stamps t by frame with h=w=t, vision stamps t by frame and (h,w) by
// patch coordinates; each segment's offset starts past the previous
// segment's max t.
UnifiedSequence assign_positions(UnifiedSequence seq);

}  // namespace omniforge
