// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/image_io.hpp>
#include <nvsprompt3d/types.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace nvsp {

using FeatureVector = Eigen::VectorXd;

inline constexpr double kNormTolerance = 1e-6;
inline constexpr double kDegenerateNorm = 1e-12;

inline bool is_unit(const FeatureVector &v) { return v.allFinite() && std::abs(v.norm() - 1.0) <= kNormTolerance; }

inline FeatureVector normalized_or_throw(const FeatureVector &sum, const std::string &what) {
  const double n = sum.norm();
  if (!(n >= kDegenerateNorm)) fail(ErrorCode::DegenerateSum, what + ": feature sum has norm " + std::to_string(n));
  return sum / n;
}

/// Image embedding backend. Implementations must be deterministic and
/// return vectors of a fixed dimension.
class EmbeddingProvider {
public:
  virtual ~EmbeddingProvider() = default;
  virtual int dimension() const = 0;
  virtual FeatureVector embed(const Image &image) = 0;
  virtual FeatureVector embed_file(const std::filesystem::path &png) { return embed(read_png(png)); }
};

inline constexpr int kMockBins = 4;

/// L2-normalized 4x4x4 RGB histogram (64 dims). Channel bin = floor(4v),
/// clamped to 3.
inline FeatureVector mock_embed(const Image &image) {
  if (image.empty()) fail(ErrorCode::EmptyInput, "mock_embed: empty image");
  FeatureVector h = FeatureVector::Zero(kMockBins * kMockBins * kMockBins);
  auto bin = [](float v) { return std::clamp(static_cast<int>(std::floor(v * kMockBins)), 0, kMockBins - 1); };
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t p = 0; p < n; ++p) {
    const int r = bin(image.data[3 * p]), g = bin(image.data[3 * p + 1]), b = bin(image.data[3 * p + 2]);
    h[(r * kMockBins + g) * kMockBins + b] += 1.0;
  }
  return h / h.norm();
}

class MockProvider final : public EmbeddingProvider {
public:
  int dimension() const override { return kMockBins * kMockBins * kMockBins; }
  FeatureVector embed(const Image &image) override { return mock_embed(image); }
};

/// Operands of weighted feature balancing. `interp` may hold fewer than
/// n_interp * (k - 1) vectors when interpolated views were skipped.
struct FusionInput {
  std::vector<FeatureVector> top_k;
  std::vector<FeatureVector> interp;
  int n_interp = 1;
  double alpha = 0.5;
};

/// Normalize(sum(top_k) + alpha / n_interp * sum(interp)).
inline FeatureVector wfb_fuse(const FusionInput &in) {
  if (in.top_k.empty()) fail(ErrorCode::EmptyInput, "wfb_fuse: no top-k features");
  if (!(in.alpha > 0.0 && in.alpha <= 1.0)) fail(ErrorCode::SchemaViolation, "alpha: must lie in (0, 1]");
  if (!in.interp.empty() && in.n_interp < 1)
    fail(ErrorCode::SchemaViolation, "n_interp: must be >= 1 when interpolated features are given");
  const Eigen::Index d = in.top_k.front().size();
  FeatureVector top = FeatureVector::Zero(d), interp = FeatureVector::Zero(d);
  for (const auto &f : in.top_k) {
    if (f.size() != d) fail(ErrorCode::DimensionMismatch, "wfb_fuse: mixed feature dimensions");
    top += f;
  }
  for (const auto &f : in.interp) {
    if (f.size() != d) fail(ErrorCode::DimensionMismatch, "wfb_fuse: mixed feature dimensions");
    interp += f;
  }
  if (in.interp.empty()) return normalized_or_throw(top, "wfb_fuse");
  return normalized_or_throw(top + (in.alpha / in.n_interp) * interp, "wfb_fuse");
}

/// Normalize(mean of features): the unweighted baseline.
inline FeatureVector average_fuse(const std::vector<FeatureVector> &features) {
  if (features.empty()) fail(ErrorCode::EmptyInput, "average_fuse: no features");
  FeatureVector sum = FeatureVector::Zero(features.front().size());
  for (const auto &f : features) {
    if (f.size() != sum.size()) fail(ErrorCode::DimensionMismatch, "average_fuse: mixed feature dimensions");
    sum += f;
  }
  return normalized_or_throw(sum / static_cast<double>(features.size()), "average_fuse");
}

struct QueryMatch {
  Eigen::MatrixXd similarity; // instances x queries
  std::vector<int> labels;    // argmax query per instance, ties to the lower index
  std::vector<double> confidence;
};

inline QueryMatch match_queries(const Eigen::MatrixXd &instances, const Eigen::MatrixXd &queries) {
  if (queries.rows() == 0) fail(ErrorCode::EmptyInput, "match_queries: no queries");
  if (instances.rows() > 0 && instances.cols() != queries.cols())
    fail(ErrorCode::DimensionMismatch, "match_queries: instance dim " + std::to_string(instances.cols()) +
                                           " != query dim " + std::to_string(queries.cols()));
  for (Eigen::Index r = 0; r < instances.rows(); ++r)
    if (!is_unit(instances.row(r).transpose()))
      fail(ErrorCode::UnnormalizedInput, "match_queries: instance row " + std::to_string(r));
  for (Eigen::Index r = 0; r < queries.rows(); ++r)
    if (!is_unit(queries.row(r).transpose()))
      fail(ErrorCode::UnnormalizedInput, "match_queries: query row " + std::to_string(r));

  QueryMatch m;
  m.similarity = instances * queries.transpose();
  for (Eigen::Index r = 0; r < m.similarity.rows(); ++r) {
    int best = 0;
    for (Eigen::Index q = 1; q < m.similarity.cols(); ++q)
      if (m.similarity(r, q) > m.similarity(r, best)) best = static_cast<int>(q);
    m.labels.push_back(best);
    m.confidence.push_back(m.similarity(r, best));
  }
  return m;
}

} // namespace nvsp
