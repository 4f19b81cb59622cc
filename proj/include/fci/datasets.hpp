#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fci/error.hpp"
#include "fci/nn/tensor.hpp"

namespace fci::data {

using nn::Tensor;

// Label used for rows drawn from classes never seen in training.
constexpr int kOutlierLabel = 0;

struct LabeledDataset {
  Tensor features;                      // (n, p)
  std::vector<int> labels;              // 1..num_classes, or kOutlierLabel
  std::size_t num_classes = 0;
  std::vector<std::string> provenance;  // one tag per row

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool has_outliers() const;
  std::size_t count(int label) const;

  void validate() const;

  LabeledDataset select(std::span<const std::size_t> rows) const;
  Tensor class_features(int label) const;
  // Inlier rows whose label differs from `label`.
  Tensor other_class_features(int label) const;
};

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

struct GaussianClass {
  std::vector<double> mean;
  std::vector<std::vector<double>> cov;

  static GaussianClass isotropic(std::vector<double> mean, double variance = 1.0);
};

struct SyntheticSpec {
  std::vector<GaussianClass> classes;
  std::vector<std::size_t> counts;  // per class
  std::uint64_t seed = 0;
};

// Rows grouped by class in declaration order, labels 1..L.
LabeledDataset gen_gaussian_classes(const SyntheticSpec& spec);
// n draws from N(mean, cov); throws when cov is not symmetric positive definite.
Tensor sample_gaussian(const GaussianClass& cls, std::size_t n, std::mt19937_64& rng);

struct ContaminationSpec {
  double rate = 0.0;
  // Either a generator for outliers or a pool of real outlier rows.
  std::variant<GaussianClass, Tensor> source;
  std::uint64_t seed = 0;
};

// round(rate * m_in / (1 - rate)), the count making o / (m_in + o) = rate.
std::size_t outlier_count(std::size_t m_in, double rate);

// Appends outlier rows labelled kOutlierLabel, then shuffles all rows.
LabeledDataset inject_contamination(const LabeledDataset& test, const ContaminationSpec& spec);

class IdxError : public Error {
 public:
  enum class Reason { BadMagic, Truncated, CountMismatch };
  IdxError(Reason reason, const std::string& what) : Error(ErrorKind::Data, what), reason_(reason) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

// Big-endian IDX pair (0x00000803 images, 0x00000801 labels). Pixels are
// scaled to [0, 1]; raw label k becomes class k + 1.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

struct Split {
  LabeledDataset train;
  LabeledDataset calibration;
  LabeledDataset test;
};

// Stratified by class; fractions must sum to 1.
Split split(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed);

// Per-feature standardisation fitted on training rows.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<std::size_t> zero_variance;  // features whose scale was forced to 1

  static Normalizer fit(const Tensor& train);
  Tensor apply(const Tensor& x) const;
  Tensor inverse(const Tensor& x) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j);
};

// CSV with header `label,f_1..f_p`; outliers are written as label 0.
void write_csv(const LabeledDataset& data, const std::string& path);
LabeledDataset read_csv(const std::string& path);

}  // namespace fci::data
