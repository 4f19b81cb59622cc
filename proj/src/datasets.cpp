#include "fci/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "fci/csv.hpp"

namespace fci::data {

bool LabeledDataset::has_outliers() const {
  return std::find(labels.begin(), labels.end(), kOutlierLabel) != labels.end();
}

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void LabeledDataset::validate() const {
  if (features.rows() != labels.size() && !(labels.empty() && features.size() == 0)) {
    throw data_error("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!provenance.empty() && provenance.size() != labels.size()) throw data_error("dataset provenance length mismatch");
  if (!features.all_finite()) throw data_error("dataset contains non-finite features");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) > num_classes) {
      throw data_error("label " + std::to_string(l) + " outside 0.." + std::to_string(num_classes));
    }
  }
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  if (!rows.empty()) out.features = features.gather_rows(rows);
  for (auto r : rows) {
    out.labels.push_back(labels.at(r));
    if (!provenance.empty()) out.provenance.push_back(provenance[r]);
  }
  return out;
}

Tensor LabeledDataset::class_features(int label) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) idx.push_back(i);
  if (idx.empty()) return Tensor();
  return features.gather_rows(idx);
}

Tensor LabeledDataset::other_class_features(int label) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != label && labels[i] != kOutlierLabel) idx.push_back(i);
  if (idx.empty()) return Tensor();
  return features.gather_rows(idx);
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.dim() != b.dim()) throw data_error("cannot concatenate datasets of different widths");
  LabeledDataset out;
  out.num_classes = std::max(a.num_classes, b.num_classes);
  auto v = a.features.values();
  v.insert(v.end(), b.features.values().begin(), b.features.values().end());
  out.features = Tensor({a.size() + b.size(), a.dim()}, std::move(v));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  if (!a.provenance.empty() && !b.provenance.empty()) {
    out.provenance = a.provenance;
    out.provenance.insert(out.provenance.end(), b.provenance.begin(), b.provenance.end());
  }
  return out;
}

GaussianClass GaussianClass::isotropic(std::vector<double> mean, double variance) {
  GaussianClass g;
  const auto p = mean.size();
  g.mean = std::move(mean);
  g.cov.assign(p, std::vector<double>(p, 0.0));
  for (std::size_t i = 0; i < p; ++i) g.cov[i][i] = variance;
  return g;
}

namespace {

// Lower-triangular Cholesky factor; throws unless cov is symmetric positive definite.
std::vector<std::vector<double>> cholesky(const std::vector<std::vector<double>>& cov) {
  const auto p = cov.size();
  for (const auto& r : cov) {
    if (r.size() != p) throw invalid_argument("covariance matrix is not square");
  }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(cov[i][j] - cov[j][i]) > 1e-12 * (1.0 + std::abs(cov[i][j]))) {
        throw invalid_argument("covariance matrix is not symmetric");
      }
  std::vector<std::vector<double>> L(p, std::vector<double>(p, 0.0));
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = cov[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
      if (i == j) {
        if (!(s > 0.0)) throw invalid_argument("covariance matrix is not positive definite");
        L[i][i] = std::sqrt(s);
      } else {
        L[i][j] = s / L[j][j];
      }
    }
  }
  return L;
}

}  // namespace

Tensor sample_gaussian(const GaussianClass& cls, std::size_t n, std::mt19937_64& rng) {
  const auto p = cls.mean.size();
  if (p == 0) throw invalid_argument("gaussian class has an empty mean");
  if (cls.cov.size() != p) throw invalid_argument("covariance does not match mean dimension");
  const auto L = cholesky(cls.cov);
  std::normal_distribution<double> n01(0.0, 1.0);
  if (n == 0) return Tensor();
  Tensor out = Tensor::matrix(n, p);
  std::vector<double> e(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : e) v = n01(rng);
    for (std::size_t r = 0; r < p; ++r) {
      double s = cls.mean[r];
      for (std::size_t k = 0; k <= r; ++k) s += L[r][k] * e[k];
      out(i, r) = s;
    }
  }
  return out;
}

LabeledDataset gen_gaussian_classes(const SyntheticSpec& spec) {
  if (spec.classes.empty()) throw invalid_argument("synthetic spec has no classes");
  if (spec.counts.size() != spec.classes.size()) throw invalid_argument("synthetic spec needs one count per class");
  std::mt19937_64 rng(spec.seed);
  LabeledDataset out;
  out.num_classes = spec.classes.size();
  const auto p = spec.classes.front().mean.size();
  std::vector<double> values;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    if (spec.classes[c].mean.size() != p) throw invalid_argument("synthetic classes differ in dimension");
    const Tensor x = sample_gaussian(spec.classes[c], spec.counts[c], rng);
    values.insert(values.end(), x.values().begin(), x.values().end());
    out.labels.insert(out.labels.end(), spec.counts[c], static_cast<int>(c + 1));
    out.provenance.insert(out.provenance.end(), spec.counts[c], "gaussian:" + std::to_string(c + 1));
  }
  if (!out.labels.empty()) out.features = Tensor({out.labels.size(), p}, std::move(values));
  return out;
}

std::size_t outlier_count(std::size_t m_in, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw invalid_argument("contamination rate must lie in [0, 1)");
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(m_in) / (1.0 - rate)));
}

LabeledDataset inject_contamination(const LabeledDataset& test, const ContaminationSpec& spec) {
  const auto o = outlier_count(test.size(), spec.rate);
  std::mt19937_64 rng(spec.seed);
  LabeledDataset outliers;
  outliers.num_classes = test.num_classes;
  if (o > 0) {
    if (const auto* g = std::get_if<GaussianClass>(&spec.source)) {
      outliers.features = sample_gaussian(*g, o, rng);
    } else {
      const auto& pool = std::get<Tensor>(spec.source);
      if (pool.rows() < o) {
        throw data_error("outlier pool has " + std::to_string(pool.rows()) + " rows, " + std::to_string(o) +
                         " needed");
      }
      std::vector<std::size_t> idx(pool.rows());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(o);
      outliers.features = pool.gather_rows(idx);
    }
    if (test.size() > 0 && outliers.features.cols() != test.dim()) {
      throw data_error("outlier source width differs from the test set");
    }
    outliers.labels.assign(o, kOutlierLabel);
    outliers.provenance.assign(o, "outlier");
  }
  LabeledDataset base = test;
  if (base.provenance.empty()) base.provenance.assign(base.size(), "test");
  LabeledDataset all = concat(base, outliers);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return all.select(order);
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IdxError(IdxError::Reason::Truncated, path + ": truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t n, const std::string& path) {
  std::vector<unsigned char> buf(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
    throw IdxError(IdxError::Reason::Truncated,
                   path + ": truncated IDX payload (expected " + std::to_string(n) + " bytes)");
  }
  return buf;
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw io_error("cannot open '" + images_path + "'");
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw io_error("cannot open '" + labels_path + "'");

  if (const auto magic = read_be32(img, images_path); magic != 0x00000803) {
    throw IdxError(IdxError::Reason::BadMagic, images_path + ": bad image magic number " + std::to_string(magic));
  }
  const auto count = read_be32(img, images_path);
  const auto rows = read_be32(img, images_path);
  const auto cols = read_be32(img, images_path);
  if (const auto magic = read_be32(lab, labels_path); magic != 0x00000801) {
    throw IdxError(IdxError::Reason::BadMagic, labels_path + ": bad label magic number " + std::to_string(magic));
  }
  const auto label_count = read_be32(lab, labels_path);
  if (label_count != count) {
    throw IdxError(IdxError::Reason::CountMismatch, "IDX image count " + std::to_string(count) +
                                                        " differs from label count " + std::to_string(label_count));
  }
  if (rows == 0 || cols == 0) throw IdxError(IdxError::Reason::BadMagic, images_path + ": zero image dimensions");

  const std::size_t p = std::size_t{rows} * cols;
  const auto pixels = read_payload(img, std::size_t{count} * p, images_path);
  const auto raw = read_payload(lab, count, labels_path);

  LabeledDataset out;
  if (count == 0) return out;
  std::vector<double> values(pixels.size());
  std::transform(pixels.begin(), pixels.end(), values.begin(), [](unsigned char v) { return v / 255.0; });
  out.features = Tensor({count, p}, std::move(values));
  for (std::size_t i = 0; i < count; ++i) {
    out.labels.push_back(int{raw[i]} + 1);
    out.provenance.push_back("idx:" + std::to_string(i));
  }
  out.num_classes = static_cast<std::size_t>(*std::max_element(out.labels.begin(), out.labels.end()));
  return out;
}

Split split(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw invalid_argument("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw invalid_argument("split fractions must sum to 1");
  if (data.has_outliers()) throw data_error("outlier rows cannot be split into training or calibration sets");

  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t c = 1; c <= data.num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.labels[i] == static_cast<int>(c)) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    auto n_cal = static_cast<std::size_t>(std::llround(fractions[1] * n));
    n_train = std::min(n_train, idx.size());
    n_cal = std::min(n_cal, idx.size() - n_train);
    if (fractions[2] == 0.0) n_cal = idx.size() - n_train;
    parts[0].insert(parts[0].end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    parts[1].insert(parts[1].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                    idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal));
    parts[2].insert(parts[2].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_cal), idx.end());
  }
  for (auto& p : parts) std::shuffle(p.begin(), p.end(), rng);
  return {data.select(parts[0]), data.select(parts[1]), data.select(parts[2])};
}

Normalizer Normalizer::fit(const Tensor& train) {
  if (train.rows() == 0) throw data_error("cannot fit normalisation on an empty training set");
  const auto n = train.rows(), p = train.cols();
  Normalizer z;
  z.mean.assign(p, 0.0);
  z.scale.assign(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) z.mean[j] += train(i, j);
  for (auto& m : z.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double d = train(i, j) - z.mean[j];
      z.scale[j] += d * d;
    }
  for (std::size_t j = 0; j < p; ++j) {
    z.scale[j] = std::sqrt(z.scale[j] / static_cast<double>(n));
    if (!(z.scale[j] > 0.0)) {
      z.scale[j] = 1.0;
      z.zero_variance.push_back(j);
    }
  }
  return z;
}

Tensor Normalizer::apply(const Tensor& x) const {
  if (x.size() == 0) return x;
  if (x.cols() != mean.size()) throw data_error("normalisation width differs from data width");
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / scale[j];
  return out;
}

Tensor Normalizer::inverse(const Tensor& x) const {
  if (x.size() == 0) return x;
  if (x.cols() != mean.size()) throw data_error("normalisation width differs from data width");
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * scale[j] + mean[j];
  return out;
}

nlohmann::json Normalizer::to_json() const {
  return {{"mean", mean}, {"scale", scale}, {"zero_variance", zero_variance}};
}

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer z;
  z.mean = j.at("mean").get<std::vector<double>>();
  z.scale = j.at("scale").get<std::vector<double>>();
  z.zero_variance = j.value("zero_variance", std::vector<std::size_t>{});
  if (z.mean.size() != z.scale.size()) throw data_error("normalisation mean/scale length mismatch");
  return z;
}

void write_csv(const LabeledDataset& data, const std::string& path) {
  std::string out = "label";
  for (std::size_t j = 0; j < data.dim(); ++j) out += ",f_" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += std::to_string(data.labels[i]);
    for (double v : data.features.row(i)) out += "," + csv::format(v);
    out += '\n';
  }
  csv::write(path, out);
}

LabeledDataset read_csv(const std::string& path) {
  const auto t = csv::read(path);
  if (t.header.size() < 2 || t.header.front() != "label") throw data_error(path + ": expected header label,f_1..f_p");
  const auto p = t.header.size() - 1;
  LabeledDataset out;
  std::vector<double> values;
  values.reserve(t.rows.size() * p);
  int max_label = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const auto where = path + ":" + std::to_string(i + 2);
    const int label = static_cast<int>(csv::to_int(r[0], where));
    if (label < 0) throw data_error(where + ": negative label");
    max_label = std::max(max_label, label);
    out.labels.push_back(label);
    out.provenance.push_back(label == kOutlierLabel ? "outlier" : "csv");
    for (std::size_t j = 1; j <= p; ++j) values.push_back(csv::to_double(r[j], where));
  }
  out.num_classes = static_cast<std::size_t>(max_label);
  if (!out.labels.empty()) out.features = Tensor({out.labels.size(), p}, std::move(values));
  out.validate();
  return out;
}

}  // namespace fci::data
