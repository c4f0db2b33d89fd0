#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "prpl/error.hpp"
#include "prpl/linalg.hpp"
#include "prpl/random.hpp"

namespace prpl {

using Label = std::uint32_t;

// n x d matrix of extracted features for one (extractor, domain) pair.
// Immutable once constructed; every constructor path validates.
class FeatureSet {
 public:
  FeatureSet(std::string extractor_id, std::string domain_id, std::size_t n, std::size_t d,
             std::vector<float> data, std::optional<std::vector<Label>> labels = std::nullopt,
             std::uint32_t num_classes = 0)
      : extractor_id_(std::move(extractor_id)),
        domain_id_(std::move(domain_id)),
        n_(n),
        d_(d),
        data_(std::move(data)),
        labels_(std::move(labels)),
        num_classes_(num_classes) {
    validate();
  }

  // From an f64 matrix; values are narrowed to f32 storage.
  static FeatureSet from_matrix(std::string extractor_id, std::string domain_id, const Matrix& m,
                                std::optional<std::vector<Label>> labels = std::nullopt,
                                std::uint32_t num_classes = 0) {
    std::vector<float> data(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
    return FeatureSet(std::move(extractor_id), std::move(domain_id),
                      static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                      std::move(data), std::move(labels), num_classes);
  }

  const std::string& extractor_id() const { return extractor_id_; }
  const std::string& domain_id() const { return domain_id_; }
  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * d_, d_}; }
  bool has_labels() const { return labels_.has_value(); }
  const std::vector<Label>& labels() const {
    if (!labels_) fail(ErrorKind::kInvalidArgument, "feature set '" + domain_id_ + "' is unlabeled");
    return *labels_;
  }
  std::uint32_t num_classes() const { return num_classes_; }

  Matrix to_matrix() const {
    Matrix m(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(d_));
    for (std::size_t i = 0; i < n_ * d_; ++i) m.data()[i] = static_cast<double>(data_[i]);
    return m;
  }

  RowVector mean() const {
    RowVector acc = RowVector::Zero(static_cast<Eigen::Index>(d_));
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < d_; ++j)
        acc(static_cast<Eigen::Index>(j)) += static_cast<double>(data_[i * d_ + j]);
    return acc / static_cast<double>(n_);
  }

  // Copy without labels (num_classes stays declared). Used wherever a code
  // path must not be able to see target ground truth.
  FeatureSet without_labels() const {
    return FeatureSet(extractor_id_, domain_id_, n_, d_, data_, std::nullopt, num_classes_);
  }

  // Rows rescaled to unit L2 norm; zero rows are left untouched.
  FeatureSet l2_normalized() const {
    std::vector<float> out(data_);
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d_; ++j) s += static_cast<double>(out[i * d_ + j]) * out[i * d_ + j];
      if (s <= 0.0) continue;
      const double inv = 1.0 / std::sqrt(s);
      for (std::size_t j = 0; j < d_; ++j)
        out[i * d_ + j] = static_cast<float>(static_cast<double>(out[i * d_ + j]) * inv);
    }
    return FeatureSet(extractor_id_, domain_id_, n_, d_, std::move(out), labels_, num_classes_);
  }

  friend bool operator==(const FeatureSet& a, const FeatureSet& b) {
    if (a.extractor_id_ != b.extractor_id_ || a.domain_id_ != b.domain_id_ || a.n_ != b.n_ ||
        a.d_ != b.d_ || a.labels_ != b.labels_ || a.num_classes_ != b.num_classes_)
      return false;
    // Bitwise comparison: -0.0f and 0.0f are different files.
    return a.data_.size() == b.data_.size() &&
           std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
  }

 private:
  void validate() const {
    if (n_ < 1 || d_ < 1) fail(ErrorKind::kDimensionMismatch, "feature set needs n >= 1 and d >= 1");
    if (data_.size() != n_ * d_)
      fail(ErrorKind::kDimensionMismatch, "payload holds " + std::to_string(data_.size()) +
                                              " values, expected n*d = " + std::to_string(n_ * d_));
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i]))
        fail(ErrorKind::kNonFiniteValue, "non-finite value at row " + std::to_string(i / d_) +
                                             ", column " + std::to_string(i % d_));
    }
    if (labels_) {
      if (labels_->size() != n_)
        fail(ErrorKind::kDimensionMismatch, "label count " + std::to_string(labels_->size()) +
                                                " != n = " + std::to_string(n_));
      if (num_classes_ < 2) fail(ErrorKind::kLabelOutOfRange, "labeled set needs num_classes >= 2");
      for (std::size_t i = 0; i < n_; ++i) {
        if ((*labels_)[i] >= num_classes_)
          fail(ErrorKind::kLabelOutOfRange, "label " + std::to_string((*labels_)[i]) + " at row " +
                                                std::to_string(i) + " is >= num_classes " +
                                                std::to_string(num_classes_));
      }
    }
  }

  std::string extractor_id_;
  std::string domain_id_;
  std::size_t n_;
  std::size_t d_;
  std::vector<float> data_;
  std::optional<std::vector<Label>> labels_;
  std::uint32_t num_classes_;
};

// Selected rows widened to an f64 matrix.
inline Matrix gather_rows(const FeatureSet& fs, std::span<const std::size_t> idx) {
  Matrix m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(fs.d()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = fs.row(idx[r]);
    for (std::size_t j = 0; j < fs.d(); ++j)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = src[j];
  }
  return m;
}

// ---------------------------------------------------------------------------
// Binary format "PRPLFS01", all integers and floats little-endian:
//   magic[8] | u32 n | u32 d | u32 label_flag | u32 num_classes
//   | u32 len, extractor_id | u32 len, domain_id
//   | n*d f32 row-major | (label_flag == 1) n u32 labels
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kFeatureMagic = {'P', 'R', 'P', 'L', 'F', 'S', '0', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

 private:
  void need(std::size_t k) const {
    if (remaining() < k) fail(ErrorKind::kMalformedHeader, what_ + ": truncated header");
  }

  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::kIo, "read error on '" + path.string() + "'");
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorKind::kIo, "write error on '" + path.string() + "'");
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) fail(ErrorKind::kInvalidArgument, std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline std::string encode_feature_set(const FeatureSet& fs) {
  using namespace detail;
  std::string out(kFeatureMagic.begin(), kFeatureMagic.end());
  put_u32(out, checked_u32(fs.n(), "n"));
  put_u32(out, checked_u32(fs.d(), "d"));
  put_u32(out, fs.has_labels() ? 1u : 0u);
  put_u32(out, fs.num_classes());
  put_u32(out, checked_u32(fs.extractor_id().size(), "extractor_id length"));
  out += fs.extractor_id();
  put_u32(out, checked_u32(fs.domain_id().size(), "domain_id length"));
  out += fs.domain_id();
  out.reserve(out.size() + 4 * fs.data().size() + (fs.has_labels() ? 4 * fs.n() : 0));
  for (float v : fs.data()) put_f32(out, v);
  if (fs.has_labels())
    for (Label l : fs.labels()) put_u32(out, l);
  return out;
}

inline FeatureSet decode_feature_set(const std::string& bytes, const std::string& what = "feature file") {
  using namespace detail;
  if (bytes.size() < kFeatureMagic.size() ||
      !std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), bytes.begin()))
    fail(ErrorKind::kMalformedHeader, what + ": missing PRPLFS01 magic");
  ByteReader r(bytes, what);
  r.str(kFeatureMagic.size());
  const std::size_t n = r.u32();
  const std::size_t d = r.u32();
  const std::uint32_t label_flag = r.u32();
  const std::uint32_t num_classes = r.u32();
  if (label_flag > 1) fail(ErrorKind::kMalformedHeader, what + ": label_flag must be 0 or 1");
  std::string extractor = r.str(r.u32());
  std::string domain = r.str(r.u32());

  const std::size_t expected = 4 * n * d + (label_flag ? 4 * n : 0);
  if (r.remaining() != expected)
    fail(ErrorKind::kDimensionMismatch,
         what + ": payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
             std::to_string(expected) + " (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");

  std::vector<float> data(n * d);
  for (auto& v : data) v = r.f32();
  std::optional<std::vector<Label>> labels;
  if (label_flag) {
    labels.emplace(n);
    for (auto& l : *labels) l = r.u32();
  }
  try {
    return FeatureSet(std::move(extractor), std::move(domain), n, d, std::move(data), std::move(labels),
                      num_classes);
  } catch (const Error& e) {
    throw e.with_context(what);
  }
}

// ---------------------------------------------------------------------------
// CSV ingestion:
//   # extractor=<id> domain=<id> n=<n> d=<d> labels=<0|1> classes=<C>
//   v0,v1,...,v{d-1}[,label]
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T parse_number(std::string_view s, const std::string& what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorKind::kMalformedHeader, what + ": cannot parse '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline FeatureSet parse_feature_csv(const std::string& text, const std::string& what = "csv") {
  using detail::parse_number;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
    fail(ErrorKind::kMalformedHeader, what + ": first line must be a '# extractor=...' header");

  std::string extractor, domain;
  std::optional<std::size_t> n, d, labels_flag, classes;
  std::istringstream header(line.substr(2));
  std::string token;
  while (header >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kMalformedHeader, what + ": bad header token '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    if (key == "extractor") extractor = value;
    else if (key == "domain") domain = value;
    else if (key == "n") n = parse_number<std::size_t>(value, what);
    else if (key == "d") d = parse_number<std::size_t>(value, what);
    else if (key == "labels") labels_flag = parse_number<std::size_t>(value, what);
    else if (key == "classes") classes = parse_number<std::size_t>(value, what);
    else fail(ErrorKind::kMalformedHeader, what + ": unknown header key '" + key + "'");
  }
  if (extractor.empty() || domain.empty() || !n || !d || !labels_flag || !classes)
    fail(ErrorKind::kMalformedHeader, what + ": header needs extractor, domain, n, d, labels, classes");
  if (*labels_flag > 1) fail(ErrorKind::kMalformedHeader, what + ": labels must be 0 or 1");
  const bool labeled = *labels_flag == 1;
  const std::size_t width = *d + (labeled ? 1 : 0);

  std::vector<float> data;
  data.reserve(*n * *d);
  std::vector<Label> labels;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (cells.size() != width)
      fail(ErrorKind::kDimensionMismatch, what + ": row " + std::to_string(rows) + " has " +
                                              std::to_string(cells.size()) + " fields, expected " +
                                              std::to_string(width));
    for (std::size_t j = 0; j < *d; ++j) data.push_back(parse_number<float>(cells[j], what));
    if (labeled) labels.push_back(parse_number<Label>(cells[*d], what));
    ++rows;
  }
  if (rows != *n)
    fail(ErrorKind::kDimensionMismatch,
         what + ": header declares n=" + std::to_string(*n) + " but found " + std::to_string(rows) + " rows");
  std::optional<std::vector<Label>> maybe_labels;
  if (labeled) maybe_labels = std::move(labels);
  try {
    return FeatureSet(extractor, domain, *n, *d, std::move(data), std::move(maybe_labels),
                      static_cast<std::uint32_t>(*classes));
  } catch (const Error& e) {
    throw e.with_context(what);
  }
}

// Format is sniffed from the first bytes: PRPLFS01 magic or a CSV header.
inline FeatureSet load_feature_set(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.rfind("# ", 0) == 0) return parse_feature_csv(bytes, path.string());
  return decode_feature_set(bytes, path.string());
}

inline void save_feature_set(const FeatureSet& fs, const std::filesystem::path& path) {
  detail::write_file(path, encode_feature_set(fs));
}

// ---------------------------------------------------------------------------
// Manifest: which file holds features for each (extractor, domain) pair.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string extractor_id;
  std::string domain_id;
  std::filesystem::path path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint32_t num_classes = 0;

  void validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : entries) {
      if (!seen.emplace(e.extractor_id, e.domain_id).second)
        fail(ErrorKind::kInvalidConfig,
             "duplicate manifest entry (" + e.extractor_id + ", " + e.domain_id + ")");
    }
  }

  const ManifestEntry* find(const std::string& extractor, const std::string& domain) const {
    for (const auto& e : entries)
      if (e.extractor_id == extractor && e.domain_id == domain) return &e;
    return nullptr;
  }

  // Sorted, de-duplicated extractor ids.
  std::vector<std::string> extractors() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.extractor_id);
    return {ids.begin(), ids.end()};
  }
};

// ---------------------------------------------------------------------------
// Synthetic shifted-Gaussian domains.
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::uint32_t num_classes = 3;
  std::size_t d = 16;
  std::size_t n_per_class_source = 100;
  std::size_t n_per_class_target = 100;
  double class_mean_separation = 4.0;  // norm of each class mean
  double domain_shift = 1.0;           // norm of the common target shift
  double noise_sigma = 1.0;            // isotropic per-coordinate std

  void validate() const {
    if (num_classes < 2) fail(ErrorKind::kInvalidArgument, "synth: num_classes must be >= 2");
    if (d < 1 || n_per_class_source < 1 || n_per_class_target < 1)
      fail(ErrorKind::kInvalidArgument, "synth: d and per-class counts must be >= 1");
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma))
      fail(ErrorKind::kInvalidArgument, "synth: noise_sigma must be > 0");
    if (!(class_mean_separation >= 0.0) || !std::isfinite(class_mean_separation))
      fail(ErrorKind::kInvalidArgument, "synth: class_mean_separation must be >= 0");
    if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift))
      fail(ErrorKind::kInvalidArgument, "synth: domain_shift must be >= 0");
  }
};

struct SynthDomains {
  FeatureSet source;
  FeatureSet target;
  Matrix class_means;   // num_classes x d
  RowVector shift;      // d
};

namespace detail {

inline RowVector random_direction(Rng& rng, std::size_t d) {
  RowVector v(static_cast<Eigen::Index>(d));
  double norm = 0.0;
  while (norm == 0.0) {
    for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = rng.normal();
    norm = v.norm();
  }
  return v / norm;
}

inline FeatureSet sample_domain(const Matrix& means, const RowVector& offset, std::size_t per_class,
                                double sigma, std::uint64_t seed, const std::string& domain) {
  Rng rng(seed);
  const auto c = static_cast<std::size_t>(means.rows());
  const auto d = static_cast<std::size_t>(means.cols());
  std::vector<float> data;
  data.reserve(c * per_class * d);
  std::vector<Label> labels;
  labels.reserve(c * per_class);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double v = means(static_cast<Eigen::Index>(k), jj) + offset(jj) + sigma * rng.normal();
        data.push_back(static_cast<float>(v));
      }
      labels.push_back(static_cast<Label>(k));
    }
  }
  return FeatureSet("synthetic", domain, c * per_class, d, std::move(data), std::move(labels),
                    static_cast<std::uint32_t>(c));
}

}  // namespace detail

// Class means are random directions scaled to class_mean_separation; the
// target domain adds one random shift vector of norm domain_shift. Rows are
// grouped by class. Pure function of (spec, seed).
inline SynthDomains synth_gaussian_domains(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng geometry(Rng::derive(seed, 0));
  Matrix means(spec.num_classes, static_cast<Eigen::Index>(spec.d));
  for (std::uint32_t c = 0; c < spec.num_classes; ++c)
    means.row(c) = spec.class_mean_separation * detail::random_direction(geometry, spec.d);
  const RowVector shift = spec.domain_shift * detail::random_direction(geometry, spec.d);
  const RowVector none = RowVector::Zero(static_cast<Eigen::Index>(spec.d));
  return SynthDomains{
      detail::sample_domain(means, none, spec.n_per_class_source, spec.noise_sigma, Rng::derive(seed, 1),
                            "source"),
      detail::sample_domain(means, shift, spec.n_per_class_target, spec.noise_sigma, Rng::derive(seed, 2),
                            "target"),
      means, shift};
}

}  // namespace prpl
