#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prpl/error.hpp"
#include "prpl/feature_store.hpp"
#include "prpl/linalg.hpp"
#include "prpl/mmd.hpp"
#include "prpl/random.hpp"

namespace prpl {

inline constexpr double kProbabilityFloor = 1e-12;

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  std::size_t epochs = 9;
  std::uint64_t seed = 0;
  double mmd_weight = 1.0;
  bool l2_normalize_inputs = false;
  // 0 = linear head. Otherwise one tanh hidden layer of this width.
  std::size_t hidden_width = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      fail(ErrorKind::kInvalidConfig, "learning_rate must be > 0");
    if (!(mmd_weight >= 0.0) || !std::isfinite(mmd_weight))
      fail(ErrorKind::kInvalidConfig, "mmd_weight must be >= 0");
    if (batch_size < 1) fail(ErrorKind::kInvalidConfig, "batch_size must be >= 1");
    if (mmd_weight > 0.0 && batch_size < 2)
      fail(ErrorKind::kInvalidConfig, "batch_size must be >= 2 when the MMD term is enabled");
    if (epochs < 1) fail(ErrorKind::kInvalidConfig, "epochs must be >= 1");
  }
};

struct HiddenLayer {
  Matrix weights;  // d x h
  RowVector bias;  // h
};

// Shared classifier: softmax over (optional tanh layer ->) affine logits.
struct ClassifierHead {
  Matrix weights;  // (d or h) x C
  RowVector bias;  // C
  std::optional<HiddenLayer> hidden;

  std::size_t input_dim() const {
    return static_cast<std::size_t>(hidden ? hidden->weights.rows() : weights.rows());
  }
  std::size_t num_classes() const { return static_cast<std::size_t>(weights.cols()); }

  void validate() const {
    if (bias.size() != weights.cols()) fail(ErrorKind::kDimensionMismatch, "head bias length != C");
    if (hidden) {
      if (hidden->weights.cols() != weights.rows() || hidden->bias.size() != hidden->weights.cols())
        fail(ErrorKind::kDimensionMismatch, "hidden layer shape inconsistent with output layer");
      if (!hidden->weights.allFinite() || !hidden->bias.allFinite())
        fail(ErrorKind::kNonFiniteValue, "hidden layer has non-finite entries");
    }
    if (!weights.allFinite() || !bias.allFinite()) fail(ErrorKind::kNonFiniteValue, "head has non-finite entries");
  }

  friend bool operator==(const ClassifierHead& a, const ClassifierHead& b) {
    if (a.hidden.has_value() != b.hidden.has_value()) return false;
    if (a.hidden && (a.hidden->weights != b.hidden->weights || a.hidden->bias != b.hidden->bias)) return false;
    return a.weights == b.weights && a.bias == b.bias;
  }
};

// Same layout as the head; produced by the backward passes.
struct HeadGradients {
  Matrix weights;
  RowVector bias;
  std::optional<HiddenLayer> hidden;

  static HeadGradients zeros_like(const ClassifierHead& h) {
    HeadGradients g{Matrix::Zero(h.weights.rows(), h.weights.cols()), RowVector::Zero(h.bias.size()), std::nullopt};
    if (h.hidden)
      g.hidden = HiddenLayer{Matrix::Zero(h.hidden->weights.rows(), h.hidden->weights.cols()),
                             RowVector::Zero(h.hidden->bias.size())};
    return g;
  }

  HeadGradients& operator+=(const HeadGradients& o) {
    weights += o.weights;
    bias += o.bias;
    if (hidden && o.hidden) {
      hidden->weights += o.hidden->weights;
      hidden->bias += o.hidden->bias;
    }
    return *this;
  }

  bool all_finite() const {
    return weights.allFinite() && bias.allFinite() &&
           (!hidden || (hidden->weights.allFinite() && hidden->bias.allFinite()));
  }

  double squared_norm() const {
    double s = weights.squaredNorm() + bias.squaredNorm();
    if (hidden) s += hidden->weights.squaredNorm() + hidden->bias.squaredNorm();
    return s;
  }
};

namespace detail {

inline Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

inline double glorot_bound(Eigen::Index fan_in, Eigen::Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

}  // namespace detail

// Glorot-uniform weights, zero biases; pure function of its arguments.
inline ClassifierHead init_head(std::size_t d, std::size_t num_classes, std::uint64_t seed,
                                std::size_t hidden_width = 0) {
  if (d < 1 || num_classes < 1) fail(ErrorKind::kInvalidArgument, "init_head needs d, C >= 1");
  Rng rng(seed);
  const auto di = static_cast<Eigen::Index>(d);
  const auto ci = static_cast<Eigen::Index>(num_classes);
  ClassifierHead head;
  if (hidden_width > 0) {
    const auto hi = static_cast<Eigen::Index>(hidden_width);
    head.hidden = HiddenLayer{detail::uniform_matrix(rng, di, hi, detail::glorot_bound(di, hi)), RowVector::Zero(hi)};
    head.weights = detail::uniform_matrix(rng, hi, ci, detail::glorot_bound(hi, ci));
  } else {
    head.weights = detail::uniform_matrix(rng, di, ci, detail::glorot_bound(di, ci));
  }
  head.bias = RowVector::Zero(ci);
  return head;
}

inline void softmax_rows_inplace(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      z(i, j) = std::exp(z(i, j) - m);
      s += z(i, j);
    }
    z.row(i) /= s;
  }
}

namespace detail {

inline void check_input(const ClassifierHead& head, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != head.input_dim())
    fail(ErrorKind::kDimensionMismatch, "input has " + std::to_string(x.cols()) + " columns, head expects " +
                                            std::to_string(head.input_dim()));
}

inline Matrix hidden_activations(const HiddenLayer& layer, const Matrix& x) {
  Matrix a = x * layer.weights;
  a.rowwise() += layer.bias;
  return a.array().tanh().matrix();
}

}  // namespace detail

inline Matrix logits(const ClassifierHead& head, const Matrix& x) {
  detail::check_input(head, x);
  Matrix z = head.hidden ? Matrix(detail::hidden_activations(*head.hidden, x) * head.weights)
                         : Matrix(x * head.weights);
  z.rowwise() += head.bias;
  return z;
}

// Row-stochastic class probabilities (max-subtracted softmax of the logits).
inline Matrix forward(const ClassifierHead& head, const Matrix& x) {
  Matrix z = logits(head, x);
  softmax_rows_inplace(z);
  return z;
}

// Argmax per row; ties go to the smallest class index.
inline std::vector<Label> predict(const ClassifierHead& head, const Matrix& x) {
  const Matrix p = forward(head, x);
  std::vector<Label> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < p.cols(); ++j)
      if (p(i, j) > p(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<Label>(best);
  }
  return out;
}

inline void check_labels(std::span<const Label> labels, Eigen::Index rows, Eigen::Index classes) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    fail(ErrorKind::kDimensionMismatch, "label count does not match row count");
  for (Label y : labels)
    if (static_cast<Eigen::Index>(y) >= classes)
      fail(ErrorKind::kLabelOutOfRange, "label " + std::to_string(y) + " >= C = " + std::to_string(classes));
}

// Mean negative log-likelihood; the log argument is floored at 1e-12.
inline double cross_entropy(const Matrix& probs, std::span<const Label> labels) {
  check_labels(labels, probs.rows(), probs.cols());
  if (probs.rows() == 0) fail(ErrorKind::kInvalidArgument, "cross_entropy of an empty batch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    s -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), kProbabilityFloor));
  return s / static_cast<double>(probs.rows());
}

// Backpropagates d loss / d logits through the head.
inline HeadGradients backward(const ClassifierHead& head, const Matrix& x, const Matrix& dlogits) {
  HeadGradients g;
  g.bias = dlogits.colwise().sum();
  if (!head.hidden) {
    g.weights = x.transpose() * dlogits;
    return g;
  }
  const Matrix h = detail::hidden_activations(*head.hidden, x);
  g.weights = h.transpose() * dlogits;
  const Matrix dh = dlogits * head.weights.transpose();
  const Matrix da = (dh.array() * (1.0 - h.array().square())).matrix();
  g.hidden = HiddenLayer{x.transpose() * da, da.colwise().sum()};
  return g;
}

// Pulls an upstream gradient on softmax outputs back onto the logits:
// dz = p * (g - <g, p>) row by row.
inline Matrix softmax_backward(const Matrix& probs, const Matrix& upstream) {
  Matrix dz(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double dot = probs.row(i).dot(upstream.row(i));
    dz.row(i) = (probs.row(i).array() * (upstream.row(i).array() - dot)).matrix();
  }
  return dz;
}

// Gradient of the mean source cross-entropy (probability floor ignored).
inline HeadGradients grad_source_loss(const ClassifierHead& head, const Matrix& x, std::span<const Label> labels) {
  Matrix p = forward(head, x);
  check_labels(labels, p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) p(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  p /= static_cast<double>(x.rows());
  return backward(head, x, p);
}

inline ClassifierHead sgd_step(const ClassifierHead& head, const HeadGradients& grads, double learning_rate) {
  if (!grads.all_finite()) fail(ErrorKind::kNonFiniteGradient, "gradient has non-finite entries");
  ClassifierHead next = head;
  next.weights -= learning_rate * grads.weights;
  next.bias -= learning_rate * grads.bias;
  if (next.hidden && grads.hidden) {
    next.hidden->weights -= learning_rate * grads.hidden->weights;
    next.hidden->bias -= learning_rate * grads.hidden->bias;
  }
  return next;
}

// ---------------------------------------------------------------------------
// Minibatch trainer.
// ---------------------------------------------------------------------------

struct StageLosses {
  double source = 0.0;  // mean per-step cross-entropy over the final epoch
  double mmd = 0.0;     // mean per-step mmd2 over the final epoch (0 without MMD)
};

// One objective evaluation on a batch pair: cross-entropy on the labeled
// batch plus weight * mmd2 between labeled and target softmax outputs.
struct BatchObjective {
  double source = 0.0;
  double mmd = 0.0;
  HeadGradients grads;
};

inline BatchObjective batch_objective(const ClassifierHead& head, const Matrix& labeled,
                                      std::span<const Label> labels, const Matrix* target, double mmd_weight,
                                      const KernelBank* bank) {
  BatchObjective out;
  const Matrix p = forward(head, labeled);
  out.source = cross_entropy(p, labels);
  Matrix dz = p;
  for (Eigen::Index i = 0; i < dz.rows(); ++i) dz(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  dz /= static_cast<double>(labeled.rows());
  if (target == nullptr || mmd_weight == 0.0) {
    out.grads = backward(head, labeled, dz);
    return out;
  }
  const Matrix pt = forward(head, *target);
  out.mmd = mmd2(p, pt, *bank);
  dz += softmax_backward(p, mmd_weight * grad_mmd2_wrt_a(p, pt, *bank));
  const Matrix dzt = softmax_backward(pt, mmd_weight * grad_mmd2_wrt_a(pt, p, *bank));
  out.grads = backward(head, labeled, dz);
  out.grads += backward(head, *target, dzt);
  return out;
}

// Runs tc.epochs epochs of minibatch SGD over the labeled domain. When
// `target` is given and tc.mmd_weight > 0, each labeled batch is paired with
// an equally sized target batch drawn by cycling a per-epoch permutation of
// the target rows. Shuffles depend only on (tc.seed, stream, epoch).
inline StageLosses train_stage(ClassifierHead& head, const Matrix& labeled, std::span<const Label> labels,
                               const Matrix* target, const TrainConfig& tc, const KernelBank* bank,
                               std::uint64_t stream) {
  tc.validate();
  check_labels(labels, labeled.rows(), static_cast<Eigen::Index>(head.num_classes()));
  const bool use_mmd = target != nullptr && tc.mmd_weight > 0.0;
  if (use_mmd && bank == nullptr) fail(ErrorKind::kInvalidArgument, "MMD training needs a kernel bank");
  if (use_mmd && target->rows() < 1) fail(ErrorKind::kInvalidArgument, "MMD training needs target rows");

  const auto n = static_cast<std::size_t>(labeled.rows());
  const auto nt = use_mmd ? static_cast<std::size_t>(target->rows()) : std::size_t{0};
  const std::uint64_t stage_seed = Rng::derive(tc.seed, stream);
  StageLosses last;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = Rng(Rng::derive(stage_seed, 2 * epoch)).permutation(n);
    std::vector<std::size_t> target_order;
    if (use_mmd) target_order = Rng(Rng::derive(stage_seed, 2 * epoch + 1)).permutation(nt);
    std::size_t target_cursor = 0;
    double sum_source = 0.0, sum_mmd = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t len = std::min(tc.batch_size, n - start);
      Matrix xb(static_cast<Eigen::Index>(len), labeled.cols());
      std::vector<Label> yb(len);
      for (std::size_t r = 0; r < len; ++r) {
        xb.row(static_cast<Eigen::Index>(r)) = labeled.row(static_cast<Eigen::Index>(order[start + r]));
        yb[r] = labels[order[start + r]];
      }
      Matrix tb;
      if (use_mmd) {
        tb.resize(static_cast<Eigen::Index>(len), target->cols());
        for (std::size_t r = 0; r < len; ++r) {
          tb.row(static_cast<Eigen::Index>(r)) = target->row(static_cast<Eigen::Index>(target_order[target_cursor]));
          target_cursor = (target_cursor + 1) % nt;
        }
      }
      BatchObjective obj = batch_objective(head, xb, yb, use_mmd ? &tb : nullptr, tc.mmd_weight, bank);
      if (!obj.grads.all_finite())
        fail(ErrorKind::kNonFiniteGradient,
             "non-finite gradient at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps));
      head = sgd_step(head, obj.grads, tc.learning_rate);
      sum_source += obj.source;
      sum_mmd += obj.mmd;
      ++steps;
    }
    last.source = sum_source / static_cast<double>(steps);
    last.mmd = sum_mmd / static_cast<double>(steps);
  }
  return last;
}

// ---------------------------------------------------------------------------
// Head format "PRPLHD01" (little-endian): magic[8] | u32 d | u32 C
//   | d*C f64 row-major W | C f64 b. Only linear heads have a file form.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kHeadMagic = {'P', 'R', 'P', 'L', 'H', 'D', '0', '1'};

inline std::string encode_head(const ClassifierHead& head) {
  if (head.hidden) fail(ErrorKind::kInvalidArgument, "only linear heads can be serialized");
  std::string out(kHeadMagic.begin(), kHeadMagic.end());
  detail::put_u32(out, detail::checked_u32(static_cast<std::size_t>(head.weights.rows()), "d"));
  detail::put_u32(out, detail::checked_u32(static_cast<std::size_t>(head.weights.cols()), "C"));
  for (Eigen::Index i = 0; i < head.weights.size(); ++i) detail::put_f64(out, head.weights.data()[i]);
  for (Eigen::Index j = 0; j < head.bias.size(); ++j) detail::put_f64(out, head.bias(j));
  return out;
}

inline ClassifierHead decode_head(const std::string& bytes, const std::string& what = "head file") {
  if (bytes.size() < kHeadMagic.size() || !std::equal(kHeadMagic.begin(), kHeadMagic.end(), bytes.begin()))
    fail(ErrorKind::kMalformedHeader, what + ": missing PRPLHD01 magic");
  detail::ByteReader r(bytes, what);
  r.str(kHeadMagic.size());
  const std::size_t d = r.u32();
  const std::size_t c = r.u32();
  if (d < 1 || c < 1) fail(ErrorKind::kMalformedHeader, what + ": d and C must be >= 1");
  if (r.remaining() != 8 * (d * c + c))
    fail(ErrorKind::kDimensionMismatch, what + ": payload size does not match d=" + std::to_string(d) +
                                            ", C=" + std::to_string(c));
  ClassifierHead head;
  head.weights.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c));
  head.bias.resize(static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < head.weights.size(); ++i) head.weights.data()[i] = r.f64();
  for (Eigen::Index j = 0; j < head.bias.size(); ++j) head.bias(j) = r.f64();
  head.validate();
  return head;
}

inline void save_head(const ClassifierHead& head, const std::filesystem::path& path) {
  detail::write_file(path, encode_head(head));
}

inline ClassifierHead load_head(const std::filesystem::path& path) {
  return decode_head(detail::read_file(path), path.string());
}

}  // namespace prpl
