#pragma once

// The three-term training objective:
//   - symmetric contrastive alignment loss over a batch's cross-modal
//     similarity matrix with temperature scaling,
//   - mean squared error,
//   - batch-local category-aware clustering loss: a margin push away from
//     other groups' centers plus a log pull toward the own-group center,
// combined as lambda1 * align + lambda2 * mse + lambda3 * clustering.
//
// Similarity inside the clustering loss is the affinely mapped cosine
// s(a,b) = (1 + <a,b>)/2, so the log term is defined for all unit vectors.
// The log pull is counted once per sample, not once per negative center.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegdwt/autograd.hpp"
#include "eegdwt/errors.hpp"
#include "eegdwt/tensor.hpp"

namespace eegdwt::losses {

struct LossConfig {
  double lambda1 = 1.0;  // alignment
  double lambda2 = 1.0;  // mse
  double lambda3 = 0.1;  // clustering
  double margin = 0.5;
  double epsilon = 1e-8;
  double temperature = 0.07;
  bool learnable_temperature = false;
  // optional extra alignment term against text embeddings; off by default
  double lambda_text = 0.0;

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0 || lambda_text < 0.0) {
      throw ConfigError("loss: lambda weights must be non-negative");
    }
    if (margin < 0.0 || margin > 1.0) {
      throw ConfigError("loss.margin: must lie in [0,1]");
    }
    if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon: must be positive");
    if (!(temperature > 0.0)) throw ConfigError("loss.temperature: must be positive");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"lambda1", c.lambda1},
                     {"lambda2", c.lambda2},
                     {"lambda3", c.lambda3},
                     {"margin", c.margin},
                     {"epsilon", c.epsilon},
                     {"temperature", c.temperature},
                     {"learnable_temperature", c.learnable_temperature},
                     {"lambda_text", c.lambda_text}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lambda3 = j.value("lambda3", c.lambda3);
  c.margin = j.value("margin", c.margin);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.temperature = j.value("temperature", c.temperature);
  c.learnable_temperature = j.value("learnable_temperature", c.learnable_temperature);
  c.lambda_text = j.value("lambda_text", c.lambda_text);
}

// ---------------------------------------------------------------------------

namespace detail_ {

inline void require_same_shape(const ag::Var& a, const ag::Var& b,
                               const char* what) {
  if (a.shape() != b.shape()) {
    throw ArgumentError(detail::str(what, ": shape mismatch ",
                                    shape_str(a.shape()), " vs ",
                                    shape_str(b.shape())));
  }
}

inline void require_rows_normalized(const Tensor& m, const char* what,
                                    double tol = 1e-3) {
  if (m.rank() != 2) throw ArgumentError(detail::str(what, ": expects (K,D)"));
  const std::int64_t k = m.dim(0), d = m.dim(1);
  for (std::int64_t i = 0; i < k; ++i) {
    double s = 0.0;
    const double* row = m.data() + i * d;
    for (std::int64_t j = 0; j < d; ++j) s += row[j] * row[j];
    if (std::abs(std::sqrt(s) - 1.0) > tol) {
      throw ArgumentError(detail::str(what, ": row ", i,
                                      " is not L2-normalized (norm ",
                                      std::sqrt(s), ")"));
    }
  }
}

// sum of diagonal entries of a (K,K) Var, as a scalar Var
inline ag::Var diag_sum(const ag::Var& m) {
  const std::int64_t k = m.dim(0);
  return ag::sum_all(ag::mul(m, ag::constant(Tensor::identity(k))));
}

}  // namespace detail_

// Symmetric contrastive alignment: L = 1/2 (L_{I->E} + L_{E->I}), each side
// the mean row-wise cross entropy of the scaled similarity matrix against
// the matched-pair diagonal. Rows of both inputs must be unit-norm.
inline ag::Var align_loss(const ag::Var& f_i, const ag::Var& f_e,
                          const ag::Var& tau) {
  detail_::require_same_shape(f_i, f_e, "align_loss");
  detail_::require_rows_normalized(f_i.value(), "align_loss F_I");
  detail_::require_rows_normalized(f_e.value(), "align_loss F_E");
  const std::int64_t k = f_i.dim(0);
  if (k < 1) throw ArgumentError("align_loss: K must be >= 1");
  ag::Var sims = ag::matmul(f_i, ag::permute(f_e, {1, 0}));  // (K,K), S[i][j]=<I_i,E_j>
  ag::Var logits = ag::div(sims, tau);
  ag::Var i_to_e = detail_::diag_sum(ag::log_softmax_last(logits));
  ag::Var e_to_i = detail_::diag_sum(ag::log_softmax_last(ag::permute(logits, {1, 0})));
  return ag::scale(ag::add(i_to_e, e_to_i), -0.5 / static_cast<double>(k));
}

inline ag::Var align_loss(const ag::Var& f_i, const ag::Var& f_e, double tau) {
  return align_loss(f_i, f_e, ag::constant(Tensor::scalar(tau)));
}

inline ag::Var mse_loss(const ag::Var& f_i, const ag::Var& f_e) {
  detail_::require_same_shape(f_i, f_e, "mse_loss");
  return ag::mean_squared_error(f_i, f_e);
}

// ---------------------------------------------------------------------------
// batch-local grouping

struct BatchGroups {
  std::vector<std::int64_t> group_of;  // per sample, in [0, J)
  Tensor centers;                      // (J, D), unit rows

  std::int64_t group_count() const { return centers.defined() ? centers.dim(0) : 0; }

  void validate(std::int64_t batch) const {
    if (static_cast<std::int64_t>(group_of.size()) != batch) {
      throw ArgumentError(detail::str("group assignment covers ", group_of.size(),
                                      " samples, batch is ", batch));
    }
    const std::int64_t j = group_count();
    if (j < 1) throw ArgumentError("batch groups: J must be >= 1");
    if (j > batch) throw ArgumentError("batch groups: J exceeds batch size");
    for (auto g : group_of) {
      if (g < 0 || g >= j) {
        throw ArgumentError(detail::str("group index ", g, " out of range [0,", j, ")"));
      }
    }
    for (std::int64_t r = 0; r < j; ++r) {
      double s = 0.0;
      for (std::int64_t d = 0; d < centers.dim(1); ++d)
        s += centers.at(r, d) * centers.at(r, d);
      if (std::abs(std::sqrt(s) - 1.0) > 1e-5) {
        throw ArgumentError(detail::str("center ", r, " is not unit-norm"));
      }
    }
  }
};

// Batch-local group ids by first occurrence, so grouping never depends on
// any global class vocabulary.
inline std::vector<std::int64_t> group_indices(const std::vector<std::string>& concept_ids) {
  std::map<std::string, std::int64_t> seen;
  std::vector<std::int64_t> out;
  out.reserve(concept_ids.size());
  for (const auto& c : concept_ids) {
    auto it = seen.find(c);
    if (it == seen.end()) it = seen.emplace(c, static_cast<std::int64_t>(seen.size())).first;
    out.push_back(it->second);
  }
  return out;
}

// center_j = normalize(mean of the normalized member rows). A zero mean
// (e.g. two antipodal members) is refused rather than silently normalized.
inline BatchGroups batch_centers(const Tensor& f_e,
                                 const std::vector<std::int64_t>& group_of) {
  if (f_e.rank() != 2) throw ArgumentError("batch_centers: expects (K,D)");
  const std::int64_t k = f_e.dim(0), d = f_e.dim(1);
  if (static_cast<std::int64_t>(group_of.size()) != k) {
    throw ArgumentError("batch_centers: group assignment does not match batch");
  }
  std::int64_t j = 0;
  for (auto g : group_of) j = std::max(j, g + 1);
  if (j < 1) throw ArgumentError("batch_centers: no groups");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(j), 0);
  Tensor normed = f_e;
  l2_normalize_rows_inplace(normed);
  Tensor centers({j, d});
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t g = group_of[static_cast<std::size_t>(i)];
    if (g < 0) throw ArgumentError("batch_centers: negative group index");
    ++counts[static_cast<std::size_t>(g)];
    for (std::int64_t c = 0; c < d; ++c) centers.at(g, c) += normed.at(i, c);
  }
  for (std::int64_t g = 0; g < j; ++g) {
    if (counts[static_cast<std::size_t>(g)] == 0) {
      throw ArgumentError(detail::str("batch_centers: group ", g, " is empty"));
    }
    double s = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
      centers.at(g, c) /= static_cast<double>(counts[static_cast<std::size_t>(g)]);
      s += centers.at(g, c) * centers.at(g, c);
    }
    const double norm = std::sqrt(s);
    if (norm < 1e-9) {
      throw ArgumentError(detail::str("batch_centers: degenerate center for group ",
                                      g, " (member mean is ~zero)"));
    }
    for (std::int64_t c = 0; c < d; ++c) centers.at(g, c) /= norm;
  }
  BatchGroups out{group_of, std::move(centers)};
  out.validate(k);
  return out;
}

// Per sample k in group j, with s(a,b) = (1 + <a,b>)/2:
//   loss_k = sum_{i != j} max(0, s(Q^k, C_i) - M) - log(s(Q^k, C_j) + eps)
// Total is the mean over samples. Centers are fixed inputs here; gradients
// flow through the sample features only.
inline ag::Var clustering_loss(const ag::Var& f_e, const BatchGroups& groups,
                               double margin, double epsilon) {
  if (f_e.rank() != 2) throw ArgumentError("clustering_loss: expects (K,D)");
  const std::int64_t k = f_e.dim(0);
  const std::int64_t j = groups.group_count();
  if (j < 1) throw ArgumentError("clustering_loss: J must be >= 1");
  groups.validate(k);
  if (groups.centers.dim(1) != f_e.dim(1)) {
    throw ArgumentError("clustering_loss: center width does not match features");
  }
  Tensor own({k, j});
  Tensor other({k, j});
  for (std::int64_t i = 0; i < k; ++i) {
    for (std::int64_t g = 0; g < j; ++g) {
      const bool mine = groups.group_of[static_cast<std::size_t>(i)] == g;
      own.at(i, g) = mine ? 1.0 : 0.0;
      other.at(i, g) = mine ? 0.0 : 1.0;
    }
  }
  ag::Var sims = ag::matmul(f_e, ag::constant(transpose2d(groups.centers)));
  ag::Var s = ag::add_scalar(ag::scale(sims, 0.5), 0.5);  // (K,J) in [0,1]
  ag::Var margins = ag::sum_axis(
      ag::mul(ag::relu(ag::add_scalar(s, -margin)), ag::constant(other)), 1);
  ag::Var own_sim = ag::sum_axis(ag::mul(s, ag::constant(own)), 1);
  ag::Var pull = ag::neg(ag::log_(ag::add_scalar(own_sim, epsilon)));
  return ag::mean_all(ag::add(margins, pull));
}

// ---------------------------------------------------------------------------

struct LossTerms {
  double align = 0.0;
  double mse = 0.0;
  double clustering = 0.0;
  double total = 0.0;
};

// lambda1 * align + lambda2 * mse + lambda3 * clustering, each term the
// batch mean its own definition uses. Terms with zero weight are skipped.
// `f_t` adds the optional text-alignment term when cfg.lambda_text > 0.
inline ag::Var combined_loss(const ag::Var& f_i, const ag::Var& f_e,
                             const BatchGroups& groups, const LossConfig& cfg,
                             const ag::Var& tau, LossTerms* terms = nullptr,
                             const std::optional<ag::Var>& f_t = std::nullopt) {
  cfg.validate();
  ag::Var total = ag::constant(Tensor::scalar(0.0));
  LossTerms t;
  if (cfg.lambda1 > 0.0) {
    ag::Var a = align_loss(f_i, f_e, tau);
    t.align = a.value()[0];
    total = ag::add(total, ag::scale(a, cfg.lambda1));
  }
  if (cfg.lambda2 > 0.0) {
    ag::Var m = mse_loss(f_i, f_e);
    t.mse = m.value()[0];
    total = ag::add(total, ag::scale(m, cfg.lambda2));
  }
  if (cfg.lambda3 > 0.0) {
    ag::Var c = clustering_loss(f_e, groups, cfg.margin, cfg.epsilon);
    t.clustering = c.value()[0];
    total = ag::add(total, ag::scale(c, cfg.lambda3));
  }
  if (cfg.lambda_text > 0.0) {
    if (!f_t.has_value()) {
      throw ArgumentError("combined_loss: lambda_text > 0 but no text embeddings");
    }
    total = ag::add(total, ag::scale(align_loss(*f_t, f_e, tau), cfg.lambda_text));
  }
  t.total = total.value()[0];
  if (terms) *terms = t;
  return total;
}

inline ag::Var combined_loss(const ag::Var& f_i, const ag::Var& f_e,
                             const BatchGroups& groups, const LossConfig& cfg,
                             LossTerms* terms = nullptr) {
  return combined_loss(f_i, f_e, groups, cfg,
                       ag::constant(Tensor::scalar(cfg.temperature)), terms);
}

}  // namespace eegdwt::losses
