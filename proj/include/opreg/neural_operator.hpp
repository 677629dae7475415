#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "opreg/activation.hpp"
#include "opreg/errors.hpp"
#include "opreg/grid_function.hpp"
#include "opreg/text_format.hpp"

namespace opreg {

/// Functional approximation x -> sum_k C_k sigma(sum_l w_{k,l} x(s_l) + theta_k).
/// `weights` is row-major [neurons x samples]; `sample_points` are the sensor
/// locations s_l in [0,1].
struct BranchNet {
  std::vector<double> outer;
  std::vector<double> weights;
  std::vector<double> bias;
  std::vector<double> sample_points;

  std::size_t neurons() const { return outer.size(); }
  std::size_t samples() const { return sample_points.size(); }

  void validate() const {
    require(bias.size() == neurons() && weights.size() == neurons() * samples(), ErrorKind::DimensionMismatch,
            "branch net: inconsistent tensor sizes");
    for (double s : sample_points) {
      require(s >= 0.0 && s <= 1.0, ErrorKind::OutOfRange, "branch sample point outside [0,1]");
    }
  }

  friend bool operator==(const BranchNet&, const BranchNet&) = default;
};

/// Function approximation t -> sum_j c_j sigma(w_j t + zeta_j) on [0,1].
struct TrunkNet {
  std::vector<double> outer;
  std::vector<double> weights;
  std::vector<double> bias;

  std::size_t neurons() const { return outer.size(); }

  void validate() const {
    require(weights.size() == neurons() && bias.size() == neurons(), ErrorKind::DimensionMismatch,
            "trunk net: inconsistent tensor sizes");
  }

  friend bool operator==(const TrunkNet&, const TrunkNet&) = default;
};

inline std::vector<double> sample_input(const GridFunction& x, std::span<const double> points) {
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = x.at(points[i]);
  return out;
}

inline double eval_branch(const BranchNet& b, ActivationKind act, std::span<const double> x_samples) {
  require(x_samples.size() == b.samples(), ErrorKind::DimensionMismatch,
          "branch expects " + std::to_string(b.samples()) + " samples, got " + std::to_string(x_samples.size()));
  const std::size_t nl = b.samples();
  double acc = 0.0;
  for (std::size_t k = 0; k < b.neurons(); ++k) {
    if (b.outer[k] == 0.0) continue;
    double z = b.bias[k];
    const double* w = b.weights.data() + k * nl;
    for (std::size_t l = 0; l < nl; ++l) z += w[l] * x_samples[l];
    acc += b.outer[k] * activation(act, z);
  }
  return acc;
}

/// Gradient of eval_branch with respect to the samples.
inline std::vector<double> branch_sample_gradient(const BranchNet& b, ActivationKind act,
                                                  std::span<const double> x_samples) {
  const std::size_t nl = b.samples();
  std::vector<double> g(nl, 0.0);
  for (std::size_t k = 0; k < b.neurons(); ++k) {
    if (b.outer[k] == 0.0) continue;
    const double* w = b.weights.data() + k * nl;
    double z = b.bias[k];
    for (std::size_t l = 0; l < nl; ++l) z += w[l] * x_samples[l];
    const double d = b.outer[k] * activation_derivative(act, z);
    for (std::size_t l = 0; l < nl; ++l) g[l] += d * w[l];
  }
  return g;
}

inline double eval_trunk(const TrunkNet& tr, ActivationKind act, double t) {
  double acc = 0.0;
  for (std::size_t j = 0; j < tr.neurons(); ++j) acc += tr.outer[j] * activation(act, tr.weights[j] * t + tr.bias[j]);
  return acc;
}

/// Trunk net sampled at the nodes of an n-cell mesh.
inline GridFunction eval_trunk_on_mesh(const TrunkNet& tr, ActivationKind act, std::size_t n_cells) {
  return GridFunction::sample(n_cells, [&](double t) { return eval_trunk(tr, act, t); });
}

/// Flat coefficient set of a neural operator
///   F[x](t) = sum_j sum_k alpha_{j,k} sigma(sum_l w_{j,k,l} x(s_l) + theta_{j,k}) sigma(w_j t + zeta_j)
/// with one-dimensional input and output domains. Tensors are row-major:
/// alpha, theta [n_j x n_k]; w [n_j x n_k x n_l]; trunk_weights, zeta [n_j]; sample_points [n_l].
struct NeuralOperatorCoeffs {
  static constexpr std::size_t kDimT = 1;
  static constexpr std::size_t kDimS = 1;

  std::size_t n_j = 0, n_k = 0, n_l = 0;
  std::vector<double> alpha;
  std::vector<double> w;
  std::vector<double> trunk_weights;
  std::vector<double> theta;
  std::vector<double> sample_points;
  std::vector<double> zeta;
  ActivationKind activation = ActivationKind::Logistic;

  static NeuralOperatorCoeffs zeros(std::size_t nj, std::size_t nk, std::size_t nl,
                                    ActivationKind act = ActivationKind::Logistic) {
    NeuralOperatorCoeffs c;
    c.n_j = nj;
    c.n_k = nk;
    c.n_l = nl;
    c.alpha.assign(nj * nk, 0.0);
    c.w.assign(nj * nk * nl, 0.0);
    c.trunk_weights.assign(nj, 0.0);
    c.theta.assign(nj * nk, 0.0);
    c.sample_points.assign(nl, 0.0);
    c.zeta.assign(nj, 0.0);
    c.activation = act;
    return c;
  }

  double& a(std::size_t j, std::size_t k) { return alpha[j * n_k + k]; }
  double& th(std::size_t j, std::size_t k) { return theta[j * n_k + k]; }
  double& wt(std::size_t j, std::size_t k, std::size_t l) { return w[(j * n_k + k) * n_l + l]; }

  /// |T_n| = N_j (N_k (N_l + 2) + dim_t + dim_s + 1).
  std::size_t coefficient_count() const { return n_j * (n_k * (n_l + 2) + kDimT + kDimS + 1); }

  void validate() const {
    require(n_j > 0 && n_k > 0 && n_l > 0, ErrorKind::DimensionMismatch, "neural operator sizes must be positive");
    require(alpha.size() == n_j * n_k && theta.size() == n_j * n_k && w.size() == n_j * n_k * n_l &&
                trunk_weights.size() == n_j * kDimT && zeta.size() == n_j && sample_points.size() == n_l,
            ErrorKind::DimensionMismatch, "neural operator tensors do not match declared sizes");
    for (const auto* v : {&alpha, &w, &trunk_weights, &theta, &sample_points, &zeta}) {
      for (double a : *v) require(std::isfinite(a), ErrorKind::OutOfRange, "neural operator coefficient not finite");
    }
    for (double s : sample_points) {
      require(s >= 0.0 && s <= 1.0, ErrorKind::OutOfRange, "sample point outside [0,1]");
    }
  }

  friend bool operator==(const NeuralOperatorCoeffs&, const NeuralOperatorCoeffs&) = default;
};

inline std::vector<double> eval_neural_operator(const NeuralOperatorCoeffs& c, const GridFunction& x,
                                                std::span<const double> t_points) {
  c.validate();
  const std::vector<double> xs = sample_input(x, c.sample_points);
  // branch activations do not depend on t
  std::vector<double> coeff(c.n_j, 0.0);
  for (std::size_t j = 0; j < c.n_j; ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c.n_k; ++k) {
      const double a = c.alpha[j * c.n_k + k];
      if (a == 0.0) continue;
      const double* w = c.w.data() + (j * c.n_k + k) * c.n_l;
      double z = c.theta[j * c.n_k + k];
      for (std::size_t l = 0; l < c.n_l; ++l) z += w[l] * xs[l];
      acc += a * activation(c.activation, z);
    }
    coeff[j] = acc;
  }
  std::vector<double> out(t_points.size(), 0.0);
  for (std::size_t q = 0; q < t_points.size(); ++q) {
    require(t_points[q] >= 0.0 && t_points[q] <= 1.0, ErrorKind::OutOfRange, "output point outside [0,1]");
    double acc = 0.0;
    for (std::size_t j = 0; j < c.n_j; ++j) {
      if (coeff[j] == 0.0) continue;
      acc += coeff[j] * activation(c.activation, c.trunk_weights[j] * t_points[q] + c.zeta[j]);
    }
    out[q] = acc;
  }
  return out;
}

/// One summand of the rank-structured operator: a functional times a function.
struct SurrogateBlock {
  BranchNet branch;
  TrunkNet trunk;

  friend bool operator==(const SurrogateBlock&, const SurrogateBlock&) = default;
};

/// Per-training-index branch/trunk pairs, F[x](t) = sum_l branch_l(x) trunk_l(t).
struct StructuredSurrogateCoeffs {
  std::vector<SurrogateBlock> blocks;
  ActivationKind activation = ActivationKind::Logistic;

  friend bool operator==(const StructuredSurrogateCoeffs&, const StructuredSurrogateCoeffs&) = default;
};

/// Evaluation in the nested double-sum form.
inline std::vector<double> eval_structured(const StructuredSurrogateCoeffs& s, const GridFunction& x,
                                           std::span<const double> t_points) {
  std::vector<double> out(t_points.size(), 0.0);
  for (const auto& blk : s.blocks) {
    const double b = eval_branch(blk.branch, s.activation, sample_input(x, blk.branch.sample_points));
    for (std::size_t q = 0; q < t_points.size(); ++q) out[q] += b * eval_trunk(blk.trunk, s.activation, t_points[q]);
  }
  return out;
}

/// Block-diagonal embedding of the structured form into one flat coefficient set.
/// Blocks are zero-padded to the largest per-block widths first, so the flat
/// sizes are (max N_j) * N, (max N_k) * N and (max N_l) * N.
inline NeuralOperatorCoeffs flatten_structured(const StructuredSurrogateCoeffs& s) {
  require(!s.blocks.empty(), ErrorKind::DimensionMismatch, "cannot flatten an empty surrogate");
  std::size_t nj = 0, nk = 0, nl = 0;
  for (const auto& blk : s.blocks) {
    blk.branch.validate();
    blk.trunk.validate();
    nj = std::max(nj, blk.trunk.neurons());
    nk = std::max(nk, blk.branch.neurons());
    nl = std::max(nl, blk.branch.samples());
  }
  const std::size_t nb = s.blocks.size();
  auto flat = NeuralOperatorCoeffs::zeros(nj * nb, nk * nb, nl * nb, s.activation);
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& br = s.blocks[b].branch;
    const auto& tr = s.blocks[b].trunk;
    for (std::size_t l = 0; l < br.samples(); ++l) flat.sample_points[b * nl + l] = br.sample_points[l];
    for (std::size_t j = 0; j < tr.neurons(); ++j) {
      flat.trunk_weights[b * nj + j] = tr.weights[j];
      flat.zeta[b * nj + j] = tr.bias[j];
    }
    for (std::size_t k = 0; k < br.neurons(); ++k) {
      const std::size_t kk = b * nk + k;
      // inner branch weights are shared by every trunk row
      for (std::size_t jj = 0; jj < flat.n_j; ++jj) {
        flat.th(jj, kk) = br.bias[k];
        for (std::size_t l = 0; l < br.samples(); ++l) flat.wt(jj, kk, b * nl + l) = br.weights[k * br.samples() + l];
      }
      for (std::size_t j = 0; j < tr.neurons(); ++j) flat.a(b * nj + j, kk) = tr.outer[j] * br.outer[k];
    }
  }
  return flat;
}

inline void write_coeffs(TextDocument& doc, const NeuralOperatorCoeffs& c, const std::string& prefix = "") {
  doc.set(prefix + "activation", std::string(to_string(c.activation)));
  doc.set(prefix + "N_j", c.n_j);
  doc.set(prefix + "N_k", c.n_k);
  doc.set(prefix + "N_l", c.n_l);
  doc.set(prefix + "coefficient_count", c.coefficient_count());
  doc.set_array(prefix + "alpha", {c.n_j, c.n_k}, c.alpha);
  doc.set_array(prefix + "w", {c.n_j, c.n_k, c.n_l}, c.w);
  doc.set_array(prefix + "w_vec", {c.n_j, NeuralOperatorCoeffs::kDimT}, c.trunk_weights);
  doc.set_array(prefix + "theta", {c.n_j, c.n_k}, c.theta);
  doc.set_array(prefix + "s_points", {c.n_l}, c.sample_points);
  doc.set_array(prefix + "zeta", {c.n_j}, c.zeta);
}

inline NeuralOperatorCoeffs read_coeffs(const TextDocument& doc, const std::string& prefix = "") {
  NeuralOperatorCoeffs c;
  c.activation = parse_activation(doc.get(prefix + "activation"));
  c.n_j = doc.get_size(prefix + "N_j");
  c.n_k = doc.get_size(prefix + "N_k");
  c.n_l = doc.get_size(prefix + "N_l");
  c.alpha = doc.get_array(prefix + "alpha").values;
  c.w = doc.get_array(prefix + "w").values;
  c.trunk_weights = doc.get_array(prefix + "w_vec").values;
  c.theta = doc.get_array(prefix + "theta").values;
  c.sample_points = doc.get_array(prefix + "s_points").values;
  c.zeta = doc.get_array(prefix + "zeta").values;
  c.validate();
  return c;
}

inline void write_structured(TextDocument& doc, const StructuredSurrogateCoeffs& s, const std::string& prefix = "") {
  doc.set(prefix + "activation", std::string(to_string(s.activation)));
  doc.set(prefix + "blocks", s.blocks.size());
  for (std::size_t b = 0; b < s.blocks.size(); ++b) {
    const std::string p = prefix + "block." + std::to_string(b + 1) + ".";
    const auto& br = s.blocks[b].branch;
    const auto& tr = s.blocks[b].trunk;
    doc.set_array(p + "branch.C", br.outer);
    doc.set_array(p + "branch.w", {br.neurons(), br.samples()}, br.weights);
    doc.set_array(p + "branch.theta", br.bias);
    doc.set_array(p + "branch.s_points", br.sample_points);
    doc.set_array(p + "trunk.c", tr.outer);
    doc.set_array(p + "trunk.w", tr.weights);
    doc.set_array(p + "trunk.zeta", tr.bias);
  }
}

inline StructuredSurrogateCoeffs read_structured(const TextDocument& doc, const std::string& prefix = "") {
  StructuredSurrogateCoeffs s;
  s.activation = parse_activation(doc.get(prefix + "activation"));
  const std::size_t nb = doc.get_size(prefix + "blocks");
  for (std::size_t b = 0; b < nb; ++b) {
    const std::string p = prefix + "block." + std::to_string(b + 1) + ".";
    SurrogateBlock blk;
    blk.branch.outer = doc.get_array(p + "branch.C").values;
    blk.branch.weights = doc.get_array(p + "branch.w").values;
    blk.branch.bias = doc.get_array(p + "branch.theta").values;
    blk.branch.sample_points = doc.get_array(p + "branch.s_points").values;
    blk.trunk.outer = doc.get_array(p + "trunk.c").values;
    blk.trunk.weights = doc.get_array(p + "trunk.w").values;
    blk.trunk.bias = doc.get_array(p + "trunk.zeta").values;
    blk.branch.validate();
    blk.trunk.validate();
    s.blocks.push_back(std::move(blk));
  }
  return s;
}

}  // namespace opreg
