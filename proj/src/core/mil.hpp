// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace milr {

/// A bag of instance feature vectors with one binary label.
struct Bag {
  std::string bag_id;
  Eigen::MatrixXd instances; // K x d, one instance per row
  int label = 0;
  double weight = 1.0;
  std::string origin; // "slide:gx:gy" or patient id

  Eigen::Index size() const noexcept { return instances.rows(); }
};

/// Checks K >= 1, finite features, weight > 0, label in {0,1}.
void validate_bag(const Bag &bag);

struct MilDims {
  int d = 27;
  int h1 = 512;
  int h2 = 512;
  int attention = 128;
  bool gated = false;

  friend bool operator==(const MilDims &, const MilDims &) = default;
};

/// Trainable arrays of the embedding / attention / classifier network:
///
///   h_k = ReLU(W2 ReLU(W1 x_k + b1) + b2)
///   e_k = w . tanh(V h_k)              (gated: w . (tanh(V h_k) * sig(U h_k)))
///   a   = softmax(e),  z = sum_k a_k h_k,  p = sig(u . z + c)
///
/// The same struct holds gradients and Adam moments.
struct MilParams {
  MilDims dims;
  Eigen::MatrixXd W1; // h1 x d
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2; // h2 x h1
  Eigen::VectorXd b2;
  Eigen::MatrixXd V;  // L x h2
  Eigen::MatrixXd U;  // L x h2, empty unless gated
  Eigen::VectorXd w;  // L
  Eigen::VectorXd u;  // h2
  double c = 0.0;

  static MilParams zeros(const MilDims &dims);

  std::size_t parameter_count() const;

  /// Visits (name, data, size) for every block in a fixed order.
  template <class F> void for_each_block(F &&f) {
    f(std::string_view("W1"), W1.data(), static_cast<std::size_t>(W1.size()));
    f(std::string_view("b1"), b1.data(), static_cast<std::size_t>(b1.size()));
    f(std::string_view("W2"), W2.data(), static_cast<std::size_t>(W2.size()));
    f(std::string_view("b2"), b2.data(), static_cast<std::size_t>(b2.size()));
    f(std::string_view("V"), V.data(), static_cast<std::size_t>(V.size()));
    if (dims.gated)
      f(std::string_view("U"), U.data(), static_cast<std::size_t>(U.size()));
    f(std::string_view("w"), w.data(), static_cast<std::size_t>(w.size()));
    f(std::string_view("u"), u.data(), static_cast<std::size_t>(u.size()));
    f(std::string_view("c"), &c, std::size_t{1});
  }
  template <class F> void for_each_block(F &&f) const {
    const_cast<MilParams *>(this)->for_each_block(
        [&](std::string_view name, double *p, std::size_t n) {
          f(name, static_cast<const double *>(p), n);
        });
  }
};

using MilGradients = MilParams;

/// He-uniform for the ReLU layers, Xavier-uniform for V, U, w, u; biases and
/// c zero. Blocks are filled in for_each_block order, column-major, from one
/// mt19937_64 stream seeded with `seed`.
MilParams init_params(const MilDims &dims, std::uint64_t seed);

struct ForwardCache {
  Eigen::MatrixXd x;   // K x d
  Eigen::MatrixXd q1;  // pre-activation, K x h1
  Eigen::MatrixXd h1;
  Eigen::MatrixXd q2;  // K x h2
  Eigen::MatrixXd h;   // instance embeddings, K x h2
  Eigen::MatrixXd t;   // tanh(V h), K x L
  Eigen::MatrixXd g;   // gate, K x L (gated only)
  Eigen::VectorXd e;   // attention scores
  Eigen::VectorXd a;   // attention weights
  Eigen::VectorXd z;   // bag embedding
  double s = 0.0;      // logit
  double p = 0.5;
};

struct ForwardResult {
  double p = 0.5;
  Eigen::VectorXd attention;
  ForwardCache cache;
};

ForwardResult forward(const Eigen::MatrixXd &instances, const MilParams &params);
inline ForwardResult forward(const Bag &bag, const MilParams &params) {
  return forward(bag.instances, params);
}

/// u . h_k + c for every instance; the sign tells which class an instance
/// pushes toward.
Eigen::VectorXd instance_logits(const ForwardCache &cache,
                                const MilParams &params);

inline constexpr double kProbClamp = 1e-7;

/// -weight * [y ln p~ + (1-y) ln(1-p~)], p~ = clamp(p, 1e-7, 1-1e-7).
double loss_wbce(double p, int y, double weight);

/// Gradients of loss_wbce(forward(x).p, y, weight). The logit derivative is
/// weight * (p - y), which is also used inside the clamp band.
MilGradients backward(const ForwardCache &cache, const MilParams &params, int y,
                      double weight);

// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr_min = 1e-5;
  double lr_max = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 100;
  /// 0 means 2 x number of training bags.
  int cycle_steps = 0;
  /// Stop after this many epochs without a new best validation loss; 0 off.
  int patience = 0;
  std::uint64_t seed = 1;
  MilDims dims;
  /// Loss weight per bag label; bag builders copy these onto bags.
  std::map<int, double> class_weights = {{0, 1.0}, {1, 1.0}};
};

void validate(const TrainConfig &cfg);

/// Triangular wave between lr_min and lr_max with period cycle_steps,
/// starting at lr_min.
double cyclic_lr(std::int64_t step, double lr_min, double lr_max,
                 std::int64_t cycle_steps);

struct AdamState {
  MilParams m;
  MilParams v;
  std::int64_t step = 0;

  static AdamState zeros(const MilDims &dims);
};

/// One bias-corrected Adam update. Throws NonFiniteGradient before touching
/// anything if a gradient entry is NaN or infinite.
void adam_step(MilParams &params, const MilGradients &grads, AdamState &state,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

/// Per-feature standardization fitted on training instances.
struct InputNorm {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale; // 1 / sd, 1 for constant features

  bool empty() const noexcept { return mean.size() == 0; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd &x) const;
  static InputNorm fit(const std::vector<Bag> &bags);
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  bool selected = false;
};

struct MilModel {
  MilParams params;
  InputNorm norm;
  TrainConfig train_config;
  std::vector<EpochLog> log;

  /// Normalizes then runs forward.
  ForwardResult predict(const Eigen::MatrixXd &instances) const;
  double probability(const Eigen::MatrixXd &instances) const {
    return predict(instances).p;
  }
};

/// Batch size one, seeded shuffling per epoch, model selection on the
/// lowest validation loss (training loss when `validation` is empty).
MilModel train(const std::vector<Bag> &training,
               const std::vector<Bag> &validation, const TrainConfig &cfg);

/// Weighted mean loss of a model over bags.
double mean_loss(const MilModel &model, const std::vector<Bag> &bags);

std::string model_to_json(const MilModel &model);
MilModel model_from_json(const std::string &text);
void save_model(const MilModel &model, const std::filesystem::path &path);
MilModel load_model(const std::filesystem::path &path);

} // namespace milr
