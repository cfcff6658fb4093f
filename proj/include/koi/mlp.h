#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "koi/common.h"

namespace koi {

enum class Activation { kRelu, kTanh };

struct MlpShape {
  int input = 0;
  int hidden = 1024;
  int output = 0;
  int hidden_layers = 2;
  Activation activation = Activation::kRelu;
  // Squash outputs into (-1, 1), for actions.
  bool tanh_output = false;

  bool operator==(const MlpShape&) const = default;
};

// Fully connected network. All weights and biases live in one flat vector
// so optimizers, soft updates and checkpoints work on plain arrays.
// Inputs are batched as rows.
class Mlp {
 public:
  // Intermediate values kept for backprop.
  struct Tape {
    std::vector<Matrix> inputs;  // per layer, the layer input
    std::vector<Matrix> outputs; // per layer, post-activation
  };

  Mlp() = default;
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
  Mlp(const MlpShape& shape, std::mt19937_64& rng);

  const MlpShape& shape() const { return shape_; }
  int layer_count() const { return static_cast<int>(offsets_.size()); }
  Eigen::Index parameter_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }

  Matrix forward(const Matrix& x) const;
  // Output of the first `layers` layers (activations included).
  Matrix partial_forward(const Matrix& x, int layers) const;
  Matrix forward(const Matrix& x, Tape& tape) const;
  // Backpropagates dL/d(output). Adds dL/d(params) into `grad` when it is
  // non-null (sized like params()) and returns dL/d(input).
  Matrix backward(const Tape& tape, const Matrix& grad_out, Vector* grad) const;

 private:
  struct Layer {
    Eigen::Index weight, bias;
    int in, out;
  };
  Eigen::Map<const Matrix> weight(int l) const;
  Eigen::Map<const Vector> bias(int l) const;
  bool hidden(int l) const { return l + 1 < layer_count(); }

  MlpShape shape_;
  std::vector<Layer> offsets_;
  Vector params_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, AdamOptions options);

  void step(Vector& params, const Vector& grad);

  const AdamOptions& options() const { return options_; }
  // Exposed for checkpointing.
  Vector m, v;
  std::int64_t t = 0;

 private:
  AdamOptions options_;
};

// target <- (1 - rate) * target + rate * online.
void soft_update(Mlp& target, const Mlp& online, double rate);

void save_mlp(const Mlp& m, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace koi
