#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfmpath/common.hpp"

namespace gfmpath {

enum class Activation { selu, identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

namespace selu {
inline constexpr double kAlpha = 1.6732632423543772848170429916717;
inline constexpr double kLambda = 1.0507009873554804934193349852946;
}  // namespace selu

/// Fully connected network. Hidden layers use the configured activation,
/// the output layer is affine. Samples are matrix columns.
///
/// All weights and biases live in one flat vector so that optimizers and
/// gradients share a single layout: for each layer, the column-major
/// (out x in) weight block followed by the bias.
class Mlp {
 public:
  /// Forward activations kept for reverse mode.
  struct Tape {
    std::vector<Mat> inputs;  ///< input to each linear layer
    std::vector<Mat> pre;     ///< pre-activation of each linear layer
  };

  /// Values and derivatives with respect to one input coordinate.
  struct Jet {
    Mat value;
    Mat tangent;
  };

  struct JetTape {
    std::vector<Mat> inputs, input_tangents;
    std::vector<Mat> pre, pre_tangents;
  };

  Mlp() = default;
  /// All parameters zero.
  Mlp(std::vector<int> layer_dims, Activation hidden = Activation::selu);

  /// LeCun-normal weights (std 1/sqrt(fan_in)), zero biases. With
  /// zero_output_layer the last layer starts at zero, so the network output
  /// is identically zero until trained.
  static Mlp lecun_normal(std::vector<int> layer_dims, Activation hidden, Rng& rng,
                          bool zero_output_layer = false);

  const std::vector<int>& layer_dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int n_layers() const { return static_cast<int>(dims_.size()) - 1; }
  Activation activation() const { return activation_; }

  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }
  Eigen::Index n_parameters() const { return params_.size(); }

  Eigen::Map<Mat> weight(int layer) { return weight_view(params_, layer); }
  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<Vec> bias(int layer) { return bias_view(params_, layer); }
  Eigen::Map<const Vec> bias(int layer) const;

  /// Views into any flat vector laid out like parameters().
  Eigen::Map<Mat> weight_view(Vec& flat, int layer) const;
  Eigen::Map<Vec> bias_view(Vec& flat, int layer) const;

  Mat forward(const Mat& inputs) const;
  Vec forward(const Vec& input) const;
  Mat forward(const Mat& inputs, Tape& tape) const;

  /// Reverse mode. Accumulates parameter gradients into param_grad (which
  /// must be sized like parameters()) and returns the input gradient.
  Mat backward(const Tape& tape, const Mat& upstream, Vec& param_grad) const;

  /// Forward mode: output and its derivative with respect to input row
  /// `coordinate`, for every column.
  Jet forward_jet(const Mat& inputs, int coordinate) const;
  Jet forward_jet(const Mat& inputs, int coordinate, JetTape& tape) const;

  /// Reverse mode through a jet: given dL/d(value) and dL/d(tangent),
  /// accumulates dL/d(params) and returns dL/d(inputs).
  Mat backward_jet(const JetTape& tape, const Mat& grad_value, const Mat& grad_tangent,
                   Vec& param_grad) const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  void check_input(const Mat& inputs) const;

  std::vector<int> dims_;
  Activation activation_ = Activation::selu;
  Vec params_;
  std::vector<Eigen::Index> weight_offset_, bias_offset_;
};

/// Exact derivative of every output with respect to input[time_index].
Vec time_derivative(const Mlp& net, const Vec& input, int time_index);

inline constexpr int kCheckpointVersion = 1;

/// Checkpoint JSON:
///   {"format":"gfmpath-mlp","version":1,"layer_dims":[...],
///    "activation":"selu"|"identity",
///    "layers":[{"weight":[row-major out x in],"bias":[...]}, ...]}
void save_checkpoint(const Mlp& net, const std::string& path);
Mlp load_checkpoint(const std::string& path);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction, over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n_parameters, AdamConfig config);

  void step(std::span<double> params, std::span<const double> grads);
  void step(Vec& params, const Vec& grads) {
    step(std::span<double>(params.data(), static_cast<std::size_t>(params.size())),
         std::span<const double>(grads.data(), static_cast<std::size_t>(grads.size())));
  }

  const AdamConfig& config() const { return config_; }
  long steps() const { return step_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  long step_ = 0;
};

}  // namespace gfmpath
