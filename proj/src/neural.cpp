#include "gfmpath/neural.hpp"

#include <cmath>
#include <fstream>

namespace gfmpath {

std::string to_string(Activation a) { return a == Activation::selu ? "selu" : "identity"; }

Activation activation_from_string(const std::string& name) {
  if (name == "selu") return Activation::selu;
  if (name == "identity") return Activation::identity;
  throw SchemaError("unknown activation '" + name + "'");
}

namespace {

// The derivative at exactly 0 takes the positive branch.
Mat activate(const Mat& z, Activation a) {
  if (a == Activation::identity) return z;
  const auto neg = (selu::kLambda * selu::kAlpha) * (z.array().min(0.0).exp() - 1.0);
  return (z.array() > 0.0).select(selu::kLambda * z.array(), neg).matrix();
}

Mat activate_first(const Mat& z, Activation a) {
  if (a == Activation::identity) return Mat::Ones(z.rows(), z.cols());
  const auto neg = (selu::kLambda * selu::kAlpha) * z.array().min(0.0).exp();
  return (z.array() >= 0.0).select(Mat::Constant(z.rows(), z.cols(), selu::kLambda).array(), neg).matrix();
}

Mat activate_second(const Mat& z, Activation a) {
  if (a == Activation::identity) return Mat::Zero(z.rows(), z.cols());
  const auto neg = (selu::kLambda * selu::kAlpha) * z.array().min(0.0).exp();
  return (z.array() >= 0.0).select(Mat::Zero(z.rows(), z.cols()).array(), neg).matrix();
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_dims, Activation hidden)
    : dims_(std::move(layer_dims)), activation_(hidden) {
  if (dims_.size() < 2) throw ContractError("Mlp needs at least an input and an output layer");
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] < 1 || dims_[l + 1] < 1) throw ContractError("Mlp layer widths must be positive");
    weight_offset_.push_back(offset);
    offset += static_cast<Eigen::Index>(dims_[l]) * dims_[l + 1];
    bias_offset_.push_back(offset);
    offset += dims_[l + 1];
  }
  params_ = Vec::Zero(offset);
}

Mlp Mlp::lecun_normal(std::vector<int> layer_dims, Activation hidden, Rng& rng,
                      bool zero_output_layer) {
  Mlp net(std::move(layer_dims), hidden);
  for (int l = 0; l < net.n_layers(); ++l) {
    if (zero_output_layer && l + 1 == net.n_layers()) break;
    auto w = net.weight(l);
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.normal();
    }
  }
  return net;
}

Eigen::Map<const Mat> Mlp::weight(int layer) const {
  return {params_.data() + weight_offset_[layer], dims_[layer + 1], dims_[layer]};
}

Eigen::Map<const Vec> Mlp::bias(int layer) const {
  return {params_.data() + bias_offset_[layer], dims_[layer + 1]};
}

Eigen::Map<Mat> Mlp::weight_view(Vec& flat, int layer) const {
  return {flat.data() + weight_offset_[layer], dims_[layer + 1], dims_[layer]};
}

Eigen::Map<Vec> Mlp::bias_view(Vec& flat, int layer) const {
  return {flat.data() + bias_offset_[layer], dims_[layer + 1]};
}

void Mlp::check_input(const Mat& inputs) const {
  if (inputs.rows() != input_dim()) {
    throw ContractError("Mlp: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                        std::to_string(input_dim()));
  }
}

Mat Mlp::forward(const Mat& inputs) const {
  check_input(inputs);
  Mat a = inputs;
  for (int l = 0; l < n_layers(); ++l) {
    Mat z = weight(l) * a;
    z.colwise() += bias(l);
    a = (l + 1 < n_layers()) ? activate(z, activation_) : std::move(z);
  }
  return a;
}

Vec Mlp::forward(const Vec& input) const {
  if (input.size() != input_dim()) {
    throw ContractError("Mlp: input has length " + std::to_string(input.size()) + ", expected " +
                        std::to_string(input_dim()));
  }
  return forward(Mat(input)).col(0);
}

Mat Mlp::forward(const Mat& inputs, Tape& tape) const {
  check_input(inputs);
  tape.inputs.assign(1, inputs);
  tape.pre.clear();
  for (int l = 0; l < n_layers(); ++l) {
    Mat z = weight(l) * tape.inputs.back();
    z.colwise() += bias(l);
    tape.pre.push_back(z);
    if (l + 1 < n_layers()) {
      tape.inputs.push_back(activate(z, activation_));
    } else {
      return z;
    }
  }
  return {};
}

Mat Mlp::backward(const Tape& tape, const Mat& upstream, Vec& param_grad) const {
  if (param_grad.size() != params_.size()) throw ContractError("Mlp::backward: gradient size mismatch");
  if (upstream.rows() != output_dim() || upstream.cols() != tape.pre.back().cols()) {
    throw ContractError("Mlp::backward: upstream gradient shape mismatch");
  }
  Mat g = upstream;
  for (int l = n_layers() - 1; l >= 0; --l) {
    if (l + 1 < n_layers()) g = g.cwiseProduct(activate_first(tape.pre[l], activation_));
    weight_view(param_grad, l).noalias() += g * tape.inputs[l].transpose();
    bias_view(param_grad, l) += g.rowwise().sum();
    g = weight(l).transpose() * g;
  }
  return g;
}

Mlp::Jet Mlp::forward_jet(const Mat& inputs, int coordinate) const {
  JetTape tape;
  return forward_jet(inputs, coordinate, tape);
}

Mlp::Jet Mlp::forward_jet(const Mat& inputs, int coordinate, JetTape& tape) const {
  check_input(inputs);
  if (coordinate < 0 || coordinate >= input_dim()) {
    throw ContractError("Mlp::forward_jet: coordinate " + std::to_string(coordinate) +
                        " out of range");
  }
  Mat seed = Mat::Zero(inputs.rows(), inputs.cols());
  seed.row(coordinate).setOnes();
  tape.inputs.assign(1, inputs);
  tape.input_tangents.assign(1, seed);
  tape.pre.clear();
  tape.pre_tangents.clear();
  for (int l = 0; l < n_layers(); ++l) {
    Mat z = weight(l) * tape.inputs.back();
    z.colwise() += bias(l);
    Mat dz = weight(l) * tape.input_tangents.back();
    tape.pre.push_back(z);
    tape.pre_tangents.push_back(dz);
    if (l + 1 == n_layers()) return {std::move(z), std::move(dz)};
    tape.input_tangents.push_back(activate_first(z, activation_).cwiseProduct(dz));
    tape.inputs.push_back(activate(z, activation_));
  }
  return {};
}

Mat Mlp::backward_jet(const JetTape& tape, const Mat& grad_value, const Mat& grad_tangent,
                      Vec& param_grad) const {
  if (param_grad.size() != params_.size()) {
    throw ContractError("Mlp::backward_jet: gradient size mismatch");
  }
  Mat g = grad_value;
  Mat gd = grad_tangent;
  for (int l = n_layers() - 1; l >= 0; --l) {
    if (l + 1 < n_layers()) {
      const Mat first = activate_first(tape.pre[l], activation_);
      const Mat second = activate_second(tape.pre[l], activation_);
      g = g.cwiseProduct(first) + gd.cwiseProduct(second).cwiseProduct(tape.pre_tangents[l]);
      gd = gd.cwiseProduct(first);
    }
    auto gw = weight_view(param_grad, l);
    gw.noalias() += g * tape.inputs[l].transpose();
    gw.noalias() += gd * tape.input_tangents[l].transpose();
    bias_view(param_grad, l) += g.rowwise().sum();
    g = weight(l).transpose() * g;
    gd = weight(l).transpose() * gd;
  }
  // The input tangent is a constant seed, so only the value path reaches the inputs.
  return g;
}

Vec time_derivative(const Mlp& net, const Vec& input, int time_index) {
  if (input.size() != net.input_dim()) throw ContractError("time_derivative: input length mismatch");
  return net.forward_jet(Mat(input), time_index).tangent.col(0);
}

nlohmann::json Mlp::to_json() const {
  auto layers = nlohmann::json::array();
  for (int l = 0; l < n_layers(); ++l) {
    const auto w = weight(l);
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) row_major.push_back(w(i, j));
    }
    const auto b = bias(l);
    layers.push_back({{"weight", row_major}, {"bias", std::vector<double>(b.begin(), b.end())}});
  }
  return {{"format", "gfmpath-mlp"},
          {"version", kCheckpointVersion},
          {"layer_dims", dims_},
          {"activation", to_string(activation_)},
          {"layers", layers}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "gfmpath-mlp") throw SchemaError("not an MLP checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw SchemaError("unsupported checkpoint version " + std::to_string(version));
    }
    Mlp net(j.at("layer_dims").get<std::vector<int>>(),
            activation_from_string(j.at("activation").get<std::string>()));
    const auto& layers = j.at("layers");
    if (layers.size() != static_cast<std::size_t>(net.n_layers())) {
      throw SchemaError("checkpoint layer count does not match layer_dims");
    }
    for (int l = 0; l < net.n_layers(); ++l) {
      const auto w = layers[l].at("weight").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      auto wv = net.weight(l);
      auto bv = net.bias(l);
      if (w.size() != static_cast<std::size_t>(wv.size()) ||
          b.size() != static_cast<std::size_t>(bv.size())) {
        throw SchemaError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
      }
      for (Eigen::Index i = 0; i < wv.rows(); ++i) {
        for (Eigen::Index c = 0; c < wv.cols(); ++c) wv(i, c) = w[i * wv.cols() + c];
      }
      for (Eigen::Index i = 0; i < bv.size(); ++i) bv[i] = b[i];
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw SchemaError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Mlp& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << net.to_json().dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": corrupt checkpoint: " + e.what());
  }
  return Mlp::from_json(j);
}

Adam::Adam(std::size_t n_parameters, AdamConfig config)
    : config_(config), m_(n_parameters, 0.0), v_(n_parameters, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ContractError("Adam::step: parameter/gradient size mismatch");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

}  // namespace gfmpath
