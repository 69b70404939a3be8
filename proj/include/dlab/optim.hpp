#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dlab/error.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

/// Named trainable parameters with their Adam moments, plus named
/// non-trainable buffers (batch-norm running statistics). Insertion order is
/// preserved and defines the serialisation order.
template <typename Scalar>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> tensor;
    Array<Scalar> first_moment;
    Array<Scalar> second_moment;
  };

  Tensor<Scalar> add_parameter(const std::string& name, Shape shape, Array<Scalar> values) {
    check_unique(name);
    auto t = Tensor<Scalar>::from_values(std::move(shape), std::move(values), true);
    const Index n = t.size();
    params_.push_back({name, t, Array<Scalar>::Zero(n), Array<Scalar>::Zero(n)});
    return t;
  }

  Tensor<Scalar> add_buffer(const std::string& name, Shape shape, Array<Scalar> values) {
    check_unique(name);
    auto t = Tensor<Scalar>::from_values(std::move(shape), std::move(values), false);
    buffers_.emplace_back(name, t);
    return t;
  }

  const std::vector<Entry>& parameters() const { return params_; }
  std::vector<Entry>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor<Scalar>>>& buffers() const { return buffers_; }

  const Tensor<Scalar>* find(const std::string& name) const {
    for (const auto& e : params_) {
      if (e.name == name) return &e.tensor;
    }
    for (const auto& [n, t] : buffers_) {
      if (n == name) return &t;
    }
    return nullptr;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& e : params_) n += e.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : params_) e.tensor.zero_grad();
  }

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  /// Copies values (parameters and buffers) from another set with identical layout.
  void assign_values(const ParamSet& other) {
    if (other.params_.size() != params_.size() || other.buffers_.size() != buffers_.size()) {
      throw ShapeError("ParamSet: layout mismatch on assignment");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name != other.params_[i].name ||
          params_[i].tensor.shape() != other.params_[i].tensor.shape()) {
        throw ShapeError("ParamSet: parameter '" + params_[i].name + "' does not match");
      }
      params_[i].tensor.mutable_value() = other.params_[i].tensor.value();
    }
    for (std::size_t i = 0; i < buffers_.size(); ++i) {
      if (buffers_[i].first != other.buffers_[i].first ||
          buffers_[i].second.shape() != other.buffers_[i].second.shape()) {
        throw ShapeError("ParamSet: buffer '" + buffers_[i].first + "' does not match");
      }
      buffers_[i].second.mutable_value() = other.buffers_[i].second.value();
    }
  }

 private:
  void check_unique(const std::string& name) const {
    if (find(name) != nullptr) throw ConfigError("ParamSet: duplicate name '" + name + "'");
  }

  std::vector<Entry> params_;
  std::vector<std::pair<std::string, Tensor<Scalar>>> buffers_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update over every parameter in the set. All
/// parameters must carry a gradient; the shared step counter is incremented.
template <typename Scalar>
void adam_step(ParamSet<Scalar>& params, double lr, const AdamConfig& cfg = {}) {
  for (const auto& e : params.parameters()) {
    if (!e.tensor.has_grad()) {
      throw Error("adam_step: parameter '" + e.name + "' has no gradient");
    }
  }
  const std::int64_t t = params.step() + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto step_size = static_cast<Scalar>(lr / c1);
  const auto v_scale = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  for (auto& e : params.parameters()) {
    const auto& g = e.tensor.grad();
    e.first_moment = b1 * e.first_moment + (Scalar(1) - b1) * g;
    e.second_moment = b2 * e.second_moment + (Scalar(1) - b2) * g.square();
    e.tensor.mutable_value() -=
        step_size * e.first_moment / (e.second_moment.sqrt() * v_scale + eps);
  }
  params.set_step(t);
}

/// Exponential decay: initial * decay_rate^(step / decay_steps), with the
/// exponent floored when `staircase` is set.
struct LrSchedule {
  double initial_rate = 0.0005;
  double decay_rate = 0.96;
  std::int64_t decay_steps = 300000;
  bool staircase = false;

  void validate() const {
    if (!(initial_rate > 0.0)) throw ConfigError("lr schedule: initial_rate must be > 0");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) {
      throw ConfigError("lr schedule: decay_rate must be in (0, 1]");
    }
    if (decay_steps <= 0) throw ConfigError("lr schedule: decay_steps must be > 0");
  }

  double rate(std::int64_t step) const {
    double exponent = static_cast<double>(step) / static_cast<double>(decay_steps);
    if (staircase) exponent = std::floor(exponent);
    return initial_rate * std::pow(decay_rate, exponent);
  }
};

inline double lr_at_step(const LrSchedule& s, std::int64_t step) { return s.rate(step); }

}  // namespace dlab
