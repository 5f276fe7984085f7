#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xembody/autodiff.hpp"
#include "xembody/rng.hpp"

namespace xembody {

namespace detail {

/// Matrix of independent N(0, stddev^2) draws.
template <class S>
Mat<S> random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal() * stddev);
  return m;
}

}  // namespace detail

template <class S>
struct Parameter {
  std::string name;
  Mat<S> value;
  /// Whether AdamW applies decoupled weight decay to this block.
  bool decay = true;
};

/// Ordered, named parameter blocks. Order is creation order and is what the
/// checkpoint format and the optimizer iterate over.
template <class S>
class ParameterSet {
 public:
  int add(std::string name, Mat<S> value, bool decay) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    const int id = static_cast<int>(params_.size());
    index_.emplace(name, id);
    params_.push_back({std::move(name), std::move(value), decay});
    return id;
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Parameter<S>& operator[](int id) { return params_[static_cast<std::size_t>(id)]; }
  const Parameter<S>& operator[](int id) const { return params_[static_cast<std::size_t>(id)]; }

  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<T>(), p.decay);
    return out;
  }

  /// Zero-filled gradient buffers aligned with this set.
  std::vector<Mat<S>> zeros_like() const {
    std::vector<Mat<S>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
    return out;
  }

 private:
  std::vector<Parameter<S>> params_;
  std::unordered_map<std::string, int> index_;
};

/// Lazily materialized parameter leaves for one tape, so each block appears
/// on the tape at most once.
template <class S>
class ParameterLeaves {
 public:
  ParameterLeaves(Tape<S>& tape, const ParameterSet<S>& params)
      : tape_(&tape), params_(&params), leaves_(params.size()) {}

  Var<S> operator()(int id) {
    auto& leaf = leaves_[static_cast<std::size_t>(id)];
    if (!leaf.valid()) leaf = tape_->parameter((*params_)[id].value, id);
    return leaf;
  }

  Tape<S>& tape() { return *tape_; }

 private:
  Tape<S>* tape_;
  const ParameterSet<S>* params_;
  std::vector<Var<S>> leaves_;
};

}  // namespace xembody
