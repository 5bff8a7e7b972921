//
// Copyright 2026 The attrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

// Minimal dense network core: parameter tensors, the embedding -> affine
// -> activation -> affine -> L2-normalize tower used for every representation
// network, Adam, and a small parameter container format.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "attrec/rng.hpp"

namespace attrec::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Row-major values plus an equally shaped gradient. Vectors are stored as
// 1 x n matrices; `shape` keeps the logical shape.
template <typename S>
struct BasicParamTensor {
  std::string name;
  std::vector<size_t> shape;
  Mat<S> values;
  Mat<S> grad;

  BasicParamTensor() = default;
  BasicParamTensor(std::string n, std::vector<size_t> s);

  size_t size() const { return static_cast<size_t>(values.size()); }
  void zero_grad() { grad.setZero(); }
  bool values_finite() const { return values.allFinite(); }
};

using ParamTensor = BasicParamTensor<float>;

enum class Activation { relu, tanh };

struct TowerSpec {
  size_t vocab_size = 0;
  size_t embed_dim = 64;
  std::vector<size_t> hidden_dims{64, 64};
  size_t out_dim = 64;
  Activation activation = Activation::relu;
};

inline constexpr double kNormEpsilon = 1e-12;

// Embedding row -> hidden (affine + activation)* -> affine -> x / (|x| + eps).
template <typename S>
class BasicTower {
 public:
  struct Cache {
    std::vector<int32_t> ids;
    std::vector<Mat<S>> inputs;  // input of every affine layer; inputs[0] = embedding rows
    std::vector<Mat<S>> pre;     // pre-activation of every hidden layer
    Mat<S> raw;                  // output layer before normalization
    Vec<S> norms;
    Mat<S> out;
  };

  BasicTower() = default;
  BasicTower(TowerSpec spec, const std::string& prefix);

  // Embeddings U(-0.05, 0.05), affine weights Glorot-uniform, biases zero.
  void initialize(Rng& rng);

  const TowerSpec& spec() const { return spec_; }
  std::vector<BasicParamTensor<S>>& params() { return params_; }
  const std::vector<BasicParamTensor<S>>& params() const { return params_; }

  // Batched forward; rows of the returned matrix are the normalized outputs.
  const Mat<S>& forward(std::span<const int32_t> ids, Cache& cache) const;
  Vec<S> forward(int32_t id) const;

  // Accumulates (+=) parameter gradients for d(loss)/d(out) = upstream.
  void backward(const Cache& cache, const Mat<S>& upstream);

  void zero_grad();

 private:
  size_t layer_count() const { return spec_.hidden_dims.size() + 1; }
  BasicParamTensor<S>& weight(size_t layer) { return params_[1 + 2 * layer]; }
  BasicParamTensor<S>& bias(size_t layer) { return params_[2 + 2 * layer]; }
  const BasicParamTensor<S>& weight(size_t layer) const { return params_[1 + 2 * layer]; }
  const BasicParamTensor<S>& bias(size_t layer) const { return params_[2 + 2 * layer]; }

  TowerSpec spec_;
  std::vector<BasicParamTensor<S>> params_;  // embedding, (W, b) per layer
};

using Tower = BasicTower<float>;

struct AdamConfig {
  double learning_rate = 0.00017;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename S>
class BasicAdam {
 public:
  explicit BasicAdam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One bias-corrected update of every tensor, then zeroes the gradients.
  // Throws NumericError naming the tensor when a gradient is not finite.
  void step(std::span<BasicParamTensor<S>* const> params);

  int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Mat<S>>& first_moments() const { return m_; }
  const std::vector<Mat<S>>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::vector<Mat<S>> m_;
  std::vector<Mat<S>> v_;
};

using Adam = BasicAdam<float>;

template <typename S>
inline S activate(Activation a, S x) {
  return a == Activation::relu ? (x > S(0) ? x : S(0)) : std::tanh(x);
}

// d activation / d pre-activation, expressed through the pre-activation.
template <typename S>
inline S activate_grad(Activation a, S pre) {
  if (a == Activation::relu) return pre > S(0) ? S(1) : S(0);
  const S t = std::tanh(pre);
  return S(1) - t * t;
}

// Parameter container: a text header (format tag, key/value metadata,
// one "tensor <name> <ndim> <dims...> <byte offset>" line per tensor) ending
// in "blob <bytes>\n", followed by little-endian IEEE-754 float32 values.
struct ParamFile {
  std::map<std::string, std::string> meta;
  std::vector<ParamTensor> tensors;
};

inline constexpr const char* kParamFormatTag = "attrec-params v1";

void write_param_file(const std::filesystem::path& path, const std::map<std::string, std::string>& meta,
                      std::span<const ParamTensor* const> tensors);
ParamFile read_param_file(const std::filesystem::path& path);

// FNV-1a 64 of the file bytes as 16 hex digits.
std::string content_hash(const std::filesystem::path& path);

// Copies values by name; throws DataError on a missing tensor or shape mismatch.
void assign_params(std::vector<ParamTensor>& dst, const std::vector<ParamTensor>& src);

extern template struct BasicParamTensor<float>;
extern template struct BasicParamTensor<double>;
extern template class BasicTower<float>;
extern template class BasicTower<double>;
extern template class BasicAdam<float>;
extern template class BasicAdam<double>;

}  // namespace attrec::nn
