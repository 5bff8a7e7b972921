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

#include "attrec/tensornet.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "attrec/errors.hpp"

namespace attrec::nn {

template <typename S>
BasicParamTensor<S>::BasicParamTensor(std::string n, std::vector<size_t> s) : name(std::move(n)), shape(std::move(s)) {
  if (shape.empty() || shape.size() > 2) throw std::invalid_argument("tensor " + name + ": rank must be 1 or 2");
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor " + name + ": zero dimension");
  }
  const auto rows = static_cast<Eigen::Index>(shape.size() == 1 ? 1 : shape[0]);
  const auto cols = static_cast<Eigen::Index>(shape.back());
  values = Mat<S>::Zero(rows, cols);
  grad = Mat<S>::Zero(rows, cols);
}

template <typename S>
BasicTower<S>::BasicTower(TowerSpec spec, const std::string& prefix) : spec_(std::move(spec)) {
  if (spec_.vocab_size == 0 || spec_.embed_dim == 0 || spec_.out_dim == 0) {
    throw std::invalid_argument("tower " + prefix + ": vocab, embedding and output sizes must be positive");
  }
  params_.emplace_back(prefix + ".embedding", std::vector<size_t>{spec_.vocab_size, spec_.embed_dim});
  size_t in = spec_.embed_dim;
  for (size_t l = 0; l < layer_count(); ++l) {
    const size_t out = l < spec_.hidden_dims.size() ? spec_.hidden_dims[l] : spec_.out_dim;
    const std::string tag = l < spec_.hidden_dims.size() ? "hidden" + std::to_string(l) : "output";
    params_.emplace_back(prefix + "." + tag + ".weight", std::vector<size_t>{in, out});
    params_.emplace_back(prefix + "." + tag + ".bias", std::vector<size_t>{out});
    in = out;
  }
}

template <typename S>
void BasicTower<S>::initialize(Rng& rng) {
  auto& emb = params_[0].values;
  for (Eigen::Index k = 0; k < emb.size(); ++k) emb.data()[k] = static_cast<S>(rng.uniform_real(-0.05, 0.05));
  for (size_t l = 0; l < layer_count(); ++l) {
    auto& w = weight(l).values;
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<S>(rng.uniform_real(-bound, bound));
    bias(l).values.setZero();
  }
}

template <typename S>
const Mat<S>& BasicTower<S>::forward(std::span<const int32_t> ids, Cache& cache) const {
  const auto batch = static_cast<Eigen::Index>(ids.size());
  const auto& emb = params_[0].values;
  cache.ids.assign(ids.begin(), ids.end());
  cache.inputs.resize(layer_count());
  cache.pre.resize(spec_.hidden_dims.size());

  Mat<S>& x0 = cache.inputs[0];
  x0.resize(batch, emb.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto id = ids[static_cast<size_t>(b)];
    if (id < 0 || static_cast<size_t>(id) >= spec_.vocab_size) {
      throw std::out_of_range("id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(spec_.vocab_size));
    }
    x0.row(b) = emb.row(id);
  }
  for (size_t l = 0; l < spec_.hidden_dims.size(); ++l) {
    Mat<S>& z = cache.pre[l];
    z.noalias() = cache.inputs[l] * weight(l).values;
    z.rowwise() += bias(l).values.row(0);
    cache.inputs[l + 1] = z.unaryExpr([a = spec_.activation](S v) { return activate(a, v); });
  }
  const size_t last = layer_count() - 1;
  cache.raw.noalias() = cache.inputs[last] * weight(last).values;
  cache.raw.rowwise() += bias(last).values.row(0);

  cache.norms.resize(batch);
  cache.out.resize(batch, cache.raw.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const S n = cache.raw.row(b).norm();
    cache.norms[b] = n;
    cache.out.row(b) = cache.raw.row(b) / (n + static_cast<S>(kNormEpsilon));
  }
  return cache.out;
}

template <typename S>
Vec<S> BasicTower<S>::forward(int32_t id) const {
  Cache cache;
  const int32_t ids[1] = {id};
  return forward(std::span<const int32_t>(ids, 1), cache).row(0).transpose();
}

template <typename S>
void BasicTower<S>::backward(const Cache& cache, const Mat<S>& upstream) {
  const auto batch = static_cast<Eigen::Index>(cache.ids.size());
  if (upstream.rows() != batch || upstream.cols() != cache.raw.cols()) {
    throw std::invalid_argument("tower backward: upstream gradient is " + std::to_string(upstream.rows()) + "x" +
                                std::to_string(upstream.cols()) + ", expected " + std::to_string(batch) + "x" +
                                std::to_string(cache.raw.cols()));
  }
  const S eps = static_cast<S>(kNormEpsilon);
  // Through x / (|x| + eps): g/(n+eps) - x (x.g) / (n (n+eps)^2).
  Mat<S> delta(batch, upstream.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const S n = cache.norms[b];
    if (n <= S(0)) {
      delta.row(b).setZero();
      continue;
    }
    const S d = n + eps;
    const S proj = cache.raw.row(b).dot(upstream.row(b));
    delta.row(b) = upstream.row(b) / d - cache.raw.row(b) * (proj / (n * d * d));
  }
  for (size_t l = layer_count(); l-- > 0;) {
    weight(l).grad.noalias() += cache.inputs[l].transpose() * delta;
    bias(l).grad.row(0) += delta.colwise().sum();
    Mat<S> dx = delta * weight(l).values.transpose();
    if (l > 0) {
      const Mat<S>& pre = cache.pre[l - 1];
      const auto act = spec_.activation;
      delta = dx.cwiseProduct(pre.unaryExpr([act](S v) { return activate_grad(act, v); }));
    } else {
      auto& eg = params_[0].grad;
      for (Eigen::Index b = 0; b < batch; ++b) eg.row(cache.ids[static_cast<size_t>(b)]) += dx.row(b);
    }
  }
}

template <typename S>
void BasicTower<S>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename S>
void BasicAdam<S>::step(std::span<BasicParamTensor<S>* const> params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Mat<S>::Zero(p->values.rows(), p->values.cols()));
      v_.push_back(Mat<S>::Zero(p->values.rows(), p->values.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adam: parameter list changed between steps");
  for (auto* p : params) {
    if (!p->grad.allFinite()) throw NumericError("non-finite gradient in tensor " + p->name);
  }
  ++step_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (p.values.rows() != m_[k].rows() || p.values.cols() != m_[k].cols()) {
      throw std::invalid_argument("adam: moment shape mismatch for " + p.name);
    }
    S* w = p.values.data();
    S* g = p.grad.data();
    S* m = m_[k].data();
    S* v = v_[k].data();
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      w[i] = static_cast<S>(w[i] - cfg_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg_.epsilon));
      g[i] = S(0);
    }
  }
}

void write_param_file(const std::filesystem::path& path, const std::map<std::string, std::string>& meta,
                      std::span<const ParamTensor* const> tensors) {
  static_assert(std::endian::native == std::endian::little, "container writer assumes a little-endian host");
  std::ostringstream header;
  header << kParamFormatTag << '\n';
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("metadata key/value may not contain newlines or spaced keys: " + k);
    }
    header << "meta " << k << ' ' << v << '\n';
  }
  size_t offset = 0;
  for (const auto* t : tensors) {
    header << "tensor " << t->name << ' ' << t->shape.size();
    for (auto d : t->shape) header << ' ' << d;
    header << ' ' << offset << '\n';
    offset += t->size() * sizeof(float);
  }
  header << "blob " << offset << '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto* t : tensors) {
    out.write(reinterpret_cast<const char*>(t->values.data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

ParamFile read_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kParamFormatTag) {
    throw DataError(path.string() + ": not an attrec parameter file (expected '" + kParamFormatTag + "')");
  }
  ParamFile pf;
  std::vector<size_t> offsets;
  size_t blob = 0;
  bool saw_blob = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      pf.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name;
      size_t ndim = 0;
      ls >> name >> ndim;
      std::vector<size_t> shape(ndim);
      for (auto& d : shape) ls >> d;
      size_t off = 0;
      ls >> off;
      if (!ls || ndim == 0 || ndim > 2) throw DataError(path.string() + ": bad tensor line '" + line + "'");
      pf.tensors.emplace_back(name, shape);
      offsets.push_back(off);
    } else if (kind == "blob") {
      ls >> blob;
      saw_blob = true;
      break;
    } else {
      throw DataError(path.string() + ": unexpected header line '" + line + "'");
    }
  }
  if (!saw_blob) throw DataError(path.string() + ": truncated header");
  std::vector<char> bytes(blob);
  in.read(bytes.data(), static_cast<std::streamsize>(blob));
  if (static_cast<size_t>(in.gcount()) != blob) throw DataError(path.string() + ": truncated blob");
  for (size_t k = 0; k < pf.tensors.size(); ++k) {
    auto& t = pf.tensors[k];
    const size_t n = t.size() * sizeof(float);
    if (offsets[k] + n > blob) throw DataError(path.string() + ": tensor " + t.name + " exceeds blob");
    std::memcpy(t.values.data(), bytes.data() + offsets[k], n);
    if (!t.values_finite()) throw DataError(path.string() + ": tensor " + t.name + " holds non-finite values");
  }
  return pf;
}

std::string content_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(std::string_view(buf, static_cast<size_t>(in.gcount())), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void assign_params(std::vector<ParamTensor>& dst, const std::vector<ParamTensor>& src) {
  for (auto& d : dst) {
    auto it = std::find_if(src.begin(), src.end(), [&](const ParamTensor& s) { return s.name == d.name; });
    if (it == src.end()) throw DataError("missing tensor " + d.name);
    if (it->shape != d.shape) throw DataError("shape mismatch for tensor " + d.name);
    d.values = it->values;
    d.zero_grad();
  }
}

template struct BasicParamTensor<float>;
template struct BasicParamTensor<double>;
template class BasicTower<float>;
template class BasicTower<double>;
template class BasicAdam<float>;
template class BasicAdam<double>;

}  // namespace attrec::nn
