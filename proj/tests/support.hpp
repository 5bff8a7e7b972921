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

// Shared helpers for the unit tests: toy matrices, scratch directories and
// the central-difference gradient oracle.

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/tensornet.hpp"

namespace attrec::testkit {

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("attrec-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::string> numbered(const std::string& prefix, size_t n) {
  std::vector<std::string> out;
  for (size_t k = 0; k < n; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

// Users in `groups` blocks, each liking a contiguous block of items with
// probability `p_in` and everything else with `p_out`.
inline InteractionMatrix block_matrix(size_t users, size_t items, size_t groups, double p_in, double p_out,
                                      uint64_t seed) {
  InteractionMatrix m(numbered("u", users), numbered("i", items));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int64_t order = 0;
  for (size_t u = 0; u < users; ++u) {
    const size_t g = u * groups / users;
    for (size_t i = 0; i < items; ++i) {
      const bool in_block = i * groups / items == g;
      if (unif(gen) < (in_block ? p_in : p_out)) {
        m.add(static_cast<UserIndex>(u), static_cast<ItemIndex>(i), order, order);
        ++order;
      }
    }
    // nobody is left empty
    if (m.degree(static_cast<UserIndex>(u)) == 0) {
      m.add(static_cast<UserIndex>(u), static_cast<ItemIndex>(g * items / groups), order, order);
      ++order;
    }
  }
  m.set_has_timestamps(true);
  return m;
}

// Max over entries of |analytic - numeric| / max(|analytic|, |numeric|);
// entries where both are below `floor` compare absolutely against floor.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < floor) return std::abs(analytic - numeric) / floor;
  return std::abs(analytic - numeric) / scale;
}

// Central differences of `loss` w.r.t. every entry of every tensor, compared
// with the gradients already accumulated in `params`. Returns the max error.
inline double check_gradients(std::vector<nn::BasicParamTensor<double>*> params, const std::function<double()>& loss,
                              double h = 1e-4) {
  double worst = 0.0;
  for (auto* p : params) {
    for (Eigen::Index k = 0; k < p->values.size(); ++k) {
      double& x = p->values.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(p->grad.data()[k], numeric));
    }
  }
  return worst;
}

}  // namespace attrec::testkit
