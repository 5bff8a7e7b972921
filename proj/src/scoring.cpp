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

#include "attrec/scoring.hpp"

namespace attrec {

RepresentationScorer::RepresentationScorer(const RepresentationModel& model)
    : users_(model.embed_all_users()), items_(model.embed_all_items()), loss_(model.loss_kind()), tag_(model.tag()) {}

double RepresentationScorer::score(UserIndex u, ItemIndex i) const {
  return pair_score(loss_, users_.row(u), items_.row(i));
}

}  // namespace attrec
