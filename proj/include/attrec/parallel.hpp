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

#include <cstddef>
#include <functional>

namespace attrec {

// Worker count for the fan-out helpers below. Defaults to the hardware
// concurrency; 1 runs everything on the calling thread.
size_t thread_count();
void set_thread_count(size_t n);  // 0 restores the default

// Calls fn(i) for i in [0, n), split into contiguous chunks across workers.
// fn must only write state owned by index i; the first exception thrown is
// rethrown on the caller after all workers join.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace attrec
