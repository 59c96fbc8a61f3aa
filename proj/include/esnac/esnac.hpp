/*
 * Copyright 2026 The esnac Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#pragma once

#include "esnac/common.hpp"
#include "esnac/archgraph.hpp"
#include "esnac/arch_io.hpp"
#include "esnac/encode.hpp"
#include "esnac/embedder.hpp"
#include "esnac/gp.hpp"
#include "esnac/acquisition.hpp"
#include "esnac/evaluator.hpp"
#include "esnac/search.hpp"
#include "esnac/report.hpp"
#include "esnac/config.hpp"

namespace esnac {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace esnac
