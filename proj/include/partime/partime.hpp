// Copyright 2026 The Partime Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "partime/bench.hpp"
#include "partime/engine.hpp"
#include "partime/error.hpp"
#include "partime/generators.hpp"
#include "partime/layers.hpp"
#include "partime/loss.hpp"
#include "partime/model.hpp"
#include "partime/model_io.hpp"
#include "partime/optimizer.hpp"
#include "partime/partition.hpp"
#include "partime/rng.hpp"
#include "partime/schedsim.hpp"
#include "partime/streams.hpp"
#include "partime/tensor.hpp"
#include "partime/timeline.hpp"
#include "partime/train.hpp"
#include "partime/verify.hpp"
