// Copyright 2026 The vqforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include "vqforge/budget.hpp"
#include "vqforge/checkpoint.hpp"
#include "vqforge/codebook.hpp"
#include "vqforge/error.hpp"
#include "vqforge/harness.hpp"
#include "vqforge/io.hpp"
#include "vqforge/latent.hpp"
#include "vqforge/matrix.hpp"
#include "vqforge/metrics.hpp"
#include "vqforge/pipeline.hpp"
#include "vqforge/rng.hpp"
#include "vqforge/serialize.hpp"
#include "vqforge/transform.hpp"
